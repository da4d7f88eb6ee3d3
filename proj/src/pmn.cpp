#include "hcvp/pmn.hpp"

#include <cmath>

#include "hcvp/ops.hpp"

namespace hcvp {

Tensor ModulationPath::apply(const Tensor& x) const {
    return linear(relu(linear(x, fc1.weight, fc1.bias)), fc2.weight, fc2.bias);
}

Pmn::Pmn(const ViTConfig& vit, std::size_t block_count, Rng& rng) {
    if (block_count != vit.depth) {
        throw ContractError("pmn: block count " + std::to_string(block_count) + " must equal ViT depth " +
                            std::to_string(vit.depth));
    }
    const std::size_t d = vit.embed_dim;
    const double std1 = std::sqrt(2.0 / static_cast<double>(d));
    const double std2 = std::sqrt(1.0 / static_cast<double>(d));
    auto path = [&] { return ModulationPath{LinearParams::init(d, d, std1, rng), LinearParams::init(d, d, std2, rng)}; };
    for (std::size_t i = 0; i < block_count; ++i) {
        ModulationBlock block;
        block.domain = path();
        block.task = path();
        blocks_.push_back(std::move(block));
    }
}

PromptTokens Pmn::modulate(std::size_t layer, const Tensor& domain, const Tensor& task) const {
    if (layer >= blocks_.size()) {
        throw ContractError("pmn: layer index " + std::to_string(layer) + " out of range for depth " +
                            std::to_string(blocks_.size()));
    }
    return {blocks_[layer].domain.apply(domain), blocks_[layer].task.apply(task)};
}

std::vector<PromptTokens> Pmn::roll_forward(const PromptPair& prompts) const {
    std::vector<PromptTokens> out;
    out.reserve(blocks_.size());
    Tensor domain = prompts.domain;
    Tensor task = prompts.task;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        PromptTokens next = modulate(i, domain, task);
        domain = next.domain;
        task = next.task;
        out.push_back(std::move(next));
    }
    return out;
}

void Pmn::collect(ParamList& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const std::string p = prefix + ".block" + std::to_string(i);
        blocks_[i].domain.fc1.collect(out, p + ".domain.fc1");
        blocks_[i].domain.fc2.collect(out, p + ".domain.fc2");
        blocks_[i].task.fc1.collect(out, p + ".task.fc1");
        blocks_[i].task.fc2.collect(out, p + ".task.fc2");
    }
}

} // namespace hcvp
