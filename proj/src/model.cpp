#include "hcvp/model.hpp"

namespace hcvp {

std::string to_string(Method method) { return method == Method::hcvp ? "hcvp" : "erm"; }

Method parse_method(const std::string& text) {
    if (text == "hcvp") return Method::hcvp;
    if (text == "erm") return Method::erm;
    throw std::invalid_argument("unknown method '" + text + "' (expected hcvp or erm)");
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.sync();
    Rng rng(mix_seed({seed, 0x6d6f64656cull}));
    vit_ = ViT(config_.vit, rng);
    head_ = ClassifierHead(config_.vit.embed_dim, config_.vit.num_classes, rng);
    if (config_.method == Method::hcvp) {
        hpgn_.emplace(config_.hpgn, rng);
        pmn_.emplace(config_.vit, config_.vit.depth, rng);
    }
}

ForwardOutput Model::forward(const Tensor& images) const {
    ForwardOutput out;
    if (hpgn_) {
        PromptPair prompts = hpgn_->generate(images);
        out.embedding = vit_.forward(images, pmn_->roll_forward(prompts));
        out.prompts = std::move(prompts);
    } else {
        out.embedding = vit_.forward_plain(images);
    }
    out.logits = head_.classify(out.embedding);
    return out;
}

Hpgn& Model::hpgn() {
    if (!hpgn_) throw ContractError("model: ERM model has no prompt generator");
    return *hpgn_;
}

const Hpgn& Model::hpgn() const {
    if (!hpgn_) throw ContractError("model: ERM model has no prompt generator");
    return *hpgn_;
}

Pmn& Model::pmn() {
    if (!pmn_) throw ContractError("model: ERM model has no prompt modulation network");
    return *pmn_;
}

ParamList Model::trainable() const {
    ParamList out;
    if (hpgn_) {
        hpgn_->collect(out, "hpgn");
        pmn_->collect(out, "pmn");
    }
    vit_.collect(out, "vit");
    head_.collect(out, "head");
    return out;
}

ParamList Model::all_tensors() const {
    ParamList out = extractor_tensors();
    ParamList rest = trainable();
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
}

ParamList Model::extractor_tensors() const {
    ParamList out;
    if (hpgn_) hpgn_->extractor().collect(out, "extractor");
    return out;
}

} // namespace hcvp
