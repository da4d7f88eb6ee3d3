#pragma once

#include <cstddef>
#include <vector>

#include "hcvp/hpgn.hpp"
#include "hcvp/vit.hpp"

namespace hcvp {

/// linear(d->d) + relu + linear(d->d)
struct ModulationPath {
    LinearParams fc1;
    LinearParams fc2;

    Tensor apply(const Tensor& x) const;
};

struct ModulationBlock {
    ModulationPath domain;
    ModulationPath task;
};

/// Prompt modulation network: one block per transformer layer, chained so
/// that block i transforms the prompts produced by block i-1 (block 0 takes
/// the generator output). Domain and task prompts use separate weights.
class Pmn {
public:
    Pmn() = default;
    /// Throws ContractError unless block_count == vit.depth.
    Pmn(const ViTConfig& vit, std::size_t block_count, Rng& rng);

    std::size_t depth() const noexcept { return blocks_.size(); }
    PromptTokens modulate(std::size_t layer, const Tensor& domain, const Tensor& task) const;
    std::vector<PromptTokens> roll_forward(const PromptPair& prompts) const;

    std::vector<ModulationBlock>& blocks() { return blocks_; }
    void collect(ParamList& out, const std::string& prefix) const;

private:
    std::vector<ModulationBlock> blocks_;
};

} // namespace hcvp
