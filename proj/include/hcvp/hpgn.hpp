#pragma once

#include <array>
#include <cstddef>

#include "hcvp/params.hpp"

namespace hcvp {

struct HpgnConfig {
    std::size_t in_channels = 3;
    /// Three stride-2 3x3 conv layers.
    std::array<std::size_t, 3> extractor_channels{16, 32, 32};
    std::size_t prompt_dim = 64;
    std::size_t domain_hidden = 64;
    std::size_t task_channels = 32;
};

/// Small conv encoder standing in for a pretrained backbone. Pretrained as a
/// plain classifier, then frozen for the rest of training.
class FeatureExtractor {
public:
    FeatureExtractor() = default;
    FeatureExtractor(const HpgnConfig& config, Rng& rng);

    /// Feature maps without the freeze check (used while pretraining).
    Tensor features(const Tensor& images) const;

    void freeze();
    bool frozen() const noexcept { return frozen_; }
    std::size_t out_channels() const { return layers_.back().kernel.dim(0); }
    void collect(ParamList& out, const std::string& prefix) const;

private:
    std::array<ConvParams, 3> layers_;
    bool frozen_ = false;
};

struct PromptPair {
    Tensor domain; // C(x), [b x d_p]
    Tensor task;   // P(x), [b x d_p]

    /// p = concat(C(x), P(x)), [b x 2 d_p]
    Tensor concatenated() const;
};

/// Hierarchical prompt generator: a frozen extractor R, a domain head
/// C = MLP(GAP(R(x))) and a task head P = Phi(R(x), C) that sees C broadcast
/// over the feature map.
class Hpgn {
public:
    Hpgn() = default;
    Hpgn(const HpgnConfig& config, Rng& rng);

    /// F = R(x). Requires a frozen extractor; no gradient reaches its weights.
    Tensor extract(const Tensor& images) const;
    Tensor domain_prompt(const Tensor& features) const;
    Tensor task_prompt(const Tensor& features, const Tensor& domain) const;
    PromptPair generate(const Tensor& images) const;

    FeatureExtractor& extractor() { return extractor_; }
    const FeatureExtractor& extractor() const { return extractor_; }
    const HpgnConfig& config() const noexcept { return config_; }

    /// Trainable generator parameters (extractor excluded).
    void collect(ParamList& out, const std::string& prefix) const;

private:
    HpgnConfig config_;
    FeatureExtractor extractor_;
    LinearParams domain_fc1_, domain_fc2_;
    ConvParams task_conv1_, task_conv2_;
    LinearParams task_fc_;
};

} // namespace hcvp
