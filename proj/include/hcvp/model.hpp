#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "hcvp/hpgn.hpp"
#include "hcvp/pmn.hpp"
#include "hcvp/vit.hpp"

namespace hcvp {

enum class Method { hcvp, erm };

std::string to_string(Method method);
Method parse_method(const std::string& text);

struct ModelConfig {
    Method method = Method::hcvp;
    ViTConfig vit;
    HpgnConfig hpgn;

    /// Keeps prompt width tied to the ViT width (one token per prompt).
    void sync() { hpgn.prompt_dim = vit.embed_dim; hpgn.in_channels = vit.channels; }
};

struct ForwardOutput {
    Tensor embedding; // x_N, [b x d]
    Tensor logits;    // [b x C]
    std::optional<PromptPair> prompts;
};

/// Generator + modulation network + backbone + head. The ERM variant holds
/// only the backbone and head and runs the prompt-free sequence.
class Model {
public:
    Model() = default;
    Model(ModelConfig config, std::uint64_t seed);

    ForwardOutput forward(const Tensor& images) const;

    const ModelConfig& config() const noexcept { return config_; }
    Method method() const noexcept { return config_.method; }
    bool has_prompts() const noexcept { return hpgn_.has_value(); }

    Hpgn& hpgn();
    const Hpgn& hpgn() const;
    Pmn& pmn();
    ViT& vit() { return vit_; }
    const ViT& vit() const { return vit_; }
    ClassifierHead& head() { return head_; }

    /// Parameters updated by the optimizer.
    ParamList trainable() const;
    /// Every tensor in the model, including the frozen extractor.
    ParamList all_tensors() const;
    ParamList extractor_tensors() const;

private:
    ModelConfig config_;
    std::optional<Hpgn> hpgn_;
    std::optional<Pmn> pmn_;
    ViT vit_;
    ClassifierHead head_;
};

} // namespace hcvp
