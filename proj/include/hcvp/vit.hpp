#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "hcvp/params.hpp"

namespace hcvp {

struct ViTConfig {
    std::size_t image_size = 32;
    std::size_t channels = 3;
    std::size_t patch_size = 4;
    std::size_t embed_dim = 64;
    std::size_t depth = 4;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 2;
    std::size_t num_classes = 4;

    std::size_t num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
    std::size_t patch_dim() const { return channels * patch_size * patch_size; }
    void validate() const;
};

/// The pair of prompt tokens fed into one transformer layer, each [b x d].
struct PromptTokens {
    Tensor domain;
    Tensor task;
};

struct EncoderBlock {
    Tensor ln1_gamma, ln1_beta;
    LinearParams qkv;
    LinearParams proj;
    Tensor ln2_gamma, ln2_beta;
    LinearParams fc1;
    LinearParams fc2;
};

/// Pre-norm ViT with a class token and two optional prompt slots.
///
/// HCVP sequence layout per layer: [class, domain prompt, task prompt, patches...]
/// (1 + 2 + P tokens). Without prompts the layout is [class, patches...].
/// Prompt slots carry no positional embedding, and each layer's prompt
/// outputs are dropped: the next layer receives fresh prompts.
class ViT {
public:
    ViT() = default;
    ViT(const ViTConfig& config, Rng& rng);

    const ViTConfig& config() const noexcept { return config_; }

    /// [b x c x H x W] -> patch embeddings [b x P x d] with positions added.
    Tensor patchify(const Tensor& images) const;

    /// One encoder block over a full [b x T x d] sequence. When
    /// `attention` is given it receives the [b*heads x T x T] attention weights.
    Tensor layer_forward(std::size_t layer, const Tensor& sequence, Tensor* attention = nullptr) const;

    /// Final class-token embedding x_N [b x d], layer-normalized after the last
    /// block; exactly depth() prompt pairs required.
    Tensor forward(const Tensor& images, const std::vector<PromptTokens>& prompts) const;
    /// Prompt-free (65-token) forward used by the ERM baseline.
    Tensor forward_plain(const Tensor& images) const;

    void collect(ParamList& out, const std::string& prefix) const;

    /// Token count of the sequence seen by every layer.
    std::size_t sequence_length(bool with_prompts) const { return 1 + (with_prompts ? 2 : 0) + config_.num_patches(); }

private:
    Tensor class_tokens(std::size_t batch) const;

    ViTConfig config_;
    LinearParams patch_embed_;
    Tensor position_;
    Tensor class_token_;
    std::vector<EncoderBlock> blocks_;
    Tensor norm_gamma_, norm_beta_;
};

/// Linear classification head on x_N.
class ClassifierHead {
public:
    ClassifierHead() = default;
    ClassifierHead(std::size_t embed_dim, std::size_t num_classes, Rng& rng);

    Tensor classify(const Tensor& embedding) const;
    void collect(ParamList& out, const std::string& prefix) const { layer_.collect(out, prefix); }
    LinearParams& layer() { return layer_; }

private:
    LinearParams layer_;
};

} // namespace hcvp
