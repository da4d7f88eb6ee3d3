#include "hcvp/vit.hpp"

#include <cmath>

#include "hcvp/ops.hpp"

namespace hcvp {

namespace {
constexpr double kInitStd = 0.02;

LinearParams glorot(std::size_t in, std::size_t out, Rng& rng) {
    return LinearParams::init(in, out, std::sqrt(2.0 / static_cast<double>(in + out)), rng);
}
} // namespace

void ViTConfig::validate() const {
    if (patch_size == 0 || image_size % patch_size != 0) {
        throw ContractError("vit: image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                            std::to_string(patch_size));
    }
    if (heads == 0 || embed_dim % heads != 0) {
        throw ContractError("vit: embed_dim " + std::to_string(embed_dim) + " not divisible by heads " +
                            std::to_string(heads));
    }
    if (depth == 0 || num_classes < 2 || mlp_ratio == 0) throw ContractError("vit: invalid depth/classes/mlp_ratio");
}

ViT::ViT(const ViTConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const std::size_t d = config_.embed_dim;
    patch_embed_ = glorot(config_.patch_dim(), d, rng);
    position_ = normal_param({config_.num_patches(), d}, kInitStd, rng);
    class_token_ = normal_param({d}, kInitStd, rng);
    for (std::size_t i = 0; i < config_.depth; ++i) {
        EncoderBlock b;
        b.ln1_gamma = const_param({d}, 1.0);
        b.ln1_beta = const_param({d}, 0.0);
        b.qkv = glorot(d, 3 * d, rng);
        b.proj = glorot(d, d, rng);
        b.ln2_gamma = const_param({d}, 1.0);
        b.ln2_beta = const_param({d}, 0.0);
        b.fc1 = glorot(d, config_.mlp_ratio * d, rng);
        b.fc2 = glorot(config_.mlp_ratio * d, d, rng);
        blocks_.push_back(std::move(b));
    }
    norm_gamma_ = const_param({d}, 1.0);
    norm_beta_ = const_param({d}, 0.0);
}

Tensor ViT::patchify(const Tensor& images) const {
    const auto& c = config_;
    if (images.rank() != 4 || images.dim(1) != c.channels || images.dim(2) != c.image_size ||
        images.dim(3) != c.image_size) {
        throw DimensionError("vit: expected images [b x " + std::to_string(c.channels) + " x " +
                             std::to_string(c.image_size) + " x " + std::to_string(c.image_size) + "], got " +
                             shape_str(images.shape()));
    }
    const std::size_t b = images.dim(0);
    const std::size_t grid = c.image_size / c.patch_size;
    Tensor split = reshape(images, {b, c.channels, grid, c.patch_size, grid, c.patch_size});
    Tensor patches = permute(split, {0, 2, 4, 1, 3, 5});
    patches = reshape(patches, {b, c.num_patches(), c.patch_dim()});
    return add(linear(patches, patch_embed_.weight, patch_embed_.bias), position_);
}

Tensor ViT::layer_forward(std::size_t layer, const Tensor& sequence, Tensor* attention) const {
    if (layer >= blocks_.size()) {
        throw ContractError("vit: layer index " + std::to_string(layer) + " out of range for depth " +
                            std::to_string(blocks_.size()));
    }
    const EncoderBlock& blk = blocks_[layer];
    if (sequence.rank() != 3 || sequence.dim(2) != config_.embed_dim) {
        throw DimensionError("vit: layer input must be [b x T x " + std::to_string(config_.embed_dim) + "], got " +
                             shape_str(sequence.shape()));
    }

    Tensor normed = layer_norm(sequence, blk.ln1_gamma, blk.ln1_beta);
    Tensor qkv = linear(normed, blk.qkv.weight, blk.qkv.bias);
    Tensor mixed = multi_head_attention(qkv, config_.heads, attention);
    Tensor attended = linear(mixed, blk.proj.weight, blk.proj.bias);
    Tensor residual = add(sequence, attended);

    Tensor hidden = gelu(linear(layer_norm(residual, blk.ln2_gamma, blk.ln2_beta), blk.fc1.weight, blk.fc1.bias));
    return add(residual, linear(hidden, blk.fc2.weight, blk.fc2.bias));
}

Tensor ViT::class_tokens(std::size_t batch) const {
    return add(Tensor::zeros({batch, 1, config_.embed_dim}), class_token_);
}

Tensor ViT::forward(const Tensor& images, const std::vector<PromptTokens>& prompts) const {
    if (prompts.size() != config_.depth) {
        throw ContractError("vit: expected " + std::to_string(config_.depth) + " prompt pairs, got " +
                            std::to_string(prompts.size()));
    }
    Tensor patches = patchify(images);
    const std::size_t b = patches.dim(0), d = config_.embed_dim, p = config_.num_patches();
    Tensor cls = class_tokens(b);
    for (std::size_t i = 0; i < config_.depth; ++i) {
        const auto& pr = prompts[i];
        if (pr.domain.shape() != Shape{b, d} || pr.task.shape() != Shape{b, d}) {
            throw DimensionError("vit: prompts for layer " + std::to_string(i) + " must be [" + std::to_string(b) +
                                 "x" + std::to_string(d) + "], got " + shape_str(pr.domain.shape()) + " / " +
                                 shape_str(pr.task.shape()));
        }
        Tensor seq = concat({cls, reshape(pr.domain, {b, 1, d}), reshape(pr.task, {b, 1, d}), patches}, 1);
        Tensor out = layer_forward(i, seq);
        cls = slice(out, 1, 0, 1);
        patches = slice(out, 1, 3, p);
    }
    return layer_norm(reshape(cls, {b, d}), norm_gamma_, norm_beta_);
}

Tensor ViT::forward_plain(const Tensor& images) const {
    Tensor patches = patchify(images);
    const std::size_t b = patches.dim(0), d = config_.embed_dim;
    Tensor seq = concat({class_tokens(b), patches}, 1);
    for (std::size_t i = 0; i < config_.depth; ++i) seq = layer_forward(i, seq);
    return layer_norm(reshape(slice(seq, 1, 0, 1), {b, d}), norm_gamma_, norm_beta_);
}

void ViT::collect(ParamList& out, const std::string& prefix) const {
    patch_embed_.collect(out, prefix + ".patch_embed");
    out.push_back({prefix + ".position", position_});
    out.push_back({prefix + ".class_token", class_token_});
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const auto& b = blocks_[i];
        const std::string p = prefix + ".block" + std::to_string(i);
        out.push_back({p + ".ln1.gamma", b.ln1_gamma});
        out.push_back({p + ".ln1.beta", b.ln1_beta});
        b.qkv.collect(out, p + ".qkv");
        b.proj.collect(out, p + ".proj");
        out.push_back({p + ".ln2.gamma", b.ln2_gamma});
        out.push_back({p + ".ln2.beta", b.ln2_beta});
        b.fc1.collect(out, p + ".fc1");
        b.fc2.collect(out, p + ".fc2");
    }
    out.push_back({prefix + ".norm.gamma", norm_gamma_});
    out.push_back({prefix + ".norm.beta", norm_beta_});
}

ClassifierHead::ClassifierHead(std::size_t embed_dim, std::size_t num_classes, Rng& rng)
    : layer_(LinearParams::init(embed_dim, num_classes, kInitStd, rng)) {}

Tensor ClassifierHead::classify(const Tensor& embedding) const {
    return linear(embedding, layer_.weight, layer_.bias);
}

} // namespace hcvp
