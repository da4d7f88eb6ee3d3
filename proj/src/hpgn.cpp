#include "hcvp/hpgn.hpp"

#include <cmath>

#include "hcvp/ops.hpp"

namespace hcvp {

FeatureExtractor::FeatureExtractor(const HpgnConfig& config, Rng& rng) {
    std::size_t in = config.in_channels;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        layers_[i] = ConvParams::init(in, config.extractor_channels[i], 3, rng);
        in = config.extractor_channels[i];
    }
}

Tensor FeatureExtractor::features(const Tensor& images) const {
    Tensor h = images;
    for (const auto& layer : layers_) h = relu(conv2d(h, layer.kernel, layer.bias, 2, 1));
    return h;
}

void FeatureExtractor::freeze() {
    for (auto& layer : layers_) {
        layer.kernel.set_requires_grad(false);
        layer.bias.set_requires_grad(false);
    }
    frozen_ = true;
}

void FeatureExtractor::collect(ParamList& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, prefix + ".conv" + std::to_string(i));
}

Tensor PromptPair::concatenated() const { return concat({domain, task}, 1); }

Hpgn::Hpgn(const HpgnConfig& config, Rng& rng) : config_(config), extractor_(config, rng) {
    const std::size_t feat = config.extractor_channels.back();
    domain_fc1_ = LinearParams::init(feat, config.domain_hidden, std::sqrt(2.0 / static_cast<double>(feat)), rng);
    domain_fc2_ = LinearParams::init(config.domain_hidden, config.prompt_dim,
                                     std::sqrt(1.0 / static_cast<double>(config.domain_hidden)), rng);
    task_conv1_ = ConvParams::init(feat + config.prompt_dim, config.task_channels, 3, rng);
    task_conv2_ = ConvParams::init(config.task_channels, config.task_channels, 3, rng);
    task_fc_ = LinearParams::init(config.task_channels, config.prompt_dim,
                                  std::sqrt(1.0 / static_cast<double>(config.task_channels)), rng);
}

Tensor Hpgn::extract(const Tensor& images) const {
    if (!extractor_.frozen()) {
        throw ContractError("hpgn: feature extractor must be pretrained and frozen before prompt generation");
    }
    return extractor_.features(images);
}

Tensor Hpgn::domain_prompt(const Tensor& features) const {
    Tensor pooled = global_avg_pool(features);
    Tensor hidden = relu(linear(pooled, domain_fc1_.weight, domain_fc1_.bias));
    return linear(hidden, domain_fc2_.weight, domain_fc2_.bias);
}

Tensor Hpgn::task_prompt(const Tensor& features, const Tensor& domain) const {
    if (features.rank() != 4 || domain.rank() != 2 || features.dim(0) != domain.dim(0)) {
        throw DimensionError("hpgn: batch mismatch between features " + shape_str(features.shape()) +
                             " and domain prompts " + shape_str(domain.shape()));
    }
    Tensor context = spatial_broadcast(domain, features.dim(2), features.dim(3));
    Tensor h = concat({features, context}, 1);
    h = relu(conv2d(h, task_conv1_.kernel, task_conv1_.bias, 1, 1));
    h = relu(conv2d(h, task_conv2_.kernel, task_conv2_.bias, 1, 1));
    return linear(global_avg_pool(h), task_fc_.weight, task_fc_.bias);
}

PromptPair Hpgn::generate(const Tensor& images) const {
    Tensor features = extract(images);
    Tensor domain = domain_prompt(features);
    return {domain, task_prompt(features, domain)};
}

void Hpgn::collect(ParamList& out, const std::string& prefix) const {
    domain_fc1_.collect(out, prefix + ".domain_fc1");
    domain_fc2_.collect(out, prefix + ".domain_fc2");
    task_conv1_.collect(out, prefix + ".task_conv1");
    task_conv2_.collect(out, prefix + ".task_conv2");
    task_fc_.collect(out, prefix + ".task_fc");
}

} // namespace hcvp
