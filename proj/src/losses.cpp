#include "hcvp/losses.hpp"

#include <cmath>
#include <string>

#include "hcvp/ops.hpp"

namespace hcvp {

LossCounters& loss_counters() {
    thread_local LossCounters counters;
    return counters;
}

namespace {

void require_labels(const Tensor& x, const std::vector<int>& labels, const char* name, const char* op) {
    if (x.rank() != 2) throw DimensionError(std::string(op) + ": expected [b x d], got " + shape_str(x.shape()));
    if (x.dim(0) < 2) throw DimensionError(std::string(op) + ": batch size must be at least 2");
    if (labels.size() != x.dim(0)) {
        throw DimensionError(std::string(op) + ": " + std::to_string(labels.size()) + " " + name + " for batch of " +
                             std::to_string(x.dim(0)));
    }
}

} // namespace

namespace detail {

ContrastiveLoss info_nce_masked(const Tensor& embeddings, const std::vector<bool>& positive,
                                const SimilarityConfig& config) {
    if (embeddings.rank() != 2 || embeddings.dim(0) < 2) {
        throw DimensionError("info_nce: expected [b x d] with b >= 2, got " + shape_str(embeddings.shape()));
    }
    if (!(config.temperature > 0.0)) throw ContractError("info_nce: temperature must be positive");
    const std::size_t b = embeddings.dim(0);

    std::vector<std::size_t> counts(b, 0);
    std::size_t anchors = 0;
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < b; ++j) counts[i] += positive[i * b + j] ? 1 : 0;
        anchors += counts[i] > 0 ? 1 : 0;
    }
    if (anchors == 0) return {Tensor::scalar(0.0), true, 0};

    std::vector<double> weights(b * b, 0.0);
    std::vector<bool> keep(b * b, true);
    for (std::size_t i = 0; i < b; ++i) {
        keep[i * b + i] = false;
        for (std::size_t j = 0; j < b; ++j) {
            if (positive[i * b + j]) {
                weights[i * b + j] = -1.0 / (static_cast<double>(counts[i]) * static_cast<double>(anchors));
            }
        }
    }
    Tensor z = config.normalize ? l2_normalize_rows(embeddings) : embeddings;
    Tensor logits = scale(matmul(z, transpose(z)), 1.0 / config.temperature);
    Tensor log_probs = log_softmax(logits, keep);
    Tensor value = sum(mul(log_probs, Tensor::from({b, b}, std::move(weights))));
    return {value, false, anchors};
}

} // namespace detail

ContrastiveLoss pcl_domain(const Tensor& domain_prompts, const std::vector<int>& domains,
                           const SimilarityConfig& config) {
    require_labels(domain_prompts, domains, "domains", "pcl_domain");
    ++loss_counters().pcl;
    return info_nce(domain_prompts, [&](std::size_t i, std::size_t j) { return domains[i] == domains[j]; }, config);
}

ContrastiveLoss pcl_task(const Tensor& task_prompts, const std::vector<int>& labels, const std::vector<int>& domains,
                         const SimilarityConfig& config) {
    require_labels(task_prompts, labels, "labels", "pcl_task");
    require_labels(task_prompts, domains, "domains", "pcl_task");
    ++loss_counters().pcl;
    return info_nce(
        task_prompts,
        [&](std::size_t i, std::size_t j) { return labels[i] == labels[j] && domains[i] == domains[j]; }, config);
}

ContrastiveLoss pcl_total(const Tensor& domain_prompts, const Tensor& task_prompts, const std::vector<int>& labels,
                          const std::vector<int>& domains, const SimilarityConfig& config) {
    ContrastiveLoss d = pcl_domain(domain_prompts, domains, config);
    ContrastiveLoss t = pcl_task(task_prompts, labels, domains, config);
    Tensor value = add(scale(d.value, 0.5), scale(t.value, 0.5));
    return {value, d.degenerate && t.degenerate, d.anchors + t.anchors};
}

ContrastiveLoss cci(const Tensor& class_embeddings, const std::vector<int>& labels, const SimilarityConfig& config) {
    require_labels(class_embeddings, labels, "labels", "cci");
    ++loss_counters().cci;
    return info_nce(class_embeddings, [&](std::size_t i, std::size_t j) { return labels[i] == labels[j]; }, config);
}

Tensor cls_loss(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw DimensionError("cls_loss: expected [b x C], got " + shape_str(logits.shape()));
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    if (labels.size() != b) {
        throw DimensionError("cls_loss: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(b));
    }
    std::vector<double> pick(b * c, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
            throw std::out_of_range("cls_loss: label " + std::to_string(labels[i]) + " outside [0, " +
                                    std::to_string(c) + ")");
        }
        pick[i * c + static_cast<std::size_t>(labels[i])] = -1.0 / static_cast<double>(b);
    }
    return sum(mul(log_softmax(logits), Tensor::from({b, c}, std::move(pick))));
}

Tensor total_loss(const LossParts& parts, const LossWeights& weights) {
    auto check = [](const Tensor& t, const char* name) {
        if (t.numel() != 1) throw DimensionError(std::string("total_loss: ") + name + " is not a scalar");
        if (!std::isfinite(t.item())) throw NumericError(std::string("total_loss: non-finite ") + name + " loss");
    };
    check(parts.cls, "classification");
    if (parts.pcl) check(*parts.pcl, "pcl");
    if (parts.cci) check(*parts.cci, "cci");
    Tensor total = parts.cls;
    if (parts.pcl) total = add(total, scale(*parts.pcl, weights.pcl));
    if (parts.cci) total = add(total, scale(*parts.cci, weights.cci));
    return total;
}

} // namespace hcvp
