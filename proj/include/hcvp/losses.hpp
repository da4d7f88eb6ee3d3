#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "hcvp/tensor.hpp"

namespace hcvp {

struct SimilarityConfig {
    double temperature = 0.1;
    /// Cosine similarity when true, raw dot product otherwise.
    bool normalize = true;
};

struct LossWeights {
    double pcl = 0.1;
    double cci = 1.0;
};

/// A contrastive loss value. `degenerate` is set when no anchor in the batch
/// had a positive; the value is then a constant 0.
struct ContrastiveLoss {
    Tensor value;
    bool degenerate = false;
    std::size_t anchors = 0;
};

/// Multi-positive InfoNCE over the rows of `embeddings` [b x d].
///
/// For anchor i with positive set P(i) (never containing i):
///   l_ij = -log( exp(s_ij / t) / sum_{k != i} exp(s_ik / t) )
///   loss_i = mean_{j in P(i)} l_ij
/// and the batch loss is the mean of loss_i over anchors with |P(i)| >= 1.
/// `positive(i, j)` is only queried for i != j.
template <typename Positive>
ContrastiveLoss info_nce(const Tensor& embeddings, Positive&& positive, const SimilarityConfig& config);

/// Same-domain positives on domain prompts.
ContrastiveLoss pcl_domain(const Tensor& domain_prompts, const std::vector<int>& domains,
                           const SimilarityConfig& config = {});
/// Same (class, domain) positives on task prompts.
ContrastiveLoss pcl_task(const Tensor& task_prompts, const std::vector<int>& labels, const std::vector<int>& domains,
                         const SimilarityConfig& config = {});
/// 0.5 * domain + 0.5 * task; degenerate only when both halves are.
ContrastiveLoss pcl_total(const Tensor& domain_prompts, const Tensor& task_prompts, const std::vector<int>& labels,
                          const std::vector<int>& domains, const SimilarityConfig& config = {});
/// Same-class positives (any domain) on class-token embeddings.
ContrastiveLoss cci(const Tensor& class_embeddings, const std::vector<int>& labels,
                    const SimilarityConfig& config = {});

/// Mean cross-entropy of logits [b x C] against integer labels.
Tensor cls_loss(const Tensor& logits, const std::vector<int>& labels);

struct LossParts {
    Tensor cls;
    std::optional<Tensor> pcl;
    std::optional<Tensor> cci;
};

/// cls + w.pcl * pcl + w.cci * cci; absent parts contribute nothing.
/// Throws NumericError naming the first non-finite component.
Tensor total_loss(const LossParts& parts, const LossWeights& weights);

/// Per-thread counts of contrastive loss evaluations, for graph-hygiene checks.
struct LossCounters {
    std::size_t pcl = 0;
    std::size_t cci = 0;
};
LossCounters& loss_counters();

namespace detail {
ContrastiveLoss info_nce_masked(const Tensor& embeddings, const std::vector<bool>& positive,
                                const SimilarityConfig& config);
}

template <typename Positive>
ContrastiveLoss info_nce(const Tensor& embeddings, Positive&& positive, const SimilarityConfig& config) {
    const std::size_t b = embeddings.rank() == 2 ? embeddings.dim(0) : 0;
    std::vector<bool> mask(b * b, false);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < b; ++j) {
            if (i != j) mask[i * b + j] = positive(i, j);
        }
    }
    return detail::info_nce_masked(embeddings, mask, config);
}

} // namespace hcvp
