#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "hcvp/model.hpp"
#include "hcvp/synth.hpp"

namespace hcvp {

/// Raised when a test sample also appears in training or validation data.
class LeakageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

enum class FeatureKind { embedding, domain_prompt, task_prompt };

std::string to_string(FeatureKind kind);
FeatureKind parse_feature_kind(const std::string& text);

/// Row-major feature matrix with per-row class and domain.
struct FeatureSet {
    std::size_t dim = 0;
    std::vector<double> values;
    std::vector<int> labels;
    std::vector<int> domains;

    std::size_t size() const noexcept { return labels.size(); }
    std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

/// Copy with every row scaled to unit Euclidean norm (zero rows stay zero).
FeatureSet l2_normalized(const FeatureSet& features);

/// Runs the model without a tape over `indices` and collects one feature row per sample.
FeatureSet extract_features(const Model& model, const std::vector<Sample>& samples,
                            const std::vector<std::size_t>& indices, FeatureKind kind = FeatureKind::embedding);

std::vector<int> predict(const Model& model, const std::vector<Sample>& samples,
                         const std::vector<std::size_t>& indices);

/// Fraction of positions where predicted equals expected.
double accuracy(const std::vector<int>& predicted, const std::vector<int>& expected);

/// Checks that no test sample is shared with train/val (by index or id), that the
/// test split holds exactly the unseen domain and that train/val hold none of it.
void check_no_leakage(const std::vector<Sample>& samples, const SplitPlan& plan);

/// Accuracy over the whole unseen-domain test split.
double unseen_accuracy(const Model& model, const std::vector<Sample>& samples, const SplitPlan& plan,
                       int unseen_domain);

struct DomainDistanceReport {
    std::string method;
    std::uint64_t seed = 0;
    std::vector<int> domains;
    /// Centroids of L2-normalized features, one per entry of `domains`.
    std::vector<std::vector<double>> centroids;
    /// Symmetric, zero diagonal.
    std::vector<std::vector<double>> distances;
    std::size_t pairs = 0;
    double mean_distance = 0.0;
    /// Per class, the same mean computed over that class's samples; then averaged over classes.
    double class_conditional_mean = 0.0;

    nlohmann::json to_json() const;
};

/// Mean pairwise Euclidean distance between per-domain centroids of
/// L2-normalized feature rows. Every domain in `domains` must have samples.
DomainDistanceReport inter_domain_distance(const FeatureSet& features, const std::vector<int>& domains);
/// Uses the distinct domains present in `features`.
DomainDistanceReport inter_domain_distance(const FeatureSet& features);

/// Leave-one-out 1-nearest-neighbour agreement: the fraction of rows whose
/// nearest other row (Euclidean, lowest index on ties) carries the same key.
double nn_purity(const FeatureSet& features, const std::vector<std::int64_t>& keys);

struct PromptClusterScore {
    double domain_purity = 0.0;
    double task_purity = 0.0;

    nlohmann::json to_json() const;
};

/// Domain prompts scored against domain ids, task prompts against (class, domain).
/// Throws ContractError for a model without prompts.
PromptClusterScore prompt_cluster_score(const Model& model, const std::vector<Sample>& samples,
                                        const std::vector<std::size_t>& indices);
PromptClusterScore prompt_cluster_score(const FeatureSet& domain_prompts, const FeatureSet& task_prompts);

/// CSV with header f0..f{d-1},class,domain and 9 significant digits.
void export_embeddings(const std::filesystem::path& path, const FeatureSet& features);
FeatureSet read_embeddings(const std::filesystem::path& path);

} // namespace hcvp
