#include "hcvp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_set>

namespace hcvp {

namespace {

constexpr std::size_t kBatch = 64;

template <typename Fn>
void for_each_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices, Fn&& fn) {
    for (std::size_t start = 0; start < indices.size(); start += kBatch) {
        std::vector<std::size_t> idx(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                     indices.begin() + static_cast<std::ptrdiff_t>(std::min(start + kBatch, indices.size())));
        fn(gather(samples, idx));
    }
}

std::vector<double> normalized(std::span<const double> row) {
    double norm = 0.0;
    for (double v : row) norm += v * v;
    norm = std::sqrt(norm);
    std::vector<double> out(row.begin(), row.end());
    if (norm > 0.0) {
        for (auto& v : out) v /= norm;
    }
    return out;
}

double euclidean(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return std::sqrt(s);
}

struct Centroids {
    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> counts;
};

// Centroids of normalized rows per domain, restricted to rows passing `keep`.
template <typename Keep>
Centroids domain_centroids(const FeatureSet& f, const std::vector<int>& domains, Keep&& keep) {
    Centroids c;
    c.rows.assign(domains.size(), std::vector<double>(f.dim, 0.0));
    c.counts.assign(domains.size(), 0);
    for (std::size_t i = 0; i < f.size(); ++i) {
        if (!keep(i)) continue;
        auto it = std::find(domains.begin(), domains.end(), f.domains[i]);
        if (it == domains.end()) continue;
        const auto slot = static_cast<std::size_t>(it - domains.begin());
        auto unit = normalized(f.row(i));
        for (std::size_t k = 0; k < f.dim; ++k) c.rows[slot][k] += unit[k];
        ++c.counts[slot];
    }
    for (std::size_t s = 0; s < domains.size(); ++s) {
        if (c.counts[s] == 0) continue;
        for (auto& v : c.rows[s]) v /= static_cast<double>(c.counts[s]);
    }
    return c;
}

} // namespace

std::string to_string(FeatureKind kind) {
    switch (kind) {
    case FeatureKind::embedding: return "embedding";
    case FeatureKind::domain_prompt: return "domain_prompt";
    case FeatureKind::task_prompt: return "task_prompt";
    }
    return "embedding";
}

FeatureKind parse_feature_kind(const std::string& text) {
    if (text == "embedding") return FeatureKind::embedding;
    if (text == "domain_prompt") return FeatureKind::domain_prompt;
    if (text == "task_prompt") return FeatureKind::task_prompt;
    throw std::invalid_argument("unknown feature kind '" + text + "' (expected embedding, domain_prompt or task_prompt)");
}

FeatureSet l2_normalized(const FeatureSet& features) {
    FeatureSet out = features;
    for (std::size_t i = 0; i < features.size(); ++i) {
        auto unit = normalized(features.row(i));
        std::copy(unit.begin(), unit.end(), out.values.begin() + static_cast<std::ptrdiff_t>(i * features.dim));
    }
    return out;
}

FeatureSet extract_features(const Model& model, const std::vector<Sample>& samples,
                            const std::vector<std::size_t>& indices, FeatureKind kind) {
    if (kind != FeatureKind::embedding && !model.has_prompts()) {
        throw ContractError("extract_features: " + to_string(kind) + " requested from a model without prompts");
    }
    NoGradGuard guard;
    FeatureSet out;
    for_each_batch(samples, indices, [&](const LabeledBatch& batch) {
        Tensor rows;
        if (kind == FeatureKind::embedding) {
            rows = model.forward(batch.images).embedding;
        } else {
            PromptPair p = model.hpgn().generate(batch.images);
            rows = kind == FeatureKind::domain_prompt ? p.domain : p.task;
        }
        out.dim = rows.dim(1);
        out.values.insert(out.values.end(), rows.data().begin(), rows.data().end());
        out.labels.insert(out.labels.end(), batch.labels.begin(), batch.labels.end());
        out.domains.insert(out.domains.end(), batch.domains.begin(), batch.domains.end());
    });
    return out;
}

std::vector<int> predict(const Model& model, const std::vector<Sample>& samples,
                         const std::vector<std::size_t>& indices) {
    NoGradGuard guard;
    std::vector<int> out;
    out.reserve(indices.size());
    for_each_batch(samples, indices, [&](const LabeledBatch& batch) {
        Tensor logits = model.forward(batch.images).logits;
        const std::size_t c = logits.dim(1);
        auto v = logits.data();
        for (std::size_t i = 0; i < logits.dim(0); ++i) {
            auto row = v.subspan(i * c, c);
            out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
        }
    });
    return out;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& expected) {
    if (predicted.size() != expected.size()) {
        throw DimensionError("accuracy: " + std::to_string(predicted.size()) + " predictions for " +
                             std::to_string(expected.size()) + " labels");
    }
    if (expected.empty()) throw std::invalid_argument("accuracy: empty evaluation set");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < expected.size(); ++i) hits += predicted[i] == expected[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(expected.size());
}

void check_no_leakage(const std::vector<Sample>& samples, const SplitPlan& plan) {
    std::unordered_set<std::size_t> seen_index;
    std::unordered_set<std::uint64_t> seen_id;
    for (const auto* split : {&plan.train, &plan.val}) {
        for (auto i : *split) {
            if (samples.at(i).domain == plan.unseen_domain) {
                throw LeakageError("sample " + std::to_string(samples[i].id) + " of unseen domain " +
                                   std::to_string(plan.unseen_domain) + " is in a source split");
            }
            seen_index.insert(i);
            seen_id.insert(samples[i].id);
        }
    }
    for (auto i : plan.test) {
        const Sample& s = samples.at(i);
        if (seen_index.count(i) || seen_id.count(s.id)) {
            throw LeakageError("test sample " + std::to_string(s.id) + " also appears in training data");
        }
        if (s.domain != plan.unseen_domain) {
            throw LeakageError("test sample " + std::to_string(s.id) + " comes from source domain " +
                               std::to_string(s.domain));
        }
    }
}

double unseen_accuracy(const Model& model, const std::vector<Sample>& samples, const SplitPlan& plan,
                       int unseen_domain) {
    if (plan.unseen_domain != unseen_domain) {
        throw ContractError("unseen_accuracy: split plan holds out domain " + std::to_string(plan.unseen_domain) +
                            ", not " + std::to_string(unseen_domain));
    }
    check_no_leakage(samples, plan);
    std::vector<int> labels;
    labels.reserve(plan.test.size());
    for (auto i : plan.test) labels.push_back(samples[i].label);
    return accuracy(predict(model, samples, plan.test), labels);
}

DomainDistanceReport inter_domain_distance(const FeatureSet& features, const std::vector<int>& domains) {
    if (domains.size() < 2) throw std::invalid_argument("inter_domain_distance: needs at least two domains");
    DomainDistanceReport r;
    r.domains = domains;
    auto all = domain_centroids(features, domains, [](std::size_t) { return true; });
    for (std::size_t s = 0; s < domains.size(); ++s) {
        if (all.counts[s] == 0) {
            throw std::invalid_argument("inter_domain_distance: domain " + std::to_string(domains[s]) +
                                        " has no samples");
        }
    }
    r.centroids = all.rows;
    const std::size_t m = domains.size();
    r.distances.assign(m, std::vector<double>(m, 0.0));
    double total = 0.0;
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = a + 1; b < m; ++b) {
            const double d = euclidean(r.centroids[a], r.centroids[b]);
            r.distances[a][b] = r.distances[b][a] = d;
            total += d;
            ++r.pairs;
        }
    }
    r.mean_distance = total / static_cast<double>(r.pairs);

    std::set<int> classes(features.labels.begin(), features.labels.end());
    double class_total = 0.0;
    std::size_t class_count = 0;
    for (int c : classes) {
        auto per = domain_centroids(features, domains, [&](std::size_t i) { return features.labels[i] == c; });
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t a = 0; a < m; ++a) {
            for (std::size_t b = a + 1; b < m; ++b) {
                if (per.counts[a] == 0 || per.counts[b] == 0) continue;
                sum += euclidean(per.rows[a], per.rows[b]);
                ++n;
            }
        }
        if (n == 0) continue;
        class_total += sum / static_cast<double>(n);
        ++class_count;
    }
    r.class_conditional_mean = class_count ? class_total / static_cast<double>(class_count) : 0.0;
    return r;
}

DomainDistanceReport inter_domain_distance(const FeatureSet& features) {
    std::set<int> present(features.domains.begin(), features.domains.end());
    return inter_domain_distance(features, std::vector<int>(present.begin(), present.end()));
}

nlohmann::json DomainDistanceReport::to_json() const {
    return {{"event", "domain_distance"},
            {"metric", "centroid euclidean distance of L2-normalized class-token features"},
            {"method", method},
            {"seed", seed},
            {"domains", domains},
            {"pairs", pairs},
            {"distances", distances},
            {"mean_distance", mean_distance},
            {"class_conditional_mean", class_conditional_mean}};
}

double nn_purity(const FeatureSet& features, const std::vector<std::int64_t>& keys) {
    const std::size_t n = features.size();
    if (keys.size() != n) throw DimensionError("nn_purity: key count does not match row count");
    if (n < 2) throw std::invalid_argument("nn_purity: needs at least two rows");
    std::size_t agree = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t nearest = i;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double d = euclidean(features.row(i), features.row(j));
            if (d < best) {
                best = d;
                nearest = j;
            }
        }
        if (keys[nearest] == keys[i]) ++agree;
    }
    return static_cast<double>(agree) / static_cast<double>(n);
}

PromptClusterScore prompt_cluster_score(const FeatureSet& domain_prompts, const FeatureSet& task_prompts) {
    std::vector<std::int64_t> domain_keys, task_keys;
    for (std::size_t i = 0; i < domain_prompts.size(); ++i) domain_keys.push_back(domain_prompts.domains[i]);
    for (std::size_t i = 0; i < task_prompts.size(); ++i) {
        task_keys.push_back(static_cast<std::int64_t>(task_prompts.labels[i]) * 1'000'003 + task_prompts.domains[i]);
    }
    return {nn_purity(domain_prompts, domain_keys), nn_purity(task_prompts, task_keys)};
}

PromptClusterScore prompt_cluster_score(const Model& model, const std::vector<Sample>& samples,
                                        const std::vector<std::size_t>& indices) {
    if (!model.has_prompts()) {
        throw ContractError("prompt_cluster_score: not applicable to an ERM model (no prompts)");
    }
    return prompt_cluster_score(extract_features(model, samples, indices, FeatureKind::domain_prompt),
                                extract_features(model, samples, indices, FeatureKind::task_prompt));
}

nlohmann::json PromptClusterScore::to_json() const {
    return {{"event", "prompt_cluster"}, {"domain_purity", domain_purity}, {"task_purity", task_purity}};
}

void export_embeddings(const std::filesystem::path& path, const FeatureSet& features) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    for (std::size_t k = 0; k < features.dim; ++k) out << 'f' << k << ',';
    out << "class,domain\n";
    char buf[32];
    for (std::size_t i = 0; i < features.size(); ++i) {
        for (double v : features.row(i)) {
            std::snprintf(buf, sizeof buf, "%.9g", v);
            out << buf << ',';
        }
        out << features.labels[i] << ',' << features.domains[i] << '\n';
    }
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

FeatureSet read_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": missing header");
    FeatureSet f;
    f.dim = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) - 1;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(fields, cell, ',')) cells.push_back(cell);
        if (cells.size() != f.dim + 2) {
            throw std::runtime_error(path.string() + ": row " + std::to_string(row) + " has " +
                                     std::to_string(cells.size()) + " columns, expected " +
                                     std::to_string(f.dim + 2));
        }
        for (std::size_t k = 0; k < f.dim; ++k) f.values.push_back(std::stod(cells[k]));
        f.labels.push_back(std::stoi(cells[f.dim]));
        f.domains.push_back(std::stoi(cells[f.dim + 1]));
    }
    return f;
}

} // namespace hcvp
