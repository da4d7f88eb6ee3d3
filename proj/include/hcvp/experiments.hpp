#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hcvp/trainer.hpp"

namespace hcvp {

/// A named dataset with its leave-one-domain-out split.
struct DatasetVariant {
    std::string name;
    std::vector<Sample> samples;
    SplitPlan plan;
};

struct RunSpec {
    std::string label;
    TrainConfig config;
    const DatasetVariant* dataset = nullptr;
    /// Empty: keep everything in memory.
    std::optional<std::filesystem::path> out_dir;
};

struct RunOutcome {
    std::string label;
    TrainConfig config;
    std::string dataset;
    double best_val_accuracy = 0.0;
    std::uint64_t best_step = 0;
    double unseen_accuracy = 0.0;
    /// Largest weighted auxiliary loss over all train records.
    double max_pcl_weighted = 0.0;
    double max_cci_weighted = 0.0;
    std::vector<nlohmann::json> records;

    nlohmann::json to_json() const;
};

/// Trains one run and evaluates its best checkpoint on the unseen domain.
/// With an output directory, writes metrics.jsonl, best.ckpt and last.ckpt there.
RunOutcome execute(const RunSpec& spec);

/// Runs specs on up to `jobs` threads; results keep the input order.
std::vector<RunOutcome> execute_all(const std::vector<RunSpec>& specs, std::size_t jobs);

struct AblationVariant {
    std::string name;
    bool use_pcl = true;
    bool use_cci = true;
};

/// full, no_pcl, no_cci, vanilla.
std::vector<AblationVariant> ablation_variants();

struct AblationTable {
    std::vector<std::string> variants;
    std::vector<std::string> datasets;
    /// [variant][dataset] mean unseen accuracy over seeds.
    std::vector<std::vector<double>> mean;
    std::vector<double> average;
    std::vector<RunOutcome> runs;

    std::string to_text() const;
    nlohmann::json to_json() const;
};

/// Every variant on every dataset for every seed, from the same base config.
AblationTable ablate(const TrainConfig& base, const std::vector<DatasetVariant>& datasets,
                     const std::vector<std::uint64_t>& seeds, std::size_t jobs,
                     const std::optional<std::filesystem::path>& out_dir = std::nullopt);

enum class SweepAxis { pcl, cci };

std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& text);

/// {0.001, 0.01, 0.1, 0.5, 1.0} for the PCL weight, {0.01, 0.1, 0.3, 0.6, 1.0} for CCI.
std::vector<double> default_grid(SweepAxis axis);

struct SweepPoint {
    double lambda_pcl = 0.0;
    double lambda_cci = 0.0;
    RunOutcome outcome;
};

/// One shortened run per grid value along `axis`, the other weight held at `base`.
std::vector<SweepPoint> sweep(const TrainConfig& base, const DatasetVariant& dataset, SweepAxis axis,
                              const std::vector<double>& grid, std::size_t jobs,
                              const std::optional<std::filesystem::path>& out_dir = std::nullopt);

std::string sweep_table(const std::vector<SweepPoint>& points);

} // namespace hcvp
