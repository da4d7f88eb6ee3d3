#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hcvp/adamw.hpp"
#include "hcvp/checkpoint.hpp"
#include "hcvp/losses.hpp"
#include "hcvp/model.hpp"
#include "hcvp/synth.hpp"

namespace hcvp {

struct TrainConfig {
    Method method = Method::hcvp;
    std::size_t steps = 2000;
    std::size_t batch_size = 32;
    AdamWOptions optimizer;
    LossWeights weights;
    SimilarityConfig similarity;
    bool use_pcl = true;
    bool use_cci = true;
    std::uint64_t seed = 0;
    int unseen_domain = 3;
    std::size_t eval_every = 250;

    std::size_t pretrain_steps = 300;
    std::size_t pretrain_batch_size = 32;
    AdamWOptions pretrain_optimizer{1e-2, 0.01, 0.9, 0.999, 1e-8};

    ViTConfig vit;

    /// ERM forces both auxiliary losses off. Throws ConfigError on conflicts.
    TrainConfig resolved() const;
    /// Stable key=value listing of every setting.
    std::string canonical() const;
    std::string hash() const;
};

struct StepLosses {
    double total = 0.0;
    double cls = 0.0;
    /// Unweighted component values; 0 when the component is disabled.
    double pcl = 0.0;
    double cci = 0.0;
    bool pcl_degenerate = false;
    bool cci_degenerate = false;
    double batch_accuracy = 0.0;
};

struct EvalSummary {
    double accuracy = 0.0;
    double loss = 0.0;
    std::size_t count = 0;
};

struct PretrainReport {
    std::size_t steps = 0;
    double final_loss = 0.0;
    double val_accuracy = 0.0;
};

using RecordSink = std::function<void(const nlohmann::json&)>;

/// Owns one run: model, optimizer and batch stream over the train split.
class Trainer {
public:
    Trainer(const TrainConfig& config, const std::vector<Sample>& samples, SplitPlan plan);

    /// Classification pretraining of the prompt extractor on pooled source
    /// data (throwaway linear head), then freezing. HCVP only.
    PretrainReport pretrain_extractor();

    StepLosses step();
    EvalSummary evaluate(const std::vector<std::size_t>& indices) const;

    Checkpoint snapshot() const;
    void restore(const Checkpoint& checkpoint);

    /// Records a validation result; true when it beats every earlier one.
    bool note_validation(double accuracy);
    std::uint64_t best_step() const noexcept { return best_step_; }
    double best_val_accuracy() const noexcept { return best_val_; }

    std::uint64_t current_step() const noexcept { return step_; }
    const TrainConfig& config() const noexcept { return config_; }
    Model& model() { return model_; }
    const Model& model() const { return model_; }
    const SplitPlan& plan() const noexcept { return plan_; }

private:
    TrainConfig config_;
    const std::vector<Sample>* samples_;
    SplitPlan plan_;
    Model model_;
    AdamW optimizer_;
    BatchStream stream_;
    std::uint64_t step_ = 0;
    std::uint64_t best_step_ = 0;
    double best_val_ = -1.0;

};

struct TrainRun {
    Checkpoint best;
    Checkpoint last;
    PretrainReport pretrain;
    std::vector<nlohmann::json> records;
};

/// Full run: pretraining (HCVP), the step loop with periodic validation on the
/// pooled source val split, and best-validation checkpoint selection.
/// Throws NumericError naming the failing loss component on NaN.
TrainRun train(const TrainConfig& config, const std::vector<Sample>& samples, const SplitPlan& plan,
               const RecordSink& sink = {});

/// Model rebuilt from a checkpoint for evaluation.
Model load_model(const Checkpoint& checkpoint, const TrainConfig& config);

/// Parses the canonical text stored in checkpoints back into a config.
TrainConfig parse_canonical(const std::string& text);

/// Adjusts allocator thresholds so per-step tensor buffers are recycled
/// instead of being mapped and faulted in on every step.
void tune_allocator();

} // namespace hcvp
