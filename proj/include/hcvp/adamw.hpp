#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hcvp/params.hpp"

namespace hcvp {

struct AdamWOptions {
    double learning_rate = 3e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// One decoupled-weight-decay Adam update on a flat parameter block.
/// `step` is the already-incremented step count used for bias correction.
void adamw_update(std::span<double> param,
                  std::span<const double> grad,
                  std::span<double> first_moment,
                  std::span<double> second_moment,
                  const AdamWOptions& options,
                  std::uint64_t step);

/// AdamW over a named parameter list. Moment buffers are allocated lazily to
/// match each parameter; parameters that received no gradient this step are
/// left untouched.
class AdamW {
public:
    struct State {
        std::uint64_t step_count = 0;
        std::vector<std::vector<double>> first_moment;
        std::vector<std::vector<double>> second_moment;
    };

    AdamW() = default;
    AdamW(ParamList params, AdamWOptions options);

    /// Throws NumericError naming the first parameter with a non-finite gradient;
    /// nothing is modified in that case.
    void step();
    void zero_grad();

    const AdamWOptions& options() const noexcept { return options_; }
    const State& state() const noexcept { return state_; }
    void set_state(State state);
    const ParamList& params() const noexcept { return params_; }

private:
    ParamList params_;
    AdamWOptions options_;
    State state_;
};

} // namespace hcvp
