#include "hcvp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hcvp {

double GradcheckReport::worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_rel_error);
    return w;
}

GradcheckReport gradcheck(const std::function<Tensor()>& f, const ParamList& inputs,
                          const GradcheckOptions& options) {
    for (auto input : inputs) input.tensor.zero_grad();
    Tensor loss = f();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    for (const auto& input : inputs) {
        if (input.tensor.has_grad()) {
            analytic.emplace_back(input.tensor.grad().begin(), input.tensor.grad().end());
        } else {
            analytic.emplace_back(input.tensor.numel(), 0.0);
        }
    }

    Rng rng(options.seed);
    GradcheckReport report;
    for (std::size_t p = 0; p < inputs.size(); ++p) {
        Tensor t = inputs[p].tensor;
        std::vector<std::size_t> indices(t.numel());
        std::iota(indices.begin(), indices.end(), 0);
        if (options.max_entries_per_input != 0 && indices.size() > options.max_entries_per_input) {
            rng.shuffle(indices);
            indices.resize(options.max_entries_per_input);
            std::sort(indices.begin(), indices.end());
        }
        GradcheckEntry entry{inputs[p].name, indices.size(), 0.0, 0.0};
        auto values = t.mutable_data();
        for (auto i : indices) {
            const double original = values[i];
            values[i] = original + options.step;
            const double up = f().item();
            values[i] = original - options.step;
            const double down = f().item();
            values[i] = original;
            const double numeric = (up - down) / (2.0 * options.step);
            const double a = analytic[p][i];
            const double abs_err = std::abs(a - numeric);
            const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
            entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
            entry.max_rel_error = std::max(entry.max_rel_error, abs_err / denom);
        }
        report.entries.push_back(std::move(entry));
    }
    for (auto input : inputs) input.tensor.zero_grad();
    return report;
}

} // namespace hcvp
