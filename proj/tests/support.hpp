#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "hcvp/rng.hpp"
#include "hcvp/synth.hpp"
#include "hcvp/tensor.hpp"

namespace hcvp::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false, double scale = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<std::vector<double>> rows_of(const Tensor& t) {
    const std::size_t n = t.dim(0), d = t.dim(1);
    std::vector<std::vector<double>> out(n, std::vector<double>(d));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) out[i][j] = t.data()[i * d + j];
    }
    return out;
}

struct OracleResult {
    double value = 0.0;
    bool degenerate = false;
};

// Direct triple loop over (anchor, positive, denominator term).
inline OracleResult info_nce_oracle(const std::vector<std::vector<double>>& rows,
                                    const std::function<bool(std::size_t, std::size_t)>& positive,
                                    double temperature, bool normalize) {
    const std::size_t b = rows.size();
    auto sim = [&](std::size_t i, std::size_t j) {
        double dot = 0.0, ni = 0.0, nj = 0.0;
        for (std::size_t k = 0; k < rows[i].size(); ++k) {
            dot += rows[i][k] * rows[j][k];
            ni += rows[i][k] * rows[i][k];
            nj += rows[j][k] * rows[j][k];
        }
        if (normalize) dot /= std::max(std::sqrt(ni), 1e-12) * std::max(std::sqrt(nj), 1e-12);
        return dot / temperature;
    };
    double total = 0.0;
    std::size_t anchors = 0;
    for (std::size_t i = 0; i < b; ++i) {
        double denom = 0.0;
        for (std::size_t k = 0; k < b; ++k) {
            if (k != i) denom += std::exp(sim(i, k));
        }
        double acc = 0.0;
        std::size_t count = 0;
        for (std::size_t j = 0; j < b; ++j) {
            if (j == i || !positive(i, j)) continue;
            acc += -std::log(std::exp(sim(i, j)) / denom);
            ++count;
        }
        if (count == 0) continue;
        total += acc / static_cast<double>(count);
        ++anchors;
    }
    if (anchors == 0) return {0.0, true};
    return {total / static_cast<double>(anchors), false};
}

inline double cross_entropy_oracle(const std::vector<std::vector<double>>& logits, const std::vector<int>& labels) {
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        double z = 0.0;
        for (double v : logits[i]) z += std::exp(v);
        total += -std::log(std::exp(logits[i][labels[i]]) / z);
    }
    return total / static_cast<double>(logits.size());
}

/// Small diversity-shift dataset for fast trainer tests.
inline SynthConfig small_synth(int per_cell = 10) {
    SynthConfig c;
    c.per_cell = per_cell;
    c.seed = 7;
    return c;
}

} // namespace hcvp::testing
