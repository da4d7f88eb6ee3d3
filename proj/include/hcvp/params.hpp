#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hcvp/rng.hpp"
#include "hcvp/tensor.hpp"

namespace hcvp {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

/// Trainable leaf with N(0, std^2) entries.
inline Tensor normal_param(Shape shape, double stddev, Rng& rng) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = stddev * rng.normal();
    return Tensor::from(std::move(shape), std::move(v), true);
}

inline Tensor const_param(Shape shape, double value) {
    return Tensor::full(std::move(shape), value, true);
}

/// He-normal init for a weight with the given fan-in.
inline Tensor he_param(Shape shape, std::size_t fan_in, Rng& rng) {
    return normal_param(std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

/// Dense layer parameters: weight [in x out], bias [out].
struct LinearParams {
    Tensor weight;
    Tensor bias;

    static LinearParams init(std::size_t in, std::size_t out, double stddev, Rng& rng) {
        return {normal_param({in, out}, stddev, rng), const_param({out}, 0.0)};
    }
    void collect(ParamList& out, const std::string& prefix) const {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

/// Convolution parameters: kernel [o x c x k x k], bias [o].
struct ConvParams {
    Tensor kernel;
    Tensor bias;

    static ConvParams init(std::size_t in_c, std::size_t out_c, std::size_t k, Rng& rng) {
        return {he_param({out_c, in_c, k, k}, in_c * k * k, rng), const_param({out_c}, 0.0)};
    }
    void collect(ParamList& out, const std::string& prefix) const {
        out.push_back({prefix + ".kernel", kernel});
        out.push_back({prefix + ".bias", bias});
    }
};

} // namespace hcvp
