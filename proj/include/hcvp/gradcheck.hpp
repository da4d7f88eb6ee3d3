#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hcvp/params.hpp"

namespace hcvp {

struct GradcheckOptions {
    double step = 1e-5;
    /// Denominator floor for the relative error, so near-zero gradients are
    /// compared in absolute terms.
    double floor = 1e-3;
    /// 0 checks every entry; otherwise a seeded random subset per input.
    std::size_t max_entries_per_input = 0;
    std::uint64_t seed = 0;
};

struct GradcheckEntry {
    std::string name;
    std::size_t checked = 0;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;

    double worst() const;
    bool passed(double tolerance) const { return worst() < tolerance; }
};

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences, perturbing each listed tensor in place.
/// Relative error is |a - n| / max(|a|, |n|, floor).
GradcheckReport gradcheck(const std::function<Tensor()>& f, const ParamList& inputs,
                          const GradcheckOptions& options = {});

struct PrimitiveCheck {
    std::string primitive;
    GradcheckReport report;
};

/// Checks every differentiable primitive on seeded random inputs of up to
/// four dimensions, each reduced to a scalar through fixed random weights.
std::vector<PrimitiveCheck> check_primitives(std::uint64_t seed = 0);

/// Checks the complete HCVP objective (classification, prompt-contrastive and
/// class-conditioned terms) on a four-sample batch, with respect to every
/// trainable tensor and the input images.
GradcheckReport check_model_loss(std::uint64_t seed = 0, std::size_t max_entries_per_input = 16);

} // namespace hcvp
