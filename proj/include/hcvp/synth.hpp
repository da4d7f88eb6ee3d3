#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hcvp/tensor.hpp"

namespace hcvp {

/// Raised for invalid dataset or split parameters.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class Style { solid_fill, stripes, speckle_noise, outline_only };
enum class ShapeKind { disk, square, triangle, cross };

std::string to_string(Style style);

using Rgb = std::array<double, 3>;

struct DomainSpec {
    int domain_id = 0;
    Style style = Style::solid_fill;
    /// background, primary foreground, secondary foreground
    std::vector<Rgb> palette;
    /// Probability that the corner patch shows the label's color. Empty: no patch.
    std::optional<double> spurious_correlation;
};

struct SynthConfig {
    int classes = 4;
    int domains = 4;
    int per_cell = 25;
    std::uint64_t seed = 7;
    /// Correlation-shift variant: patch agreement in source domains, and in
    /// the domain named by `unseen_domain`. Both empty: no patch anywhere.
    std::optional<double> spurious_source;
    std::optional<double> spurious_unseen;
    int unseen_domain = 3;

    void validate() const;
    std::vector<DomainSpec> domain_specs() const;
};

inline constexpr std::size_t kImageSize = 32;
inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImageNumel = kImageChannels * kImageSize * kImageSize;

struct Sample {
    /// [3 x 32 x 32] row-major, values in [0, 1], exactly representable as float.
    std::vector<double> image;
    int label = 0;
    int domain = 0;
    /// Class whose color the corner patch shows; -1 when there is no patch.
    int spurious = -1;
    /// Generation index; the split key.
    std::uint64_t id = 0;
};

/// Deterministic shapes-and-styles dataset: n samples for every (class, domain) cell.
std::vector<Sample> generate(const SynthConfig& config);

/// Renders one image (exposed for tests).
std::vector<double> render(ShapeKind shape, const DomainSpec& spec, std::uint64_t sample_seed, int num_classes,
                           int label, int* spurious_out = nullptr);

struct SplitPlan {
    int unseen_domain = 0;
    std::uint64_t seed = 0;
    /// Indices into the sample vector the plan was made from.
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

/// Leave-one-domain-out partition: every (class, domain) cell of the source
/// domains is split 80/20 by a seeded hash of the sample id, and the unseen
/// domain is kept whole for testing.
SplitPlan make_splits(const std::vector<Sample>& samples, int unseen_domain, std::uint64_t seed);

struct LabeledBatch {
    Tensor images; // [b x 3 x 32 x 32]
    std::vector<int> labels;
    std::vector<int> domains;
};

LabeledBatch gather(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices);

/// Batches of one epoch over `pool` (indices into samples), as index lists.
///
/// Samples are paired within (class, domain) cells before shuffling so that
/// contrastive positives exist, and batches with a single domain are repaired
/// by swapping pairs across batches. The trailing partial batch is dropped.
std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<Sample>& samples,
                                                    const std::vector<std::size_t>& pool, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch);

/// Endless deterministic batch stream: step s maps to a fixed (epoch, slot).
class BatchStream {
public:
    BatchStream(const std::vector<Sample>& samples, std::vector<std::size_t> pool, std::size_t batch_size,
                std::uint64_t seed);

    std::vector<std::size_t> indices_at(std::uint64_t step);
    LabeledBatch at(std::uint64_t step) { return gather(*samples_, indices_at(step)); }
    std::size_t batches_per_epoch() const noexcept { return per_epoch_; }

private:
    const std::vector<Sample>* samples_;
    std::vector<std::size_t> pool_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    std::size_t per_epoch_ = 0;
    std::uint64_t cached_epoch_ = UINT64_MAX;
    std::vector<std::vector<std::size_t>> cached_;
};

/// A dataset split into its three parts, as held on disk.
struct SplitDataset {
    std::vector<Sample> samples;
    SplitPlan plan;
};

/// Writes train.bin / val.bin / test.bin (little-endian float32 images) with
/// matching .manifest files ("<byte offset> <label> <domain>" per line) and
/// dataset.cfg (key=value).
void export_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples, const SplitPlan& plan,
                    const std::vector<std::pair<std::string, std::string>>& info);
SplitDataset import_dataset(const std::filesystem::path& dir);
std::vector<std::pair<std::string, std::string>> read_key_values(const std::filesystem::path& file);

} // namespace hcvp
