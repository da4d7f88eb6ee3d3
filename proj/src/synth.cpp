#include "hcvp/synth.hpp"

#include "hcvp/endian.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "hcvp/rng.hpp"

namespace hcvp {

namespace {

constexpr int kMaxClasses = 4;
constexpr int kMaxDomains = 8;
constexpr int kSupersample = 4;
constexpr double kBaseRadius = 9.0;
constexpr double kJitter = 0.2;
constexpr double kColorJitter = 0.05;
constexpr std::size_t kPatchLo = 1, kPatchHi = 6;

const std::array<std::vector<Rgb>, 4> kPresetPalettes{{
    {{0.92, 0.90, 0.84}, {0.20, 0.30, 0.80}, {0.20, 0.30, 0.80}},
    {{0.10, 0.10, 0.16}, {0.92, 0.80, 0.20}, {0.90, 0.35, 0.10}},
    {{0.30, 0.58, 0.30}, {0.92, 0.92, 0.92}, {0.92, 0.92, 0.92}},
    {{0.52, 0.22, 0.42}, {0.10, 0.88, 0.88}, {0.10, 0.88, 0.88}},
}};

const std::array<Rgb, kMaxClasses> kSpuriousColors{{
    {0.95, 0.05, 0.05}, {0.05, 0.95, 0.05}, {0.05, 0.05, 0.95}, {0.95, 0.95, 0.05}}};

Rgb hue_color(double hue, double sat, double val) {
    const double h = std::fmod(hue, 1.0) * 6.0;
    const double c = val * sat;
    const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
    const double m = val - c;
    Rgb rgb{};
    switch (static_cast<int>(h)) {
        case 0: rgb = {c, x, 0}; break;
        case 1: rgb = {x, c, 0}; break;
        case 2: rgb = {0, c, x}; break;
        case 3: rgb = {0, x, c}; break;
        case 4: rgb = {x, 0, c}; break;
        default: rgb = {c, 0, x}; break;
    }
    return {rgb[0] + m, rgb[1] + m, rgb[2] + m};
}

double to_float_precision(double v) { return static_cast<double>(static_cast<float>(v)); }

bool inside(ShapeKind shape, double px, double py, double r) {
    if (r <= 0.0) return false;
    switch (shape) {
        case ShapeKind::disk: return px * px + py * py <= r * r;
        case ShapeKind::square: return std::max(std::abs(px), std::abs(py)) <= 0.8 * r;
        case ShapeKind::triangle: {
            // Upward equilateral triangle with circumradius r, centroid at the origin.
            const double s3 = std::sqrt(3.0);
            return py <= 0.5 * r && s3 * px - py <= r && -s3 * px - py <= r;
        }
        case ShapeKind::cross: {
            const double arm = 0.3 * r;
            return (std::abs(px) <= arm && std::abs(py) <= r) || (std::abs(py) <= arm && std::abs(px) <= r);
        }
    }
    return false;
}

Rgb jitter(const Rgb& base, Rng& rng) {
    Rgb out{};
    for (int c = 0; c < 3; ++c) out[c] = std::clamp(base[c] + rng.uniform(-kColorJitter, kColorJitter), 0.0, 1.0);
    return out;
}

} // namespace

std::string to_string(Style style) {
    switch (style) {
        case Style::solid_fill: return "solid-fill";
        case Style::stripes: return "stripes";
        case Style::speckle_noise: return "speckle-noise";
        case Style::outline_only: return "outline-only";
    }
    return "unknown";
}

void SynthConfig::validate() const {
    if (classes < 2 || classes > kMaxClasses) {
        throw ConfigError("classes must be in [2, " + std::to_string(kMaxClasses) + "], got " + std::to_string(classes));
    }
    if (domains < 3 || domains > kMaxDomains) {
        throw ConfigError("domains must be in [3, " + std::to_string(kMaxDomains) + "], got " + std::to_string(domains));
    }
    if (per_cell < 8) throw ConfigError("per-cell count must be at least 8, got " + std::to_string(per_cell));
    for (const auto& rho : {spurious_source, spurious_unseen}) {
        if (rho && (*rho < 0.0 || *rho > 1.0)) throw ConfigError("spurious correlation must lie in [0, 1]");
    }
    if ((spurious_source || spurious_unseen) && (unseen_domain < 0 || unseen_domain >= domains)) {
        throw ConfigError("unseen domain " + std::to_string(unseen_domain) + " does not exist");
    }
}

std::vector<DomainSpec> SynthConfig::domain_specs() const {
    std::vector<DomainSpec> specs;
    for (int d = 0; d < domains; ++d) {
        DomainSpec spec;
        spec.domain_id = d;
        spec.style = static_cast<Style>(d % 4);
        if (d < 4) {
            spec.palette = kPresetPalettes[static_cast<std::size_t>(d)];
        } else {
            const double hue = 0.13 * d;
            spec.palette = {hue_color(hue, 0.5, 0.35), hue_color(hue + 0.5, 0.7, 0.95), hue_color(hue + 0.3, 0.8, 0.8)};
        }
        if (spurious_source || spurious_unseen) {
            spec.spurious_correlation = d == unseen_domain ? spurious_unseen.value_or(*spurious_source)
                                                           : spurious_source.value_or(*spurious_unseen);
        }
        specs.push_back(std::move(spec));
    }
    return specs;
}

std::vector<double> render(ShapeKind shape, const DomainSpec& spec, std::uint64_t sample_seed, int num_classes,
                           int label, int* spurious_out) {
    // Geometry draws come first so their distribution does not depend on the domain.
    Rng geo(mix_seed({sample_seed, 1}));
    const double radius = kBaseRadius * (1.0 + geo.uniform(-kJitter, kJitter));
    const double half = static_cast<double>(kImageSize) / 2.0;
    const double cx = half + geo.uniform(-kJitter, kJitter) * half;
    const double cy = half + geo.uniform(-kJitter, kJitter) * half;

    Rng style_rng(mix_seed({sample_seed, 2}));
    const Rgb bg = jitter(spec.palette.at(0), style_rng);
    const Rgb fg = jitter(spec.palette.at(1), style_rng);
    const Rgb fg2 = jitter(spec.palette.at(2 % spec.palette.size()), style_rng);
    const double stripe_phase = style_rng.uniform(0.0, 4.0);
    constexpr double kStripePeriod = 4.0;
    constexpr double kOutlineWidth = 2.5;
    constexpr double kSpeckle = 0.15;

    std::vector<double> image(kImageNumel);
    const std::size_t plane = kImageSize * kImageSize;
    for (std::size_t y = 0; y < kImageSize; ++y) {
        for (std::size_t x = 0; x < kImageSize; ++x) {
            int hits = 0;
            for (int sy = 0; sy < kSupersample; ++sy) {
                for (int sx = 0; sx < kSupersample; ++sx) {
                    const double px = static_cast<double>(x) + (sx + 0.5) / kSupersample - cx;
                    const double py = static_cast<double>(y) + (sy + 0.5) / kSupersample - cy;
                    bool in = inside(shape, px, py, radius);
                    if (in && spec.style == Style::outline_only) in = !inside(shape, px, py, radius - kOutlineWidth);
                    hits += in ? 1 : 0;
                }
            }
            const double alpha = static_cast<double>(hits) / (kSupersample * kSupersample);
            Rgb fill = fg;
            if (spec.style == Style::stripes) {
                const double u = static_cast<double>(x + y) + stripe_phase;
                fill = std::fmod(u, kStripePeriod) < kStripePeriod / 2.0 ? fg : fg2;
            }
            Rgb back = bg;
            if (spec.style == Style::speckle_noise) {
                const double nb = kSpeckle * style_rng.normal();
                const double nf = kSpeckle * style_rng.normal();
                for (int c = 0; c < 3; ++c) {
                    back[c] += nb;
                    fill[c] += nf;
                }
            }
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = alpha * fill[c] + (1.0 - alpha) * back[c];
                image[c * plane + y * kImageSize + x] = std::clamp(v, 0.0, 1.0);
            }
        }
    }

    int spurious = -1;
    if (spec.spurious_correlation) {
        Rng sp(mix_seed({sample_seed, 3}));
        if (sp.uniform() < *spec.spurious_correlation) {
            spurious = label;
        } else {
            const int other = static_cast<int>(sp.below(static_cast<std::uint64_t>(num_classes - 1)));
            spurious = other >= label ? other + 1 : other;
        }
        const Rgb& color = kSpuriousColors[static_cast<std::size_t>(spurious)];
        for (std::size_t y = kPatchLo; y < kPatchHi; ++y) {
            for (std::size_t x = kPatchLo; x < kPatchHi; ++x) {
                for (std::size_t c = 0; c < 3; ++c) image[c * plane + y * kImageSize + x] = color[c];
            }
        }
    }
    if (spurious_out) *spurious_out = spurious;
    for (auto& v : image) v = to_float_precision(v);
    return image;
}

std::vector<Sample> generate(const SynthConfig& config) {
    config.validate();
    const auto specs = config.domain_specs();
    std::vector<Sample> samples;
    samples.reserve(static_cast<std::size_t>(config.classes * config.domains * config.per_cell));
    std::uint64_t id = 0;
    for (int d = 0; d < config.domains; ++d) {
        for (int c = 0; c < config.classes; ++c) {
            for (int i = 0; i < config.per_cell; ++i, ++id) {
                Sample s;
                s.label = c;
                s.domain = d;
                s.id = id;
                s.image = render(static_cast<ShapeKind>(c), specs[static_cast<std::size_t>(d)],
                                 mix_seed({config.seed, id}), config.classes, c, &s.spurious);
                samples.push_back(std::move(s));
            }
        }
    }
    return samples;
}

SplitPlan make_splits(const std::vector<Sample>& samples, int unseen_domain, std::uint64_t seed) {
    const bool exists = std::any_of(samples.begin(), samples.end(), [&](const Sample& s) { return s.domain == unseen_domain; });
    if (!exists) throw ConfigError("unknown domain id " + std::to_string(unseen_domain));
    SplitPlan plan;
    plan.unseen_domain = unseen_domain;
    plan.seed = seed;
    std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].domain == unseen_domain) {
            plan.test.push_back(i);
        } else {
            cells[{samples[i].domain, samples[i].label}].push_back(i);
        }
    }
    for (auto& [cell, members] : cells) {
        std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
            const auto ka = mix_seed({seed, samples[a].id}), kb = mix_seed({seed, samples[b].id});
            return ka != kb ? ka < kb : samples[a].id < samples[b].id;
        });
        const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(members.size())));
        plan.train.insert(plan.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
        plan.val.insert(plan.val.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
    }
    auto by_id = [&](std::size_t a, std::size_t b) { return samples[a].id < samples[b].id; };
    std::sort(plan.train.begin(), plan.train.end(), by_id);
    std::sort(plan.val.begin(), plan.val.end(), by_id);
    std::sort(plan.test.begin(), plan.test.end(), by_id);
    return plan;
}

LabeledBatch gather(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw ConfigError("cannot gather an empty batch");
    std::vector<double> images;
    images.reserve(indices.size() * kImageNumel);
    LabeledBatch batch;
    for (auto i : indices) {
        const Sample& s = samples.at(i);
        images.insert(images.end(), s.image.begin(), s.image.end());
        batch.labels.push_back(s.label);
        batch.domains.push_back(s.domain);
    }
    batch.images = Tensor::from({indices.size(), kImageChannels, kImageSize, kImageSize}, std::move(images));
    return batch;
}

std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<Sample>& samples,
                                                    const std::vector<std::size_t>& pool, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch) {
    if (batch_size < 4 || batch_size % 2 != 0) {
        throw ConfigError("batch size must be even and at least 4, got " + std::to_string(batch_size));
    }
    if (batch_size > pool.size()) {
        throw ConfigError("batch size " + std::to_string(batch_size) + " exceeds split size " +
                          std::to_string(pool.size()));
    }
    Rng rng(mix_seed({seed, epoch, 0x62617463ull}));
    std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
    for (auto i : pool) cells[{samples.at(i).label, samples.at(i).domain}].push_back(i);

    std::vector<std::array<std::size_t, 2>> pairs;
    std::vector<std::size_t> singles;
    for (auto& [cell, members] : cells) {
        rng.shuffle(members);
        std::size_t k = 0;
        for (; k + 1 < members.size(); k += 2) pairs.push_back({members[k], members[k + 1]});
        if (k < members.size()) singles.push_back(members[k]);
    }
    rng.shuffle(pairs);
    rng.shuffle(singles);
    std::vector<std::size_t> order;
    order.reserve(pool.size());
    for (const auto& p : pairs) order.insert(order.end(), p.begin(), p.end());
    order.insert(order.end(), singles.begin(), singles.end());

    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start + batch_size <= order.size(); start += batch_size) {
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(start + batch_size));
    }

    auto domain_count = [&](const std::vector<std::size_t>& batch) {
        std::vector<int> seen;
        for (auto i : batch) {
            if (std::find(seen.begin(), seen.end(), samples[i].domain) == seen.end()) seen.push_back(samples[i].domain);
        }
        return seen.size();
    };
    for (std::size_t b = 0; b < batches.size(); ++b) {
        if (domain_count(batches[b]) >= 2) continue;
        const int own = samples[batches[b][0]].domain;
        bool fixed = false;
        for (std::size_t other = 0; other < batches.size() && !fixed; ++other) {
            if (other == b) continue;
            for (std::size_t slot = 0; slot + 1 < batch_size && !fixed; slot += 2) {
                auto& donor = batches[other];
                if (samples[donor[slot]].domain == own || samples[donor[slot + 1]].domain == own) continue;
                std::swap(donor[slot], batches[b][0]);
                std::swap(donor[slot + 1], batches[b][1]);
                if (domain_count(donor) >= 2) {
                    fixed = true;
                } else {
                    std::swap(donor[slot], batches[b][0]);
                    std::swap(donor[slot + 1], batches[b][1]);
                }
            }
        }
    }
    return batches;
}

BatchStream::BatchStream(const std::vector<Sample>& samples, std::vector<std::size_t> pool, std::size_t batch_size,
                         std::uint64_t seed)
    : samples_(&samples), pool_(std::move(pool)), batch_size_(batch_size), seed_(seed) {
    per_epoch_ = epoch_batches(samples, pool_, batch_size_, seed_, 0).size();
}

std::vector<std::size_t> BatchStream::indices_at(std::uint64_t step) {
    const std::uint64_t epoch = step / per_epoch_;
    if (epoch != cached_epoch_) {
        cached_ = epoch_batches(*samples_, pool_, batch_size_, seed_, epoch);
        cached_epoch_ = epoch;
    }
    return cached_.at(static_cast<std::size_t>(step % per_epoch_));
}

namespace {

void write_split(const std::filesystem::path& dir, const std::string& name, const std::vector<Sample>& samples,
                 const std::vector<std::size_t>& indices) {
    std::ofstream bin(dir / (name + ".bin"), std::ios::binary);
    std::ofstream manifest(dir / (name + ".manifest"));
    if (!bin || !manifest) throw std::runtime_error("cannot write split '" + name + "' in " + dir.string());
    std::uint64_t offset = 0;
    for (auto i : indices) {
        const Sample& s = samples.at(i);
        for (double v : s.image) {
            auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            bits = little_endian(bits);
            bin.write(reinterpret_cast<const char*>(&bits), sizeof bits);
        }
        manifest << offset << ' ' << s.label << ' ' << s.domain << '\n';
        offset += kImageNumel * sizeof(float);
    }
    if (!bin || !manifest) throw std::runtime_error("write failed for split '" + name + "' in " + dir.string());
}

std::vector<std::size_t> read_split(const std::filesystem::path& dir, const std::string& name,
                                    std::vector<Sample>& samples) {
    std::ifstream bin(dir / (name + ".bin"), std::ios::binary);
    std::ifstream manifest(dir / (name + ".manifest"));
    if (!bin || !manifest) throw std::runtime_error("missing split '" + name + "' in " + dir.string());
    std::vector<std::size_t> indices;
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::uint64_t offset = 0;
        Sample s;
        if (!(fields >> offset >> s.label >> s.domain)) {
            throw std::runtime_error("malformed manifest line in " + (dir / (name + ".manifest")).string() + ": " + line);
        }
        bin.seekg(static_cast<std::streamoff>(offset));
        s.image.resize(kImageNumel);
        for (auto& v : s.image) {
            std::uint32_t bits = 0;
            bin.read(reinterpret_cast<char*>(&bits), sizeof bits);
            bits = little_endian(bits);
            v = static_cast<double>(std::bit_cast<float>(bits));
        }
        if (!bin) throw std::runtime_error("truncated image data in " + (dir / (name + ".bin")).string());
        s.id = samples.size();
        indices.push_back(samples.size());
        samples.push_back(std::move(s));
    }
    return indices;
}

} // namespace

void export_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples, const SplitPlan& plan,
                    const std::vector<std::pair<std::string, std::string>>& info) {
    std::filesystem::create_directories(dir);
    write_split(dir, "train", samples, plan.train);
    write_split(dir, "val", samples, plan.val);
    write_split(dir, "test", samples, plan.test);
    std::ofstream cfg(dir / "dataset.cfg");
    if (!cfg) throw std::runtime_error("cannot write " + (dir / "dataset.cfg").string());
    cfg << "format=hcvp-dataset-1\n";
    cfg << "unseen_domain=" << plan.unseen_domain << "\nsplit_seed=" << plan.seed << '\n';
    for (const auto& [k, v] : info) cfg << k << '=' << v << '\n';
}

SplitDataset import_dataset(const std::filesystem::path& dir) {
    SplitDataset out;
    for (const auto& [k, v] : read_key_values(dir / "dataset.cfg")) {
        if (k == "unseen_domain") out.plan.unseen_domain = std::stoi(v);
        if (k == "split_seed") out.plan.seed = std::stoull(v);
    }
    out.plan.train = read_split(dir, "train", out.samples);
    out.plan.val = read_split(dir, "val", out.samples);
    out.plan.test = read_split(dir, "test", out.samples);
    return out;
}

std::vector<std::pair<std::string, std::string>> read_key_values(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot read " + file.string());
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("malformed line in " + file.string() + ": " + line);
        out.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return out;
}

} // namespace hcvp
