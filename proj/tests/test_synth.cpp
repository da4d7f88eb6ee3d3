#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "hcvp/synth.hpp"
#include "support.hpp"

using namespace hcvp;

namespace {

std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("hcvp_synth_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

std::set<std::uint64_t> ids_of(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx) {
    std::set<std::uint64_t> out;
    for (auto i : idx) out.insert(samples[i].id);
    return out;
}

} // namespace

TEST(Generate, CountsPerCell) {
    SynthConfig cfg;
    cfg.per_cell = 25;
    cfg.seed = 7;
    auto samples = generate(cfg);
    ASSERT_EQ(samples.size(), 400u);
    std::map<std::pair<int, int>, int> cells;
    for (const auto& s : samples) {
        ++cells[{s.label, s.domain}];
        ASSERT_EQ(s.image.size(), kImageNumel);
        for (double v : s.image) {
            ASSERT_GE(v, 0.0);
            ASSERT_LE(v, 1.0);
            ASSERT_EQ(static_cast<double>(static_cast<float>(v)), v);
        }
    }
    EXPECT_EQ(cells.size(), 16u);
    for (const auto& [cell, n] : cells) EXPECT_EQ(n, 25);
}

TEST(Generate, IsDeterministic) {
    auto cfg = hcvp::testing::small_synth(8);
    auto a = generate(cfg), b = generate(cfg);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].image, b[i].image);
        EXPECT_EQ(a[i].label, b[i].label);
        EXPECT_EQ(a[i].id, b[i].id);
    }
}

TEST(Generate, DomainsDifferInStyle) {
    auto samples = generate(hcvp::testing::small_synth(8));
    std::map<int, double> mean_red;
    std::map<int, int> count;
    for (const auto& s : samples) {
        double r = 0.0;
        for (std::size_t i = 0; i < kImageSize * kImageSize; ++i) r += s.image[i];
        mean_red[s.domain] += r;
        ++count[s.domain];
    }
    std::set<long> distinct;
    for (auto& [d, r] : mean_red) distinct.insert(std::lround(100.0 * r / count[d] / (kImageSize * kImageSize)));
    EXPECT_EQ(distinct.size(), 4u);
}

TEST(Generate, SpuriousPatchFollowsConfiguredAgreement) {
    auto cfg = hcvp::testing::small_synth(20);
    cfg.spurious_source = 1.0;
    cfg.spurious_unseen = 0.0;
    auto samples = generate(cfg);
    std::map<bool, std::pair<int, int>> agree; // unseen? -> (agree, total)
    for (const auto& s : samples) {
        ASSERT_GE(s.spurious, 0);
        auto& a = agree[s.domain == cfg.unseen_domain];
        a.first += s.spurious == s.label ? 1 : 0;
        ++a.second;
    }
    EXPECT_EQ(agree[false].first, agree[false].second);
    EXPECT_EQ(agree[true].first, 0);
}

TEST(Generate, NoPatchWithoutCorrelation) {
    for (const auto& s : generate(hcvp::testing::small_synth(8))) EXPECT_EQ(s.spurious, -1);
}

TEST(Generate, RejectsBadConfig) {
    SynthConfig cfg;
    cfg.classes = 5;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.per_cell = 0;
    EXPECT_THROW(generate(cfg), ConfigError);
    cfg = {};
    cfg.spurious_source = 1.5;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Splits, SourceOnlyTrainAndVal) {
    auto samples = generate(hcvp::testing::small_synth(10));
    auto plan = make_splits(samples, 3, 0);
    for (auto i : plan.train) EXPECT_NE(samples[i].domain, 3);
    for (auto i : plan.val) EXPECT_NE(samples[i].domain, 3);
    for (auto i : plan.test) EXPECT_EQ(samples[i].domain, 3);
    EXPECT_EQ(plan.test.size(), 40u);
    EXPECT_EQ(plan.train.size() + plan.val.size(), 120u);
}

TEST(Splits, EightyTwentyPerDomain) {
    SynthConfig cfg;
    cfg.per_cell = 25; // 100 per domain
    auto samples = generate(cfg);
    auto plan = make_splits(samples, 3, 0);
    std::map<int, int> train, val;
    for (auto i : plan.train) ++train[samples[i].domain];
    for (auto i : plan.val) ++val[samples[i].domain];
    for (int d = 0; d < 3; ++d) {
        EXPECT_EQ(train[d], 80);
        EXPECT_EQ(val[d], 20);
    }
}

TEST(Splits, MembershipIgnoresInputOrder) {
    auto samples = generate(hcvp::testing::small_synth(10));
    auto shuffled = samples;
    Rng rng(3);
    rng.shuffle(shuffled);
    auto a = make_splits(samples, 3, 11), b = make_splits(shuffled, 3, 11);
    EXPECT_EQ(ids_of(samples, a.train), ids_of(shuffled, b.train));
    EXPECT_EQ(ids_of(samples, a.val), ids_of(shuffled, b.val));
    EXPECT_EQ(ids_of(samples, a.test), ids_of(shuffled, b.test));
}

TEST(Splits, RejectsUnknownDomain) {
    auto samples = generate(hcvp::testing::small_synth(8));
    EXPECT_THROW(make_splits(samples, 4, 0), ConfigError);
}

TEST(Batches, EveryBatchSpansTwoDomains) {
    auto samples = generate(hcvp::testing::small_synth(10));
    auto plan = make_splits(samples, 3, 0);
    for (std::uint64_t epoch = 0; epoch < 3; ++epoch) {
        auto batches = epoch_batches(samples, plan.train, 8, 5, epoch);
        EXPECT_EQ(batches.size(), plan.train.size() / 8);
        for (const auto& batch : batches) {
            ASSERT_EQ(batch.size(), 8u);
            std::set<int> domains;
            for (auto i : batch) domains.insert(samples[i].domain);
            EXPECT_GE(domains.size(), 2u);
        }
    }
}

TEST(Batches, FixedSeedAndEpochRepeat) {
    auto samples = generate(hcvp::testing::small_synth(10));
    auto plan = make_splits(samples, 3, 0);
    EXPECT_EQ(epoch_batches(samples, plan.train, 8, 5, 2), epoch_batches(samples, plan.train, 8, 5, 2));
    EXPECT_NE(epoch_batches(samples, plan.train, 8, 5, 2), epoch_batches(samples, plan.train, 8, 5, 3));
}

TEST(Batches, SmallSplitGivesOneBatch) {
    auto samples = generate(hcvp::testing::small_synth(8));
    std::vector<std::size_t> pool{0, 1, 2, 3};
    auto batches = epoch_batches(samples, pool, 4, 0, 0);
    ASSERT_EQ(batches.size(), 1u);
    auto got = batches[0];
    std::sort(got.begin(), got.end());
    EXPECT_EQ(got, pool);
}

TEST(Batches, StreamIsRandomAccess) {
    auto samples = generate(hcvp::testing::small_synth(10));
    auto plan = make_splits(samples, 3, 0);
    BatchStream a(samples, plan.train, 8, 9), b(samples, plan.train, 8, 9);
    auto late = a.indices_at(40);
    for (std::uint64_t s = 0; s < 40; ++s) b.indices_at(s);
    EXPECT_EQ(b.indices_at(40), late);
    auto batch = a.at(3);
    EXPECT_EQ(batch.images.shape(), (Shape{8, 3, 32, 32}));
    EXPECT_EQ(batch.labels.size(), 8u);
}

TEST(Dataset, ExportImportRoundTrip) {
    auto samples = generate(hcvp::testing::small_synth(8));
    auto plan = make_splits(samples, 3, 0);
    auto dir = scratch("roundtrip");
    export_dataset(dir, samples, plan, {{"classes", "4"}, {"domains", "4"}});
    for (const char* f : {"train.bin", "val.bin", "test.bin", "train.manifest", "dataset.cfg"}) {
        EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    }
    auto loaded = import_dataset(dir);
    ASSERT_EQ(loaded.samples.size(), samples.size());
    EXPECT_EQ(loaded.plan.unseen_domain, 3);
    EXPECT_EQ(loaded.plan.train.size(), plan.train.size());
    EXPECT_EQ(loaded.plan.val.size(), plan.val.size());
    EXPECT_EQ(loaded.plan.test.size(), plan.test.size());
    for (std::size_t k = 0; k < plan.train.size(); ++k) {
        const auto& a = samples[plan.train[k]];
        const auto& b = loaded.samples[loaded.plan.train[k]];
        EXPECT_EQ(a.image, b.image);
        EXPECT_EQ(a.label, b.label);
        EXPECT_EQ(a.domain, b.domain);
    }
    auto kv = read_key_values(dir / "dataset.cfg");
    EXPECT_NE(std::find(kv.begin(), kv.end(), std::pair<std::string, std::string>{"classes", "4"}), kv.end());
    std::filesystem::remove_all(dir);
}
