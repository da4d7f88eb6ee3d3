#include <gtest/gtest.h>

#include <cmath>

#include "hcvp/losses.hpp"
#include "hcvp/ops.hpp"
#include "hcvp/params.hpp"
#include "support.hpp"

using namespace hcvp;
using hcvp::testing::cross_entropy_oracle;
using hcvp::testing::info_nce_oracle;
using hcvp::testing::random_tensor;
using hcvp::testing::rows_of;

namespace {

std::vector<int> random_ids(Rng& rng, std::size_t n, int range) {
    std::vector<int> out(n);
    for (auto& v : out) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(range)));
    return out;
}

const Tensor kHandRows = Tensor::from({4, 2}, {1, 0, 1, 0, 0, 1, 0, 1});

} // namespace

TEST(PclDomain, IdenticalPromptsGiveLogThree) {
    auto loss = pcl_domain(Tensor::full({4, 6}, 0.3), {0, 0, 1, 1});
    EXPECT_FALSE(loss.degenerate);
    EXPECT_NEAR(loss.value.item(), std::log(3.0), 1e-12);
}

TEST(PclDomain, HandCaseMatchesOracle) {
    SimilarityConfig cfg{1.0, false};
    std::vector<int> domains{0, 0, 1, 1};
    auto loss = pcl_domain(kHandRows, domains, cfg);
    auto oracle = info_nce_oracle(rows_of(kHandRows), [&](auto i, auto j) { return domains[i] == domains[j]; }, 1.0, false);
    EXPECT_NEAR(loss.value.item(), oracle.value, 1e-9);
    // -log(e / (e + 2)) for every anchor
    EXPECT_NEAR(loss.value.item(), -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0)), 1e-12);
}

TEST(PclDomain, DistinctDomainsAreDegenerate) {
    Rng rng(1);
    auto loss = pcl_domain(random_tensor({4, 3}, rng, true), {0, 1, 2, 3});
    EXPECT_TRUE(loss.degenerate);
    EXPECT_EQ(loss.value.item(), 0.0);
    EXPECT_EQ(loss.anchors, 0u);
}

TEST(PclTask, IdenticalPromptsGiveLogBMinusOne) {
    auto loss = pcl_task(Tensor::full({6, 4}, -1.0), {0, 0, 1, 1, 2, 2}, {0, 0, 1, 1, 0, 0});
    EXPECT_NEAR(loss.value.item(), std::log(5.0), 1e-12);
}

TEST(PclTask, HandCaseMatchesOracle) {
    Rng rng(2);
    Tensor p = random_tensor({4, 3}, rng);
    std::vector<int> labels{0, 0, 1, 1}, domains{0, 0, 0, 0};
    auto loss = pcl_task(p, labels, domains);
    auto oracle = info_nce_oracle(
        rows_of(p), [&](auto i, auto j) { return labels[i] == labels[j] && domains[i] == domains[j]; }, 0.1, true);
    EXPECT_NEAR(loss.value.item(), oracle.value, 1e-9);
}

TEST(PclTask, DistinctLabelsAreDegenerate) {
    auto loss = pcl_task(Tensor::full({3, 2}, 1.0), {0, 1, 2}, {0, 0, 0});
    EXPECT_TRUE(loss.degenerate);
    EXPECT_EQ(loss.value.item(), 0.0);
}

TEST(PclTotal, BothHalvesDegenerateGivesZero) {
    auto loss = pcl_total(Tensor::full({3, 2}, 1.0), Tensor::full({3, 2}, 1.0), {0, 1, 2}, {0, 1, 2});
    EXPECT_TRUE(loss.degenerate);
    EXPECT_EQ(loss.value.item(), 0.0);
}

TEST(PclTotal, EqualHalvesGiveTheirValue) {
    auto loss = pcl_total(Tensor::full({4, 2}, 1.0), Tensor::full({4, 2}, 2.0), {0, 0, 1, 1}, {0, 0, 1, 1});
    EXPECT_NEAR(loss.value.item(), std::log(3.0), 1e-12);
}

TEST(PclTotal, IsMeanOfHalvesOnRandomBatches) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t b = 2 + rng.below(7);
        Tensor c = random_tensor({b, 5}, rng), p = random_tensor({b, 5}, rng);
        auto labels = random_ids(rng, b, 3), domains = random_ids(rng, b, 3);
        const double d = pcl_domain(c, domains).value.item();
        const double t = pcl_task(p, labels, domains).value.item();
        EXPECT_NEAR(pcl_total(c, p, labels, domains).value.item(), 0.5 * d + 0.5 * t, 1e-12);
    }
}

TEST(Cci, IdenticalEmbeddingsGiveLogBMinusOne) {
    EXPECT_NEAR(cci(Tensor::full({5, 3}, 0.7), {0, 0, 1, 1, 1}).value.item(), std::log(4.0), 1e-12);
}

TEST(Cci, HandCaseMatchesOracle) {
    SimilarityConfig cfg{0.5, true};
    std::vector<int> labels{0, 0, 1, 1};
    auto oracle = info_nce_oracle(rows_of(kHandRows), [&](auto i, auto j) { return labels[i] == labels[j]; }, 0.5, true);
    EXPECT_NEAR(cci(kHandRows, labels, cfg).value.item(), oracle.value, 1e-9);
}

TEST(Cci, PairOfIdenticalVectorsGivesZero) {
    auto loss = cci(Tensor::full({2, 4}, 1.5), {1, 1});
    EXPECT_FALSE(loss.degenerate);
    EXPECT_NEAR(loss.value.item(), 0.0, 1e-15);
}

TEST(Cci, PositivesIgnoreDomain) {
    Rng rng(4);
    Tensor x = random_tensor({6, 4}, rng);
    std::vector<int> labels{0, 1, 2, 0, 1, 2};
    auto oracle = info_nce_oracle(rows_of(x), [&](auto i, auto j) { return labels[i] == labels[j]; }, 0.1, true);
    EXPECT_NEAR(cci(x, labels).value.item(), oracle.value, 1e-9);
}

TEST(Contrastive, RandomBatchesMatchOracle) {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t b = 2 + rng.below(7);
        const std::size_t d = 1 + rng.below(6);
        SimilarityConfig cfg{0.05 + rng.uniform(), rng.below(2) == 0};
        Tensor x = random_tensor({b, d}, rng);
        auto labels = random_ids(rng, b, 3), domains = random_ids(rng, b, 3);
        auto rows = rows_of(x);

        auto dom = pcl_domain(x, domains, cfg);
        auto o1 = info_nce_oracle(rows, [&](auto i, auto j) { return domains[i] == domains[j]; }, cfg.temperature,
                                  cfg.normalize);
        EXPECT_NEAR(dom.value.item(), o1.value, 1e-9);
        EXPECT_EQ(dom.degenerate, o1.degenerate);

        auto task = pcl_task(x, labels, domains, cfg);
        auto o2 = info_nce_oracle(
            rows, [&](auto i, auto j) { return labels[i] == labels[j] && domains[i] == domains[j]; }, cfg.temperature,
            cfg.normalize);
        EXPECT_NEAR(task.value.item(), o2.value, 1e-9);
        EXPECT_EQ(task.degenerate, o2.degenerate);

        auto c = cci(x, labels, cfg);
        auto o3 = info_nce_oracle(rows, [&](auto i, auto j) { return labels[i] == labels[j]; }, cfg.temperature,
                                  cfg.normalize);
        EXPECT_NEAR(c.value.item(), o3.value, 1e-9);
    }
}

TEST(Contrastive, RejectsLabelCountMismatch) {
    EXPECT_THROW(cci(Tensor::zeros({3, 2}), {0, 1}), DimensionError);
    EXPECT_THROW(pcl_task(Tensor::zeros({3, 2}), {0, 1, 1}, {0, 0}), DimensionError);
}

TEST(ClsLoss, UniformLogitsGiveLogC) {
    EXPECT_NEAR(cls_loss(Tensor::zeros({3, 4}), {0, 1, 3}).item(), std::log(4.0), 1e-15);
}

TEST(ClsLoss, SaturatedCorrectLogitIsNearZero) {
    Tensor logits = Tensor::from({1, 4}, {0, 30, 0, 0});
    EXPECT_LT(cls_loss(logits, {1}).item(), 1e-9);
}

TEST(ClsLoss, RandomLogitsMatchOracle) {
    Rng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t b = 1 + rng.below(8), c = 2 + rng.below(5);
        Tensor logits = random_tensor({b, c}, rng, false, 3.0);
        auto labels = random_ids(rng, b, static_cast<int>(c));
        EXPECT_NEAR(cls_loss(logits, labels).item(), cross_entropy_oracle(rows_of(logits), labels), 1e-12);
    }
}

TEST(ClsLoss, RejectsOutOfRangeLabel) {
    EXPECT_THROW(cls_loss(Tensor::zeros({2, 3}), {0, 3}), std::exception);
}

TEST(TotalLoss, ZeroWeightsGiveClassification) {
    LossParts parts{Tensor::scalar(1.25), Tensor::scalar(7.0), Tensor::scalar(9.0)};
    EXPECT_EQ(total_loss(parts, {0.0, 0.0}).item(), 1.25);
}

TEST(TotalLoss, DefaultWeights) {
    LossParts parts{Tensor::scalar(1.0), Tensor::scalar(2.0), Tensor::scalar(3.0)};
    EXPECT_NEAR(total_loss(parts, LossWeights{}).item(), 4.2, 1e-15);
}

TEST(TotalLoss, AbsentPartsContributeNothing) {
    LossParts parts{Tensor::scalar(0.5), std::nullopt, Tensor::scalar(2.0)};
    EXPECT_NEAR(total_loss(parts, {0.1, 1.0}).item(), 2.5, 1e-15);
}

TEST(TotalLoss, NamesNonFiniteComponent) {
    LossParts parts{Tensor::scalar(1.0), Tensor::scalar(std::nan("")), Tensor::scalar(1.0)};
    try {
        total_loss(parts, {0.1, 1.0});
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("pcl"), std::string::npos);
    }
}

TEST(TotalLoss, GradientIsWeightedSumOfComponentGradients) {
    Rng rng(7);
    const std::size_t b = 6, d = 5;
    Tensor c = random_tensor({b, d}, rng, true), p = random_tensor({b, d}, rng, true);
    Tensor x = random_tensor({b, d}, rng, true), w = random_tensor({d, 3}, rng, true);
    std::vector<int> labels{0, 0, 1, 1, 2, 2}, domains{0, 1, 0, 1, 0, 1};
    const LossWeights weights{0.1, 1.0};
    ParamList params{{"c", c}, {"p", p}, {"x", x}, {"w", w}};

    auto grads_of = [&](const std::function<Tensor()>& f) {
        for (auto& t : params) t.tensor.zero_grad();
        f().backward();
        std::vector<std::vector<double>> g;
        for (auto& t : params) {
            g.push_back(t.tensor.has_grad() ? std::vector<double>(t.tensor.grad().begin(), t.tensor.grad().end())
                                            : std::vector<double>(t.tensor.numel(), 0.0));
        }
        return g;
    };
    auto cls_part = [&] { return cls_loss(matmul(x, w), labels); };
    auto pcl_part = [&] { return pcl_total(c, p, labels, domains).value; };
    auto cci_part = [&] { return cci(x, labels).value; };

    auto total = grads_of([&] { return total_loss({cls_part(), pcl_part(), cci_part()}, weights); });
    auto g_cls = grads_of(cls_part), g_pcl = grads_of(pcl_part), g_cci = grads_of(cci_part);
    for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t i = 0; i < total[t].size(); ++i) {
            const double expected = g_cls[t][i] + weights.pcl * g_pcl[t][i] + weights.cci * g_cci[t][i];
            EXPECT_NEAR(total[t][i], expected, 1e-9) << params[t].name << "[" << i << "]";
        }
    }
}

TEST(LossCounters, CountEvaluations) {
    auto before = loss_counters();
    cci(Tensor::full({2, 2}, 1.0), {0, 0});
    pcl_total(Tensor::full({2, 2}, 1.0), Tensor::full({2, 2}, 1.0), {0, 0}, {0, 0});
    EXPECT_EQ(loss_counters().cci, before.cci + 1);
    EXPECT_GT(loss_counters().pcl, before.pcl);
}
