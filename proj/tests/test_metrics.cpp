#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hcvp/checkpoint.hpp"
#include "hcvp/metrics.hpp"
#include "support.hpp"

using namespace hcvp;

namespace {

const std::vector<Sample>& samples() {
    static const auto s = generate(hcvp::testing::small_synth(8));
    return s;
}

FeatureSet make_features(std::size_t dim, std::vector<double> values, std::vector<int> domains,
                         std::vector<int> labels = {}) {
    FeatureSet f;
    f.dim = dim;
    f.values = std::move(values);
    f.domains = std::move(domains);
    f.labels = labels.empty() ? std::vector<int>(f.domains.size(), 0) : std::move(labels);
    return f;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Model hcvp_model(std::uint64_t seed) {
    Model m(ModelConfig{}, seed);
    m.hpgn().extractor().freeze();
    return m;
}

} // namespace

TEST(Accuracy, MemorizingHeadOnSingleSample) {
    const auto& s = samples();
    auto plan = make_splits(s, 3, 0);
    plan.test.resize(1);
    ModelConfig cfg;
    cfg.method = Method::erm;
    Model m(cfg, 0);
    auto& head = m.head().layer();
    std::fill(head.weight.mutable_data().begin(), head.weight.mutable_data().end(), 0.0);
    auto bias = head.bias.mutable_data();
    std::fill(bias.begin(), bias.end(), 0.0);
    bias[static_cast<std::size_t>(s[plan.test[0]].label)] = 1.0;
    EXPECT_EQ(unseen_accuracy(m, s, plan, 3), 1.0);
}

TEST(Accuracy, RandomGuessingIsNearChance) {
    Rng rng(1);
    std::vector<int> pred(4000), truth(4000);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        pred[i] = static_cast<int>(rng.below(4));
        truth[i] = static_cast<int>(rng.below(4));
    }
    const double ci = 3.0 * std::sqrt(0.25 * 0.75 / 4000.0);
    EXPECT_NEAR(accuracy(pred, truth), 0.25, ci);
}

TEST(Accuracy, InvariantUnderTestPermutation) {
    const auto& s = samples();
    auto plan = make_splits(s, 3, 0);
    Model m = hcvp_model(2);
    const double base = unseen_accuracy(m, s, plan, 3);
    Rng rng(3);
    rng.shuffle(plan.test);
    EXPECT_EQ(unseen_accuracy(m, s, plan, 3), base);
}

TEST(Accuracy, RejectsLengthMismatch) {
    EXPECT_THROW(accuracy({1, 2}, {1}), std::invalid_argument);
}

TEST(Leakage, SharedIndexIsFatal) {
    const auto& s = samples();
    auto plan = make_splits(s, 3, 0);
    EXPECT_NO_THROW(check_no_leakage(s, plan));
    plan.train.push_back(plan.test.front());
    EXPECT_THROW(check_no_leakage(s, plan), LeakageError);
}

TEST(Leakage, SourceSampleInTestIsFatal) {
    const auto& s = samples();
    auto plan = make_splits(s, 3, 0);
    plan.test.push_back(plan.val.back());
    Model m = hcvp_model(4);
    EXPECT_THROW(unseen_accuracy(m, s, plan, 3), LeakageError);
}

TEST(Leakage, DuplicateIdIsFatal) {
    auto s = samples();
    auto plan = make_splits(s, 3, 0);
    s[plan.test.front()].id = s[plan.train.front()].id;
    EXPECT_THROW(check_no_leakage(s, plan), LeakageError);
}

TEST(Accuracy, UnseenDomainMustMatchPlan) {
    const auto& s = samples();
    auto plan = make_splits(s, 3, 0);
    Model m = hcvp_model(5);
    EXPECT_THROW(unseen_accuracy(m, s, plan, 2), ContractError);
}

TEST(Distance, IdenticalFeaturesGiveZero) {
    auto f = make_features(3, {1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3}, {0, 0, 1, 2});
    auto r = inter_domain_distance(f);
    EXPECT_EQ(r.pairs, 3u);
    EXPECT_NEAR(r.mean_distance, 0.0, 1e-15);
}

TEST(Distance, OrthonormalCentroidsGiveRootTwo) {
    auto f = make_features(2, {1, 0, 1, 0, 0, 1, 0, 1}, {0, 0, 1, 1});
    auto r = inter_domain_distance(f);
    EXPECT_EQ(r.pairs, 1u);
    EXPECT_NEAR(r.mean_distance, std::sqrt(2.0), 1e-15);
}

TEST(Distance, FeaturesAreNormalizedBeforeCentroids) {
    auto f = make_features(2, {5, 0, 0.1, 0, 0, 3, 0, 7}, {0, 0, 1, 1});
    EXPECT_NEAR(inter_domain_distance(f).mean_distance, std::sqrt(2.0), 1e-15);
}

TEST(Distance, MatrixIsSymmetricWithZeroDiagonal) {
    Rng rng(6);
    std::vector<double> v(40 * 5);
    for (auto& x : v) x = rng.normal();
    std::vector<int> domains(40), labels(40);
    for (int i = 0; i < 40; ++i) {
        domains[static_cast<std::size_t>(i)] = i % 4;
        labels[static_cast<std::size_t>(i)] = (i / 4) % 2;
    }
    auto r = inter_domain_distance(make_features(5, v, domains, labels));
    ASSERT_EQ(r.distances.size(), 4u);
    EXPECT_EQ(r.pairs, 6u);
    double mean = 0.0;
    for (std::size_t a = 0; a < 4; ++a) {
        EXPECT_EQ(r.distances[a][a], 0.0);
        for (std::size_t b = 0; b < 4; ++b) EXPECT_EQ(r.distances[a][b], r.distances[b][a]);
        for (std::size_t b = a + 1; b < 4; ++b) mean += r.distances[a][b];
    }
    EXPECT_NEAR(r.mean_distance, mean / 6.0, 1e-15);
    EXPECT_GT(r.class_conditional_mean, 0.0);
    EXPECT_EQ(r.to_json().at("pairs"), 6);
}

TEST(Distance, NeedsTwoPopulatedDomains) {
    auto f = make_features(2, {1, 0, 0, 1}, {0, 0});
    EXPECT_THROW(inter_domain_distance(f), std::invalid_argument);
    auto g = make_features(2, {1, 0, 0, 1}, {0, 1});
    EXPECT_THROW(inter_domain_distance(g, {0, 1, 2}), std::invalid_argument);
}

TEST(Purity, OneHotPromptsArePerfect) {
    std::vector<double> v;
    std::vector<int> domains;
    for (int i = 0; i < 20; ++i) {
        for (int k = 0; k < 4; ++k) v.push_back(k == i % 4 ? 1.0 : 0.0);
        domains.push_back(i % 4);
    }
    auto f = make_features(4, v, domains);
    EXPECT_EQ(nn_purity(f, std::vector<std::int64_t>(domains.begin(), domains.end())), 1.0);
    EXPECT_EQ(prompt_cluster_score(f, f).domain_purity, 1.0);
}

TEST(Purity, RandomPromptsAreNearChance) {
    Rng rng(7);
    std::vector<double> v(400 * 8);
    for (auto& x : v) x = rng.normal();
    std::vector<std::int64_t> keys(400);
    for (std::size_t i = 0; i < 400; ++i) keys[i] = static_cast<std::int64_t>(i % 4);
    const double p = nn_purity(make_features(8, v, std::vector<int>(400, 0)), keys);
    EXPECT_NEAR(p, 0.25, 0.1);
}

TEST(Purity, ErmModelHasNoPrompts) {
    ModelConfig cfg;
    cfg.method = Method::erm;
    Model m(cfg, 0);
    EXPECT_THROW(prompt_cluster_score(m, samples(), {0, 1, 2}), ContractError);
}

TEST(Features, ShapesPerKind) {
    Model m = hcvp_model(8);
    std::vector<std::size_t> idx{0, 5, 9};
    for (auto kind : {FeatureKind::embedding, FeatureKind::domain_prompt, FeatureKind::task_prompt}) {
        auto f = extract_features(m, samples(), idx, kind);
        EXPECT_EQ(f.dim, 64u);
        EXPECT_EQ(f.size(), 3u);
        EXPECT_EQ(f.values.size(), 3u * 64u);
        EXPECT_EQ(f.domains[1], samples()[5].domain);
    }
    EXPECT_EQ(parse_feature_kind(to_string(FeatureKind::task_prompt)), FeatureKind::task_prompt);
}

TEST(Embeddings, CsvShapeRereadAndDeterminism) {
    Model m = hcvp_model(9);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < 12; ++i) idx.push_back(i * 7);
    auto f = extract_features(m, samples(), idx);
    const auto dir = std::filesystem::temp_directory_path();
    const auto a = dir / "hcvp_embed_a.csv", b = dir / "hcvp_embed_b.csv";
    export_embeddings(a, f);
    export_embeddings(b, extract_features(m, samples(), idx));
    EXPECT_EQ(slurp(a), slurp(b));

    std::ifstream in(a);
    std::string line;
    std::size_t rows = 0;
    std::getline(in, line);
    EXPECT_EQ(std::count(line.begin(), line.end(), ',') + 1, 66);
    EXPECT_TRUE(line.starts_with("f0,f1,"));
    EXPECT_TRUE(line.ends_with(",class,domain"));
    while (std::getline(in, line)) {
        EXPECT_EQ(std::count(line.begin(), line.end(), ',') + 1, 66);
        ++rows;
    }
    EXPECT_EQ(rows, 12u);

    auto back = read_embeddings(a);
    ASSERT_EQ(back.size(), f.size());
    EXPECT_EQ(back.labels, f.labels);
    EXPECT_EQ(back.domains, f.domains);
    char buf[64];
    for (std::size_t i = 0; i < f.values.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.9g", f.values[i]);
        EXPECT_EQ(back.values[i], std::strtod(buf, nullptr));
    }
    std::filesystem::remove(a);
    std::filesystem::remove(b);
}

TEST(Embeddings, UnwritablePathNamesPath) {
    FeatureSet f = make_features(1, {1.0}, {0});
    try {
        export_embeddings("/nonexistent-dir/x.csv", f);
        FAIL() << "expected an I/O error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("/nonexistent-dir/x.csv"), std::string::npos);
    }
}

TEST(Checkpoint, SaveLoadRoundTrip) {
    Checkpoint c;
    c.step = 17;
    c.best_step = 12;
    c.best_val_accuracy = 0.8125;
    c.config_text = "method=hcvp\n";
    c.config_hash = fnv1a_hex(c.config_text);
    c.tensors = {{"a", {2, 2}, {1.0, -0.0, 3.5e-300, 4.0}}, {"b", {1}, {std::nextafter(1.0, 2.0)}}};
    c.optimizer.step_count = 17;
    c.optimizer.first_moment = {{0.1, 0.2, 0.3, 0.4}, {0.5}};
    c.optimizer.second_moment = {{1, 2, 3, 4}, {5}};
    const auto path = std::filesystem::temp_directory_path() / "hcvp_ckpt_roundtrip.ckpt";
    c.save(path);
    auto d = Checkpoint::load(path);
    EXPECT_EQ(d.step, 17u);
    EXPECT_EQ(d.best_step, 12u);
    EXPECT_EQ(d.best_val_accuracy, 0.8125);
    EXPECT_EQ(d.config_hash, c.config_hash);
    ASSERT_EQ(d.tensors.size(), 2u);
    EXPECT_EQ(d.find("b")->values, c.tensors[1].values);
    EXPECT_EQ(d.find("a")->shape, (Shape{2, 2}));
    EXPECT_EQ(d.optimizer.second_moment, c.optimizer.second_moment);
    EXPECT_EQ(d.find("missing"), nullptr);
    std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsForeignFile) {
    const auto path = std::filesystem::temp_directory_path() / "hcvp_ckpt_foreign.ckpt";
    std::ofstream(path) << "not a checkpoint";
    EXPECT_THROW(Checkpoint::load(path), std::runtime_error);
    std::filesystem::remove(path);
}

TEST(Checkpoint, Fnv1aKnownValues) {
    EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
    EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}
