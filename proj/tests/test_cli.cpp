#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "hcvp/checkpoint.hpp"
#include "hcvp/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& root() {
    static const fs::path r = [] {
        auto p = fs::temp_directory_path() / "hcvp_cli_test";
        fs::remove_all(p);
        fs::create_directories(p);
        std::ofstream(p / "tiny.ini") << "steps=4\nbatch-size=8\neval-every=2\npretrain-steps=3\n";
        return p;
    }();
    return r;
}

int run(const std::string& args, const std::string& log = "log.txt") {
    const std::string cmd = std::string(HCVP_CLI) + " " + args + " > " + (root() / log).string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json manifest(const std::string& dir) { return json::parse(slurp(root() / dir / "manifest.json")); }

std::string at(const std::string& rel) { return (root() / rel).string(); }

// Small dataset shared by the training tests.
const std::string& data() {
    static const std::string d = [] {
        EXPECT_EQ(run("gen --per-cell 8 --out " + at("data")), 0);
        return at("data");
    }();
    return d;
}

std::vector<std::string> lines_with(const std::string& text, const std::string& needle) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.find(needle) != std::string::npos) out.push_back(line);
    }
    return out;
}

} // namespace

TEST(Cli, GenWritesDatasetAndRefusesRerun) {
    ASSERT_EQ(run("gen --classes 4 --domains 4 --per-cell 25 --seed 7 --out " + at("gen400")), 0);
    EXPECT_EQ(hcvp::import_dataset(root() / "gen400").samples.size(), 400u);
    auto m = manifest("gen400");
    EXPECT_EQ(m.at("command"), "gen");
    EXPECT_EQ(m.at("artifacts").size(), 7u);
    EXPECT_EQ(run("gen --per-cell 25 --out " + at("gen400")), 2);
    EXPECT_EQ(run("gen --per-cell 25 --out " + at("gen400") + " --force"), 0);
}

TEST(Cli, SpuriousFlagRecordedVerbatim) {
    ASSERT_EQ(run("gen --per-cell 8 --spurious 0.9 --out " + at("corr")), 0);
    auto m = manifest("corr");
    auto argv = m.at("argv").get<std::vector<std::string>>();
    EXPECT_NE(std::find(argv.begin(), argv.end(), "0.9"), argv.end());
    EXPECT_EQ(m.at("config").at("spurious").get<double>(), 0.9);
    EXPECT_NEAR(m.at("config").at("spurious_unseen").get<double>(), 0.1, 1e-15);
}

TEST(Cli, ErmCheckpointHasNoPromptParameters) {
    ASSERT_EQ(run("train --method erm --unseen 3 --seed 0 --config " + at("tiny.ini") + " --data " + data() +
                  " --out " + at("erm")),
              0);
    auto m = manifest("erm");
    ASSERT_FALSE(m.at("parameters").empty());
    for (const auto& name : m.at("parameters")) {
        const auto n = name.get<std::string>();
        EXPECT_TRUE(n.starts_with("vit.") || n.starts_with("head.")) << n;
    }
    EXPECT_EQ(m.at("config").at("steps"), "4");
    EXPECT_EQ(m.at("config").at("use_pcl"), "false");
}

TEST(Cli, DefaultLossWeightsInManifest) {
    ASSERT_EQ(run("train --seed 0 --config " + at("tiny.ini") + " --data " + data() + " --out " + at("hcvp")), 0);
    auto cfg = manifest("hcvp").at("config");
    EXPECT_EQ(std::stod(cfg.at("lambda_pcl").get<std::string>()), 0.1);
    EXPECT_EQ(std::stod(cfg.at("lambda_cci").get<std::string>()), 1.0);
    for (const char* f : {"metrics.jsonl", "best.ckpt", "last.ckpt"}) {
        EXPECT_EQ(manifest("hcvp").at("artifacts").at(f), hcvp::file_hash(root() / "hcvp" / f));
    }
}

TEST(Cli, RerunReproducesMetricsAndCheckpoint) {
    const std::string base = "train --seed 2 --config " + at("tiny.ini") + " --data " + data() + " --out ";
    ASSERT_EQ(run(base + at("rep1"), "rep1.txt"), 0);
    ASSERT_EQ(run(base + at("rep2"), "rep2.txt"), 0);
    EXPECT_EQ(slurp(root() / "rep1" / "metrics.jsonl"), slurp(root() / "rep2" / "metrics.jsonl"));
    EXPECT_EQ(slurp(root() / "rep1.txt"), slurp(root() / "rep2.txt"));
    EXPECT_EQ(hcvp::file_hash(root() / "rep1" / "best.ckpt"), hcvp::file_hash(root() / "rep2" / "best.ckpt"));
}

TEST(Cli, CommandLineOverridesConfigFile) {
    ASSERT_EQ(run("train --method erm --steps 2 --eval-every 1 --config " + at("tiny.ini") + " --data " + data() +
                  " --out " + at("override")),
              0);
    EXPECT_EQ(manifest("override").at("config").at("steps"), "2");
    EXPECT_EQ(manifest("override").at("config").at("batch_size"), "8");
}

TEST(Cli, VanillaFlagsMatchAblationRow) {
    ASSERT_EQ(run("train --no-pcl --no-cci --seed 0 --config " + at("tiny.ini") + " --data " + data() + " --out " +
                  at("vanilla")),
              0);
    ASSERT_EQ(run("ablate --seeds 0,1,2 --config " + at("tiny.ini") + " --data " + data() + " --out " + at("ablate"),
                  "ablate.txt"),
              0);
    std::size_t runs = 0;
    for (const auto& e : fs::recursive_directory_iterator(root() / "ablate")) {
        if (e.path().filename() == "best.ckpt") ++runs;
    }
    EXPECT_EQ(runs, 12u);
    const auto out = slurp(root() / "ablate.txt");
    for (const char* row : {"full", "no_pcl", "no_cci", "vanilla"}) {
        EXPECT_FALSE(lines_with(out, row).empty()) << row;
    }
    auto a = lines_with(slurp(root() / "vanilla" / "metrics.jsonl"), "\"event\":\"eval\"");
    auto b = lines_with(slurp(root() / "ablate" / "data" / "vanilla" / "seed0" / "metrics.jsonl"), "\"event\":\"eval\"");
    ASSERT_FALSE(a.empty());
    EXPECT_EQ(a, b);
}

TEST(Cli, SweepRunsDefaultGrid) {
    ASSERT_EQ(run("sweep --axis pcl --config " + at("tiny.ini") + " --data " + data() + " --out " + at("sweep"),
                  "sweep.txt"),
              0);
    std::size_t runs = 0;
    for (const auto& e : fs::directory_iterator(root() / "sweep" / "pcl")) runs += fs::is_directory(e.path()) ? 1 : 0;
    EXPECT_EQ(runs, 5u);
    for (const char* p : {"pcl_0.001", "pcl_0.01", "pcl_0.1", "pcl_0.5", "pcl_1"}) {
        EXPECT_TRUE(fs::exists(root() / "sweep" / "pcl" / p / "metrics.jsonl")) << p;
    }
}

TEST(Cli, EvalEmitsRecordsAndEmbeddings) {
    ASSERT_EQ(run("train --seed 0 --config " + at("tiny.ini") + " --data " + data() + " --out " + at("for_eval")), 0);
    ASSERT_EQ(run("eval --data " + data() + " --checkpoint " + at("for_eval/best.ckpt") + " --embeddings " +
                      at("emb.csv") + " --split test",
                  "eval.txt"),
              0);
    const auto out = slurp(root() / "eval.txt");
    EXPECT_EQ(lines_with(out, "\"event\":\"unseen_accuracy\"").size(), 1u);
    EXPECT_EQ(lines_with(out, "\"event\":\"domain_distance\"").size(), 1u);
    EXPECT_EQ(lines_with(out, "\"event\":\"prompt_cluster\"").size(), 1u);
    const auto csv = slurp(root() / "emb.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 32);

    ASSERT_EQ(run("eval --data " + data() + " --checkpoint " + at("erm/best.ckpt"), "eval_erm.txt"), 0);
    EXPECT_TRUE(lines_with(slurp(root() / "eval_erm.txt"), "prompt_cluster").empty());
}

TEST(Cli, GradcheckPasses) {
    EXPECT_EQ(run("gradcheck --entries 2", "gradcheck.txt"), 0);
    EXPECT_FALSE(lines_with(slurp(root() / "gradcheck.txt"), "worst").empty());
}

TEST(Cli, ErrorsMapToExitCodes) {
    EXPECT_EQ(run("train --bogus"), 2);
    EXPECT_EQ(run("train --data " + at("missing") + " --out " + at("x")), 1);
    std::ofstream(root() / "bad.ini") << "no_such_key=1\n";
    EXPECT_EQ(run("train --config " + at("bad.ini") + " --data " + data() + " --out " + at("y")), 2);
    EXPECT_EQ(run("train --batch-size 7 --data " + data() + " --out " + at("z")), 2);
    EXPECT_EQ(run("train --unseen 2 --data " + data() + " --out " + at("w")), 2);
}
