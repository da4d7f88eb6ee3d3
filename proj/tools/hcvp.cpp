#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hcvp/experiments.hpp"
#include "hcvp/gradcheck.hpp"
#include "hcvp/metrics.hpp"
#include "hcvp/synth.hpp"
#include "hcvp/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hcvp;

namespace {

enum ExitCode { kOk = 0, kIo = 1, kUsage = 2, kNumeric = 3 };

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Exactly one manifest per output directory, written before any computation
// and rewritten as artifacts appear.
class Manifest {
public:
    Manifest(fs::path dir, const std::string& command, const std::vector<std::string>& argv)
        : dir_(std::move(dir)) {
        doc_["command"] = command;
        doc_["argv"] = argv;
        doc_["output_dir"] = dir_.string();
        doc_["artifacts"] = json::object();
    }
    json& doc() { return doc_; }
    void add_artifact(const fs::path& file) {
        doc_["artifacts"][fs::relative(file, dir_).generic_string()] = file_hash(file);
        write();
    }
    void write() const {
        std::ofstream out(dir_ / "manifest.json");
        if (!out) throw std::runtime_error("cannot write " + (dir_ / "manifest.json").string());
        out << doc_.dump(2) << '\n';
    }

private:
    fs::path dir_;
    json doc_;
};

void prepare_out(const fs::path& dir, bool force) {
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
        if (!fs::is_empty(dir)) {
            if (!force) throw UsageError(dir.string() + " is not empty (use --force to overwrite)");
            for (const auto& entry : fs::directory_iterator(dir)) fs::remove_all(entry.path());
        }
    }
    fs::create_directories(dir);
}

json config_json(const std::string& canonical) {
    json out = json::object();
    std::istringstream in(canonical);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

void emit(const json& record) { std::cout << record.dump() << '\n' << std::flush; }

struct LoadedData {
    DatasetVariant variant;
    int classes = 0;
};

LoadedData load_data(const fs::path& dir) {
    LoadedData d;
    SplitDataset data = import_dataset(dir);
    d.variant.name = dir.filename().string();
    if (d.variant.name.empty()) d.variant.name = dir.parent_path().filename().string();
    d.variant.samples = std::move(data.samples);
    d.variant.plan = std::move(data.plan);
    for (const auto& [k, v] : read_key_values(dir / "dataset.cfg")) {
        if (k == "classes") d.classes = std::stoi(v);
    }
    if (d.classes <= 0) {
        for (const auto& s : d.variant.samples) d.classes = std::max(d.classes, s.label + 1);
    }
    return d;
}

struct TrainFlags {
    std::string method = "hcvp";
    int unseen = 3;
    std::size_t steps = 2000;
    std::size_t batch_size = 32;
    double lr = 3e-4;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    double lambda_pcl = 0.1;
    double lambda_cci = 1.0;
    bool no_pcl = false;
    bool no_cci = false;
    bool no_normalize_sim = false;
    double temperature = 0.1;
    std::size_t eval_every = 250;
    std::size_t pretrain_steps = 300;
    double pretrain_lr = 1e-2;

    TrainConfig to_config(int classes) const {
        TrainConfig c;
        c.method = parse_method(method);
        c.unseen_domain = unseen;
        c.steps = steps;
        c.batch_size = batch_size;
        c.optimizer.learning_rate = lr;
        c.optimizer.weight_decay = weight_decay;
        c.seed = seed;
        c.weights.pcl = lambda_pcl;
        c.weights.cci = lambda_cci;
        c.use_pcl = !no_pcl;
        c.use_cci = !no_cci;
        c.similarity.normalize = !no_normalize_sim;
        c.similarity.temperature = temperature;
        c.eval_every = eval_every;
        c.pretrain_steps = pretrain_steps;
        c.pretrain_optimizer.learning_rate = pretrain_lr;
        c.vit.num_classes = static_cast<std::size_t>(classes);
        return c.resolved();
    }
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool with_method, bool with_seed) {
    if (with_method) {
        cmd->add_option("--method", f.method, "hcvp or erm")->check(CLI::IsMember({"hcvp", "erm"}))->capture_default_str();
    }
    cmd->add_option("--unseen", f.unseen, "held-out domain id (must match the dataset)")->capture_default_str();
    cmd->add_option("--steps", f.steps, "optimizer steps")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--batch-size", f.batch_size, "even, at least 4")->capture_default_str();
    cmd->add_option("--lr", f.lr, "AdamW learning rate")->capture_default_str();
    cmd->add_option("--weight-decay", f.weight_decay, "AdamW decoupled weight decay")->capture_default_str();
    if (with_seed) cmd->add_option("--seed", f.seed, "run seed")->capture_default_str();
    cmd->add_option("--lambda-pcl", f.lambda_pcl, "prompt contrastive weight")->capture_default_str();
    cmd->add_option("--lambda-cci", f.lambda_cci, "class-conditioned contrastive weight")->capture_default_str();
    cmd->add_flag("--no-pcl", f.no_pcl, "disable the prompt contrastive loss");
    cmd->add_flag("--no-cci", f.no_cci, "disable the class-conditioned contrastive loss");
    cmd->add_flag("--no-normalize-sim", f.no_normalize_sim, "dot-product instead of cosine similarity");
    cmd->add_option("--temperature", f.temperature, "contrastive temperature")->capture_default_str();
    cmd->add_option("--eval-every", f.eval_every, "validation interval in steps")->capture_default_str();
    cmd->add_option("--pretrain-steps", f.pretrain_steps, "extractor pretraining steps")->capture_default_str();
    cmd->add_option("--pretrain-lr", f.pretrain_lr, "extractor pretraining learning rate")->capture_default_str();
}

void check_unseen(const LoadedData& d, int unseen) {
    if (d.variant.plan.unseen_domain != unseen) {
        throw UsageError("dataset holds out domain " + std::to_string(d.variant.plan.unseen_domain) +
                         " but --unseen is " + std::to_string(unseen));
    }
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty()) continue;
        try {
            out.push_back(std::stoull(item));
        } catch (const std::exception&) {
            throw UsageError("bad seed '" + item + "' in --seeds");
        }
    }
    if (out.empty()) throw UsageError("--seeds is empty");
    return out;
}

// gen ------------------------------------------------------------------------

struct GenFlags {
    int classes = 4;
    int domains = 4;
    int per_cell = 25;
    std::uint64_t seed = 7;
    std::optional<double> spurious;
    std::optional<double> spurious_unseen;
    int unseen = 3;
    std::uint64_t split_seed = 0;
    std::string out;
    bool force = false;
};

int run_gen(const GenFlags& f, const std::vector<std::string>& argv) {
    SynthConfig sc;
    sc.classes = f.classes;
    sc.domains = f.domains;
    sc.per_cell = f.per_cell;
    sc.seed = f.seed;
    sc.unseen_domain = f.unseen;
    if (f.spurious) {
        sc.spurious_source = *f.spurious;
        sc.spurious_unseen = f.spurious_unseen.value_or(1.0 - *f.spurious);
    } else if (f.spurious_unseen) {
        throw UsageError("--spurious-unseen requires --spurious");
    }
    try {
        sc.validate();
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    const fs::path out(f.out);
    prepare_out(out, f.force);
    Manifest manifest(out, "gen", argv);
    json cfg = {{"classes", sc.classes}, {"domains", sc.domains}, {"per_cell", sc.per_cell},
                {"seed", sc.seed},       {"unseen_domain", f.unseen}, {"split_seed", f.split_seed}};
    cfg["spurious"] = sc.spurious_source ? json(*sc.spurious_source) : json(nullptr);
    cfg["spurious_unseen"] = sc.spurious_unseen ? json(*sc.spurious_unseen) : json(nullptr);
    manifest.doc()["config"] = cfg;
    manifest.doc()["seed"] = sc.seed;
    manifest.write();

    auto samples = generate(sc);
    auto plan = make_splits(samples, f.unseen, f.split_seed);
    std::vector<std::pair<std::string, std::string>> info{{"classes", std::to_string(sc.classes)},
                                                          {"domains", std::to_string(sc.domains)},
                                                          {"per_cell", std::to_string(sc.per_cell)},
                                                          {"seed", std::to_string(sc.seed)}};
    if (sc.spurious_source) {
        info.emplace_back("spurious", json(*sc.spurious_source).dump());
        info.emplace_back("spurious_unseen", json(*sc.spurious_unseen).dump());
    }
    export_dataset(out, samples, plan, info);
    for (const char* name : {"dataset.cfg", "train.bin", "train.manifest", "val.bin", "val.manifest", "test.bin",
                             "test.manifest"}) {
        manifest.add_artifact(out / name);
    }

    std::map<std::pair<int, int>, std::array<std::size_t, 3>> cells;
    const std::vector<std::size_t>* splits[] = {&plan.train, &plan.val, &plan.test};
    for (std::size_t k = 0; k < 3; ++k) {
        for (auto i : *splits[k]) ++cells[{samples[i].domain, samples[i].label}][k];
    }
    std::printf("%6s %6s %6s %6s %6s\n", "domain", "class", "train", "val", "test");
    for (const auto& [cell, n] : cells) {
        std::printf("%6d %6d %6zu %6zu %6zu\n", cell.first, cell.second, n[0], n[1], n[2]);
    }
    std::printf("total %zu samples (train %zu, val %zu, test %zu)\n", samples.size(), plan.train.size(),
                plan.val.size(), plan.test.size());
    return kOk;
}

// train ----------------------------------------------------------------------

int run_train(const TrainFlags& f, const std::string& data_dir, const std::string& out_dir, bool force,
              const std::vector<std::string>& argv) {
    LoadedData data = load_data(data_dir);
    check_unseen(data, f.unseen);
    TrainConfig config = f.to_config(data.classes);
    const fs::path out(out_dir);
    prepare_out(out, force);
    Manifest manifest(out, "train", argv);
    manifest.doc()["config"] = config_json(config.canonical());
    manifest.doc()["config_hash"] = config.hash();
    manifest.doc()["seed"] = config.seed;
    manifest.doc()["data"] = fs::absolute(data_dir).string();
    manifest.write();

    RunSpec spec;
    spec.label = to_string(config.method);
    spec.config = config;
    spec.dataset = &data.variant;
    spec.out_dir = out;
    RunOutcome outcome = execute(spec);
    for (const auto& r : outcome.records) emit(r);
    json names = json::array();
    for (const auto& t : Checkpoint::load(out / "best.ckpt").tensors) names.push_back(t.name);
    manifest.doc()["parameters"] = names;
    for (const char* name : {"metrics.jsonl", "best.ckpt", "last.ckpt"}) manifest.add_artifact(out / name);
    return kOk;
}

// eval -----------------------------------------------------------------------

struct EvalFlags {
    std::string data;
    std::string checkpoint;
    std::string out;
    std::string embeddings;
    std::string features = "embedding";
    std::string split = "val";
    bool force = false;
};

int run_eval(const EvalFlags& f, const std::vector<std::string>& argv) {
    const FeatureKind kind = parse_feature_kind(f.features);
    if (f.split != "train" && f.split != "val" && f.split != "test") throw UsageError("--split must be train, val or test");
    Checkpoint ckpt = Checkpoint::load(f.checkpoint);
    TrainConfig config = parse_canonical(ckpt.config_text);
    LoadedData data = load_data(f.data);
    check_unseen(data, config.unseen_domain);

    std::optional<Manifest> manifest;
    if (!f.out.empty()) {
        prepare_out(f.out, f.force);
        manifest.emplace(f.out, "eval", argv);
        manifest->doc()["config"] = config_json(ckpt.config_text);
        manifest->doc()["config_hash"] = ckpt.config_hash;
        manifest->doc()["seed"] = config.seed;
        manifest->doc()["checkpoint"] = fs::absolute(f.checkpoint).string();
        manifest->doc()["checkpoint_hash"] = file_hash(f.checkpoint);
        manifest->write();
    }

    Model model = load_model(ckpt, config);
    const auto& plan = data.variant.plan;
    const auto& samples = data.variant.samples;
    std::vector<json> records;
    auto tag = [&](json r) {
        r["method"] = to_string(config.method);
        r["seed"] = config.seed;
        r["config_hash"] = ckpt.config_hash;
        r["step"] = ckpt.best_step;
        records.push_back(r);
        emit(r);
    };

    const double unseen = unseen_accuracy(model, samples, plan, config.unseen_domain);
    tag({{"event", "unseen_accuracy"}, {"split", "test"}, {"domain", config.unseen_domain}, {"accuracy", unseen}});

    DomainDistanceReport dist = inter_domain_distance(extract_features(model, samples, plan.val));
    dist.method = to_string(config.method);
    dist.seed = config.seed;
    json dj = dist.to_json();
    dj["split"] = "val";
    tag(dj);

    std::optional<PromptClusterScore> purity;
    if (model.has_prompts()) {
        purity = prompt_cluster_score(model, samples, plan.val);
        json pj = purity->to_json();
        pj["split"] = "val";
        tag(pj);
    }

    if (!f.embeddings.empty()) {
        const auto& indices = f.split == "train" ? plan.train : f.split == "val" ? plan.val : plan.test;
        export_embeddings(f.embeddings, extract_features(model, samples, indices, kind));
    }

    if (manifest) {
        std::ofstream out(fs::path(f.out) / "eval.jsonl");
        if (!out) throw std::runtime_error("cannot write " + (fs::path(f.out) / "eval.jsonl").string());
        for (const auto& r : records) out << r.dump() << '\n';
        out.close();
        manifest->add_artifact(fs::path(f.out) / "eval.jsonl");
        if (!f.embeddings.empty() && fs::absolute(f.embeddings).parent_path() == fs::absolute(f.out)) {
            manifest->add_artifact(f.embeddings);
        }
    }

    std::printf("%-28s %10s\n", "metric", "value");
    std::printf("%-28s %10.4f\n", "unseen_accuracy", unseen);
    std::printf("%-28s %10.4f\n", "inter_domain_distance", dist.mean_distance);
    std::printf("%-28s %10.4f\n", "class_conditional_distance", dist.class_conditional_mean);
    if (purity) {
        std::printf("%-28s %10.4f\n", "domain_prompt_purity", purity->domain_purity);
        std::printf("%-28s %10.4f\n", "task_prompt_purity", purity->task_purity);
    }
    return kOk;
}

// ablate / sweep -------------------------------------------------------------

int run_ablate(const TrainFlags& f, const std::vector<std::string>& data_dirs, const std::string& seeds_text,
               std::size_t jobs, const std::string& out_dir, bool force, const std::vector<std::string>& argv) {
    const auto seeds = parse_seeds(seeds_text);
    std::vector<DatasetVariant> datasets;
    int classes = 0;
    for (const auto& dir : data_dirs) {
        LoadedData d = load_data(dir);
        check_unseen(d, f.unseen);
        if (classes != 0 && d.classes != classes) throw UsageError("datasets disagree on the class count");
        classes = d.classes;
        for (const auto& existing : datasets) {
            if (existing.name == d.variant.name) throw UsageError("two datasets share the name " + d.variant.name);
        }
        datasets.push_back(std::move(d.variant));
    }
    TrainFlags flags = f;
    flags.method = "hcvp";
    TrainConfig base = flags.to_config(classes);

    const fs::path out(out_dir);
    prepare_out(out, force);
    Manifest manifest(out, "ablate", argv);
    manifest.doc()["config"] = config_json(base.canonical());
    manifest.doc()["seeds"] = seeds;
    manifest.doc()["datasets"] = data_dirs;
    manifest.write();

    AblationTable table = ablate(base, datasets, seeds, jobs, out);
    for (const auto& run : table.runs) emit(run.to_json());
    emit(table.to_json());
    std::cout << table.to_text() << std::flush;
    for (const auto& d : datasets) {
        for (const auto& v : ablation_variants()) {
            for (auto seed : seeds) {
                const fs::path dir = out / d.name / v.name / ("seed" + std::to_string(seed));
                for (const char* name : {"metrics.jsonl", "best.ckpt"}) manifest.add_artifact(dir / name);
            }
        }
    }
    return kOk;
}

int run_sweep(const TrainFlags& f, const std::string& data_dir, const std::string& axis_text,
              const std::vector<double>& grid_flag, std::size_t jobs, const std::string& out_dir, bool force,
              const std::vector<std::string>& argv) {
    LoadedData data = load_data(data_dir);
    check_unseen(data, f.unseen);
    TrainFlags flags = f;
    flags.method = "hcvp";
    TrainConfig base = flags.to_config(data.classes);
    std::vector<SweepAxis> axes;
    if (axis_text == "both") {
        axes = {SweepAxis::pcl, SweepAxis::cci};
    } else {
        axes = {parse_sweep_axis(axis_text)};
    }
    if (!grid_flag.empty() && axes.size() != 1) throw UsageError("--grid needs a single --axis");

    const fs::path out(out_dir);
    prepare_out(out, force);
    Manifest manifest(out, "sweep", argv);
    manifest.doc()["config"] = config_json(base.canonical());
    manifest.doc()["seed"] = base.seed;
    manifest.doc()["axis"] = axis_text;
    manifest.write();

    std::vector<SweepPoint> all;
    for (auto axis : axes) {
        const auto grid = grid_flag.empty() ? default_grid(axis) : grid_flag;
        auto points = sweep(base, data.variant, axis, grid, jobs, out / to_string(axis));
        for (const auto& p : points) {
            json r = p.outcome.to_json();
            r["event"] = "sweep_point";
            r["axis"] = to_string(axis);
            r["val_accuracy"] = p.outcome.best_val_accuracy;
            emit(r);
            manifest.add_artifact(out / to_string(axis) / p.outcome.label / "metrics.jsonl");
        }
        all.insert(all.end(), points.begin(), points.end());
    }
    std::cout << sweep_table(all) << std::flush;
    return kOk;
}

// gradcheck ------------------------------------------------------------------

int run_gradcheck(std::uint64_t seed, double tolerance, std::size_t entries) {
    double worst = 0.0;
    std::string worst_name;
    std::printf("%-24s %12s %8s\n", "primitive", "max_rel_err", "status");
    auto line = [&](const std::string& name, const GradcheckReport& r) {
        const double w = r.worst();
        std::printf("%-24s %12.3e %8s\n", name.c_str(), w, w < tolerance ? "ok" : "FAIL");
        if (w >= worst) {
            worst = w;
            worst_name = name;
        }
    };
    for (const auto& check : check_primitives(seed)) line(check.primitive, check.report);
    line("hcvp_total_loss", check_model_loss(seed, entries));
    std::printf("worst %.3e (%s), tolerance %.1e\n", worst, worst_name.c_str(), tolerance);
    return worst < tolerance ? kOk : kNumeric;
}

// Fills options not given on the command line from a key=value file.
// Keys are long option names without the leading dashes.
void apply_config(CLI::App* cmd, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = CLI::detail::trim_copy(line);
        if (line.empty() || line.front() == '[') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        std::string key = CLI::detail::trim_copy(line.substr(0, eq));
        std::string value = CLI::detail::trim_copy(line.substr(eq + 1));
        std::replace(key.begin(), key.end(), '_', '-');
        CLI::Option* opt = cmd->get_option_no_throw("--" + key);
        if (opt == nullptr || key == "config") {
            throw UsageError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
        if (opt->count() > 0) continue;
        try {
            opt->add_result(value);
            opt->run_callback();
        } catch (const CLI::Error& e) {
            throw UsageError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

} // namespace

int main(int argc, char** argv) {
    tune_allocator();
    std::vector<std::string> args(argv, argv + argc);

    CLI::App app{"Hierarchical contrastive visual prompts for domain generalization"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    GenFlags gen;
    auto* gen_cmd = app.add_subcommand("gen", "generate the synthetic shapes dataset");
    gen_cmd->add_option("--config", "key=value defaults file (command-line flags win)");
    gen_cmd->add_option("--classes", gen.classes, "shape classes (at most 4)")->capture_default_str();
    gen_cmd->add_option("--domains", gen.domains, "style domains (3 to 8)")->capture_default_str();
    gen_cmd->add_option("--per-cell", gen.per_cell, "samples per (class, domain) cell")->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed, "generation seed")->capture_default_str();
    gen_cmd->add_option("--spurious", gen.spurious, "corner-patch label agreement in source domains");
    gen_cmd->add_option("--spurious-unseen", gen.spurious_unseen, "agreement in the unseen domain (default 1 - spurious)");
    gen_cmd->add_option("--unseen", gen.unseen, "held-out domain")->capture_default_str();
    gen_cmd->add_option("--split-seed", gen.split_seed, "train/val split seed")->capture_default_str();
    gen_cmd->add_option("--out", gen.out, "output directory")->required();
    gen_cmd->add_flag("--force", gen.force, "overwrite a non-empty output directory");

    TrainFlags train;
    std::string train_data, train_out;
    bool train_force = false;
    auto* train_cmd = app.add_subcommand("train", "pretrain the extractor (hcvp) and train one model");
    train_cmd->add_option("--config", "key=value defaults file (command-line flags win)");
    add_train_flags(train_cmd, train, true, true);
    train_cmd->add_option("--data", train_data, "dataset directory from gen")->required();
    train_cmd->add_option("--out", train_out, "output directory")->required();
    train_cmd->add_flag("--force", train_force, "overwrite a non-empty output directory");

    EvalFlags eval;
    auto* eval_cmd = app.add_subcommand("eval", "unseen accuracy, domain distance, prompt purity, embeddings");
    eval_cmd->add_option("--config", "key=value defaults file (command-line flags win)");
    eval_cmd->add_option("--data", eval.data, "dataset directory")->required();
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--out", eval.out, "optional output directory for records");
    eval_cmd->add_option("--embeddings", eval.embeddings, "write a feature CSV to this path");
    eval_cmd->add_option("--features", eval.features, "embedding, domain_prompt or task_prompt")->capture_default_str();
    eval_cmd->add_option("--split", eval.split, "split for --embeddings")->capture_default_str();
    eval_cmd->add_flag("--force", eval.force, "overwrite a non-empty output directory");

    TrainFlags ablate_flags;
    std::vector<std::string> ablate_data;
    std::string ablate_seeds = "0,1,2", ablate_out;
    std::size_t ablate_jobs = 1;
    bool ablate_force = false;
    auto* ablate_cmd = app.add_subcommand("ablate", "full / no_pcl / no_cci / vanilla over seeds and datasets");
    ablate_cmd->add_option("--config", "key=value defaults file (command-line flags win)");
    add_train_flags(ablate_cmd, ablate_flags, false, false);
    ablate_cmd->add_option("--data", ablate_data, "dataset directories (one table column each)")->required();
    ablate_cmd->add_option("--seeds", ablate_seeds, "comma-separated seeds")->capture_default_str();
    ablate_cmd->add_option("--jobs", ablate_jobs, "parallel runs")->check(CLI::PositiveNumber)->capture_default_str();
    ablate_cmd->add_option("--out", ablate_out, "output directory")->required();
    ablate_cmd->add_flag("--force", ablate_force, "overwrite a non-empty output directory");

    TrainFlags sweep_flags;
    sweep_flags.steps = 500;
    std::string sweep_data, sweep_axis = "pcl", sweep_out;
    std::vector<double> sweep_grid;
    std::size_t sweep_jobs = 1;
    bool sweep_force = false;
    auto* sweep_cmd = app.add_subcommand("sweep", "loss-weight sweep with shortened runs");
    sweep_cmd->add_option("--config", "key=value defaults file (command-line flags win)");
    add_train_flags(sweep_cmd, sweep_flags, false, true);
    sweep_cmd->add_option("--data", sweep_data, "dataset directory")->required();
    sweep_cmd->add_option("--axis", sweep_axis, "pcl, cci or both")->check(CLI::IsMember({"pcl", "cci", "both"}))->capture_default_str();
    sweep_cmd->add_option("--grid", sweep_grid, "override the grid values")->delimiter(',');
    sweep_cmd->add_option("--jobs", sweep_jobs, "parallel runs")->check(CLI::PositiveNumber)->capture_default_str();
    sweep_cmd->add_option("--out", sweep_out, "output directory")->required();
    sweep_cmd->add_flag("--force", sweep_force, "overwrite a non-empty output directory");

    std::uint64_t gc_seed = 0;
    double gc_tolerance = 1e-4;
    std::size_t gc_entries = 16;
    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every primitive and the full loss");
    gc_cmd->add_option("--seed", gc_seed, "input seed")->capture_default_str();
    gc_cmd->add_option("--tolerance", gc_tolerance, "maximum relative error")->capture_default_str();
    gc_cmd->add_option("--entries", gc_entries, "sampled entries per model tensor")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        for (CLI::App* cmd : {gen_cmd, train_cmd, eval_cmd, ablate_cmd, sweep_cmd}) {
            if (*cmd && cmd->count("--config") > 0) apply_config(cmd, cmd->get_option("--config")->as<std::string>());
        }
        if (*gen_cmd) return run_gen(gen, args);
        if (*train_cmd) return run_train(train, train_data, train_out, train_force, args);
        if (*eval_cmd) return run_eval(eval, args);
        if (*ablate_cmd) return run_ablate(ablate_flags, ablate_data, ablate_seeds, ablate_jobs, ablate_out, ablate_force, args);
        if (*sweep_cmd) return run_sweep(sweep_flags, sweep_data, sweep_axis, sweep_grid, sweep_jobs, sweep_out, sweep_force, args);
        if (*gc_cmd) return run_gradcheck(gc_seed, gc_tolerance, gc_entries);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kNumeric;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    }
    return kUsage;
}
