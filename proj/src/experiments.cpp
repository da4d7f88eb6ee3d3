#include "hcvp/experiments.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "hcvp/metrics.hpp"

namespace hcvp {

nlohmann::json RunOutcome::to_json() const {
    return {{"event", "run"},
            {"label", label},
            {"dataset", dataset},
            {"method", to_string(config.method)},
            {"seed", config.seed},
            {"config_hash", config.hash()},
            {"use_pcl", config.use_pcl},
            {"use_cci", config.use_cci},
            {"lambda_pcl", config.weights.pcl},
            {"lambda_cci", config.weights.cci},
            {"split", "test"},
            {"best_step", best_step},
            {"best_val_accuracy", best_val_accuracy},
            {"accuracy", unseen_accuracy},
            {"max_pcl_weighted", max_pcl_weighted},
            {"max_cci_weighted", max_cci_weighted}};
}

RunOutcome execute(const RunSpec& spec) {
    if (!spec.dataset) throw std::invalid_argument("execute: run '" + spec.label + "' has no dataset");
    std::ofstream metrics;
    if (spec.out_dir) {
        std::filesystem::create_directories(*spec.out_dir);
        metrics.open(*spec.out_dir / "metrics.jsonl");
        if (!metrics) throw std::runtime_error("cannot write " + (*spec.out_dir / "metrics.jsonl").string());
    }
    RecordSink sink;
    if (spec.out_dir) {
        sink = [&](const nlohmann::json& r) { metrics << r.dump() << '\n' << std::flush; };
    }
    TrainRun run = train(spec.config, spec.dataset->samples, spec.dataset->plan, sink);

    RunOutcome out;
    out.label = spec.label;
    out.config = spec.config.resolved();
    out.dataset = spec.dataset->name;
    out.best_val_accuracy = run.best.best_val_accuracy;
    out.best_step = run.best.best_step;
    Model model = load_model(run.best, out.config);
    out.unseen_accuracy = unseen_accuracy(model, spec.dataset->samples, spec.dataset->plan, out.config.unseen_domain);
    for (const auto& r : run.records) {
        if (r.at("event") != "train") continue;
        out.max_pcl_weighted = std::max(out.max_pcl_weighted, std::abs(r.at("loss").at("pcl_weighted").get<double>()));
        out.max_cci_weighted = std::max(out.max_cci_weighted, std::abs(r.at("loss").at("cci_weighted").get<double>()));
    }
    out.records = std::move(run.records);

    if (spec.out_dir) {
        run.best.save(*spec.out_dir / "best.ckpt");
        run.last.save(*spec.out_dir / "last.ckpt");
        nlohmann::json summary = out.to_json();
        metrics << summary.dump() << '\n' << std::flush;
        out.records.push_back(std::move(summary));
    }
    return out;
}

std::vector<RunOutcome> execute_all(const std::vector<RunSpec>& specs, std::size_t jobs) {
    std::vector<RunOutcome> results(specs.size());
    std::vector<std::exception_ptr> errors(specs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < specs.size(); i = next++) {
            try {
                results[i] = execute(specs[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t n = std::max<std::size_t>(1, std::min(jobs, specs.size()));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return results;
}

std::vector<AblationVariant> ablation_variants() {
    return {{"full", true, true}, {"no_pcl", false, true}, {"no_cci", true, false}, {"vanilla", false, false}};
}

AblationTable ablate(const TrainConfig& base, const std::vector<DatasetVariant>& datasets,
                     const std::vector<std::uint64_t>& seeds, std::size_t jobs,
                     const std::optional<std::filesystem::path>& out_dir) {
    if (datasets.empty() || seeds.empty()) throw ConfigError("ablate: needs at least one dataset and one seed");
    if (base.method != Method::hcvp) throw ConfigError("ablate: the ablation removes HCVP losses; method must be hcvp");
    const auto variants = ablation_variants();
    std::vector<RunSpec> specs;
    for (const auto& v : variants) {
        for (const auto& d : datasets) {
            for (auto seed : seeds) {
                RunSpec s;
                s.label = v.name;
                s.config = base;
                s.config.use_pcl = v.use_pcl;
                s.config.use_cci = v.use_cci;
                s.config.seed = seed;
                s.dataset = &d;
                if (out_dir) s.out_dir = *out_dir / d.name / v.name / ("seed" + std::to_string(seed));
                specs.push_back(std::move(s));
            }
        }
    }

    AblationTable table;
    table.runs = execute_all(specs, jobs);
    for (const auto& d : datasets) table.datasets.push_back(d.name);
    std::size_t k = 0;
    for (const auto& v : variants) {
        table.variants.push_back(v.name);
        std::vector<double> row;
        for (std::size_t d = 0; d < datasets.size(); ++d) {
            double sum = 0.0;
            for (std::size_t s = 0; s < seeds.size(); ++s) sum += table.runs[k++].unseen_accuracy;
            row.push_back(sum / static_cast<double>(seeds.size()));
        }
        double avg = 0.0;
        for (double x : row) avg += x;
        table.average.push_back(avg / static_cast<double>(row.size()));
        table.mean.push_back(std::move(row));
    }
    return table;
}

std::string AblationTable::to_text() const {
    std::ostringstream os;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-10s", "variant");
    os << buf;
    for (const auto& d : datasets) {
        std::snprintf(buf, sizeof buf, " %12s", d.c_str());
        os << buf;
    }
    os << "          avg\n";
    for (std::size_t v = 0; v < variants.size(); ++v) {
        std::snprintf(buf, sizeof buf, "%-10s", variants[v].c_str());
        os << buf;
        for (double x : mean[v]) {
            std::snprintf(buf, sizeof buf, " %12.2f", 100.0 * x);
            os << buf;
        }
        std::snprintf(buf, sizeof buf, " %12.2f\n", 100.0 * average[v]);
        os << buf;
    }
    return os.str();
}

nlohmann::json AblationTable::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t v = 0; v < variants.size(); ++v) {
        rows.push_back({{"variant", variants[v]}, {"unseen_accuracy", mean[v]}, {"avg", average[v]}});
    }
    return {{"event", "ablation_table"}, {"datasets", datasets}, {"rows", rows}};
}

std::string to_string(SweepAxis axis) { return axis == SweepAxis::pcl ? "pcl" : "cci"; }

SweepAxis parse_sweep_axis(const std::string& text) {
    if (text == "pcl") return SweepAxis::pcl;
    if (text == "cci") return SweepAxis::cci;
    throw std::invalid_argument("unknown sweep axis '" + text + "' (expected pcl or cci)");
}

std::vector<double> default_grid(SweepAxis axis) {
    if (axis == SweepAxis::pcl) return {0.001, 0.01, 0.1, 0.5, 1.0};
    return {0.01, 0.1, 0.3, 0.6, 1.0};
}

std::vector<SweepPoint> sweep(const TrainConfig& base, const DatasetVariant& dataset, SweepAxis axis,
                              const std::vector<double>& grid, std::size_t jobs,
                              const std::optional<std::filesystem::path>& out_dir) {
    if (grid.empty()) throw ConfigError("sweep: empty grid");
    std::vector<RunSpec> specs;
    std::vector<SweepPoint> points;
    for (double value : grid) {
        RunSpec s;
        s.config = base;
        (axis == SweepAxis::pcl ? s.config.weights.pcl : s.config.weights.cci) = value;
        char name[64];
        std::snprintf(name, sizeof name, "%s_%g", to_string(axis).c_str(), value);
        s.label = name;
        s.dataset = &dataset;
        if (out_dir) s.out_dir = *out_dir / name;
        points.push_back({s.config.weights.pcl, s.config.weights.cci, {}});
        specs.push_back(std::move(s));
    }
    auto outcomes = execute_all(specs, jobs);
    for (std::size_t i = 0; i < points.size(); ++i) points[i].outcome = std::move(outcomes[i]);
    return points;
}

std::string sweep_table(const std::vector<SweepPoint>& points) {
    std::ostringstream os;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%12s %12s %12s %12s\n", "lambda_pcl", "lambda_cci", "val_acc", "unseen_acc");
    os << buf;
    for (const auto& p : points) {
        std::snprintf(buf, sizeof buf, "%12g %12g %12.2f %12.2f\n", p.lambda_pcl, p.lambda_cci,
                      100.0 * p.outcome.best_val_accuracy, 100.0 * p.outcome.unseen_accuracy);
        os << buf;
    }
    return os.str();
}

} // namespace hcvp
