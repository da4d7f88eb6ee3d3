#include "hcvp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "hcvp/ops.hpp"

namespace hcvp {

namespace {

constexpr std::size_t kEvalBatch = 64;

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double batch_accuracy(const Tensor& logits, const std::vector<int>& labels) {
    const std::size_t b = logits.dim(0);
    const std::size_t c = logits.dim(1);
    auto v = logits.data();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < b; ++i) {
        auto row = v.subspan(i * c, c);
        auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        if (best == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(b);
}

Model build_model(const TrainConfig& config) {
    ModelConfig mc;
    mc.method = config.method;
    mc.vit = config.vit;
    return Model(mc, config.seed);
}

} // namespace

TrainConfig TrainConfig::resolved() const {
    TrainConfig c = *this;
    if (c.method == Method::erm) {
        c.use_pcl = false;
        c.use_cci = false;
    }
    if (c.steps == 0) throw ConfigError("steps must be positive");
    if (c.batch_size < 4 || c.batch_size % 2 != 0) {
        throw ConfigError("batch_size must be even and at least 4, got " + std::to_string(c.batch_size));
    }
    if (c.eval_every == 0) throw ConfigError("eval_every must be positive");
    if (!(c.similarity.temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (!(c.weights.pcl >= 0.0) || !(c.weights.cci >= 0.0)) throw ConfigError("loss weights must be non-negative");
    if (!(c.optimizer.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (c.method == Method::hcvp && (c.pretrain_batch_size < 4 || c.pretrain_batch_size % 2 != 0)) {
        throw ConfigError("pretrain_batch_size must be even and at least 4");
    }
    try {
        c.vit.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return c;
}

std::string TrainConfig::canonical() const {
    std::ostringstream os;
    auto line = [&](const char* key, const std::string& value) { os << key << '=' << value << '\n'; };
    line("method", to_string(method));
    line("steps", std::to_string(steps));
    line("batch_size", std::to_string(batch_size));
    line("lr", fmt_double(optimizer.learning_rate));
    line("weight_decay", fmt_double(optimizer.weight_decay));
    line("beta1", fmt_double(optimizer.beta1));
    line("beta2", fmt_double(optimizer.beta2));
    line("epsilon", fmt_double(optimizer.epsilon));
    line("lambda_pcl", fmt_double(weights.pcl));
    line("lambda_cci", fmt_double(weights.cci));
    line("temperature", fmt_double(similarity.temperature));
    line("normalize_sim", similarity.normalize ? "true" : "false");
    line("use_pcl", use_pcl ? "true" : "false");
    line("use_cci", use_cci ? "true" : "false");
    line("seed", std::to_string(seed));
    line("unseen_domain", std::to_string(unseen_domain));
    line("eval_every", std::to_string(eval_every));
    line("pretrain_steps", std::to_string(pretrain_steps));
    line("pretrain_batch_size", std::to_string(pretrain_batch_size));
    line("pretrain_lr", fmt_double(pretrain_optimizer.learning_rate));
    line("pretrain_weight_decay", fmt_double(pretrain_optimizer.weight_decay));
    line("vit.image_size", std::to_string(vit.image_size));
    line("vit.channels", std::to_string(vit.channels));
    line("vit.patch_size", std::to_string(vit.patch_size));
    line("vit.embed_dim", std::to_string(vit.embed_dim));
    line("vit.depth", std::to_string(vit.depth));
    line("vit.heads", std::to_string(vit.heads));
    line("vit.mlp_ratio", std::to_string(vit.mlp_ratio));
    line("vit.num_classes", std::to_string(vit.num_classes));
    return os.str();
}

std::string TrainConfig::hash() const { return fnv1a_hex(canonical()); }

TrainConfig parse_canonical(const std::string& text) {
    TrainConfig c;
    std::istringstream in(text);
    std::string raw;
    auto as_bool = [](const std::string& key, const std::string& v) {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ConfigError("bad boolean for " + key + ": '" + v + "'");
    };
    while (std::getline(in, raw)) {
        if (raw.empty()) continue;
        auto eq = raw.find('=');
        if (eq == std::string::npos) throw ConfigError("malformed config line '" + raw + "'");
        const std::string key = raw.substr(0, eq);
        const std::string v = raw.substr(eq + 1);
        auto sz = [&] { return static_cast<std::size_t>(std::stoull(v)); };
        try {
            if (key == "method") c.method = parse_method(v);
            else if (key == "steps") c.steps = sz();
            else if (key == "batch_size") c.batch_size = sz();
            else if (key == "lr") c.optimizer.learning_rate = std::stod(v);
            else if (key == "weight_decay") c.optimizer.weight_decay = std::stod(v);
            else if (key == "beta1") c.optimizer.beta1 = std::stod(v);
            else if (key == "beta2") c.optimizer.beta2 = std::stod(v);
            else if (key == "epsilon") c.optimizer.epsilon = std::stod(v);
            else if (key == "lambda_pcl") c.weights.pcl = std::stod(v);
            else if (key == "lambda_cci") c.weights.cci = std::stod(v);
            else if (key == "temperature") c.similarity.temperature = std::stod(v);
            else if (key == "normalize_sim") c.similarity.normalize = as_bool(key, v);
            else if (key == "use_pcl") c.use_pcl = as_bool(key, v);
            else if (key == "use_cci") c.use_cci = as_bool(key, v);
            else if (key == "seed") c.seed = std::stoull(v);
            else if (key == "unseen_domain") c.unseen_domain = std::stoi(v);
            else if (key == "eval_every") c.eval_every = sz();
            else if (key == "pretrain_steps") c.pretrain_steps = sz();
            else if (key == "pretrain_batch_size") c.pretrain_batch_size = sz();
            else if (key == "pretrain_lr") c.pretrain_optimizer.learning_rate = std::stod(v);
            else if (key == "pretrain_weight_decay") c.pretrain_optimizer.weight_decay = std::stod(v);
            else if (key == "vit.image_size") c.vit.image_size = sz();
            else if (key == "vit.channels") c.vit.channels = sz();
            else if (key == "vit.patch_size") c.vit.patch_size = sz();
            else if (key == "vit.embed_dim") c.vit.embed_dim = sz();
            else if (key == "vit.depth") c.vit.depth = sz();
            else if (key == "vit.heads") c.vit.heads = sz();
            else if (key == "vit.mlp_ratio") c.vit.mlp_ratio = sz();
            else if (key == "vit.num_classes") c.vit.num_classes = sz();
            else throw ConfigError("unknown config key '" + key + "'");
        } catch (const std::logic_error& e) {
            if (dynamic_cast<const ConfigError*>(&e)) throw;
            throw ConfigError("bad value for " + key + ": '" + v + "'");
        }
    }
    return c;
}

Trainer::Trainer(const TrainConfig& config, const std::vector<Sample>& samples, SplitPlan plan)
    : config_(config.resolved()),
      samples_(&samples),
      plan_(std::move(plan)),
      model_(build_model(config_)),
      optimizer_(model_.trainable(), config_.optimizer),
      stream_(samples, plan_.train, config_.batch_size, mix_seed({config_.seed, 0x737472656d61ull})) {
    if (plan_.unseen_domain != config_.unseen_domain) {
        throw ConfigError("split plan holds out domain " + std::to_string(plan_.unseen_domain) +
                          " but the config names " + std::to_string(config_.unseen_domain));
    }
    for (const auto& s : samples) {
        if (s.label < 0 || static_cast<std::size_t>(s.label) >= config_.vit.num_classes) {
            throw ConfigError("sample label " + std::to_string(s.label) + " outside the configured " +
                              std::to_string(config_.vit.num_classes) + " classes");
        }
    }
}

PretrainReport Trainer::pretrain_extractor() {
    if (!model_.has_prompts()) throw ContractError("pretrain_extractor: ERM model has no extractor");
    auto& extractor = model_.hpgn().extractor();
    if (extractor.frozen()) throw ContractError("pretrain_extractor: extractor is already frozen");

    Rng rng(mix_seed({config_.seed, 0x707265ull}));
    LinearParams head = LinearParams::init(extractor.out_channels(), config_.vit.num_classes, 0.02, rng);
    ParamList params;
    extractor.collect(params, "extractor");
    head.collect(params, "pretrain_head");
    AdamW opt(params, config_.pretrain_optimizer);
    BatchStream stream(*samples_, plan_.train, config_.pretrain_batch_size, mix_seed({config_.seed, 0x707374ull}));

    auto logits_of = [&](const Tensor& images) {
        return linear(global_avg_pool(extractor.features(images)), head.weight, head.bias);
    };

    PretrainReport report;
    for (std::size_t s = 0; s < config_.pretrain_steps; ++s) {
        LabeledBatch batch = stream.at(s);
        Tensor loss = cls_loss(logits_of(batch.images), batch.labels);
        if (!std::isfinite(loss.item())) throw NumericError("pretraining loss is not finite at step " + std::to_string(s + 1));
        loss.backward();
        opt.step();
        opt.zero_grad();
        report.final_loss = loss.item();
        ++report.steps;
    }

    {
        NoGradGuard guard;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < plan_.val.size(); start += kEvalBatch) {
            std::vector<std::size_t> idx(plan_.val.begin() + static_cast<std::ptrdiff_t>(start),
                                         plan_.val.begin() + static_cast<std::ptrdiff_t>(std::min(start + kEvalBatch, plan_.val.size())));
            LabeledBatch batch = gather(*samples_, idx);
            correct += static_cast<std::size_t>(std::llround(batch_accuracy(logits_of(batch.images), batch.labels) *
                                                             static_cast<double>(idx.size())));
        }
        report.val_accuracy = plan_.val.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(plan_.val.size());
    }
    extractor.freeze();
    return report;
}

StepLosses Trainer::step() {
    if (model_.has_prompts() && !model_.hpgn().extractor().frozen()) {
        throw ContractError("step: pretrain and freeze the extractor first");
    }
    LabeledBatch batch = stream_.at(step_);
    ForwardOutput out = model_.forward(batch.images);

    StepLosses losses;
    LossParts parts;
    parts.cls = cls_loss(out.logits, batch.labels);
    if (config_.use_pcl) {
        auto pcl = pcl_total(out.prompts->domain, out.prompts->task, batch.labels, batch.domains, config_.similarity);
        losses.pcl_degenerate = pcl.degenerate;
        parts.pcl = pcl.value;
    }
    if (config_.use_cci) {
        auto c = cci(out.embedding, batch.labels, config_.similarity);
        losses.cci_degenerate = c.degenerate;
        parts.cci = c.value;
    }
    Tensor total = total_loss(parts, config_.weights);

    losses.total = total.item();
    losses.cls = parts.cls.item();
    if (parts.pcl) losses.pcl = parts.pcl->item();
    if (parts.cci) losses.cci = parts.cci->item();
    losses.batch_accuracy = batch_accuracy(out.logits, batch.labels);

    total.backward();
    optimizer_.step();
    optimizer_.zero_grad();
    ++step_;
    return losses;
}

EvalSummary Trainer::evaluate(const std::vector<std::size_t>& indices) const {
    NoGradGuard guard;
    EvalSummary summary;
    double correct = 0.0;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < indices.size(); start += kEvalBatch) {
        std::vector<std::size_t> idx(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                     indices.begin() + static_cast<std::ptrdiff_t>(std::min(start + kEvalBatch, indices.size())));
        LabeledBatch batch = gather(*samples_, idx);
        ForwardOutput out = model_.forward(batch.images);
        const double n = static_cast<double>(idx.size());
        correct += std::round(batch_accuracy(out.logits, batch.labels) * n);
        loss_sum += cls_loss(out.logits, batch.labels).item() * n;
    }
    summary.count = indices.size();
    if (summary.count > 0) {
        summary.accuracy = correct / static_cast<double>(summary.count);
        summary.loss = loss_sum / static_cast<double>(summary.count);
    }
    return summary;
}

bool Trainer::note_validation(double accuracy) {
    if (!(accuracy > best_val_)) return false;
    best_val_ = accuracy;
    best_step_ = step_;
    return true;
}

Checkpoint Trainer::snapshot() const {
    Checkpoint c;
    c.step = step_;
    c.best_step = best_step_;
    c.best_val_accuracy = best_val_ < 0.0 ? 0.0 : best_val_;
    c.config_text = config_.canonical();
    c.config_hash = config_.hash();
    c.tensors = store(model_.all_tensors());
    c.optimizer = optimizer_.state();
    return c;
}

void Trainer::restore(const Checkpoint& checkpoint) {
    if (checkpoint.config_hash != config_.hash()) {
        throw ContractError("checkpoint config hash " + checkpoint.config_hash + " does not match run config " +
                            config_.hash());
    }
    hcvp::restore(checkpoint.tensors, model_.all_tensors());
    if (model_.has_prompts() && !model_.hpgn().extractor().frozen()) model_.hpgn().extractor().freeze();
    optimizer_.set_state(checkpoint.optimizer);
    step_ = checkpoint.step;
    best_step_ = checkpoint.best_step;
    best_val_ = checkpoint.best_val_accuracy;
}

TrainRun train(const TrainConfig& config, const std::vector<Sample>& samples, const SplitPlan& plan,
               const RecordSink& sink) {
    Trainer trainer(config, samples, plan);
    const TrainConfig& cfg = trainer.config();
    const std::string hash = cfg.hash();
    TrainRun run;

    auto emit = [&](nlohmann::json record) {
        record["method"] = to_string(cfg.method);
        record["seed"] = cfg.seed;
        record["config_hash"] = hash;
        if (sink) sink(record);
        run.records.push_back(std::move(record));
    };

    if (cfg.method == Method::hcvp) {
        run.pretrain = trainer.pretrain_extractor();
        emit({{"event", "pretrain"},
              {"step", run.pretrain.steps},
              {"split", "val"},
              {"loss", {{"cls", run.pretrain.final_loss}}},
              {"accuracy", run.pretrain.val_accuracy}});
    }

    StepLosses window;
    std::size_t window_steps = 0;
    for (std::size_t s = 1; s <= cfg.steps; ++s) {
        StepLosses l = trainer.step();
        window.total += l.total;
        window.cls += l.cls;
        window.pcl += l.pcl;
        window.cci += l.cci;
        window.batch_accuracy += l.batch_accuracy;
        ++window_steps;

        const bool evaluate = s % cfg.eval_every == 0 || s == cfg.steps;
        if (s == 1 || evaluate) {
            const double n = static_cast<double>(window_steps);
            const double pcl = window.pcl / n;
            const double cci_value = window.cci / n;
            emit({{"event", "train"},
                  {"step", s},
                  {"split", "train"},
                  {"loss",
                   {{"total", window.total / n},
                    {"cls", window.cls / n},
                    {"pcl", pcl},
                    {"cci", cci_value},
                    {"pcl_weighted", cfg.use_pcl ? cfg.weights.pcl * pcl : 0.0},
                    {"cci_weighted", cfg.use_cci ? cfg.weights.cci * cci_value : 0.0}}},
                  {"accuracy", window.batch_accuracy / n},
                  {"window", window_steps}});
            window = {};
            window_steps = 0;
        }
        if (evaluate) {
            EvalSummary val = trainer.evaluate(plan.val);
            const bool improved = trainer.note_validation(val.accuracy);
            if (improved) run.best = trainer.snapshot();
            emit({{"event", "eval"},
                  {"step", s},
                  {"split", "val"},
                  {"loss", {{"cls", val.loss}}},
                  {"accuracy", val.accuracy},
                  {"best", improved}});
        }
    }
    run.last = trainer.snapshot();
    emit({{"event", "select"},
          {"step", trainer.best_step()},
          {"split", "val"},
          {"accuracy", trainer.best_val_accuracy()}});
    return run;
}

Model load_model(const Checkpoint& checkpoint, const TrainConfig& config) {
    if (checkpoint.config_hash != config.hash()) {
        throw ContractError("checkpoint config hash " + checkpoint.config_hash + " does not match " + config.hash());
    }
    Model model = build_model(config);
    restore(checkpoint.tensors, model.all_tensors());
    if (model.has_prompts()) model.hpgn().extractor().freeze();
    return model;
}

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

} // namespace hcvp
