#include "blend/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "blend/blending.hpp"
#include "blend/config.hpp"
#include "blend/metrics.hpp"
#include "blend/rng.hpp"

namespace blend::trainer {

std::string optimizer_name(Optimizer o) { return o == Optimizer::Nesterov ? "nesterov" : "momentum"; }

Optimizer parse_optimizer(const std::string& name) {
    if (name == "nesterov") return Optimizer::Nesterov;
    if (name == "momentum") return Optimizer::Momentum;
    throw ConfigError("optimizer", "expected 'nesterov' or 'momentum', got '" + name + "'");
}

template <typename T>
std::vector<ad::Tensor<T>> make_velocity(const ad::ParamSet<T>& params) {
    std::vector<ad::Tensor<T>> v;
    v.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) v.emplace_back(params[i].value.shape());
    return v;
}

template <typename T>
void sgd_step(ad::ParamSet<T>& params, std::vector<ad::Tensor<T>>& velocity, double lr, double mu, Optimizer kind) {
    if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: learning rate must be positive");
    if (!(mu >= 0.0 && mu < 1.0)) throw std::invalid_argument("sgd_step: momentum must lie in [0,1)");
    if (velocity.size() != params.size()) throw ad::DimensionError("sgd_step", 0, "one velocity buffer per parameter");
    const T m = static_cast<T>(mu), a = static_cast<T>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        auto& v = velocity[i];
        if (v.shape() != p.value.shape() || p.grad.shape() != p.value.shape()) {
            throw ad::DimensionError("sgd_step", 0, "velocity/gradient shape differs for '" + p.name + "'");
        }
        auto theta = p.value.values();
        auto g = p.grad.values();
        auto vel = v.values();
        for (std::size_t k = 0; k < theta.size(); ++k) {
            vel[k] = m * vel[k] - a * g[k];
            theta[k] += kind == Optimizer::Nesterov ? m * vel[k] - a * g[k] : vel[k];
        }
    }
}

ScheduleConfig ScheduleConfig::cnn_full() { return {1.7e-2, 0.7, 5, 5e-5, false, 0, Monitor::ValidationLoss}; }

ScheduleConfig ScheduleConfig::lstm_full() { return {1e-3, 2.0 / 3.0, 3, 1e-5, true, 0, Monitor::ValidationFer}; }

void ScheduleConfig::validate() const {
    if (!(initial_lr > 0)) throw ConfigError("schedule.initial_lr", "must be positive");
    if (!(decay > 0 && decay < 1)) throw ConfigError("schedule.decay", "must lie in (0,1)");
    if (patience < 0) throw ConfigError("schedule.patience", "must be nonnegative (0 disables decay)");
    if (!(min_lr > 0)) throw ConfigError("schedule.min_lr", "must be positive");
    if (max_epochs < 0) throw ConfigError("schedule.max_epochs", "must be nonnegative (0 means no cap)");
    if (patience == 0 && max_epochs == 0) throw ConfigError("schedule.max_epochs", "required when patience is 0");
}

Schedule::Schedule(ScheduleConfig cfg) : cfg_(cfg), lr_(cfg.initial_lr) { cfg_.validate(); }

ScheduleEvent Schedule::observe(double metric) {
    if (finished_) throw std::logic_error("Schedule: observe after stop");
    ScheduleEvent e;
    e.epoch = ++epoch_;
    e.metric = metric;
    e.lr_used = lr_;
    if (metric < best_) {
        best_ = metric;
        best_epoch_ = epoch_;
        bad_epochs_ = 0;
        e.improved = true;
    } else {
        ++bad_epochs_;
    }
    if (cfg_.patience > 0 && bad_epochs_ >= cfg_.patience) {
        lr_ *= cfg_.decay;
        bad_epochs_ = 0;
        e.decayed = true;
        e.rollback = cfg_.rollback;
    }
    e.stop = lr_ < cfg_.min_lr || (cfg_.max_epochs > 0 && epoch_ >= cfg_.max_epochs);
    finished_ = e.stop;
    e.next_lr = lr_;
    e.best_epoch = best_epoch_;
    return e;
}

TrainConfig TrainConfig::cnn_full() {
    TrainConfig c;
    c.batch_size = 256;
    c.batches_per_epoch = 2000;
    c.optimizer = Optimizer::Nesterov;
    c.schedule = ScheduleConfig::cnn_full();
    return c;
}

TrainConfig TrainConfig::lstm_full() {
    TrainConfig c = cnn_full();
    c.optimizer = Optimizer::Momentum;
    c.schedule = ScheduleConfig::lstm_full();
    return c;
}

TrainConfig TrainConfig::cnn_desk() {
    TrainConfig c;
    c.batch_size = 32;
    c.batches_per_epoch = 100;
    c.optimizer = Optimizer::Nesterov;
    c.schedule = {1e-2, 0.7, 2, 1e-4, false, 20, Monitor::ValidationLoss};
    return c;
}

TrainConfig TrainConfig::lstm_desk() {
    TrainConfig c;
    c.batch_size = 32;
    c.batches_per_epoch = 100;
    c.optimizer = Optimizer::Momentum;
    c.schedule = {2e-2, 2.0 / 3.0, 2, 1e-4, true, 20, Monitor::ValidationFer};
    return c;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("train.batch_size", "must be positive");
    if (batches_per_epoch < 1) throw ConfigError("train.batches_per_epoch", "must be positive");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train.momentum", "must lie in [0,1)");
    if (!(lambda >= 0 && lambda <= 1)) throw ConfigError("train.lambda", "must lie in [0,1]");
    if (jobs < 1) throw ConfigError("train.jobs", "must be positive");
    schedule.validate();
}

YAML::Node to_yaml(const TrainConfig& c) {
    YAML::Node n;
    n["batch_size"] = c.batch_size;
    n["batches_per_epoch"] = c.batches_per_epoch;
    n["momentum"] = c.momentum;
    n["optimizer"] = optimizer_name(c.optimizer);
    n["lambda"] = c.lambda;
    n["seed"] = c.seed;
    YAML::Node s;
    s["initial_lr"] = c.schedule.initial_lr;
    s["decay"] = c.schedule.decay;
    s["patience"] = c.schedule.patience;
    s["min_lr"] = c.schedule.min_lr;
    s["rollback"] = c.schedule.rollback;
    s["max_epochs"] = c.schedule.max_epochs;
    s["monitor"] = c.schedule.monitor == Monitor::ValidationLoss ? "val_loss" : "val_fer";
    n["schedule"] = s;
    return n;
}

TrainConfig train_config_from_yaml(const YAML::Node& node, TrainConfig c, const std::string& path) {
    if (!node) return c;
    yaml::check_keys(node,
                     {"batch_size", "batches_per_epoch", "momentum", "optimizer", "lambda", "seed", "jobs",
                      "schedule"},
                     path);
    c.batch_size = yaml::get_or(node, "batch_size", path, c.batch_size);
    c.batches_per_epoch = yaml::get_or(node, "batches_per_epoch", path, c.batches_per_epoch);
    c.momentum = yaml::get_or(node, "momentum", path, c.momentum);
    if (node["optimizer"]) {
        try {
            c.optimizer = parse_optimizer(yaml::get<std::string>(node, "optimizer", path));
        } catch (const ConfigError& e) {
            throw ConfigError(path + ".optimizer", e.what());
        }
    }
    c.lambda = yaml::get_or(node, "lambda", path, c.lambda);
    c.seed = yaml::get_or<std::uint64_t>(node, "seed", path, c.seed);
    c.jobs = yaml::get_or(node, "jobs", path, c.jobs);
    if (const auto s = node["schedule"]) {
        const std::string sp = path + ".schedule";
        yaml::check_keys(s, {"initial_lr", "decay", "patience", "min_lr", "rollback", "max_epochs", "monitor"}, sp);
        auto& sc = c.schedule;
        sc.initial_lr = yaml::get_or(s, "initial_lr", sp, sc.initial_lr);
        sc.decay = yaml::get_or(s, "decay", sp, sc.decay);
        sc.patience = yaml::get_or(s, "patience", sp, sc.patience);
        sc.min_lr = yaml::get_or(s, "min_lr", sp, sc.min_lr);
        sc.rollback = yaml::get_or(s, "rollback", sp, sc.rollback);
        sc.max_epochs = yaml::get_or(s, "max_epochs", sp, sc.max_epochs);
        if (s["monitor"]) {
            const auto m = yaml::get<std::string>(s, "monitor", sp);
            if (m == "val_loss")
                sc.monitor = Monitor::ValidationLoss;
            else if (m == "val_fer")
                sc.monitor = Monitor::ValidationFer;
            else
                throw ConfigError(sp + ".monitor", "expected 'val_loss' or 'val_fer', got '" + m + "'");
        }
    }
    c.validate();
    return c;
}

Validation validate(models::Model<float>& model, const std::vector<corpus::Utterance>& utterances, int jobs) {
    const auto posts = metrics::frame_posteriors(model, utterances, jobs);
    const auto labels = metrics::frame_labels(utterances);
    Validation v;
    for (std::size_t i = 0; i < posts.size(); ++i) v.loss -= std::log(std::max(posts[i][labels[i]], ad::kProbabilityFloor));
    v.loss /= static_cast<double>(posts.size());
    v.fer = metrics::frame_error_rate(std::span<const models::Posteriors>(posts), labels);
    return v;
}

TrainResult train(models::Model<float>& model, const corpus::Corpus& corpus, const softlabels::SoftLabelStore* store,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    if (model.classes() != corpus.classes()) {
        throw ConfigError("model.classes", "model predicts " + std::to_string(model.classes()) +
                                               " classes, corpus has " + std::to_string(corpus.classes()));
    }
    if (cfg.lambda > 0.0) {
        if (!store) throw ConfigError("train.lambda", "lambda > 0 requires a soft-label store");
        if (store->classes() != corpus.classes() || store->lengths().size() != corpus.train.size() || !store->complete())
            throw ConfigError("store", "soft-label store does not match the training corpus");
    }

    auto& params = model.params();
    auto velocity = make_velocity(params);
    Schedule schedule(cfg.schedule);
    const corpus::FrameSampler sampler(corpus.train);
    auto rng = make_rng(cfg.seed, "sampler");

    TrainResult result;
    ad::ParamSet<float> best = params;
    ad::Tape<float> tape;
    const float inv_batch = 1.0f / static_cast<float>(cfg.batch_size);

    while (!schedule.finished()) {
        const double lr = schedule.lr();
        double epoch_loss = 0.0;
        for (int step = 0; step < cfg.batches_per_epoch; ++step) {
            params.zero_grad();
            double batch_loss = 0.0;
            for (int b = 0; b < cfg.batch_size; ++b) {
                const auto ref = sampler(rng);
                const auto& utt = corpus.train[ref.utterance];
                const auto window = corpus::extract_window(utt, ref.frame, model.context());
                const softlabels::TopCRecord* record = cfg.lambda > 0.0 ? &store->at(ref) : nullptr;
                tape.clear();
                const auto where = " at epoch " + std::to_string(schedule.epoch() + 1) + ", step " + std::to_string(step + 1);
                try {
                    auto q = ad::softmax(model.logits(tape, window));
                    auto loss = blending::blended_loss(record, utt.labels[ref.frame], q, cfg.lambda);
                    const double value = loss.value().item();
                    if (!std::isfinite(value)) throw DivergenceError("non-finite training loss" + where);
                    tape.backward(loss, inv_batch);
                    batch_loss += value;
                } catch (const ad::NumericError& e) {
                    throw DivergenceError(std::string(e.what()) + where);
                }
                result.clamped_log_terms += tape.diagnostics().clamped_log_terms;
                tape.diagnostics().clamped_log_terms = 0;
            }
            sgd_step(params, velocity, lr, cfg.momentum, cfg.optimizer);
            epoch_loss += batch_loss / cfg.batch_size;
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!params[i].value.all_finite())
                throw DivergenceError("parameter '" + params[i].name + "' became non-finite at epoch " +
                                      std::to_string(schedule.epoch() + 1));
        }

        const auto val = validate(model, corpus.validation, cfg.jobs);
        const double monitored = cfg.schedule.monitor == Monitor::ValidationLoss ? val.loss : val.fer;
        const auto ev = schedule.observe(monitored);

        EpochRecord rec;
        rec.epoch = ev.epoch;
        rec.lr = lr;
        rec.train_loss = epoch_loss / cfg.batches_per_epoch;
        rec.val_loss = val.loss;
        rec.val_fer = val.fer;
        rec.improved = ev.improved;
        rec.decayed = ev.decayed;
        if (ev.improved) {
            best.assign_values(params);
            result.best_epoch = ev.epoch;
            result.best_val_loss = val.loss;
            result.best_val_fer = val.fer;
        }
        if (ev.rollback && !ev.stop) {
            params.assign_values(best);
            velocity = make_velocity(params);
            rec.rolled_back = true;
        }
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    params.assign_values(best);
    return result;
}

std::string history_csv(const TrainResult& result, const std::vector<std::pair<std::string, std::string>>& provenance) {
    std::ostringstream os;
    for (const auto& [k, v] : provenance) os << "# " << k << ": " << v << '\n';
    os << "epoch,lr,train_loss,val_loss,val_fer\n";
    os << std::setprecision(10);
    for (const auto& r : result.history)
        os << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_fer << '\n';
    return os.str();
}

template std::vector<ad::Tensor<float>> make_velocity(const ad::ParamSet<float>&);
template std::vector<ad::Tensor<double>> make_velocity(const ad::ParamSet<double>&);
template void sgd_step(ad::ParamSet<float>&, std::vector<ad::Tensor<float>>&, double, double, Optimizer);
template void sgd_step(ad::ParamSet<double>&, std::vector<ad::Tensor<double>>&, double, double, Optimizer);

}  // namespace blend::trainer
