#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "blend/ad/params.hpp"
#include "blend/corpus.hpp"
#include "blend/models/model.hpp"
#include "blend/softlabels.hpp"

namespace blend::trainer {

/// Non-finite training loss; the message carries the epoch and step.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Optimizer { Nesterov, Momentum };

std::string optimizer_name(Optimizer o);
Optimizer parse_optimizer(const std::string& name);

template <typename T>
std::vector<ad::Tensor<T>> make_velocity(const ad::ParamSet<T>& params);

/// One step from the gradients held in params[i].grad.
///
/// Momentum:  v <- mu v - lr g;  theta <- theta + v.
/// Nesterov:  v <- mu v - lr g;  theta <- theta + mu v - lr g.
/// The Nesterov form stores the lookahead point phi = theta + mu v of the
/// classical update v <- mu v - lr grad L(theta + mu v), theta <- theta + v,
/// so gradients computed at the stored parameters are lookahead gradients.
template <typename T>
void sgd_step(ad::ParamSet<T>& params, std::vector<ad::Tensor<T>>& velocity, double lr, double mu, Optimizer kind);

template <typename T>
void sgd_nesterov_step(ad::ParamSet<T>& params, std::vector<ad::Tensor<T>>& velocity, double lr, double mu) {
    sgd_step(params, velocity, lr, mu, Optimizer::Nesterov);
}

enum class Monitor { ValidationLoss, ValidationFer };

struct ScheduleConfig {
    double initial_lr = 1.7e-2;
    double decay = 0.7;
    /// Epochs without improvement before decaying; 0 disables decay.
    int patience = 5;
    double min_lr = 5e-5;
    bool rollback = false;
    /// Hard cap on epochs; 0 means none.
    int max_epochs = 0;
    Monitor monitor = Monitor::ValidationLoss;

    static ScheduleConfig cnn_full();
    static ScheduleConfig lstm_full();
    void validate() const;
};

struct ScheduleEvent {
    int epoch = 0;
    double metric = 0.0;
    double lr_used = 0.0;
    bool improved = false;
    bool decayed = false;
    /// Caller restores the parameters of `best_epoch` and resets velocity.
    bool rollback = false;
    bool stop = false;
    double next_lr = 0.0;
    int best_epoch = 0;
};

/// Early-stopping / learning-rate state machine, fed one monitored value per
/// epoch. A strict decrease counts as improvement. After `patience`
/// consecutive non-improving epochs the rate is multiplied by `decay` and the
/// counter restarts; training stops once the rate drops below `min_lr` or the
/// epoch cap is reached.
class Schedule {
public:
    explicit Schedule(ScheduleConfig cfg);

    ScheduleEvent observe(double metric);

    double lr() const noexcept { return lr_; }
    int epoch() const noexcept { return epoch_; }
    int best_epoch() const noexcept { return best_epoch_; }
    double best() const noexcept { return best_; }
    bool finished() const noexcept { return finished_; }

private:
    ScheduleConfig cfg_;
    double lr_;
    int epoch_ = 0;
    int best_epoch_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
    int bad_epochs_ = 0;
    bool finished_ = false;
};

struct TrainConfig {
    int batch_size = 32;
    int batches_per_epoch = 100;
    double momentum = 0.9;
    Optimizer optimizer = Optimizer::Nesterov;
    ScheduleConfig schedule;
    double lambda = 0.0;
    std::uint64_t seed = 1;
    /// Threads for validation passes; does not affect results.
    int jobs = 1;

    static TrainConfig cnn_full();
    static TrainConfig lstm_full();
    static TrainConfig cnn_desk();
    static TrainConfig lstm_desk();
    void validate() const;
};

YAML::Node to_yaml(const TrainConfig& cfg);
/// Missing keys keep the values of `base`.
TrainConfig train_config_from_yaml(const YAML::Node& node, TrainConfig base, const std::string& path = "train");

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_fer = 0.0;
    bool improved = false;
    bool decayed = false;
    bool rolled_back = false;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    double best_val_loss = 0.0;
    double best_val_fer = 0.0;
    std::size_t clamped_log_terms = 0;
};

struct Validation {
    double loss = 0.0;  // mean -log q_y
    double fer = 0.0;
};

Validation validate(models::Model<float>& model, const std::vector<corpus::Utterance>& utterances, int jobs = 1);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains `model` in place starting from its current parameters. A store is
/// required iff lambda > 0. On return the model holds the parameters of the
/// best validation epoch.
TrainResult train(models::Model<float>& model, const corpus::Corpus& corpus, const softlabels::SoftLabelStore* store,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// "epoch,lr,train_loss,val_loss,val_fer" with '#' provenance lines first.
std::string history_csv(const TrainResult& result, const std::vector<std::pair<std::string, std::string>>& provenance);

}  // namespace blend::trainer
