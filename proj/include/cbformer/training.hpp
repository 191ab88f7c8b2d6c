#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cbformer/ar.hpp"
#include "cbformer/autoformer.hpp"
#include "cbformer/checkpoint.hpp"
#include "cbformer/data.hpp"

namespace cbf {

struct TrainConfig {
    double alpha = 0.3;
    double learning_rate = 1e-4;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 25;
    std::size_t patience = 3;
    std::uint64_t seed = 0;
    // Halve the learning rate after every epoch.
    bool lr_halving = false;
    // When false the concept scores are never computed (not even for logging).
    bool cka_branch = true;

    std::vector<std::string> problems() const;
};

struct Adam {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    AdamState state;

    // Updates every parameter that holds a gradient; others are left alone.
    void step(const std::vector<std::pair<std::string, Tensor>>& params);
};

// (1 - alpha) * mse + alpha * (1 - mean(scores)).
Tensor total_loss(const Tensor& pred, const Tensor& target, const std::vector<Tensor>& scores, double alpha);
double total_loss(double mse, const std::vector<double>& scores, double alpha);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double learning_rate = 0.0;
    double train_mse = 0.0;
    double train_total = 0.0;
    double train_cka_loss = 0.0;
    double val_mse = 0.0;
    double val_mae = 0.0;
    double val_total = 0.0;
    std::map<std::string, double> concept_scores;  // training-batch means
    double seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_mse = 0.0;
    std::string stop_reason;

    std::string to_jsonl(bool include_timing = true) const;
};

struct TrainResult {
    Checkpoint best;
    TrainHistory history;
    bool diverged = false;
};

struct Metrics {
    double mse = 0.0;
    double mae = 0.0;
};

// Observes every optimizer step: (epoch, step within epoch, loss value).
using StepCallback = std::function<void(std::size_t, std::size_t, double)>;

TrainResult train(Autoformer& model, const std::vector<data::TimeSeriesWindow>& train_windows,
                  const std::vector<data::TimeSeriesWindow>& val_windows, const ar::ArModel& ar_model,
                  const TrainConfig& config, const StepCallback& on_step = {});

// Mean squared and absolute error over all windows, steps and channels.
Metrics evaluate(const Autoformer& model, const std::vector<data::TimeSeriesWindow>& windows,
                 std::size_t batch_size = 32);

struct Summary {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation; 0 for a single value
    std::size_t count = 0;
};
Summary summarize(const std::vector<double>& values);

}  // namespace cbf
