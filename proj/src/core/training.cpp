#include "cbformer/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "cbformer/cka.hpp"
#include "cbformer/concepts.hpp"
#include "cbformer/ops.hpp"
#include "json.hpp"

namespace cbf {

std::vector<std::string> TrainConfig::problems() const {
    std::vector<std::string> p;
    if (!(alpha >= 0.0 && alpha <= 1.0)) p.push_back("training.alpha must lie in [0, 1]");
    if (!(learning_rate > 0.0)) p.push_back("training.learning_rate must be positive");
    if (batch_size < 2) p.push_back("training.batch_size must be at least 2 (CKA needs two examples)");
    if (max_epochs < 1) p.push_back("training.max_epochs must be at least 1");
    if (patience < 1) p.push_back("training.patience must be at least 1");
    if (!cka_branch && alpha != 0.0) p.push_back("training.cka_branch=false requires training.alpha = 0");
    return p;
}

void Adam::step(const std::vector<std::pair<std::string, Tensor>>& params) {
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    const double step_size = lr / bc1;
    const double sqrt_bc2 = std::sqrt(bc2);
    for (const auto& [name, p] : params) {
        if (!p.has_grad()) continue;
        const auto g = p.grad();
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) {
            m.assign(g.size(), 0.0);
            v.assign(g.size(), 0.0);
        }
        Tensor handle = p;
        auto w = handle.mutable_values();
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            w[i] -= step_size * m[i] / (std::sqrt(v[i]) / sqrt_bc2 + eps);
        }
    }
}

Tensor total_loss(const Tensor& pred, const Tensor& target, const std::vector<Tensor>& scores, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("total_loss: alpha must lie in [0, 1]");
    const Tensor mse = mse_loss(pred, target);
    if (alpha == 0.0) return mse;
    const Tensor concept_loss = cka::cka_loss(scores);
    if (alpha == 1.0) return concept_loss;
    return scale(mse, 1.0 - alpha) + scale(concept_loss, alpha);
}

double total_loss(double mse, const std::vector<double>& scores, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("total_loss: alpha must lie in [0, 1]");
    if (alpha == 0.0) return mse;
    return (1.0 - alpha) * mse + alpha * cka::cka_loss(scores);
}

std::string TrainHistory::to_jsonl(bool include_timing) const {
    std::ostringstream out;
    for (const auto& e : epochs) {
        nlohmann::json j{{"epoch", e.epoch},
                         {"learning_rate", e.learning_rate},
                         {"train_mse", e.train_mse},
                         {"train_total", e.train_total},
                         {"train_cka_loss", e.train_cka_loss},
                         {"val_mse", e.val_mse},
                         {"val_mae", e.val_mae},
                         {"val_total", e.val_total},
                         {"concept_scores", e.concept_scores},
                         {"best_epoch", best_epoch}};
        if (include_timing) j["seconds"] = e.seconds;
        out << j.dump() << '\n';
    }
    return out.str();
}

namespace {

std::vector<std::vector<std::size_t>> batches_of(std::vector<std::size_t> order, std::size_t batch_size,
                                                 bool drop_last) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        const std::size_t end = std::min(order.size(), i + batch_size);
        if (drop_last && end - i < batch_size) break;
        out.emplace_back(order.begin() + static_cast<long>(i), order.begin() + static_cast<long>(end));
    }
    return out;
}

bool all_finite(const Autoformer& model) {
    for (const auto& [name, t] : model.named_parameters()) {
        for (double v : t.values()) {
            if (!std::isfinite(v)) return false;
        }
    }
    return true;
}

}  // namespace

Metrics evaluate(const Autoformer& model, const std::vector<data::TimeSeriesWindow>& windows,
                 std::size_t batch_size) {
    if (windows.empty()) throw std::invalid_argument("evaluate: no windows");
    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    double se = 0.0, ae = 0.0;
    std::size_t count = 0;
    for (const auto& idx : batches_of(order, batch_size, false)) {
        const Batch b = make_batch(windows, idx);
        const Tensor pred = model.forward(b).forecast;
        const auto p = pred.values();
        const auto y = b.y.values();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double d = p[i] - y[i];
            se += d * d;
            ae += std::abs(d);
        }
        count += p.size();
    }
    return {se / static_cast<double>(count), ae / static_cast<double>(count)};
}

TrainResult train(Autoformer& model, const std::vector<data::TimeSeriesWindow>& train_windows,
                  const std::vector<data::TimeSeriesWindow>& val_windows, const ar::ArModel& ar_model,
                  const TrainConfig& config, const StepCallback& on_step) {
    if (const auto p = config.problems(); !p.empty()) {
        std::string msg;
        for (const auto& s : p) msg += (msg.empty() ? "" : "; ") + s;
        throw ConfigError(msg);
    }
    if (train_windows.size() < config.batch_size) {
        throw std::invalid_argument("train: fewer training windows (" + std::to_string(train_windows.size()) +
                                    ") than one batch (" + std::to_string(config.batch_size) + ")");
    }
    const auto& spec = model.spec();
    const bool concepts_on = config.cka_branch && spec.active();
    const std::size_t horizon = model.config().output_len;
    const auto& concepts = trained_concepts();
    const std::size_t supervised = std::min(concepts.size(), spec.components);

    std::mt19937_64 rng(config.seed);
    Adam adam;
    adam.lr = config.learning_rate;
    const auto params = model.named_parameters();

    TrainResult result;
    result.best = Checkpoint::capture(model, config.seed, &adam.state);
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    std::vector<std::size_t> order(train_windows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.epoch = epoch;
        adam.lr = config.lr_halving ? config.learning_rate * std::pow(0.5, static_cast<double>(epoch - 1))
                                    : config.learning_rate;
        rec.learning_rate = adam.lr;
        std::shuffle(order.begin(), order.end(), rng);
        const auto batches = batches_of(order, config.batch_size, true);
        std::map<std::string, double> score_sums;
        std::size_t steps = 0;
        bool diverged = false;
        for (const auto& idx : batches) {
            const Batch batch = make_batch(train_windows, idx);
            const ForwardResult fr = model.forward(batch, concepts_on);
            const Tensor mse = mse_loss(fr.forecast, batch.y);
            std::vector<Tensor> scores;
            std::vector<double> score_values;
            if (concepts_on) {
                const auto& comps = model.components(fr.layers.at(spec.layer));
                for (std::size_t i = 0; i < supervised; ++i) {
                    const Tensor target = concept_target(concepts[i], batch, ar_model, horizon);
                    // At alpha = 0 the scores are logged only and stay off the tape.
                    const Tensor comp = config.alpha == 0.0 ? comps[i].detach() : comps[i];
                    scores.push_back(cka::linear_cka(comp, target));
                    score_values.push_back(scores.back().item());
                    score_sums[to_string(concepts[i])] += score_values.back();
                }
            }
            const Tensor loss = concepts_on ? total_loss(fr.forecast, batch.y, scores, config.alpha) : mse;
            const double loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                diverged = true;
                break;
            }
            model.zero_grad();
            loss.backward();
            adam.step(params);
            if (!all_finite(model)) {
                diverged = true;
                break;
            }
            rec.train_mse += mse.item();
            rec.train_total += loss_value;
            if (concepts_on) rec.train_cka_loss += cka::cka_loss(score_values);
            ++steps;
            if (on_step) on_step(epoch, steps, loss_value);
        }
        model.zero_grad();
        if (diverged) {
            result.diverged = true;
            result.history.stop_reason = "diverged (non-finite loss or parameters) in epoch " + std::to_string(epoch);
            if (result.history.epochs.empty()) result.best.metadata["diverged_before_first_epoch"] = true;
            break;
        }
        const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(steps, 1));
        rec.train_mse *= inv;
        rec.train_total *= inv;
        rec.train_cka_loss *= inv;
        for (auto& [name, s] : score_sums) rec.concept_scores[name] = s * inv;
        const Metrics val = evaluate(model, val_windows, config.batch_size);
        rec.val_mse = val.mse;
        rec.val_mae = val.mae;
        rec.val_total = concepts_on ? (1.0 - config.alpha) * val.mse + config.alpha * rec.train_cka_loss : val.mse;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.history.epochs.push_back(rec);

        if (val.mse < best_val) {
            best_val = val.mse;
            since_best = 0;
            result.history.best_epoch = epoch;
            result.history.best_val_mse = val.mse;
            result.best = Checkpoint::capture(model, config.seed, &adam.state);
        } else if (++since_best >= config.patience) {
            result.history.stop_reason = "early stop: no validation improvement for " +
                                         std::to_string(config.patience) + " epochs";
            break;
        }
    }
    if (result.history.stop_reason.empty()) {
        result.history.stop_reason = "reached max_epochs (" + std::to_string(config.max_epochs) + ")";
    }
    result.best.metadata["best_epoch"] = result.history.best_epoch;
    result.best.metadata["best_val_mse"] = result.history.best_val_mse;
    result.best.metadata["alpha"] = config.alpha;
    result.best.metadata["learning_rate"] = config.learning_rate;
    return result;
}

Summary summarize(const std::vector<double>& values) {
    Summary s;
    s.count = values.size();
    if (values.empty()) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

}  // namespace cbf
