#include <cmath>
#include <limits>
#include <random>

#include "cbformer/concepts.hpp"
#include "cbformer/ops.hpp"
#include "cbformer/training.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cbf;
using cbf::test::spec_of;
using cbf::test::tiny_config;

namespace {

struct Fixture {
    data::Dataset ds;
    std::vector<data::TimeSeriesWindow> train_w, val_w, test_w;
    ar::ArModel ar_model;

    Fixture() {
        ds = data::prepare_dataset(data::synth_hourly(test::tiny_synth(600)), data::SplitSpec{});
        train_w = data::make_windows(ds.train, 16, 8, 1);
        val_w = data::make_windows(ds.val, 16, 8, 1);
        test_w = data::make_windows(ds.test, 16, 8, 1);
        ar_model = ar::fit_ar(ds.train.values, 16, 1e-3);
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

TrainConfig quick(double alpha, std::size_t epochs = 2) {
    TrainConfig c;
    c.alpha = alpha;
    c.learning_rate = 1e-3;
    c.max_epochs = epochs;
    c.seed = 3;
    return c;
}

}  // namespace

TEST_CASE("total_loss algebra") {
    std::mt19937_64 rng(1);
    const Tensor p = test::random_tensor({2, 3, 2}, rng), y = test::random_tensor({2, 3, 2}, rng);
    const double mse = mse_loss(p, y).item();
    CHECK(total_loss(p, y, {Tensor::scalar(0.4)}, 0.0).item() == mse);
    CHECK(total_loss(0.7, {1.0, 1.0}, 1.0) == 0.0);
    CHECK(total_loss(0.5, {0.6, 0.8}, 0.3) == doctest::Approx(0.44).epsilon(1e-14));
    CHECK(total_loss(p, y, {Tensor::scalar(0.6), Tensor::scalar(0.8)}, 0.3).item() ==
          doctest::Approx(0.7 * mse + 0.3 * 0.3).epsilon(1e-14));
    CHECK_THROWS(total_loss(0.5, {0.6}, 1.5));
    CHECK_THROWS(total_loss(0.5, {0.6}, -0.1));
}

TEST_CASE("train config problems") {
    TrainConfig c;
    CHECK(c.problems().empty());
    c.alpha = 2.0;
    c.batch_size = 1;
    CHECK(c.problems().size() == 2);
}

TEST_CASE("Adam step matches the closed form") {
    Tensor p = Tensor::from({2}, {1.0, -2.0}, true);
    sum(p * Tensor::from({2}, {0.5, -3.0})).backward();
    Adam adam;
    adam.lr = 0.1;
    adam.step({{"p", p}});
    // First step: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
    CHECK(p.values()[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
    CHECK(p.values()[1] == doctest::Approx(-2.0 + 0.1 * 3.0 / (3.0 + 1e-8)).epsilon(1e-14));
    CHECK(adam.state.step == 1);
    Tensor untouched = Tensor::from({1}, {5.0}, true);
    adam.step({{"u", untouched}});
    CHECK(untouched.values()[0] == 5.0);
}

TEST_CASE("concept targets") {
    const auto& f = fixture();
    const Batch b = make_batch(f.test_w, {0, 1, 2});
    const Tensor hour = concept_target(Concept::HourOfDay, b, f.ar_model, 8);
    CHECK(hour.shape() == Shape{3, 16});
    CHECK(hour.at({1, 4}) == f.test_w[1].t(4, 0));
    const Tensor arf = concept_target(Concept::AR, b, f.ar_model, 8);
    CHECK(arf.shape() == Shape{3, 8, 2});
    const auto direct = ar::ar_forecast(f.ar_model, f.test_w[2].x, 8);
    CHECK(arf.at({2, 5, 1}) == direct(5, 1));
    CHECK(concept_target(Concept::DayOfWeek, b, f.ar_model, 8).at({0, 0}) == f.test_w[0].t(0, 1));
    CHECK(parse_concept(to_string(Concept::DayOfYear)) == Concept::DayOfYear);
}

TEST_CASE("evaluate against a direct loop") {
    const auto& f = fixture();
    Autoformer m(tiny_config(), spec_of(BottleneckType::FF), 2);
    const Metrics got = evaluate(m, f.test_w, 7);
    double se = 0.0, ae = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < f.test_w.size(); ++i) {
        const Batch b = make_batch(f.test_w, {i});
        const Tensor fc = m.forward(b).forecast;
        for (std::size_t j = 0; j < fc.numel(); ++j) {
            const double d = fc.values()[j] - b.y.values()[j];
            se += d * d;
            ae += std::abs(d);
            ++n;
        }
    }
    CHECK(got.mse == doctest::Approx(se / double(n)).epsilon(1e-12));
    CHECK(got.mae == doctest::Approx(ae / double(n)).epsilon(1e-12));
    CHECK(got.mse >= 0.0);
    CHECK(got.mae >= 0.0);

    // Perfect predictor: targets replaced by the model's own forecast.
    auto perfect = f.test_w;
    perfect.resize(10);
    for (std::size_t i = 0; i < perfect.size(); ++i) {
        const Tensor fc = m.forward(make_batch(perfect, {i})).forecast;
        for (long t = 0; t < 8; ++t)
            for (long c = 0; c < 2; ++c) perfect[i].y(t, c) = fc.at({0, std::size_t(t), std::size_t(c)});
    }
    const Metrics zero = evaluate(m, perfect);
    CHECK(zero.mse == 0.0);
    CHECK(zero.mae == 0.0);
}

TEST_CASE("a flat predictor on standardized data scores about the variance") {
    const auto& f = fixture();
    Autoformer m(tiny_config(), spec_of(BottleneckType::None), 2);
    std::map<std::string, std::vector<double>> z;
    for (const auto& [name, t] : m.named_parameters()) z[name] = std::vector<double>(t.numel(), 0.0);
    m.set_parameters(z);
    // With zero weights the forecast is each window's input mean; compare with that oracle.
    double se = 0.0;
    std::size_t n = 0;
    for (const auto& w : f.train_w) {
        const Eigen::RowVectorXd mu = w.x.colwise().mean();
        se += (w.y.rowwise() - mu).squaredNorm();
        n += static_cast<std::size_t>(w.y.size());
    }
    CHECK(evaluate(m, f.train_w).mse == doctest::Approx(se / double(n)).epsilon(1e-10));
    CHECK(se / double(n) == doctest::Approx(1.0).epsilon(0.6));
}

TEST_CASE("training is deterministic and early stopping keeps the best epoch") {
    const auto& f = fixture();
    Autoformer a(tiny_config(), spec_of(BottleneckType::FF), 5);
    Autoformer b(tiny_config(), spec_of(BottleneckType::FF), 5);
    const TrainResult ra = train(a, f.train_w, f.val_w, f.ar_model, quick(0.3, 3));
    const TrainResult rb = train(b, f.train_w, f.val_w, f.ar_model, quick(0.3, 3));
    CHECK(ra.history.to_jsonl(false) == rb.history.to_jsonl(false));
    CHECK(ra.best.parameters == rb.best.parameters);
    REQUIRE(ra.history.epochs.size() == 3);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(ra.history.epochs[i].epoch == i + 1);
        best = std::min(best, ra.history.epochs[i].val_mse);
        CHECK(ra.history.epochs[i].concept_scores.count("ar") == 1);
        CHECK(ra.history.epochs[i].concept_scores.count("hour_of_day") == 1);
    }
    CHECK(ra.history.best_val_mse == best);
    CHECK(evaluate(*ra.best.instantiate(), f.val_w).mse == best);
}

TEST_CASE("alpha = 0 follows the same trajectory as training without the concept branch") {
    const auto& f = fixture();
    Autoformer a(tiny_config(), spec_of(BottleneckType::FF), 6);
    Autoformer b(tiny_config(), spec_of(BottleneckType::FF), 6);
    TrainConfig with = quick(0.0, 2), without = quick(0.0, 2);
    without.cka_branch = false;
    std::vector<double> la, lb;
    const auto ra = train(a, f.train_w, f.val_w, f.ar_model, with, [&](auto, auto, double l) { la.push_back(l); });
    const auto rb = train(b, f.train_w, f.val_w, f.ar_model, without, [&](auto, auto, double l) { lb.push_back(l); });
    CHECK(la == lb);
    CHECK(ra.best.parameters == rb.best.parameters);
    for (const auto& [name, t] : a.named_parameters()) {
        const auto& other = b.named_parameters();
        for (const auto& [n2, t2] : other)
            if (n2 == name) CHECK(test::bit_equal(t, t2));
    }
    CHECK_FALSE(ra.history.epochs[0].concept_scores.empty());
    CHECK(rb.history.epochs[0].concept_scores.empty());
}

TEST_CASE("alpha changes the trajectory") {
    const auto& f = fixture();
    Autoformer a(tiny_config(), spec_of(BottleneckType::FF), 6);
    Autoformer b(tiny_config(), spec_of(BottleneckType::FF), 6);
    const auto ra = train(a, f.train_w, f.val_w, f.ar_model, quick(0.0, 1));
    const auto rb = train(b, f.train_w, f.val_w, f.ar_model, quick(0.5, 1));
    CHECK(ra.best.parameters != rb.best.parameters);
}

TEST_CASE("divergence stops training and keeps the last finite state") {
    const auto& f = fixture();
    auto poisoned = f.train_w;
    for (auto& w : poisoned) w.y(0, 0) = std::numeric_limits<double>::quiet_NaN();
    Autoformer m(tiny_config(), spec_of(BottleneckType::None), 7);
    const auto before = Checkpoint::capture(m, 3).parameters;
    const TrainResult r = train(m, poisoned, f.val_w, f.ar_model, quick(0.0, 2));
    CHECK(r.diverged);
    CHECK(r.history.stop_reason.find("diverged") != std::string::npos);
    CHECK(r.best.parameters == before);
}

TEST_CASE("train input checks") {
    const auto& f = fixture();
    Autoformer m(tiny_config(), spec_of(BottleneckType::None), 7);
    std::vector<data::TimeSeriesWindow> few(f.train_w.begin(), f.train_w.begin() + 5);
    CHECK_THROWS(train(m, few, f.val_w, f.ar_model, quick(0.0)));
    TrainConfig bad = quick(0.0);
    bad.alpha = 1.5;
    CHECK_THROWS_AS(train(m, f.train_w, f.val_w, f.ar_model, bad), ConfigError);
}

TEST_CASE("summaries") {
    const Summary s = summarize({1.0, 2.0, 3.0, 4.0});
    CHECK(s.mean == 2.5);
    CHECK(s.stddev == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-14));
    CHECK(summarize({0.7}).stddev == 0.0);
    CHECK(summarize({}).count == 0);
}
