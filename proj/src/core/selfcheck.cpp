#include "cbformer/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

#include "cbformer/autoformer.hpp"
#include "cbformer/cka.hpp"
#include "cbformer/gradcheck.hpp"
#include "cbformer/ops.hpp"
#include "cbformer/training.hpp"

namespace cbf {

double GradientReport::worst() const {
    double w = 0.0;
    for (const auto& [name, e] : max_rel_error) w = std::max(w, e);
    return w;
}

namespace {

using Rng = std::mt19937_64;

enum class Domain { Any, Positive, AwayFromZero };

Tensor random_tensor(Rng& rng, Shape shape, Domain domain = Domain::Any, bool requires_grad = true) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
        x = n(rng);
        if (domain == Domain::Positive) x = 0.5 + std::abs(x);
        if (domain == Domain::AwayFromZero) x = (x < 0 ? -0.5 : 0.5) + x;
    }
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

struct Primitive {
    const char* name;
    std::vector<Shape> shapes;
    std::vector<Domain> domains;
    std::function<Tensor(const std::vector<Tensor>&)> f;
};

std::vector<Primitive> primitives() {
    const std::vector<std::size_t> picks{4, 0, 2, 5, 1, 3};
    const std::vector<std::size_t> lags{1, 4, 0, 3};
    return {
        {"add", {{3, 4}, {4}}, {}, [](const auto& t) { return add(t[0], t[1]); }},
        {"sub", {{2, 3, 4}, {3, 1}}, {}, [](const auto& t) { return sub(t[0], t[1]); }},
        {"mul", {{3, 4}, {3, 4}}, {}, [](const auto& t) { return mul(t[0], t[1]); }},
        {"div", {{3, 4}, {1, 4}}, {Domain::Any, Domain::AwayFromZero}, [](const auto& t) { return div(t[0], t[1]); }},
        {"scale", {{5}}, {}, [](const auto& t) { return scale(t[0], -1.7); }},
        {"add_scalar", {{2, 3}}, {}, [](const auto& t) { return add_scalar(t[0], 0.25); }},
        {"relu", {{4, 5}}, {Domain::AwayFromZero}, [](const auto& t) { return relu(t[0]); }},
        {"sqrt", {{6}}, {Domain::Positive}, [](const auto& t) { return cbf::sqrt(t[0]); }},
        {"matmul", {{2, 3, 4}, {4, 5}}, {}, [](const auto& t) { return matmul(t[0], t[1]); }},
        {"matmul_batched", {{2, 3, 4}, {2, 4, 2}}, {}, [](const auto& t) { return matmul(t[0], t[1]); }},
        {"transpose", {{2, 3, 4}}, {}, [](const auto& t) { return transpose(t[0], 0, 2); }},
        {"reshape", {{2, 3, 4}}, {}, [](const auto& t) { return reshape(t[0], {6, 4}); }},
        {"sum", {{3, 4}}, {}, [](const auto& t) { return sum(t[0]); }},
        {"sum_axis", {{2, 3, 4}}, {}, [](const auto& t) { return sum(t[0], 1, true); }},
        {"mean", {{3, 4}}, {}, [](const auto& t) { return mean(t[0]); }},
        {"mean_axis", {{2, 3, 4}}, {}, [](const auto& t) { return mean(t[0], 0); }},
        {"softmax", {{3, 5}}, {}, [](const auto& t) { return softmax(t[0], -1); }},
        {"slice", {{2, 4, 3}}, {}, [](const auto& t) { return slice(t[0], 1, 1, 3); }},
        {"concat", {{2, 2, 3}, {2, 1, 3}}, {}, [](const auto& t) { return concat({t[0], t[1]}, 1); }},
        {"stack", {{3, 2}, {3, 2}}, {}, [](const auto& t) { return stack({t[0], t[1]}, 0); }},
        {"split", {{2, 3, 4}}, {}, [](const auto& t) {
             const auto parts = split(t[0], 2, 2);
             return add(scale(parts[0], 2.0), scale(parts[1], -1.0));
         }},
        {"layer_norm", {{3, 6}}, {}, [](const auto& t) { return layer_norm(t[0]); }},
        {"roll", {{2, 5, 3}}, {}, [](const auto& t) { return roll(t[0], 2, 1); }},
        {"moving_average", {{2, 9, 3}}, {}, [](const auto& t) { return moving_average(t[0], 5, 1); }},
        {"series_decomp", {{2, 9, 3}}, {}, [](const auto& t) { return series_decomp(t[0], 5).seasonal; }},
        {"circular_taps", {{2, 5, 3}}, {}, [](const auto& t) { return circular_taps(t[0]); }},
        {"mse_loss", {{3, 4}, {3, 4}}, {}, [](const auto& t) { return mse_loss(t[0], t[1]); }},
        {"lag_correlation", {{2, 8, 3}, {2, 8, 3}}, {}, [](const auto& t) { return lag_correlation(t[0], t[1]); }},
        {"gather_last", {{2, 6}}, {}, [picks](const auto& t) { return gather_last(t[0], picks, 3); }},
        {"delay_aggregate", {{2, 6, 3}, {2, 2}}, {}, [lags](const auto& t) { return delay_aggregate(t[0], t[1], lags); }},
        {"linear_cka", {{6, 4}, {6, 3}}, {}, [](const auto& t) { return cka::linear_cka(t[0], t[1]); }},
    };
}

// Scalar probe: sum(out * w) with fixed random weights.
Tensor weighted(const Tensor& out, const Tensor& w) { return sum(mul(out, w)); }

void record(GradientReport& r, const std::string& name, const GradCheckResult& g) {
    auto& slot = r.max_rel_error[name];
    slot = std::max(slot, g.max_rel_error);
    r.checked += g.checked;
    r.flagged += g.flagged.size();
}

}  // namespace

GradientReport primitive_gradients(std::uint64_t first_seed, std::size_t seeds) {
    GradientReport report;
    const auto prims = primitives();
    for (std::size_t s = 0; s < seeds; ++s) {
        Rng rng(first_seed + s);
        for (const auto& p : prims) {
            std::vector<Tensor> leaves;
            for (std::size_t i = 0; i < p.shapes.size(); ++i) {
                leaves.push_back(random_tensor(rng, p.shapes[i], i < p.domains.size() ? p.domains[i] : Domain::Any));
            }
            const Shape out_shape = p.f(leaves).shape();
            const Tensor w = random_tensor(rng, out_shape, Domain::Any, false);
            for (const auto& leaf : leaves) {
                const auto g = grad_check([&] { return weighted(p.f(leaves), w); }, leaf, kGradientStep);
                record(report, p.name, g);
            }
        }
    }
    return report;
}

GradientReport end_to_end_gradients(std::uint64_t first_seed, std::size_t seeds, std::size_t coordinates) {
    GradientReport report;
    ModelConfig cfg;
    cfg.input_len = 16;
    cfg.output_len = 8;
    cfg.channels = 2;
    cfg.d_model = 8;
    cfg.heads = 2;
    cfg.encoder_layers = 2;
    cfg.decoder_layers = 1;
    cfg.moving_avg = 5;
    cfg.d_ff = 16;
    const std::size_t B = 4;
    for (std::size_t s = 0; s < seeds; ++s) {
        const std::uint64_t seed = first_seed + s;
        BottleneckSpec spec;
        spec.type = seed % 2 == 0 ? BottleneckType::FF : BottleneckType::Att;
        spec.layer = 1;
        spec.components = 2;
        Autoformer model(cfg, spec, seed);
        Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
        Batch batch;
        batch.x = random_tensor(rng, {B, cfg.input_len, cfg.channels}, Domain::Any, false);
        batch.marks = random_tensor(rng, {B, cfg.input_len, 4}, Domain::Any, false);
        batch.future_marks = random_tensor(rng, {B, cfg.output_len, 4}, Domain::Any, false);
        batch.y = random_tensor(rng, {B, cfg.output_len, cfg.channels}, Domain::Any, false);
        const Tensor ar_target = random_tensor(rng, {B, cfg.output_len, cfg.channels}, Domain::Any, false);
        const Tensor hour_target = random_tensor(rng, {B, cfg.input_len}, Domain::Any, false);
        auto loss = [&] {
            const ForwardResult fr = model.forward(batch, true);
            const auto& comps = model.components(fr.layers.at(spec.layer));
            return total_loss(fr.forecast, batch.y,
                              {cka::linear_cka(comps[0], ar_target), cka::linear_cka(comps[1], hour_target)}, 0.3);
        };
        for (const auto& [name, param] : model.named_parameters()) {
            std::uniform_int_distribution<std::size_t> pick(0, param.numel() - 1);
            std::vector<std::size_t> coords;
            for (std::size_t k = 0; k < coordinates; ++k) coords.push_back(pick(rng));
            const auto g = grad_check(loss, param, kGradientStep, coords);
            record(report, "end_to_end", g);
        }
    }
    return report;
}

namespace {

std::string fmt_error(double e) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3g", e);
    return buf;
}

SuiteResult gradient_suite() {
    const auto prim = primitive_gradients(0, 5);
    const auto e2e = end_to_end_gradients(0, 4);
    std::string worst_name;
    double worst = -1.0;
    for (const auto& [name, e] : prim.max_rel_error) {
        if (e > worst) worst = e, worst_name = name;
    }
    const bool ok = prim.passed() && e2e.passed();
    return {"gradients", ok,
            std::to_string(prim.max_rel_error.size()) + " primitives, worst " + worst_name + " " + fmt_error(worst) +
                "; end-to-end worst " + fmt_error(e2e.worst()) + " (tolerance " + fmt_error(kGradientTolerance) + ")"};
}

SuiteResult cka_suite() {
    Rng rng(7);
    const Tensor a = random_tensor(rng, {12, 5}, Domain::Any, false);
    const Tensor b = random_tensor(rng, {12, 4}, Domain::Any, false);
    // Orthogonal matrix from a Householder reflection.
    const Tensor v = random_tensor(rng, {5, 1}, Domain::Any, false);
    const double vv = sum(mul(v, v)).item();
    const Tensor q = sub(Tensor::from({5, 5}, [] {
                             std::vector<double> id(25, 0.0);
                             for (int i = 0; i < 5; ++i) id[static_cast<std::size_t>(i * 6)] = 1.0;
                             return id;
                         }()),
                         scale(matmul(v, transpose(v, 0, 1)), 2.0 / vv));
    const double self = cka::linear_cka_value(a, a);
    const double ab = cka::linear_cka_value(a, b);
    const double ba = cka::linear_cka_value(b, a);
    const double rotated = cka::linear_cka_value(matmul(a, q), b);
    const double scaled = cka::linear_cka_value(scale(a, 3.5), b);
    const bool ok = std::abs(self - 1.0) <= 1e-9 && std::abs(ab - ba) <= 1e-12 && std::abs(rotated - ab) <= 1e-9 &&
                    std::abs(scaled - ab) <= 1e-9;
    return {"cka", ok,
            "self " + fmt_error(std::abs(self - 1.0)) + ", symmetry " + fmt_error(std::abs(ab - ba)) +
                ", orthogonal " + fmt_error(std::abs(rotated - ab)) + ", scaling " + fmt_error(std::abs(scaled - ab))};
}

SuiteResult decomposition_suite() {
    Rng rng(11);
    bool constant_ok = true;
    for (double c : {0.0, 1.0, -3.25, 1e6, 0.1}) {
        const Tensor x = Tensor::full({2, 30, 3}, c);
        const Decomposition d = series_decomp(x, 25);
        for (double s : d.seasonal.values()) constant_ok = constant_ok && s == 0.0;
    }
    std::size_t exact = 0, total = 0;
    double worst_ulps = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor x = random_tensor(rng, {2, 48, 3}, Domain::Any, false);
        const Decomposition d = series_decomp(x, 25);
        const auto xs = x.values(), ss = d.seasonal.values(), ts = d.trend.values();
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double r = ss[i] + ts[i];
            exact += r == xs[i];
            ++total;
            const double scale = std::max({std::abs(xs[i]), std::abs(ts[i]), std::numeric_limits<double>::min()});
            worst_ulps = std::max(worst_ulps, std::abs(r - xs[i]) / (scale * std::numeric_limits<double>::epsilon()));
        }
    }
    // Round-off of x - t followed by + t is bounded by one ulp of the larger
    // magnitude; bit-exact reconstruction is not attainable in general.
    const bool ok = constant_ok && worst_ulps <= 1.0;
    return {"decomposition", ok,
            std::string("constant input ") + (constant_ok ? "zero seasonal" : "NONZERO seasonal") +
                "; reconstruction bit-exact on " + std::to_string(exact) + "/" + std::to_string(total) +
                " entries, worst error " + fmt_error(worst_ulps) + " ulp"};
}

}  // namespace

std::vector<SuiteResult> run_selfcheck(const std::function<void(const SuiteResult&)>& on_result) {
    std::vector<SuiteResult> out;
    for (auto* suite : {&gradient_suite, &cka_suite, &decomposition_suite}) {
        out.push_back(suite());
        if (on_result) on_result(out.back());
    }
    return out;
}

}  // namespace cbf
