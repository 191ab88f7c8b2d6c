#include "cbformer/intervention.hpp"

#include <cmath>
#include <numeric>

namespace cbf {

namespace {

constexpr std::size_t kTimeComponent = 1;

void check_model(const Autoformer& model) {
    const auto& spec = model.spec();
    if (!spec.active()) throw InterventionError("intervention requires a bottleneck model (bottleneck.type is none)");
    if (spec.components != 3) {
        throw InterventionError("intervention requires exactly three bottleneck components, model has " +
                                std::to_string(spec.components));
    }
}

// Component 2 of the bottleneck layer computed from the given stamps.
Tensor time_component(const Autoformer& model, const Tensor& x, const Tensor& marks, std::size_t* layers_run) {
    const std::size_t bottleneck = model.spec().layer;
    const Tensor state = model.encode_prefix(model.embed_encoder(x, marks), bottleneck);
    LayerTrace trace;
    model.encoder_layer(bottleneck, state, &trace);
    if (layers_run) *layers_run += bottleneck + 1;
    return model.components(trace).at(kTimeComponent);
}

struct ErrorSums {
    double se = 0.0, ae = 0.0;
    std::size_t n = 0;
    void add(const Tensor& pred, const Tensor& truth) {
        const auto p = pred.values();
        const auto y = truth.values();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double d = p[i] - y[i];
            se += d * d;
            ae += std::abs(d);
        }
        n += p.size();
    }
    Metrics metrics() const { return {se / static_cast<double>(n), ae / static_cast<double>(n)}; }
};

}  // namespace

Tensor intervened_forward(const Autoformer& model, const Batch& shifted, const Tensor& clean_marks,
                          InterventionCounters* counters, SubstituteSource source) {
    check_model(model);
    if (clean_marks.shape() != shifted.marks.shape()) {
        throw ShapeError("intervened_forward: clean stamps " + shape_str(clean_marks.shape()) +
                         " do not match shifted stamps " + shape_str(shifted.marks.shape()));
    }
    std::size_t layers_run = 0;
    const Tensor substitute = source == SubstituteSource::Clean
                                  ? time_component(model, shifted.x, clean_marks, &layers_run)
                                  : time_component(model, shifted.x, shifted.marks, nullptr);
    std::size_t consumed = 0;
    const ComponentHook hook = [&](std::size_t index, const Tensor& computed) {
        if (index != kTimeComponent) return computed;
        ++consumed;
        return substitute;
    };
    const std::size_t bottleneck = model.spec().layer;
    const Tensor state = model.encode_prefix(model.embed_encoder(shifted.x, shifted.marks), bottleneck);
    const Tensor mixed = model.encoder_layer(bottleneck, state, nullptr, &hook);
    const Tensor encoded = model.encode_suffix(mixed, bottleneck + 1);
    const Tensor forecast = model.decode(model.encoder_norm(encoded), shifted.x, shifted.marks, shifted.future_marks);
    if (counters) {
        counters->clean_layers_run += layers_run;
        if (source == SubstituteSource::Clean) counters->clean_components_consumed += consumed;
    }
    return forecast;
}

std::vector<data::TimeSeriesWindow> shifted_windows(const data::SplitData& split, std::size_t input_len,
                                                    std::size_t output_len, long hours) {
    data::SplitData moved = split;
    moved.features = data::extract_time_features(data::shift_timestamps(split.timestamps, hours));
    return data::make_windows(moved, input_len, output_len);
}

nlohmann::json to_json(const ShiftRecord& r) {
    auto m = [](const Metrics& x) { return nlohmann::json{{"mse", x.mse}, {"mae", x.mae}}; };
    return {{"shift", r.shift}, {"shifted", m(r.shifted)}, {"intervened", m(r.intervened)}, {"baseline", m(r.baseline)}};
}

std::vector<ShiftRecord> shift_sweep(const Autoformer& model, const data::SplitData& split,
                                     const std::vector<long>& shifts, bool shift_future, std::size_t batch_size) {
    check_model(model);
    const std::size_t I = model.config().input_len, O = model.config().output_len;
    const auto base = data::make_windows(split, I, O);
    const Metrics baseline = evaluate(model, base, batch_size);
    std::vector<std::size_t> order(base.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::vector<ShiftRecord> out;
    for (long s : shifts) {
        if (s < 0) throw InterventionError("shifts must be non-negative hours, got " + std::to_string(s));
        auto moved = shifted_windows(split, I, O, s);
        if (!shift_future) {
            for (std::size_t i = 0; i < moved.size(); ++i) moved[i].t_future = base[i].t_future;
        }
        ShiftRecord rec;
        rec.shift = s;
        rec.baseline = baseline;
        ErrorSums plain, intervened;
        for (std::size_t i = 0; i < order.size(); i += batch_size) {
            const std::vector<std::size_t> idx(order.begin() + static_cast<long>(i),
                                               order.begin() + static_cast<long>(std::min(order.size(), i + batch_size)));
            const Batch shifted = make_batch(moved, idx);
            const Batch clean = make_batch(base, idx);
            plain.add(model.forward(shifted).forecast, shifted.y);
            intervened.add(intervened_forward(model, shifted, clean.marks), shifted.y);
        }
        rec.shifted = plain.metrics();
        rec.intervened = intervened.metrics();
        out.push_back(rec);
    }
    return out;
}

}  // namespace cbf
