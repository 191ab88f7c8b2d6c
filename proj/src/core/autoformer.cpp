#include "cbformer/autoformer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cbformer/ops.hpp"

namespace cbf {

namespace {

thread_local DecompositionObserver g_decomp_observer;

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) out += (out.empty() ? "" : "; ") + p;
    return out;
}

class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    // Uniform in +-1/sqrt(fan_in).
    Tensor uniform(Shape shape, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        std::vector<double> v(shape_numel(shape));
        for (auto& x : v) x = dist(rng_);
        return Tensor::from(std::move(shape), std::move(v), true);
    }

    Linear linear(std::size_t in, std::size_t out, bool bias = true) {
        Linear l;
        l.weight = uniform({in, out}, in);
        if (bias) l.bias = uniform({out}, in);
        return l;
    }

    AutoCorrelationParams attention(std::size_t d_model) {
        AutoCorrelationParams p;
        p.query = linear(d_model, d_model);
        p.key = linear(d_model, d_model);
        p.value = linear(d_model, d_model);
        p.out = linear(d_model, d_model);
        return p;
    }

private:
    std::mt19937_64 rng_;
};

SeasonalNormParams make_norm(std::size_t d_model) {
    return {Tensor::full({d_model}, 1.0, true), Tensor::zeros({d_model}, true)};
}

void add_linear(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix, const Linear& l) {
    out.emplace_back(prefix + ".weight", l.weight);
    if (l.bias.defined()) out.emplace_back(prefix + ".bias", l.bias);
}

void add_attention(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                   const AutoCorrelationParams& p) {
    add_linear(out, prefix + ".query", p.query);
    add_linear(out, prefix + ".key", p.key);
    add_linear(out, prefix + ".value", p.value);
    add_linear(out, prefix + ".out", p.out);
}

}  // namespace

std::vector<std::string> ModelConfig::problems() const {
    std::vector<std::string> p;
    if (input_len < 4) p.push_back("model.input_len must be at least 4");
    if (output_len < 1) p.push_back("model.output_len must be at least 1");
    if (channels < 1) p.push_back("model.channels must be at least 1");
    if (heads < 1) p.push_back("model.heads must be at least 1");
    if (d_model < 1 || (heads >= 1 && d_model % heads != 0)) {
        p.push_back("model.d_model (" + std::to_string(d_model) + ") must be divisible by model.heads (" +
                    std::to_string(heads) + ")");
    }
    if (encoder_layers < 1) p.push_back("model.encoder_layers must be at least 1");
    if (decoder_layers < 1) p.push_back("model.decoder_layers must be at least 1");
    if (moving_avg < 1 || moving_avg % 2 == 0) p.push_back("model.moving_avg must be odd and positive");
    if (input_len >= 1 && moving_avg > 2 * input_len - 1) p.push_back("model.moving_avg exceeds 2*input_len-1");
    if (d_ff < 1) p.push_back("model.d_ff must be at least 1");
    if (!(autocorr_factor > 0.0)) p.push_back("model.autocorr_factor must be positive");
    if (effective_label_len() > input_len) p.push_back("model.label_len must not exceed model.input_len");
    if (input_len >= 4 && effective_label_len() + output_len < 4) {
        p.push_back("decoder length label_len + output_len must be at least 4");
    }
    return p;
}

void ModelConfig::validate() const {
    const auto p = problems();
    if (!p.empty()) throw ConfigError(join(p));
}

std::string to_string(BottleneckType t) {
    switch (t) {
        case BottleneckType::Att: return "att";
        case BottleneckType::FF: return "ff";
        default: return "none";
    }
}

BottleneckType parse_bottleneck_type(const std::string& s) {
    if (s == "none" || s == "None") return BottleneckType::None;
    if (s == "att" || s == "Att") return BottleneckType::Att;
    if (s == "ff" || s == "FF") return BottleneckType::FF;
    throw ConfigError("bottleneck.type must be one of none, att, ff (got '" + s + "')");
}

std::string to_string(SliceAxis a) { return a == SliceAxis::Time ? "time" : "feature"; }

SliceAxis parse_slice_axis(const std::string& s) {
    if (s == "feature") return SliceAxis::Feature;
    if (s == "time") return SliceAxis::Time;
    throw ConfigError("bottleneck.slice_axis must be feature or time (got '" + s + "')");
}

std::vector<std::string> BottleneckSpec::problems(const ModelConfig& cfg) const {
    std::vector<std::string> p;
    if (!active()) return p;
    if (components < 2 || components > 3) p.push_back("bottleneck.components must be 2 or 3");
    if (layer >= cfg.encoder_layers) {
        p.push_back("bottleneck.layer (" + std::to_string(layer) + ") must be below model.encoder_layers (" +
                    std::to_string(cfg.encoder_layers) + ")");
    }
    if (type == BottleneckType::Att && components != cfg.heads) {
        p.push_back("attention bottleneck needs model.heads (" + std::to_string(cfg.heads) +
                    ") equal to bottleneck.components (" + std::to_string(components) + ")");
    }
    if (type == BottleneckType::FF && components >= 1) {
        const std::size_t extent = slice_axis == SliceAxis::Feature ? cfg.d_model : cfg.input_len;
        if (extent % components != 0) {
            p.push_back(std::string(slice_axis == SliceAxis::Feature ? "model.d_model" : "model.input_len") + " (" +
                        std::to_string(extent) + ") must be divisible by bottleneck.components (" +
                        std::to_string(components) + ")");
        }
    }
    return p;
}

void BottleneckSpec::validate(const ModelConfig& cfg) const {
    const auto p = problems(cfg);
    if (!p.empty()) throw ConfigError(join(p));
}

Batch make_batch(const std::vector<data::TimeSeriesWindow>& windows, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
    const auto& w0 = windows.at(indices.front());
    const std::size_t B = indices.size(), I = static_cast<std::size_t>(w0.x.rows()),
                      O = static_cast<std::size_t>(w0.y.rows()), d = static_cast<std::size_t>(w0.x.cols());
    std::vector<double> x, t, y, tf;
    x.reserve(B * I * d);
    y.reserve(B * O * d);
    t.reserve(B * I * data::kTimeFeatures);
    tf.reserve(B * O * data::kTimeFeatures);
    for (std::size_t i : indices) {
        const auto& w = windows.at(i);
        x.insert(x.end(), w.x.data(), w.x.data() + w.x.size());
        t.insert(t.end(), w.t.data(), w.t.data() + w.t.size());
        y.insert(y.end(), w.y.data(), w.y.data() + w.y.size());
        tf.insert(tf.end(), w.t_future.data(), w.t_future.data() + w.t_future.size());
    }
    Batch b;
    b.x = Tensor::from({B, I, d}, std::move(x));
    b.marks = Tensor::from({B, I, data::kTimeFeatures}, std::move(t));
    b.y = Tensor::from({B, O, d}, std::move(y));
    b.future_marks = Tensor::from({B, O, data::kTimeFeatures}, std::move(tf));
    return b;
}

Tensor Linear::operator()(const Tensor& x) const {
    Tensor out = matmul(x, weight);
    return bias.defined() ? out + bias : out;
}

Decomposition series_decomp(const Tensor& x, std::size_t kernel) {
    Decomposition d;
    d.trend = moving_average(x, kernel, 1);
    d.seasonal = x - d.trend;
    if (g_decomp_observer) g_decomp_observer(x, d);
    return d;
}

void set_decomposition_observer(DecompositionObserver observer) { g_decomp_observer = std::move(observer); }

Tensor circular_taps(const Tensor& x) { return concat({roll(x, 1, 1), x, roll(x, -1, 1)}, 2); }

Autoformer::Autoformer(ModelConfig config, BottleneckSpec spec, std::uint64_t seed)
    : config_(std::move(config)), spec_(spec) {
    config_.validate();
    spec_.validate(config_);
    Initializer init(seed);
    const std::size_t dm = config_.d_model, d = config_.channels;
    auto embedding = [&] {
        EmbeddingParams e;
        e.value_weight = init.uniform({3 * d, dm}, 3 * d);
        e.time_weight = init.uniform({data::kTimeFeatures, dm}, data::kTimeFeatures);
        return e;
    };
    enc_embedding_ = embedding();
    for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
        EncoderLayerParams p;
        p.attention = init.attention(dm);
        p.ff1 = init.linear(dm, config_.d_ff);
        p.ff2 = init.linear(config_.d_ff, dm);
        encoder_.push_back(std::move(p));
    }
    encoder_norm_ = make_norm(dm);
    dec_embedding_ = embedding();
    for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
        DecoderLayerParams p;
        p.self_attention = init.attention(dm);
        p.cross_attention = init.attention(dm);
        p.ff1 = init.linear(dm, config_.d_ff);
        p.ff2 = init.linear(config_.d_ff, dm);
        p.trend_weight = init.uniform({3 * dm, d}, 3 * dm);
        decoder_.push_back(std::move(p));
    }
    decoder_norm_ = make_norm(dm);
    projection_ = init.linear(dm, d);
}

std::vector<std::pair<std::string, Tensor>> Autoformer::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("enc_embedding.value", enc_embedding_.value_weight);
    out.emplace_back("enc_embedding.time", enc_embedding_.time_weight);
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
        const std::string pre = "encoder." + std::to_string(l);
        add_attention(out, pre + ".attention", encoder_[l].attention);
        add_linear(out, pre + ".ff1", encoder_[l].ff1);
        add_linear(out, pre + ".ff2", encoder_[l].ff2);
    }
    out.emplace_back("encoder_norm.gamma", encoder_norm_.gamma);
    out.emplace_back("encoder_norm.beta", encoder_norm_.beta);
    out.emplace_back("dec_embedding.value", dec_embedding_.value_weight);
    out.emplace_back("dec_embedding.time", dec_embedding_.time_weight);
    for (std::size_t l = 0; l < decoder_.size(); ++l) {
        const std::string pre = "decoder." + std::to_string(l);
        add_attention(out, pre + ".self_attention", decoder_[l].self_attention);
        add_attention(out, pre + ".cross_attention", decoder_[l].cross_attention);
        add_linear(out, pre + ".ff1", decoder_[l].ff1);
        add_linear(out, pre + ".ff2", decoder_[l].ff2);
        out.emplace_back(pre + ".trend", decoder_[l].trend_weight);
    }
    out.emplace_back("decoder_norm.gamma", decoder_norm_.gamma);
    out.emplace_back("decoder_norm.beta", decoder_norm_.beta);
    add_linear(out, "projection", projection_);
    return out;
}

std::vector<Tensor> Autoformer::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

std::size_t Autoformer::parameter_count() const {
    std::size_t n = 0;
    for (auto& [name, t] : named_parameters()) n += t.numel();
    return n;
}

void Autoformer::zero_grad() {
    for (auto& [name, t] : named_parameters()) t.zero_grad();
}

void Autoformer::set_parameters(const std::map<std::string, std::vector<double>>& values) {
    auto params = named_parameters();
    for (auto& [name, t] : params) {
        const auto it = values.find(name);
        if (it == values.end()) throw std::invalid_argument("missing parameter '" + name + "'");
        if (it->second.size() != t.numel()) {
            throw std::invalid_argument("parameter '" + name + "' has " + std::to_string(it->second.size()) +
                                        " values, expected " + std::to_string(t.numel()));
        }
        std::copy(it->second.begin(), it->second.end(), t.mutable_values().begin());
    }
    if (values.size() != params.size()) throw std::invalid_argument("unexpected extra parameters");
}

std::size_t Autoformer::top_k(std::size_t length) const {
    const auto k = static_cast<std::size_t>(std::floor(config_.autocorr_factor * std::log(static_cast<double>(length))));
    return std::clamp<std::size_t>(k, 1, length - 1);
}

Tensor Autoformer::embed_encoder(const Tensor& x, const Tensor& marks) const {
    return matmul(circular_taps(x), enc_embedding_.value_weight) + matmul(marks, enc_embedding_.time_weight);
}

Tensor Autoformer::embed_decoder(const Tensor& x, const Tensor& marks) const {
    return matmul(circular_taps(x), dec_embedding_.value_weight) + matmul(marks, dec_embedding_.time_weight);
}

Tensor Autoformer::auto_correlation(const AutoCorrelationParams& p, const Tensor& queries, const Tensor& keys,
                                    const Tensor& values, std::vector<Tensor>* heads_out,
                                    const ComponentHook* hook) const {
    const std::size_t L = queries.dim(1), S = keys.dim(1), B = queries.dim(0), D = config_.d_model;
    const Tensor q = p.query(queries);
    Tensor k = p.key(keys);
    Tensor v = p.value(values);
    if (L > S) {
        const Tensor pad = Tensor::zeros({B, L - S, D});
        k = concat({k, pad}, 1);
        v = concat({v, pad}, 1);
    } else if (L < S) {
        k = slice(k, 1, 0, L);
        v = slice(v, 1, 0, L);
    }
    const std::size_t h = config_.heads, e = config_.head_width(), kk = top_k(L);
    std::vector<Tensor> heads;
    heads.reserve(h);
    for (std::size_t i = 0; i < h; ++i) {
        const Tensor qi = slice(q, 2, i * e, (i + 1) * e);
        const Tensor ki = slice(k, 2, i * e, (i + 1) * e);
        const Tensor vi = slice(v, 2, i * e, (i + 1) * e);
        const Tensor corr = lag_correlation(qi, ki);
        const auto lags = topk_indices(corr, kk);
        const Tensor weights = softmax(gather_last(corr, lags, kk), -1);
        heads.push_back(delay_aggregate(vi, weights, lags));
    }
    if (heads_out) *heads_out = heads;
    if (hook && *hook) {
        for (std::size_t i = 0; i < h; ++i) heads[i] = (*hook)(i, heads[i]);
    }
    return p.out(concat(heads, 2));
}

Tensor Autoformer::decompose_seasonal(const Tensor& x) const { return series_decomp(x, config_.moving_avg).seasonal; }

Tensor Autoformer::seasonal_norm(const SeasonalNormParams& p, const Tensor& x) const {
    const Tensor xh = layer_norm(x) * p.gamma + p.beta;
    return xh - mean(xh, 1, true);
}

Tensor Autoformer::feed_forward(const Linear& ff1, const Linear& ff2, const Tensor& x) const {
    return ff2(relu(ff1(x)));
}

Tensor Autoformer::encoder_layer(std::size_t layer, const Tensor& x, LayerTrace* trace,
                                 const ComponentHook* hook) const {
    const auto& p = encoder_.at(layer);
    const bool bottleneck = spec_.active() && layer == spec_.layer;
    const bool att = bottleneck && spec_.type == BottleneckType::Att;
    const bool ff = bottleneck && spec_.type == BottleneckType::FF;

    std::vector<Tensor> heads;
    const Tensor a = auto_correlation(p.attention, x, x, x, &heads, att ? hook : nullptr);
    const Tensor s1 = decompose_seasonal(att ? a : x + a);

    Tensor z = feed_forward(p.ff1, p.ff2, s1);
    const std::size_t c = spec_.active() ? spec_.components : config_.heads;
    const int axis = spec_.type == BottleneckType::FF && spec_.slice_axis == SliceAxis::Time ? 1 : 2;
    std::vector<Tensor> slices;
    if (ff || trace) slices = split(z, c, axis);
    Tensor out;
    if (ff) {
        std::vector<Tensor> used = slices;
        if (hook && *hook) {
            for (std::size_t i = 0; i < c; ++i) used[i] = (*hook)(i, used[i]);
        }
        out = decompose_seasonal(concat(used, axis));
    } else {
        out = decompose_seasonal(z + s1);
    }
    if (trace) {
        trace->heads = std::move(heads);
        trace->ff_slices = std::move(slices);
        trace->output = out;
    }
    return out;
}

Tensor Autoformer::encoder_norm(const Tensor& x) const { return seasonal_norm(encoder_norm_, x); }

Tensor Autoformer::encode_prefix(const Tensor& embedded, std::size_t stop, std::vector<LayerTrace>* traces,
                                 const ComponentHook* hook) const {
    Tensor h = embedded;
    for (std::size_t l = 0; l < stop && l < encoder_.size(); ++l) {
        if (traces) {
            LayerTrace t;
            h = encoder_layer(l, h, &t, hook);
            traces->push_back(std::move(t));
        } else {
            h = encoder_layer(l, h, nullptr, hook);
        }
    }
    return h;
}

Tensor Autoformer::encode_suffix(const Tensor& state, std::size_t start, std::vector<LayerTrace>* traces) const {
    Tensor h = state;
    for (std::size_t l = start; l < encoder_.size(); ++l) {
        if (traces) {
            LayerTrace t;
            h = encoder_layer(l, h, &t, nullptr);
            traces->push_back(std::move(t));
        } else {
            h = encoder_layer(l, h, nullptr, nullptr);
        }
    }
    return h;
}

Tensor Autoformer::decode(const Tensor& encoder_out, const Tensor& x, const Tensor& marks,
                          const Tensor& future_marks) const {
    const std::size_t B = x.dim(0), I = config_.input_len, O = config_.output_len, d = config_.channels;
    const std::size_t label = config_.effective_label_len();
    if (x.dim(1) != I || x.dim(2) != d || marks.dim(1) != I || future_marks.dim(1) != O) {
        throw ShapeError("decode: input shapes " + shape_str(x.shape()) + ", " + shape_str(marks.shape()) + ", " +
                         shape_str(future_marks.shape()) + " do not match the model configuration");
    }
    const Decomposition init = series_decomp(x, config_.moving_avg);
    const Tensor future_zeros = Tensor::zeros({B, O, d});
    Tensor trend = concat({slice(init.trend, 1, I - label, I), future_zeros + mean(x, 1, true)}, 1);
    const Tensor seasonal_init = concat({slice(init.seasonal, 1, I - label, I), future_zeros}, 1);
    const Tensor dec_marks = concat({slice(marks, 1, I - label, I), future_marks}, 1);

    Tensor h = embed_decoder(seasonal_init, dec_marks);
    for (const auto& p : decoder_) {
        const Decomposition d1 = series_decomp(h + auto_correlation(p.self_attention, h, h, h), config_.moving_avg);
        h = d1.seasonal;
        const Decomposition d2 =
            series_decomp(h + auto_correlation(p.cross_attention, h, encoder_out, encoder_out), config_.moving_avg);
        h = d2.seasonal;
        const Decomposition d3 = series_decomp(h + feed_forward(p.ff1, p.ff2, h), config_.moving_avg);
        h = d3.seasonal;
        const Tensor residual_trend = d1.trend + d2.trend + d3.trend;
        trend = trend + matmul(circular_taps(residual_trend), p.trend_weight);
    }
    const Tensor seasonal = projection_(seasonal_norm(decoder_norm_, h));
    return slice(trend + seasonal, 1, label, label + O);
}

ForwardResult Autoformer::forward(const Batch& batch, bool trace, const ComponentHook* hook) const {
    ForwardResult r;
    const Tensor emb = embed_encoder(batch.x, batch.marks);
    const Tensor enc = encode_prefix(emb, config_.encoder_layers, trace ? &r.layers : nullptr, hook);
    r.forecast = decode(encoder_norm(enc), batch.x, batch.marks, batch.future_marks);
    return r;
}

const std::vector<Tensor>& Autoformer::components(const LayerTrace& trace) const {
    return spec_.type == BottleneckType::FF ? trace.ff_slices : trace.heads;
}

}  // namespace cbf
