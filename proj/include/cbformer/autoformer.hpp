#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cbformer/data.hpp"
#include "cbformer/tensor.hpp"

namespace cbf {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
    std::size_t input_len = 96;
    std::size_t output_len = 24;
    std::size_t channels = 1;
    std::size_t d_model = 33;
    std::size_t heads = 3;
    std::size_t encoder_layers = 3;
    std::size_t decoder_layers = 1;
    std::size_t moving_avg = 25;
    std::size_t d_ff = 128;
    double autocorr_factor = 2.0;
    // Overlap between encoder input and decoder seed; 0 means input_len / 2.
    std::size_t label_len = 0;

    std::size_t effective_label_len() const { return label_len == 0 ? input_len / 2 : label_len; }
    std::size_t head_width() const { return d_model / heads; }
    // Collects every violated invariant.
    std::vector<std::string> problems() const;
    void validate() const;
};

enum class BottleneckType { None, Att, FF };
enum class SliceAxis { Feature, Time };

std::string to_string(BottleneckType t);
BottleneckType parse_bottleneck_type(const std::string& s);
std::string to_string(SliceAxis a);
SliceAxis parse_slice_axis(const std::string& s);

// Component 1 carries the AR concept, component 2 hour-of-day, component 3
// (when present) is unsupervised.
struct BottleneckSpec {
    BottleneckType type = BottleneckType::None;
    std::size_t layer = 1;  // 0-based encoder layer index
    std::size_t components = 3;
    SliceAxis slice_axis = SliceAxis::Feature;

    bool active() const { return type != BottleneckType::None; }
    std::vector<std::string> problems(const ModelConfig& cfg) const;
    void validate(const ModelConfig& cfg) const;
};

// Lets callers replace bottleneck components: receives the component index and
// the computed block, returns the block the layer should use.
using ComponentHook = std::function<Tensor(std::size_t index, const Tensor& computed)>;

struct LayerTrace {
    std::vector<Tensor> heads;      // h blocks [B, I, d_model/h], before the output projection
    std::vector<Tensor> ff_slices;  // feed-forward output split into c blocks
    Tensor output;                  // [B, I, d_model]
};

struct Batch {
    Tensor x;            // [B, I, d]
    Tensor marks;        // [B, I, 4]
    Tensor future_marks; // [B, O, 4]
    Tensor y;            // [B, O, d]
    std::size_t size() const { return x.defined() ? x.dim(0) : 0; }
};

Batch make_batch(const std::vector<data::TimeSeriesWindow>& windows, const std::vector<std::size_t>& indices);

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out] or undefined
    Tensor operator()(const Tensor& x) const;
};

struct AutoCorrelationParams {
    Linear query, key, value, out;
};

struct EncoderLayerParams {
    AutoCorrelationParams attention;
    Linear ff1, ff2;
};

struct DecoderLayerParams {
    AutoCorrelationParams self_attention;
    AutoCorrelationParams cross_attention;
    Linear ff1, ff2;
    Tensor trend_weight;  // [3 * d_model, d], circular kernel-3 convolution
};

struct EmbeddingParams {
    Tensor value_weight;  // [3 * d, d_model], circular kernel-3 convolution
    Tensor time_weight;   // [4, d_model]
};

struct SeasonalNormParams {
    Tensor gamma, beta;
};

struct ForwardResult {
    Tensor forecast;                  // [B, O, d]
    std::vector<LayerTrace> layers;   // filled when tracing
};

class Autoformer {
public:
    Autoformer(ModelConfig config, BottleneckSpec spec, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    const BottleneckSpec& spec() const { return spec_; }

    // Stable order; names are unique.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;
    std::size_t parameter_count() const;
    void zero_grad();

    Tensor embed_encoder(const Tensor& x, const Tensor& marks) const;
    Tensor embed_decoder(const Tensor& x, const Tensor& marks) const;

    // One encoder layer. Components are passed through `hook` only when this
    // is the bottleneck layer. The trace, when given, receives heads,
    // feed-forward slices and the output.
    Tensor encoder_layer(std::size_t layer, const Tensor& x, LayerTrace* trace = nullptr,
                         const ComponentHook* hook = nullptr) const;
    Tensor encoder_norm(const Tensor& x) const;

    // Runs encoder layers [0, stop) from the embedded input.
    Tensor encode_prefix(const Tensor& embedded, std::size_t stop, std::vector<LayerTrace>* traces = nullptr,
                         const ComponentHook* hook = nullptr) const;
    // Runs encoder layers [start, L) on an intermediate state.
    Tensor encode_suffix(const Tensor& state, std::size_t start, std::vector<LayerTrace>* traces = nullptr) const;

    // Decodes a normalized encoder output into the forecast.
    Tensor decode(const Tensor& encoder_out, const Tensor& x, const Tensor& marks,
                  const Tensor& future_marks) const;

    ForwardResult forward(const Batch& batch, bool trace = false, const ComponentHook* hook = nullptr) const;

    // Bottleneck components of the traced layer per the spec (heads for Att,
    // slices for FF); for a plain model the heads.
    const std::vector<Tensor>& components(const LayerTrace& trace) const;

    std::size_t top_k(std::size_t length) const;

    void set_parameters(const std::map<std::string, std::vector<double>>& values);

private:
    Tensor auto_correlation(const AutoCorrelationParams& p, const Tensor& queries, const Tensor& keys,
                            const Tensor& values, std::vector<Tensor>* heads_out = nullptr,
                            const ComponentHook* hook = nullptr) const;
    Tensor decompose_seasonal(const Tensor& x) const;
    Tensor seasonal_norm(const SeasonalNormParams& p, const Tensor& x) const;
    Tensor feed_forward(const Linear& ff1, const Linear& ff2, const Tensor& x) const;

    ModelConfig config_;
    BottleneckSpec spec_;
    EmbeddingParams enc_embedding_, dec_embedding_;
    std::vector<EncoderLayerParams> encoder_;
    SeasonalNormParams encoder_norm_;
    std::vector<DecoderLayerParams> decoder_;
    SeasonalNormParams decoder_norm_;
    Linear projection_;
};

// Trend = centered moving average with replicated edges; seasonal = x - trend.
struct Decomposition {
    Tensor seasonal;
    Tensor trend;
};
Decomposition series_decomp(const Tensor& x, std::size_t kernel);

// Every decomposition computed during a forward pass is reported here when
// set; used by exactness checks. Not thread safe; tests only.
using DecompositionObserver = std::function<void(const Tensor& input, const Decomposition& parts)>;
void set_decomposition_observer(DecompositionObserver observer);

// x: [B, L, m] -> [B, L, 3m] rows (x[t-1], x[t], x[t+1]) with circular wrap.
Tensor circular_taps(const Tensor& x);

}  // namespace cbf
