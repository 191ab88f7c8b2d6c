#pragma once

#include <random>
#include <vector>

#include "cbformer/autoformer.hpp"
#include "cbformer/data.hpp"
#include "cbformer/tensor.hpp"

namespace cbf::test {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = false) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = n(rng);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    const auto x = a.values(), y = b.values();
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] != y[i]) return false;
    }
    return true;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
    return m;
}

// Small model: I=16, O=8, d=2, d_model=12, 3 heads, 3 components.
inline ModelConfig tiny_config() {
    ModelConfig c;
    c.input_len = 16;
    c.output_len = 8;
    c.channels = 2;
    c.d_model = 12;
    c.heads = 3;
    c.encoder_layers = 3;
    c.decoder_layers = 1;
    c.moving_avg = 5;
    c.d_ff = 16;
    return c;
}

inline BottleneckSpec spec_of(BottleneckType t, std::size_t components = 3) {
    BottleneckSpec s;
    s.type = t;
    s.layer = 1;
    s.components = components;
    return s;
}

inline data::SynthSpec tiny_synth(std::size_t length = 600, std::uint64_t seed = 7) {
    data::SynthSpec s;
    s.length = length;
    s.channels = 2;
    s.hour_profile_amplitude = 1.0;
    s.ar_phi1 = 0.5;
    s.ar_phi2 = 0.3;
    s.ar_innovation_std = 0.3;
    s.noise_std = 0.1;
    s.seed = seed;
    return s;
}

inline Batch random_batch(const ModelConfig& c, std::size_t B, std::mt19937_64& rng) {
    Batch b;
    b.x = random_tensor({B, c.input_len, c.channels}, rng);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    std::vector<double> m(B * c.input_len * 4), f(B * c.output_len * 4);
    for (auto& v : m) v = u(rng);
    for (auto& v : f) v = u(rng);
    b.marks = Tensor::from({B, c.input_len, 4}, m);
    b.future_marks = Tensor::from({B, c.output_len, 4}, f);
    b.y = random_tensor({B, c.output_len, c.channels}, rng);
    return b;
}

}  // namespace cbf::test
