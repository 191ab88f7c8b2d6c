#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "cbformer/checkpoint.hpp"
#include "cbformer/gradcheck.hpp"
#include "cbformer/ops.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cbf;
using cbf::test::bit_equal;
using cbf::test::random_batch;
using cbf::test::random_tensor;
using cbf::test::spec_of;
using cbf::test::tiny_config;

namespace {

void zero_all(Autoformer& m) {
    std::map<std::string, std::vector<double>> z;
    for (const auto& [name, t] : m.named_parameters()) z[name] = std::vector<double>(t.numel(), 0.0);
    m.set_parameters(z);
}

Batch slice_batch(const Batch& b, std::size_t i) {
    Batch s;
    s.x = slice(b.x, 0, i, i + 1).detach();
    s.marks = slice(b.marks, 0, i, i + 1).detach();
    s.future_marks = slice(b.future_marks, 0, i, i + 1).detach();
    return s;
}

}  // namespace

TEST_CASE("configuration validation") {
    ModelConfig c = tiny_config();
    CHECK(c.problems().empty());
    c.d_model = 32;
    CHECK(c.problems().size() == 1);
    c.moving_avg = 4;
    CHECK(c.problems().size() == 2);
    CHECK_THROWS_AS(c.validate(), ConfigError);

    const ModelConfig ok = tiny_config();
    CHECK(spec_of(BottleneckType::FF).problems(ok).empty());
    CHECK(spec_of(BottleneckType::Att).problems(ok).empty());
    CHECK(spec_of(BottleneckType::Att, 2).problems(ok).size() == 1);
    ModelConfig odd = ok;
    odd.d_model = 9;
    odd.heads = 3;
    CHECK(spec_of(BottleneckType::FF, 2).problems(odd).size() == 1);
    BottleneckSpec deep = spec_of(BottleneckType::FF);
    deep.layer = 3;
    CHECK(deep.problems(ok).size() == 1);
    CHECK(spec_of(BottleneckType::FF, 4).problems(ok).size() >= 1);
    CHECK_THROWS_AS(Autoformer(ok, spec_of(BottleneckType::Att, 2), 0), ConfigError);
    CHECK_THROWS_AS(parse_bottleneck_type("mlp"), ConfigError);
}

TEST_CASE("series decomposition") {
    const Tensor x = Tensor::from({1, 5, 1}, {1, 2, 3, 4, 5});
    const Decomposition d = series_decomp(x, 3);
    const std::vector<double> trend{4.0 / 3, 2, 3, 4, 14.0 / 3};
    for (std::size_t t = 0; t < 5; ++t) {
        CHECK(d.trend.values()[t] == doctest::Approx(trend[t]).epsilon(1e-15));
        CHECK(d.seasonal.values()[t] == x.values()[t] - d.trend.values()[t]);
    }
    const Decomposition c = series_decomp(Tensor::full({2, 40, 3}, -1.7), 25);
    for (double v : c.seasonal.values()) CHECK(v == 0.0);
    for (double v : c.trend.values()) CHECK(v == -1.7);
}

TEST_CASE("embedding") {
    Autoformer m(tiny_config(), spec_of(BottleneckType::None), 1);
    std::mt19937_64 rng(3);
    const Batch b = random_batch(m.config(), 2, rng);
    CHECK(m.embed_encoder(b.x, b.marks).shape() == Shape{2, 16, 12});
    zero_all(m);
    const Tensor e = m.embed_encoder(b.x, b.marks);
    for (double v : e.values()) CHECK(v == 0.0);

    ModelConfig wide = tiny_config();
    wide.channels = 5;
    Autoformer w(wide, spec_of(BottleneckType::None), 1);
    const Batch bw = random_batch(wide, 2, rng);
    CHECK(w.embed_encoder(bw.x, bw.marks).shape() == Shape{2, 16, 12});

    const Autoformer g(tiny_config(), spec_of(BottleneckType::None), 2);
    const Tensor probe = random_tensor({2, 16, 12}, rng);
    for (const auto& [name, p] : g.named_parameters()) {
        if (name.rfind("enc_embedding", 0) != 0) continue;
        const auto r = grad_check([&] { return sum(g.embed_encoder(b.x, b.marks) * probe); }, p, 1e-6);
        CHECK(r.max_rel_error <= 1e-4);
    }
}

TEST_CASE("delay aggregation of a constant value stream is constant") {
    std::mt19937_64 rng(5);
    const Tensor v = Tensor::full({2, 20, 4}, 0.3);
    const Tensor corr = lag_correlation(random_tensor({2, 20, 4}, rng), random_tensor({2, 20, 4}, rng));
    const auto lags = topk_indices(corr, 5);
    const Tensor out = delay_aggregate(v, softmax(gather_last(corr, lags, 5), -1), lags);
    CHECK(out.shape() == Shape{2, 20, 4});
    for (double x : out.values()) CHECK(x == doctest::Approx(0.3).epsilon(1e-14));
}

TEST_CASE("lag correlation of a periodic signal selects its period") {
    const std::size_t L = 96, p = 24;
    std::vector<double> q(L * 2);
    for (std::size_t t = 0; t < L; ++t) {
        q[t * 2] = std::sin(2.0 * std::numbers::pi * double(t) / double(p));
        q[t * 2 + 1] = std::cos(2.0 * std::numbers::pi * double(t) / double(p));
    }
    const Tensor s = Tensor::from({1, L, 2}, q);
    const auto lags = topk_indices(lag_correlation(s, s), 9);
    const std::set<std::size_t> chosen(lags.begin(), lags.end());
    CHECK(chosen.count(0) == 1);
    CHECK(chosen.count(p) == 1);
    CHECK(chosen.count(2 * p) == 1);
}

TEST_CASE("encoder layers preserve shape") {
    for (auto type : {BottleneckType::None, BottleneckType::FF, BottleneckType::Att}) {
        Autoformer m(tiny_config(), spec_of(type), 4);
        std::mt19937_64 rng(8);
        Tensor h = random_tensor({3, 16, 12}, rng);
        for (std::size_t l = 0; l < 3; ++l) {
            h = m.encoder_layer(l, h);
            CHECK(h.shape() == Shape{3, 16, 12});
        }
    }
}

TEST_CASE("zeroed weights reduce a layer to its decompositions") {
    Autoformer m(tiny_config(), spec_of(BottleneckType::FF), 4);
    zero_all(m);
    std::mt19937_64 rng(9);
    const Tensor x = random_tensor({2, 16, 12}, rng);
    const Tensor want = series_decomp(series_decomp(x, 5).seasonal, 5).seasonal;
    CHECK(test::max_abs_diff(m.encoder_layer(0, x), want) <= 1e-15);
    // The bottleneck layer has no residual, so nothing survives.
    const Tensor silent = m.encoder_layer(1, x);
    for (double v : silent.values()) CHECK(v == 0.0);
}

TEST_CASE("zeroed decoder weights forecast the trend initialization") {
    Autoformer m(tiny_config(), spec_of(BottleneckType::None), 4);
    zero_all(m);
    std::mt19937_64 rng(10);
    const Batch b = random_batch(m.config(), 2, rng);
    const Tensor f = m.forward(b).forecast;
    CHECK(f.shape() == Shape{2, 8, 2});
    const Tensor mx = mean(b.x, 1, true);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t t = 0; t < 8; ++t)
            for (std::size_t c = 0; c < 2; ++c) CHECK(f.at({i, t, c}) == mx.at({i, 0, c}));
}

TEST_CASE("feed-forward components stack back to the bottleneck block") {
    Autoformer m(tiny_config(), spec_of(BottleneckType::FF), 4);
    std::mt19937_64 rng(12);
    const Batch b = random_batch(m.config(), 2, rng);
    const auto r = m.forward(b, true);
    REQUIRE(r.layers.size() == 3);
    const auto& comps = m.components(r.layers[1]);
    REQUIRE(comps.size() == 3);
    for (const auto& c : comps) CHECK(c.shape() == Shape{2, 16, 4});
    CHECK(bit_equal(series_decomp(concat(comps, 2), 5).seasonal, r.layers[1].output));

    Autoformer att(tiny_config(), spec_of(BottleneckType::Att), 4);
    const auto ra = att.forward(b, true);
    REQUIRE(att.components(ra.layers[1]).size() == 3);
    for (const auto& c : att.components(ra.layers[1])) CHECK(c.shape() == Shape{2, 16, 4});
}

TEST_CASE("bottleneck exclusivity under record and replay") {
    for (auto type : {BottleneckType::FF, BottleneckType::Att}) {
        CAPTURE(to_string(type));
        Autoformer m(tiny_config(), spec_of(type), 6);
        std::mt19937_64 rng(14);
        const Tensor a = random_tensor({2, 16, 12}, rng), b = random_tensor({2, 16, 12}, rng);
        LayerTrace ta;
        const Tensor out_a = m.encoder_layer(1, a, &ta);
        const auto recorded = m.components(ta);
        const ComponentHook replay = [&](std::size_t i, const Tensor&) { return recorded[i]; };
        CHECK(bit_equal(m.encoder_layer(1, b, nullptr, &replay), out_a));
        CHECK_FALSE(bit_equal(m.encoder_layer(1, b), out_a));

        // A plain layer keeps its residual, so replaying heads does not pin the output.
        LayerTrace t0;
        const Tensor out0 = m.encoder_layer(0, a, &t0);
        const auto heads = t0.heads;
        const ComponentHook replay0 = [&](std::size_t i, const Tensor&) { return heads[i]; };
        CHECK_FALSE(bit_equal(m.encoder_layer(0, b, nullptr, &replay0), out0));
    }
}

TEST_CASE("plain model keeps every residual") {
    Autoformer plain(tiny_config(), spec_of(BottleneckType::None), 6);
    Autoformer ff(tiny_config(), spec_of(BottleneckType::FF), 6);
    std::mt19937_64 rng(15);
    const Tensor x = random_tensor({2, 16, 12}, rng);
    CHECK(bit_equal(plain.encoder_layer(0, x), ff.encoder_layer(0, x)));
    CHECK_FALSE(bit_equal(plain.encoder_layer(1, x), ff.encoder_layer(1, x)));
    CHECK(bit_equal(plain.encoder_layer(2, x), ff.encoder_layer(2, x)));
}

TEST_CASE("forward is deterministic and batch independent") {
    Autoformer m(tiny_config(), spec_of(BottleneckType::Att), 7);
    std::mt19937_64 rng(16);
    const Batch b = random_batch(m.config(), 4, rng);
    const Tensor f = m.forward(b).forecast;
    CHECK(bit_equal(f, m.forward(b).forecast));
    for (std::size_t i = 0; i < 4; ++i) {
        const Tensor fi = m.forward(slice_batch(b, i)).forecast;
        for (std::size_t j = 0; j < fi.numel(); ++j) {
            CHECK(std::abs(fi.values()[j] - f.values()[i * fi.numel() + j]) <= 1e-12);
        }
    }
}

TEST_CASE("every parameter receives a gradient") {
    for (auto type : {BottleneckType::None, BottleneckType::FF, BottleneckType::Att}) {
        CAPTURE(to_string(type));
        Autoformer m(tiny_config(), spec_of(type), 8);
        std::mt19937_64 rng(17);
        const Batch b = random_batch(m.config(), 3, rng);
        mse_loss(m.forward(b).forecast, b.y).backward();
        for (const auto& [name, p] : m.named_parameters()) {
            CAPTURE(name);
            REQUIRE(p.has_grad());
            double norm = 0.0;
            for (double g : p.grad()) norm += g * g;
            CHECK(norm > 0.0);
        }
    }
}

TEST_CASE("full-model gradients reach encoder and decoder weights") {
    ModelConfig c = tiny_config();
    c.d_model = 6;
    c.d_ff = 8;
    Autoformer m(c, spec_of(BottleneckType::FF), 9);
    std::mt19937_64 rng(18);
    const Batch b = random_batch(c, 2, rng);
    std::uniform_int_distribution<std::size_t> pick;
    for (const auto& [name, p] : m.named_parameters()) {
        if (name.find("decoder.0.") != 0 && name.find("encoder.1.ff") != 0) continue;
        CAPTURE(name);
        std::vector<std::size_t> coords{pick(rng) % p.numel(), pick(rng) % p.numel()};
        const auto r = grad_check([&] { return mse_loss(m.forward(b).forecast, b.y); }, p, 1e-6, coords);
        CHECK(r.max_rel_error <= 1e-4);
    }
}

TEST_CASE("checkpoint round trip") {
    Autoformer m(tiny_config(), spec_of(BottleneckType::Att), 11);
    AdamState st;
    st.step = 7;
    const std::size_t np = m.named_parameters().back().second.numel();
    st.m["projection.bias"] = std::vector<double>(np, 0.5);
    st.v["projection.bias"] = std::vector<double>(np, 0.25);
    Checkpoint bad = Checkpoint::capture(m, 11, &st);
    bad.optimizer.v.clear();
    CHECK_THROWS_AS(save_checkpoint(bad, std::filesystem::temp_directory_path() / "cbformer_unit_bad.bin"),
                    CheckpointError);
    Checkpoint ck = Checkpoint::capture(m, 11, &st);
    ck.metadata["note"] = "unit";
    const auto dir = std::filesystem::temp_directory_path() / "cbformer_unit";
    std::filesystem::create_directories(dir);
    const auto p = dir / "model.bin";
    save_checkpoint(ck, p);
    const Checkpoint back = load_checkpoint(p);
    CHECK(back.seed == 11);
    CHECK(back.spec.type == BottleneckType::Att);
    CHECK(back.model.d_model == 12);
    CHECK(back.names == ck.names);
    CHECK(back.parameters == ck.parameters);
    CHECK(back.optimizer.step == 7);
    CHECK(back.optimizer.m == st.m);
    CHECK(back.optimizer.v == st.v);
    CHECK(back.metadata["note"] == "unit");

    std::mt19937_64 rng(19);
    const Batch b = random_batch(m.config(), 2, rng);
    CHECK(bit_equal(back.instantiate()->forward(b).forecast, m.forward(b).forecast));

    const auto p2 = dir / "model2.bin";
    save_checkpoint(back, p2);
    CHECK(file_hash(p) == file_hash(p2));

    {
        std::ofstream(dir / "broken.bin", std::ios::binary) << "NOTACKPT";
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "broken.bin"), CheckpointError);
    std::filesystem::resize_file(p2, std::filesystem::file_size(p2) - 8);
    CHECK_THROWS_AS(load_checkpoint(p2), CheckpointError);
}
