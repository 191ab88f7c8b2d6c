#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "cbformer/data.hpp"
#include "cbformer/fft.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cbf::data;
namespace fs = std::filesystem;

namespace {

fs::path write_file(const std::string& name, const std::string& text) {
    const fs::path dir = fs::temp_directory_path() / "cbformer_unit";
    fs::create_directories(dir);
    const fs::path p = dir / name;
    std::ofstream(p) << text;
    return p;
}

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const DataError& e) {
        return e.what();
    }
    return "";
}

std::vector<Instant> hourly(const std::string& start, std::size_t n) {
    std::vector<Instant> t;
    for (std::size_t i = 0; i < n; ++i) t.push_back(parse_instant(start) + std::chrono::hours(i));
    return t;
}

}  // namespace

TEST_CASE("load_csv reads an hourly series") {
    const auto p = write_file("three.csv",
                              "date,a,b\n2016-07-01 00:00:00,1,2\n2016-07-01 01:00:00,3,4\n2016-07-01 02:00:00,5,6.5\n");
    const RawSeries s = load_csv(p);
    CHECK(s.length() == 3);
    CHECK(s.channel_count() == 2);
    CHECK(s.spacing_seconds == 3600);
    CHECK(s.channels == std::vector<std::string>{"a", "b"});
    CHECK(s.values(2, 1) == 6.5);
}

TEST_CASE("load_csv errors name the offending row") {
    const auto gap = write_file("gap.csv", "date,a\n2016-07-01 00:00:00,1\n2016-07-01 01:00:00,2\n2016-07-01 03:00:00,3\n");
    const std::string g = error_of([&] { load_csv(gap); });
    CHECK(g.find("index 2") != std::string::npos);
    CHECK(g.find("7200") != std::string::npos);

    const auto bad = write_file("bad.csv", "date,a,b\n2016-07-01 00:00:00,1,2\n2016-07-01 01:00:00,x,4\n");
    const std::string b = error_of([&] { load_csv(bad); });
    CHECK(b.find("row 2") != std::string::npos);
    CHECK(b.find("'a'") != std::string::npos);

    CHECK_THROWS_AS(load_csv(write_file("nodate.csv", "time,a\n2016-07-01 00:00:00,1\n")), DataError);
    CHECK_THROWS_AS(load_csv(fs::temp_directory_path() / "cbformer_unit" / "missing.csv"), DataError);
}

TEST_CASE("electricity-format CSV with 321 customers") {
    std::string text = "date";
    for (int c = 0; c < 321; ++c) text += ",MT_" + std::to_string(c);
    text += "\n";
    for (int r = 0; r < 4; ++r) {
        text += "2016-07-01 0" + std::to_string(r) + ":00:00";
        for (int c = 0; c < 321; ++c) text += "," + std::to_string(r * 1000 + c);
        text += "\n";
    }
    const RawSeries s = load_csv(write_file("elec.csv", text));
    CHECK(s.channel_count() == 321);
    CHECK(s.values(3, 320) == 3320.0);
}

TEST_CASE("csv round trip") {
    RawSeries s = synth_hourly(cbf::test::tiny_synth(50));
    const auto p = fs::temp_directory_path() / "cbformer_unit" / "roundtrip.csv";
    write_csv(s, p);
    const RawSeries back = load_csv(p);
    CHECK(back.timestamps == s.timestamps);
    CHECK(back.values == s.values);
}

TEST_CASE("time features") {
    const auto midnight = parse_instant("2016-07-04 00:00:00");
    const auto f = extract_time_features(std::vector<Instant>{midnight, midnight + std::chrono::hours(12),
                                                              midnight + std::chrono::hours(23)});
    CHECK(f(0, 0) == -0.5);
    CHECK(f(1, 0) == doctest::Approx(0.0217391304347826).epsilon(1e-12));
    CHECK(f(2, 0) == 0.5);
    CHECK(f(0, 1) == -0.5);  // 2016-07-04 is a Monday

    const auto year = hourly("2016-01-01 00:00:00", 366 * 24 + 30);
    const auto all = extract_time_features(year);
    CHECK(all.minCoeff() >= -0.5);
    CHECK(all.maxCoeff() <= 0.5);
    CHECK(all.col(3).maxCoeff() == 0.5);  // day 366 of a leap year
}

TEST_CASE("timestamp shifts") {
    const auto t = hourly("2016-07-01 00:00:00", 48);
    CHECK(shift_timestamps(t, 0) == t);
    const auto f0 = extract_time_features(t);
    const auto f24 = extract_time_features(shift_timestamps(t, 24));
    CHECK(f24.col(0) == f0.col(0));
    const auto f12 = extract_time_features(shift_timestamps(t, 12));
    CHECK(f12(0, 0) == f0(12, 0));
    CHECK(f12(0, 0) == 12.0 / 23.0 - 0.5);

    std::vector<Instant> daily{t[0], t[0] + std::chrono::hours(24), t[0] + std::chrono::hours(48)};
    CHECK_THROWS_AS(shift_timestamps(daily, 3), DataError);
}

TEST_CASE("normalization uses train statistics") {
    const RawSeries raw = synth_hourly(cbf::test::tiny_synth(1000));
    const Dataset ds = prepare_dataset(raw, SplitSpec{});
    CHECK(ds.train.length() == 700);
    CHECK(ds.val.length() == 100);
    CHECK(ds.test.length() == 200);
    CHECK(ds.test.offset == 800);
    for (long c = 0; c < 2; ++c) {
        const auto col = ds.train.values.col(c);
        const double m = col.mean();
        const double sd = std::sqrt((col.array() - m).square().sum() / static_cast<double>(col.size()));
        CHECK(std::abs(m) <= 1e-9);
        CHECK(std::abs(sd - 1.0) <= 1e-9);
    }
    CHECK(ds.test.raw_values == raw.values.bottomRows(200));
    const RowMatrix back = ds.normalizer.invert(ds.test.values);
    CHECK((back - ds.test.raw_values).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("split and normalization errors") {
    CHECK_THROWS_AS((SplitSpec{0.5, 0.2, 0.2}.validate()), DataError);
    RawSeries s = synth_hourly(cbf::test::tiny_synth(100));
    s.values.col(1).setConstant(4.0);
    CHECK_THROWS_AS(prepare_dataset(s, SplitSpec{}), DataError);
}

TEST_CASE("window counts and alignment") {
    RawSeries raw = synth_hourly(cbf::test::tiny_synth(1000));
    const Dataset ds = prepare_dataset(raw, SplitSpec{});
    SplitData part = ds.train;
    part.timestamps.resize(200);
    part.values.conservativeResize(200, Eigen::NoChange);
    part.raw_values.conservativeResize(200, Eigen::NoChange);
    part.features.conservativeResize(200, Eigen::NoChange);
    CHECK(make_windows(part, 96, 96, 1).size() == 9);
    CHECK(make_windows(part, 96, 24, 5).size() == (200 - 96 - 24) / 5 + 1);
    CHECK_THROWS_AS(make_windows(part, 150, 60, 1), DataError);
    CHECK_THROWS_AS(make_windows(part, 96, 24, 0), DataError);

    const auto w = make_windows(ds.train, 96, 24, 7);
    const auto& w3 = w[3];
    CHECK(w3.start == 21);
    CHECK(w3.x == ds.train.values.middleRows(21, 96));
    CHECK(w3.y == ds.train.values.middleRows(117, 24));
    CHECK(w3.t == ds.train.features.middleRows(21, 96));
    CHECK(w3.t_future == ds.train.features.middleRows(117, 24));
}

TEST_CASE("synthetic generator") {
    SynthSpec pure;
    pure.length = 100;
    pure.channel_phase = 0.0;
    const RawSeries s = synth_hourly(pure);
    for (long i = 0; i < 100; ++i) {
        CHECK(s.values(i, 0) == doctest::Approx(std::sin(2.0 * std::numbers::pi * double(i) / 24.0)).epsilon(1e-15));
    }

    const auto spec = cbf::test::tiny_synth(500, 3);
    CHECK(synth_hourly(spec).values == synth_hourly(spec).values);
    auto other = spec;
    other.seed = 4;
    CHECK(synth_hourly(other).values != synth_hourly(spec).values);

    SynthSpec none;
    none.sinusoids = {{12.0, 1.0, 0.0}};
    CHECK_THROWS_AS(none.validate(), DataError);
}

TEST_CASE("both periodicities are recoverable from the spectrum") {
    SynthSpec spec;
    spec.length = 24 * 7 * 12;
    spec.sinusoids = {{24.0, 1.0, 0.0}, {168.0, 1.0, 0.3}};
    spec.noise_std = 0.1;
    spec.seed = 12;
    const RawSeries s = synth_hourly(spec);
    std::vector<double> x(s.values.col(0).data(), s.values.col(0).data() + spec.length);
    const auto spec_half = cbf::fft::rfft(x);
    std::vector<std::pair<double, std::size_t>> mags;
    for (std::size_t k = 1; k < spec_half.size(); ++k) mags.emplace_back(std::abs(spec_half[k]), k);
    std::sort(mags.rbegin(), mags.rend());
    std::vector<double> periods{double(spec.length) / double(mags[0].second),
                                double(spec.length) / double(mags[1].second)};
    std::sort(periods.begin(), periods.end());
    CHECK(periods[0] == doctest::Approx(24.0));
    CHECK(periods[1] == doctest::Approx(168.0));
}

TEST_CASE("hour profile is centred with unit RMS") {
    double s = 0.0, sq = 0.0;
    for (int h = 0; h < 24; ++h) {
        s += hour_profile(h);
        sq += hour_profile(h) * hour_profile(h);
    }
    CHECK(std::abs(s) <= 1e-12);
    CHECK(sq / 24.0 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(hour_profile(19) > hour_profile(8));
    CHECK(hour_profile(8) > hour_profile(3));
}
