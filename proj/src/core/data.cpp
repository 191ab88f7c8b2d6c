#include "cbformer/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace cbf::data {

using namespace std::chrono;

namespace {

std::string trim(std::string s) {
    const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
    s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
    s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace

Instant parse_instant(const std::string& text) {
    const std::string s = trim(text);
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
    char sep = ' ';
    int consumed = 0;
    const int fields = std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d:%d%n", &y, &mo, &d, &sep, &h, &mi, &sec, &consumed);
    bool ok = false;
    if (fields == 7) {
        ok = (sep == ' ' || sep == 'T') &&
             (static_cast<std::size_t>(consumed) == s.size() ||
              (static_cast<std::size_t>(consumed) + 1 == s.size() && s.back() == 'Z'));
    } else if (fields == 6) {
        ok = (sep == ' ' || sep == 'T') && s.size() <= 16;
        sec = 0;
    } else if (fields == 3) {
        ok = s.size() <= 10;
        h = mi = sec = 0;
    }
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ok || !ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || sec < 0 || sec > 59) {
        throw DataError("unparseable ISO-8601 instant '" + s + "'");
    }
    return sys_days{ymd} + hours{h} + minutes{mi} + seconds{sec};
}

std::string format_instant(Instant t) {
    const auto dp = floor<days>(t);
    const year_month_day ymd{dp};
    const hh_mm_ss hms{t - dp};
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02ld:%02ld:%02ld", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()),
                  static_cast<long>(hms.seconds().count()));
    return buf;
}

std::int64_t validate_spacing(std::span<const Instant> timestamps) {
    if (timestamps.size() < 2) return 0;
    const auto spacing = (timestamps[1] - timestamps[0]).count();
    if (spacing <= 0) throw DataError("timestamps not strictly increasing at index 1");
    for (std::size_t i = 2; i < timestamps.size(); ++i) {
        const auto gap = (timestamps[i] - timestamps[i - 1]).count();
        if (gap != spacing) {
            throw DataError("non-uniform spacing at index " + std::to_string(i) + ": gap of " + std::to_string(gap) +
                            " s, expected " + std::to_string(spacing) + " s");
        }
    }
    return spacing;
}

RawSeries load_csv(const std::filesystem::path& path, const std::string& date_column) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open CSV '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("CSV '" + path.string() + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);  // BOM
    auto header = split_csv_line(line);
    if (header.empty() || header[0] != date_column) {
        throw DataError("CSV header must start with column '" + date_column + "'");
    }
    if (header.size() < 2) throw DataError("CSV has no value columns");

    RawSeries series;
    series.channels.assign(header.begin() + 1, header.end());
    const std::size_t d = series.channels.size();
    std::vector<double> flat;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        ++row;
        auto cells = split_csv_line(line);
        if (cells.size() != d + 1) {
            throw DataError("row " + std::to_string(row) + ": expected " + std::to_string(d + 1) + " cells, got " +
                            std::to_string(cells.size()));
        }
        series.timestamps.push_back(parse_instant(cells[0]));
        for (std::size_t c = 0; c < d; ++c) {
            const std::string& cell = cells[c + 1];
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (cell.empty() || end != cell.c_str() + cell.size() || !std::isfinite(v)) {
                throw DataError("row " + std::to_string(row) + ", column '" + series.channels[c] +
                                "': non-numeric cell '" + cell + "'");
            }
            flat.push_back(v);
        }
    }
    series.values = Eigen::Map<RowMatrix>(flat.data(), static_cast<long>(row), static_cast<long>(d));
    series.spacing_seconds = validate_spacing(series.timestamps);
    return series;
}

void write_csv(const RawSeries& series, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write CSV '" + path.string() + "'");
    out << "date";
    for (const auto& c : series.channels) out << ',' << c;
    out << '\n';
    out.precision(17);
    for (std::size_t i = 0; i < series.length(); ++i) {
        out << format_instant(series.timestamps[i]);
        for (long c = 0; c < series.values.cols(); ++c) out << ',' << series.values(static_cast<long>(i), c);
        out << '\n';
    }
}

RowMatrix extract_time_features(std::span<const Instant> timestamps) {
    RowMatrix f(static_cast<long>(timestamps.size()), static_cast<long>(kTimeFeatures));
    for (std::size_t i = 0; i < timestamps.size(); ++i) {
        const auto dp = floor<days>(timestamps[i]);
        const year_month_day ymd{dp};
        const hh_mm_ss hms{timestamps[i] - dp};
        const auto hour = static_cast<double>(hms.hours().count());
        const auto dow = static_cast<double>(weekday{dp}.iso_encoding() - 1);
        const auto dom = static_cast<double>(static_cast<unsigned>(ymd.day()) - 1);
        const auto doy = static_cast<double>((dp - sys_days{ymd.year() / January / 1}).count());
        const long r = static_cast<long>(i);
        f(r, 0) = hour / 23.0 - 0.5;
        f(r, 1) = dow / 6.0 - 0.5;
        f(r, 2) = dom / 30.0 - 0.5;
        f(r, 3) = doy / 365.0 - 0.5;
    }
    return f;
}

std::vector<Instant> shift_timestamps(std::span<const Instant> timestamps, long hours_shift) {
    if (timestamps.size() >= 2) {
        const auto spacing = validate_spacing(timestamps);
        if (spacing != 3600) {
            throw DataError("timestamp shift requires hourly data, spacing is " + std::to_string(spacing) + " s");
        }
    }
    std::vector<Instant> out(timestamps.begin(), timestamps.end());
    for (auto& t : out) t += hours{hours_shift};
    return out;
}

void SplitSpec::validate() const {
    if (train <= 0.0 || val < 0.0 || test <= 0.0 || std::abs(train + val + test - 1.0) > 1e-9) {
        throw DataError("split fractions must be positive and sum to 1");
    }
}

Normalizer Normalizer::fit(const RowMatrix& train_values) {
    Normalizer n;
    const long rows = train_values.rows();
    if (rows < 2) throw DataError("normalization needs at least two training rows");
    for (long c = 0; c < train_values.cols(); ++c) {
        long double s = 0.0L;
        for (long r = 0; r < rows; ++r) s += train_values(r, c);
        const long double mu = s / rows;
        long double ss = 0.0L;
        for (long r = 0; r < rows; ++r) ss += (train_values(r, c) - mu) * (train_values(r, c) - mu);
        const double sd = static_cast<double>(std::sqrt(ss / rows));
        if (!(sd > 1e-12 * std::max(1.0, std::abs(static_cast<double>(mu))))) {
            throw DataError("channel " + std::to_string(c) + " has zero variance in the training split");
        }
        n.mean.push_back(static_cast<double>(mu));
        n.stddev.push_back(sd);
    }
    return n;
}

RowMatrix Normalizer::apply(const RowMatrix& values) const {
    RowMatrix out = values;
    for (long c = 0; c < out.cols(); ++c)
        for (long r = 0; r < out.rows(); ++r) out(r, c) = (values(r, c) - mean[static_cast<std::size_t>(c)]) / stddev[static_cast<std::size_t>(c)];
    return out;
}

RowMatrix Normalizer::invert(const RowMatrix& values) const {
    RowMatrix out = values;
    for (long c = 0; c < out.cols(); ++c)
        for (long r = 0; r < out.rows(); ++r) out(r, c) = values(r, c) * stddev[static_cast<std::size_t>(c)] + mean[static_cast<std::size_t>(c)];
    return out;
}

std::string Normalizer::id() const {
    // FNV-1a over the statistics' bit patterns.
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xFF;
            h *= 1099511628211ULL;
        }
    };
    for (double v : mean) mix(v);
    for (double v : stddev) mix(v);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

const SplitData& Dataset::by_name(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw DataError("unknown split '" + name + "'");
}

Dataset prepare_dataset(const RawSeries& series, const SplitSpec& split) {
    split.validate();
    const std::size_t n = series.length();
    const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * split.train));
    const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * split.val));
    const std::size_t n_test = n - n_train - n_val;
    if (n_train < 2 || n_test < 1) throw DataError("series of length " + std::to_string(n) + " too short to split");

    Dataset ds;
    ds.split = split;
    ds.spacing_seconds = series.spacing_seconds;
    ds.channels = series.channels;
    ds.normalizer = Normalizer::fit(series.values.topRows(static_cast<long>(n_train)));
    auto make = [&](const char* name, std::size_t offset, std::size_t len) {
        SplitData s;
        s.name = name;
        s.offset = offset;
        s.timestamps.assign(series.timestamps.begin() + static_cast<long>(offset),
                            series.timestamps.begin() + static_cast<long>(offset + len));
        s.raw_values = series.values.middleRows(static_cast<long>(offset), static_cast<long>(len));
        s.values = ds.normalizer.apply(s.raw_values);
        s.features = extract_time_features(s.timestamps);
        return s;
    };
    ds.train = make("train", 0, n_train);
    ds.val = make("val", n_train, n_val);
    ds.test = make("test", n_train + n_val, n_test);
    return ds;
}

std::vector<TimeSeriesWindow> make_windows(const SplitData& split, std::size_t input_len, std::size_t output_len,
                                           std::size_t stride) {
    if (input_len == 0 || output_len == 0 || stride == 0) {
        throw DataError("window lengths and stride must be positive");
    }
    const std::size_t n = split.length();
    if (n < input_len + output_len) {
        throw DataError("split '" + split.name + "' has " + std::to_string(n) + " steps, shorter than I+O=" +
                        std::to_string(input_len + output_len));
    }
    const std::size_t count = (n - input_len - output_len) / stride + 1;
    std::vector<TimeSeriesWindow> out;
    out.reserve(count);
    const long I = static_cast<long>(input_len), O = static_cast<long>(output_len);
    for (std::size_t w = 0; w < count; ++w) {
        const long s = static_cast<long>(w * stride);
        TimeSeriesWindow win;
        win.start = w * stride;
        win.x = split.values.middleRows(s, I);
        win.t = split.features.middleRows(s, I);
        win.y = split.values.middleRows(s + I, O);
        win.t_future = split.features.middleRows(s + I, O);
        out.push_back(std::move(win));
    }
    return out;
}

void SynthSpec::validate() const {
    const bool daily = hour_profile_amplitude != 0.0 ||
                       std::any_of(sinusoids.begin(), sinusoids.end(),
                                   [](const Sinusoid& s) { return s.period == 24.0 && s.amplitude != 0.0; });
    if (!daily) throw DataError("synthetic series needs a daily (24-step) component");
    if (length < 2 || channels == 0) throw DataError("synthetic series needs length >= 2 and channels >= 1");
    for (const auto& s : sinusoids) {
        if (!(s.period > 0.0)) throw DataError("sinusoid period must be positive");
    }
    if (noise_std < 0.0 || ar_innovation_std < 0.0) throw DataError("noise levels must be non-negative");
}

double hour_profile(int hour) {
    static const std::array<double, 24> table = [] {
        std::array<double, 24> raw{};
        auto bump = [](int h, double center, double width) {
            double d = std::abs(h - center);
            d = std::min(d, 24.0 - d);
            return std::exp(-d * d / (2.0 * width * width));
        };
        for (int h = 0; h < 24; ++h) raw[static_cast<std::size_t>(h)] = bump(h, 8.0, 2.0) + 1.5 * bump(h, 19.0, 2.5);
        double mu = 0.0;
        for (double v : raw) mu += v;
        mu /= 24.0;
        double ss = 0.0;
        for (double& v : raw) {
            v -= mu;
            ss += v * v;
        }
        const double rms = std::sqrt(ss / 24.0);
        for (double& v : raw) v /= rms;
        return raw;
    }();
    return table[static_cast<std::size_t>(((hour % 24) + 24) % 24)];
}

double synth_profile_value(const SynthSpec& spec, std::size_t channel, int hour) {
    return spec.hour_profile_amplitude * (1.0 + static_cast<double>(channel) * spec.channel_gain) * hour_profile(hour);
}

double synth_hour_signal(const SynthSpec& spec, std::size_t channel, int hour) {
    const Instant start = parse_instant(spec.start);
    const auto dp = floor<days>(start);
    const long start_hour = static_cast<long>(hh_mm_ss{start - dp}.hours().count());
    // Step index of the first occurrence of `hour`; 24-step sinusoids repeat daily.
    const double i = static_cast<double>(((hour - start_hour) % 24 + 24) % 24);
    double v = synth_profile_value(spec, channel, hour);
    for (const auto& s : spec.sinusoids) {
        if (s.period != 24.0) continue;
        v += s.amplitude *
             std::sin(2.0 * std::numbers::pi * i / s.period + s.phase + static_cast<double>(channel) * spec.channel_phase);
    }
    return v;
}

RawSeries synth_hourly(const SynthSpec& spec) {
    spec.validate();
    RawSeries series;
    const Instant start = parse_instant(spec.start);
    series.timestamps.resize(spec.length);
    for (std::size_t i = 0; i < spec.length; ++i) series.timestamps[i] = start + hours{static_cast<long>(i)};
    series.spacing_seconds = spec.length >= 2 ? 3600 : 0;
    for (std::size_t c = 0; c < spec.channels; ++c) series.channels.push_back("ch" + std::to_string(c));

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    series.values.resize(static_cast<long>(spec.length), static_cast<long>(spec.channels));
    for (std::size_t c = 0; c < spec.channels; ++c) {
        // AR(2) component with burn-in so it starts near stationarity.
        const std::size_t burn = 200;
        std::vector<double> ar(spec.length + burn, 0.0);
        for (std::size_t t = 2; t < ar.size(); ++t) {
            const double e = spec.ar_innovation_std > 0.0 ? spec.ar_innovation_std * normal(rng) : 0.0;
            ar[t] = spec.ar_phi1 * ar[t - 1] + spec.ar_phi2 * ar[t - 2] + e;
        }
        for (std::size_t i = 0; i < spec.length; ++i) {
            const double ti = static_cast<double>(i);
            double v = 0.0;
            for (const auto& s : spec.sinusoids) {
                v += s.amplitude * std::sin(2.0 * std::numbers::pi * ti / s.period + s.phase +
                                            static_cast<double>(c) * spec.channel_phase);
            }
            const auto dp = floor<days>(series.timestamps[i]);
            const int hour = static_cast<int>(hh_mm_ss{series.timestamps[i] - dp}.hours().count());
            v += synth_profile_value(spec, c, hour);
            v += ar[i + burn];
            if (spec.noise_std > 0.0) v += spec.noise_std * normal(rng);
            series.values(static_cast<long>(i), static_cast<long>(c)) = v;
        }
    }
    return series;
}

}  // namespace cbf::data
