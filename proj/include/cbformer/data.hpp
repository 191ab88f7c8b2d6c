#pragma once

#include <Eigen/Core>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbf::data {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Instant = std::chrono::sys_seconds;

inline constexpr std::size_t kTimeFeatures = 4;

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

Instant parse_instant(const std::string& text);
std::string format_instant(Instant t);

struct RawSeries {
    std::vector<Instant> timestamps;
    RowMatrix values;  // N x d
    std::vector<std::string> channels;
    std::int64_t spacing_seconds = 0;

    std::size_t length() const { return timestamps.size(); }
    std::size_t channel_count() const { return static_cast<std::size_t>(values.cols()); }
};

// Checks strictly increasing, uniformly spaced stamps and returns the spacing.
std::int64_t validate_spacing(std::span<const Instant> timestamps);

// First column `date_column` (ISO-8601), remaining columns numeric channels.
RawSeries load_csv(const std::filesystem::path& path, const std::string& date_column = "date");
void write_csv(const RawSeries& series, const std::filesystem::path& path);

// Columns: hour-of-day, day-of-week, day-of-month, day-of-year, each mapped
// affinely onto [-0.5, 0.5].
RowMatrix extract_time_features(std::span<const Instant> timestamps);

// Delays every stamp by `hours`; requires hourly spacing.
std::vector<Instant> shift_timestamps(std::span<const Instant> timestamps, long hours);

struct SplitSpec {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
    void validate() const;
};

struct Normalizer {
    std::vector<double> mean;
    std::vector<double> stddev;

    static Normalizer fit(const RowMatrix& train_values);
    RowMatrix apply(const RowMatrix& values) const;
    RowMatrix invert(const RowMatrix& values) const;
    std::string id() const;
};

// One chronological split, already normalized with train statistics.
struct SplitData {
    std::string name;
    std::size_t offset = 0;  // first row in the source series
    std::vector<Instant> timestamps;
    RowMatrix values;
    RowMatrix raw_values;
    RowMatrix features;

    std::size_t length() const { return timestamps.size(); }
};

struct Dataset {
    SplitSpec split;
    Normalizer normalizer;
    SplitData train;
    SplitData val;
    SplitData test;
    std::int64_t spacing_seconds = 0;
    std::vector<std::string> channels;

    const SplitData& by_name(const std::string& name) const;
};

Dataset prepare_dataset(const RawSeries& series, const SplitSpec& split);

struct TimeSeriesWindow {
    RowMatrix x;         // I x d
    RowMatrix t;         // I x 4
    RowMatrix y;         // O x d
    RowMatrix t_future;  // O x 4
    std::size_t start = 0;  // within the split
};

// Count = floor((N_split - I - O) / stride) + 1.
std::vector<TimeSeriesWindow> make_windows(const SplitData& split, std::size_t input_len,
                                           std::size_t output_len, std::size_t stride = 1);

struct Sinusoid {
    double period = 24.0;
    double amplitude = 1.0;
    double phase = 0.0;
};

struct SynthSpec {
    std::size_t length = 3000;
    std::size_t channels = 1;
    std::string start = "2016-07-01 00:00:00";
    std::vector<Sinusoid> sinusoids{{24.0, 1.0, 0.0}};
    // Additive hour-of-day profile (see hour_profile); zero disables it.
    double hour_profile_amplitude = 0.0;
    // Stationary AR(2) component x_t = phi1 x_{t-1} + phi2 x_{t-2} + e_t.
    double ar_phi1 = 0.0;
    double ar_phi2 = 0.0;
    double ar_innovation_std = 0.0;
    double noise_std = 0.0;
    // Channel c scales the hour profile by (1 + c * channel_gain) and shifts
    // sinusoid phases by c * channel_phase.
    double channel_gain = 0.25;
    double channel_phase = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

// Zero-mean, unit-RMS daily shape with a morning and a stronger evening peak.
double hour_profile(int hour);

RawSeries synth_hourly(const SynthSpec& spec);

// Deterministic (noise-free) hour-of-day profile contribution of a channel.
double synth_profile_value(const SynthSpec& spec, std::size_t channel, int hour);

// Every noise-free part of a channel that depends on the hour of day only:
// the profile plus the 24-step sinusoids.
double synth_hour_signal(const SynthSpec& spec, std::size_t channel, int hour);

}  // namespace cbf::data
