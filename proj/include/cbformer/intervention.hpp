#pragma once

#include <vector>

#include "cbformer/autoformer.hpp"
#include "cbformer/data.hpp"
#include "cbformer/training.hpp"
#include "json.hpp"

namespace cbf {

class InterventionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Instrumentation of one intervened forward pass.
struct InterventionCounters {
    std::size_t clean_layers_run = 0;            // encoder layers evaluated on the clean stream
    std::size_t clean_components_consumed = 0;   // clean blocks substituted into the shifted stream
};

enum class SubstituteSource { Clean, Shifted };

// Runs the shifted stream (batch.marks / batch.future_marks hold the shifted
// stamps) and, at the bottleneck layer only, replaces component 2 (index 1)
// by the one computed from `clean_marks`. With SubstituteSource::Shifted the
// replacement comes from the shifted stream itself.
Tensor intervened_forward(const Autoformer& model, const Batch& shifted, const Tensor& clean_marks,
                          InterventionCounters* counters = nullptr,
                          SubstituteSource source = SubstituteSource::Clean);

// Windows of a split whose time features were computed from stamps delayed
// by `hours`; values are unchanged.
std::vector<data::TimeSeriesWindow> shifted_windows(const data::SplitData& split, std::size_t input_len,
                                                    std::size_t output_len, long hours);

struct ShiftRecord {
    long shift = 0;
    Metrics shifted;     // shifted stamps, no intervention
    Metrics intervened;  // shifted stamps, clean time component
    Metrics baseline;    // original stamps
};

nlohmann::json to_json(const ShiftRecord& r);

// When shift_future is false the decoder keeps the original future stamps.
std::vector<ShiftRecord> shift_sweep(const Autoformer& model, const data::SplitData& split,
                                     const std::vector<long>& shifts, bool shift_future = true,
                                     std::size_t batch_size = 32);

}  // namespace cbf
