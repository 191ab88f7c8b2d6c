#pragma once

#include <string>
#include <vector>

#include "cbformer/ar.hpp"
#include "cbformer/autoformer.hpp"

namespace cbf {

enum class Concept { AR, HourOfDay, DayOfWeek, DayOfMonth, DayOfYear };

std::string to_string(Concept c);
Concept parse_concept(const std::string& s);

// Concepts supervised during training, in component order.
inline const std::vector<Concept>& trained_concepts() {
    static const std::vector<Concept> c{Concept::AR, Concept::HourOfDay};
    return c;
}

// Constant target matrix for one batch: the AR forecast [B, O, d] of each
// window for Concept::AR, otherwise the scaled time-feature column [B, I].
Tensor concept_target(Concept c, const Batch& batch, const ar::ArModel& ar_model, std::size_t horizon);

// AR forecasts of every window of the batch: [B, O, d].
Tensor ar_forecast_batch(const ar::ArModel& ar_model, const Tensor& x, std::size_t horizon);

}  // namespace cbf
