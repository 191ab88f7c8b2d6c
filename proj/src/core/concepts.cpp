#include "cbformer/concepts.hpp"

namespace cbf {

std::string to_string(Concept c) {
    switch (c) {
        case Concept::AR: return "ar";
        case Concept::HourOfDay: return "hour_of_day";
        case Concept::DayOfWeek: return "day_of_week";
        case Concept::DayOfMonth: return "day_of_month";
        case Concept::DayOfYear: return "day_of_year";
    }
    return "unknown";
}

Concept parse_concept(const std::string& s) {
    for (Concept c : {Concept::AR, Concept::HourOfDay, Concept::DayOfWeek, Concept::DayOfMonth, Concept::DayOfYear}) {
        if (to_string(c) == s) return c;
    }
    throw ConfigError("unknown concept '" + s + "' (expected ar, hour_of_day, day_of_week, day_of_month, day_of_year)");
}

Tensor ar_forecast_batch(const ar::ArModel& ar_model, const Tensor& x, std::size_t horizon) {
    const std::size_t B = x.dim(0), I = x.dim(1), d = x.dim(2);
    std::vector<double> out;
    out.reserve(B * horizon * d);
    for (std::size_t b = 0; b < B; ++b) {
        const data::RowMatrix window =
            Eigen::Map<const data::RowMatrix>(x.values().data() + b * I * d, static_cast<long>(I), static_cast<long>(d));
        const data::RowMatrix f = ar::ar_forecast(ar_model, window, horizon);
        out.insert(out.end(), f.data(), f.data() + f.size());
    }
    return Tensor::from({B, horizon, d}, std::move(out));
}

Tensor concept_target(Concept c, const Batch& batch, const ar::ArModel& ar_model, std::size_t horizon) {
    if (c == Concept::AR) return ar_forecast_batch(ar_model, batch.x, horizon);
    const std::size_t column = static_cast<std::size_t>(c) - 1;
    const std::size_t B = batch.marks.dim(0), I = batch.marks.dim(1), F = batch.marks.dim(2);
    std::vector<double> out(B * I);
    const double* m = batch.marks.values().data();
    for (std::size_t i = 0; i < B * I; ++i) out[i] = m[i * F + column];
    return Tensor::from({B, I}, std::move(out));
}

}  // namespace cbf
