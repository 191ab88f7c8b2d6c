#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbformer/data.hpp"

namespace cbf::ar {

class ArError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Independent per-channel linear autoregression
//   x_t = b + sum_{j=1..p} a_j x_{t-j}.
struct ArModel {
    std::size_t order = 0;
    double ridge = 0.0;
    std::vector<std::vector<double>> coefficients;  // [channel][j-1]
    std::vector<double> intercepts;
    std::string dataset_id;
    std::string normalization_id;

    std::size_t channels() const { return intercepts.size(); }
    // One-step prediction from the last `order` rows of history (T x d).
    std::vector<double> predict_next(const data::RowMatrix& history) const;
};

// Ridge least squares on a contiguous series (N x d); the intercept is not
// penalized. With ridge == 0 a singular system is rejected.
ArModel fit_ar(const data::RowMatrix& series, std::size_t order, double ridge);

// Recursive rollout: each prediction is appended to the history.
data::RowMatrix ar_forecast(const ArModel& model, const data::RowMatrix& x, std::size_t horizon);

void save_ar(const ArModel& model, const std::filesystem::path& path);
ArModel load_ar(const std::filesystem::path& path);

}  // namespace cbf::ar
