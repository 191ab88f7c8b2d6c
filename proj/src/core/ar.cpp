#include "cbformer/ar.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include "json.hpp"

namespace cbf::ar {

namespace {
constexpr const char* kFormat = "cbformer-ar";
constexpr int kVersion = 1;
}  // namespace

std::vector<double> ArModel::predict_next(const data::RowMatrix& history) const {
    const long T = history.rows();
    if (static_cast<std::size_t>(T) < order) {
        throw ArError("AR prediction needs " + std::to_string(order) + " past steps, got " + std::to_string(T));
    }
    if (static_cast<std::size_t>(history.cols()) != channels()) {
        throw ArError("AR model has " + std::to_string(channels()) + " channels, input has " +
                      std::to_string(history.cols()));
    }
    std::vector<double> out(channels());
    for (std::size_t c = 0; c < channels(); ++c) {
        double v = intercepts[c];
        for (std::size_t j = 0; j < order; ++j) {
            v += coefficients[c][j] * history(T - 1 - static_cast<long>(j), static_cast<long>(c));
        }
        out[c] = v;
    }
    return out;
}

ArModel fit_ar(const data::RowMatrix& series, std::size_t order, double ridge) {
    if (order == 0) throw ArError("AR order must be at least 1");
    if (!(ridge >= 0.0)) throw ArError("ridge penalty must be non-negative");
    const long N = series.rows();
    const long p = static_cast<long>(order);
    if (N < p + 1) {
        throw ArError("AR(" + std::to_string(order) + ") needs at least " + std::to_string(order + 1) +
                      " time steps, got " + std::to_string(N));
    }
    const long rows = N - p;
    ArModel model;
    model.order = order;
    model.ridge = ridge;
    for (long c = 0; c < series.cols(); ++c) {
        Eigen::MatrixXd X(rows, p);
        Eigen::VectorXd y(rows);
        for (long r = 0; r < rows; ++r) {
            const long t = r + p;
            y(r) = series(t, c);
            for (long j = 0; j < p; ++j) X(r, j) = series(t - 1 - j, c);
        }
        // Centering absorbs the intercept and keeps it out of the penalty.
        const Eigen::RowVectorXd x_mean = X.colwise().mean();
        const double y_mean = y.mean();
        X.rowwise() -= x_mean;
        y.array() -= y_mean;

        Eigen::MatrixXd A = X.transpose() * X;
        A.diagonal().array() += ridge;
        const Eigen::VectorXd rhs = X.transpose() * y;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
        const Eigen::VectorXd D = ldlt.vectorD().cwiseAbs();
        const double scale = std::max(A.diagonal().cwiseAbs().maxCoeff(), 1e-300);
        if (ldlt.info() != Eigen::Success || D.minCoeff() <= 1e-13 * scale) {
            throw ArError("AR normal matrix for channel " + std::to_string(c) +
                          " is singular; use a ridge penalty > 0");
        }
        const Eigen::VectorXd a = ldlt.solve(rhs);
        model.coefficients.emplace_back(a.data(), a.data() + a.size());
        model.intercepts.push_back(y_mean - x_mean.dot(a));
    }
    return model;
}

data::RowMatrix ar_forecast(const ArModel& model, const data::RowMatrix& x, std::size_t horizon) {
    const long I = x.rows();
    data::RowMatrix hist(I + static_cast<long>(horizon), x.cols());
    hist.topRows(I) = x;
    for (std::size_t k = 0; k < horizon; ++k) {
        const long t = I + static_cast<long>(k);
        const auto next = model.predict_next(hist.topRows(t));
        for (long c = 0; c < x.cols(); ++c) hist(t, c) = next[static_cast<std::size_t>(c)];
    }
    return hist.bottomRows(static_cast<long>(horizon));
}

void save_ar(const ArModel& model, const std::filesystem::path& path) {
    nlohmann::json j;
    j["format"] = kFormat;
    j["version"] = kVersion;
    j["order"] = model.order;
    j["ridge"] = model.ridge;
    j["coefficients"] = model.coefficients;
    j["intercepts"] = model.intercepts;
    j["dataset_id"] = model.dataset_id;
    j["normalization_id"] = model.normalization_id;
    std::ofstream out(path);
    if (!out) throw ArError("cannot write AR model '" + path.string() + "'");
    out << j.dump(1) << '\n';
}

ArModel load_ar(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ArError("cannot open AR model '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ArError("AR model '" + path.string() + "' is not valid JSON: " + e.what());
    }
    if (j.value("format", "") != kFormat || j.value("version", 0) != kVersion) {
        throw ArError("AR model '" + path.string() + "' has unsupported format or version");
    }
    ArModel m;
    m.order = j.at("order").get<std::size_t>();
    m.ridge = j.at("ridge").get<double>();
    m.coefficients = j.at("coefficients").get<std::vector<std::vector<double>>>();
    m.intercepts = j.at("intercepts").get<std::vector<double>>();
    m.dataset_id = j.value("dataset_id", "");
    m.normalization_id = j.value("normalization_id", "");
    for (const auto& row : m.coefficients) {
        if (row.size() != m.order) throw ArError("AR model coefficient rows do not match its order");
    }
    if (m.coefficients.size() != m.intercepts.size()) throw ArError("AR model channel counts disagree");
    return m;
}

}  // namespace cbf::ar
