#include "motortemp/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "motortemp/errors.hpp"

namespace motortemp {

namespace {

void check_lengths(std::span<const double> y, std::span<const double> yhat) {
    if (y.size() != yhat.size()) {
        throw DataError("metric inputs differ in length (" + std::to_string(y.size()) + " vs " +
                        std::to_string(yhat.size()) + ")");
    }
    if (y.empty()) throw DataError("metric inputs are empty");
}

}  // namespace

double mse(std::span<const double> y, std::span<const double> yhat) {
    check_lengths(y, yhat);
    double sum = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) sum += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    return sum / static_cast<double>(y.size());
}

double mae(std::span<const double> y, std::span<const double> yhat) {
    check_lengths(y, yhat);
    double sum = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) sum += std::abs(y[i] - yhat[i]);
    return sum / static_cast<double>(y.size());
}

double linf(std::span<const double> y, std::span<const double> yhat) {
    check_lengths(y, yhat);
    double worst = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) worst = std::max(worst, std::abs(y[i] - yhat[i]));
    return worst;
}

double r_squared(std::span<const double> y, std::span<const double> yhat) {
    check_lengths(y, yhat);
    if (y.size() < 2) throw DataError("R^2 needs at least 2 samples");
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    double ss_res = 0.0;
    double ss_tot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
        ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    if (ss_tot == 0.0) throw NumericError("R^2 is undefined for a constant target");
    return 1.0 - ss_res / ss_tot;
}

const TargetMetrics& MetricsReport::at(std::string_view target) const {
    for (const auto& t : targets) {
        if (t.target == target) return t;
    }
    throw DataError("no metrics for target '" + std::string(target) + "'");
}

double MetricsReport::mean_mse() const {
    if (targets.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& t : targets) sum += t.mse;
    return sum / static_cast<double>(targets.size());
}

MetricsReport compute_report(const Matrix& y, const Matrix& yhat, const std::vector<std::string>& names) {
    if (y.rows() != yhat.rows() || y.cols() != yhat.cols() || static_cast<std::size_t>(y.cols()) != names.size()) {
        throw DataError("metrics: shape mismatch between targets, predictions and names");
    }
    MetricsReport report;
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
        Vector a = y.col(c);
        Vector b = yhat.col(c);
        std::span<const double> ys(a.data(), static_cast<std::size_t>(a.size()));
        std::span<const double> ps(b.data(), static_cast<std::size_t>(b.size()));
        report.targets.push_back({names[c], mse(ys, ps), mae(ys, ps), linf(ys, ps), r_squared(ys, ps), ys.size()});
    }
    return report;
}

void to_json(nlohmann::json& j, const TargetMetrics& m) {
    j = {{"target", m.target}, {"mse", m.mse}, {"mae", m.mae}, {"linf", m.linf}, {"r2", m.r2}, {"n", m.n}};
}

void from_json(const nlohmann::json& j, TargetMetrics& m) {
    m.target = j.at("target").get<std::string>();
    m.mse = j.at("mse").get<double>();
    m.mae = j.at("mae").get<double>();
    m.linf = j.at("linf").get<double>();
    m.r2 = j.at("r2").get<double>();
    m.n = j.at("n").get<std::size_t>();
}

void to_json(nlohmann::json& j, const MetricsReport& r) { j = r.targets; }

void from_json(const nlohmann::json& j, MetricsReport& r) { r.targets = j.get<std::vector<TargetMetrics>>(); }

}  // namespace motortemp
