#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "motortemp/linalg.hpp"

namespace motortemp {

double mse(std::span<const double> y, std::span<const double> yhat);
double mae(std::span<const double> y, std::span<const double> yhat);
double linf(std::span<const double> y, std::span<const double> yhat);
// Throws NumericError when y is constant (SS_tot = 0).
double r_squared(std::span<const double> y, std::span<const double> yhat);

struct TargetMetrics {
    std::string target;
    double mse = 0.0;
    double mae = 0.0;
    double linf = 0.0;
    double r2 = 0.0;
    std::size_t n = 0;

    bool operator==(const TargetMetrics&) const = default;
};

struct MetricsReport {
    std::vector<TargetMetrics> targets;

    const TargetMetrics& at(std::string_view target) const;
    // Mean of the per-target MSEs.
    double mean_mse() const;
    bool operator==(const MetricsReport&) const = default;
};

// Columns of y/yhat are targets named by `names`.
MetricsReport compute_report(const Matrix& y, const Matrix& yhat, const std::vector<std::string>& names);

void to_json(nlohmann::json& j, const TargetMetrics& m);
void from_json(const nlohmann::json& j, TargetMetrics& m);
void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

}  // namespace motortemp
