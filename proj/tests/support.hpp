#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>

#include "motortemp/dataset.hpp"
#include "motortemp/linalg.hpp"
#include "motortemp/rng.hpp"

namespace testsupport {

using motortemp::Matrix;

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, motortemp::Rng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
    return m;
}

// |a - b| relative to the larger magnitude, floored so near-zero pairs compare absolutely.
inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central difference of f() with respect to the scalar x, restoring x afterwards.
template <class F>
double central_diff(F&& f, double& x, double h) {
    const double saved = x;
    x = saved + h;
    const double up = f();
    x = saved - h;
    const double down = f();
    x = saved;
    return (up - down) / (2.0 * h);
}

// Largest relative gap between an analytic gradient block and central differences.
template <class F>
double max_fd_gap(F&& f, double* params, const double* analytic, Eigen::Index n, double h, double floor = 1e-6) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        worst = std::max(worst, rel_err(analytic[i], central_diff(f, params[i], h), floor));
    }
    return worst;
}

// Small profile with smooth, non-constant signals on every channel.
inline motortemp::Profile wave_profile(const std::string& id, std::size_t n, double phase,
                                       motortemp::DynamicsClass dyn = motortemp::DynamicsClass::slow) {
    motortemp::Profile p{id, dyn, {}};
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i);
        motortemp::Sample s;
        s.t = static_cast<std::int64_t>(i);
        s.n_m = 700 + 600 * std::sin(0.013 * t + phase);
        s.I_m = 15 + 10 * std::sin(0.021 * t + 2 * phase);
        s.T_ref = 30 + 3 * std::sin(0.004 * t + phase);
        s.T_W = 40 + 0.4 * s.I_m + 0.2 * s.T_ref + std::sin(0.03 * t);
        s.T_DE = 30 + 0.003 * s.n_m + 0.3 * s.T_ref;
        s.T_NDE = 31 + 0.002 * s.n_m + 0.35 * s.T_ref + 0.1 * std::cos(0.05 * t);
        p.samples.push_back(s);
    }
    return p;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("motortemp_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testsupport
