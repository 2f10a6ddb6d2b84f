#pragma once

#include <cstdint>

#include <nlohmann/json_fwd.hpp>

#include "motortemp/linalg.hpp"
#include "motortemp/losses.hpp"
#include "motortemp/optim.hpp"

namespace motortemp {

// y = bias + x W, one column of W per target.
struct LinearParams {
    Matrix weights;  // features x targets
    RowVector bias;  // targets

    static LinearParams zeros(Eigen::Index features, Eigen::Index targets);
    bool operator==(const LinearParams& o) const { return weights == o.weights && bias == o.bias; }
};

void to_json(nlohmann::json& j, const LinearParams& p);
void from_json(const nlohmann::json& j, LinearParams& p);

Matrix predict_linear(const LinearParams& p, const Matrix& x);

enum class Intercept { fit, none };

// Least squares through the normal equations (X^T X)^{-1} X^T Y. With Intercept::fit a
// column of ones is appended internally. Throws NumericError when X^T X is singular or
// too ill-conditioned to trust.
LinearParams ols_closed_form(const Matrix& x, const Matrix& y, Intercept intercept = Intercept::fit);

// Mean loss (summed over targets) plus the elastic-net penalty on the weights.
double linear_objective(const LinearParams& p, const Matrix& x, const Matrix& y, const LossSpec& loss,
                        const PenaltySpec& penalty);

// Analytic (sub)gradient of linear_objective.
LinearParams linear_objective_gradient(const LinearParams& p, const Matrix& x, const Matrix& y,
                                       const LossSpec& loss, const PenaltySpec& penalty);

struct LinearSgdOptions {
    LossSpec loss;
    PenaltySpec penalty;
    Schedule schedule;    // must already be resolved
    std::size_t batch = 32;
};

struct LinearEpoch {
    LinearParams params;
    double objective;     // over the full frame after the epoch
    std::size_t updates;  // update counter after the epoch
};

// One shuffled pass of mini-batch descent. The smooth part (loss + ridge) takes a plain
// gradient step and the lasso part is applied as its proximal map (soft threshold by
// gamma * l1), so weights can settle at exactly zero.
LinearEpoch sgd_epoch_linear(const LinearParams& p, const Matrix& x, const Matrix& y, const LinearSgdOptions& opts,
                             std::size_t update_counter, std::uint64_t seed);

}  // namespace motortemp
