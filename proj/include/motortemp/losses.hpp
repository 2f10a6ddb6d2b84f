#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

#include "motortemp/linalg.hpp"

namespace motortemp {

enum class LossKind { squared, huber, epsilon_insensitive, absolute };

std::string_view to_string(LossKind k);
LossKind parse_loss_kind(std::string_view name);

struct LossSpec {
    LossKind kind = LossKind::squared;
    double delta = 1.0;     // huber threshold
    double epsilon = 0.1;   // epsilon-insensitive margin

    static LossSpec squared() { return {}; }
    static LossSpec huber(double delta) { return {LossKind::huber, delta, 0.1}; }
    static LossSpec epsilon_insensitive(double eps) { return {LossKind::epsilon_insensitive, 1.0, eps}; }
    static LossSpec absolute() { return {LossKind::absolute, 1.0, 0.1}; }

    void validate() const;
    bool operator==(const LossSpec&) const = default;
};

void to_json(nlohmann::json& j, const LossSpec& s);
void from_json(const nlohmann::json& j, LossSpec& s);

struct LossPoint {
    double value;
    double grad;  // d loss / d prediction
};

// Loss of prediction f against target y, and its (sub)gradient with respect to f.
// Subgradients are 0 at y == f and on the epsilon margin edge.
LossPoint loss_value_and_residual_gradient(const LossSpec& spec, double y, double f);

struct BatchLoss {
    double value;   // sum over target columns of the per-column mean loss
    Matrix grad;    // d value / d prediction, same shape as the predictions
};

// Mean over rows, summed over target columns.
BatchLoss batch_loss(const LossSpec& spec, const Matrix& y, const Matrix& prediction);
double batch_loss_value(const LossSpec& spec, const Matrix& y, const Matrix& prediction);

// Elastic-net weights: l1 * sum|b| + l2 * sum b^2.
struct PenaltySpec {
    double l1 = 0.0;
    double l2 = 0.0;

    // Penalty coefficient a and mixing m: l1 = a m, l2 = a (1 - m) / 2.
    static PenaltySpec from_coefficient(double a, double mixing);

    void validate() const;
    bool operator==(const PenaltySpec&) const = default;
};

void to_json(nlohmann::json& j, const PenaltySpec& s);
void from_json(const nlohmann::json& j, PenaltySpec& s);

struct PenaltyValue {
    double value;
    Matrix grad;  // 2 l2 b + l1 sign(b), 0 where b == 0
};

// `weights` excludes any bias term.
PenaltyValue elastic_net_penalty(const Matrix& weights, const PenaltySpec& p);

}  // namespace motortemp
