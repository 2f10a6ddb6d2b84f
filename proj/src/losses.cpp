#include "motortemp/losses.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "motortemp/errors.hpp"

namespace motortemp {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

std::string_view to_string(LossKind k) {
    switch (k) {
        case LossKind::squared: return "squared";
        case LossKind::huber: return "huber";
        case LossKind::epsilon_insensitive: return "epsilon_insensitive";
        case LossKind::absolute: return "absolute";
    }
    return "unknown";
}

LossKind parse_loss_kind(std::string_view name) {
    if (name == "squared") return LossKind::squared;
    if (name == "huber") return LossKind::huber;
    if (name == "epsilon_insensitive") return LossKind::epsilon_insensitive;
    if (name == "absolute") return LossKind::absolute;
    throw ConfigError("unknown loss kind '" + std::string(name) + "'");
}

void LossSpec::validate() const {
    if (kind == LossKind::huber && !(delta > 0.0)) throw ConfigError("huber delta must be > 0");
    if (kind == LossKind::epsilon_insensitive && !(epsilon >= 0.0)) {
        throw ConfigError("epsilon-insensitive margin must be >= 0");
    }
}

void to_json(nlohmann::json& j, const LossSpec& s) {
    j = {{"kind", to_string(s.kind)}};
    if (s.kind == LossKind::huber) j["delta"] = s.delta;
    if (s.kind == LossKind::epsilon_insensitive) j["epsilon"] = s.epsilon;
}

void from_json(const nlohmann::json& j, LossSpec& s) {
    s = LossSpec{};
    s.kind = parse_loss_kind(j.at("kind").get<std::string>());
    s.delta = j.value("delta", s.delta);
    s.epsilon = j.value("epsilon", s.epsilon);
}

LossPoint loss_value_and_residual_gradient(const LossSpec& spec, double y, double f) {
    const double r = y - f;
    const double a = std::abs(r);
    switch (spec.kind) {
        case LossKind::squared:
            return {r * r, -2.0 * r};
        case LossKind::huber:
            if (a <= spec.delta) return {0.5 * r * r, -r};
            return {spec.delta * (a - 0.5 * spec.delta), -spec.delta * sign(r)};
        case LossKind::epsilon_insensitive:
            if (a <= spec.epsilon) return {0.0, 0.0};
            return {a - spec.epsilon, -sign(r)};
        case LossKind::absolute:
            return {a, -sign(r)};
    }
    throw ConfigError("unknown loss kind");
}

BatchLoss batch_loss(const LossSpec& spec, const Matrix& y, const Matrix& prediction) {
    if (y.rows() != prediction.rows() || y.cols() != prediction.cols() || y.rows() == 0) {
        throw DataError("loss: target/prediction shape mismatch");
    }
    const double inv_n = 1.0 / static_cast<double>(y.rows());
    BatchLoss out{0.0, Matrix(y.rows(), y.cols())};
    if (spec.kind == LossKind::squared) {
        Matrix r = y - prediction;
        out.value = r.squaredNorm() * inv_n;
        out.grad = -2.0 * inv_n * r;
        return out;
    }
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
        for (Eigen::Index i = 0; i < y.rows(); ++i) {
            auto p = loss_value_and_residual_gradient(spec, y(i, c), prediction(i, c));
            out.value += p.value;
            out.grad(i, c) = p.grad * inv_n;
        }
    }
    out.value *= inv_n;
    return out;
}

double batch_loss_value(const LossSpec& spec, const Matrix& y, const Matrix& prediction) {
    if (y.rows() != prediction.rows() || y.cols() != prediction.cols() || y.rows() == 0) {
        throw DataError("loss: target/prediction shape mismatch");
    }
    if (spec.kind == LossKind::squared) return (y - prediction).squaredNorm() / static_cast<double>(y.rows());
    double sum = 0.0;
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
        for (Eigen::Index i = 0; i < y.rows(); ++i) sum += loss_value_and_residual_gradient(spec, y(i, c), prediction(i, c)).value;
    }
    return sum / static_cast<double>(y.rows());
}

PenaltySpec PenaltySpec::from_coefficient(double a, double mixing) {
    if (!(a >= 0.0)) throw ConfigError("penalty coefficient must be >= 0");
    if (!(mixing >= 0.0 && mixing <= 1.0)) throw ConfigError("mixing parameter must be in [0, 1]");
    return {a * mixing, 0.5 * a * (1.0 - mixing)};
}

void PenaltySpec::validate() const {
    if (!(l1 >= 0.0) || !(l2 >= 0.0)) throw ConfigError("elastic-net weights must be >= 0");
}

void to_json(nlohmann::json& j, const PenaltySpec& s) { j = {{"l1", s.l1}, {"l2", s.l2}}; }

void from_json(const nlohmann::json& j, PenaltySpec& s) {
    if (j.contains("coefficient")) {
        s = PenaltySpec::from_coefficient(j.at("coefficient").get<double>(), j.at("mixing").get<double>());
        return;
    }
    s.l1 = j.value("l1", 0.0);
    s.l2 = j.value("l2", 0.0);
}

PenaltyValue elastic_net_penalty(const Matrix& weights, const PenaltySpec& p) {
    PenaltyValue out{p.l2 * weights.squaredNorm() + p.l1 * weights.cwiseAbs().sum(), Matrix()};
    out.grad = 2.0 * p.l2 * weights + p.l1 * weights.unaryExpr([](double b) { return sign(b); });
    return out;
}

}  // namespace motortemp
