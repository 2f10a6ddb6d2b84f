#include "motortemp/optim.hpp"

#include <nlohmann/json.hpp>

#include "motortemp/errors.hpp"

namespace motortemp {

std::string_view to_string(ScheduleKind k) {
    return k == ScheduleKind::constant ? "constant" : "inverse_scaling";
}

ScheduleKind parse_schedule_kind(std::string_view name) {
    if (name == "constant") return ScheduleKind::constant;
    if (name == "inverse_scaling") return ScheduleKind::inverse_scaling;
    throw ConfigError("unknown schedule '" + std::string(name) + "'");
}

double Schedule::rate(std::size_t update) const {
    if (kind == ScheduleKind::constant || tau <= 0.0) return gamma0;
    return gamma0 / (1.0 + static_cast<double>(update) / tau);
}

Schedule Schedule::resolved(std::size_t updates_per_epoch) const {
    Schedule s = *this;
    if (s.tau <= 0.0) s.tau = static_cast<double>(updates_per_epoch);
    return s;
}

void to_json(nlohmann::json& j, const Schedule& s) {
    j = {{"kind", to_string(s.kind)}, {"gamma0", s.gamma0}, {"tau", s.tau}};
}

void from_json(const nlohmann::json& j, Schedule& s) {
    Schedule d;
    s.kind = parse_schedule_kind(j.value("kind", std::string(to_string(d.kind))));
    s.gamma0 = j.value("gamma0", d.gamma0);
    s.tau = j.value("tau", d.tau);
}

void gradient_step(Matrix& params, const Matrix& grads, double gamma) {
    if (params.rows() != grads.rows() || params.cols() != grads.cols()) {
        throw ConfigError("gradient_step: parameter/gradient shape mismatch");
    }
    if (!(gamma >= 0.0)) throw ConfigError("gradient_step: learning rate must be >= 0");
    params -= gamma * grads;
}

void gradient_step(RowVector& params, const RowVector& grads, double gamma) {
    if (params.size() != grads.size()) throw ConfigError("gradient_step: parameter/gradient shape mismatch");
    if (!(gamma >= 0.0)) throw ConfigError("gradient_step: learning rate must be >= 0");
    params -= gamma * grads;
}

}  // namespace motortemp
