#pragma once

#include <cstddef>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

#include "motortemp/linalg.hpp"

namespace motortemp {

enum class ScheduleKind { constant, inverse_scaling };

std::string_view to_string(ScheduleKind k);
ScheduleKind parse_schedule_kind(std::string_view name);

// Learning-rate schedule: gamma_t = gamma0, or gamma0 / (1 + t / tau) where t counts updates.
struct Schedule {
    ScheduleKind kind = ScheduleKind::inverse_scaling;
    double gamma0 = 0.01;
    // Non-positive tau means "one epoch worth of updates", fixed once the batch count is known.
    double tau = 0.0;

    double rate(std::size_t update) const;
    Schedule resolved(std::size_t updates_per_epoch) const;
    bool operator==(const Schedule&) const = default;
};

void to_json(nlohmann::json& j, const Schedule& s);
void from_json(const nlohmann::json& j, Schedule& s);

// a <- a - gamma * g, elementwise. Throws ConfigError on a shape mismatch or negative gamma.
void gradient_step(Matrix& params, const Matrix& grads, double gamma);
void gradient_step(RowVector& params, const RowVector& grads, double gamma);

}  // namespace motortemp
