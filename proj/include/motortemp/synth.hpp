#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "motortemp/dataset.hpp"

namespace motortemp {

// Rated values of the reference 15 kW induction machine.
inline constexpr double kRatedTorque = 97.0;   // N m
inline constexpr double kRatedSpeed = 1478.0;  // rpm
inline constexpr double kRatedCurrent = 30.6;  // A

enum LptnNode : std::size_t { winding = 0, bearing_de = 1, bearing_nde = 2, shell = 3 };
inline constexpr std::size_t kLptnNodes = 4;

using NodeVector = std::array<double, kLptnNodes>;
using NodeMatrix = std::array<NodeVector, kLptnNodes>;

// Four-node lumped parameter thermal network. Node order follows LptnNode.
struct LptnParams {
    NodeVector capacitance{};           // J/degC
    NodeMatrix conductance{};           // W/degC between nodes, symmetric, diagonal unused
    NodeVector ambient_conductance{};   // W/degC to ambient
    double k_cu = 0.0;                  // W/A^2, winding copper loss
    double k_mech = 0.0;                // W/rpm^2, split evenly over both bearings
    double t_amb = 25.0;                // degC
    double noise_std = 0.2;             // degC, added to every temperature channel

    bool operator==(const LptnParams&) const = default;
};

// Winding time constant around 10 min, bearings 30-60 min.
LptnParams default_lptn_params();

// Empty when the parameters are physical and every node reaches ambient.
std::vector<std::string> check_lptn_params(const LptnParams& p);

void to_json(nlohmann::json& j, const LptnParams& p);
void from_json(const nlohmann::json& j, LptnParams& p);

struct CommandSeries {
    DynamicsClass dynamics = DynamicsClass::slow;
    std::vector<double> torque;  // N m, one per second
    std::vector<double> speed;   // rpm, one per second

    bool operator==(const CommandSeries&) const = default;
};

struct DwellRange {
    std::int64_t min_s;
    std::int64_t max_s;
};
DwellRange dwell_range(DynamicsClass c);

// Piecewise-constant seeded setpoints within the rated bounds.
CommandSeries generate_commands(DynamicsClass c, std::int64_t duration_s, std::uint64_t seed);

// Current drawn for a torque command under the linear rating map.
double current_from_torque(double torque);

// Explicit-Euler substep count used to integrate one second; throws NumericError if the
// stability bound cannot be met.
std::size_t lptn_substeps(const LptnParams& p);

// Integrates the network at 1 Hz. Nodes start at `initial` (ambient when absent).
Profile simulate_lptn(const CommandSeries& cmd, const LptnParams& p, std::uint64_t seed, std::string id = "sim",
                      std::optional<NodeVector> initial = std::nullopt);

// n_profiles spread round-robin over slow/medium/fast with a total of hours_total.
Dataset generate_dataset(std::size_t n_profiles, double hours_total, const LptnParams& p, std::uint64_t seed);

}  // namespace motortemp
