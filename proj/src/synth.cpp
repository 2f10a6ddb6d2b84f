#include "motortemp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "motortemp/errors.hpp"
#include "motortemp/rng.hpp"

namespace motortemp {

namespace {

constexpr const char* kNodeNames[kLptnNodes] = {"winding", "bearing_de", "bearing_nde", "shell"};

// Finest allowed integration substep, in seconds.
constexpr double kMinSubstep = 1e-3;

// Probability that a dwell level is an idle (zero torque, zero speed) segment.
constexpr double kIdleProbability = 0.15;

}  // namespace

LptnParams default_lptn_params() {
    LptnParams p;
    p.capacitance = {6600.0, 7000.0, 5500.0, 40000.0};
    auto connect = [&](LptnNode a, LptnNode b, double g) {
        p.conductance[a][b] = g;
        p.conductance[b][a] = g;
    };
    connect(winding, shell, 10.0);
    connect(winding, bearing_de, 0.5);
    connect(winding, bearing_nde, 0.5);
    connect(bearing_de, shell, 2.0);
    connect(bearing_nde, shell, 1.5);
    p.ambient_conductance = {0.0, 0.3, 0.5, 35.0};
    p.k_cu = 0.5;
    p.k_mech = 2.75e-5;
    p.t_amb = 25.0;
    p.noise_std = 0.2;
    return p;
}

std::vector<std::string> check_lptn_params(const LptnParams& p) {
    std::vector<std::string> problems;
    for (std::size_t i = 0; i < kLptnNodes; ++i) {
        if (!(p.capacitance[i] > 0.0) || !std::isfinite(p.capacitance[i])) {
            problems.push_back(std::string("capacitance of ") + kNodeNames[i] + " must be > 0");
        }
        if (!(p.ambient_conductance[i] >= 0.0) || !std::isfinite(p.ambient_conductance[i])) {
            problems.push_back(std::string("ambient conductance of ") + kNodeNames[i] + " must be >= 0");
        }
        for (std::size_t j = 0; j < kLptnNodes; ++j) {
            if (i == j) continue;
            if (!(p.conductance[i][j] >= 0.0) || !std::isfinite(p.conductance[i][j])) {
                problems.push_back(std::string("conductance ") + kNodeNames[i] + "-" + kNodeNames[j] + " must be >= 0");
            }
            if (p.conductance[i][j] != p.conductance[j][i]) {
                problems.push_back(std::string("conductance ") + kNodeNames[i] + "-" + kNodeNames[j] +
                                   " is not symmetric");
            }
        }
    }
    if (!(p.k_cu >= 0.0) || !(p.k_mech >= 0.0)) problems.push_back("loss coefficients must be >= 0");
    if (!std::isfinite(p.t_amb)) problems.push_back("ambient temperature must be finite");
    if (!(p.noise_std >= 0.0) || !std::isfinite(p.noise_std)) problems.push_back("noise_std must be >= 0");

    // Every node must reach ambient through positive conductances.
    std::array<bool, kLptnNodes> reached{};
    for (std::size_t i = 0; i < kLptnNodes; ++i) reached[i] = p.ambient_conductance[i] > 0.0;
    for (bool changed = true; changed;) {
        changed = false;
        for (std::size_t i = 0; i < kLptnNodes; ++i) {
            if (reached[i]) continue;
            for (std::size_t j = 0; j < kLptnNodes; ++j) {
                if (j != i && reached[j] && p.conductance[i][j] > 0.0) {
                    reached[i] = changed = true;
                    break;
                }
            }
        }
    }
    for (std::size_t i = 0; i < kLptnNodes; ++i) {
        if (!reached[i]) problems.push_back(std::string(kNodeNames[i]) + " has no conductive path to ambient");
    }
    return problems;
}

void to_json(nlohmann::json& j, const LptnParams& p) {
    nlohmann::json cond = nlohmann::json::object();
    for (std::size_t i = 0; i < kLptnNodes; ++i) {
        for (std::size_t k = i + 1; k < kLptnNodes; ++k) {
            if (p.conductance[i][k] != 0.0) {
                cond[std::string(kNodeNames[i]) + "-" + kNodeNames[k]] = p.conductance[i][k];
            }
        }
    }
    nlohmann::json cap, amb;
    for (std::size_t i = 0; i < kLptnNodes; ++i) {
        cap[kNodeNames[i]] = p.capacitance[i];
        amb[kNodeNames[i]] = p.ambient_conductance[i];
    }
    j = {{"capacitance_J_per_C", cap},
         {"conductance_W_per_C", cond},
         {"ambient_conductance_W_per_C", amb},
         {"k_cu_W_per_A2", p.k_cu},
         {"k_mech_W_per_rpm2", p.k_mech},
         {"t_amb_C", p.t_amb},
         {"noise_std_C", p.noise_std}};
}

void from_json(const nlohmann::json& j, LptnParams& p) {
    auto node_index = [](const std::string& name) -> std::size_t {
        for (std::size_t i = 0; i < kLptnNodes; ++i) {
            if (name == kNodeNames[i]) return i;
        }
        throw ConfigError("unknown LPTN node '" + name + "'");
    };
    p = LptnParams{};
    for (auto& [name, v] : j.at("capacitance_J_per_C").items()) p.capacitance[node_index(name)] = v.get<double>();
    for (auto& [name, v] : j.at("ambient_conductance_W_per_C").items()) {
        p.ambient_conductance[node_index(name)] = v.get<double>();
    }
    for (auto& [edge, v] : j.at("conductance_W_per_C").items()) {
        auto dash = edge.find('-');
        if (dash == std::string::npos) throw ConfigError("conductance key '" + edge + "' must be 'node-node'");
        auto a = node_index(edge.substr(0, dash));
        auto b = node_index(edge.substr(dash + 1));
        p.conductance[a][b] = p.conductance[b][a] = v.get<double>();
    }
    p.k_cu = j.at("k_cu_W_per_A2").get<double>();
    p.k_mech = j.at("k_mech_W_per_rpm2").get<double>();
    p.t_amb = j.at("t_amb_C").get<double>();
    p.noise_std = j.value("noise_std_C", 0.2);
}

DwellRange dwell_range(DynamicsClass c) {
    switch (c) {
        case DynamicsClass::slow: return {600, 1800};
        case DynamicsClass::medium: return {120, 600};
        case DynamicsClass::fast: return {10, 120};
    }
    throw ConfigError("unknown dynamics class");
}

CommandSeries generate_commands(DynamicsClass c, std::int64_t duration_s, std::uint64_t seed) {
    if (duration_s < 60) throw ConfigError("command duration must be at least 60 s");
    const auto [lo, hi] = dwell_range(c);
    Rng rng(seed);
    CommandSeries cmd{c, {}, {}};
    cmd.torque.reserve(static_cast<std::size_t>(duration_s));
    cmd.speed.reserve(static_cast<std::size_t>(duration_s));

    std::int64_t remaining = duration_s;
    while (remaining > 0) {
        std::int64_t dwell = rng.uniform_int(lo, hi);
        if (remaining - dwell < lo) {
            // Keep the tail inside the class range: finish now, or leave exactly one minimum dwell.
            dwell = remaining <= hi ? remaining : remaining - lo;
        }
        double torque = 0.0;
        double speed = 0.0;
        if (!rng.bernoulli(kIdleProbability)) {
            torque = rng.uniform(0.0, kRatedTorque);
            speed = rng.uniform(0.0, kRatedSpeed);
        }
        cmd.torque.insert(cmd.torque.end(), static_cast<std::size_t>(dwell), torque);
        cmd.speed.insert(cmd.speed.end(), static_cast<std::size_t>(dwell), speed);
        remaining -= dwell;
    }
    return cmd;
}

double current_from_torque(double torque) { return kRatedCurrent * std::abs(torque) / kRatedTorque; }

std::size_t lptn_substeps(const LptnParams& p) {
    double min_c = p.capacitance[0];
    double max_row = 0.0;
    for (std::size_t i = 0; i < kLptnNodes; ++i) {
        min_c = std::min(min_c, p.capacitance[i]);
        double row = p.ambient_conductance[i];
        for (std::size_t j = 0; j < kLptnNodes; ++j) {
            if (j != i) row += p.conductance[i][j];
        }
        max_row = std::max(max_row, row);
    }
    const double bound = 2.0 * min_c / max_row;
    if (bound <= kMinSubstep) {
        throw NumericError("unstable LPTN parameterization: stable substep bound " + std::to_string(bound) +
                           " s is below the minimum substep");
    }
    // Smallest n with 1/n strictly below the bound.
    auto n = static_cast<std::size_t>(std::floor(1.0 / bound)) + 1;
    return std::max<std::size_t>(n, 1);
}

Profile simulate_lptn(const CommandSeries& cmd, const LptnParams& p, std::uint64_t seed, std::string id,
                      std::optional<NodeVector> initial) {
    if (auto problems = check_lptn_params(p); !problems.empty()) {
        throw ConfigError("invalid LPTN parameters: " + problems.front());
    }
    if (cmd.torque.size() != cmd.speed.size()) throw ConfigError("command torque/speed lengths differ");
    for (std::size_t k = 0; k < cmd.torque.size(); ++k) {
        if (std::abs(cmd.torque[k]) > kRatedTorque || cmd.speed[k] < 0.0 || cmd.speed[k] > kRatedSpeed) {
            throw ConfigError("command at t=" + std::to_string(k) + " exceeds rated bounds");
        }
    }

    const std::size_t substeps = lptn_substeps(p);
    const double h = 1.0 / static_cast<double>(substeps);

    NodeVector temp;
    temp.fill(p.t_amb);
    if (initial) temp = *initial;

    Rng noise(seed);
    auto measure = [&](std::int64_t t, double speed, double current) {
        auto noisy = [&](double v) { return p.noise_std > 0.0 ? v + noise.normal(0.0, p.noise_std) : v; };
        Sample s;
        s.t = t;
        s.n_m = speed;
        s.I_m = current;
        s.T_W = noisy(temp[winding]);
        s.T_DE = noisy(temp[bearing_de]);
        s.T_NDE = noisy(temp[bearing_nde]);
        s.T_ref = noisy(temp[shell]);
        return s;
    };

    Profile out{std::move(id), cmd.dynamics, {}};
    out.samples.reserve(cmd.torque.size());
    for (std::size_t k = 0; k < cmd.torque.size(); ++k) {
        const double current = current_from_torque(cmd.torque[k]);
        const double speed = cmd.speed[k];
        if (k > 0) {
            // The command at second k acts over (k-1, k].
            NodeVector power{};
            power[winding] = p.k_cu * current * current;
            power[bearing_de] = power[bearing_nde] = 0.5 * p.k_mech * speed * speed;
            for (std::size_t s = 0; s < substeps; ++s) {
                NodeVector next = temp;
                for (std::size_t i = 0; i < kLptnNodes; ++i) {
                    double flow = power[i] + p.ambient_conductance[i] * (p.t_amb - temp[i]);
                    for (std::size_t j = 0; j < kLptnNodes; ++j) {
                        if (j != i) flow += p.conductance[i][j] * (temp[j] - temp[i]);
                    }
                    next[i] = temp[i] + h * flow / p.capacitance[i];
                }
                temp = next;
            }
        }
        out.samples.push_back(measure(static_cast<std::int64_t>(k), speed, current));
    }
    return out;
}

Dataset generate_dataset(std::size_t n_profiles, double hours_total, const LptnParams& p, std::uint64_t seed) {
    if (n_profiles < 3) throw ConfigError("at least 3 profiles are required (one per dynamics class)");
    const auto total_s = static_cast<std::int64_t>(std::llround(hours_total * 3600.0));
    if (total_s < static_cast<std::int64_t>(60 * n_profiles)) {
        throw ConfigError("hours_total too small: every profile needs at least 60 s");
    }

    Rng rng(derive_seed(seed, 0));
    std::vector<double> weights(n_profiles);
    double sum = 0.0;
    for (auto& w : weights) sum += (w = rng.uniform(0.75, 1.25));

    std::vector<std::int64_t> durations(n_profiles);
    std::int64_t assigned = 0;
    for (std::size_t i = 0; i + 1 < n_profiles; ++i) {
        durations[i] = std::max<std::int64_t>(60, std::llround(static_cast<double>(total_s) * weights[i] / sum));
        assigned += durations[i];
    }
    durations.back() = total_s - assigned;
    if (durations.back() < 60) throw ConfigError("hours_total too small for the requested profile count");

    constexpr DynamicsClass classes[] = {DynamicsClass::slow, DynamicsClass::medium, DynamicsClass::fast};
    std::vector<Profile> profiles;
    profiles.reserve(n_profiles);
    for (std::size_t i = 0; i < n_profiles; ++i) {
        const DynamicsClass c = classes[i % 3];
        char id[32];
        std::snprintf(id, sizeof id, "p%02zu_%s", i, std::string(to_string(c)).c_str());
        auto cmd = generate_commands(c, durations[i], derive_seed(seed, 1000 + i));
        profiles.push_back(simulate_lptn(cmd, p, derive_seed(seed, 2000 + i), id));
    }
    return Dataset(std::move(profiles), Provenance{Provenance::Kind::synthetic, seed, {}});
}

}  // namespace motortemp
