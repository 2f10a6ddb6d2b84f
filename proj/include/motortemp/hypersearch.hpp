#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "motortemp/training.hpp"

namespace motortemp {

struct IntRange {
    int lo = 0;
    int hi = 0;
    bool contains(int v) const { return lo <= v && v <= hi; }
    bool operator==(const IntRange&) const = default;
};

struct RealRange {
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double v) const { return lo <= v && v <= hi; }
    bool operator==(const RealRange&) const = default;
};

struct LinearSpace {
    RealRange coefficient{1e-4, 10.0};  // sampled log-uniformly
    RealRange mixing{0.0, 1.0};
    std::vector<LossSpec> losses{LossSpec::squared(), LossSpec::huber(1.0), LossSpec::epsilon_insensitive(0.1)};
    bool operator==(const LinearSpace&) const = default;
};

struct MlpSpace {
    int layers = 2;
    IntRange neurons{5, 200};
    std::vector<double> dropouts{0.0, 0.1, 0.3};
    bool operator==(const MlpSpace&) const = default;
};

struct CnnSpace {
    int layers = 3;
    IntRange filters{4, 128};
    std::vector<int> sizes{2, 3, 5};
    std::vector<int> dilations{1, 2, 3};
    std::vector<int> seq_lens{25, 50, 100, 200};
    std::vector<double> dropouts{0.0, 0.1, 0.3};
    bool operator==(const CnnSpace&) const = default;
};

struct SearchSpace {
    LinearSpace linear;
    MlpSpace mlp;
    CnnSpace cnn;

    void validate() const;
    bool operator==(const SearchSpace&) const = default;
};

void to_json(nlohmann::json& j, const SearchSpace& s);
void from_json(const nlohmann::json& j, SearchSpace& s);

// A sampled point: the architecture plus the training fields the space controls
// (penalty and loss for the linear model). Other TrainConfig fields come from the base.
struct Candidate {
    ModelSpec spec;
    TrainConfig train;
};

// CNN samples are redrawn until the receptive field fits the sampled window length.
Candidate sample_config(const SearchSpace& space, ModelKind kind, std::uint64_t seed,
                        const TrainConfig& base = {});

// True when every hyperparameter the space controls lies inside its domain.
bool contains(const SearchSpace& space, const ModelSpec& spec, const TrainConfig& cfg);

struct LeaderboardEntry {
    std::size_t candidate = 0;  // draw index
    std::uint64_t seed = 0;
    ModelSpec spec;
    TrainConfig train;
    double mean_val_loss = 0.0;
    std::vector<double> val_losses;  // one per validation split
    std::size_t params = 0;
    std::uint64_t hash = 0;
};

struct FailedCandidate {
    std::size_t candidate = 0;
    std::uint64_t seed = 0;
    ModelSpec spec;
    TrainConfig train;
    std::string error;
};

struct Leaderboard {
    ModelKind kind = ModelKind::linear;
    std::uint64_t seed = 0;
    std::size_t budget = 0;
    Split split;
    std::vector<LeaderboardEntry> entries;  // best first
    std::vector<FailedCandidate> failed;    // draw order
};

// FNV-1a over the compact JSON of {model, train}.
std::uint64_t config_hash(const ModelSpec& spec, const TrainConfig& cfg);

// Strict weak order: validation loss, then parameter count, then hash, then draw index.
bool ranks_before(const LeaderboardEntry& a, const LeaderboardEntry& b);

struct SearchOptions {
    std::size_t n_val = 1;
    std::size_t jobs = 1;
};

// Candidate i is drawn and trained with seed derive_seed(seed, i). All candidates share one
// split drawn from `seed`; its test profile is never read.
Leaderboard search(const SearchSpace& space, ModelKind kind, const Dataset& data, const PreprocessConfig& pcfg,
                   const TrainConfig& base, std::size_t budget, std::uint64_t seed, const SearchOptions& opts = {});

void to_json(nlohmann::json& j, const Leaderboard& b);

}  // namespace motortemp
