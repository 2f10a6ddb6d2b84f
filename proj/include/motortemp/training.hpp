#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "motortemp/dataset.hpp"
#include "motortemp/errors.hpp"
#include "motortemp/linear.hpp"
#include "motortemp/losses.hpp"
#include "motortemp/metrics.hpp"
#include "motortemp/neural.hpp"
#include "motortemp/optim.hpp"
#include "motortemp/preprocess.hpp"

namespace motortemp {

enum class ModelKind { linear, mlp, cnn };

std::string_view to_string(ModelKind k);
ModelKind parse_model_kind(std::string_view name);

// The linear model has no architecture knobs; its penalty lives in TrainConfig.
struct LinearSpec {
    bool operator==(const LinearSpec&) const = default;
};

using ModelSpec = std::variant<LinearSpec, MlpSpec, CnnSpec>;
using ModelParams = std::variant<LinearParams, Mlp, Cnn>;

ModelKind kind_of(const ModelSpec& s);
ModelKind kind_of(const ModelParams& p);
std::size_t param_count(const ModelParams& p);

void to_json(nlohmann::json& j, const ModelSpec& s);
ModelSpec model_spec_from_json(const nlohmann::json& j, ModelKind kind);

struct TrainConfig {
    Schedule schedule;
    std::size_t batch = 32;
    std::size_t max_epochs = 30;
    std::size_t patience = 5;
    std::uint64_t seed = 0;
    LossSpec loss;
    PenaltySpec penalty;  // linear model only

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);

// Committed defaults per model family (mirrored by configs/defaults.json).
ModelSpec default_model_spec(ModelKind kind);
TrainConfig default_train_config(ModelKind kind);
// Missing keys keep the values already in `c`.
void merge_json(const nlohmann::json& j, TrainConfig& c);

enum class StopReason { early_stop, max_epochs, divergence };
std::string_view to_string(StopReason r);

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::size_t best_epoch = 0;
    StopReason stop = StopReason::max_epochs;

    bool operator==(const TrainHistory&) const = default;
};

void to_json(nlohmann::json& j, const TrainHistory& h);
void from_json(const nlohmann::json& j, TrainHistory& h);

// Improvement below this (absolute) does not reset the patience window.
inline constexpr double kEarlyStopMinDelta = 1e-6;

enum class EarlyStop { proceed, stop };

// Stop iff none of the last `patience` epochs beat the best earlier validation loss by more
// than kEarlyStopMinDelta. Histories no longer than `patience` always proceed.
EarlyStop early_stop_check(const TrainHistory& h, std::size_t patience);

class DivergenceError : public NumericError {
public:
    DivergenceError(const std::string& what, TrainHistory history)
        : NumericError(what), history_(std::move(history)) {}
    const TrainHistory& history() const { return history_; }

private:
    TrainHistory history_;
};

inline constexpr int kCheckpointFormat = 1;

// Everything inference needs.
struct Checkpoint {
    int format = kCheckpointFormat;
    ModelParams model;
    Scaler scaler;
    PreprocessConfig preprocess;
    TrainConfig train;
    TrainHistory history;
    Split split;
};

void to_json(nlohmann::json& j, const Checkpoint& c);
void from_json(const nlohmann::json& j, Checkpoint& c);
std::string checkpoint_text(const Checkpoint& c);
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainResult {
    Checkpoint checkpoint;
    TrainHistory history;
};

// Fits the scaler on the training profiles, runs epochs until early stop or max_epochs and
// returns the parameters of the best validation epoch. Only train and validation profiles
// are read. For CNN specs the window length comes from CnnSpec::seq_len. Throws DivergenceError.
TrainResult train(const ModelSpec& spec, const Split& split, const Dataset& data, const PreprocessConfig& pcfg,
                  const TrainConfig& cfg);

// Standardized-space predictions (rows x 3) for an already standardized frame.
Matrix predict_standardized(const ModelParams& model, const FeatureFrame& scaled);

// Predictions in degC for every timestep of `p`; only input channels are read.
Matrix predict(const Checkpoint& ckpt, const Profile& p);

struct Trace {
    std::vector<std::int64_t> t;
    std::vector<std::string> targets;
    Matrix actual;     // degC
    Matrix predicted;  // degC
};

// Long format: t,target,actual_C,predicted_C,error_C with error = predicted - actual.
void write_trace_csv(std::ostream& out, const Trace& trace);

struct Evaluation {
    MetricsReport metrics;
    Trace trace;
};

Evaluation evaluate(const Checkpoint& ckpt, const Profile& p);

struct FoldReport {
    std::size_t fold = 0;
    std::string test_id;
    Split split;
    MetricsReport metrics;
    TrainHistory history;
};

struct MetricSummary {
    std::string target;
    double mean_mse = 0, max_mse = 0;
    double mean_mae = 0, max_mae = 0;
    double mean_linf = 0, max_linf = 0;
    double mean_r2 = 0, max_r2 = 0;
};

struct LooResult {
    ModelKind kind = ModelKind::linear;
    std::vector<FoldReport> folds;
    std::vector<MetricSummary> aggregate;
};

struct LooOptions {
    std::size_t n_val = 1;
    std::size_t jobs = 1;
};

// One fold per profile (dataset order). Fold i uses seed cfg.seed + i for both its
// validation draw and its training run.
LooResult run_loo_folds(const Dataset& data, const PreprocessConfig& pcfg, const TrainConfig& cfg,
                        const ModelSpec& spec, const LooOptions& opts = {});

void to_json(nlohmann::json& j, const FoldReport& f);
void to_json(nlohmann::json& j, const LooResult& r);

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the lowest-index failure.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace motortemp
