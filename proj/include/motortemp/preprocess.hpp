#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "motortemp/dataset.hpp"
#include "motortemp/linalg.hpp"

namespace motortemp {

struct PreprocessConfig {
    // EWMA spans in samples (10 s to 1 h at 1 Hz).
    std::vector<int> spans{10, 30, 60, 120, 300, 600, 1800, 3600};
    // CNN window length.
    int seq_len = 100;

    void validate() const;
    bool operator==(const PreprocessConfig&) const = default;
};

void to_json(nlohmann::json& j, const PreprocessConfig& c);
void from_json(const nlohmann::json& j, PreprocessConfig& c);

// Row-aligned features and targets of one profile. Rows are timesteps.
struct FeatureFrame {
    Matrix X;
    Matrix Y;  // 3 target columns; zero columns when the source carries no targets
    std::vector<std::string> feature_names;
    std::vector<std::string> target_names;
    std::string profile_id;

    Eigen::Index rows() const { return X.rows(); }
};

// e_0 = x_0, e_t = a x_t + (1 - a) e_{t-1} with a = 2 / (span + 1).
std::vector<double> ewma(std::span<const double> x, int span);

// Raw inputs followed by each input's EWMAs in ascending span order: 3 + 3 * spans.size() columns.
FeatureFrame ewma_expand(const Profile& p, std::span<const int> spans);

// Same expansion without target columns, for inference on input-only data.
FeatureFrame expand_inputs(const Profile& p, std::span<const int> spans);

std::vector<std::string> expanded_feature_names(std::span<const int> spans);

struct Scaler {
    std::vector<std::string> feature_names;
    std::vector<std::string> target_names;
    RowVector x_mean, x_std;
    RowVector y_mean, y_std;

    bool operator==(const Scaler& o) const {
        return feature_names == o.feature_names && target_names == o.target_names && x_mean == o.x_mean &&
               x_std == o.x_std && y_mean == o.y_mean && y_std == o.y_std;
    }
};

void to_json(nlohmann::json& j, const Scaler& s);
void from_json(const nlohmann::json& j, Scaler& s);

// Population mean/std over the concatenation of `frames`; throws DataError naming any
// zero-variance column.
Scaler fit_scaler(std::span<const FeatureFrame> frames);

// Standardizes X and (when present) Y.
FeatureFrame transform(const Scaler& sc, const FeatureFrame& f);

// y -> y * s + mu per target column.
Matrix inverse_transform_targets(const Scaler& sc, const Matrix& y_std);

// Causal sliding windows over a frame. Window t holds rows t-seq_len+1 .. t, with rows before
// the profile start replaced by row 0. The padded matrix is materialized once; windows are views.
class WindowSequence {
public:
    WindowSequence(const Matrix& x, int seq_len);

    std::size_t size() const { return static_cast<std::size_t>(rows_); }
    int seq_len() const { return seq_len_; }
    Eigen::Index features() const { return padded_.cols(); }

    // (seq_len x features) window ending at timestep t.
    auto window(Eigen::Index t) const { return padded_.middleRows(t, seq_len_); }

    // Row 0 repeated seq_len - 1 times, then every frame row.
    const Matrix& padded() const { return padded_; }

private:
    Matrix padded_;
    Eigen::Index rows_;
    int seq_len_;
};

WindowSequence make_windows(const FeatureFrame& f, int seq_len);

}  // namespace motortemp
