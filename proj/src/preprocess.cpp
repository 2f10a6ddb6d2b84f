#include "motortemp/preprocess.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "motortemp/errors.hpp"

namespace motortemp {

namespace {

double input_value(const Sample& s, std::size_t k) {
    switch (k) {
        case 0: return s.n_m;
        case 1: return s.I_m;
        default: return s.T_ref;
    }
}

double target_value(const Sample& s, std::size_t k) {
    switch (k) {
        case 0: return s.T_W;
        case 1: return s.T_DE;
        default: return s.T_NDE;
    }
}

std::vector<double> to_vector(const RowVector& v) { return {v.data(), v.data() + v.size()}; }

RowVector to_row(const std::vector<double>& v) {
    return Eigen::Map<const RowVector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void check_finite(const FeatureFrame& f) {
    if (!f.X.allFinite() || !f.Y.allFinite()) {
        throw DataError("profile " + f.profile_id + ": non-finite feature or target values");
    }
}

}  // namespace

void PreprocessConfig::validate() const {
    if (spans.size() != 8) throw ConfigError("exactly 8 EWMA spans are required, got " + std::to_string(spans.size()));
    for (std::size_t i = 0; i < spans.size(); ++i) {
        if (spans[i] < 1) throw ConfigError("EWMA span must be >= 1, got " + std::to_string(spans[i]));
        if (i > 0 && spans[i] <= spans[i - 1]) throw ConfigError("EWMA spans must be strictly increasing");
    }
    if (seq_len < 1) throw ConfigError("sequence length must be >= 1");
}

void to_json(nlohmann::json& j, const PreprocessConfig& c) { j = {{"spans", c.spans}, {"seq_len", c.seq_len}}; }

void from_json(const nlohmann::json& j, PreprocessConfig& c) {
    PreprocessConfig defaults;
    c.spans = j.value("spans", defaults.spans);
    c.seq_len = j.value("seq_len", defaults.seq_len);
}

std::vector<double> ewma(std::span<const double> x, int span) {
    if (span < 1) throw ConfigError("EWMA span must be >= 1, got " + std::to_string(span));
    std::vector<double> out(x.size());
    if (x.empty()) return out;
    const double alpha = 2.0 / (static_cast<double>(span) + 1.0);
    out[0] = x[0];
    for (std::size_t t = 1; t < x.size(); ++t) out[t] = alpha * x[t] + (1.0 - alpha) * out[t - 1];
    return out;
}

std::vector<std::string> expanded_feature_names(std::span<const int> spans) {
    std::vector<std::string> names;
    for (auto col : kInputColumns) names.emplace_back(col);
    for (auto col : kInputColumns) {
        for (int s : spans) names.push_back(std::string(col) + "_ewma" + std::to_string(s));
    }
    return names;
}

FeatureFrame expand_inputs(const Profile& p, std::span<const int> spans) {
    for (int s : spans) {
        if (s < 1) throw ConfigError("EWMA span must be >= 1, got " + std::to_string(s));
    }
    const auto rows = static_cast<Eigen::Index>(p.samples.size());
    const auto n_in = static_cast<Eigen::Index>(std::size(kInputColumns));
    const auto n_spans = static_cast<Eigen::Index>(spans.size());

    FeatureFrame f;
    f.profile_id = p.id;
    f.feature_names = expanded_feature_names(spans);
    f.X.resize(rows, n_in * (1 + n_spans));
    std::vector<double> raw(p.samples.size());
    for (Eigen::Index k = 0; k < n_in; ++k) {
        for (Eigen::Index r = 0; r < rows; ++r) raw[r] = input_value(p.samples[r], k);
        f.X.col(k) = Eigen::Map<const Vector>(raw.data(), rows);
        for (Eigen::Index s = 0; s < n_spans; ++s) {
            auto e = ewma(raw, spans[s]);
            f.X.col(n_in + k * n_spans + s) = Eigen::Map<const Vector>(e.data(), rows);
        }
    }
    for (auto col : kTargetColumns) f.target_names.emplace_back(col);
    f.Y = Matrix::Zero(rows, 0);
    return f;
}

FeatureFrame ewma_expand(const Profile& p, std::span<const int> spans) {
    FeatureFrame f = expand_inputs(p, spans);
    const auto rows = static_cast<Eigen::Index>(p.samples.size());
    f.Y.resize(rows, 3);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index k = 0; k < 3; ++k) f.Y(r, k) = target_value(p.samples[r], k);
    }
    check_finite(f);
    return f;
}

void to_json(nlohmann::json& j, const Scaler& s) {
    j = {{"feature_names", s.feature_names}, {"target_names", s.target_names},
         {"x_mean", to_vector(s.x_mean)},    {"x_std", to_vector(s.x_std)},
         {"y_mean", to_vector(s.y_mean)},    {"y_std", to_vector(s.y_std)}};
}

void from_json(const nlohmann::json& j, Scaler& s) {
    s.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    s.target_names = j.at("target_names").get<std::vector<std::string>>();
    s.x_mean = to_row(j.at("x_mean").get<std::vector<double>>());
    s.x_std = to_row(j.at("x_std").get<std::vector<double>>());
    s.y_mean = to_row(j.at("y_mean").get<std::vector<double>>());
    s.y_std = to_row(j.at("y_std").get<std::vector<double>>());
    if (static_cast<std::size_t>(s.x_mean.size()) != s.feature_names.size() || s.x_std.size() != s.x_mean.size() ||
        static_cast<std::size_t>(s.y_mean.size()) != s.target_names.size() || s.y_std.size() != s.y_mean.size()) {
        throw DataError("scaler: statistic lengths do not match names");
    }
}

Scaler fit_scaler(std::span<const FeatureFrame> frames) {
    if (frames.empty()) throw DataError("cannot fit a scaler on zero frames");
    Eigen::Index rows = 0;
    for (const auto& f : frames) {
        if (f.feature_names != frames.front().feature_names || f.X.cols() != frames.front().X.cols() ||
            f.Y.cols() != 3) {
            throw DataError("cannot fit a scaler on frames with differing columns");
        }
        rows += f.rows();
    }
    if (rows < 2) throw DataError("at least 2 rows are required to fit a scaler");

    auto stats = [&](auto member, RowVector& mean, RowVector& stdev, const std::vector<std::string>& names) {
        const Eigen::Index cols = (frames.front().*member).cols();
        mean = RowVector::Zero(cols);
        for (const auto& f : frames) mean += (f.*member).colwise().sum();
        mean /= static_cast<double>(rows);
        RowVector ss = RowVector::Zero(cols);
        for (const auto& f : frames) ss += ((f.*member).rowwise() - mean).array().square().matrix().colwise().sum();
        stdev = (ss / static_cast<double>(rows)).cwiseSqrt();
        for (Eigen::Index c = 0; c < cols; ++c) {
            if (!(stdev[c] > 0.0)) throw DataError("zero-variance feature '" + names[c] + "'");
        }
    };

    Scaler sc;
    sc.feature_names = frames.front().feature_names;
    sc.target_names = frames.front().target_names;
    stats(&FeatureFrame::X, sc.x_mean, sc.x_std, sc.feature_names);
    stats(&FeatureFrame::Y, sc.y_mean, sc.y_std, sc.target_names);
    return sc;
}

FeatureFrame transform(const Scaler& sc, const FeatureFrame& f) {
    if (f.feature_names != sc.feature_names) {
        throw DataError("profile " + f.profile_id + ": feature names do not match the scaler");
    }
    FeatureFrame out = f;
    out.X = ((f.X.rowwise() - sc.x_mean).array().rowwise() / sc.x_std.array()).matrix();
    if (f.Y.cols() > 0) {
        if (f.target_names != sc.target_names || f.Y.cols() != sc.y_mean.size()) {
            throw DataError("profile " + f.profile_id + ": target names do not match the scaler");
        }
        out.Y = ((f.Y.rowwise() - sc.y_mean).array().rowwise() / sc.y_std.array()).matrix();
    }
    return out;
}

Matrix inverse_transform_targets(const Scaler& sc, const Matrix& y_std) {
    if (y_std.cols() != sc.y_mean.size()) {
        throw DataError("expected " + std::to_string(sc.y_mean.size()) + " target columns, got " +
                        std::to_string(y_std.cols()));
    }
    return ((y_std.array().rowwise() * sc.y_std.array()).rowwise() + sc.y_mean.array()).matrix();
}

WindowSequence::WindowSequence(const Matrix& x, int seq_len) : rows_(x.rows()), seq_len_(seq_len) {
    if (seq_len < 1) throw ConfigError("sequence length must be >= 1");
    if (x.rows() == 0) throw DataError("cannot window an empty frame");
    padded_.resize(x.rows() + seq_len - 1, x.cols());
    for (int r = 0; r < seq_len - 1; ++r) padded_.row(r) = x.row(0);
    padded_.bottomRows(x.rows()) = x;
}

WindowSequence make_windows(const FeatureFrame& f, int seq_len) { return WindowSequence(f.X, seq_len); }

}  // namespace motortemp
