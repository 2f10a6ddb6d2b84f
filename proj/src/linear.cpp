#include "motortemp/linear.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "motortemp/errors.hpp"
#include "motortemp/rng.hpp"

namespace motortemp {

namespace {

// Reciprocal condition estimate below which the normal equations are rejected.
constexpr double kMinRcond = 1e-12;

Matrix rows_of(const Matrix& m, const std::vector<Eigen::Index>& idx, std::size_t begin, std::size_t end) {
    Matrix out(static_cast<Eigen::Index>(end - begin), m.cols());
    for (std::size_t i = begin; i < end; ++i) out.row(static_cast<Eigen::Index>(i - begin)) = m.row(idx[i]);
    return out;
}

void check_shapes(const LinearParams& p, const Matrix& x) {
    if (x.cols() != p.weights.rows()) {
        throw DataError("linear model expects " + std::to_string(p.weights.rows()) + " features, got " +
                        std::to_string(x.cols()));
    }
    if (p.bias.size() != p.weights.cols()) throw DataError("linear model bias/weight shape mismatch");
}

}  // namespace

LinearParams LinearParams::zeros(Eigen::Index features, Eigen::Index targets) {
    return {Matrix::Zero(features, targets), RowVector::Zero(targets)};
}

void to_json(nlohmann::json& j, const LinearParams& p) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(p.weights.size()));
    for (Eigen::Index r = 0; r < p.weights.rows(); ++r) {
        for (Eigen::Index c = 0; c < p.weights.cols(); ++c) w.push_back(p.weights(r, c));
    }
    j = {{"rows", p.weights.rows()},
         {"cols", p.weights.cols()},
         {"weights", w},
         {"bias", std::vector<double>(p.bias.data(), p.bias.data() + p.bias.size())}};
}

void from_json(const nlohmann::json& j, LinearParams& p) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    auto w = j.at("weights").get<std::vector<double>>();
    auto b = j.at("bias").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != cols) {
        throw DataError("linear parameters: array sizes do not match the declared shape");
    }
    p.weights = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(w.data(), rows, cols);
    p.bias = Eigen::Map<const RowVector>(b.data(), cols);
}

Matrix predict_linear(const LinearParams& p, const Matrix& x) {
    check_shapes(p, x);
    return (x * p.weights).rowwise() + p.bias;
}

LinearParams ols_closed_form(const Matrix& x, const Matrix& y, Intercept intercept) {
    if (x.rows() != y.rows()) throw DataError("design and target row counts differ");
    Matrix design = x;
    if (intercept == Intercept::fit) {
        design.conservativeResize(Eigen::NoChange, x.cols() + 1);
        design.col(x.cols()).setOnes();
    }
    const Matrix gram = design.transpose() * design;
    Eigen::LLT<Matrix> llt(gram);
    const double rcond = llt.info() == Eigen::Success ? llt.rcond() : 0.0;
    if (!(rcond > kMinRcond)) {
        std::ostringstream msg;
        msg << "normal equations are singular or ill-conditioned (condition estimate "
            << (rcond > 0.0 ? 1.0 / rcond : INFINITY) << ")";
        throw NumericError(msg.str());
    }
    const Matrix beta = llt.solve(design.transpose() * y);
    LinearParams p;
    p.weights = beta.topRows(x.cols());
    p.bias = intercept == Intercept::fit ? RowVector(beta.row(x.cols())) : RowVector::Zero(y.cols());
    return p;
}

double linear_objective(const LinearParams& p, const Matrix& x, const Matrix& y, const LossSpec& loss,
                        const PenaltySpec& penalty) {
    return batch_loss_value(loss, y, predict_linear(p, x)) + elastic_net_penalty(p.weights, penalty).value;
}

LinearParams linear_objective_gradient(const LinearParams& p, const Matrix& x, const Matrix& y,
                                       const LossSpec& loss, const PenaltySpec& penalty) {
    const BatchLoss l = batch_loss(loss, y, predict_linear(p, x));
    return {x.transpose() * l.grad + elastic_net_penalty(p.weights, penalty).grad, l.grad.colwise().sum()};
}

LinearEpoch sgd_epoch_linear(const LinearParams& p, const Matrix& x, const Matrix& y, const LinearSgdOptions& opts,
                             std::size_t update_counter, std::uint64_t seed) {
    check_shapes(p, x);
    opts.loss.validate();
    opts.penalty.validate();
    const auto rows = static_cast<std::size_t>(x.rows());
    if (opts.batch < 1 || opts.batch > rows) {
        throw ConfigError("batch size must be in [1, " + std::to_string(rows) + "]");
    }
    if (!(opts.schedule.gamma0 >= 0.0)) throw ConfigError("learning rate must be >= 0");

    std::vector<Eigen::Index> order(rows);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng rng(seed);
    rng.shuffle(order);

    LinearEpoch out{p, 0.0, update_counter};
    LinearParams& w = out.params;
    for (std::size_t begin = 0; begin < rows; begin += opts.batch) {
        const std::size_t end = std::min(rows, begin + opts.batch);
        const Matrix xb = rows_of(x, order, begin, end);
        const Matrix yb = rows_of(y, order, begin, end);
        const double gamma = opts.schedule.rate(out.updates++);

        const BatchLoss l = batch_loss(opts.loss, yb, predict_linear(w, xb));
        const Matrix grad_w = xb.transpose() * l.grad + 2.0 * opts.penalty.l2 * w.weights;
        gradient_step(w.weights, grad_w, gamma);
        gradient_step(w.bias, l.grad.colwise().sum(), gamma);

        const double threshold = gamma * opts.penalty.l1;
        if (threshold > 0.0) {
            w.weights = w.weights.unaryExpr([threshold](double b) {
                return b > threshold ? b - threshold : (b < -threshold ? b + threshold : 0.0);
            });
        }
    }
    out.objective = linear_objective(w, x, y, opts.loss, opts.penalty);
    if (!std::isfinite(out.objective)) {
        std::ostringstream msg;
        msg << "linear training diverged (non-finite objective) with learning rate " << opts.schedule.gamma0;
        throw NumericError(msg.str());
    }
    return out;
}

}  // namespace motortemp
