#include "motortemp/training.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "motortemp/io.hpp"
#include "motortemp/rng.hpp"

namespace motortemp {

namespace {

// Windows per forward call when predicting whole profiles with the CNN.
constexpr Eigen::Index kPredictChunk = 2048;

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// Standardized frame plus, for the CNN, its left-padded window matrix.
struct Prepared {
    FeatureFrame frame;
    Matrix padded;
};

std::vector<Prepared> prepare(const std::vector<FeatureFrame>& raw, const Scaler& sc, int seq_len, bool windows) {
    std::vector<Prepared> out;
    out.reserve(raw.size());
    for (const auto& f : raw) {
        Prepared p{transform(sc, f), {}};
        if (windows) p.padded = make_windows(p.frame, seq_len).padded();
        out.push_back(std::move(p));
    }
    return out;
}

Matrix stack_rows(const std::vector<Prepared>& frames, Matrix FeatureFrame::*member) {
    Eigen::Index rows = 0;
    for (const auto& p : frames) rows += p.frame.rows();
    Matrix out(rows, (frames.front().frame.*member).cols());
    Eigen::Index at = 0;
    for (const auto& p : frames) {
        out.middleRows(at, p.frame.rows()) = p.frame.*member;
        at += p.frame.rows();
    }
    return out;
}

Matrix cnn_predict_padded(const Cnn& net, const Matrix& padded, Eigen::Index rows) {
    const Eigen::Index l = net.spec().seq_len;
    Matrix out(rows, net.spec().outputs);
    for (Eigen::Index k0 = 0; k0 < rows; k0 += kPredictChunk) {
        const Eigen::Index nb = std::min(kPredictChunk, rows - k0);
        out.middleRows(k0, nb) = net.forward_sequence(padded.middleRows(k0, nb + l - 1));
    }
    return out;
}

// Squared-error loss in standardized space over all frames, whatever the training loss.
double validation_loss(const ModelParams& model, const std::vector<Prepared>& frames) {
    double weighted = 0.0;
    Eigen::Index rows = 0;
    for (const auto& p : frames) {
        Matrix pred = std::holds_alternative<Cnn>(model)
                          ? cnn_predict_padded(std::get<Cnn>(model), p.padded, p.frame.rows())
                          : predict_standardized(model, p.frame);
        weighted += batch_loss_value(LossSpec::squared(), p.frame.Y, pred) * static_cast<double>(p.frame.rows());
        rows += p.frame.rows();
    }
    return weighted / static_cast<double>(rows);
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// One epoch of mini-batch descent; returns the row-weighted mean batch loss.
double mlp_epoch(Mlp& net, const Matrix& x, const Matrix& y, const TrainConfig& cfg, const Schedule& schedule,
                 std::size_t& updates, std::uint64_t seed) {
    const auto rows = static_cast<std::size_t>(x.rows());
    std::vector<Eigen::Index> order(rows);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng shuffle(seed);
    shuffle.shuffle(order);
    Rng dropout(derive_seed(seed, 1));

    const std::size_t batch = std::min(cfg.batch, rows);
    Mlp::Cache cache;
    double total = 0.0;
    for (std::size_t begin = 0; begin < rows; begin += batch) {
        const auto nb = static_cast<Eigen::Index>(std::min(rows, begin + batch) - begin);
        Matrix xb(nb, x.cols());
        Matrix yb(nb, y.cols());
        for (Eigen::Index i = 0; i < nb; ++i) {
            xb.row(i) = x.row(order[begin + static_cast<std::size_t>(i)]);
            yb.row(i) = y.row(order[begin + static_cast<std::size_t>(i)]);
        }
        const Matrix pred = net.forward(xb, Mode::train, &dropout, &cache);
        const BatchLoss l = batch_loss(cfg.loss, yb, pred);
        if (!std::isfinite(l.value)) return l.value;
        net.apply_step(net.backward(cache, l.grad), schedule.rate(updates++));
        total += l.value * static_cast<double>(nb);
    }
    return total / static_cast<double>(rows);
}

struct Chunk {
    std::size_t frame;
    Eigen::Index start;
    Eigen::Index count;
};

std::vector<Chunk> cnn_chunks(const std::vector<Prepared>& frames, std::size_t batch) {
    std::vector<Chunk> chunks;
    for (std::size_t f = 0; f < frames.size(); ++f) {
        const Eigen::Index rows = frames[f].frame.rows();
        for (Eigen::Index s = 0; s < rows; s += static_cast<Eigen::Index>(batch)) {
            chunks.push_back({f, s, std::min<Eigen::Index>(static_cast<Eigen::Index>(batch), rows - s)});
        }
    }
    return chunks;
}

// Mini-batches are runs of consecutive windows from one profile, in shuffled order.
double cnn_epoch(Cnn& net, const std::vector<Prepared>& frames, const TrainConfig& cfg, const Schedule& schedule,
                 std::size_t& updates, std::uint64_t seed) {
    auto chunks = cnn_chunks(frames, cfg.batch);
    Rng shuffle(seed);
    shuffle.shuffle(chunks);
    Rng dropout(derive_seed(seed, 1));

    const Eigen::Index l = net.spec().seq_len;
    Cnn::SequenceCache cache;
    double total = 0.0;
    Eigen::Index rows = 0;
    for (const auto& c : chunks) {
        const Prepared& p = frames[c.frame];
        const Matrix pred = net.forward_sequence(p.padded.middleRows(c.start, c.count + l - 1), Mode::train, &dropout, &cache);
        const BatchLoss loss = batch_loss(cfg.loss, p.frame.Y.middleRows(c.start, c.count), pred);
        if (!std::isfinite(loss.value)) return loss.value;
        net.apply_step(net.backward_sequence(cache, loss.grad), schedule.rate(updates++));
        total += loss.value * static_cast<double>(c.count);
        rows += c.count;
    }
    return total / static_cast<double>(rows);
}

std::string gamma_text(const TrainConfig& cfg) {
    std::ostringstream s;
    s << cfg.schedule.gamma0;
    return s.str();
}

nlohmann::json split_json(const Split& s) {
    return {{"train", s.train_ids}, {"val", s.val_ids}, {"test", s.test_ids}};
}

Split split_from_json(const nlohmann::json& j) {
    return {j.at("train").get<std::vector<std::string>>(), j.at("val").get<std::vector<std::string>>(),
            j.at("test").get<std::vector<std::string>>()};
}

}  // namespace

std::string_view to_string(ModelKind k) {
    switch (k) {
        case ModelKind::linear: return "linear";
        case ModelKind::mlp: return "mlp";
        case ModelKind::cnn: return "cnn";
    }
    return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
    if (name == "linear") return ModelKind::linear;
    if (name == "mlp") return ModelKind::mlp;
    if (name == "cnn") return ModelKind::cnn;
    throw ConfigError("unknown model kind '" + std::string(name) + "' (expected linear|mlp|cnn)");
}

ModelKind kind_of(const ModelSpec& s) { return static_cast<ModelKind>(s.index()); }
ModelKind kind_of(const ModelParams& p) { return static_cast<ModelKind>(p.index()); }

std::size_t param_count(const ModelParams& p) {
    return std::visit(overloaded{[](const LinearParams& l) { return static_cast<std::size_t>(l.weights.size() + l.bias.size()); },
                                 [](const auto& net) { return net.param_count(); }},
                      p);
}

void to_json(nlohmann::json& j, const ModelSpec& s) {
    std::visit(overloaded{[&](const LinearSpec&) { j = nlohmann::json::object(); },
                          [&](const auto& spec) { j = spec; }},
               s);
}

ModelSpec model_spec_from_json(const nlohmann::json& j, ModelKind kind) {
    switch (kind) {
        case ModelKind::linear: return LinearSpec{};
        case ModelKind::mlp: return j.get<MlpSpec>();
        case ModelKind::cnn: return j.get<CnnSpec>();
    }
    throw ConfigError("unknown model kind");
}

void TrainConfig::validate() const {
    if (!(schedule.gamma0 > 0.0)) throw ConfigError("initial learning rate must be > 0");
    if (batch < 1) throw ConfigError("batch size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max epochs must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    loss.validate();
    penalty.validate();
}

ModelSpec default_model_spec(ModelKind kind) {
    switch (kind) {
        case ModelKind::linear: return LinearSpec{};
        case ModelKind::mlp: return MlpSpec{};
        case ModelKind::cnn: return CnnSpec{};
    }
    throw ConfigError("unknown model kind");
}

TrainConfig default_train_config(ModelKind kind) {
    TrainConfig c;
    switch (kind) {
        case ModelKind::linear:
            c.penalty = PenaltySpec::from_coefficient(0.43, 0.99);
            break;
        case ModelKind::mlp:
            c.schedule.gamma0 = 0.05;
            break;
        case ModelKind::cnn:
            c.batch = 64;
            break;
    }
    return c;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"schedule", c.schedule}, {"batch", c.batch},  {"max_epochs", c.max_epochs}, {"patience", c.patience},
         {"seed", c.seed},         {"loss", c.loss},    {"penalty", c.penalty}};
}

void merge_json(const nlohmann::json& j, TrainConfig& c) {
    if (j.contains("schedule")) {
        nlohmann::json merged = c.schedule;
        merged.update(j["schedule"]);
        c.schedule = merged.get<Schedule>();
    }
    c.batch = j.value("batch", c.batch);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
    if (j.contains("loss")) c.loss = j["loss"].get<LossSpec>();
    if (j.contains("penalty")) c.penalty = j["penalty"].get<PenaltySpec>();
}

std::string_view to_string(StopReason r) {
    switch (r) {
        case StopReason::early_stop: return "early_stop";
        case StopReason::max_epochs: return "max_epochs";
        case StopReason::divergence: return "divergence";
    }
    return "unknown";
}

void to_json(nlohmann::json& j, const TrainHistory& h) {
    j = {{"train_loss", h.train_loss},
         {"val_loss", h.val_loss},
         {"best_epoch", h.best_epoch},
         {"stop", to_string(h.stop)}};
}

void from_json(const nlohmann::json& j, TrainHistory& h) {
    h.train_loss = j.at("train_loss").get<std::vector<double>>();
    h.val_loss = j.at("val_loss").get<std::vector<double>>();
    h.best_epoch = j.at("best_epoch").get<std::size_t>();
    const auto stop = j.at("stop").get<std::string>();
    h.stop = stop == "early_stop" ? StopReason::early_stop
                                  : (stop == "divergence" ? StopReason::divergence : StopReason::max_epochs);
}

EarlyStop early_stop_check(const TrainHistory& h, std::size_t patience) {
    const auto& v = h.val_loss;
    if (v.size() <= patience) return EarlyStop::proceed;
    const auto window = v.end() - static_cast<std::ptrdiff_t>(patience);
    const double best_before = *std::min_element(v.begin(), window);
    const double best_recent = *std::min_element(window, v.end());
    return best_recent < best_before - kEarlyStopMinDelta ? EarlyStop::proceed : EarlyStop::stop;
}

void to_json(nlohmann::json& j, const Checkpoint& c) {
    nlohmann::json model;
    std::visit(overloaded{[&](const LinearParams& p) { model = {{"kind", "linear"}, {"params", p}}; },
                          [&](const Mlp& m) { model = {{"kind", "mlp"}, {"params", m}}; },
                          [&](const Cnn& n) { model = {{"kind", "cnn"}, {"params", n}}; }},
               c.model);
    j = {{"format", c.format},        {"model", model},       {"scaler", c.scaler},
         {"preprocess", c.preprocess}, {"train", c.train},     {"history", c.history},
         {"split", split_json(c.split)}};
}

void from_json(const nlohmann::json& j, Checkpoint& c) {
    c.format = j.at("format").get<int>();
    if (c.format != kCheckpointFormat) {
        throw DataError("unsupported checkpoint format " + std::to_string(c.format));
    }
    const auto& model = j.at("model");
    switch (parse_model_kind(model.at("kind").get<std::string>())) {
        case ModelKind::linear: c.model = model.at("params").get<LinearParams>(); break;
        case ModelKind::mlp: c.model = model.at("params").get<Mlp>(); break;
        case ModelKind::cnn: c.model = model.at("params").get<Cnn>(); break;
    }
    c.scaler = j.at("scaler").get<Scaler>();
    c.preprocess = j.at("preprocess").get<PreprocessConfig>();
    c.train = TrainConfig{};
    merge_json(j.at("train"), c.train);
    c.history = j.at("history").get<TrainHistory>();
    c.split = split_from_json(j.at("split"));
}

std::string checkpoint_text(const Checkpoint& c) { return nlohmann::json(c).dump(1) + "\n"; }

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    write_file_atomic(path, checkpoint_text(c));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    try {
        return nlohmann::json::parse(read_file(path)).get<Checkpoint>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + path.string() + ": " + e.what());
    }
}

TrainResult train(const ModelSpec& spec, const Split& split, const Dataset& data, const PreprocessConfig& pcfg_in,
                  const TrainConfig& cfg) {
    cfg.validate();
    check_split(split, data);
    PreprocessConfig pcfg = pcfg_in;
    const ModelKind kind = kind_of(spec);
    if (kind == ModelKind::cnn) {
        std::get<CnnSpec>(spec).validate();
        pcfg.seq_len = std::get<CnnSpec>(spec).seq_len;
    }
    pcfg.validate();

    auto expand = [&](const std::vector<std::string>& ids) {
        std::vector<FeatureFrame> frames;
        for (const auto& id : ids) frames.push_back(ewma_expand(data.at(id), pcfg.spans));
        return frames;
    };
    const auto train_raw = expand(split.train_ids);
    const auto val_raw = expand(split.val_ids);
    Eigen::Index train_rows = 0;
    for (const auto& f : train_raw) train_rows += f.rows();
    if (train_rows == 0) throw DataError("training set is empty after preprocessing");

    const Scaler scaler = fit_scaler(train_raw);
    const bool windows = kind == ModelKind::cnn;
    const auto train_frames = prepare(train_raw, scaler, pcfg.seq_len, windows);
    // Without validation profiles the training profiles stand in for early stopping.
    const auto val_frames = val_raw.empty() ? train_frames : prepare(val_raw, scaler, pcfg.seq_len, windows);

    const Eigen::Index features = train_frames.front().frame.X.cols();
    const std::uint64_t init_seed = derive_seed(cfg.seed, 1);
    ModelParams model = std::visit(
        overloaded{[&](const LinearSpec&) -> ModelParams { return LinearParams::zeros(features, 3); },
                   [&](const MlpSpec& s) -> ModelParams { return Mlp::init(s, features, init_seed); },
                   [&](const CnnSpec& s) -> ModelParams { return Cnn::init(s, features, init_seed); }},
        spec);

    Matrix x_all, y_all;
    std::size_t updates_per_epoch = 0;
    if (kind == ModelKind::cnn) {
        updates_per_epoch = cnn_chunks(train_frames, cfg.batch).size();
    } else {
        x_all = stack_rows(train_frames, &FeatureFrame::X);
        y_all = stack_rows(train_frames, &FeatureFrame::Y);
        updates_per_epoch = ceil_div(static_cast<std::size_t>(x_all.rows()), std::min<std::size_t>(cfg.batch, x_all.rows()));
    }
    const Schedule schedule = cfg.schedule.resolved(updates_per_epoch);

    TrainHistory history;
    ModelParams best = model;
    std::size_t updates = 0;
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const std::uint64_t epoch_seed = derive_seed(cfg.seed, 100 + epoch);
        double train_loss = 0.0;
        try {
            train_loss = std::visit(
                overloaded{[&](LinearParams& p) {
                               LinearSgdOptions opts{cfg.loss, cfg.penalty, schedule,
                                                     std::min<std::size_t>(cfg.batch, x_all.rows())};
                               auto e = sgd_epoch_linear(p, x_all, y_all, opts, updates, epoch_seed);
                               p = std::move(e.params);
                               updates = e.updates;
                               return e.objective;
                           },
                           [&](Mlp& m) { return mlp_epoch(m, x_all, y_all, cfg, schedule, updates, epoch_seed); },
                           [&](Cnn& n) { return cnn_epoch(n, train_frames, cfg, schedule, updates, epoch_seed); }},
                model);
        } catch (const NumericError&) {
            train_loss = NAN;
        }
        const double val_loss = std::isfinite(train_loss) ? validation_loss(model, val_frames) : NAN;
        history.train_loss.push_back(train_loss);
        history.val_loss.push_back(val_loss);
        if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
            history.stop = StopReason::divergence;
            throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " with learning rate " +
                                      gamma_text(cfg),
                                  history);
        }
        if (epoch == 0 || val_loss < history.val_loss[history.best_epoch]) {
            history.best_epoch = epoch;
            best = model;
        }
        if (early_stop_check(history, cfg.patience) == EarlyStop::stop) {
            history.stop = StopReason::early_stop;
            break;
        }
    }
    if (history.stop != StopReason::early_stop) history.stop = StopReason::max_epochs;

    Checkpoint ckpt{kCheckpointFormat, std::move(best), scaler, pcfg, cfg, history, split};
    return {std::move(ckpt), std::move(history)};
}

Matrix predict_standardized(const ModelParams& model, const FeatureFrame& scaled) {
    return std::visit(overloaded{[&](const LinearParams& p) { return predict_linear(p, scaled.X); },
                                 [&](const Mlp& m) { return m.forward(scaled.X); },
                                 [&](const Cnn& n) {
                                     const auto ws = make_windows(scaled, n.spec().seq_len);
                                     return cnn_predict_padded(n, ws.padded(), scaled.rows());
                                 }},
                      model);
}

Matrix predict(const Checkpoint& ckpt, const Profile& p) {
    if (p.samples.empty()) throw DataError("profile " + p.id + " is empty");
    const FeatureFrame raw = expand_inputs(p, ckpt.preprocess.spans);
    const FeatureFrame scaled = transform(ckpt.scaler, raw);
    return inverse_transform_targets(ckpt.scaler, predict_standardized(ckpt.model, scaled));
}

void write_trace_csv(std::ostream& out, const Trace& trace) {
    out << "t,target,actual_C,predicted_C,error_C\n";
    for (std::size_t i = 0; i < trace.t.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        for (std::size_t k = 0; k < trace.targets.size(); ++k) {
            const auto c = static_cast<Eigen::Index>(k);
            out << trace.t[i] << ',' << trace.targets[k] << ',' << format_double(trace.actual(r, c)) << ','
                << format_double(trace.predicted(r, c)) << ','
                << format_double(trace.predicted(r, c) - trace.actual(r, c)) << '\n';
        }
    }
}

Evaluation evaluate(const Checkpoint& ckpt, const Profile& p) {
    require_valid(p);
    const FeatureFrame raw = ewma_expand(p, ckpt.preprocess.spans);
    Evaluation ev;
    ev.trace.targets = raw.target_names;
    ev.trace.actual = raw.Y;
    ev.trace.predicted = predict(ckpt, p);
    for (const auto& s : p.samples) ev.trace.t.push_back(s.t);
    ev.metrics = compute_report(ev.trace.actual, ev.trace.predicted, ev.trace.targets);
    return ev;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    std::vector<std::exception_ptr> errors(n);
    auto run = [&](std::size_t i) {
        try {
            fn(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) run(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        for (std::size_t w = 0; w < std::min(jobs, n); ++w) {
            workers.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) run(i);
            });
        }
        for (auto& t : workers) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

LooResult run_loo_folds(const Dataset& data, const PreprocessConfig& pcfg, const TrainConfig& cfg,
                        const ModelSpec& spec, const LooOptions& opts) {
    if (data.size() < 3) throw ConfigError("leave-one-out evaluation needs at least 3 profiles");
    LooResult result;
    result.kind = kind_of(spec);
    result.folds.resize(data.size());
    parallel_for(data.size(), opts.jobs, [&](std::size_t i) {
        const std::string& test_id = data.profiles()[i].id;
        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = cfg.seed + i;
        const Split split = split_leave_one_out(data, test_id, opts.n_val, fold_cfg.seed);
        auto trained = train(spec, split, data, pcfg, fold_cfg);
        const Evaluation ev = evaluate(trained.checkpoint, data.at(test_id));
        result.folds[i] = {i, test_id, split, ev.metrics, std::move(trained.history)};
    });

    const auto& first = result.folds.front().metrics.targets;
    for (std::size_t k = 0; k < first.size(); ++k) {
        MetricSummary s;
        s.target = first[k].target;
        s.max_r2 = -INFINITY;
        for (const auto& f : result.folds) {
            const auto& m = f.metrics.targets[k];
            s.mean_mse += m.mse;
            s.mean_mae += m.mae;
            s.mean_linf += m.linf;
            s.mean_r2 += m.r2;
            s.max_mse = std::max(s.max_mse, m.mse);
            s.max_mae = std::max(s.max_mae, m.mae);
            s.max_linf = std::max(s.max_linf, m.linf);
            s.max_r2 = std::max(s.max_r2, m.r2);
        }
        const auto n = static_cast<double>(result.folds.size());
        s.mean_mse /= n;
        s.mean_mae /= n;
        s.mean_linf /= n;
        s.mean_r2 /= n;
        result.aggregate.push_back(s);
    }
    return result;
}

void to_json(nlohmann::json& j, const FoldReport& f) {
    j = {{"fold", f.fold},
         {"test_id", f.test_id},
         {"split", split_json(f.split)},
         {"metrics", f.metrics},
         {"history", f.history}};
}

void to_json(nlohmann::json& j, const LooResult& r) {
    nlohmann::json agg = nlohmann::json::array();
    for (const auto& s : r.aggregate) {
        agg.push_back({{"target", s.target},
                       {"mse", {{"mean", s.mean_mse}, {"max", s.max_mse}}},
                       {"mae", {{"mean", s.mean_mae}, {"max", s.max_mae}}},
                       {"linf", {{"mean", s.mean_linf}, {"max", s.max_linf}}},
                       {"r2", {{"mean", s.mean_r2}, {"max", s.max_r2}}}});
    }
    j = {{"model", to_string(r.kind)}, {"folds", r.folds}, {"aggregate", agg}};
}

}  // namespace motortemp
