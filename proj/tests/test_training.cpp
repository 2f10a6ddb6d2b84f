#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "motortemp/errors.hpp"
#include "motortemp/training.hpp"
#include "support.hpp"

using namespace motortemp;

namespace {

Dataset waves(std::size_t n, std::size_t rows = 400) {
    std::vector<Profile> ps;
    for (std::size_t i = 0; i < n; ++i) {
        ps.push_back(testsupport::wave_profile("p" + std::to_string(i), rows + 37 * i, 0.7 * static_cast<double>(i)));
    }
    return Dataset(std::move(ps), {});
}

PreprocessConfig short_spans() {
    PreprocessConfig c;
    c.spans = {2, 5, 10, 20, 40, 80, 160, 320};
    return c;
}

MlpSpec small_mlp() {
    MlpSpec s;
    s.hidden = {12, 6};
    s.dropout = {0.1, 0.0};
    return s;
}

CnnSpec small_cnn() {
    CnnSpec s;
    s.layers = {{6, 2, 3}, {4, 2, 1}};
    s.seq_len = 16;
    return s;
}

TrainConfig quick(ModelKind kind, std::size_t epochs = 4) {
    TrainConfig c = default_train_config(kind);
    c.max_epochs = epochs;
    c.seed = 3;
    return c;
}

nlohmann::json read_defaults() {
    std::ifstream in(std::string(MOTORTEMP_SOURCE_DIR) + "/configs/defaults.json");
    REQUIRE(in.good());
    return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("gradient step examples") {
    Matrix p{{1.0}};
    gradient_step(p, Matrix{{2.0}}, 0.1);
    CHECK(p(0, 0) == doctest::Approx(0.8).epsilon(1e-15));

    Rng rng(1);
    const Matrix start = testsupport::random_matrix(3, 4, rng);
    Matrix q = start;
    gradient_step(q, testsupport::random_matrix(3, 4, rng), 0.0);
    CHECK(q == start);
    gradient_step(q, Matrix::Zero(3, 4), 0.5);
    CHECK(q == start);

    CHECK_THROWS_AS(gradient_step(q, Matrix::Zero(4, 3), 0.1), ConfigError);
    CHECK_THROWS_AS(gradient_step(q, Matrix::Zero(3, 4), -0.1), ConfigError);
    RowVector b{{1.0, 2.0}};
    gradient_step(b, RowVector{{1.0, 1.0}}, 1.0);
    CHECK(b == RowVector{{0.0, 1.0}});
}

TEST_CASE("learning-rate schedules") {
    const Schedule constant{ScheduleKind::constant, 0.3, 5.0};
    CHECK(constant.rate(0) == 0.3);
    CHECK(constant.rate(1000) == 0.3);

    const Schedule inv{ScheduleKind::inverse_scaling, 0.1, 10.0};
    CHECK(inv.rate(0) == 0.1);
    CHECK(inv.rate(10) == doctest::Approx(0.05));
    CHECK(inv.rate(30) == doctest::Approx(0.025));
    for (std::size_t t = 0; t < 100; ++t) CHECK(inv.rate(t + 1) < inv.rate(t));

    const Schedule unresolved{ScheduleKind::inverse_scaling, 0.1, 0.0};
    CHECK(unresolved.resolved(25).tau == 25.0);
    CHECK(inv.resolved(25).tau == 10.0);

    const nlohmann::json j = inv;
    CHECK(j.get<Schedule>() == inv);
    CHECK(parse_schedule_kind("constant") == ScheduleKind::constant);
    CHECK_THROWS_AS(parse_schedule_kind("cosine"), ConfigError);
}

TEST_CASE("early stopping examples") {
    TrainHistory h;
    h.val_loss = {1.0, 1.1, 1.1, 1.1};
    CHECK(early_stop_check(h, 3) == EarlyStop::stop);
    CHECK(early_stop_check(h, 4) == EarlyStop::proceed);

    h.val_loss = {1.0, 1.1, 0.9, 1.1};
    CHECK(early_stop_check(h, 3) == EarlyStop::proceed);

    h.val_loss = {1.0, 1.0 - 1e-7, 1.0 - 2e-7, 1.0 - 3e-7};
    CHECK(early_stop_check(h, 3) == EarlyStop::stop);

    h.val_loss = {5.0, 4.0};
    CHECK(early_stop_check(h, 5) == EarlyStop::proceed);
}

TEST_CASE("train config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.schedule.gamma0 = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.batch = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.patience = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.max_epochs = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    for (auto k : {ModelKind::linear, ModelKind::mlp, ModelKind::cnn}) CHECK(parse_model_kind(to_string(k)) == k);
    CHECK_THROWS_AS(parse_model_kind("svr"), ConfigError);
}

TEST_CASE("committed defaults file matches the compiled defaults") {
    const nlohmann::json j = read_defaults();
    CHECK(j.at("preprocess").get<PreprocessConfig>() == PreprocessConfig{});
    for (auto k : {ModelKind::linear, ModelKind::mlp, ModelKind::cnn}) {
        const auto& section = j.at(std::string(to_string(k)));
        CHECK(model_spec_from_json(section.at("model_spec"), k) == default_model_spec(k));
        TrainConfig c;
        merge_json(section.at("train"), c);
        CHECK(c == default_train_config(k));
    }
    const TrainConfig lin = default_train_config(ModelKind::linear);
    CHECK(lin.penalty.l1 == doctest::Approx(0.43 * 0.99));
    CHECK(std::get<MlpSpec>(default_model_spec(ModelKind::mlp)).hidden == std::vector<int>{90, 20});
    const auto cnn = std::get<CnnSpec>(default_model_spec(ModelKind::cnn));
    CHECK(cnn.layers == std::vector<ConvSpec>{{125, 2, 3}, {5, 2, 1}, {125, 2, 1}});
    CHECK(cnn.seq_len == 100);
}

TEST_CASE("one epoch gives one history entry") {
    const Dataset d = waves(3);
    const Split s = split_leave_one_out(d, "p0", 1, 1);
    for (auto kind : {ModelKind::linear, ModelKind::mlp, ModelKind::cnn}) {
        const ModelSpec spec = kind == ModelKind::mlp   ? ModelSpec{small_mlp()}
                               : kind == ModelKind::cnn ? ModelSpec{small_cnn()}
                                                        : ModelSpec{LinearSpec{}};
        const TrainResult r = train(spec, s, d, short_spans(), quick(kind, 1));
        CHECK(r.history.train_loss.size() == 1);
        CHECK(r.history.val_loss.size() == 1);
        CHECK(r.history.best_epoch == 0);
        CHECK(r.history.stop == StopReason::max_epochs);
        CHECK(kind_of(r.checkpoint.model) == kind);
    }
}

TEST_CASE("a vanishing learning rate leaves the initial weights") {
    const Dataset d = waves(3);
    const Split s = split_leave_one_out(d, "p0", 1, 1);
    TrainConfig cfg = quick(ModelKind::mlp, 2);
    cfg.schedule.gamma0 = 1e-30;
    const TrainResult r = train(small_mlp(), s, d, short_spans(), cfg);
    const Mlp init = Mlp::init(small_mlp(), 27, derive_seed(cfg.seed, 1));
    const Mlp& got = std::get<Mlp>(r.checkpoint.model);
    for (std::size_t i = 0; i < init.layers().size(); ++i) {
        CHECK(got.layers()[i].weights == init.layers()[i].weights);
        CHECK(got.layers()[i].bias.cwiseAbs().maxCoeff() < 1e-25);
    }
}

TEST_CASE("full-batch linear training loss never increases") {
    const Dataset d = waves(3);
    const Split s = split_leave_one_out(d, "p2", 1, 4);
    TrainConfig cfg = quick(ModelKind::linear, 40);
    cfg.penalty = {};
    cfg.batch = 100000;
    cfg.schedule = {ScheduleKind::constant, 0.01, 1.0};
    cfg.patience = 100;
    const TrainResult r = train(LinearSpec{}, s, d, short_spans(), cfg);
    REQUIRE(r.history.train_loss.size() == 40);
    for (std::size_t e = 1; e < 40; ++e) CHECK(r.history.train_loss[e] <= r.history.train_loss[e - 1]);
}

TEST_CASE("the checkpoint holds the best validation epoch") {
    const Dataset d = waves(3);
    const Split s = split_leave_one_out(d, "p1", 1, 2);
    TrainConfig cfg = quick(ModelKind::mlp, 12);
    cfg.schedule.gamma0 = 0.2;
    cfg.patience = 12;
    const TrainResult r = train(small_mlp(), s, d, short_spans(), cfg);
    const auto& h = r.history;
    const auto best = std::min_element(h.val_loss.begin(), h.val_loss.end()) - h.val_loss.begin();
    CHECK(h.best_epoch == static_cast<std::size_t>(best));

    const FeatureFrame val = transform(r.checkpoint.scaler, ewma_expand(d.at(s.val_ids.front()), short_spans().spans));
    const double recomputed =
        batch_loss_value(LossSpec::squared(), val.Y, predict_standardized(r.checkpoint.model, val));
    CHECK(recomputed == doctest::Approx(h.val_loss[h.best_epoch]).epsilon(1e-12));
    CHECK(r.checkpoint.history == h);
}

TEST_CASE("training is deterministic and ignores the test profile") {
    const Dataset d = waves(4);
    const Split s = split_leave_one_out(d, "p3", 1, 5);
    for (auto kind : {ModelKind::linear, ModelKind::mlp, ModelKind::cnn}) {
        const ModelSpec spec = kind == ModelKind::mlp   ? ModelSpec{small_mlp()}
                               : kind == ModelKind::cnn ? ModelSpec{small_cnn()}
                                                        : ModelSpec{LinearSpec{}};
        const std::string a = checkpoint_text(train(spec, s, d, short_spans(), quick(kind)).checkpoint);
        const std::string b = checkpoint_text(train(spec, s, d, short_spans(), quick(kind)).checkpoint);
        CHECK(a == b);

        std::vector<Profile> ps = d.profiles();
        for (auto& smp : ps.back().samples) {
            smp.n_m *= 3;
            smp.I_m += 10;
            smp.T_W += 50;
            smp.T_DE -= 7;
        }
        const Dataset poisoned(ps, {});
        CHECK(checkpoint_text(train(spec, s, poisoned, short_spans(), quick(kind)).checkpoint) == a);

        TrainConfig other = quick(kind);
        other.seed = 4;
        CHECK(checkpoint_text(train(spec, s, d, short_spans(), other).checkpoint) != a);
    }
}

TEST_CASE("divergence is reported with its history") {
    const Dataset d = waves(3);
    const Split s = split_leave_one_out(d, "p0", 1, 1);
    TrainConfig cfg = quick(ModelKind::linear, 5);
    cfg.schedule = {ScheduleKind::constant, 1e6, 1.0};
    try {
        train(LinearSpec{}, s, d, short_spans(), cfg);
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(e.history().stop == StopReason::divergence);
        CHECK_FALSE(e.history().val_loss.empty());
        CHECK(std::string(e.what()).find("learning rate") != std::string::npos);
    }
}

TEST_CASE("evaluation trace and metrics agree") {
    const Dataset d = waves(3);
    const Split s = split_leave_one_out(d, "p2", 1, 1);
    const TrainResult r = train(small_cnn(), s, d, short_spans(), quick(ModelKind::cnn, 3));
    const Profile& test = d.at("p2");
    const Evaluation ev = evaluate(r.checkpoint, test);
    CHECK(ev.trace.t.size() == test.samples.size());
    CHECK(ev.trace.predicted.rows() == static_cast<Eigen::Index>(test.samples.size()));
    CHECK(ev.trace.targets == std::vector<std::string>{"T_W", "T_DE", "T_NDE"});
    CHECK(ev.trace.predicted == predict(r.checkpoint, test));

    for (Eigen::Index c = 0; c < 3; ++c) {
        const Eigen::VectorXd err = ev.trace.predicted.col(c) - ev.trace.actual.col(c);
        const double mse = err.squaredNorm() / static_cast<double>(err.size());
        const double mae = err.cwiseAbs().mean();
        CHECK(std::abs(mse - ev.metrics.targets[c].mse) < 1e-9);
        CHECK(std::abs(mae - ev.metrics.targets[c].mae) < 1e-9);
        CHECK(std::abs(err.cwiseAbs().maxCoeff() - ev.metrics.targets[c].linf) < 1e-9);
    }

    std::ostringstream csv;
    write_trace_csv(csv, ev.trace);
    std::istringstream in(csv.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "t,target,actual_C,predicted_C,error_C");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 3 * test.samples.size());
}

TEST_CASE("predictions read only the input channels and are causal") {
    const Dataset d = waves(3);
    const Split s = split_leave_one_out(d, "p1", 1, 1);
    const TrainResult r = train(small_cnn(), s, d, short_spans(), quick(ModelKind::cnn, 2));
    const Profile& p = d.at("p1");
    const Matrix base = predict(r.checkpoint, p);

    Profile blind = p;
    for (auto& smp : blind.samples) smp.T_W = smp.T_DE = smp.T_NDE = 0.0;
    CHECK(predict(r.checkpoint, blind) == base);

    for (std::size_t u : {std::size_t{0}, std::size_t{5}, std::size_t{200}}) {
        Profile changed = p;
        changed.samples[u].I_m += 4.0;
        const Matrix out = predict(r.checkpoint, changed);
        const auto keep = static_cast<Eigen::Index>(u);
        CHECK(out.topRows(keep) == base.topRows(keep));
        CHECK(out.row(keep) != base.row(keep));
    }
}

TEST_CASE("checkpoint round trip") {
    const Dataset d = waves(3);
    const Split s = split_leave_one_out(d, "p0", 1, 1);
    const auto dir = testsupport::scratch_dir("ckpt_rt");
    for (auto kind : {ModelKind::linear, ModelKind::mlp, ModelKind::cnn}) {
        const ModelSpec spec = kind == ModelKind::mlp   ? ModelSpec{small_mlp()}
                               : kind == ModelKind::cnn ? ModelSpec{small_cnn()}
                                                        : ModelSpec{LinearSpec{}};
        const Checkpoint c = train(spec, s, d, short_spans(), quick(kind, 2)).checkpoint;
        const auto path = dir / (std::string(to_string(kind)) + ".json");
        save_checkpoint(c, path);
        const Checkpoint back = load_checkpoint(path);
        CHECK(checkpoint_text(back) == checkpoint_text(c));
        CHECK(predict(back, d.at("p0")) == predict(c, d.at("p0")));
        CHECK(back.split == s);
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.json"), DataError);

    std::ofstream(dir / "future.json") << R"({"format": 99})";
    CHECK_THROWS_AS(load_checkpoint(dir / "future.json"), DataError);
}

TEST_CASE("leave-one-out runs one fold per profile") {
    const Dataset d = waves(3, 300);
    LooOptions opts;
    const LooResult r = run_loo_folds(d, short_spans(), quick(ModelKind::linear, 3), LinearSpec{}, opts);
    REQUIRE(r.folds.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(r.folds[i].fold == i);
        CHECK(r.folds[i].test_id == d.ids()[i]);
        CHECK(r.folds[i].split.test_ids == std::vector<std::string>{d.ids()[i]});
        CHECK(r.folds[i].split == split_leave_one_out(d, d.ids()[i], 1, 3 + i));
    }
    REQUIRE(r.aggregate.size() == 3);
    double mean = 0.0, worst = 0.0;
    for (const auto& f : r.folds) {
        mean += f.metrics.targets[0].mse / 3.0;
        worst = std::max(worst, f.metrics.targets[0].mse);
    }
    CHECK(r.aggregate[0].mean_mse == doctest::Approx(mean));
    CHECK(r.aggregate[0].max_mse == worst);

    opts.jobs = 3;
    const LooResult parallel = run_loo_folds(d, short_spans(), quick(ModelKind::linear, 3), LinearSpec{}, opts);
    CHECK(nlohmann::json(parallel).dump() == nlohmann::json(r).dump());

    CHECK_THROWS_AS(run_loo_folds(waves(2), short_spans(), quick(ModelKind::linear, 1), LinearSpec{}, {}), ConfigError);
}

TEST_CASE("parallel_for rethrows the lowest failing index") {
    std::vector<int> hits(10, 0);
    parallel_for(10, 4, [&](std::size_t i) { hits[i] += 1; });
    CHECK(hits == std::vector<int>(10, 1));
    try {
        parallel_for(10, 3, [](std::size_t i) {
            if (i == 7 || i == 4) throw DataError("fold " + std::to_string(i));
        });
        FAIL("expected a rethrow");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()) == "fold 4");
    }
}
