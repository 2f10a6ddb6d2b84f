#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "motortemp/cli.hpp"
#include "motortemp/dataset.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    int code;
    std::string out, err;
};

Outcome run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = motortemp::cli::dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) files[e.path().filename().string()] = slurp(e.path());
    return files;
}

// Shared small dataset plus a config that keeps training short.
struct Fixture {
    fs::path root = testsupport::scratch_dir("cli");
    fs::path data = root / "data";
    fs::path quick = root / "quick.json";

    Fixture() {
        const auto g = run({"generate", "--profiles", "3", "--hours", "1.5", "--seed", "5", "--out", data.string()});
        REQUIRE(g.code == 0);
        write(quick, R"({"train": {"max_epochs": 3}})");
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

}  // namespace

TEST_CASE("generate writes profiles, manifest and run record") {
    const Fixture& f = fixture();
    const motortemp::Dataset d = motortemp::load_dataset(f.data / "manifest.json");
    CHECK(d.size() == 3);
    for (const auto& id : d.ids()) CHECK(fs::exists(f.data / (id + ".csv")));
    const json rec = json::parse(slurp(f.data / "run.json"));
    CHECK(rec.at("command") == "generate");
    CHECK(rec.at("seed") == 5);
    CHECK(rec.at("profiles") == 3);
}

TEST_CASE("usage errors exit with 1") {
    const auto bogus = run({"bogus"});
    CHECK(bogus.code == 1);
    CHECK(bogus.err.find("unknown command 'bogus'") != std::string::npos);
    CHECK(run({"train", "--no-such-flag"}).code == 1);
    CHECK(run({"train", "--data", fixture().data.string(), "--model", "svr", "--out",
               (fixture().root / "x").string()})
              .code == 1);
    CHECK(run({"train", "--model", "linear", "--out", (fixture().root / "x").string()}).code == 1);
}

TEST_CASE("data errors exit with 2") {
    const auto r = run({"train", "--data", (fixture().root / "absent").string(), "--model", "linear", "--out",
                        (fixture().root / "x").string()});
    CHECK(r.code == 2);
    CHECK_FALSE(r.err.empty());

    const fs::path bad = fixture().root / "bad.csv";
    write(bad, "t,n_m,I_m,T_ref\n0,1,1,1\n2,1,1,1\n");
    const auto p = run({"predict", "--checkpoint", (fixture().root / "none.json").string(), "--input", bad.string(),
                        "--out", (fixture().root / "x").string()});
    CHECK(p.code == 2);
}

TEST_CASE("numeric failures exit with 3") {
    const fs::path cfg = fixture().root / "hot.json";
    write(cfg, R"({"train": {"max_epochs": 2, "schedule": {"kind": "constant", "gamma0": 1e6, "tau": 1},
                   "penalty": {"l1": 0, "l2": 0}}})");
    const auto r = run({"train", "--config", cfg.string(), "--data", fixture().data.string(), "--model", "linear",
                        "--out", (fixture().root / "hot").string()});
    CHECK(r.code == 3);
    CHECK(r.err.find("diverged") != std::string::npos);
}

TEST_CASE("a config recorded for another command is rejected") {
    const auto r = run({"loo", "--config", (fixture().data / "run.json").string(), "--data",
                        fixture().data.string(), "--model", "linear"});
    CHECK(r.code == 1);
}

TEST_CASE("train, evaluate and predict agree") {
    Fixture& f = fixture();
    const auto before = snapshot(f.data);
    const fs::path t = f.root / "train";
    REQUIRE(run({"train", "--config", f.quick.string(), "--data", f.data.string(), "--model", "mlp", "--out",
                 t.string()})
                .code == 0);
    const motortemp::Dataset d = motortemp::load_dataset(f.data / "manifest.json");
    const json ck = json::parse(slurp(t / "checkpoint.json"));
    CHECK(ck.at("split").at("test") == json::array({d.ids().front()}));

    const fs::path e = f.root / "eval";
    const std::string test_id = d.ids().front();
    REQUIRE(run({"evaluate", "--checkpoint", (t / "checkpoint.json").string(), "--data", f.data.string(),
                 "--profile", test_id, "--out", e.string()})
                .code == 0);
    const json metrics = json::parse(slurp(e / "metrics.json"));
    CHECK(metrics.at("profile") == test_id);

    // Recompute MSE and MAE per target from the trace rows.
    std::istringstream trace(slurp(e / "trace.csv"));
    std::string line;
    std::getline(trace, line);
    std::map<std::string, std::vector<double>> errors;
    while (std::getline(trace, line)) {
        std::istringstream row(line);
        std::string t_s, target, actual, predicted, error;
        std::getline(row, t_s, ',');
        std::getline(row, target, ',');
        std::getline(row, actual, ',');
        std::getline(row, predicted, ',');
        std::getline(row, error, ',');
        CHECK(std::stod(error) == doctest::Approx(std::stod(predicted) - std::stod(actual)).epsilon(1e-12));
        errors[target].push_back(std::stod(error));
    }
    REQUIRE(errors.size() == 3);
    for (const auto& m : metrics.at("metrics")) {
        const auto& err = errors.at(m.at("target").get<std::string>());
        double mse = 0.0, mae = 0.0;
        for (double v : err) {
            mse += v * v;
            mae += std::abs(v);
        }
        mse /= static_cast<double>(err.size());
        mae /= static_cast<double>(err.size());
        CHECK(std::abs(mse - m.at("mse").get<double>()) < 1e-9);
        CHECK(std::abs(mae - m.at("mae").get<double>()) < 1e-9);
    }

    // The same profile given as a CSV scores identically.
    const fs::path e2 = f.root / "eval_csv";
    REQUIRE(run({"evaluate", "--checkpoint", (t / "checkpoint.json").string(), "--input",
                 (f.data / (test_id + ".csv")).string(), "--out", e2.string()})
                .code == 0);
    CHECK(json::parse(slurp(e2 / "metrics.json")).at("metrics") == metrics.at("metrics"));

    const fs::path p = f.root / "pred";
    REQUIRE(run({"predict", "--checkpoint", (t / "checkpoint.json").string(), "--input",
                 (e / "inputs.csv").string(), "--out", p.string()})
                .code == 0);
    std::istringstream preds(slurp(p / "predictions.csv"));
    std::getline(preds, line);
    CHECK(line == "t,T_W,T_DE,T_NDE");
    std::size_t rows = 0;
    while (std::getline(preds, line)) ++rows;
    CHECK(rows == d.at(test_id).samples.size());

    CHECK(snapshot(f.data) == before);
}

TEST_CASE("replaying run.json reproduces the checkpoint") {
    Fixture& f = fixture();
    const fs::path t = f.root / "replay";
    REQUIRE(run({"train", "--config", f.quick.string(), "--data", f.data.string(), "--model", "cnn", "--seed", "11",
                 "--out", t.string()})
                .code == 0);
    const std::string first = slurp(t / "checkpoint.json");
    const json rec = json::parse(slurp(t / "run.json"));
    CHECK(rec.at("command") == "train");
    CHECK(rec.at("train").at("max_epochs") == 3);
    CHECK(rec.at("seed") == 11);

    fs::remove(t / "checkpoint.json");
    REQUIRE(run({"--config", (t / "run.json").string()}).code == 0);
    CHECK(slurp(t / "checkpoint.json") == first);
}

TEST_CASE("loo output is byte-identical across runs") {
    Fixture& f = fixture();
    const fs::path a = f.root / "loo_a", b = f.root / "loo_b";
    for (const auto& dir : {a, b}) {
        REQUIRE(run({"loo", "--config", f.quick.string(), "--data", f.data.string(), "--model", "linear", "--out",
                     dir.string()})
                    .code == 0);
    }
    CHECK(slurp(a / "loo.json") == slurp(b / "loo.json"));
    const json j = json::parse(slurp(a / "loo.json"));
    CHECK(j.at("folds").size() == 3);
}

TEST_CASE("search writes a leaderboard") {
    Fixture& f = fixture();
    const fs::path s = f.root / "search";
    REQUIRE(run({"search", "--config", f.quick.string(), "--data", f.data.string(), "--model", "linear", "--budget",
                 "2", "--out", s.string()})
                .code == 0);
    const json b = json::parse(slurp(s / "leaderboard.json"));
    CHECK(b.at("budget") == 2);
    CHECK(b.at("entries").size() + b.at("failed").size() == 2);
    CHECK(json::parse(slurp(s / "run.json")).at("command") == "search");
}
