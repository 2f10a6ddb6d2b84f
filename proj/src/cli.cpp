#include "motortemp/cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "motortemp/dataset.hpp"
#include "motortemp/hypersearch.hpp"
#include "motortemp/io.hpp"
#include "motortemp/synth.hpp"
#include "motortemp/training.hpp"

namespace motortemp::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr std::uint64_t kDefaultSeed = 7;
constexpr std::size_t kDefaultProfiles = 18;
constexpr double kDefaultHours = 150.0;
constexpr std::size_t kDefaultBudget = 20;

struct Flags {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out, config, data, model, test_id, checkpoint, profile, input, lptn;
    std::optional<std::size_t> jobs, n_val, profiles, budget;
    std::optional<double> hours;
};

json load_json_file(const fs::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

// Flags given on the command line win over the config file.
json layered(const std::string& command, const Flags& f) {
    json j = json::object();
    if (f.config) {
        j = load_json_file(*f.config);
        if (!j.is_object()) throw ConfigError(*f.config + ": expected a JSON object");
        if (j.contains("command") && j["command"] != command) {
            throw ConfigError(*f.config + " was recorded for '" + j["command"].get<std::string>() + "', not '" +
                              command + "'");
        }
    }
    auto set = [&](const char* key, const auto& opt) {
        if (opt) j[key] = *opt;
    };
    set("seed", f.seed);
    set("out", f.out);
    set("data", f.data);
    set("model", f.model);
    set("test_id", f.test_id);
    set("checkpoint", f.checkpoint);
    set("profile", f.profile);
    set("input", f.input);
    set("lptn", f.lptn);
    set("jobs", f.jobs);
    set("n_val", f.n_val);
    set("profiles", f.profiles);
    set("budget", f.budget);
    set("hours", f.hours);
    j["command"] = command;
    return j;
}

std::string required(const json& j, const char* key, const char* flag) {
    if (!j.contains(key)) throw ConfigError(std::string(flag) + " is required");
    return j[key].get<std::string>();
}

struct Run {
    json cfg;
    std::uint64_t seed = kDefaultSeed;
    fs::path out;
    std::size_t jobs = 1;
};

Run begin(json j) {
    Run r;
    r.seed = j.value("seed", kDefaultSeed);
    r.out = j.value("out", std::string("."));
    r.jobs = j.value("jobs", std::size_t{1});
    if (r.jobs < 1) throw ConfigError("--jobs must be >= 1");
    j["seed"] = r.seed;
    j["out"] = r.out.string();
    j["jobs"] = r.jobs;
    r.cfg = std::move(j);
    fs::create_directories(r.out);
    return r;
}

void finish(const Run& r) { write_file_atomic(r.out / "run.json", r.cfg.dump(2) + "\n"); }

Dataset load_data(const json& j) {
    fs::path p = required(j, "data", "--data");
    if (fs::is_directory(p)) p /= "manifest.json";
    return load_dataset(p);
}

struct ModelSetup {
    ModelKind kind;
    ModelSpec spec;
    TrainConfig train;
    PreprocessConfig preprocess;
};

// Defaults, then the config's per-kind section (as in configs/defaults.json), then its
// top-level model_spec/train/preprocess. The resolved values are written back.
ModelSetup resolve_model(Run& r) {
    json& j = r.cfg;
    ModelSetup s;
    s.kind = parse_model_kind(required(j, "model", "--model"));
    const std::string name(to_string(s.kind));
    const json section = j.contains(name) && j[name].is_object() ? j[name] : json::object();

    s.spec = default_model_spec(s.kind);
    if (j.contains("model_spec")) {
        s.spec = model_spec_from_json(j["model_spec"], s.kind);
    } else if (section.contains("model_spec")) {
        s.spec = model_spec_from_json(section["model_spec"], s.kind);
    }
    std::visit([](const auto& spec) {
        if constexpr (!std::is_same_v<std::decay_t<decltype(spec)>, LinearSpec>) spec.validate();
    }, s.spec);

    s.train = default_train_config(s.kind);
    if (section.contains("train")) merge_json(section["train"], s.train);
    if (j.contains("train")) merge_json(j["train"], s.train);
    s.train.seed = r.seed;
    s.train.validate();

    if (j.contains("preprocess")) {
        s.preprocess = j["preprocess"].get<PreprocessConfig>();
    } else if (section.contains("preprocess")) {
        s.preprocess = section["preprocess"].get<PreprocessConfig>();
    }
    s.preprocess.validate();

    for (const char* k : {"linear", "mlp", "cnn"}) j.erase(k);
    j["model"] = name;
    j["model_spec"] = s.spec;
    j["train"] = s.train;
    j["preprocess"] = s.preprocess;
    return s;
}

std::string inputs_csv(const Profile& p) {
    std::ostringstream os;
    os << "t,n_m,I_m,T_ref\n";
    for (const auto& s : p.samples) {
        os << s.t << ',' << format_double(s.n_m) << ',' << format_double(s.I_m) << ',' << format_double(s.T_ref)
           << '\n';
    }
    return os.str();
}

int cmd_generate(Run r, std::ostream& out) {
    json& j = r.cfg;
    const auto n = j.value("profiles", kDefaultProfiles);
    const double hours = j.value("hours", kDefaultHours);
    LptnParams lptn = default_lptn_params();
    if (j.contains("lptn")) {
        lptn = j["lptn"].is_string() ? load_json_file(j["lptn"].get<std::string>()).get<LptnParams>()
                                     : j["lptn"].get<LptnParams>();
    }
    if (const auto problems = check_lptn_params(lptn); !problems.empty()) {
        throw ConfigError("thermal network parameters: " + problems.front());
    }
    j["profiles"] = n;
    j["hours"] = hours;
    j["lptn"] = lptn;

    const Dataset d = generate_dataset(n, hours, lptn, r.seed);
    save_dataset(d, r.out);
    finish(r);
    out << "generated " << d.size() << " profiles in " << (r.out / "manifest.json").string() << '\n';
    return kExitOk;
}

int cmd_train(Run r, std::ostream& out) {
    const ModelSetup s = resolve_model(r);
    const Dataset data = load_data(r.cfg);
    const std::string test_id = r.cfg.value("test_id", data.profiles().front().id);
    const auto n_val = r.cfg.value("n_val", std::size_t{1});
    r.cfg["test_id"] = test_id;
    r.cfg["n_val"] = n_val;

    const Split split = split_leave_one_out(data, test_id, n_val, r.seed);
    const auto result = train(s.spec, split, data, s.preprocess, s.train);
    save_checkpoint(result.checkpoint, r.out / "checkpoint.json");
    finish(r);
    const auto& h = result.history;
    out << to_string(s.kind) << ": " << h.val_loss.size() << " epochs (" << to_string(h.stop) << "), best epoch "
        << h.best_epoch << " with validation loss " << h.val_loss[h.best_epoch] << '\n';
    return kExitOk;
}

int cmd_evaluate(Run r, std::ostream& out) {
    json& j = r.cfg;
    const fs::path ckpt_path = required(j, "checkpoint", "--checkpoint");
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    Profile profile;
    if (j.contains("input")) {
        const fs::path input = j["input"].get<std::string>();
        profile = read_profile_csv(input, input.stem().string(), DynamicsClass::slow);
    } else if (j.contains("profile")) {
        profile = load_data(j).at(j["profile"].get<std::string>());
    } else {
        throw ConfigError("evaluate needs --input <csv> or --data with --profile <id>");
    }

    const Evaluation ev = evaluate(ckpt, profile);
    std::ostringstream trace;
    write_trace_csv(trace, ev.trace);
    write_file_atomic(r.out / "metrics.json", json{{"profile", profile.id}, {"metrics", ev.metrics}}.dump(2) + "\n");
    write_file_atomic(r.out / "trace.csv", trace.str());
    write_file_atomic(r.out / "inputs.csv", inputs_csv(profile));
    finish(r);
    for (const auto& m : ev.metrics.targets) {
        out << m.target << ": mse " << m.mse << " mae " << m.mae << " linf " << m.linf << " r2 " << m.r2 << '\n';
    }
    return kExitOk;
}

int cmd_search(Run r, std::ostream& out) {
    const ModelSetup s = resolve_model(r);
    r.cfg.erase("model_spec");
    const Dataset data = load_data(r.cfg);
    const auto budget = r.cfg.value("budget", kDefaultBudget);
    const auto n_val = r.cfg.value("n_val", std::size_t{1});
    const SearchSpace space = r.cfg.contains("space") ? r.cfg["space"].get<SearchSpace>() : SearchSpace{};
    r.cfg["budget"] = budget;
    r.cfg["n_val"] = n_val;
    r.cfg["space"] = space;

    const Leaderboard board = search(space, s.kind, data, s.preprocess, s.train, budget, r.seed, {n_val, r.jobs});
    write_file_atomic(r.out / "leaderboard.json", json(board).dump(2) + "\n");
    finish(r);
    out << board.entries.size() << " ranked, " << board.failed.size() << " failed";
    if (!board.entries.empty()) out << "; best validation loss " << board.entries.front().mean_val_loss;
    out << '\n';
    return kExitOk;
}

int cmd_loo(Run r, std::ostream& out) {
    const ModelSetup s = resolve_model(r);
    const Dataset data = load_data(r.cfg);
    const auto n_val = r.cfg.value("n_val", std::size_t{1});
    r.cfg["n_val"] = n_val;

    const LooResult result = run_loo_folds(data, s.preprocess, s.train, s.spec, {n_val, r.jobs});
    write_file_atomic(r.out / "loo.json", json(result).dump(2) + "\n");
    finish(r);
    for (const auto& f : result.folds) out << f.test_id << ": mean mse " << f.metrics.mean_mse() << '\n';
    return kExitOk;
}

int cmd_predict(Run r, std::ostream& out) {
    json& j = r.cfg;
    const Checkpoint ckpt = load_checkpoint(required(j, "checkpoint", "--checkpoint"));
    const fs::path input = required(j, "input", "--input");
    std::ifstream in(input);
    if (!in) throw DataError("cannot open " + input.string());
    const Profile p = parse_inputs_csv(in, input.stem().string());

    const Matrix pred = predict(ckpt, p);
    std::ostringstream os;
    os << 't';
    for (auto name : kTargetColumns) os << ',' << name;
    os << '\n';
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        os << p.samples[static_cast<std::size_t>(i)].t;
        for (Eigen::Index c = 0; c < pred.cols(); ++c) os << ',' << format_double(pred(i, c));
        os << '\n';
    }
    write_file_atomic(r.out / "predictions.csv", os.str());
    finish(r);
    out << "predicted " << pred.rows() << " steps\n";
    return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Estimate induction-motor winding and bearing temperatures from drive signals.", "motortemp"};
    app.require_subcommand(1, 1);
    Flags f;

    auto common = [&](CLI::App* s) {
        s->add_option("--seed", f.seed, "Base seed for every random draw");
        s->add_option("--out", f.out, "Output directory");
        s->add_option("--config", f.config, "JSON config (for example a previous run.json)");
        s->add_option("--jobs", f.jobs, "Parallel folds or candidates");
    };
    auto model_flags = [&](CLI::App* s) {
        s->add_option("--data", f.data, "Dataset manifest or its directory");
        s->add_option("--model", f.model, "linear, mlp or cnn");
        s->add_option("--n-val", f.n_val, "Validation profiles per split");
    };

    auto* gen = app.add_subcommand("generate", "Simulate a synthetic dataset");
    common(gen);
    gen->add_option("--profiles", f.profiles, "Number of profiles");
    gen->add_option("--hours", f.hours, "Total duration in hours");
    gen->add_option("--lptn", f.lptn, "Thermal network parameters (JSON)");

    auto* tr = app.add_subcommand("train", "Train one model on a leave-one-out split");
    common(tr);
    model_flags(tr);
    tr->add_option("--test-id", f.test_id, "Held-out profile (default: first profile)");

    auto* ev = app.add_subcommand("evaluate", "Score a checkpoint on one profile");
    common(ev);
    ev->add_option("--checkpoint", f.checkpoint, "Checkpoint JSON");
    ev->add_option("--data", f.data, "Dataset manifest or its directory");
    ev->add_option("--profile", f.profile, "Profile id within --data");
    ev->add_option("--input", f.input, "Profile CSV with all seven columns");

    auto* se = app.add_subcommand("search", "Random hyperparameter search");
    common(se);
    model_flags(se);
    se->add_option("--budget", f.budget, "Number of candidates");

    auto* lo = app.add_subcommand("loo", "Leave-one-profile-out evaluation");
    common(lo);
    model_flags(lo);

    auto* pr = app.add_subcommand("predict", "Predict temperatures from an input CSV");
    common(pr);
    pr->add_option("--checkpoint", f.checkpoint, "Checkpoint JSON");
    pr->add_option("--input", f.input, "CSV with t,n_m,I_m,T_ref");

    try {
        std::vector<std::string> argv = args;
        if (argv.size() >= 2 && argv[0] == "--config") {
            const json recorded = load_json_file(argv[1]);
            if (!recorded.is_object() || !recorded.contains("command")) {
                throw ConfigError(argv[1] + " does not record a command");
            }
            argv.insert(argv.begin(), recorded["command"].get<std::string>());
        }
        if (!argv.empty() && !argv[0].starts_with("-") && app.get_subcommand_no_throw(argv[0]) == nullptr) {
            err << "error: unknown command '" << argv[0] << "'\n" << app.help();
            return kExitUsage;
        }
        std::vector<std::string> reversed(argv.rbegin(), argv.rend());
        app.parse(reversed);

        const std::string command = app.get_subcommands().front()->get_name();
        Run run = begin(layered(command, f));
        if (command == "generate") return cmd_generate(std::move(run), out);
        if (command == "train") return cmd_train(std::move(run), out);
        if (command == "evaluate") return cmd_evaluate(std::move(run), out);
        if (command == "search") return cmd_search(std::move(run), out);
        if (command == "loo") return cmd_loo(std::move(run), out);
        return cmd_predict(std::move(run), out);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n' << app.help();
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const DataError& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const NumericError& e) {
        err << "error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const json::exception& e) {
        err << "error: invalid config: " << e.what() << '\n';
        return kExitUsage;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
}

}  // namespace motortemp::cli
