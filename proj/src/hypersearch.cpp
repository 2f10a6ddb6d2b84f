#include "motortemp/hypersearch.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "motortemp/rng.hpp"

namespace motortemp {

namespace {

constexpr double kCoefficientRelTol = 1e-9;

bool same_loss(const LossSpec& a, const LossSpec& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
        case LossKind::huber: return a.delta == b.delta;
        case LossKind::epsilon_insensitive: return a.epsilon == b.epsilon;
        default: return true;
    }
}

template <class T>
bool member(const std::vector<T>& options, const T& v) {
    return std::find(options.begin(), options.end(), v) != options.end();
}

template <class T>
void require_nonempty(const std::vector<T>& v, const char* what) {
    if (v.empty()) throw ConfigError(std::string("search space: ") + what + " has no options");
}

void require_ordered(double lo, double hi, const char* what) {
    if (!(lo <= hi)) throw ConfigError(std::string("search space: ") + what + " bounds are not ordered");
}

Candidate sample_linear(const LinearSpace& s, Rng& rng, TrainConfig cfg) {
    const double a = std::exp(rng.uniform(std::log(s.coefficient.lo), std::log(s.coefficient.hi)));
    const double m = rng.uniform(s.mixing.lo, s.mixing.hi);
    cfg.penalty = PenaltySpec::from_coefficient(std::clamp(a, s.coefficient.lo, s.coefficient.hi), m);
    cfg.loss = rng.pick(s.losses);
    return {LinearSpec{}, cfg};
}

Candidate sample_mlp(const MlpSpace& s, Rng& rng, const TrainConfig& cfg) {
    MlpSpec spec;
    spec.hidden.clear();
    spec.dropout.clear();
    for (int i = 0; i < s.layers; ++i) {
        spec.hidden.push_back(static_cast<int>(rng.uniform_int(s.neurons.lo, s.neurons.hi)));
        spec.dropout.push_back(rng.pick(s.dropouts));
    }
    return {spec, cfg};
}

Candidate sample_cnn(const CnnSpace& s, Rng& rng, const TrainConfig& cfg) {
    CnnSpec spec;
    do {
        spec.layers.clear();
        for (int i = 0; i < s.layers; ++i) {
            ConvSpec c;
            c.filters = static_cast<int>(rng.uniform_int(s.filters.lo, s.filters.hi));
            c.size = rng.pick(s.sizes);
            c.dilation = rng.pick(s.dilations);
            spec.layers.push_back(c);
        }
        spec.seq_len = rng.pick(s.seq_lens);
        spec.dropout = rng.pick(s.dropouts);
    } while (spec.receptive_field() > spec.seq_len);
    return {spec, cfg};
}

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

nlohmann::json model_json(const ModelSpec& spec) {
    nlohmann::json j;
    to_json(j, spec);
    return j;
}

// The training seed is stored per entry, so it stays out of the config identity.
nlohmann::json config_json(const ModelSpec& spec, TrainConfig cfg) {
    cfg.seed = 0;
    return {{"kind", to_string(kind_of(spec))}, {"model", model_json(spec)}, {"train", cfg}};
}

}  // namespace

void SearchSpace::validate() const {
    require_ordered(linear.coefficient.lo, linear.coefficient.hi, "penalty coefficient");
    if (!(linear.coefficient.lo > 0.0)) throw ConfigError("search space: penalty coefficient must be > 0");
    require_ordered(linear.mixing.lo, linear.mixing.hi, "mixing");
    if (linear.mixing.lo < 0.0 || linear.mixing.hi > 1.0) throw ConfigError("search space: mixing must lie in [0, 1]");
    require_nonempty(linear.losses, "loss kinds");
    for (const auto& l : linear.losses) l.validate();

    if (mlp.layers < 1) throw ConfigError("search space: MLP layer count must be >= 1");
    require_ordered(mlp.neurons.lo, mlp.neurons.hi, "MLP neurons");
    if (mlp.neurons.lo < 1) throw ConfigError("search space: MLP neurons must be >= 1");
    require_nonempty(mlp.dropouts, "MLP dropout");

    if (cnn.layers < 1) throw ConfigError("search space: CNN layer count must be >= 1");
    require_ordered(cnn.filters.lo, cnn.filters.hi, "CNN filters");
    if (cnn.filters.lo < 1) throw ConfigError("search space: CNN filters must be >= 1");
    require_nonempty(cnn.sizes, "CNN filter sizes");
    require_nonempty(cnn.dilations, "CNN dilations");
    require_nonempty(cnn.seq_lens, "CNN sequence lengths");
    require_nonempty(cnn.dropouts, "CNN dropout");
    for (double d : mlp.dropouts) {
        if (!(d >= 0.0 && d < 1.0)) throw ConfigError("search space: dropout must lie in [0, 1)");
    }
    for (double d : cnn.dropouts) {
        if (!(d >= 0.0 && d < 1.0)) throw ConfigError("search space: dropout must lie in [0, 1)");
    }
    // At least one CNN draw must satisfy the receptive-field constraint.
    const int min_size = *std::min_element(cnn.sizes.begin(), cnn.sizes.end());
    const int min_dil = *std::min_element(cnn.dilations.begin(), cnn.dilations.end());
    const int max_len = *std::max_element(cnn.seq_lens.begin(), cnn.seq_lens.end());
    if (min_size < 1 || min_dil < 1) throw ConfigError("search space: CNN sizes and dilations must be >= 1");
    if (1 + cnn.layers * (min_size - 1) * min_dil > max_len) {
        throw ConfigError("search space: no CNN configuration fits any sequence length");
    }
}

void to_json(nlohmann::json& j, const SearchSpace& s) {
    j = {{"linear",
          {{"coefficient", {s.linear.coefficient.lo, s.linear.coefficient.hi}},
           {"mixing", {s.linear.mixing.lo, s.linear.mixing.hi}},
           {"losses", s.linear.losses}}},
         {"mlp", {{"layers", s.mlp.layers}, {"neurons", {s.mlp.neurons.lo, s.mlp.neurons.hi}}, {"dropouts", s.mlp.dropouts}}},
         {"cnn",
          {{"layers", s.cnn.layers},
           {"filters", {s.cnn.filters.lo, s.cnn.filters.hi}},
           {"sizes", s.cnn.sizes},
           {"dilations", s.cnn.dilations},
           {"seq_lens", s.cnn.seq_lens},
           {"dropouts", s.cnn.dropouts}}}};
}

void from_json(const nlohmann::json& j, SearchSpace& s) {
    s = SearchSpace{};
    auto real = [](const nlohmann::json& v) { return RealRange{v.at(0).get<double>(), v.at(1).get<double>()}; };
    auto integer = [](const nlohmann::json& v) { return IntRange{v.at(0).get<int>(), v.at(1).get<int>()}; };
    if (j.contains("linear")) {
        const auto& l = j["linear"];
        if (l.contains("coefficient")) s.linear.coefficient = real(l["coefficient"]);
        if (l.contains("mixing")) s.linear.mixing = real(l["mixing"]);
        if (l.contains("losses")) s.linear.losses = l["losses"].get<std::vector<LossSpec>>();
    }
    if (j.contains("mlp")) {
        const auto& m = j["mlp"];
        s.mlp.layers = m.value("layers", s.mlp.layers);
        if (m.contains("neurons")) s.mlp.neurons = integer(m["neurons"]);
        if (m.contains("dropouts")) s.mlp.dropouts = m["dropouts"].get<std::vector<double>>();
    }
    if (j.contains("cnn")) {
        const auto& c = j["cnn"];
        s.cnn.layers = c.value("layers", s.cnn.layers);
        if (c.contains("filters")) s.cnn.filters = integer(c["filters"]);
        if (c.contains("sizes")) s.cnn.sizes = c["sizes"].get<std::vector<int>>();
        if (c.contains("dilations")) s.cnn.dilations = c["dilations"].get<std::vector<int>>();
        if (c.contains("seq_lens")) s.cnn.seq_lens = c["seq_lens"].get<std::vector<int>>();
        if (c.contains("dropouts")) s.cnn.dropouts = c["dropouts"].get<std::vector<double>>();
    }
}

Candidate sample_config(const SearchSpace& space, ModelKind kind, std::uint64_t seed, const TrainConfig& base) {
    space.validate();
    Rng rng(seed);
    switch (kind) {
        case ModelKind::linear: return sample_linear(space.linear, rng, base);
        case ModelKind::mlp: return sample_mlp(space.mlp, rng, base);
        case ModelKind::cnn: return sample_cnn(space.cnn, rng, base);
    }
    throw ConfigError("unknown model kind");
}

bool contains(const SearchSpace& space, const ModelSpec& spec, const TrainConfig& cfg) {
    switch (kind_of(spec)) {
        case ModelKind::linear: {
            const auto& s = space.linear;
            const double a = cfg.penalty.l1 + 2.0 * cfg.penalty.l2;
            const double m = a > 0.0 ? cfg.penalty.l1 / a : 0.0;
            const double slack = kCoefficientRelTol * s.coefficient.hi;
            const bool a_ok = a >= s.coefficient.lo * (1 - kCoefficientRelTol) && a <= s.coefficient.hi + slack;
            const bool m_ok = m >= s.mixing.lo - kCoefficientRelTol && m <= s.mixing.hi + kCoefficientRelTol;
            const bool loss_ok = std::any_of(s.losses.begin(), s.losses.end(),
                                             [&](const LossSpec& l) { return same_loss(l, cfg.loss); });
            return a_ok && m_ok && loss_ok;
        }
        case ModelKind::mlp: {
            const auto& s = space.mlp;
            const auto& m = std::get<MlpSpec>(spec);
            if (static_cast<int>(m.hidden.size()) != s.layers || m.dropout.size() != m.hidden.size()) return false;
            for (std::size_t i = 0; i < m.hidden.size(); ++i) {
                if (!s.neurons.contains(m.hidden[i]) || !member(s.dropouts, m.dropout[i])) return false;
            }
            return true;
        }
        case ModelKind::cnn: {
            const auto& s = space.cnn;
            const auto& c = std::get<CnnSpec>(spec);
            if (static_cast<int>(c.layers.size()) != s.layers) return false;
            for (const auto& l : c.layers) {
                if (!s.filters.contains(l.filters) || !member(s.sizes, l.size) || !member(s.dilations, l.dilation)) {
                    return false;
                }
            }
            return member(s.seq_lens, c.seq_len) && member(s.dropouts, c.dropout) &&
                   c.receptive_field() <= c.seq_len;
        }
    }
    return false;
}

std::uint64_t config_hash(const ModelSpec& spec, const TrainConfig& cfg) {
    return fnv1a(config_json(spec, cfg).dump());
}

bool ranks_before(const LeaderboardEntry& a, const LeaderboardEntry& b) {
    if (a.mean_val_loss != b.mean_val_loss) return a.mean_val_loss < b.mean_val_loss;
    if (a.params != b.params) return a.params < b.params;
    if (a.hash != b.hash) return a.hash < b.hash;
    return a.candidate < b.candidate;
}

Leaderboard search(const SearchSpace& space, ModelKind kind, const Dataset& data, const PreprocessConfig& pcfg,
                   const TrainConfig& base, std::size_t budget, std::uint64_t seed, const SearchOptions& opts) {
    if (budget < 1) throw ConfigError("search budget must be >= 1");
    space.validate();
    base.validate();
    if (data.size() < 3) throw ConfigError("search needs at least 3 profiles");

    Leaderboard board;
    board.kind = kind;
    board.seed = seed;
    board.budget = budget;
    {
        Rng rng(derive_seed(seed, 0xfeed));
        const auto ids = data.ids();
        board.split = split_leave_one_out(data, rng.pick(ids), opts.n_val, seed);
    }

    struct Outcome {
        Candidate cand;
        std::uint64_t seed = 0;
        std::optional<LeaderboardEntry> entry;
        std::string error;
    };
    std::vector<Outcome> outcomes(budget);
    parallel_for(budget, opts.jobs, [&](std::size_t i) {
        Outcome& out = outcomes[i];
        out.seed = derive_seed(seed, i);
        out.cand = sample_config(space, kind, out.seed, base);
        out.cand.train.seed = out.seed;
        try {
            const auto trained = train(out.cand.spec, board.split, data, pcfg, out.cand.train);
            const auto& h = trained.history;
            LeaderboardEntry e;
            e.candidate = i;
            e.seed = out.seed;
            e.spec = out.cand.spec;
            e.train = out.cand.train;
            e.val_losses = {h.val_loss.at(h.best_epoch)};
            e.mean_val_loss = e.val_losses.front();
            e.params = param_count(trained.checkpoint.model);
            e.hash = config_hash(e.spec, e.train);
            out.entry = std::move(e);
        } catch (const Error& err) {
            out.error = err.what();
        }
    });

    for (std::size_t i = 0; i < budget; ++i) {
        auto& out = outcomes[i];
        if (out.entry) {
            board.entries.push_back(std::move(*out.entry));
        } else {
            board.failed.push_back({i, out.seed, std::move(out.cand.spec), std::move(out.cand.train), std::move(out.error)});
        }
    }
    std::sort(board.entries.begin(), board.entries.end(), ranks_before);
    return board;
}

void to_json(nlohmann::json& j, const Leaderboard& b) {
    nlohmann::json entries = nlohmann::json::array();
    for (std::size_t r = 0; r < b.entries.size(); ++r) {
        const auto& e = b.entries[r];
        entries.push_back({{"rank", r + 1},
                           {"candidate", e.candidate},
                           {"seed", e.seed},
                           {"kind", to_string(kind_of(e.spec))},
                           {"model", model_json(e.spec)},
                           {"train", e.train},
                           {"mean_val_loss", e.mean_val_loss},
                           {"val_losses", e.val_losses},
                           {"param_count", e.params},
                           {"config_hash", e.hash}});
    }
    nlohmann::json failed = nlohmann::json::array();
    for (const auto& f : b.failed) {
        failed.push_back({{"candidate", f.candidate},
                          {"seed", f.seed},
                          {"model", model_json(f.spec)},
                          {"train", f.train},
                          {"error", f.error}});
    }
    j = {{"kind", to_string(b.kind)},
         {"seed", b.seed},
         {"budget", b.budget},
         {"split", {{"train", b.split.train_ids}, {"val", b.split.val_ids}, {"test", b.split.test_ids}}},
         {"entries", entries},
         {"failed", failed},
         {"best", entries.empty() ? nlohmann::json(nullptr) : entries.front()}};
}

}  // namespace motortemp
