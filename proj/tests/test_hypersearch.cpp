#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "motortemp/errors.hpp"
#include "motortemp/hypersearch.hpp"
#include "support.hpp"

using namespace motortemp;

namespace {

constexpr ModelKind kKinds[] = {ModelKind::linear, ModelKind::mlp, ModelKind::cnn};

Dataset waves(std::size_t n) {
    std::vector<Profile> ps;
    for (std::size_t i = 0; i < n; ++i) {
        ps.push_back(testsupport::wave_profile("w" + std::to_string(i), 300 + 20 * i, 0.5 * static_cast<double>(i)));
    }
    return Dataset(std::move(ps), {});
}

PreprocessConfig short_spans() {
    PreprocessConfig c;
    c.spans = {2, 5, 10, 20, 40, 80, 160, 320};
    return c;
}

// Keeps sampled networks small enough for a unit test.
SearchSpace tiny_space() {
    SearchSpace s;
    s.mlp.neurons = {3, 12};
    s.cnn.filters = {2, 6};
    s.cnn.seq_lens = {12, 25};
    return s;
}

TrainConfig quick_base() {
    TrainConfig c;
    c.max_epochs = 3;
    return c;
}

LeaderboardEntry entry(double loss, std::size_t params, std::uint64_t hash, std::size_t idx) {
    LeaderboardEntry e;
    e.mean_val_loss = loss;
    e.params = params;
    e.hash = hash;
    e.candidate = idx;
    return e;
}

}  // namespace

TEST_CASE("default space and JSON") {
    const SearchSpace s;
    CHECK_NOTHROW(s.validate());
    const nlohmann::json j = s;
    CHECK(j.get<SearchSpace>() == s);

    std::ifstream in(std::string(MOTORTEMP_SOURCE_DIR) + "/configs/defaults.json");
    REQUIRE(in.good());
    CHECK(nlohmann::json::parse(in).at("space").get<SearchSpace>() == s);
}

TEST_CASE("invalid spaces are rejected") {
    SearchSpace s;
    s.linear.coefficient = {0.0, 1.0};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = SearchSpace{};
    s.mlp.neurons = {10, 5};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = SearchSpace{};
    s.cnn.sizes.clear();
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = SearchSpace{};
    s.mlp.dropouts = {1.0};
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("sampling is a pure function of the seed") {
    const SearchSpace s;
    for (ModelKind k : kKinds) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const Candidate a = sample_config(s, k, seed);
            const Candidate b = sample_config(s, k, seed);
            CHECK(a.spec == b.spec);
            CHECK(a.train == b.train);
        }
        std::set<std::uint64_t> hashes;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const Candidate c = sample_config(s, k, seed);
            hashes.insert(config_hash(c.spec, c.train));
        }
        CHECK(hashes.size() > 10);
    }
}

TEST_CASE("samples stay inside the domain") {
    const SearchSpace s;
    TrainConfig base;
    base.max_epochs = 7;
    base.seed = 99;
    for (ModelKind k : kKinds) {
        for (std::uint64_t seed = 0; seed < 1000; ++seed) {
            const Candidate c = sample_config(s, k, seed, base);
            CHECK(kind_of(c.spec) == k);
            CHECK(contains(s, c.spec, c.train));
            CHECK(c.train.max_epochs == 7);
            if (k == ModelKind::cnn) {
                const auto& cnn = std::get<CnnSpec>(c.spec);
                CHECK(cnn.receptive_field() <= cnn.seq_len);
                CHECK(cnn.layers.size() == 3);
            }
            if (k == ModelKind::mlp) CHECK(std::get<MlpSpec>(c.spec).hidden.size() == 2);
        }
    }
}

TEST_CASE("linear coefficient is sampled on a log scale") {
    const SearchSpace s;
    std::size_t below_one = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const auto& p = sample_config(s, ModelKind::linear, seed).train.penalty;
        if (p.l1 + 2 * p.l2 < 1.0) ++below_one;
    }
    // log10 of [1e-4, 10] puts 4/5 of the mass below 1.
    CHECK(below_one > 740);
    CHECK(below_one < 860);
}

TEST_CASE("committed default configurations lie inside the space") {
    const SearchSpace s;
    for (ModelKind k : kKinds) CHECK(contains(s, default_model_spec(k), default_train_config(k)));

    MlpSpec wide;
    wide.hidden = {90, 300};
    CHECK_FALSE(contains(s, wide, TrainConfig{}));
    CnnSpec odd;
    odd.layers[0].dilation = 4;
    CHECK_FALSE(contains(s, odd, TrainConfig{}));
    TrainConfig strong = default_train_config(ModelKind::linear);
    strong.penalty = PenaltySpec::from_coefficient(50.0, 0.5);
    CHECK_FALSE(contains(s, LinearSpec{}, strong));
    TrainConfig absolute = default_train_config(ModelKind::linear);
    absolute.loss = LossSpec::absolute();
    CHECK_FALSE(contains(s, LinearSpec{}, absolute));
}

TEST_CASE("leaderboard order") {
    const auto a = entry(1.0, 10, 5, 3);
    CHECK(ranks_before(entry(0.5, 99, 9, 9), a));
    CHECK(ranks_before(entry(1.0, 9, 9, 9), a));
    CHECK(ranks_before(entry(1.0, 10, 4, 9), a));
    CHECK(ranks_before(entry(1.0, 10, 5, 2), a));
    CHECK_FALSE(ranks_before(a, a));

    Rng rng(4);
    std::vector<LeaderboardEntry> es;
    for (std::size_t i = 0; i < 200; ++i) {
        es.push_back(entry(static_cast<double>(rng.uniform_int(0, 3)), static_cast<std::size_t>(rng.uniform_int(0, 3)),
                           static_cast<std::uint64_t>(rng.uniform_int(0, 3)), i));
    }
    for (const auto& x : es) {
        for (const auto& y : es) {
            if (x.candidate != y.candidate) CHECK(ranks_before(x, y) != ranks_before(y, x));
        }
    }
}

TEST_CASE("config hash ignores the training seed") {
    Candidate c = sample_config(SearchSpace{}, ModelKind::mlp, 4);
    const auto h = config_hash(c.spec, c.train);
    c.train.seed = 12345;
    CHECK(config_hash(c.spec, c.train) == h);
    c.train.batch += 1;
    CHECK(config_hash(c.spec, c.train) != h);
}

TEST_CASE("search is reproducible and ranked") {
    const Dataset d = waves(4);
    for (ModelKind k : kKinds) {
        const Leaderboard a = search(tiny_space(), k, d, short_spans(), quick_base(), 3, 21);
        const Leaderboard b = search(tiny_space(), k, d, short_spans(), quick_base(), 3, 21);
        CHECK(nlohmann::json(a).dump() == nlohmann::json(b).dump());
        CHECK(a.entries.size() + a.failed.size() == 3);
        CHECK(a.budget == 3);
        CHECK(a.split.test_ids.size() == 1);
        for (std::size_t i = 1; i < a.entries.size(); ++i) CHECK_FALSE(ranks_before(a.entries[i], a.entries[i - 1]));
        for (const auto& e : a.entries) {
            CHECK(e.seed == derive_seed(21, e.candidate));
            CHECK(e.train.seed == e.seed);
            CHECK(e.val_losses.size() == 1);
            CHECK(e.mean_val_loss == e.val_losses.front());
            CHECK(contains(tiny_space(), e.spec, e.train));
        }
        SearchOptions parallel;
        parallel.jobs = 3;
        const Leaderboard c = search(tiny_space(), k, d, short_spans(), quick_base(), 3, 21, parallel);
        CHECK(nlohmann::json(c).dump() == nlohmann::json(a).dump());
    }
}

TEST_CASE("budget of one gives one entry") {
    const Leaderboard b = search(tiny_space(), ModelKind::linear, waves(3), short_spans(), quick_base(), 1, 2);
    CHECK(b.entries.size() == 1);
    CHECK(b.failed.empty());
    const nlohmann::json j = b;
    CHECK(j.at("best").at("candidate") == b.entries.front().candidate);
    CHECK(j.at("entries").at(0).at("rank") == 1);
}

TEST_CASE("diverging candidates are recorded, not fatal") {
    TrainConfig base = quick_base();
    base.schedule = {ScheduleKind::constant, 1e6, 1.0};
    // Bounded-gradient losses or a strong lasso can survive a huge step, so keep only squared loss.
    SearchSpace space = tiny_space();
    space.linear.losses = {LossSpec::squared()};
    space.linear.coefficient = {1e-4, 1e-3};
    const Leaderboard b = search(space, ModelKind::linear, waves(3), short_spans(), base, 2, 3);
    CHECK(b.entries.empty());
    REQUIRE(b.failed.size() == 2);
    CHECK(b.failed[0].candidate == 0);
    CHECK(b.failed[1].candidate == 1);
    CHECK(b.failed[0].error.find("diverged") != std::string::npos);
    CHECK(nlohmann::json(b).at("best").is_null());
}

TEST_CASE("search ignores the held-out profile") {
    const Dataset d = waves(4);
    const Leaderboard a = search(tiny_space(), ModelKind::mlp, d, short_spans(), quick_base(), 2, 8);
    std::vector<Profile> ps = d.profiles();
    for (auto& p : ps) {
        if (p.id != a.split.test_ids.front()) continue;
        for (auto& s : p.samples) s.T_W += 100;
    }
    const Leaderboard b = search(tiny_space(), ModelKind::mlp, Dataset(ps, {}), short_spans(), quick_base(), 2, 8);
    CHECK(nlohmann::json(a).dump() == nlohmann::json(b).dump());
}

TEST_CASE("search argument errors") {
    CHECK_THROWS_AS(search(tiny_space(), ModelKind::linear, waves(3), short_spans(), quick_base(), 0, 1), ConfigError);
    CHECK_THROWS_AS(search(tiny_space(), ModelKind::linear, waves(2), short_spans(), quick_base(), 1, 1), ConfigError);
}
