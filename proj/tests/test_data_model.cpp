#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "motortemp/dataset.hpp"
#include "motortemp/errors.hpp"
#include "support.hpp"

using namespace motortemp;

namespace {

const char* kThreeRows =
    "t,n_m,I_m,T_ref,T_W,T_DE,T_NDE\n"
    "0,100,5,25,30,26,27\n"
    "1,200,6,25.5,31,26.5,27.5\n"
    "2,300,7,26,32,27,28\n";

Profile parse(const std::string& text) {
    std::istringstream in(text);
    return parse_profile_csv(in, "p", DynamicsClass::fast);
}

std::string error_of(const std::string& text) {
    try {
        parse(text);
    } catch (const DataError& e) {
        return e.what();
    }
    return {};
}

Dataset letters(std::size_t n) {
    std::vector<Profile> ps;
    for (std::size_t i = 0; i < n; ++i) ps.push_back(testsupport::wave_profile(std::string(1, char('a' + i)), 10, 0.1 * i));
    return Dataset(std::move(ps), {});
}

}  // namespace

TEST_CASE("three well-formed rows parse in order") {
    const Profile p = parse(kThreeRows);
    REQUIRE(p.samples.size() == 3);
    CHECK(p.id == "p");
    CHECK(p.dynamics == DynamicsClass::fast);
    CHECK(p.samples[0].t == 0);
    CHECK(p.samples[2].t == 2);
    CHECK(p.samples[1].n_m == 200);
    CHECK(p.samples[1].T_ref == 25.5);
    CHECK(p.samples[2].T_NDE == 28);
}

TEST_CASE("columns may appear in any order") {
    const Profile p = parse(
        "T_NDE,T_DE,T_W,T_ref,I_m,n_m,t\n"
        "27,26,30,25,5,100,0\n"
        "28,27,32,26,7,300,1\n");
    REQUIRE(p.samples.size() == 2);
    CHECK(p.samples[1].n_m == 300);
    CHECK(p.samples[1].T_NDE == 28);
}

TEST_CASE("timestamp gap names the offending row") {
    const auto msg = error_of(
        "t,n_m,I_m,T_ref,T_W,T_DE,T_NDE\n"
        "0,1,1,1,1,1,1\n"
        "2,1,1,1,1,1,1\n");
    CHECK(msg.find("row 2") != std::string::npos);
    CHECK(msg.find("gap") != std::string::npos);
}

TEST_CASE("non-increasing timestamps are rejected") {
    const auto msg = error_of(
        "t,n_m,I_m,T_ref,T_W,T_DE,T_NDE\n"
        "5,1,1,1,1,1,1\n"
        "5,1,1,1,1,1,1\n");
    CHECK(msg.find("not increasing") != std::string::npos);
}

TEST_CASE("missing column is reported") {
    const auto msg = error_of("t,n_m,I_m,T_ref,T_W,T_DE\n0,1,1,1,1,1\n1,1,1,1,1,1\n");
    CHECK(msg.find("missing column T_NDE") != std::string::npos);
}

TEST_CASE("non-numeric cell names row and column") {
    const auto msg = error_of(
        "t,n_m,I_m,T_ref,T_W,T_DE,T_NDE\n"
        "0,1,1,1,1,1,1\n"
        "1,1,abc,1,1,1,1\n");
    CHECK(msg.find("row 2") != std::string::npos);
    CHECK(msg.find("I_m") != std::string::npos);
}

TEST_CASE("parsed profiles must satisfy the sample invariants") {
    CHECK_THROWS_AS(parse("t,n_m,I_m,T_ref,T_W,T_DE,T_NDE\n0,1,1,1,nan,1,1\n1,1,1,1,1,1,1\n"), DataError);
    CHECK_THROWS_AS(parse("t,n_m,I_m,T_ref,T_W,T_DE,T_NDE\n0,1,1,1,1,1,1\n"), DataError);
}

TEST_CASE("validate_profile") {
    Profile p = testsupport::wave_profile("v", 5, 0.0);
    CHECK(validate_profile(p).empty());

    SUBCASE("NaN winding temperature names field and index") {
        p.samples[3].T_W = std::numeric_limits<double>::quiet_NaN();
        const auto v = validate_profile(p);
        REQUIRE(v.size() == 1);
        CHECK(v[0].field == "T_W");
        CHECK(v[0].index == std::optional<std::size_t>(3));
    }
    SUBCASE("single sample") {
        p.samples.resize(1);
        const auto v = validate_profile(p);
        REQUIRE(v.size() == 1);
        CHECK(v[0].message == "fewer than 2 samples");
    }
    SUBCASE("negative speed is checked only when configured") {
        p.samples[1].n_m = -1.0;
        CHECK(validate_profile(p).size() == 1);
        CHECK(validate_profile(p, {.require_nonnegative_drive = false}).empty());
    }
    SUBCASE("broken time grid") {
        p.samples[2].t = 7;
        CHECK_FALSE(validate_profile(p).empty());
    }
}

TEST_CASE("write then parse is bit-exact") {
    Rng rng(42);
    Profile p{"rt", DynamicsClass::medium, {}};
    for (int i = 0; i < 200; ++i) {
        Sample s;
        s.t = i;
        s.n_m = rng.uniform(0, 1478);
        s.I_m = rng.uniform(0, 30.6) * 1e-3;
        s.T_ref = rng.normal(30, 5);
        s.T_W = rng.normal(50, 10) * 1e7;
        s.T_DE = 1.0 / 3.0 + i;
        s.T_NDE = std::nextafter(40.0, 41.0);
        p.samples.push_back(s);
    }
    std::ostringstream out;
    write_profile_csv(out, p);
    std::istringstream in(out.str());
    const Profile back = parse_profile_csv(in, "rt", DynamicsClass::medium);
    CHECK(back == p);

    std::ostringstream again;
    write_profile_csv(again, back);
    CHECK(again.str() == out.str());
}

TEST_CASE("format_double round-trips") {
    for (double v : {0.0, -0.0, 1e-300, 123.456, 1.0 / 7.0, 6.02214076e23}) {
        const std::string s = format_double(v);
        CHECK(std::stod(s) == v);
    }
}

TEST_CASE("dynamics names") {
    for (auto c : {DynamicsClass::slow, DynamicsClass::medium, DynamicsClass::fast}) {
        CHECK(parse_dynamics(to_string(c)) == c);
    }
    CHECK_THROWS_AS(parse_dynamics("turbo"), ConfigError);
}

TEST_CASE("dataset rejects duplicate ids") {
    std::vector<Profile> ps{testsupport::wave_profile("x", 5, 0), testsupport::wave_profile("x", 5, 1)};
    CHECK_THROWS_AS(Dataset(ps, {}), DataError);
}

TEST_CASE("leave-one-out split of three profiles") {
    const Dataset d = letters(3);
    const Split s = split_leave_one_out(d, "b", 1, 9);
    CHECK(s.test_ids == std::vector<std::string>{"b"});
    CHECK(s.val_ids.size() == 1);
    CHECK(s.train_ids.size() == 1);
    CHECK_NOTHROW(check_split(s, d));
}

TEST_CASE("split errors") {
    const Dataset d = letters(4);
    CHECK_THROWS_AS(split_leave_one_out(d, "zz", 1, 0), DataError);
    CHECK_THROWS_AS(split_leave_one_out(d, "a", 3, 0), ConfigError);
    CHECK_NOTHROW(split_leave_one_out(d, "a", 2, 0));
}

TEST_CASE("eighteen profiles give eighteen distinct partitioning splits") {
    const Dataset d = letters(18);
    std::set<std::vector<std::string>> tests;
    for (std::uint64_t seed : {0u, 1u, 77u}) {
        for (const auto& id : d.ids()) {
            const Split s = split_leave_one_out(d, id, 2, seed);
            check_split(s, d);
            std::set<std::string> all(s.train_ids.begin(), s.train_ids.end());
            all.insert(s.val_ids.begin(), s.val_ids.end());
            all.insert(s.test_ids.begin(), s.test_ids.end());
            CHECK(all.size() == 18);
            CHECK(s.train_ids.size() + s.val_ids.size() + s.test_ids.size() == 18);
            CHECK(s == split_leave_one_out(d, id, 2, seed));
            if (seed == 0) tests.insert(s.test_ids);
        }
    }
    CHECK(tests.size() == 18);
}

TEST_CASE("validation draw depends on the seed") {
    const Dataset d = letters(10);
    std::set<std::vector<std::string>> vals;
    for (std::uint64_t seed = 0; seed < 20; ++seed) vals.insert(split_leave_one_out(d, "a", 2, seed).val_ids);
    CHECK(vals.size() > 1);
}

TEST_CASE("check_split catches broken partitions") {
    const Dataset d = letters(4);
    Split s = split_leave_one_out(d, "a", 1, 0);
    Split overlap = s;
    overlap.train_ids.push_back("a");
    CHECK_THROWS_AS(check_split(overlap, d), DataError);
    Split missing = s;
    missing.train_ids.pop_back();
    CHECK_THROWS_AS(check_split(missing, d), DataError);
    Split no_test = s;
    no_test.train_ids.push_back("a");
    no_test.test_ids.clear();
    CHECK_THROWS_AS(check_split(no_test, d), DataError);
}

TEST_CASE("dataset save and load round trip") {
    const auto dir = testsupport::scratch_dir("dataset_rt");
    std::vector<Profile> ps{testsupport::wave_profile("s1", 20, 0.0, DynamicsClass::slow),
                            testsupport::wave_profile("f1", 15, 0.5, DynamicsClass::fast)};
    const Dataset d(ps, {Provenance::Kind::synthetic, 99, {}});
    save_dataset(d, dir);
    const Dataset back = load_dataset(dir / "manifest.json");
    CHECK(back.profiles() == d.profiles());
    CHECK(back.provenance().kind == Provenance::Kind::synthetic);
    CHECK(back.provenance().seed == 99);
    CHECK_THROWS_AS(load_dataset(dir / "absent.json"), DataError);
}
