#include "motortemp/dataset.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>

#include <nlohmann/json.hpp>

#include "motortemp/errors.hpp"
#include "motortemp/io.hpp"
#include "motortemp/rng.hpp"

namespace motortemp {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

double parse_cell(std::string_view text, std::size_t row, std::string_view column) {
    text = trim(text);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
        throw DataError("row " + std::to_string(row) + ", column " + std::string(column) +
                        ": non-numeric cell '" + std::string(text) + "'");
    }
    return v;
}

double* field_of(Sample& s, std::string_view name) {
    if (name == "n_m") return &s.n_m;
    if (name == "I_m") return &s.I_m;
    if (name == "T_ref") return &s.T_ref;
    if (name == "T_W") return &s.T_W;
    if (name == "T_DE") return &s.T_DE;
    if (name == "T_NDE") return &s.T_NDE;
    return nullptr;
}

// Reads a CSV requiring `required` columns; rows are numbered from 1 after the header.
Profile parse_csv(std::istream& in, std::string id, DynamicsClass dynamics,
                  std::span<const std::string_view> required) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("profile " + id + ": empty CSV");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM

    std::map<std::string, std::size_t, std::less<>> header;
    auto names = split_fields(line);
    for (std::size_t i = 0; i < names.size(); ++i) header.emplace(std::string(trim(names[i])), i);

    std::vector<std::pair<std::string_view, std::size_t>> columns;
    for (auto col : required) {
        auto it = header.find(col);
        if (it == header.end()) throw DataError("profile " + id + ": missing column " + std::string(col));
        columns.emplace_back(col, it->second);
    }

    Profile p{std::move(id), dynamics, {}};
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++row;
        auto cells = split_fields(line);
        Sample s;
        for (auto [name, index] : columns) {
            if (index >= cells.size()) {
                throw DataError("row " + std::to_string(row) + ", column " + std::string(name) + ": missing cell");
            }
            double v = parse_cell(cells[index], row, name);
            if (name == "t") {
                if (!std::isfinite(v) || v != std::floor(v)) {
                    throw DataError("row " + std::to_string(row) + ", column t: timestamp is not an integer");
                }
                s.t = static_cast<std::int64_t>(v);
            } else {
                *field_of(s, name) = v;
            }
        }
        if (!p.samples.empty() && s.t != p.samples.back().t + 1) {
            throw DataError("row " + std::to_string(row) + ": timestamp " + std::to_string(s.t) +
                            (s.t <= p.samples.back().t ? " is not increasing" : " leaves a gap") +
                            " after " + std::to_string(p.samples.back().t) + " (1 Hz grid required)");
        }
        p.samples.push_back(s);
    }
    require_valid(p);
    return p;
}

}  // namespace

std::string_view to_string(DynamicsClass c) {
    switch (c) {
        case DynamicsClass::slow: return "slow";
        case DynamicsClass::medium: return "medium";
        case DynamicsClass::fast: return "fast";
    }
    return "unknown";
}

DynamicsClass parse_dynamics(std::string_view name) {
    if (name == "slow") return DynamicsClass::slow;
    if (name == "medium") return DynamicsClass::medium;
    if (name == "fast") return DynamicsClass::fast;
    throw ConfigError("unknown dynamics class '" + std::string(name) + "' (expected slow|medium|fast)");
}

std::vector<Violation> validate_profile(const Profile& p, const ValidationOptions& opts) {
    std::vector<Violation> out;
    if (p.samples.size() < 2) out.push_back({"samples", std::nullopt, "fewer than 2 samples"});
    for (std::size_t i = 0; i < p.samples.size(); ++i) {
        const Sample& s = p.samples[i];
        if (i > 0 && s.t != p.samples[i - 1].t + 1) {
            out.push_back({"t", i, "timestamp step is not exactly 1 s"});
        }
        const std::array<std::pair<std::string_view, double>, 6> fields{{{"n_m", s.n_m},
                                                                         {"I_m", s.I_m},
                                                                         {"T_ref", s.T_ref},
                                                                         {"T_W", s.T_W},
                                                                         {"T_DE", s.T_DE},
                                                                         {"T_NDE", s.T_NDE}}};
        for (auto [name, v] : fields) {
            if (!std::isfinite(v)) {
                out.push_back({std::string(name), i, "non-finite value"});
            } else if (opts.require_nonnegative_drive && (name == "n_m" || name == "I_m") && v < 0.0) {
                out.push_back({std::string(name), i, "negative magnitude"});
            }
        }
    }
    return out;
}

void require_valid(const Profile& p, const ValidationOptions& opts) {
    auto violations = validate_profile(p, opts);
    if (violations.empty()) return;
    std::ostringstream msg;
    msg << "profile " << p.id << ": " << violations.size() << " violation(s)";
    for (std::size_t i = 0; i < std::min<std::size_t>(violations.size(), 3); ++i) {
        const auto& v = violations[i];
        msg << "; " << v.field;
        if (v.index) msg << "[" << *v.index << "]";
        msg << ": " << v.message;
    }
    throw DataError(msg.str());
}

Profile parse_profile_csv(std::istream& in, std::string id, DynamicsClass dynamics) {
    return parse_csv(in, std::move(id), dynamics, kCsvColumns);
}

Profile read_profile_csv(const std::filesystem::path& path, std::string id, DynamicsClass dynamics) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return parse_profile_csv(in, std::move(id), dynamics);
}

Profile parse_inputs_csv(std::istream& in, std::string id) {
    static constexpr std::string_view cols[] = {"t", "n_m", "I_m", "T_ref"};
    return parse_csv(in, std::move(id), DynamicsClass::slow, cols);
}

std::string format_double(double v) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

void write_profile_csv(std::ostream& out, const Profile& p) {
    out << "t,n_m,I_m,T_ref,T_W,T_DE,T_NDE\n";
    for (const auto& s : p.samples) {
        out << s.t << ',' << format_double(s.n_m) << ',' << format_double(s.I_m) << ',' << format_double(s.T_ref)
            << ',' << format_double(s.T_W) << ',' << format_double(s.T_DE) << ',' << format_double(s.T_NDE) << '\n';
    }
}

Dataset::Dataset(std::vector<Profile> profiles, Provenance provenance)
    : profiles_(std::move(profiles)), provenance_(std::move(provenance)) {
    std::set<std::string_view> seen;
    for (const auto& p : profiles_) {
        if (!seen.insert(p.id).second) throw DataError("duplicate profile id '" + p.id + "'");
    }
}

const Profile* Dataset::find(std::string_view id) const {
    auto it = std::find_if(profiles_.begin(), profiles_.end(), [&](const Profile& p) { return p.id == id; });
    return it == profiles_.end() ? nullptr : &*it;
}

const Profile& Dataset::at(std::string_view id) const {
    const Profile* p = find(id);
    if (!p) throw DataError("unknown profile id '" + std::string(id) + "'");
    return *p;
}

std::vector<std::string> Dataset::ids() const {
    std::vector<std::string> out;
    out.reserve(profiles_.size());
    for (const auto& p : profiles_) out.push_back(p.id);
    return out;
}

Dataset load_dataset(const std::filesystem::path& manifest) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(manifest));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + manifest.string() + ": " + e.what());
    }
    if (!j.contains("profiles") || !j["profiles"].is_array()) {
        throw DataError("manifest " + manifest.string() + ": missing \"profiles\" array");
    }
    const auto base = manifest.parent_path();
    std::vector<Profile> profiles;
    try {
        for (const auto& entry : j["profiles"]) {
            auto id = entry.at("id").get<std::string>();
            auto file = entry.at("file").get<std::string>();
            auto dyn = parse_dynamics(entry.at("dynamics").get<std::string>());
            Profile p = read_profile_csv(base / file, id, dyn);
            require_valid(p);
            profiles.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + manifest.string() + ": " + e.what());
    } catch (const ConfigError& e) {
        throw DataError("manifest " + manifest.string() + ": " + e.what());
    }
    Provenance prov{Provenance::Kind::imported, 0, manifest.string()};
    if (j.contains("provenance") && j["provenance"].value("kind", "") == "synthetic") {
        prov = {Provenance::Kind::synthetic, j["provenance"].value<std::uint64_t>("seed", 0), {}};
    }
    return Dataset(std::move(profiles), std::move(prov));
}

void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["profiles"] = nlohmann::json::array();
    for (const auto& p : d.profiles()) {
        const std::string file = p.id + ".csv";
        std::ostringstream csv;
        write_profile_csv(csv, p);
        write_file_atomic(dir / file, csv.str());
        manifest["profiles"].push_back({{"id", p.id}, {"file", file}, {"dynamics", to_string(p.dynamics)}});
    }
    if (d.provenance().kind == Provenance::Kind::synthetic) {
        manifest["provenance"] = {{"kind", "synthetic"}, {"seed", d.provenance().seed}};
    } else {
        manifest["provenance"] = {{"kind", "imported"}, {"path", d.provenance().path}};
    }
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Split split_leave_one_out(const Dataset& d, std::string_view test_id, std::size_t n_val, std::uint64_t seed) {
    if (!d.find(test_id)) throw DataError("unknown test profile id '" + std::string(test_id) + "'");
    if (d.size() < 2 || n_val > d.size() - 2) {
        throw ConfigError("n_val = " + std::to_string(n_val) + " too large for " + std::to_string(d.size()) +
                          " profiles (at most n - 2)");
    }
    std::vector<std::string> rest;
    for (const auto& p : d.profiles()) {
        if (p.id != test_id) rest.push_back(p.id);
    }
    Rng rng(seed);
    std::vector<std::size_t> order(rest.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    std::vector<bool> is_val(rest.size(), false);
    for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;

    Split s;
    s.test_ids = {std::string(test_id)};
    // Dataset order is kept inside each set.
    for (std::size_t i = 0; i < rest.size(); ++i) (is_val[i] ? s.val_ids : s.train_ids).push_back(rest[i]);
    return s;
}

void check_split(const Split& s, const Dataset& d) {
    if (s.train_ids.empty()) throw DataError("split has no training profiles");
    if (s.test_ids.empty()) throw DataError("split has no test profiles");
    std::set<std::string> seen;
    for (const auto* set : {&s.train_ids, &s.val_ids, &s.test_ids}) {
        for (const auto& id : *set) {
            if (!d.find(id)) throw DataError("split references unknown profile '" + id + "'");
            if (!seen.insert(id).second) throw DataError("profile '" + id + "' appears in more than one split set");
        }
    }
    if (seen.size() != d.size()) throw DataError("split does not cover every profile of the dataset");
}

}  // namespace motortemp
