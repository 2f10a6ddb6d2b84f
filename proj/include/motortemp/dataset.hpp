#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace motortemp {

enum class DynamicsClass { slow, medium, fast };

std::string_view to_string(DynamicsClass c);
DynamicsClass parse_dynamics(std::string_view name);

// One 1 Hz observation of drive signals and measured temperatures.
struct Sample {
    std::int64_t t = 0;   // seconds since profile start
    double n_m = 0.0;     // motor speed, rpm
    double I_m = 0.0;     // motor current, A
    double T_ref = 0.0;   // shell/reference temperature, degC
    double T_W = 0.0;     // winding, degC
    double T_DE = 0.0;    // drive-end bearing, degC
    double T_NDE = 0.0;   // non-drive-end bearing, degC

    bool operator==(const Sample&) const = default;
};

inline constexpr std::string_view kInputColumns[] = {"n_m", "I_m", "T_ref"};
inline constexpr std::string_view kTargetColumns[] = {"T_W", "T_DE", "T_NDE"};
inline constexpr std::string_view kCsvColumns[] = {"t", "n_m", "I_m", "T_ref", "T_W", "T_DE", "T_NDE"};

// One operating run.
struct Profile {
    std::string id;
    DynamicsClass dynamics = DynamicsClass::slow;
    std::vector<Sample> samples;

    bool operator==(const Profile&) const = default;
};

struct Violation {
    std::string field;
    std::optional<std::size_t> index;
    std::string message;
};

struct ValidationOptions {
    // Speed and current are magnitudes in every dataset this project produces.
    bool require_nonnegative_drive = true;
};

std::vector<Violation> validate_profile(const Profile& p, const ValidationOptions& opts = {});

// Throws DataError listing the first violations when validate_profile is non-empty.
void require_valid(const Profile& p, const ValidationOptions& opts = {});

// Parses the seven-column CSV. Columns may appear in any order; extra columns are ignored.
Profile parse_profile_csv(std::istream& in, std::string id, DynamicsClass dynamics);
Profile read_profile_csv(const std::filesystem::path& path, std::string id, DynamicsClass dynamics);

// Inputs-only variant used for inference: requires t, n_m, I_m, T_ref. Target fields are left at 0.
Profile parse_inputs_csv(std::istream& in, std::string id);

// Shortest round-trip decimal text for every value.
void write_profile_csv(std::ostream& out, const Profile& p);

// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

struct Provenance {
    enum class Kind { synthetic, imported };
    Kind kind = Kind::synthetic;
    std::uint64_t seed = 0;
    std::string path;

    bool operator==(const Provenance&) const = default;
};

class Dataset {
public:
    Dataset() = default;
    // Throws DataError on duplicate ids.
    Dataset(std::vector<Profile> profiles, Provenance provenance);

    const std::vector<Profile>& profiles() const { return profiles_; }
    const Provenance& provenance() const { return provenance_; }
    std::size_t size() const { return profiles_.size(); }

    const Profile* find(std::string_view id) const;
    const Profile& at(std::string_view id) const;
    std::vector<std::string> ids() const;

    bool operator==(const Dataset&) const = default;

private:
    std::vector<Profile> profiles_;
    Provenance provenance_;
};

// Manifest: {"profiles":[{"id":..., "file":..., "dynamics":"slow|medium|fast"}]}; files are
// relative to the manifest's directory.
Dataset load_dataset(const std::filesystem::path& manifest);
void save_dataset(const Dataset& d, const std::filesystem::path& dir);

struct Split {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> test_ids;

    bool operator==(const Split&) const = default;
};

// Test set is {test_id}; n_val validation profiles drawn from the remainder by seed.
Split split_leave_one_out(const Dataset& d, std::string_view test_id, std::size_t n_val, std::uint64_t seed);

// Throws DataError unless the split partitions the dataset's ids with non-empty train and test.
void check_split(const Split& s, const Dataset& d);

}  // namespace motortemp
