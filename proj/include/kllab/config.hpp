#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kllab/dist.hpp"
#include "kllab/mara.hpp"
#include "kllab/trainer.hpp"

namespace kllab {

// Plain-text configuration shared by scenario files, sweeps and the CLI.
//
//   # comment
//   name      = fig2_two_mode
//   n         = 100
//   reference = half_support(slope = 0.076)
//   rewards   = two_mode(c1 = 19, w1 = 3, h1 = 0.75, c2 = 44, w2 = 3, h2 = 1.0)
//   betas     = [0.01, 0.05, 0.1]
//
// A value is a number, a bare word, a bracketed list of values, or a shape
// call `word(key = number, ...)`. One entry per line; keys may not repeat.

struct ConfigValue {
    enum class Kind { Number, Word, List, Shape };
    struct Arg {
        std::string key;
        double value = 0.0;
        std::size_t line = 0;
        std::size_t column = 0;
    };

    Kind kind = Kind::Number;
    double number = 0.0;
    std::string text;                // Word, or the shape name
    std::vector<ConfigValue> items;  // List
    std::vector<Arg> args;           // Shape
    std::size_t line = 0;
    std::size_t column = 0;

    [[noreturn]] void fail(const std::string& message) const;
    double as_number() const;
    std::string as_word() const;
    std::size_t as_index() const;
    std::uint64_t as_seed() const;
    std::vector<double> as_numbers() const;
};

struct ConfigEntry {
    std::string key;
    ConfigValue value;
    std::size_t line = 0;
    std::size_t column = 0;
};

class ConfigDocument {
public:
    // Throws ConfigError with the 1-based position of the first problem.
    static ConfigDocument parse(std::string_view text);
    static ConfigDocument load(const std::string& path);  // IoFailure if unreadable

    const std::vector<ConfigEntry>& entries() const noexcept { return entries_; }
    const ConfigEntry* find(std::string_view key) const;
    bool has(std::string_view key) const { return find(key) != nullptr; }

private:
    std::vector<ConfigEntry> entries_;
};

// Reference shapes: uniform(), half_support(slope), mixture(floor, c1, w1, m1,
// ..., c4, w4, m4, support), or an explicit list of masses.
Categorical reference_from_value(const ConfigValue& v, std::size_t n);

// Reward shapes: two_mode / two_plateau(c1, w1, h1, c2, w2, h2, base),
// constant(value), or an explicit list.
std::vector<double> rewards_from_value(const ConfigValue& v, std::size_t n);

// Contiguous index ranges around each shape center where the reward exceeds
// base + half the mode height. Empty for shapes without named modes.
std::vector<ModeRange> derived_modes(const ConfigValue& rewards, std::span<const double> values);

// Everything a config file can say. Unset fields keep their defaults.
struct LabConfig {
    std::optional<Scenario> scenario;         // inline definition (name, n, reference, rewards)
    std::optional<std::string> scenario_ref;  // `scenario = <builtin name>`

    std::vector<ObjectiveKind> objectives{ObjectiveKind::ReverseKL, ObjectiveKind::ForwardKL};
    std::vector<double> betas{0.01, 0.05, 0.10, 0.132, 0.15, 0.25, 0.5};
    std::vector<std::uint64_t> seeds{0, 1, 2};
    double eta = 0.0;

    TrainConfig train;  // objective and seed are filled per sweep cell

    std::optional<ThresholdRule> mara_threshold;
    AnchorTiebreak mara_tiebreak = AnchorTiebreak::LowestIndex;
};

// Validates keys and value forms against the schema. Unknown keys, wrong value
// kinds and length mismatches raise ConfigError at the offending position.
LabConfig interpret(const ConfigDocument& doc);

// Scenario-only view used for the shipped scenario files.
Scenario scenario_from_config(const ConfigDocument& doc);

}  // namespace kllab
