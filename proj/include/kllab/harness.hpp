#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kllab/config.hpp"
#include "kllab/dist.hpp"
#include "kllab/mara.hpp"
#include "kllab/trainer.hpp"

namespace kllab {

// Raw text of the shipped scenarios/*.cfg files, embedded at build time.
struct EmbeddedFile {
    std::string_view name;  // file name without directory
    std::string_view text;
};
std::span<const EmbeddedFile> embedded_scenario_files();

// The five 100-token didactic scenarios, in a fixed order:
// fig2_two_mode, equal_reference, equal_reward_unequal_support,
// on_off_support, mara_toy.
std::vector<Scenario> builtin_scenarios();

// Any built-in scenario, plus the two-token "two_point" example.
Scenario scenario_by_name(std::string_view name);
std::vector<std::string> scenario_names();

struct SweepSpec {
    Scenario scenario;
    std::vector<Objective> objectives;  // beta is taken from `betas`, eta from here
    std::vector<double> betas;
    std::vector<std::uint64_t> seeds;
    TrainConfig train;               // objective, seed and mara are set per cell
    std::optional<MaraConfig> mara;  // beta is set per cell

    void validate() const;
    std::size_t cell_count() const { return objectives.size() * betas.size() * seeds.size(); }
};

struct RunRecord {
    std::string scenario;
    std::string objective;
    double beta = 0.0;
    double eta = 0.0;
    std::uint64_t seed = 0;
    bool mara_enabled = false;
    std::string tau_rule = "none";
    std::string mode = "exact";  // exact | monte_carlo
    double final_tv = 0.0;
    double entropy = 0.0;
    double answer_entropy = 0.0;
    double mode1_mass = 0.0;
    double mode2_mass = 0.0;
    std::size_t anchor_churn = 0;
    std::size_t steps = 0;
    double wall_ms = 0.0;
    std::string status = "ok";  // "ok" or "failed: <reason>"

    std::vector<double> policy;  // final trained masses
    std::vector<double> target;  // analytic target masses

    bool ok() const noexcept { return status == "ok"; }
};

// Seed used by the trainer for one sweep cell. Depends only on the cell
// coordinates, never on scheduling.
std::uint64_t cell_seed(const Objective& objective, double beta, std::uint64_t seed);

// Runs one cell. Errors are caught and recorded in `status`.
RunRecord run_cell(const SweepSpec& spec, std::size_t objective_index, std::size_t beta_index,
                   std::size_t seed_index, bool timing = true);

// All cells on `workers` OpenMP threads. Records come back in canonical order
// (objective, beta, seed as listed in the spec). With timing off wall_ms is 0
// and output is identical for any worker count.
std::vector<RunRecord> run_sweep(const SweepSpec& spec, int workers, bool timing = true);

// Single-threaded reference implementation of run_sweep.
std::vector<RunRecord> run_sweep_serial(const SweepSpec& spec, bool timing = true);

// Entropy of the answer distribution: masses summed per cell, renormalized
// over the cells. Throws InvalidPartition on overlapping cells.
double answer_entropy(const Categorical& policy, std::span<const std::vector<std::size_t>> partition);
double answer_entropy(std::span<const double> masses, std::span<const ModeRange> modes);

// Sweep spec from a parsed config. The scenario comes from the config itself
// or from `scenario = <name>`.
SweepSpec sweep_from_config(const LabConfig& cfg);

// Decimal with 17 significant digits, which round-trips every double.
std::string format_double(double x);

std::string records_csv(std::span<const RunRecord> records);

struct CriterionResult {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string measured;
    std::string requirement;
};

// Writes records.csv, policies.csv, one <scenario>_<objective>.svg per
// scenario/objective pair and summary.md into out_dir (created if missing),
// plus criteria.csv when criteria are given.
// Returns the written paths. Throws PreconditionViolation on empty input and
// IoFailure when the directory cannot be written.
std::vector<std::string> emit_report(std::span<const RunRecord> records, const std::string& out_dir,
                                     std::span<const CriterionResult> criteria = {});

// Reads back what emit_report wrote (records.csv joined with policies.csv,
// and criteria.csv if present). Throws IoFailure on missing or malformed files.
std::vector<RunRecord> load_records(const std::string& dir);
std::vector<CriterionResult> load_criteria(const std::string& dir);

}  // namespace kllab
