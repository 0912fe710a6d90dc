#include "kllab/harness.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "kllab/errors.hpp"
#include "kllab/rng.hpp"
#include "kllab/svg.hpp"

namespace kllab {

namespace {

const std::vector<std::string>& builtin_order() {
    static const std::vector<std::string> order{"fig2_two_mode", "equal_reference", "equal_reward_unequal_support",
                                                "on_off_support", "mara_toy"};
    return order;
}

Scenario parse_embedded(std::string_view file_name) {
    for (const auto& f : embedded_scenario_files()) {
        if (f.name == file_name) return scenario_from_config(ConfigDocument::parse(f.text));
    }
    throw PreconditionViolation("missing embedded scenario file " + std::string(file_name));
}

const std::map<std::string, Scenario, std::less<>>& scenario_table() {
    static const std::map<std::string, Scenario, std::less<>> table = [] {
        std::map<std::string, Scenario, std::less<>> t;
        for (const auto& f : embedded_scenario_files()) {
            Scenario s = scenario_from_config(ConfigDocument::parse(f.text));
            std::string key = s.name;
            t.emplace(std::move(key), std::move(s));
        }
        return t;
    }();
    return table;
}

}  // namespace

std::vector<Scenario> builtin_scenarios() {
    std::vector<Scenario> out;
    for (const auto& name : builtin_order()) out.push_back(parse_embedded(name + ".cfg"));
    return out;
}

Scenario scenario_by_name(std::string_view name) {
    const auto& table = scenario_table();
    const auto it = table.find(name);
    if (it == table.end()) throw PreconditionViolation("unknown scenario '" + std::string(name) + "'");
    return it->second;
}

std::vector<std::string> scenario_names() {
    std::vector<std::string> out;
    for (const auto& [name, s] : scenario_table()) out.push_back(name);
    return out;
}

void SweepSpec::validate() const {
    if (objectives.empty()) throw PreconditionViolation("sweep needs at least one objective");
    if (betas.empty()) throw PreconditionViolation("sweep needs at least one beta");
    if (seeds.empty()) throw PreconditionViolation("sweep needs at least one seed");
    for (double b : betas) {
        if (!(b > 0.0) || !std::isfinite(b)) throw InvalidCoefficient("every sweep beta must be > 0");
    }
    if (mara) {
        for (const auto& o : objectives) {
            if (o.kind == ObjectiveKind::TargetMatching)
                throw PreconditionViolation("MARA does not apply to target matching");
        }
    }
}

std::uint64_t cell_seed(const Objective& objective, double beta, std::uint64_t seed) {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ std::bit_cast<std::uint64_t>(beta));
    h = mix64(h ^ std::bit_cast<std::uint64_t>(objective.eta));
    return mix64(h ^ static_cast<std::uint64_t>(objective.kind));
}

double answer_entropy(const Categorical& policy, std::span<const std::vector<std::size_t>> partition) {
    std::vector<bool> seen(policy.size(), false);
    std::vector<double> cells;
    for (const auto& cell : partition) {
        double m = 0.0;
        for (std::size_t i : cell) {
            if (i >= policy.size()) throw InvalidPartition("partition index " + std::to_string(i) + " out of range");
            if (seen[i]) throw InvalidPartition("partition cells overlap at index " + std::to_string(i));
            seen[i] = true;
            m += policy.mass(i);
        }
        cells.push_back(m);
    }
    double total = 0.0;
    for (double m : cells) total += m;
    if (!(total > 0.0)) return 0.0;
    double h = 0.0;
    for (double m : cells) {
        if (m > 0.0) h -= (m / total) * std::log(m / total);
    }
    return h;
}

double answer_entropy(std::span<const double> masses, std::span<const ModeRange> modes) {
    std::vector<std::vector<std::size_t>> partition;
    for (const auto& m : modes) {
        std::vector<std::size_t> cell;
        for (std::size_t i = m.first; i <= m.last; ++i) cell.push_back(i);
        partition.push_back(std::move(cell));
    }
    return answer_entropy(Categorical::from_masses(masses), partition);
}

RunRecord run_cell(const SweepSpec& spec, std::size_t oi, std::size_t bi, std::size_t si, bool timing) {
    const Scenario& s = spec.scenario;
    Objective objective = spec.objectives.at(oi);
    objective.beta = spec.betas.at(bi);

    RunRecord rec;
    rec.scenario = s.name;
    rec.objective = std::string(to_string(objective.kind));
    rec.beta = objective.beta;
    rec.eta = objective.eta;
    rec.seed = spec.seeds.at(si);
    rec.mara_enabled = spec.mara.has_value();
    rec.tau_rule = spec.mara ? spec.mara->describe() : "none";
    rec.steps = spec.train.steps;
    rec.mode = spec.train.mode == GradientMode::Exact ? "exact" : "monte_carlo";

    const auto start = std::chrono::steady_clock::now();
    try {
        TrainConfig cfg = spec.train;
        cfg.objective = objective;
        cfg.seed = cell_seed(objective, objective.beta, rec.seed);
        cfg.mara = spec.mara;
        if (cfg.mara) cfg.mara->beta = objective.beta;

        const TrainResult result = train(s, cfg);
        rec.policy = result.final_policy.masses();
        rec.target = result.target.masses();
        rec.final_tv = tv_distance(result.final_policy, result.target);
        rec.entropy = entropy(result.final_policy);
        rec.answer_entropy = s.modes.empty() ? 0.0 : answer_entropy(rec.policy, s.modes);
        if (!s.modes.empty()) rec.mode1_mass = mode_mass(rec.policy, s.modes[0]);
        if (s.modes.size() > 1) rec.mode2_mass = mode_mass(rec.policy, s.modes[1]);
        rec.anchor_churn = result.anchor_churn;
    } catch (const std::exception& e) {
        rec.status = std::string("failed: ") + e.what();
        rec.policy.clear();
        rec.target.clear();
    }
    if (timing) {
        const auto elapsed = std::chrono::steady_clock::now() - start;
        rec.wall_ms = std::chrono::duration<double, std::milli>(elapsed).count();
    }
    return rec;
}

std::vector<RunRecord> run_sweep_serial(const SweepSpec& spec, bool timing) {
    spec.validate();
    std::vector<RunRecord> out;
    out.reserve(spec.cell_count());
    for (std::size_t o = 0; o < spec.objectives.size(); ++o) {
        for (std::size_t b = 0; b < spec.betas.size(); ++b) {
            for (std::size_t s = 0; s < spec.seeds.size(); ++s) out.push_back(run_cell(spec, o, b, s, timing));
        }
    }
    return out;
}

std::vector<RunRecord> run_sweep(const SweepSpec& spec, int workers, bool timing) {
    spec.validate();
    if (workers < 1) throw PreconditionViolation("workers must be >= 1");
    const std::size_t nb = spec.betas.size();
    const std::size_t ns = spec.seeds.size();
    const auto cells = static_cast<std::ptrdiff_t>(spec.cell_count());
    std::vector<RunRecord> out(spec.cell_count());

    // run_cell catches its own errors, so nothing escapes the parallel region.
#pragma omp parallel for schedule(dynamic, 1) num_threads(workers)
    for (std::ptrdiff_t c = 0; c < cells; ++c) {
        const auto k = static_cast<std::size_t>(c);
        out[k] = run_cell(spec, k / (nb * ns), (k / ns) % nb, k % ns, timing);
    }
    return out;
}

SweepSpec sweep_from_config(const LabConfig& cfg) {
    SweepSpec spec;
    if (cfg.scenario) {
        spec.scenario = *cfg.scenario;
    } else if (cfg.scenario_ref) {
        spec.scenario = scenario_by_name(*cfg.scenario_ref);
    } else {
        throw PreconditionViolation("config names no scenario");
    }
    for (ObjectiveKind k : cfg.objectives) spec.objectives.push_back(Objective{k, 1.0, cfg.eta});
    spec.betas = cfg.betas;
    spec.seeds = cfg.seeds;
    spec.train = cfg.train;
    if (cfg.mara_threshold) spec.mara = MaraConfig{*cfg.mara_threshold, 1.0, cfg.mara_tiebreak};
    spec.validate();
    return spec;
}

std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
    if (ec != std::errc()) throw PreconditionViolation("format_double failed");
    return std::string(buf, ptr);
}

namespace {

std::string csv_field(std::string_view text) {
    if (text.find_first_of(",\"\n") == std::string_view::npos) return std::string(text);
    std::string out = "\"";
    for (char c : text) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

}  // namespace

std::string records_csv(std::span<const RunRecord> records) {
    std::ostringstream os;
    os << "scenario,objective,beta,eta,seed,mara_enabled,tau_rule,final_tv,answer_entropy,mode1_mass,mode2_mass,"
          "anchor_churn,steps,wall_ms,mode,status\n";
    for (const auto& r : records) {
        os << csv_field(r.scenario) << ',' << r.objective << ',' << format_double(r.beta) << ','
           << format_double(r.eta) << ',' << r.seed << ',' << (r.mara_enabled ? "true" : "false") << ','
           << csv_field(r.tau_rule) << ',' << format_double(r.final_tv) << ',' << format_double(r.answer_entropy)
           << ',' << format_double(r.mode1_mass) << ',' << format_double(r.mode2_mass) << ',' << r.anchor_churn
           << ',' << r.steps << ',' << format_double(r.wall_ms) << ',' << r.mode << ',' << csv_field(r.status)
           << '\n';
    }
    return os.str();
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + path.string());
    out << content;
    out.close();
    if (!out) throw IoFailure("error while writing " + path.string());
}

std::string policies_csv(std::span<const RunRecord> records) {
    std::ostringstream os;
    os << "scenario,objective,beta,seed,mara_enabled,mode,token,policy,target\n";
    for (const auto& r : records) {
        for (std::size_t i = 0; i < r.policy.size(); ++i) {
            os << csv_field(r.scenario) << ',' << r.objective << ',' << format_double(r.beta) << ',' << r.seed << ','
               << (r.mara_enabled ? "true" : "false") << ',' << r.mode << ',' << i << ','
               << format_double(r.policy[i]) << ','
               << format_double(r.target[i]) << '\n';
        }
    }
    return os.str();
}

std::string fixed(double x, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, x);
    return buf;
}

struct Group {
    std::string scenario;
    std::string objective;
    bool mara = false;
    std::string mode;
    std::vector<const RunRecord*> runs;
};

std::string group_label(const Group& g) {
    return g.scenario + "_" + g.objective + (g.mara ? "_mara" : "") + (g.mode == "exact" ? "" : "_mc");
}

// Groups records by (scenario, objective, MARA) keeping first-seen order.
std::vector<Group> group_records(std::span<const RunRecord> records) {
    std::vector<Group> groups;
    for (const auto& r : records) {
        auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) {
            return g.scenario == r.scenario && g.objective == r.objective && g.mara == r.mara_enabled &&
                   g.mode == r.mode;
        });
        if (it == groups.end()) {
            groups.push_back({r.scenario, r.objective, r.mara_enabled, r.mode, {}});
            it = groups.end() - 1;
        }
        it->runs.push_back(&r);
    }
    return groups;
}

std::vector<double> distinct_betas(const Group& g) {
    std::vector<double> betas;
    for (const auto* r : g.runs) {
        if (std::find(betas.begin(), betas.end(), r->beta) == betas.end()) betas.push_back(r->beta);
    }
    return betas;
}

// One panel per beta: bars for the seed-averaged trained policy, a dashed
// line for the analytic target.
std::string group_svg(const Group& g) {
    const std::vector<double> betas = distinct_betas(g);
    const std::size_t cols = std::min<std::size_t>(4, betas.size());
    const std::size_t rows = (betas.size() + cols - 1) / cols;
    const double pw = 260.0;
    const double ph = 170.0;
    svg::Document doc(static_cast<double>(cols) * pw + 20.0, static_cast<double>(rows) * ph + 50.0);
    doc.text(10.0, 20.0, group_label(g) + ": trained policy (bars) vs analytic target (dashed)", 13.0);

    for (std::size_t k = 0; k < betas.size(); ++k) {
        std::vector<double> mean;
        std::vector<double> target;
        std::size_t count = 0;
        for (const auto* r : g.runs) {
            if (r->beta != betas[k] || !r->ok()) continue;
            if (mean.empty()) {
                mean.assign(r->policy.size(), 0.0);
                target = r->target;
            }
            for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += r->policy[i];
            ++count;
        }
        const double left = 20.0 + static_cast<double>(k % cols) * pw + 30.0;
        const double top = 50.0 + static_cast<double>(k / cols) * ph + 10.0;
        const std::string title = "beta = " + format_double(betas[k]);
        if (count == 0) {
            doc.text(left, top + 40.0, title + ": no successful runs", 10.0);
            continue;
        }
        for (double& m : mean) m /= static_cast<double>(count);
        double y_max = 0.0;
        for (std::size_t i = 0; i < mean.size(); ++i) y_max = std::max({y_max, mean[i], target[i]});
        if (!(y_max > 0.0)) y_max = 1.0;
        const auto n = static_cast<double>(mean.size());
        const svg::Frame f{left, top + 10.0, pw - 50.0, ph - 45.0, 0.0, n, 0.0, y_max * 1.05};
        svg::axes(doc, f, title);
        const double bar = f.width / n;
        std::vector<double> xs;
        std::vector<double> ys;
        for (std::size_t i = 0; i < mean.size(); ++i) {
            const double x = f.px(static_cast<double>(i));
            const double y = f.py(mean[i]);
            doc.rect(x, y, std::max(bar - 0.3, 0.3), f.top + f.height - y, "#4a7ab5");
            xs.push_back(x + bar / 2);
            ys.push_back(f.py(target[i]));
        }
        doc.polyline(xs, ys, "#d1495b", 1.2, "3,2");
    }
    return doc.str();
}

std::string criteria_csv(std::span<const CriterionResult> criteria) {
    std::ostringstream os;
    os << "id,criterion,verdict,measured,requirement\n";
    for (const auto& c : criteria) {
        os << c.id << ',' << csv_field(c.name) << ',' << (c.pass ? "PASS" : "FAIL") << ',' << csv_field(c.measured)
           << ',' << csv_field(c.requirement) << '\n';
    }
    return os.str();
}

std::string summary_md(std::span<const RunRecord> records, std::span<const CriterionResult> criteria) {
    std::ostringstream os;
    os << "# Sweep summary\n\n";
    if (!criteria.empty()) {
        std::size_t passed = 0;
        for (const auto& c : criteria) passed += c.pass ? 1 : 0;
        os << "## Acceptance criteria\n\n";
        os << passed << " of " << criteria.size() << " criteria pass.\n\n";
        os << "| # | criterion | measured | requirement | verdict |\n|---|---|---|---|---|\n";
        for (const auto& c : criteria) {
            os << "| " << c.id << " | " << c.name << " | " << c.measured << " | " << c.requirement << " | "
               << (c.pass ? "PASS" : "FAIL") << " |\n";
        }
        os << '\n';
    }

    std::size_t failed = 0;
    for (const auto& r : records) failed += r.ok() ? 0 : 1;
    os << "## Runs\n\n" << records.size() << " runs, " << failed << " failed.\n\n";
    os << "| scenario | objective | mara | gradient | beta | runs ok | mean TV | max TV | mode 1 mass | mode 2 mass |\n";
    os << "|---|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& g : group_records(records)) {
        for (double beta : distinct_betas(g)) {
            std::size_t ok = 0;
            std::size_t total = 0;
            double tv_sum = 0.0;
            double tv_max = 0.0;
            double m1 = 0.0;
            double m2 = 0.0;
            for (const auto* r : g.runs) {
                if (r->beta != beta) continue;
                ++total;
                if (!r->ok()) continue;
                ++ok;
                tv_sum += r->final_tv;
                tv_max = std::max(tv_max, r->final_tv);
                m1 += r->mode1_mass;
                m2 += r->mode2_mass;
            }
            const double denom = ok ? static_cast<double>(ok) : 1.0;
            os << "| " << g.scenario << " | " << g.objective << " | " << (g.mara ? "yes" : "no") << " | " << g.mode
               << " | " << format_double(beta) << " | " << ok << "/" << total << " | " << fixed(tv_sum / denom) << " | "
               << fixed(tv_max) << " | " << fixed(m1 / denom) << " | " << fixed(m2 / denom) << " |\n";
        }
    }
    for (const auto& r : records) {
        if (!r.ok())
            os << "\n- " << r.scenario << " " << r.objective << " beta=" << format_double(r.beta) << " seed=" << r.seed
               << ": " << r.status;
    }
    if (failed) os << '\n';
    return os.str();
}

}  // namespace

std::vector<std::string> emit_report(std::span<const RunRecord> records, const std::string& out_dir,
                                     std::span<const CriterionResult> criteria) {
    if (records.empty()) throw PreconditionViolation("emit_report: no records");
    namespace fs = std::filesystem;
    const fs::path dir(out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoFailure("cannot create output directory '" + out_dir + "'");

    std::vector<std::string> manifest;
    auto emit = [&](const std::string& name, const std::string& content) {
        const fs::path p = dir / name;
        write_file(p, content);
        manifest.push_back(p.string());
    };
    emit("records.csv", records_csv(records));
    emit("policies.csv", policies_csv(records));
    for (const auto& g : group_records(records)) emit(group_label(g) + ".svg", group_svg(g));
    if (!criteria.empty()) emit("criteria.csv", criteria_csv(criteria));
    emit("summary.md", summary_md(records, criteria));
    return manifest;
}

namespace {

// Splits one CSV line, honouring double-quoted fields.
std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                fields.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                fields.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.emplace_back();
        } else {
            fields.back() += c;
        }
    }
    return fields;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, std::size_t columns) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot read " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) continue;
        rows.push_back(split_csv(line));
        if (rows.back().size() != columns)
            throw IoFailure(path.string() + ": expected " + std::to_string(columns) + " columns on data row " +
                            std::to_string(rows.size()));
    }
    return rows;
}

double parse_real(const std::string& text, const std::filesystem::path& path) {
    if (text == "nan") return std::nan("");
    if (text == "inf") return HUGE_VAL;
    if (text == "-inf") return -HUGE_VAL;
    double x = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
    if (ec != std::errc() || ptr != text.data() + text.size())
        throw IoFailure(path.string() + ": malformed number '" + text + "'");
    return x;
}

std::uint64_t parse_count(const std::string& text, const std::filesystem::path& path) {
    std::uint64_t x = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
    if (ec != std::errc() || ptr != text.data() + text.size())
        throw IoFailure(path.string() + ": malformed integer '" + text + "'");
    return x;
}

}  // namespace

std::vector<RunRecord> load_records(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path records_path = fs::path(dir) / "records.csv";
    const fs::path policies_path = fs::path(dir) / "policies.csv";
    std::vector<RunRecord> records;
    for (const auto& f : read_csv(records_path, 16)) {
        RunRecord r;
        r.scenario = f[0];
        r.objective = f[1];
        r.beta = parse_real(f[2], records_path);
        r.eta = parse_real(f[3], records_path);
        r.seed = parse_count(f[4], records_path);
        r.mara_enabled = f[5] == "true";
        r.tau_rule = f[6];
        r.final_tv = parse_real(f[7], records_path);
        r.answer_entropy = parse_real(f[8], records_path);
        r.mode1_mass = parse_real(f[9], records_path);
        r.mode2_mass = parse_real(f[10], records_path);
        r.anchor_churn = parse_count(f[11], records_path);
        r.steps = parse_count(f[12], records_path);
        r.wall_ms = parse_real(f[13], records_path);
        r.mode = f[14];
        r.status = f[15];
        records.push_back(std::move(r));
    }
    if (records.empty()) throw IoFailure(records_path.string() + ": no records");

    // policies.csv lists each successful run's tokens contiguously, in record order.
    const auto rows = read_csv(policies_path, 9);
    std::size_t row = 0;
    for (auto& r : records) {
        if (!r.ok()) continue;
        while (row < rows.size()) {
            const auto& f = rows[row];
            if (f[0] != r.scenario || f[1] != r.objective || parse_real(f[2], policies_path) != r.beta ||
                parse_count(f[3], policies_path) != r.seed || (f[4] == "true") != r.mara_enabled || f[5] != r.mode)
                break;
            r.policy.push_back(parse_real(f[7], policies_path));
            r.target.push_back(parse_real(f[8], policies_path));
            ++row;
        }
        if (r.policy.empty())
            throw IoFailure(policies_path.string() + ": no policy rows for " + r.scenario + " " + r.objective);
    }
    if (row != rows.size()) throw IoFailure(policies_path.string() + ": rows do not match records.csv");
    return records;
}

std::vector<CriterionResult> load_criteria(const std::string& dir) {
    const std::filesystem::path path = std::filesystem::path(dir) / "criteria.csv";
    if (!std::filesystem::exists(path)) return {};
    std::vector<CriterionResult> out;
    for (const auto& f : read_csv(path, 5)) {
        CriterionResult c;
        c.id = static_cast<int>(parse_count(f[0], path));
        c.name = f[1];
        c.pass = f[2] == "PASS";
        c.measured = f[3];
        c.requirement = f[4];
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace kllab
