#include "kllab/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <omp.h>

#include "kllab/acceptance.hpp"
#include "kllab/config.hpp"
#include "kllab/errors.hpp"
#include "kllab/harness.hpp"
#include "kllab/mara.hpp"
#include "kllab/svg.hpp"
#include "kllab/targets.hpp"
#include "kllab/trainer.hpp"

namespace kllab {

namespace {

struct Options {
    std::string scenario;
    std::optional<std::string> kind;
    std::optional<double> beta;
    std::optional<double> eta;
    std::optional<double> tau;
    std::optional<double> percentile;
    std::optional<std::size_t> steps;
    std::optional<std::size_t> batch;
    std::optional<double> lr;
    std::optional<std::uint64_t> seed;
    int workers = 0;
    std::string out;
    std::string config;
    std::optional<std::size_t> i;
    std::optional<std::size_t> j;
    std::optional<std::string> mode;
    std::optional<std::string> baseline;
    std::string view = "reward";
    std::string preset;
    std::string from;
    bool no_timing = false;
};

// --out wins, then $KLLAB_OUT, then ./kllab_out.
std::string output_dir(const Options& o) {
    if (!o.out.empty()) return o.out;
    if (const char* env = std::getenv("KLLAB_OUT"); env && *env) return env;
    return "kllab_out";
}

int worker_count(const Options& o) {
    if (o.workers < 0) throw PreconditionViolation("--workers must be >= 1");
    return o.workers > 0 ? o.workers : std::max(1, omp_get_num_procs());
}

Scenario resolve_scenario(const Options& o, const char* fallback) {
    return scenario_by_name(o.scenario.empty() ? fallback : o.scenario);
}

double require_beta(const Options& o) {
    if (!o.beta) throw PreconditionViolation("--beta is required");
    return *o.beta;
}

void print_masses(std::ostream& out, const Categorical& p) {
    out << "index,mass\n";
    for (std::size_t y = 0; y < p.size(); ++y) out << y << ',' << format_double(p.mass(y)) << '\n';
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoFailure("cannot write " + path.string());
    f << text;
    if (!f) throw IoFailure("error while writing " + path.string());
}

std::filesystem::path ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw IoFailure("cannot create output directory '" + dir + "'");
    return dir;
}

std::string target_svg(const Scenario& s, const Categorical& p, const std::string& title) {
    const auto n = static_cast<double>(p.size());
    double y_max = 0.0;
    for (std::size_t y = 0; y < p.size(); ++y) y_max = std::max(y_max, p.mass(y));
    svg::Document doc(640.0, 320.0);
    const svg::Frame f{50.0, 40.0, 560.0, 240.0, 0.0, n, 0.0, y_max * 1.05};
    svg::axes(doc, f, s.name + ": " + title);
    const double bar = f.width / n;
    for (std::size_t y = 0; y < p.size(); ++y) {
        const double top = f.py(p.mass(y));
        doc.rect(f.px(static_cast<double>(y)), top, std::max(bar - 0.5, 0.5), f.top + f.height - top, "#4a7ab5");
    }
    return doc.str();
}

int cmd_target(const Options& o, std::ostream& out) {
    const Scenario s = resolve_scenario(o, "two_point");
    const std::string kind = o.kind.value_or("reverse");
    TargetSpec spec{parse_target_kind(kind), require_beta(o), o.eta.value_or(0.0)};
    spec.validate();
    Categorical p = Categorical::uniform(1);
    if (spec.kind == TargetKind::ForwardKL) {
        const ForwardSolution sol = forward_kl_target(s, spec.beta);
        p = sol.distribution;
        print_masses(out, p);
        out << "lambda," << format_double(sol.lambda) << '\n';
        out << "boundary_case," << (sol.boundary_case ? "true" : "false") << '\n';
        out << "off_support_mass," << format_double(sol.off_support_mass) << '\n';
    } else {
        p = target_for(s, spec);
        print_masses(out, p);
    }
    if (!o.out.empty()) {
        const auto dir = ensure_dir(o.out);
        write_text(dir / (s.name + "_target_" + kind + ".svg"), target_svg(s, p, kind + " target"));
    }
    return kExitOk;
}

int cmd_ratio(const Options& o, std::ostream& out) {
    const Scenario s = resolve_scenario(o, "two_point");
    if (!o.i || !o.j) throw PreconditionViolation("--i and --j are required");
    const double r = log_prob_ratio(s, require_beta(o), *o.i, *o.j);
    out << "log_ratio," << format_double(r) << '\n';
    out << "ratio," << format_double(std::exp(r)) << '\n';
    return kExitOk;
}

std::size_t mode_peak(const Scenario& s, const ModeRange& m) {
    std::size_t best = m.first;
    for (std::size_t y = m.first; y <= m.last; ++y) {
        if (s.rewards[y] > s.rewards[best]) best = y;
    }
    return best;
}

int cmd_flip_beta(const Options& o, std::ostream& out) {
    const Scenario s = resolve_scenario(o, "fig2_two_mode");
    std::size_t i = 0;
    std::size_t j = 0;
    if (o.i && o.j) {
        i = *o.i;
        j = *o.j;
    } else if (!o.i && !o.j && s.modes.size() >= 2) {
        i = mode_peak(s, s.modes[0]);
        j = mode_peak(s, s.modes[1]);
    } else {
        throw PreconditionViolation("give both --i and --j (defaults need a scenario with two modes)");
    }
    const double beta = flip_beta(s, i, j);
    out << "i," << i << "\nj," << j << "\nflip_beta," << format_double(beta) << '\n';
    return kExitOk;
}

std::optional<ThresholdRule> threshold_flag(const Options& o) {
    if (o.tau && o.percentile) throw PreconditionViolation("--tau and --percentile are exclusive");
    if (o.tau) return ConstantThreshold{*o.tau};
    if (o.percentile) return BatchPercentile{*o.percentile};
    return std::nullopt;
}

MaraView parse_view(const std::string& v) {
    if (v == "reward") return MaraView::Reward;
    if (v == "reward_and_reference") return MaraView::RewardAndReference;
    throw PreconditionViolation("--view must be reward or reward_and_reference");
}

int cmd_augment(const Options& o, std::ostream& out) {
    const Scenario s = resolve_scenario(o, "mara_toy");
    MaraConfig cfg;
    cfg.beta = require_beta(o);
    cfg.threshold = threshold_flag(o).value_or(ConstantThreshold{s.threshold});
    cfg.validate_for(s);
    const std::vector<std::size_t> batch = sample(s.reference, o.seed.value_or(0), o.batch.value_or(32));
    const AugmentedBatch a = augment(batch, s, cfg, parse_view(o.view));
    out << "threshold," << format_double(a.threshold_used) << '\n';
    out << "anchor," << (a.anchor_index ? std::to_string(*a.anchor_index) : "none") << '\n';
    out << "position,index,raw_reward,augmented_reward,ref_logprob\n";
    for (std::size_t k = 0; k < batch.size(); ++k) {
        out << k << ',' << a.indices[k] << ',' << format_double(a.raw_rewards[k]) << ','
            << format_double(a.augmented_rewards[k]) << ',' << format_double(a.augmented_ref_logprobs[k]) << '\n';
    }
    return kExitOk;
}

GradientMode parse_mode(const std::string& m) {
    if (m == "exact") return GradientMode::Exact;
    if (m == "monte_carlo") return GradientMode::MonteCarlo;
    throw PreconditionViolation("--mode must be exact or monte_carlo");
}

int cmd_train(const Options& o, std::ostream& out) {
    LabConfig lab;
    if (!o.config.empty()) lab = interpret(ConfigDocument::load(o.config));

    Scenario s = lab.scenario ? *lab.scenario : scenario_by_name(lab.scenario_ref.value_or("fig2_two_mode"));
    if (!o.scenario.empty()) s = scenario_by_name(o.scenario);

    TrainConfig cfg = lab.train;
    // Explicit flags win over the config file, which wins over defaults.
    if (o.kind) {
        cfg.objective.kind = parse_objective_kind(*o.kind);
    } else if (!o.config.empty() && lab.objectives.size() == 1) {
        cfg.objective.kind = lab.objectives.front();
    }
    if (o.beta) {
        cfg.objective.beta = *o.beta;
    } else if (!o.config.empty() && lab.betas.size() == 1) {
        cfg.objective.beta = lab.betas.front();
    }
    cfg.objective.eta = o.eta.value_or(lab.eta);
    if (o.steps) cfg.steps = *o.steps;
    if (o.batch) cfg.batch = *o.batch;
    if (o.lr) cfg.learning_rate = *o.lr;
    cfg.seed = o.seed.value_or(o.config.empty() ? 0 : lab.seeds.front());
    if (o.mode) cfg.mode = parse_mode(*o.mode);
    if (o.baseline) cfg.baseline = parse_baseline(*o.baseline);
    std::optional<ThresholdRule> rule = threshold_flag(o);
    if (!rule) rule = lab.mara_threshold;
    if (rule) cfg.mara = MaraConfig{*rule, cfg.objective.beta, lab.mara_tiebreak};

    const TrainResult r = train(s, cfg);

    const auto dir = ensure_dir(output_dir(o));
    std::ostringstream trace;
    trace << "step,objective,tv_to_target,entropy,above_threshold_mass,anchor\n";
    for (std::size_t t = 0; t < r.trace.size(); ++t) {
        const TraceRecord& rec = r.trace[t];
        std::string anchor = "none";
        if (t < r.anchor_history.size() && r.anchor_history[t]) anchor = std::to_string(*r.anchor_history[t]);
        trace << t + 1 << ',' << format_double(rec.objective) << ',' << format_double(rec.tv_to_target) << ','
              << format_double(rec.entropy) << ',' << format_double(rec.above_threshold_mass) << ',' << anchor << '\n';
    }
    write_text(dir / "trace.csv", trace.str());
    std::ostringstream policy;
    policy << "token,policy,target\n";
    for (std::size_t y = 0; y < s.size(); ++y)
        policy << y << ',' << format_double(r.final_policy.mass(y)) << ',' << format_double(r.target.mass(y)) << '\n';
    write_text(dir / "policy.csv", policy.str());

    out << "scenario," << s.name << '\n';
    out << "objective," << to_string(cfg.objective.kind) << '\n';
    out << "steps," << r.trace.size() << '\n';
    out << "final_tv," << format_double(r.trace.back().tv_to_target) << '\n';
    out << "final_entropy," << format_double(r.trace.back().entropy) << '\n';
    out << "anchor_churn," << r.anchor_churn << '\n';
    out << "trace," << (dir / "trace.csv").string() << '\n';
    return kExitOk;
}

void print_manifest(std::ostream& out, const std::vector<std::string>& files) {
    for (const auto& f : files) out << "wrote " << f << '\n';
}

int cmd_sweep(const Options& o, std::ostream& out) {
    const int workers = worker_count(o);
    const bool timing = !o.no_timing;
    if (!o.preset.empty() == !o.config.empty()) throw PreconditionViolation("give exactly one of --preset or --config");
    if (!o.preset.empty()) {
        if (o.preset != "paper") throw PreconditionViolation("unknown preset '" + o.preset + "' (known: paper)");
        const acceptance::Report report = acceptance::run_all(workers);
        print_manifest(out, emit_report(report.records, output_dir(o), report.criteria));
        for (const auto& c : report.criteria)
            out << (c.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << c.measured << '\n';
        return report.all_pass() ? kExitOk : kExitNegative;
    }
    LabConfig lab = interpret(ConfigDocument::load(o.config));
    if (o.steps) lab.train.steps = *o.steps;
    if (o.batch) lab.train.batch = *o.batch;
    if (o.lr) lab.train.learning_rate = *o.lr;
    if (o.mode) lab.train.mode = parse_mode(*o.mode);
    const SweepSpec spec = sweep_from_config(lab);
    const std::vector<RunRecord> records = run_sweep(spec, workers, timing);
    print_manifest(out, emit_report(records, output_dir(o)));
    std::size_t failed = 0;
    for (const auto& r : records) failed += r.ok() ? 0 : 1;
    out << records.size() << " runs, " << failed << " failed\n";
    return failed ? kExitNegative : kExitOk;
}

int cmd_report(const Options& o, std::ostream& out) {
    if (o.from.empty()) throw PreconditionViolation("--from <directory with records.csv> is required");
    const std::vector<RunRecord> records = load_records(o.from);
    const std::vector<CriterionResult> criteria = load_criteria(o.from);
    print_manifest(out, emit_report(records, output_dir(o), criteria));
    return kExitOk;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const NoFiniteFlip*>(&e) || dynamic_cast<const UndefinedRatio*>(&e) ||
        dynamic_cast<const InfiniteDivergence*>(&e) || dynamic_cast<const InvalidPartition*>(&e))
        return kExitNegative;
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InvalidCoefficient*>(&e) ||
        dynamic_cast<const InvalidDistribution*>(&e) || dynamic_cast<const PreconditionViolation*>(&e) ||
        dynamic_cast<const InvalidAnchor*>(&e))
        return kExitUsage;
    return kExitInternal;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"KL-regularized reward maximization lab"};
    app.require_subcommand(1);
    Options o;

    auto scenario_flag = [&](CLI::App* c) {
        c->add_option("--scenario", o.scenario, "built-in scenario name");
    };
    auto beta_flags = [&](CLI::App* c) {
        c->add_option("--beta", o.beta, "KL coefficient");
        c->add_option("--eta", o.eta, "entropy coefficient (generalized)");
    };
    auto mara_flags = [&](CLI::App* c) {
        c->add_option("--tau", o.tau, "MARA constant threshold");
        c->add_option("--percentile", o.percentile, "MARA batch percentile in (0, 1)");
    };

    CLI::App* target = app.add_subcommand("target", "print an analytic optimal distribution");
    scenario_flag(target);
    beta_flags(target);
    target->add_option("--kind", o.kind, "reverse | forward | generalized");
    target->add_option("--out", o.out, "also write an SVG bar chart here");

    CLI::App* ratio = app.add_subcommand("ratio", "closed-form log G(i) - log G(j)");
    scenario_flag(ratio);
    ratio->add_option("--beta", o.beta, "KL coefficient");
    ratio->add_option("--i", o.i, "first token");
    ratio->add_option("--j", o.j, "second token");

    CLI::App* flip = app.add_subcommand("flip-beta", "beta at which two tokens get equal target mass");
    scenario_flag(flip);
    flip->add_option("--i", o.i, "first token (default: peak of mode 1)");
    flip->add_option("--j", o.j, "second token (default: peak of mode 2)");

    CLI::App* aug = app.add_subcommand("augment", "MARA-augment a reference-sampled batch");
    scenario_flag(aug);
    aug->add_option("--beta", o.beta, "KL coefficient");
    mara_flags(aug);
    aug->add_option("--batch", o.batch, "batch size");
    aug->add_option("--seed", o.seed, "sampling seed");
    aug->add_option("--view", o.view, "reward | reward_and_reference");

    CLI::App* tr = app.add_subcommand("train", "train a softmax policy and write trace.csv");
    scenario_flag(tr);
    beta_flags(tr);
    mara_flags(tr);
    tr->add_option("--kind", o.kind, "reverse | forward | generalized | matching");
    tr->add_option("--steps", o.steps, "optimizer steps");
    tr->add_option("--batch", o.batch, "Monte-Carlo batch size");
    tr->add_option("--lr", o.lr, "Adam learning rate");
    tr->add_option("--seed", o.seed, "seed");
    tr->add_option("--mode", o.mode, "exact | monte_carlo");
    tr->add_option("--baseline", o.baseline, "none | batch_mean | leave_one_out");
    tr->add_option("--config", o.config, "config file");
    tr->add_option("--out", o.out, "output directory");

    CLI::App* sw = app.add_subcommand("sweep", "run a beta x seed sweep and write a report");
    sw->add_option("--preset", o.preset, "paper: the full acceptance run with its report");
    sw->add_option("--config", o.config, "config file describing the sweep");
    sw->add_option("--workers", o.workers, "worker threads (default: core count)");
    sw->add_option("--steps", o.steps, "override steps");
    sw->add_option("--batch", o.batch, "override batch size");
    sw->add_option("--lr", o.lr, "override learning rate");
    sw->add_option("--mode", o.mode, "override gradient mode");
    sw->add_flag("--no-timing", o.no_timing, "write wall_ms = 0 so reruns are byte-identical");
    sw->add_option("--out", o.out, "output directory");

    CLI::App* rep = app.add_subcommand("report", "re-render a report from an earlier sweep");
    rep->add_option("--from", o.from, "directory holding records.csv and policies.csv");
    rep->add_option("--out", o.out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*target) return cmd_target(o, out);
        if (*ratio) return cmd_ratio(o, out);
        if (*flip) return cmd_flip_beta(o, out);
        if (*aug) return cmd_augment(o, out);
        if (*tr) return cmd_train(o, out);
        if (*sw) return cmd_sweep(o, out);
        if (*rep) return cmd_report(o, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }
    return kExitUsage;
}

}  // namespace kllab
