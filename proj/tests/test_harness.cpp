#include <doctest.h>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "kllab/errors.hpp"
#include "kllab/harness.hpp"

using namespace kllab;

namespace {

SweepSpec small_sweep() {
    SweepSpec spec;
    spec.scenario = scenario_by_name("fig2_two_mode");
    spec.objectives = {{ObjectiveKind::ReverseKL, 0.1, 0.0}, {ObjectiveKind::ForwardKL, 0.1, 0.0}};
    spec.betas = {0.05, 0.2};
    spec.seeds = {0, 1};
    spec.train.steps = 40;
    spec.train.mode = GradientMode::MonteCarlo;
    return spec;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("kllab_test_" + name);
    std::filesystem::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("sweep output is identical for any worker count") {
    const auto spec = small_sweep();
    const auto serial = run_sweep_serial(spec, false);
    const auto one = run_sweep(spec, 1, false);
    const auto four = run_sweep(spec, 4, false);
    REQUIRE(serial.size() == spec.cell_count());
    CHECK(records_csv(one) == records_csv(serial));
    CHECK(records_csv(four) == records_csv(serial));
    for (std::size_t i = 0; i < serial.size(); ++i) CHECK(four[i].policy == serial[i].policy);
}

TEST_CASE("sweep records come back in canonical order") {
    const auto spec = small_sweep();
    const auto records = run_sweep(spec, 3, false);
    std::size_t k = 0;
    for (const auto& obj : spec.objectives) {
        for (double beta : spec.betas) {
            for (auto seed : spec.seeds) {
                CHECK(records[k].objective == to_string(obj.kind));
                CHECK(records[k].beta == beta);
                CHECK(records[k].seed == seed);
                CHECK(records[k].wall_ms == 0.0);
                ++k;
            }
        }
    }
}

TEST_CASE("cell seeds depend on every coordinate") {
    const Objective rev{ObjectiveKind::ReverseKL, 0.1, 0.0};
    const Objective fwd{ObjectiveKind::ForwardKL, 0.1, 0.0};
    const auto base = cell_seed(rev, 0.1, 0);
    CHECK(cell_seed(rev, 0.1, 0) == base);
    CHECK(cell_seed(fwd, 0.1, 0) != base);
    CHECK(cell_seed(rev, 0.2, 0) != base);
    CHECK(cell_seed(rev, 0.1, 1) != base);
    CHECK(cell_seed(Objective{ObjectiveKind::ReverseKL, 0.1, 0.3}, 0.1, 0) != base);
}

TEST_CASE("failing cells are recorded rather than aborting the sweep") {
    auto spec = small_sweep();
    spec.train.mode = GradientMode::Exact;
    spec.train.steps = 5;
    spec.mara = MaraConfig{ConstantThreshold{50.0}, 0.1, AnchorTiebreak::LowestIndex};
    const auto records = run_sweep(spec, 2, false);
    for (const auto& r : records) {
        CHECK_FALSE(r.ok());
        CHECK(r.status.rfind("failed: ", 0) == 0);
    }
    CHECK(records_csv(records).find("failed: ") != std::string::npos);
}

TEST_CASE("sweep spec validation") {
    auto spec = small_sweep();
    spec.betas.clear();
    CHECK_THROWS(spec.validate());
    spec = small_sweep();
    spec.betas = {-1.0};
    CHECK_THROWS(spec.validate());
}

TEST_CASE("format_double round-trips") {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const double x = (rng.uniform() - 0.5) * std::pow(10.0, static_cast<int>(rng.next() % 40) - 20);
        const auto text = format_double(x);
        double back = 0.0;
        std::from_chars(text.data(), text.data() + text.size(), back);
        CHECK(back == x);
    }
    CHECK(format_double(0.5) == "0.5");
}

TEST_CASE("answer entropy sums masses per cell") {
    const auto p = Categorical::from_masses(std::vector<double>{0.1, 0.2, 0.3, 0.4});
    const std::vector<std::vector<std::size_t>> cells{{0, 1}, {2, 3}};
    const double a = 0.3, b = 0.7;
    CHECK(answer_entropy(p, cells) == doctest::Approx(-a * std::log(a) - b * std::log(b)));
    const std::vector<std::vector<std::size_t>> partial{{0}, {3}};
    CHECK(answer_entropy(p, partial) == doctest::Approx(-0.2 * std::log(0.2) - 0.8 * std::log(0.8)));
    const std::vector<std::vector<std::size_t>> overlap{{0, 1}, {1, 2}};
    CHECK_THROWS_AS(answer_entropy(p, overlap), InvalidPartition);
}

TEST_CASE("report round-trips through the CSV files") {
    const auto records = run_sweep(small_sweep(), 2, false);
    const std::vector<CriterionResult> criteria{{1, "first, quoted \"name\"", true, "1.0", "< 2"},
                                                {2, "second", false, "3", "< 2"}};
    const auto a = scratch("report_a");
    const auto b = scratch("report_b");
    const auto written = emit_report(records, a.string(), criteria);
    CHECK(std::filesystem::exists(a / "records.csv"));
    CHECK(std::filesystem::exists(a / "policies.csv"));
    CHECK(std::filesystem::exists(a / "criteria.csv"));
    CHECK(std::filesystem::exists(a / "summary.md"));
    CHECK(std::filesystem::exists(a / "fig2_two_mode_reverse_mc.svg"));

    const auto loaded = load_records(a.string());
    const auto loaded_criteria = load_criteria(a.string());
    REQUIRE(loaded.size() == records.size());
    REQUIRE(loaded_criteria.size() == 2);
    CHECK(loaded_criteria[0].name == criteria[0].name);
    CHECK_FALSE(loaded_criteria[1].pass);
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(loaded[i].policy == records[i].policy);
        CHECK(loaded[i].final_tv == records[i].final_tv);
    }
    const auto rewritten = emit_report(loaded, b.string(), loaded_criteria);
    REQUIRE(rewritten.size() == written.size());
    for (const auto& entry : std::filesystem::directory_iterator(a))
        CHECK(slurp(entry.path()) == slurp(b / entry.path().filename()));
    std::filesystem::remove_all(a);
    std::filesystem::remove_all(b);
}

TEST_CASE("report inputs are checked") {
    CHECK_THROWS_AS(emit_report(std::vector<RunRecord>{}, scratch("empty").string()), PreconditionViolation);
    CHECK_THROWS_AS(load_records(scratch("missing").string()), IoFailure);
    CHECK(load_criteria(scratch("missing").string()).empty());
}

TEST_CASE("embedded scenarios match the files on disk") {
    const std::filesystem::path dir = KLLAB_SOURCE_DIR "/scenarios";
    std::size_t on_disk = 0;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.path().extension() == ".cfg") ++on_disk;
    CHECK(embedded_scenario_files().size() == on_disk);
    for (const auto& f : embedded_scenario_files()) CHECK(slurp(dir / std::string(f.name)) == f.text);
}

TEST_CASE("scenario lookup") {
    const auto names = scenario_names();
    CHECK(std::find(names.begin(), names.end(), "two_point") != names.end());
    CHECK(builtin_scenarios().size() == 5);
    CHECK(builtin_scenarios()[0].name == "fig2_two_mode");
    CHECK_THROWS(scenario_by_name("nope"));
}

TEST_CASE("sweep from config") {
    const auto cfg = interpret(ConfigDocument::parse("scenario = two_point\nbetas = [0.5, 1]\nseeds = [3]\nobjectives = [reverse]\n"));
    const auto spec = sweep_from_config(cfg);
    CHECK(spec.scenario.name == "two_point");
    CHECK(spec.cell_count() == 2);
}
