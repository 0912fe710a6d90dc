#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kllab/cli.hpp"

using namespace kllab;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "kllab");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("kllab_cli_" + name);
    std::filesystem::remove_all(p);
    return p;
}

std::size_t line_count(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) ++n;
    return n;
}

}  // namespace

TEST_CASE("target prints the two-point reverse optimum") {
    const auto r = run({"target", "--scenario", "two_point", "--kind", "reverse", "--beta", "1"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("0,0.268941421369995") != std::string::npos);
    CHECK(r.out.find("1,0.731058578630004") != std::string::npos);
}

TEST_CASE("generalized with zero eta prints the reverse optimum") {
    const auto rev = run({"target", "--scenario", "fig2_two_mode", "--kind", "reverse", "--beta", "0.1"});
    const auto gen = run({"target", "--scenario", "fig2_two_mode", "--kind", "generalized", "--beta", "0.1", "--eta", "0"});
    CHECK(gen.code == kExitOk);
    CHECK(gen.out == rev.out);
}

TEST_CASE("invalid coefficients and unknown flags are usage errors") {
    CHECK(run({"target", "--kind", "forward", "--beta", "0"}).code == kExitUsage);
    CHECK(run({"target", "--kind", "reverse", "--beta", "-1"}).code == kExitUsage);
    CHECK(run({"target", "--beta", "1", "--bogus"}).code == kExitUsage);
    CHECK(run({"frobnicate"}).code == kExitUsage);
    CHECK(run({"target", "--kind", "sideways", "--beta", "1"}).code == kExitUsage);
}

TEST_CASE("help exits cleanly") {
    const auto r = run({"--help"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("flip-beta") != std::string::npos);
}

TEST_CASE("flip-beta on the two-mode scenario") {
    const auto r = run({"flip-beta", "--scenario", "fig2_two_mode"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("flip_beta,0.1315") != std::string::npos);
}

TEST_CASE("flip-beta negative results have distinct messages") {
    const auto equal = run({"flip-beta", "--scenario", "equal_reference", "--i", "25", "--j", "75"});
    const auto same = run({"flip-beta", "--scenario", "equal_reference", "--i", "25", "--j", "25"});
    CHECK(equal.code == kExitNegative);
    CHECK(same.code == kExitNegative);
    CHECK_FALSE(equal.err.empty());
    CHECK(equal.err != same.err);
}

TEST_CASE("ratio prints the closed form and rejects off-support tokens") {
    const auto r = run({"ratio", "--scenario", "two_point", "--i", "1", "--j", "0", "--beta", "0.5"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("log_ratio,2") != std::string::npos);
    CHECK(run({"ratio", "--scenario", "fig2_two_mode", "--i", "19", "--j", "99", "--beta", "0.1"}).code == kExitNegative);
}

TEST_CASE("forward target reports its normalizer") {
    const auto r = run({"target", "--scenario", "two_point", "--kind", "forward", "--beta", "1"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("lambda,") != std::string::npos);
    CHECK(r.out.find("boundary_case,") != std::string::npos);
}

TEST_CASE("augment prints a batch") {
    const auto r = run({"augment", "--scenario", "mara_toy", "--beta", "0.1", "--tau", "0.5", "--batch", "8", "--seed", "1"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("anchor") != std::string::npos);
}

TEST_CASE("train with one step writes a one-row trace") {
    const auto dir = scratch("train");
    const auto r = run({"train", "--scenario", "two_point", "--beta", "1", "--steps", "1", "--out", dir.string()});
    CHECK(r.code == kExitOk);
    CHECK(line_count(dir / "trace.csv") == 2);
    CHECK(std::filesystem::exists(dir / "policy.csv"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("config parse errors exit with a usage code and position") {
    const auto dir = scratch("cfg");
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir / "bad.cfg");
        f << "beta = 0.1\nsteps = [1,\n";
    }
    const auto r = run({"train", "--config", (dir / "bad.cfg").string(), "--out", dir.string()});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("2:") != std::string::npos);
    CHECK(run({"train", "--config", (dir / "missing.cfg").string()}).code != kExitOk);
    std::filesystem::remove_all(dir);
}

TEST_CASE("sweep and report reproduce the same files") {
    const auto dir = scratch("sweep");
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir / "s.cfg");
        f << "scenario = two_point\nobjectives = [reverse, forward]\nbetas = [0.5, 1]\nseeds = [0, 1]\nsteps = 20\n";
    }
    const auto a = dir / "a";
    const auto b = dir / "b";
    const auto c = dir / "c";
    CHECK(run({"sweep", "--config", (dir / "s.cfg").string(), "--no-timing", "--workers", "1", "--out", a.string()}).code == kExitOk);
    CHECK(run({"sweep", "--config", (dir / "s.cfg").string(), "--no-timing", "--workers", "3", "--out", b.string()}).code == kExitOk);
    CHECK(run({"report", "--from", a.string(), "--out", c.string()}).code == kExitOk);
    for (const auto& entry : std::filesystem::directory_iterator(a)) {
        std::ifstream fa(entry.path()), fb(b / entry.path().filename()), fc(c / entry.path().filename());
        std::stringstream sa, sb, sc;
        sa << fa.rdbuf();
        sb << fb.rdbuf();
        sc << fc.rdbuf();
        CHECK(sa.str() == sb.str());
        CHECK(sa.str() == sc.str());
    }
    std::filesystem::remove_all(dir);
}
