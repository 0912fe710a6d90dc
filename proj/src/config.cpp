#include "kllab/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <cctype>
#include <set>
#include <sstream>

#include "kllab/errors.hpp"

namespace kllab {

void ConfigValue::fail(const std::string& message) const { throw ConfigError(line, column, message); }

double ConfigValue::as_number() const {
    if (kind != Kind::Number) fail("expected a number");
    return number;
}

std::string ConfigValue::as_word() const {
    if (kind != Kind::Word) fail("expected a word");
    return text;
}

std::size_t ConfigValue::as_index() const {
    const double x = as_number();
    if (x < 0.0 || x != std::floor(x) || x > 1e15) fail("expected a nonnegative integer");
    return static_cast<std::size_t>(x);
}

std::uint64_t ConfigValue::as_seed() const { return static_cast<std::uint64_t>(as_index()); }

std::vector<double> ConfigValue::as_numbers() const {
    if (kind != Kind::List) fail("expected a list");
    std::vector<double> out;
    out.reserve(items.size());
    for (const auto& item : items) out.push_back(item.as_number());
    return out;
}

namespace {

bool is_word_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }

// Single-line recursive-descent reader. Columns are 1-based.
class LineReader {
public:
    LineReader(std::string_view line, std::size_t line_no) : s_(line), line_(line_no) {}

    [[noreturn]] void fail(const std::string& message) const { throw ConfigError(line_, pos_ + 1, message); }

    void skip_space() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\r')) ++pos_;
    }

    bool at_end() {
        skip_space();
        return pos_ >= s_.size() || s_[pos_] == '#';
    }

    bool accept(char c) {
        skip_space();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c) {
        if (!accept(c)) fail(std::string("expected '") + c + "'");
    }

    std::size_t column() {
        skip_space();
        return pos_ + 1;
    }

    std::string word() {
        skip_space();
        if (pos_ >= s_.size() || !is_word_start(s_[pos_])) fail("expected a name");
        const std::size_t start = pos_;
        while (pos_ < s_.size() && is_word_char(s_[pos_])) ++pos_;
        return std::string(s_.substr(start, pos_ - start));
    }

    double number() {
        skip_space();
        const char* first = s_.data() + pos_;
        const char* last = s_.data() + s_.size();
        if (pos_ < s_.size() && s_[pos_] == '+') ++first;
        double x = 0.0;
        const auto [ptr, ec] = std::from_chars(first, last, x);
        if (ec != std::errc() || !std::isfinite(x)) fail("malformed number");
        pos_ = static_cast<std::size_t>(ptr - s_.data());
        return x;
    }

    ConfigValue value() {
        ConfigValue v;
        v.line = line_;
        v.column = column();
        if (pos_ >= s_.size() || s_[pos_] == '#') fail("missing value");
        const char c = s_[pos_];
        if (c == '[') {
            ++pos_;
            v.kind = ConfigValue::Kind::List;
            if (accept(']')) return v;
            do {
                v.items.push_back(value());
            } while (accept(','));
            expect(']');
            return v;
        }
        if (is_word_start(c)) {
            v.text = word();
            if (!accept('(')) {
                v.kind = ConfigValue::Kind::Word;
                return v;
            }
            v.kind = ConfigValue::Kind::Shape;
            if (accept(')')) return v;
            do {
                ConfigValue::Arg arg;
                arg.line = line_;
                arg.column = column();
                arg.key = word();
                for (const auto& a : v.args) {
                    if (a.key == arg.key) throw ConfigError(line_, arg.column, "duplicate argument '" + arg.key + "'");
                }
                expect('=');
                arg.value = number();
                v.args.push_back(arg);
            } while (accept(','));
            expect(')');
            return v;
        }
        v.kind = ConfigValue::Kind::Number;
        v.number = number();
        return v;
    }

private:
    std::string_view s_;
    std::size_t line_;
    std::size_t pos_ = 0;
};

}  // namespace

ConfigDocument ConfigDocument::parse(std::string_view text) {
    ConfigDocument doc;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t end = std::min(text.find('\n', start), text.size());
        ++line_no;
        LineReader r(text.substr(start, end - start), line_no);
        if (!r.at_end()) {
            ConfigEntry e;
            e.line = line_no;
            e.column = r.column();
            e.key = r.word();
            for (const auto& prev : doc.entries_) {
                if (prev.key == e.key)
                    throw ConfigError(e.line, e.column,
                                      "duplicate key '" + e.key + "' (first set on line " +
                                          std::to_string(prev.line) + ")");
            }
            r.expect('=');
            e.value = r.value();
            if (!r.at_end()) r.fail("unexpected trailing text");
            doc.entries_.push_back(std::move(e));
        }
        if (end == text.size()) break;
        start = end + 1;
    }
    return doc;
}

ConfigDocument ConfigDocument::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot read config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

const ConfigEntry* ConfigDocument::find(std::string_view key) const {
    for (const auto& e : entries_) {
        if (e.key == key) return &e;
    }
    return nullptr;
}

namespace {

// Named numeric arguments of a shape call, with required/optional lookup and
// a check that nothing unexpected was passed.
class ShapeArgs {
public:
    explicit ShapeArgs(const ConfigValue& v) : v_(v) {}

    double required(const std::string& key) {
        used_.insert(key);
        for (const auto& a : v_.args) {
            if (a.key == key) return a.value;
        }
        v_.fail(v_.text + ": missing argument '" + key + "'");
    }

    double optional(const std::string& key, double fallback) {
        used_.insert(key);
        for (const auto& a : v_.args) {
            if (a.key == key) return a.value;
        }
        return fallback;
    }

    bool has(const std::string& key) const {
        return std::any_of(v_.args.begin(), v_.args.end(), [&](const auto& a) { return a.key == key; });
    }

    void finish() const {
        for (const auto& a : v_.args) {
            if (!used_.count(a.key))
                throw ConfigError(a.line, a.column, v_.text + ": unknown argument '" + a.key + "'");
        }
    }

private:
    const ConfigValue& v_;
    std::set<std::string> used_;
};

double gaussian(double i, double c, double w, double h) { return h * std::exp(-(i - c) * (i - c) / (2.0 * w * w)); }

struct ModeShape {
    double c1, w1, h1, c2, w2, h2, base;
};

ModeShape read_modes(const ConfigValue& v, ShapeArgs& args) {
    ModeShape m{};
    m.c1 = args.required("c1");
    m.w1 = args.required("w1");
    m.h1 = args.required("h1");
    m.c2 = args.required("c2");
    m.w2 = args.required("w2");
    m.h2 = args.required("h2");
    m.base = args.optional("base", 0.0);
    args.finish();
    if (!(m.w1 > 0.0) || !(m.w2 > 0.0)) v.fail(v.text + ": widths must be > 0");
    return m;
}

}  // namespace

Categorical reference_from_value(const ConfigValue& v, std::size_t n) {
    if (v.kind == ConfigValue::Kind::List) {
        const std::vector<double> masses = v.as_numbers();
        if (masses.size() != n)
            v.fail("reference has " + std::to_string(masses.size()) + " entries, expected n = " + std::to_string(n));
        for (double m : masses) {
            if (m < 0.0) v.fail("reference masses must be >= 0");
        }
        if (std::none_of(masses.begin(), masses.end(), [](double m) { return m > 0.0; }))
            v.fail("reference has no positive mass");
        return Categorical::from_masses(masses);
    }
    if (v.kind != ConfigValue::Kind::Shape) v.fail("reference must be a list or a shape");
    if (n == 0) v.fail("reference shape needs n >= 1");

    ShapeArgs args(v);
    std::vector<double> lw(n, 0.0);
    if (v.text == "uniform") {
        args.finish();
    } else if (v.text == "half_support") {
        const double slope = args.optional("slope", 0.0);
        args.finish();
        const std::size_t half = std::max<std::size_t>(1, n / 2);
        for (std::size_t i = 0; i < n; ++i) lw[i] = i < half ? -slope * static_cast<double>(i) : kNegInf;
    } else if (v.text == "mixture") {
        const double floor = args.required("floor");
        const auto support = static_cast<std::size_t>(args.optional("support", static_cast<double>(n)));
        if (floor < 0.0) v.fail("mixture: floor must be >= 0");
        if (support == 0 || support > n) v.fail("mixture: support must be in [1, n]");
        std::vector<double> mass(n, floor);
        for (int k = 1; k <= 4; ++k) {
            const std::string c = "c" + std::to_string(k);
            if (!args.has(c)) continue;
            const double center = args.required(c);
            const double width = args.required("w" + std::to_string(k));
            const double weight = args.required("m" + std::to_string(k));
            if (!(width > 0.0) || weight < 0.0) v.fail("mixture: widths must be > 0 and weights >= 0");
            for (std::size_t i = 0; i < n; ++i) mass[i] += gaussian(static_cast<double>(i), center, width, weight);
        }
        args.finish();
        for (std::size_t i = support; i < n; ++i) mass[i] = 0.0;
        if (std::none_of(mass.begin(), mass.end(), [](double m) { return m > 0.0; }))
            v.fail("mixture has no positive mass");
        return Categorical::from_masses(mass);
    } else {
        v.fail("unknown reference shape '" + v.text + "'");
    }
    return Categorical::from_log_weights(lw);
}

std::vector<double> rewards_from_value(const ConfigValue& v, std::size_t n) {
    if (v.kind == ConfigValue::Kind::List) {
        std::vector<double> r = v.as_numbers();
        if (r.size() != n)
            v.fail("rewards has " + std::to_string(r.size()) + " entries, expected n = " + std::to_string(n));
        return r;
    }
    if (v.kind != ConfigValue::Kind::Shape) v.fail("rewards must be a list or a shape");

    ShapeArgs args(v);
    std::vector<double> r(n, 0.0);
    if (v.text == "constant") {
        const double value = args.required("value");
        args.finish();
        std::fill(r.begin(), r.end(), value);
    } else if (v.text == "two_mode") {
        const ModeShape m = read_modes(v, args);
        for (std::size_t i = 0; i < n; ++i) {
            const auto x = static_cast<double>(i);
            r[i] = m.base + gaussian(x, m.c1, m.w1, m.h1) + gaussian(x, m.c2, m.w2, m.h2);
        }
    } else if (v.text == "two_plateau") {
        const ModeShape m = read_modes(v, args);
        for (std::size_t i = 0; i < n; ++i) {
            const auto x = static_cast<double>(i);
            r[i] = m.base;
            if (std::abs(x - m.c1) <= m.w1) r[i] += m.h1;
            if (std::abs(x - m.c2) <= m.w2) r[i] += m.h2;
        }
    } else {
        v.fail("unknown reward shape '" + v.text + "'");
    }
    return r;
}

std::vector<ModeRange> derived_modes(const ConfigValue& rewards, std::span<const double> values) {
    if (rewards.kind != ConfigValue::Kind::Shape) return {};
    if (rewards.text != "two_mode" && rewards.text != "two_plateau") return {};
    ShapeArgs args(rewards);
    const ModeShape m = read_modes(rewards, args);
    std::vector<ModeRange> out;
    for (const auto& [center, height] : {std::pair{m.c1, m.h1}, std::pair{m.c2, m.h2}}) {
        const double c = std::round(center);
        if (c < 0.0 || c >= static_cast<double>(values.size())) rewards.fail("mode center outside the token range");
        auto first = static_cast<std::size_t>(c);
        auto last = first;
        const double cut = m.base + 0.5 * height;
        while (first > 0 && values[first - 1] > cut) --first;
        while (last + 1 < values.size() && values[last + 1] > cut) ++last;
        out.push_back({first, last});
    }
    return out;
}

namespace {

const std::set<std::string, std::less<>> kScenarioKeys{"name", "n", "reference", "rewards", "modes", "threshold"};
const std::set<std::string, std::less<>> kRunKeys{
    "scenario", "objective", "objectives", "beta", "betas",  "eta",           "seed",          "seeds",
    "mode",     "steps",     "lr",         "batch", "baseline", "forward_regularizer", "mara.tau", "mara.percentile",
    "mara.tiebreak", "mara.view"};

std::vector<ModeRange> explicit_modes(const ConfigValue& v, std::size_t n) {
    if (v.kind != ConfigValue::Kind::List) v.fail("modes must be a list of [first, last] pairs");
    std::vector<ModeRange> out;
    for (const auto& item : v.items) {
        if (item.kind != ConfigValue::Kind::List || item.items.size() != 2) item.fail("expected [first, last]");
        ModeRange m{item.items[0].as_index(), item.items[1].as_index()};
        if (m.first > m.last || m.last >= n) item.fail("mode range out of bounds");
        out.push_back(m);
    }
    return out;
}

Scenario scenario_from_entries(const ConfigDocument& doc) {
    const ConfigEntry* name = doc.find("name");
    const ConfigEntry* reference = doc.find("reference");
    const ConfigEntry* rewards = doc.find("rewards");
    if (!name || !reference || !rewards) {
        const ConfigEntry* any = name ? name : reference ? reference : rewards;
        const std::size_t line = any ? any->line : 1;
        throw ConfigError(line, 1, "a scenario needs name, reference and rewards");
    }

    std::size_t n = 0;
    if (const ConfigEntry* e = doc.find("n")) {
        n = e->value.as_index();
        if (n == 0) e->value.fail("n must be >= 1");
    } else if (reference->value.kind == ConfigValue::Kind::List) {
        n = reference->value.items.size();
    } else if (rewards->value.kind == ConfigValue::Kind::List) {
        n = rewards->value.items.size();
    } else {
        throw ConfigError(reference->line, reference->column, "n is required when reference and rewards are shapes");
    }

    Categorical ref = reference_from_value(reference->value, n);
    std::vector<double> r = rewards_from_value(rewards->value, n);
    std::vector<ModeRange> modes;
    if (const ConfigEntry* e = doc.find("modes")) {
        modes = explicit_modes(e->value, n);
    } else {
        modes = derived_modes(rewards->value, r);
    }
    std::optional<double> threshold;
    if (const ConfigEntry* e = doc.find("threshold")) threshold = e->value.as_number();
    return make_scenario(name->value.as_word(), std::move(ref), RewardVector(std::move(r)), std::move(modes),
                         threshold);
}

std::vector<double> numbers_or_one(const ConfigValue& v) {
    if (v.kind == ConfigValue::Kind::List) {
        if (v.items.empty()) v.fail("list must not be empty");
        return v.as_numbers();
    }
    return {v.as_number()};
}

template <class T, class F>
T parse_word(const ConfigValue& v, F&& parse) {
    try {
        return parse(v.as_word());
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        v.fail(e.what());
    }
}

}  // namespace

LabConfig interpret(const ConfigDocument& doc) {
    for (const auto& e : doc.entries()) {
        if (!kScenarioKeys.count(e.key) && !kRunKeys.count(e.key))
            throw ConfigError(e.line, e.column, "unknown key '" + e.key + "'");
    }

    LabConfig cfg;
    const bool inline_scenario = std::any_of(doc.entries().begin(), doc.entries().end(),
                                             [](const ConfigEntry& e) { return kScenarioKeys.count(e.key) > 0; });
    if (const ConfigEntry* e = doc.find("scenario")) {
        if (inline_scenario)
            throw ConfigError(e->line, e->column, "use either 'scenario = <name>' or an inline scenario, not both");
        cfg.scenario_ref = e->value.as_word();
    } else if (inline_scenario) {
        try {
            cfg.scenario = scenario_from_entries(doc);
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& err) {
            const ConfigEntry* at = doc.find("rewards") ? doc.find("rewards") : &doc.entries().front();
            throw ConfigError(at->line, at->column, err.what());
        }
    }

    auto both = [&](const char* one, const char* many) -> const ConfigEntry* {
        const ConfigEntry* a = doc.find(one);
        const ConfigEntry* b = doc.find(many);
        if (a && b) throw ConfigError(b->line, b->column, std::string("set '") + one + "' or '" + many + "', not both");
        return a ? a : b;
    };

    if (const ConfigEntry* e = both("objective", "objectives")) {
        cfg.objectives.clear();
        if (e->value.kind == ConfigValue::Kind::List) {
            if (e->value.items.empty()) e->value.fail("list must not be empty");
            for (const auto& item : e->value.items)
                cfg.objectives.push_back(parse_word<ObjectiveKind>(item, parse_objective_kind));
        } else {
            cfg.objectives.push_back(parse_word<ObjectiveKind>(e->value, parse_objective_kind));
        }
    }
    if (const ConfigEntry* e = both("beta", "betas")) {
        cfg.betas = numbers_or_one(e->value);
        for (double b : cfg.betas) {
            if (!(b > 0.0)) e->value.fail("every beta must be > 0");
        }
    }
    if (const ConfigEntry* e = both("seed", "seeds")) {
        cfg.seeds.clear();
        if (e->value.kind == ConfigValue::Kind::List) {
            if (e->value.items.empty()) e->value.fail("list must not be empty");
            for (const auto& item : e->value.items) cfg.seeds.push_back(item.as_seed());
        } else {
            cfg.seeds.push_back(e->value.as_seed());
        }
    }
    if (const ConfigEntry* e = doc.find("eta")) {
        cfg.eta = e->value.as_number();
        if (cfg.eta < 0.0) e->value.fail("eta must be >= 0");
    }
    if (const ConfigEntry* e = doc.find("mode")) {
        const std::string m = e->value.as_word();
        if (m == "exact") {
            cfg.train.mode = GradientMode::Exact;
        } else if (m == "monte_carlo") {
            cfg.train.mode = GradientMode::MonteCarlo;
        } else {
            e->value.fail("mode must be exact or monte_carlo");
        }
    }
    if (const ConfigEntry* e = doc.find("steps")) {
        cfg.train.steps = e->value.as_index();
        if (cfg.train.steps == 0) e->value.fail("steps must be >= 1");
    }
    if (const ConfigEntry* e = doc.find("lr")) {
        cfg.train.learning_rate = e->value.as_number();
        if (!(cfg.train.learning_rate > 0.0)) e->value.fail("lr must be > 0");
    }
    if (const ConfigEntry* e = doc.find("batch")) {
        cfg.train.batch = e->value.as_index();
        if (cfg.train.batch == 0) e->value.fail("batch must be >= 1");
    }
    if (const ConfigEntry* e = doc.find("baseline")) cfg.train.baseline = parse_word<Baseline>(e->value, parse_baseline);
    if (const ConfigEntry* e = doc.find("forward_regularizer")) {
        const std::string m = e->value.as_word();
        if (m == "exact") {
            cfg.train.forward_regularizer = ForwardRegularizer::Exact;
        } else if (m == "sampled") {
            cfg.train.forward_regularizer = ForwardRegularizer::Sampled;
        } else {
            e->value.fail("forward_regularizer must be exact or sampled");
        }
    }
    if (cfg.train.baseline == Baseline::LeaveOneOut && cfg.train.batch < 2) {
        const ConfigEntry* e = doc.find("baseline");
        throw ConfigError(e->line, e->column, "leave_one_out needs batch >= 2");
    }

    if (const ConfigEntry* e = both("mara.tau", "mara.percentile")) {
        if (e->key == "mara.tau") {
            cfg.mara_threshold = ConstantThreshold{e->value.as_number()};
        } else {
            const double q = e->value.as_number();
            if (!(q > 0.0 && q < 1.0)) e->value.fail("mara.percentile must be in (0, 1)");
            cfg.mara_threshold = BatchPercentile{q};
        }
    }
    if (const ConfigEntry* e = doc.find("mara.tiebreak")) {
        const std::string t = e->value.as_word();
        if (t == "lowest_index") {
            cfg.mara_tiebreak = AnchorTiebreak::LowestIndex;
        } else if (t == "highest_reward") {
            cfg.mara_tiebreak = AnchorTiebreak::HighestReward;
        } else {
            e->value.fail("mara.tiebreak must be lowest_index or highest_reward");
        }
    }
    if (const ConfigEntry* e = doc.find("mara.view")) {
        const std::string t = e->value.as_word();
        if (t == "reward") {
            cfg.train.mara_view = MaraView::Reward;
        } else if (t == "reward_and_reference") {
            cfg.train.mara_view = MaraView::RewardAndReference;
        } else {
            e->value.fail("mara.view must be reward or reward_and_reference");
        }
    }
    return cfg;
}

Scenario scenario_from_config(const ConfigDocument& doc) {
    LabConfig cfg = interpret(doc);
    if (!cfg.scenario) throw ConfigError(1, 1, "no inline scenario definition");
    return std::move(*cfg.scenario);
}

}  // namespace kllab
