#include "ura/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "ura/power_optimizer.hpp"

namespace ura {

using nlohmann::json;

const char* build_id() {
#ifdef URA_BUILD_ID
    return URA_BUILD_ID;
#else
    return "unknown";
#endif
}

// ---------------------------------------------------------------------------
// config reading

namespace {

class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail("", "expected an object");
    }

    [[noreturn]] void fail(const std::string& key, const std::string& what) const {
        throw ConfigError("config" + (path_.empty() ? "" : "." + path_) + (key.empty() ? "" : "." + key) + ": " + what);
    }

    void allow(std::initializer_list<const char*> keys) const {
        const std::set<std::string> ok(keys.begin(), keys.end());
        for (const auto& [k, v] : j_.items())
            if (!ok.count(k)) fail(k, "unknown field");
    }

    bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

    Reader sub(const std::string& key) const {
        static const json empty = json::object();
        if (!has(key)) return Reader(empty, child(key));
        return Reader(j_.at(key), child(key));
    }

    double number(const std::string& key, double def) const { return has(key) ? number(key) : def; }
    double number(const std::string& key) const {
        if (!has(key)) fail(key, "required field missing");
        const auto& v = j_.at(key);
        if (v.is_number()) return v.get<double>();
        if (v.is_string()) {
            const auto s = v.get<std::string>();
            if (s == "+inf" || s == "inf") return std::numeric_limits<double>::infinity();
            if (s == "-inf") return -std::numeric_limits<double>::infinity();
        }
        fail(key, "expected a number");
    }

    std::size_t count(const std::string& key, std::size_t def, std::size_t min = 0) const {
        if (!has(key)) return def;
        const auto& v = j_.at(key);
        if (!v.is_number_integer() && !(v.is_number() && std::floor(v.get<double>()) == v.get<double>()))
            fail(key, "expected an integer");
        const double d = v.get<double>();
        if (d < static_cast<double>(min)) fail(key, "must be at least " + std::to_string(min));
        return static_cast<std::size_t>(d);
    }

    bool flag(const std::string& key, bool def) const {
        if (!has(key)) return def;
        if (!j_.at(key).is_boolean()) fail(key, "expected true or false");
        return j_.at(key).get<bool>();
    }

    const nlohmann::json& raw(const std::string& key) const { return j_.at(key); }

    std::string text(const std::string& key, const std::string& def) const {
        if (!has(key)) return def;
        if (!j_.at(key).is_string()) fail(key, "expected a string");
        return j_.at(key).get<std::string>();
    }

    std::vector<double> numbers(const std::string& key) const {
        std::vector<double> out;
        if (!has(key)) return out;
        const auto& v = j_.at(key);
        if (!v.is_array()) fail(key, "expected an array of numbers");
        for (std::size_t i = 0; i < v.size(); ++i) {
            const auto& e = v[i];
            if (e.is_number()) out.push_back(e.get<double>());
            else if (e.is_string() && (e == "+inf" || e == "inf")) out.push_back(std::numeric_limits<double>::infinity());
            else if (e.is_string() && e == "-inf") out.push_back(-std::numeric_limits<double>::infinity());
            else fail(key + "[" + std::to_string(i) + "]", "expected a number");
        }
        return out;
    }

    const std::string& path() const { return path_; }

private:
    std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json& j_;
    std::string path_;
};

template <class Fn>
auto with_path(const std::string& path, Fn fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        const std::string w = e.what();
        if (w.rfind("config", 0) == 0) throw;
        throw ConfigError("config." + path + ": " + w);
    }
}

json db_json(double v) {
    if (std::isinf(v)) return v > 0 ? json("+inf") : json("-inf");
    return v;
}

json db_array(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(db_json(x));
    return a;
}

}  // namespace

ScenarioConfig parse_config(const json& doc) {
    Reader top(doc, "");
    top.allow({"scenario", "system", "pilots", "lsfc", "policy", "detector", "codec", "receiver", "analysis", "sweep",
               "search", "trials", "seed", "mode"});
    ScenarioConfig c;
    c.scenario = top.text("scenario", c.scenario);
    c.trials = top.count("trials", c.trials, 1);
    c.seed = static_cast<std::uint64_t>(top.count("seed", c.seed));
    const auto mode = top.text("mode", "simulate");
    if (mode == "simulate") c.mode = RunMode::Simulate;
    else if (mode == "analyze") c.mode = RunMode::Analyze;
    else if (mode == "search") c.mode = RunMode::Search;
    else top.fail("mode", "expected simulate, analyze or search");

    {
        const auto s = top.sub("system");
        s.allow({"n_p", "n_d", "J", "B", "M", "K_a", "N0"});
        auto& y = c.system;
        y.pilot_length = s.count("n_p", y.pilot_length, 1);
        y.data_length = s.count("n_d", y.data_length, 1);
        y.pilot_bits = static_cast<unsigned>(s.count("J", y.pilot_bits, 1));
        if (y.pilot_bits > 24) s.fail("J", "at most 24 pilot bits supported");
        y.message_bits = static_cast<unsigned>(s.count("B", y.message_bits, 1));
        y.antennas = s.count("M", y.antennas, 1);
        y.active_users = s.count("K_a", y.active_users, 0);
        y.noise_var = s.number("N0", y.noise_var);
        if (!(y.noise_var > 0)) s.fail("N0", "must be positive");
    }
    {
        const auto s = top.sub("pilots");
        s.allow({"kind", "scramble"});
        c.pilot_kind = with_path(s.path().empty() ? "pilots" : s.path(), [&] { return pilot_kind_from_string(s.text("kind", "dft")); });
        c.scramble = s.flag("scramble", true);
    }
    {
        const auto s = top.sub("lsfc");
        s.allow({"alpha_db", "beta_db", "sigma_shadow_db", "r_min_km", "r_max_km", "g_max_db"});
        auto& l = c.lsfc;
        l.alpha_db = s.number("alpha_db", l.alpha_db);
        l.beta_db = s.number("beta_db", l.beta_db);
        l.sigma_shadow_db = s.number("sigma_shadow_db", l.sigma_shadow_db);
        l.r_min_km = s.number("r_min_km", l.r_min_km);
        l.r_max_km = s.number("r_max_km", l.r_max_km);
        if (s.has("g_max_db")) l.g_max_db = s.number("g_max_db");
        with_path("lsfc", [&] { l.validate(); return 0; });
    }
    {
        const auto s = top.sub("policy");
        s.allow({"type", "power_db", "error_db", "levels_rel_db", "corners_db", "plan_file"});
        auto& p = c.policy;
        const auto type = s.text("type", "sci");
        if (type == "npc") p.kind = PolicyKind::Npc;
        else if (type == "sci") p.kind = PolicyKind::Sci;
        else if (type == "imperfect_sci") p.kind = PolicyKind::ImperfectSci;
        else if (type == "partial_sci") p.kind = PolicyKind::PartialSci;
        else s.fail("type", "expected npc, sci, imperfect_sci or partial_sci");
        p.power_db = s.number("power_db", p.power_db);
        p.error_db = s.number("error_db", p.error_db);
        p.levels_rel_db = s.numbers("levels_rel_db");
        p.corners_db = s.numbers("corners_db");
        if (s.has("plan_file")) {
            std::ifstream in(s.text("plan_file", ""));
            if (!in) s.fail("plan_file", "cannot open");
            const auto plan = with_path("policy.plan_file", [&] { return read_plan_json(in); });
            p.kind = PolicyKind::PartialSci;
            p.corners_db = plan.corners_db;
            p.levels_rel_db.clear();
            const double top_db = linear_to_db(plan.levels.front());
            if (!s.has("power_db")) p.power_db = top_db;
            for (double v : plan.levels) p.levels_rel_db.push_back(linear_to_db(v) - top_db);
        }
        with_path("policy", [&] { validate(p.build()); return 0; });
    }
    {
        const auto s = top.sub("detector");
        s.allow({"denoiser", "g_min_rule", "g_min", "levels_rel_db", "priors", "iterations", "tolerance", "tau_divisor",
                 "selection", "delta", "divergence_growth", "divergence_patience"});
        auto& d = c.detector;
        const auto kind = s.text("denoiser", "ml");
        if (kind == "ml") d.kind = DetectorConfig::Kind::Ml;
        else if (kind == "pme") d.kind = DetectorConfig::Kind::Pme;
        else s.fail("denoiser", "expected ml or pme");
        const auto rule = s.text("g_min_rule", "tau");
        if (rule == "tau") d.gmin_rule = DetectorConfig::GminRule::Tau;
        else if (rule == "absolute") d.gmin_rule = DetectorConfig::GminRule::Absolute;
        else if (rule == "relative") d.gmin_rule = DetectorConfig::GminRule::Relative;
        else s.fail("g_min_rule", "expected tau, absolute or relative");
        d.gmin_value = s.number("g_min", d.gmin_rule == DetectorConfig::GminRule::Tau ? 2.0 : -3.0);
        d.levels_rel_db = s.numbers("levels_rel_db");
        d.priors = s.numbers("priors");
        if (d.kind == DetectorConfig::Kind::Pme) {
            if (d.levels_rel_db.empty()) s.fail("levels_rel_db", "required for the pme denoiser");
            if (d.priors.empty()) d.priors.assign(d.levels_rel_db.size(), 1.0 / static_cast<double>(d.levels_rel_db.size()));
            if (d.priors.size() != d.levels_rel_db.size()) s.fail("priors", "needs one entry per level");
        }
        d.amp.max_iterations = s.count("iterations", d.amp.max_iterations, 1);
        d.amp.tolerance = s.number("tolerance", d.amp.tolerance);
        d.amp.divisor = with_path("detector.tau_divisor", [&] { return tau_divisor_from_string(s.text("tau_divisor", "n_p")); });
        d.amp.divergence_growth = s.number("divergence_growth", d.amp.divergence_growth);
        d.amp.divergence_patience = s.count("divergence_patience", d.amp.divergence_patience, 1);
        const auto sel = s.text("selection", "topk");
        if (sel == "topk") d.threshold = false;
        else if (sel == "threshold") d.threshold = true;
        else s.fail("selection", "expected topk or threshold");
        if (s.has("delta") && !(s.raw("delta").is_string() && s.text("delta", "") == "auto")) d.delta = s.count("delta", 0);
    }
    {
        const auto s = top.sub("codec");
        s.allow({"list_size", "design_sinr_db", "design_target_pe"});
        c.codec.list_size = s.count("list_size", c.codec.list_size, 1);
        if (s.has("design_sinr_db")) c.codec.design_sinr_db = s.number("design_sinr_db");
        c.codec.design_target_pe = s.number("design_target_pe", c.codec.design_target_pe);
    }
    {
        const auto s = top.sub("receiver");
        s.allow({"sic", "division_db", "noise_estimate"});
        c.sic.strategy = with_path("receiver.sic", [&] { return sic_strategy_from_string(s.text("sic", "none")); });
        for (double v : s.numbers("division_db"))
            if (std::isfinite(v)) c.sic.division_db.push_back(v);
        std::sort(c.sic.division_db.begin(), c.sic.division_db.end(), std::greater<>());
        const auto ne = s.text("noise_estimate", "analysis");
        if (ne == "analysis") c.noise_estimate = NoiseEstimate::Analysis;
        else if (ne == "empirical") c.noise_estimate = NoiseEstimate::Empirical;
        else s.fail("noise_estimate", "expected analysis or empirical");
    }
    {
        const auto s = top.sub("analysis");
        s.allow({"error_model", "curve_file", "curve_grid_db", "curve_trials", "info_bits", "mse",
                 "small_scale_fading"});
        const auto m = s.text("error_model", "normal");
        if (m == "normal") c.analysis.model = AnalysisConfig::Model::Normal;
        else if (m == "empirical") c.analysis.model = AnalysisConfig::Model::Empirical;
        else s.fail("error_model", "expected normal or empirical");
        c.analysis.curve_file = s.text("curve_file", "");
        c.analysis.curve_grid_db = s.numbers("curve_grid_db");
        c.analysis.curve_trials = s.count("curve_trials", c.analysis.curve_trials, 1);
        if (s.has("info_bits")) c.analysis.info_bits = s.number("info_bits");
        c.analysis.small_scale_fading = s.flag("small_scale_fading", false);
        const auto mse = s.text("mse", "pilots");
        if (mse == "pilots") c.analysis.mse = AnalysisConfig::Mse::Pilots;
        else if (mse == "orthogonal") c.analysis.mse = AnalysisConfig::Mse::Orthogonal;
        else s.fail("mse", "expected pilots or orthogonal");
    }
    {
        const auto s = top.sub("sweep");
        s.allow({"axis", "values"});
        c.sweep.axis = s.text("axis", "");
        c.sweep.values = s.numbers("values");
        if (!c.sweep.axis.empty() && c.sweep.values.empty()) s.fail("values", "a sweep axis needs values");
        static const std::set<std::string> axes{"K_a", "M", "power_db", "ebn0_db"};
        if (!c.sweep.axis.empty() && !axes.count(c.sweep.axis)) s.fail("axis", "expected K_a, M, power_db or ebn0_db");
    }
    {
        const auto s = top.sub("search");
        s.allow({"target", "lo_db", "hi_db", "probes", "widen", "method"});
        auto& q = c.search;
        q.target = s.number("target", q.target);
        q.lo_db = s.number("lo_db", q.lo_db);
        q.hi_db = s.number("hi_db", q.hi_db);
        q.probes = s.count("probes", q.probes, 1);
        q.widen = s.count("widen", q.widen);
        q.method = s.text("method", q.method);
        if (q.method != "simulate" && q.method != "analyze" && q.method != "both")
            s.fail("method", "expected simulate, analyze or both");
        if (!(q.hi_db > q.lo_db)) s.fail("hi_db", "must exceed lo_db");
        if (!(q.target > 0 && q.target <= 1)) s.fail("target", "must lie in (0, 1]");
    }
    c.validate();
    return c;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError("config: parse error: " + std::string(e.what()));
    }
    return parse_config(doc);
}

void ScenarioConfig::validate() const {
    const auto& s = system;
    auto bad = [](const std::string& w) { throw ConfigError("config." + w); };
    if (s.message_bits <= s.pilot_bits) bad("system.B: must exceed J");
    const std::size_t block = 2 * s.data_length;
    if ((block & (block - 1)) != 0) bad("system.n_d: 2 n_d must be a power of two for the polar code");
    if (s.payload_bits() + kCrcBits > block) bad("system.B: payload plus CRC does not fit 2 n_d coded bits");
    if (pilot_kind == PilotKind::SubsampledDft && s.pilot_length > s.columns()) bad("system.n_p: must not exceed N = 2^J");
    const std::size_t delta = detector.delta.value_or(s.active_users / 40);
    if (!detector.threshold && s.active_users + delta > s.columns()) bad("detector.delta: K_a + delta exceeds N");
    if (s.active_users >= s.columns()) bad("system.K_a: must be below N");
    if (!sweep.axis.empty())
        for (double v : sweep.values) {
            if ((sweep.axis == "K_a" || sweep.axis == "M") && (v < 0 || std::floor(v) != v))
                bad("sweep.values: " + sweep.axis + " values must be nonnegative integers");
            if (sweep.axis == "M" && v < 1) bad("sweep.values: M must be positive");
        }
}

PowerPolicy PolicyConfig::build() const {
    const double p = db_to_linear(power_db);
    switch (kind) {
        case PolicyKind::Npc: return NoPowerControl{p};
        case PolicyKind::Sci: return ChannelInversion{p};
        case PolicyKind::ImperfectSci: return ImperfectInversion{p, error_db};
        case PolicyKind::PartialSci: {
            PartialInversion pi;
            pi.corners_db = corners_db;
            for (double r : levels_rel_db) pi.levels.push_back(p * db_to_linear(r));
            return pi;
        }
    }
    throw ConfigError("unknown policy");
}

double ebn0_db_from_power(double power_db, const SystemConfig& s) {
    return power_db + linear_to_db(static_cast<double>(s.block_length()) / static_cast<double>(s.message_bits)) -
           linear_to_db(s.noise_var);
}

double power_db_from_ebn0(double ebn0_db, const SystemConfig& s) {
    return ebn0_db - linear_to_db(static_cast<double>(s.block_length()) / static_cast<double>(s.message_bits)) +
           linear_to_db(s.noise_var);
}

double ScenarioConfig::ebn0_db() const { return ebn0_db_from_power(policy.power_db, system); }

ScenarioConfig ScenarioConfig::at(const std::string& axis, double value) const {
    ScenarioConfig c = *this;
    if (axis.empty()) return c;
    if (axis == "K_a") c.system.active_users = static_cast<std::size_t>(value);
    else if (axis == "M") c.system.antennas = static_cast<std::size_t>(value);
    else if (axis == "power_db") c.policy.power_db = value;
    else if (axis == "ebn0_db") c.policy.power_db = power_db_from_ebn0(value, c.system);
    else throw ConfigError("config.sweep.axis: unknown axis '" + axis + "'");
    c.validate();
    return c;
}

json ScenarioConfig::to_json() const {
    json j;
    j["scenario"] = scenario;
    j["trials"] = trials;
    j["seed"] = seed;
    j["mode"] = mode == RunMode::Simulate ? "simulate" : mode == RunMode::Analyze ? "analyze" : "search";
    j["system"] = {{"n_p", system.pilot_length}, {"n_d", system.data_length}, {"J", system.pilot_bits},
                   {"B", system.message_bits},   {"M", system.antennas},      {"K_a", system.active_users},
                   {"N0", system.noise_var}};
    j["pilots"] = {{"kind", to_string(pilot_kind)}, {"scramble", scramble}};
    j["lsfc"] = {{"alpha_db", lsfc.alpha_db},   {"beta_db", lsfc.beta_db},   {"sigma_shadow_db", lsfc.sigma_shadow_db},
                 {"r_min_km", lsfc.r_min_km}, {"r_max_km", lsfc.r_max_km}};
    if (lsfc.g_max_db) j["lsfc"]["g_max_db"] = *lsfc.g_max_db;
    static const char* policy_names[] = {"npc", "sci", "imperfect_sci", "partial_sci"};
    j["policy"] = {{"type", policy_names[static_cast<int>(policy.kind)]}, {"power_db", policy.power_db}};
    if (policy.kind == PolicyKind::ImperfectSci) j["policy"]["error_db"] = policy.error_db;
    if (policy.kind == PolicyKind::PartialSci) {
        j["policy"]["levels_rel_db"] = policy.levels_rel_db;
        j["policy"]["corners_db"] = db_array(policy.corners_db);
    }
    json d;
    d["denoiser"] = detector.kind == DetectorConfig::Kind::Ml ? "ml" : "pme";
    static const char* rules[] = {"tau", "absolute", "relative"};
    d["g_min_rule"] = rules[static_cast<int>(detector.gmin_rule)];
    d["g_min"] = detector.gmin_value;
    if (detector.kind == DetectorConfig::Kind::Pme) {
        d["levels_rel_db"] = detector.levels_rel_db;
        d["priors"] = detector.priors;
    }
    d["iterations"] = detector.amp.max_iterations;
    d["tolerance"] = detector.amp.tolerance;
    d["tau_divisor"] = to_string(detector.amp.divisor);
    d["divergence_growth"] = detector.amp.divergence_growth;
    d["divergence_patience"] = detector.amp.divergence_patience;
    d["selection"] = detector.threshold ? "threshold" : "topk";
    d["delta"] = detector.delta.value_or(system.active_users / 40);
    if (!detector.delta) d["delta"] = "auto";
    j["detector"] = d;
    j["codec"] = {{"list_size", codec.list_size}, {"design_target_pe", codec.design_target_pe}};
    if (codec.design_sinr_db) j["codec"]["design_sinr_db"] = *codec.design_sinr_db;
    j["receiver"] = {{"sic", to_string(sic.strategy)},
                     {"division_db", sic.division_db},
                     {"noise_estimate", noise_estimate == NoiseEstimate::Analysis ? "analysis" : "empirical"}};
    json a;
    a["error_model"] = analysis.model == AnalysisConfig::Model::Normal ? "normal" : "empirical";
    if (!analysis.curve_file.empty()) a["curve_file"] = analysis.curve_file;
    if (!analysis.curve_grid_db.empty()) a["curve_grid_db"] = analysis.curve_grid_db;
    a["curve_trials"] = analysis.curve_trials;
    if (analysis.info_bits) a["info_bits"] = *analysis.info_bits;
    a["mse"] = analysis.mse == AnalysisConfig::Mse::Pilots ? "pilots" : "orthogonal";
    a["small_scale_fading"] = analysis.small_scale_fading;
    j["analysis"] = a;
    if (!sweep.axis.empty()) j["sweep"] = {{"axis", sweep.axis}, {"values", sweep.values}};
    j["search"] = {{"target", search.target}, {"lo_db", search.lo_db}, {"hi_db", search.hi_db},
                   {"probes", search.probes}, {"widen", search.widen}, {"method", search.method}};
    return j;
}

// ---------------------------------------------------------------------------
// statistics

Interval wilson_interval(std::size_t k, std::size_t n, double z) {
    if (n == 0) return {0.0, 1.0};
    const double nn = static_cast<double>(n);
    const double p = static_cast<double>(k) / nn;
    const double z2 = z * z;
    const double centre = (p + z2 / (2 * nn)) / (1 + z2 / nn);
    const double half = z / (1 + z2 / nn) * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn));
    return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

// ---------------------------------------------------------------------------
// trials

namespace {

double design_sinr_db(const ScenarioConfig& c) {
    if (c.codec.design_sinr_db) return *c.codec.design_sinr_db;
    const ErrorModel na(NormalApprox{c.system.data_length, static_cast<double>(c.system.payload_bits())});
    return linear_to_db(required_sinr(na, c.codec.design_target_pe));
}

}  // namespace

PointContext::PointContext(const ScenarioConfig& config)
    : config_(config),
      pilots_(PilotMatrix::build(config.pilot_kind, config.system.pilot_length, config.system.columns(),
                                 derive_seed(config.seed, Stream::Pilots), config.scramble)),
      codec_(PolarCodeParams{2 * config.system.data_length, config.system.payload_bits(), design_sinr_db(config),
                             config.codec.list_size}) {}

PopulationSpec PointContext::population_spec() const {
    PopulationSpec p;
    p.active_users = config_.system.active_users;
    p.message_bits = config_.system.message_bits;
    p.pilot_bits = config_.system.pilot_bits;
    p.antennas = config_.system.antennas;
    p.lsfc = config_.lsfc;
    p.policy = config_.policy.build();
    return p;
}

ReceiverConfig PointContext::receiver_config() const {
    const auto& c = config_;
    ReceiverConfig r;
    const double rho = db_to_linear(c.policy.power_db);
    const double n = static_cast<double>(c.system.columns());
    r.denoiser.activity = std::clamp(static_cast<double>(std::max<std::size_t>(c.system.active_users, 1)) / n, 1e-12, 1 - 1e-12);
    if (c.detector.kind == DetectorConfig::Kind::Pme) {
        DiscretePmeDenoiser d;
        for (double v : c.detector.levels_rel_db) d.levels.push_back(rho * db_to_linear(v));
        double total = 0;
        for (double v : c.detector.priors) total += v;
        for (double v : c.detector.priors) d.priors.push_back(v / total);
        r.denoiser.kind = d;
    } else {
        MlLsfcDenoiser d;
        switch (c.detector.gmin_rule) {
            case DetectorConfig::GminRule::Tau:
                d.rule = MlLsfcDenoiser::GminRule::TauMultiple;
                d.value = c.detector.gmin_value;
                break;
            case DetectorConfig::GminRule::Absolute:
                d.rule = MlLsfcDenoiser::GminRule::Absolute;
                d.value = db_to_linear(c.detector.gmin_value);
                break;
            case DetectorConfig::GminRule::Relative:
                d.rule = MlLsfcDenoiser::GminRule::Absolute;
                d.value = rho * db_to_linear(c.detector.gmin_value);
                break;
        }
        r.denoiser.kind = d;
    }
    r.amp = c.detector.amp;
    if (c.detector.threshold) r.selection = ThresholdRule{};
    else r.selection = TopK{c.system.active_users, c.detector.delta.value_or(c.system.active_users / 40)};
    r.sic = c.sic;
    r.noise_var = c.system.noise_var;
    r.pilot_bits = c.system.pilot_bits;
    r.message_bits = c.system.message_bits;
    r.noise_estimate = c.noise_estimate;
    return r;
}

TrialResult run_trial(const PointContext& ctx, std::uint64_t seed) {
    const auto& cfg = ctx.config();
    TrialResult res;
    const auto pop = draw_population(ctx.population_spec(), seed);
    res.active_users = pop.size();
    std::vector<CVector> symbols;
    symbols.reserve(pop.size());
    for (const auto& u : pop.users) symbols.push_back(encode_message(ctx.codec(), u.message, cfg.system.pilot_bits));
    const auto rx = synthesize(ctx.pilots(), pop, symbols, cfg.system.data_length, cfg.system.noise_var, seed);

    std::vector<Bits> list;
    if (pop.empty() && !cfg.detector.threshold) {
        // top-K with K_a = 0 selects nothing
    } else {
        try {
            auto out = run_receiver(rx.pilot_rx, rx.data_rx, ctx.pilots(), ctx.codec(), ctx.receiver_config());
            const auto counts = count_detection(out.detection, pop);
            res.ad_columns = counts.active_columns;
            res.ad_missed = counts.missed_columns;
            res.ad_false = counts.false_alarm_columns;
            res.iterations = out.detection.iterations;
            list = std::move(out.messages);
        } catch (const DivergenceError& e) {
            res.failed = true;
            res.failure = e.what();
        }
    }
    std::set<Bits> sent;
    for (const auto& u : pop.users) sent.insert(u.message);
    const std::set<Bits> got(list.begin(), list.end());
    res.list_size = got.size();
    for (std::size_t k = 0; k < pop.size(); ++k)
        if (!got.count(pop.users[k].message)) {
            ++res.missed;
            res.missed_users.push_back(k);
        }
    for (const auto& m : got)
        if (!sent.count(m)) ++res.false_alarms;
    return res;
}

PointMetrics simulate_point(const ScenarioConfig& config, std::size_t threads, std::vector<TrialResult>* keep) {
    const auto t0 = std::chrono::steady_clock::now();
    const PointContext ctx(config);
    std::vector<TrialResult> results(config.trials);
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t t = next.fetch_add(1);
            if (t >= config.trials) return;
            try {
                results[t] = run_trial(ctx, trial_seed(config.seed, t));
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = config.trials;
            }
        }
    };
    threads = std::max<std::size_t>(1, std::min(threads, config.trials));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);

    PointMetrics m;
    m.scenario = config.scenario;
    m.trials = config.trials;
    m.seed = config.seed;
    m.ebn0_db = config.ebn0_db();
    double pfa_sum = 0, iter_sum = 0;
    for (const auto& r : results) {
        m.failed_trials += r.failed;
        m.users += r.active_users;
        m.list_total += r.list_size;
        m.missed += r.missed;
        m.false_alarms += r.false_alarms;
        if (r.list_size != r.false_alarms + r.active_users - r.missed) ++m.identity_violations;
        pfa_sum += r.list_size ? static_cast<double>(r.false_alarms) / static_cast<double>(r.list_size) : 0.0;
        m.ad_columns += r.ad_columns;
        m.ad_missed += r.ad_missed;
        m.ad_false += r.ad_false;
        iter_sum += static_cast<double>(r.iterations);
    }
    m.p_md = m.users ? static_cast<double>(m.missed) / static_cast<double>(m.users) : std::numeric_limits<double>::quiet_NaN();
    m.p_fa = pfa_sum / static_cast<double>(m.trials);
    m.p_md_ci = wilson_interval(m.missed, m.users);
    m.p_fa_ci = wilson_interval(m.false_alarms, m.list_total);
    m.mean_iterations = iter_sum / static_cast<double>(m.trials);
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (keep) *keep = std::move(results);
    return m;
}

// ---------------------------------------------------------------------------
// analysis

AnalysisPoint analyze_point(const ScenarioConfig& config, const ErrorModel& model, std::size_t trials) {
    const auto& s = config.system;
    AnalysisPoint out;
    out.ebn0_db = config.ebn0_db();
    PopulationSpec spec;
    spec.active_users = s.active_users;
    spec.message_bits = s.message_bits;
    spec.pilot_bits = s.pilot_bits;
    spec.antennas = 1;
    spec.lsfc = config.lsfc;
    spec.policy = config.policy.build();
    std::optional<PilotMatrix> pilots;
    if (config.analysis.mse == AnalysisConfig::Mse::Pilots)
        pilots = PilotMatrix::build(config.pilot_kind, s.pilot_length, s.columns(), derive_seed(config.seed, Stream::Pilots),
                                    config.scramble);
    // deterministic populations need a single draw
    const bool deterministic = config.policy.kind == PolicyKind::Sci && !pilots;
    const std::size_t n_trials = deterministic ? 1 : std::max<std::size_t>(trials, 1);
    double pe_sum = 0, sinr_db_sum = 0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < n_trials; ++t) {
        const std::uint64_t seed = trial_seed(config.seed, t);
        const auto pop = draw_population(spec, seed);
        const auto k = static_cast<Eigen::Index>(pop.size());
        if (k == 0) continue;
        RVector power(k), mse(k);
        for (Eigen::Index i = 0; i < k; ++i) {
            power(i) = pop.users[static_cast<std::size_t>(i)].received_power();
            mse(i) = orthogonal_mse(power(i), s.pilot_length, s.noise_var);
        }
        if (pilots) {
            // colliding users share one pilot column carrying their summed power
            std::map<std::size_t, double> column_power;
            for (Eigen::Index i = 0; i < k; ++i) column_power[pop.users[static_cast<std::size_t>(i)].pilot] += power(i);
            std::vector<std::size_t> cols;
            RVector g(static_cast<Eigen::Index>(column_power.size()));
            for (const auto& [c, p] : column_power) {
                g(static_cast<Eigen::Index>(cols.size())) = p;
                cols.push_back(c);
            }
            const auto est = lmmse_estimate(CMatrix::Zero(static_cast<Eigen::Index>(s.pilot_length), 1),
                                            pilots->columns(cols), g, s.noise_var);
            for (Eigen::Index i = 0; i < k; ++i) {
                const auto pos = std::lower_bound(cols.begin(), cols.end(), pop.users[static_cast<std::size_t>(i)].pilot);
                mse(i) = est.mse(pos - cols.begin());
            }
        }
        SicPlan plan = config.sic;
        const auto stages = sic_stages(plan, power);
        std::vector<std::size_t> stage(static_cast<std::size_t>(k), 0);
        for (std::size_t st = 0; st < stages.size(); ++st)
            for (auto r : stages[st]) stage[r] = st;
        RVector sinr;
        if (plan.strategy == SicStrategy::None || deterministic) {
            sinr = sinr_staged_mean_field(power, mse, stage, s.antennas, s.noise_var, model);
        } else {
            Rng rng(derive_seed(seed, Stream::Analysis));
            sinr = sinr_sic_sample(power, mse, stage, s.antennas, s.noise_var, model, rng).sinr;
        }
        for (Eigen::Index i = 0; i < k; ++i) {
            pe_sum += config.analysis.small_scale_fading ? fading_averaged_pe(model, sinr(i), s.antennas) : model.pe(sinr(i));
            sinr_db_sum += linear_to_db(sinr(i));
            ++count;
        }
    }
    out.p_md = count ? pe_sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
    out.mean_sinr_db = count ? sinr_db_sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
    return out;
}

namespace {

std::vector<ErrorPoint> read_curve_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config.analysis.curve_file: cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    std::vector<ErrorPoint> pts;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() < 3) throw ConfigError("config.analysis.curve_file: malformed row '" + line + "'");
        ErrorPoint p{std::stod(cells[0]), std::stoul(cells[1]), std::stoul(cells[2]), cells.size() > 3 ? std::stoul(cells[3]) : 0};
        pts.push_back(p);
    }
    return pts;
}

}  // namespace

ErrorModel analysis_error_model(const ScenarioConfig& config, const std::filesystem::path& out_dir) {
    const auto& s = config.system;
    if (config.analysis.model == AnalysisConfig::Model::Normal)
        return ErrorModel(NormalApprox{s.data_length, config.analysis.info_bits.value_or(static_cast<double>(s.payload_bits()))});
    std::filesystem::path file = config.analysis.curve_file;
    if (file.empty()) file = out_dir / "codec_curve.csv";
    if (!std::filesystem::exists(file)) {
        auto grid = config.analysis.curve_grid_db;
        if (grid.empty()) {
            const double centre = design_sinr_db(config);
            for (double d = centre - 4.0; d <= centre + 3.0 + 1e-9; d += 0.25) grid.push_back(d);
        }
        const PointContext ctx(config);
        const auto curve = measure_error_curve(ctx.codec(), grid, config.analysis.curve_trials, derive_seed(config.seed, Stream::Codec));
        if (!out_dir.empty()) std::filesystem::create_directories(file.parent_path().empty() ? "." : file.parent_path());
        std::ofstream os(file);
        os << std::setprecision(10);
        write_error_curve_csv(os, curve);
        return ErrorModel::from_curve(curve);
    }
    return ErrorModel::from_curve(read_curve_csv(file));
}

// ---------------------------------------------------------------------------
// E_b/N0 search

namespace {

// power at which log P_e crosses the target, interpolated over the tightest bracket
SearchResult finish_search(const ScenarioConfig& config, std::vector<SearchProbe> probes, const std::string& method) {
    const double target = config.search.target;
    std::sort(probes.begin(), probes.end(), [](const auto& a, const auto& b) { return a.power_db < b.power_db; });
    SearchResult r;
    r.method = method;
    r.probes = probes;
    const SearchProbe* below = nullptr;  // failing (P_e > target)
    const SearchProbe* above = nullptr;  // passing
    for (const auto& p : probes) {
        if (p.pe > target) below = &p;
    }
    for (const auto& p : probes)
        if (p.pe <= target && (!below || p.power_db > below->power_db)) {
            above = &p;
            break;
        }
    if (!below || !above) {
        r.bracket_ok = false;
        r.power_db = below ? probes.back().power_db : probes.front().power_db;
    } else {
        const double lp0 = std::log(std::max(below->pe, 1e-12)), lp1 = std::log(std::max(above->pe, 1e-12));
        const double lt = std::log(target);
        const double t = lp0 == lp1 ? 0.5 : std::clamp((lp0 - lt) / (lp0 - lp1), 0.0, 1.0);
        r.power_db = below->power_db + t * (above->power_db - below->power_db);
    }
    double ci_lo = probes.front().power_db, ci_hi = probes.back().power_db;
    for (const auto& p : probes)
        if (p.ci.lo > target) ci_lo = std::max(ci_lo, p.power_db);
    for (auto it = probes.rbegin(); it != probes.rend(); ++it)
        if (it->ci.hi < target) ci_hi = std::min(ci_hi, it->power_db);
    if (ci_hi < ci_lo) std::swap(ci_lo, ci_hi);
    r.ebn0_db = ebn0_db_from_power(r.power_db, config.system);
    r.ebn0_ci = {ebn0_db_from_power(ci_lo, config.system), ebn0_db_from_power(ci_hi, config.system)};
    return r;
}

template <class Probe>
SearchResult bisect(const ScenarioConfig& config, Probe probe, std::size_t iterations, double min_width,
                    const std::string& method) {
    const double target = config.search.target;
    std::vector<SearchProbe> probes;
    double lo = config.search.lo_db, hi = config.search.hi_db;
    auto eval = [&](double p) {
        probes.push_back(probe(p));
        return probes.back().pe;
    };
    if (target >= 1.0) {
        probes.push_back(probe(lo));
        auto r = finish_search(config, probes, method);
        r.power_db = lo;
        r.ebn0_db = ebn0_db_from_power(lo, config.system);
        r.ebn0_ci = {r.ebn0_db, r.ebn0_db};
        r.bracket_ok = true;
        return r;
    }
    double plo = eval(lo), phi = eval(hi);
    for (std::size_t w = 0; w < config.search.widen && plo <= target; ++w) {
        const double width = hi - lo;
        hi = lo;
        phi = plo;
        lo -= width;
        plo = eval(lo);
    }
    for (std::size_t w = 0; w < config.search.widen && phi > target; ++w) {
        const double width = hi - lo;
        lo = hi;
        plo = phi;
        hi += width;
        phi = eval(hi);
    }
    if (plo > target && phi <= target) {
        for (std::size_t it = 0; it < iterations && hi - lo > min_width; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (eval(mid) > target) lo = mid;
            else hi = mid;
        }
    }
    return finish_search(config, probes, method);
}

}  // namespace

SearchResult ebn0_search_simulated(const ScenarioConfig& config, std::size_t threads) {
    return bisect(
        config,
        [&](double p) {
            const auto m = simulate_point(config.at("power_db", p), threads);
            const auto md = m.p_md_ci, fa = m.p_fa_ci;
            const double pmd = std::isnan(m.p_md) ? 0.0 : m.p_md;
            return SearchProbe{p, pmd + m.p_fa, {md.lo + fa.lo, std::min(1.0, md.hi + fa.hi)}};
        },
        config.search.probes, 0.0, "simulate");
}

SearchResult ebn0_search_analysis(const ScenarioConfig& config, const ErrorModel& model) {
    return bisect(
        config,
        [&](double p) {
            const auto a = analyze_point(config.at("power_db", p), model, config.trials);
            const double v = std::isnan(a.p_md) ? 0.0 : a.p_md;
            return SearchProbe{p, v, {v, v}};
        },
        60, 1e-4, "analyze");
}

// ---------------------------------------------------------------------------
// output

namespace {

std::string fmt(double v) {
    if (std::isnan(v)) return "NA";
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

std::string point_key(const std::string& axis, double value) { return axis + "=" + fmt(value); }

// Rows of an existing CSV keyed by "axis=value" (columns 2 and 3).
std::map<std::string, std::vector<std::string>> existing_rows(const std::filesystem::path& file) {
    std::map<std::string, std::vector<std::string>> rows;
    std::ifstream in(file);
    if (!in) return rows;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string scenario, axis, value;
        std::getline(ss, scenario, ',');
        std::getline(ss, axis, ',');
        std::getline(ss, value, ',');
        rows[axis + "=" + value].push_back(line);
    }
    return rows;
}

void atomic_write(const std::filesystem::path& file, const std::string& content) {
    const auto tmp = file.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        os << content;
        if (!os) throw std::runtime_error("cannot write " + tmp);
    }
    std::filesystem::rename(tmp, file);
}

}  // namespace

void write_metrics_header(std::ostream& os) {
    os << "scenario,axis,value,ebn0_db,trials,failed_trials,users,list_total,n_md,n_fa,p_md,p_md_lo,p_md_hi,p_fa,"
          "p_fa_lo,p_fa_hi,pe,ad_columns,ad_missed,ad_false,mean_iterations,identity_violations,seed,build\n";
}

void write_metrics_row(std::ostream& os, const PointMetrics& m, const std::string& build) {
    os << m.scenario << ',' << (m.axis.empty() ? "-" : m.axis) << ',' << fmt(m.value) << ',' << fmt(m.ebn0_db) << ','
       << m.trials << ',' << m.failed_trials << ',' << m.users << ',' << m.list_total << ',' << m.missed << ','
       << m.false_alarms << ',' << fmt(m.p_md) << ',' << fmt(m.p_md_ci.lo) << ',' << fmt(m.p_md_ci.hi) << ','
       << fmt(m.p_fa) << ',' << fmt(m.p_fa_ci.lo) << ',' << fmt(m.p_fa_ci.hi) << ','
       << fmt(std::isnan(m.p_md) ? m.p_fa : m.pe()) << ',' << m.ad_columns << ',' << m.ad_missed << ',' << m.ad_false
       << ',' << fmt(m.mean_iterations) << ',' << m.identity_violations << ',' << m.seed << ',' << build << '\n';
}

std::size_t run_campaign(const ScenarioConfig& config, const std::filesystem::path& out_dir, std::size_t threads,
                         std::ostream& log) {
    std::size_t failed = 0;
    std::filesystem::create_directories(out_dir);
    const json resolved = config.to_json();
    const auto meta_file = out_dir / "meta.json";
    bool resume = false;
    {
        std::ifstream in(meta_file);
        if (in) {
            try {
                json old;
                in >> old;
                resume = old.contains("config") && old["config"] == resolved;
            } catch (const json::exception&) {
                resume = false;
            }
        }
    }
    json meta;
    meta["scenario"] = config.scenario;
    meta["build"] = build_id();
    meta["config"] = resolved;
    meta["design_sinr_db"] = design_sinr_db(config);
    meta["tau_divisor"] = to_string(config.detector.amp.divisor);
    atomic_write(meta_file, meta.dump(2) + "\n");

    std::vector<double> values = config.sweep.values;
    const std::string axis = config.sweep.axis;
    if (axis.empty()) values = {0.0};
    const std::string label = axis.empty() ? "-" : axis;

    std::ostringstream timings;
    timings << "axis,value,wall_seconds\n";

    if (config.mode == RunMode::Simulate) {
        const auto file = out_dir / "metrics.csv";
        auto done = resume ? existing_rows(file) : std::map<std::string, std::vector<std::string>>{};
        std::ostringstream body;
        write_metrics_header(body);
        for (double v : values) {
            const auto key = point_key(label, v);
            if (auto it = done.find(key); it != done.end()) {
                for (const auto& l : it->second) body << l << '\n';
                log << "skip " << key << " (already complete)\n";
                continue;
            }
            const auto point = config.at(axis, v);
            auto m = simulate_point(point, threads);
            m.axis = axis;
            m.value = v;
            write_metrics_row(body, m, build_id());
            failed += m.failed_trials;
            timings << label << ',' << fmt(v) << ',' << fmt(m.wall_seconds) << '\n';
            log << key << ": p_md=" << fmt(m.p_md) << " p_fa=" << fmt(m.p_fa) << " failed=" << m.failed_trials
                << " (" << fmt(m.wall_seconds) << " s)\n";
            // rewritten after every point so that an interrupted campaign can resume
            atomic_write(file, body.str());
        }
        atomic_write(file, body.str());
    } else if (config.mode == RunMode::Analyze) {
        const auto model = analysis_error_model(config, out_dir);
        std::ostringstream body;
        body << "scenario,axis,value,ebn0_db,mean_sinr_db,p_md_pred,seed,build\n";
        for (double v : values) {
            const auto a = analyze_point(config.at(axis, v), model, config.trials);
            body << config.scenario << ',' << label << ',' << fmt(v) << ',' << fmt(a.ebn0_db) << ',' << fmt(a.mean_sinr_db)
                 << ',' << fmt(a.p_md) << ',' << config.seed << ',' << build_id() << '\n';
            log << point_key(label, v) << ": predicted p_md=" << fmt(a.p_md) << '\n';
        }
        atomic_write(out_dir / "analysis.csv", body.str());
    } else {
        const auto file = out_dir / "search.csv";
        auto done = resume ? existing_rows(file) : std::map<std::string, std::vector<std::string>>{};
        std::ostringstream body, probes;
        body << "scenario,axis,value,method,power_db,ebn0_db,ebn0_lo,ebn0_hi,bracket_ok,seed,build\n";
        probes << "scenario,axis,value,method,power_db,pe,pe_lo,pe_hi\n";
        std::optional<ErrorModel> model;
        for (double v : values) {
            const auto key = point_key(label, v);
            if (auto it = done.find(key); it != done.end()) {
                for (const auto& l : it->second) body << l << '\n';
                log << "skip " << key << " (already complete)\n";
                continue;
            }
            const auto point = config.at(axis, v);
            std::vector<SearchResult> results;
            const auto t0 = std::chrono::steady_clock::now();
            if (config.search.method != "simulate") {
                if (!model) model = analysis_error_model(config, out_dir);
                results.push_back(ebn0_search_analysis(point, *model));
            }
            if (config.search.method != "analyze") results.push_back(ebn0_search_simulated(point, threads));
            for (const auto& r : results) {
                body << config.scenario << ',' << label << ',' << fmt(v) << ',' << r.method << ',' << fmt(r.power_db) << ','
                     << fmt(r.ebn0_db) << ',' << fmt(r.ebn0_ci.lo) << ',' << fmt(r.ebn0_ci.hi) << ','
                     << (r.bracket_ok ? 1 : 0) << ',' << config.seed << ',' << build_id() << '\n';
                for (const auto& p : r.probes)
                    probes << config.scenario << ',' << label << ',' << fmt(v) << ',' << r.method << ',' << fmt(p.power_db)
                           << ',' << fmt(p.pe) << ',' << fmt(p.ci.lo) << ',' << fmt(p.ci.hi) << '\n';
                log << key << " [" << r.method << "]: Eb/N0 = " << fmt(r.ebn0_db) << " dB"
                    << (r.bracket_ok ? "" : " (bracket not established)") << '\n';
            }
            timings << label << ',' << fmt(v) << ','
                    << fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) << '\n';
            atomic_write(file, body.str());
        }
        atomic_write(file, body.str());
        if (!probes.str().empty()) atomic_write(out_dir / "probes.csv", probes.str());
    }
    atomic_write(out_dir / "timings.csv", timings.str());
    return failed;
}

}  // namespace ura
