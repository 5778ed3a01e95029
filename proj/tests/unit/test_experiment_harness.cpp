#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ura/harness.hpp"

using namespace ura;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json tiny() {
    return json{{"scenario", "tiny"},
                {"system", {{"n_p", 32}, {"n_d", 64}, {"J", 6}, {"B", 36}, {"M", 4}, {"K_a", 4}, {"N0", 1.0}}},
                {"policy", {{"type", "sci"}, {"power_db", -8.0}}},
                {"codec", {{"list_size", 4}}},
                {"trials", 12},
                {"seed", 5}};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("ura_harness_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string error_of(const json& doc) {
    try {
        parse_config(doc).validate();
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("config parsing") {
    const auto c = parse_config(tiny());
    CHECK(c.scenario == "tiny");
    CHECK(c.system.columns() == 64);
    CHECK(c.system.payload_bits() == 30);
    CHECK(c.trials == 12);
    CHECK_NOTHROW(c.validate());
    const auto back = parse_config(c.to_json());
    CHECK(back.to_json() == c.to_json());
}

TEST_CASE("config errors name the field") {
    auto d = tiny();
    d["system"]["M"] = -1;
    CHECK(error_of(d).find("config.system.M") != std::string::npos);
    d = tiny();
    d["system"]["antennas"] = 4;
    CHECK(error_of(d).find("config.system.antennas") != std::string::npos);
    d = tiny();
    d["colour"] = "blue";
    CHECK(error_of(d).find("config.colour") != std::string::npos);
    d = tiny();
    d["policy"]["type"] = "magic";
    CHECK(error_of(d).find("config.policy.type") != std::string::npos);
    d = tiny();
    d["system"]["B"] = 5;  // B must exceed J
    CHECK_FALSE(error_of(d).empty());
    d = tiny();
    d["system"]["n_d"] = 60;  // 2 n_d must be a power of two
    CHECK_FALSE(error_of(d).empty());
    d = tiny();
    d["system"]["K_a"] = 64;
    CHECK_FALSE(error_of(d).empty());
    d = tiny();
    d["detector"] = {{"denoiser", "pme"}};
    CHECK(error_of(d).find("config.detector.levels_rel_db") != std::string::npos);
    d = tiny();
    d["sweep"] = {{"axis", "K_a"}};
    CHECK(error_of(d).find("config.sweep.values") != std::string::npos);
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("Wilson interval") {
    // the bounds solve (k/n - p)^2 = z^2 p (1 - p) / n
    const double z = 1.959963984540054;
    for (auto [k, n] : std::vector<std::pair<std::size_t, std::size_t>>{{0, 10}, {3, 10}, {50, 100}, {7, 1000}, {20, 20}}) {
        const auto ci = wilson_interval(k, n);
        const double ph = double(k) / double(n);
        for (double p : {ci.lo, ci.hi}) {
            if (p <= 0 || p >= 1) continue;
            CHECK((ph - p) * (ph - p) == doctest::Approx(z * z * p * (1 - p) / double(n)).epsilon(1e-9));
        }
        CHECK(ci.lo <= ph);
        CHECK(ci.hi >= ph);
    }
    CHECK(wilson_interval(0, 10).lo == 0.0);
    CHECK(wilson_interval(10, 10).hi == doctest::Approx(1.0));
    const auto empty = wilson_interval(0, 0);
    CHECK(empty.lo == 0.0);
    CHECK(empty.hi == 1.0);
}

TEST_CASE("Eb/N0 conversion") {
    SystemConfig s;
    s.pilot_length = 288;
    s.data_length = 512;
    s.message_bits = 96;
    CHECK(ebn0_db_from_power(-16.0, s) == doctest::Approx(-16.0 + 10 * std::log10(800.0 / 96.0)));
    CHECK(power_db_from_ebn0(ebn0_db_from_power(-13.2, s), s) == doctest::Approx(-13.2));
    auto d = s;
    d.message_bits = 192;
    CHECK(ebn0_db_from_power(-16.0, s) - ebn0_db_from_power(-16.0, d) == doctest::Approx(10 * std::log10(2.0)));
    d = s;
    d.noise_var = 2.0;
    CHECK(ebn0_db_from_power(-16.0, s) - ebn0_db_from_power(-16.0, d) == doctest::Approx(10 * std::log10(2.0)));
}

TEST_CASE("sweep axis substitution") {
    auto d = tiny();
    const auto c = parse_config(d);
    CHECK(c.at("K_a", 7).system.active_users == 7);
    CHECK(c.at("M", 9).system.antennas == 9);
    CHECK(c.at("power_db", -3).policy.power_db == -3);
    const auto e = c.at("ebn0_db", 2.0);
    CHECK(e.ebn0_db() == doctest::Approx(2.0));
}

TEST_CASE("trial accounting") {
    const auto c = parse_config(tiny());
    std::vector<TrialResult> trials;
    const auto m = simulate_point(c, 1, &trials);
    REQUIRE(trials.size() == 12);
    std::size_t users = 0, missed = 0, list = 0, fa = 0;
    for (const auto& t : trials) {
        CHECK(t.list_size + t.missed == t.active_users + t.false_alarms);
        CHECK(t.missed_users.size() == t.missed);
        users += t.active_users;
        missed += t.missed;
        list += t.list_size;
        fa += t.false_alarms;
    }
    CHECK(m.identity_violations == 0);
    CHECK(m.users == users);
    CHECK(m.missed == missed);
    CHECK(m.list_total == list);
    CHECK(m.false_alarms == fa);
    CHECK(m.p_md == doctest::Approx(double(missed) / double(users)));
    CHECK(m.p_md_ci.lo <= m.p_md);
    CHECK(m.p_md_ci.hi >= m.p_md);
    // thread count does not change the numbers
    const auto m2 = simulate_point(c, 3);
    CHECK(m2.missed == m.missed);
    CHECK(m2.false_alarms == m.false_alarms);
    CHECK(m2.p_fa == m.p_fa);
    // trial seeds replay single trials
    const PointContext ctx(c);
    const auto again = run_trial(ctx, trial_seed(c.seed, 4));
    CHECK(again.missed == trials[4].missed);
    CHECK(again.list_size == trials[4].list_size);
}

TEST_CASE("no active users") {
    auto d = tiny();
    d["system"]["K_a"] = 0;
    const auto m = simulate_point(parse_config(d), 1);
    CHECK(m.users == 0);
    CHECK(std::isnan(m.p_md));
    std::ostringstream os;
    write_metrics_row(os, m, "test");
    CHECK(os.str().find("NA") != std::string::npos);
}

TEST_CASE("campaign output, reruns and resume") {
    auto d = tiny();
    d["sweep"] = {{"axis", "power_db"}, {"values", {-10.0, -6.0}}};
    d["trials"] = 6;
    const auto c = parse_config(d);
    const auto a = scratch("a"), b = scratch("b");
    std::ostringstream log;
    CHECK(run_campaign(c, a, 1, log) == 0);
    CHECK(run_campaign(c, b, 2, log) == 0);
    CHECK(fs::exists(a / "meta.json"));
    CHECK(fs::exists(a / "timings.csv"));
    const auto text = slurp(a / "metrics.csv");
    CHECK(text == slurp(b / "metrics.csv"));
    CHECK(text.rfind("scenario,axis,value,ebn0_db,trials,", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);
    const auto meta = json::parse(slurp(a / "meta.json"));
    CHECK(meta["scenario"] == "tiny");
    CHECK(meta.contains("build"));

    std::ostringstream again;
    run_campaign(c, a, 1, again);
    CHECK(again.str().find("skip") != std::string::npos);
    CHECK(slurp(a / "metrics.csv") == text);

    // a changed config does not reuse old points
    auto e = d;
    e["seed"] = 6;
    std::ostringstream fresh;
    run_campaign(parse_config(e), a, 1, fresh);
    CHECK(fresh.str().find("skip") == std::string::npos);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("analysis mode and search") {
    auto d = tiny();
    d["mode"] = "analyze";
    d["sweep"] = {{"axis", "power_db"}, {"values", {-14.0, -10.0, -6.0}}};
    const auto c = parse_config(d);
    const ErrorModel model(NormalApprox{64, 30});
    double prev = 1.0;
    for (double v : c.sweep.values) {
        const auto a = analyze_point(c.at("power_db", v), model, 50);
        CHECK(a.p_md <= prev + 1e-12);
        CHECK(a.p_md >= 0);
        prev = a.p_md;
    }
    auto s = tiny();
    s["mode"] = "search";
    s["search"] = {{"target", 1.0}, {"lo_db", -20.0}, {"hi_db", 0.0}, {"method", "analyze"}};
    const auto r = ebn0_search_analysis(parse_config(s), model);
    CHECK(r.power_db == doctest::Approx(-20.0));
    s["search"]["target"] = 0.05;
    const auto r2 = ebn0_search_analysis(parse_config(s), model);
    CHECK(r2.bracket_ok);
    CHECK(r2.power_db > -20.0);
    CHECK(r2.power_db < 0.0);
    CHECK(r2.ebn0_db == doctest::Approx(ebn0_db_from_power(r2.power_db, parse_config(s).system)));
    const auto at = analyze_point(parse_config(s).at("power_db", r2.power_db), model, 200);
    CHECK(at.p_md == doctest::Approx(0.05).epsilon(0.3));
}
