#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ura/harness.hpp"
#include "ura/power_optimizer.hpp"

using namespace ura;
using nlohmann::json;

namespace {

struct Common {
    std::string config;
    std::string out = "out";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> trials;
    std::size_t threads = 1;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "scenario config (JSON)")->required()->check(CLI::ExistingFile);
    app->add_option("--out", c.out, "output directory");
    app->add_option("--seed", c.seed, "override the base seed");
    app->add_option("--trials", c.trials, "override the trial count")->check(CLI::PositiveNumber);
    app->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
}

ScenarioConfig resolve(const Common& c) {
    auto cfg = load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (c.trials) cfg.trials = *c.trials;
    return cfg;
}

// Optimizer campaign: one plan file per method plus a summary table.
void run_optimize(const std::string& path, const std::string& out_dir, std::ostream& log) {
    std::ifstream in(path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: parse error: ") + e.what());
    }
    static const std::set<std::string> known{"K_a", "M", "n_p", "n_d", "info_bits", "N0", "target_pe", "residual_error",
                                             "lsfc", "draws", "seed", "sinr_target_db", "methods"};
    for (const auto& [k, v] : doc.items())
        if (!known.count(k)) throw ConfigError("config." + k + ": unknown field");

    OptimizerParams p;
    p.active_users = doc.value("K_a", p.active_users);
    p.antennas = doc.value("M", p.antennas);
    p.pilot_length = doc.value("n_p", p.pilot_length);
    p.noise_var = doc.value("N0", p.noise_var);
    p.residual_error = doc.value("residual_error", p.residual_error);
    p.draws = doc.value("draws", p.draws);
    p.seed = doc.value("seed", p.seed);
    if (doc.contains("lsfc")) {
        const auto& l = doc["lsfc"];
        p.lsfc.alpha_db = l.value("alpha_db", p.lsfc.alpha_db);
        p.lsfc.beta_db = l.value("beta_db", p.lsfc.beta_db);
        p.lsfc.sigma_shadow_db = l.value("sigma_shadow_db", p.lsfc.sigma_shadow_db);
        p.lsfc.r_min_km = l.value("r_min_km", p.lsfc.r_min_km);
        p.lsfc.r_max_km = l.value("r_max_km", p.lsfc.r_max_km);
        if (l.contains("g_max_db")) p.lsfc.g_max_db = l["g_max_db"].get<double>();
        p.lsfc.validate();
    }
    const std::size_t n_d = doc.value("n_d", std::size_t{2048});
    const double bits = doc.value("info_bits", 84.0);
    const ErrorModel model(NormalApprox{n_d, bits});
    const double target_pe = doc.value("target_pe", 0.05);
    p.sinr_target = doc.contains("sinr_target_db") ? db_to_linear(doc["sinr_target_db"].get<double>())
                                                    : required_sinr(model, target_pe);
    log << "SINR* = " << linear_to_db(p.sinr_target) << " dB\n";

    std::filesystem::create_directories(out_dir);
    const LsfcSamples samples(p.lsfc, p.draws, p.seed);
    const auto sci = sci_plan(p, samples, model);
    std::ofstream summary(std::filesystem::path(out_dir) / "summary.csv");
    summary << std::setprecision(10);
    summary << "method,plan_file,groups,occupied,received_power_db,transmit_power_db,gain_vs_sci_db,pmd\n";
    auto emit = [&](const LevelPlan& plan, const std::string& name) {
        const auto file = std::filesystem::path(out_dir) / (name + ".json");
        std::ofstream os(file);
        write_plan_json(os, plan);
        std::size_t occupied = 0;
        for (double x : plan.occupancy) occupied += x > 0;
        summary << plan.method << ',' << file.filename().string() << ',' << plan.groups() << ',' << occupied << ','
                << linear_to_db(plan.received_power) << ',' << linear_to_db(plan.transmit_power) << ','
                << linear_to_db(sci.transmit_power / plan.transmit_power) << ',' << plan.pmd << '\n';
        log << name << ": " << occupied << " levels, gain " << linear_to_db(sci.transmit_power / plan.transmit_power)
            << " dB over SCI\n";
    };
    emit(sci, "sci");
    json methods = doc.value("methods", json::array({json{{"type", "equal"}, {"groups", {2, 3, 4, 5}}}}));
    for (std::size_t i = 0; i < methods.size(); ++i) {
        const auto& m = methods[i];
        const std::string where = "config.methods[" + std::to_string(i) + "]";
        const auto type = m.value("type", std::string{});
        if (type == "equal") {
            for (int g : m.value("groups", std::vector<int>{2, 3, 4, 5})) {
                if (g < 1) throw ConfigError(where + ".groups: must be positive");
                emit(optimize_equal_groups(static_cast<std::size_t>(g), p, samples, model), "equal_G" + std::to_string(g));
            }
        } else if (type == "linear") {
            const double top = m.value("top_db", 0.0), bottom = m.value("bottom_db", -30.0);
            const std::size_t offsets = m.value("offsets", std::size_t{5});
            for (double sp : m.value("spacing_db", std::vector<double>{2.0, 1.0, 0.5, 0.1})) {
                std::ostringstream name;
                name << "linear_" << sp << "dB";
                emit(optimize_linear_sweep(sp, top, bottom, offsets, p, samples, model), name.str());
            }
        } else {
            throw ConfigError(where + ".type: expected equal or linear");
        }
    }
}

Bits parse_bits(const std::string& s, std::size_t expected) {
    Bits b;
    for (char ch : s) {
        if (ch == '0' || ch == '1') b.push_back(static_cast<std::uint8_t>(ch - '0'));
        else throw ConfigError("--bits: expected a 0/1 string");
    }
    if (b.size() != expected) throw ConfigError("--bits: expected " + std::to_string(expected) + " bits");
    return b;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unsourced random access simulator"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(build_id()));

    Common run_opts, analyze_opts;
    auto* run = app.add_subcommand("run", "simulate (or search) the configured campaign");
    add_common(run, run_opts);
    auto* analyze = app.add_subcommand("analyze", "closed-form predictions for the configured sweep");
    add_common(analyze, analyze_opts);

    std::string opt_config, opt_out = "out/optimize";
    auto* optimize = app.add_subcommand("optimize", "received-power level optimization");
    optimize->add_option("--config", opt_config, "optimizer config (JSON)")->required()->check(CLI::ExistingFile);
    optimize->add_option("--out", opt_out, "output directory");

    auto* codec = app.add_subcommand("codec", "polar codec utilities");
    codec->require_subcommand(1);
    std::size_t block = 1024, payload = 84, list = 32, trials = 1000;
    double design = -7.0, noise_var = 1.0;
    std::uint64_t seed = 1;
    std::vector<double> grid{-9, -8.5, -8, -7.5, -7, -6.5, -6};
    std::string out_file, bits_text, symbols_file;
    auto add_code = [&](CLI::App* a) {
        a->add_option("--block", block, "coded bits (power of two)");
        a->add_option("--payload", payload, "payload bits before CRC");
        a->add_option("--design-db", design, "design SINR (dB)");
        a->add_option("--list", list, "list size");
    };
    auto* curve = codec->add_subcommand("curve", "measure p_e versus SINR");
    add_code(curve);
    curve->add_option("--sinr-db", grid, "SINR grid (dB)");
    curve->add_option("--trials", trials, "trials per point");
    curve->add_option("--seed", seed, "seed");
    curve->add_option("--out", out_file, "CSV output (default stdout)");
    auto* encode = codec->add_subcommand("encode", "encode a payload to QPSK symbols (CSV re,im)");
    add_code(encode);
    encode->add_option("--bits", bits_text, "payload as a 0/1 string")->required();
    auto* decode = codec->add_subcommand("decode", "list-decode QPSK symbols (CSV re,im)");
    add_code(decode);
    decode->add_option("--symbols", symbols_file, "CSV of re,im")->required()->check(CLI::ExistingFile);
    decode->add_option("--noise-var", noise_var, "noise variance per complex symbol");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            const auto cfg = resolve(run_opts);
            if (const auto failed = run_campaign(cfg, run_opts.out, run_opts.threads, std::cout)) {
                std::cerr << "error: " << failed << " trial(s) aborted on detector divergence\n";
                return 3;
            }
        } else if (analyze->parsed()) {
            auto cfg = resolve(analyze_opts);
            cfg.mode = RunMode::Analyze;
            run_campaign(cfg, analyze_opts.out, analyze_opts.threads, std::cout);
        } else if (optimize->parsed()) {
            run_optimize(opt_config, opt_out, std::cout);
        } else if (curve->parsed()) {
            const PolarCodec c({block, payload, design, list});
            const auto pts = measure_error_curve(c, grid, trials, seed);
            if (out_file.empty()) {
                write_error_curve_csv(std::cout, pts);
            } else {
                std::ofstream os(out_file);
                write_error_curve_csv(os, pts);
            }
        } else if (encode->parsed()) {
            const PolarCodec c({block, payload, design, list});
            const auto sym = c.encode(parse_bits(bits_text, payload));
            std::cout << std::setprecision(17);
            for (Eigen::Index i = 0; i < sym.size(); ++i) std::cout << sym(i).real() << ',' << sym(i).imag() << '\n';
        } else if (decode->parsed()) {
            const PolarCodec c({block, payload, design, list});
            std::ifstream in(symbols_file);
            std::vector<cd> v;
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                const auto comma = line.find(',');
                if (comma == std::string::npos) throw ConfigError("--symbols: expected re,im per line");
                v.emplace_back(std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
            }
            if (v.size() != block / 2) throw ConfigError("--symbols: expected " + std::to_string(block / 2) + " symbols");
            const CVector sym = Eigen::Map<const CVector>(v.data(), static_cast<Eigen::Index>(v.size()));
            const auto found = c.decode_list(qpsk_demodulate(sym, noise_var));
            for (const auto& b : found) {
                for (auto x : b) std::cout << static_cast<int>(x);
                std::cout << '\n';
            }
            if (found.empty()) std::cout << "(no CRC-passing candidate)\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const DivergenceError& e) {
        std::cerr << "error: detector diverged: " << e.what() << '\n';
        return 3;
    } catch (const InfeasibleError& e) {
        std::cerr << "error: infeasible: " << e.what() << '\n';
        return 4;
    }
    return 0;
}
