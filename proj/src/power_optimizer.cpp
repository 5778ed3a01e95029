#include "ura/power_optimizer.hpp"

#include <algorithm>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>

#include <json.hpp>

#include "ura/simplex.hpp"

namespace ura {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

LsfcSamples::LsfcSamples(const LsfcModel& model, std::size_t draws, std::uint64_t seed) {
    model.validate();
    if (draws == 0) throw ConfigError("need at least one LSFC draw");
    Rng rng(derive_seed(seed, Stream::Optimizer));
    gain_db_.resize(draws);
    for (auto& g : gain_db_) g = sample_lsfc(model, rng).gain_db;
    std::sort(gain_db_.begin(), gain_db_.end(), std::greater<>());
    prefix_inv_.assign(draws + 1, 0.0L);
    for (std::size_t i = 0; i < draws; ++i)
        prefix_inv_[i + 1] = prefix_inv_[i] + static_cast<long double>(1.0 / db_to_linear(gain_db_[i]));
}

double LsfcSamples::boundary_db(std::size_t count) const {
    if (count == 0) return kInf;
    if (count >= gain_db_.size()) return -kInf;
    return 0.5 * (gain_db_[count - 1] + gain_db_[count]);
}

double LsfcSamples::inverse_gain_mass(std::size_t begin, std::size_t end) const {
    end = std::min(end, gain_db_.size());
    if (begin >= end) return 0.0;
    return static_cast<double>((prefix_inv_[end] - prefix_inv_[begin]) / static_cast<long double>(gain_db_.size()));
}

std::size_t LsfcSamples::count_above(double threshold_db) const {
    // gains sorted descending
    const auto it = std::partition_point(gain_db_.begin(), gain_db_.end(), [&](double g) { return g >= threshold_db; });
    return static_cast<std::size_t>(it - gain_db_.begin());
}

RVector plan_sinr(const std::vector<double>& levels, const std::vector<double>& occupancy, const OptimizerParams& params) {
    const std::size_t g = levels.size();
    std::vector<double> counts(g), mse(g), p(g, params.residual_error);
    for (std::size_t q = 0; q < g; ++q) {
        counts[q] = static_cast<double>(params.active_users) * occupancy[q];
        mse[q] = orthogonal_mse(levels[q], params.pilot_length, params.noise_var);
    }
    return sinr_levels(levels, counts, mse, p, params.antennas, params.noise_var);
}

void evaluate_plan(LevelPlan& plan, const OptimizerParams& params, const LsfcSamples& samples, const ErrorModel& model) {
    const std::size_t g = plan.levels.size();
    if (g == 0 || plan.occupancy.size() != g) throw ConfigError("plan needs one occupancy per level");
    const auto ka = static_cast<double>(params.active_users);
    const auto n = static_cast<double>(samples.size());
    plan.corners_db.assign(1, kInf);
    plan.transmit_power = 0;
    plan.received_power = 0;
    double cum = 0;
    std::size_t begin = 0;
    for (std::size_t q = 0; q < g; ++q) {
        cum += plan.occupancy[q];
        const std::size_t end = q + 1 == g ? samples.size()
                                           : std::min(samples.size(), static_cast<std::size_t>(std::llround(cum * n)));
        plan.corners_db.push_back(q + 1 == g ? -kInf : samples.boundary_db(end));
        plan.transmit_power += plan.levels[q] * ka * samples.inverse_gain_mass(begin, end);
        plan.received_power += ka * plan.occupancy[q] * plan.levels[q];
        begin = end;
    }
    plan.sinr.resize(g);
    const RVector s = plan_sinr(plan.levels, plan.occupancy, params);
    for (std::size_t q = 0; q < g; ++q) plan.sinr[q] = s(static_cast<Eigen::Index>(q));
    std::vector<double> counts(g), mse(g);
    for (std::size_t q = 0; q < g; ++q) {
        counts[q] = ka * plan.occupancy[q];
        mse[q] = orthogonal_mse(plan.levels[q], params.pilot_length, params.noise_var);
    }
    const RVector mf = sinr_levels_mean_field(plan.levels, counts, mse, params.antennas, params.noise_var, model);
    plan.pmd = 0;
    for (std::size_t q = 0; q < g; ++q) plan.pmd += plan.occupancy[q] * model.pe(mf(static_cast<Eigen::Index>(q)));
    plan.sinr_target = params.sinr_target;
}

LevelPlan optimize_equal_groups(std::size_t groups, const OptimizerParams& params, const LsfcSamples& samples,
                                const ErrorModel& model) {
    if (groups == 0) throw ConfigError("need at least one group");
    if (!(params.sinr_target > 0)) throw ConfigError("SINR target must be positive");
    const double target = params.sinr_target;
    const double per_group = static_cast<double>(params.active_users) / static_cast<double>(groups);
    if (static_cast<double>(params.antennas) <= target * (per_group - 1.0))
        throw InfeasibleError("group size too large for the SINR target at any power", static_cast<int>(groups) - 1);
    const std::vector<double> occ(groups, 1.0 / static_cast<double>(groups));
    std::vector<double> pi(groups, 0.0);

    // smallest level meeting the target for group q with the others fixed
    auto solve_level = [&](std::size_t q) {
        auto sinr_at = [&](double db) {
            auto trial = pi;
            trial[q] = db_to_linear(db);
            return plan_sinr(trial, occ, params)(static_cast<Eigen::Index>(q));
        };
        double lo = -150.0, hi = 80.0;
        if (sinr_at(hi) < target)
            throw InfeasibleError("SINR target unreachable in group " + std::to_string(q), static_cast<int>(q));
        for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (sinr_at(mid) < target) lo = mid;
            else hi = mid;
        }
        return db_to_linear(hi);
    };

    const double damping = 0.5;
    bool converged = false;
    for (std::size_t sweep = 0; sweep < 20000; ++sweep) {
        double change = 0;
        for (std::size_t q = groups; q-- > 0;) {
            const double fresh = solve_level(q);
            const double next = sweep == 0 ? fresh : damping * pi[q] + (1.0 - damping) * fresh;
            change = std::max(change, std::abs(next - pi[q]) / std::max(next, 1e-300));
            pi[q] = next;
            if (pi[q] > 1e12) throw InfeasibleError("level iteration diverged in group " + std::to_string(q), static_cast<int>(q));
        }
        if (sweep > 0 && change < 1e-8) {
            converged = true;
            break;
        }
    }
    if (!converged) throw InfeasibleError("level iteration did not converge", -1);
    // a few undamped sweeps land every constraint on the feasible side
    for (int extra = 0; extra < 50; ++extra) {
        const RVector s = plan_sinr(pi, occ, params);
        if (s.minCoeff() >= target * (1.0 - 1e-9)) break;
        for (std::size_t q = groups; q-- > 0;) pi[q] = solve_level(q);
    }
    LevelPlan plan;
    plan.method = "equal_groups";
    plan.levels = pi;
    plan.occupancy = occ;
    evaluate_plan(plan, params, samples, model);
    return plan;
}

namespace {

struct LinearProblem {
    std::vector<double> pi, mse, rhs, cancelled;
    double scale = 0;  // S* K_a

    LinearProblem(const std::vector<double>& grid, const OptimizerParams& params) : pi(grid) {
        scale = params.sinr_target * static_cast<double>(params.active_users);
        const double m = static_cast<double>(params.antennas);
        const double p = params.residual_error;
        for (double v : pi) {
            const double s = orthogonal_mse(v, params.pilot_length, params.noise_var);
            mse.push_back(s);
            rhs.push_back(m * (1.0 - s) * v - params.sinr_target * (params.noise_var + (s - 1.0) * v));
            cancelled.push_back(v * ((1.0 - p) * s + p));
        }
    }

    double coef(std::size_t row, std::size_t col) const { return scale * (col < row ? cancelled[col] : pi[col]); }

    // support is sorted ascending (= descending power)
    LpResult solve(const std::vector<std::size_t>& support) const {
        const std::size_t k = support.size();
        std::vector<double> c(k);
        std::vector<std::vector<double>> a(k, std::vector<double>(k));
        std::vector<double> b(k);
        for (std::size_t r = 0; r < k; ++r) {
            c[r] = pi[support[r]];
            b[r] = rhs[support[r]];
            for (std::size_t j = 0; j < k; ++j) a[r][j] = coef(support[r], support[j]);
        }
        return solve_lp(c, a, b, {std::vector<double>(k, 1.0)}, {1.0});
    }

    // minimal total constraint violation; returns the violation per support entry
    std::vector<double> violation(const std::vector<std::size_t>& support) const {
        const std::size_t k = support.size();
        std::vector<double> c(2 * k, 0.0);
        for (std::size_t j = 0; j < k; ++j) c[k + j] = 1.0;
        std::vector<std::vector<double>> a(k, std::vector<double>(2 * k, 0.0));
        std::vector<double> b(k);
        for (std::size_t r = 0; r < k; ++r) {
            b[r] = rhs[support[r]];
            for (std::size_t j = 0; j < k; ++j) a[r][j] = coef(support[r], support[j]);
            a[r][k + r] = -1.0;
        }
        std::vector<double> eq(2 * k, 0.0);
        for (std::size_t j = 0; j < k; ++j) eq[j] = 1.0;
        const auto res = solve_lp(c, a, b, {eq}, {1.0});
        if (!res.optimal()) throw DivergenceError("elastic LP failed");
        return {res.x.begin() + static_cast<std::ptrdiff_t>(k), res.x.end()};
    }
};

std::vector<std::size_t> positive_support(const std::vector<std::size_t>& support, const std::vector<double>& x) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < support.size(); ++j)
        if (x[j] > 1e-9) out.push_back(support[j]);
    return out;
}

}  // namespace

LevelPlan optimize_linear(const std::vector<double>& grid_in, const OptimizerParams& params, const LsfcSamples& samples,
                          const ErrorModel& model) {
    if (grid_in.size() < 1) throw ConfigError("level grid must not be empty");
    if (!(params.sinr_target > 0)) throw ConfigError("SINR target must be positive");
    std::vector<double> grid = grid_in;
    for (double v : grid)
        if (!(v > 0)) throw ConfigError("grid levels must be positive");
    std::sort(grid.begin(), grid.end(), std::greater<>());
    // merge levels equal up to rounding
    std::vector<double> merged;
    for (double v : grid)
        if (merged.empty() || std::abs(merged.back() - v) > 1e-12 * merged.back()) merged.push_back(v);
    const LinearProblem lp(merged, params);

    std::vector<std::size_t> support;
    for (std::size_t q = 0; q < merged.size(); ++q)
        if (lp.rhs[q] > 0) support.push_back(q);  // otherwise the level fails its own constraint at any occupancy

    LpResult best;
    while (!support.empty()) {
        best = lp.solve(support);
        if (best.optimal()) break;
        const auto t = lp.violation(support);
        const auto worst = static_cast<std::size_t>(std::max_element(t.begin(), t.end()) - t.begin());
        support.erase(support.begin() + static_cast<std::ptrdiff_t>(worst));
    }
    if (support.empty() || !best.optimal()) throw InfeasibleError("no grid level subset meets the SINR target", -1);

    auto shrink = [&](std::vector<std::size_t>& s, LpResult& r) {
        for (;;) {
            auto t = positive_support(s, r.x);
            if (t.size() == s.size()) return;
            s = std::move(t);
            r = lp.solve(s);
            if (!r.optimal()) throw DivergenceError("LP became infeasible after dropping empty levels");
        }
    };
    shrink(support, best);

    // greedy add/remove local search on the support
    for (std::size_t round = 0; round < 1000; ++round) {
        bool improved = false;
        const double tol = 1e-12 * std::max(1.0, std::abs(best.objective));
        for (std::size_t q = 0; q < merged.size() && !improved; ++q) {
            if (!(lp.rhs[q] > 0) || std::binary_search(support.begin(), support.end(), q)) continue;
            auto s = support;
            s.insert(std::upper_bound(s.begin(), s.end(), q), q);
            auto r = lp.solve(s);
            if (r.optimal() && r.objective < best.objective - tol) {
                support = std::move(s);
                best = std::move(r);
                shrink(support, best);
                improved = true;
            }
        }
        for (std::size_t j = 0; j < support.size() && !improved && support.size() > 1; ++j) {
            auto s = support;
            s.erase(s.begin() + static_cast<std::ptrdiff_t>(j));
            auto r = lp.solve(s);
            if (r.optimal() && r.objective < best.objective - tol) {
                support = std::move(s);
                best = std::move(r);
                shrink(support, best);
                improved = true;
            }
        }
        if (!improved) break;
    }

    LevelPlan plan;
    plan.method = "linear";
    double total = 0;
    for (double x : best.x) total += x;
    for (std::size_t j = 0; j < support.size(); ++j) {
        plan.levels.push_back(merged[support[j]]);
        plan.occupancy.push_back(best.x[j] / total);
    }
    evaluate_plan(plan, params, samples, model);
    return plan;
}

LevelPlan optimize_linear_sweep(double spacing_db, double top_db, double bottom_db, std::size_t offsets,
                                const OptimizerParams& params, const LsfcSamples& samples, const ErrorModel& model) {
    if (!(spacing_db > 0) || !(top_db > bottom_db) || offsets == 0) throw ConfigError("invalid level grid sweep");
    LevelPlan best;
    bool found = false;
    for (std::size_t k = 0; k < offsets; ++k) {
        const double start = top_db - spacing_db * static_cast<double>(k) / static_cast<double>(offsets);
        std::vector<double> grid;
        for (double db = start; db >= bottom_db - 1e-9; db -= spacing_db) grid.push_back(db_to_linear(db));
        try {
            auto plan = optimize_linear(grid, params, samples, model);
            if (!found || plan.received_power < best.received_power) {
                best = std::move(plan);
                found = true;
            }
        } catch (const InfeasibleError&) {
        }
    }
    if (!found) throw InfeasibleError("no offset of the level grid is feasible", -1);
    return best;
}

LevelPlan sci_plan(const OptimizerParams& params, const LsfcSamples& samples, const ErrorModel& model) {
    auto plan = optimize_equal_groups(1, params, samples, model);
    plan.method = "sci";
    return plan;
}

namespace {

nlohmann::json db_or_inf(double db) {
    if (std::isinf(db)) return db > 0 ? "+inf" : "-inf";
    return db;
}

double parse_db(const nlohmann::json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "+inf" || s == "inf") return kInf;
        if (s == "-inf") return -kInf;
        throw ConfigError("invalid dB value '" + s + "'");
    }
    return j.get<double>();
}

}  // namespace

void write_plan_json(std::ostream& os, const LevelPlan& plan) {
    nlohmann::json j;
    j["method"] = plan.method;
    std::vector<double> lv, sv;
    for (double v : plan.levels) lv.push_back(linear_to_db(v));
    for (double v : plan.sinr) sv.push_back(linear_to_db(v));
    j["levels_db"] = lv;
    nlohmann::json corners = nlohmann::json::array();
    for (double c : plan.corners_db) corners.push_back(db_or_inf(c));
    j["corners_db"] = corners;
    j["occupancy"] = plan.occupancy;
    j["sinr_db"] = sv;
    j["sinr_target_db"] = plan.sinr_target > 0 ? linear_to_db(plan.sinr_target) : 0.0;
    j["transmit_power"] = plan.transmit_power;
    j["received_power"] = plan.received_power;
    j["pmd"] = plan.pmd;
    os << j.dump(2) << '\n';
}

LevelPlan read_plan_json(std::istream& is) {
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("plan file: ") + e.what());
    }
    LevelPlan p;
    try {
        p.method = j.value("method", std::string("file"));
        for (const auto& v : j.at("levels_db")) p.levels.push_back(db_to_linear(v.get<double>()));
        for (const auto& v : j.at("corners_db")) p.corners_db.push_back(parse_db(v));
        p.occupancy = j.value("occupancy", std::vector<double>{});
        for (const auto& v : j.value("sinr_db", std::vector<double>{})) p.sinr.push_back(db_to_linear(v));
        if (j.contains("sinr_target_db")) p.sinr_target = db_to_linear(j["sinr_target_db"].get<double>());
        p.transmit_power = j.value("transmit_power", 0.0);
        p.received_power = j.value("received_power", 0.0);
        p.pmd = j.value("pmd", 0.0);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("plan file: ") + e.what());
    }
    validate(PowerPolicy{plan_policy(p)});
    return p;
}

PartialInversion plan_policy(const LevelPlan& plan) { return PartialInversion{plan.corners_db, plan.levels}; }

}  // namespace ura
