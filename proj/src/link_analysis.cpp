#include "ura/link_analysis.hpp"

#include <algorithm>
#include <numbers>
#include <numeric>
#include <ostream>

namespace ura {

double q_function(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

double awgn_dispersion(double sinr) {
    const double l2e = std::numbers::log2e;
    return sinr / 2.0 * (sinr + 2.0) / ((sinr + 1.0) * (sinr + 1.0)) * l2e * l2e;
}

double normal_approx_pe(double sinr, std::size_t data_symbols, double info_bits) {
    const double n = 2.0 * static_cast<double>(data_symbols);
    const double rate = info_bits / n;
    const double cap = 0.5 * std::log2(1.0 + sinr);
    const double v = awgn_dispersion(sinr);
    if (!(v > 0)) return cap >= rate ? 0.0 : 1.0;
    return q_function((cap - rate) / std::sqrt(v / n));
}

ErrorModel::ErrorModel(NormalApprox na) : model_(na) {
    if (na.data_symbols == 0 || !(na.info_bits > 0)) throw ConfigError("normal approximation needs n_d > 0 and a positive rate");
}

ErrorModel::ErrorModel(EmpiricalCurve curve) {
    if (curve.sinr_db.size() < 2 || curve.sinr_db.size() != curve.pe.size())
        throw ConfigError("empirical error curve needs at least two points");
    for (std::size_t i = 1; i < curve.sinr_db.size(); ++i)
        if (!(curve.sinr_db[i] > curve.sinr_db[i - 1])) throw ConfigError("empirical error curve must be sorted by SINR");
    // enforce a non-increasing table
    for (std::size_t i = 1; i < curve.pe.size(); ++i) curve.pe[i] = std::min(curve.pe[i], curve.pe[i - 1]);
    model_ = std::move(curve);
}

ErrorModel ErrorModel::from_curve(const std::vector<ErrorPoint>& points) {
    EmpiricalCurve c;
    for (const auto& p : points) {
        c.sinr_db.push_back(p.sinr_db);
        c.pe.push_back(p.pe());
    }
    return ErrorModel(std::move(c));
}

double ErrorModel::pe(double sinr) const {
    if (const auto* na = std::get_if<NormalApprox>(&model_)) return normal_approx_pe(sinr, na->data_symbols, na->info_bits);
    const auto& c = std::get<EmpiricalCurve>(model_);
    if (!(sinr > 0)) return c.pe.front();
    const double x = linear_to_db(sinr);
    if (x <= c.sinr_db.front()) return c.pe.front();
    if (x >= c.sinr_db.back()) return c.pe.back();
    const auto it = std::upper_bound(c.sinr_db.begin(), c.sinr_db.end(), x);
    const auto i = static_cast<std::size_t>(it - c.sinr_db.begin());
    const double t = (x - c.sinr_db[i - 1]) / (c.sinr_db[i] - c.sinr_db[i - 1]);
    const double p0 = c.pe[i - 1], p1 = c.pe[i];
    if (p0 > 0 && p1 > 0) return std::pow(10.0, (1 - t) * std::log10(p0) + t * std::log10(p1));
    return (1 - t) * p0 + t * p1;
}

bool ErrorModel::extrapolated(double sinr) const {
    const auto* c = std::get_if<EmpiricalCurve>(&model_);
    if (!c) return false;
    const double x = sinr > 0 ? linear_to_db(sinr) : -std::numeric_limits<double>::infinity();
    return x < c->sinr_db.front() || x > c->sinr_db.back();
}

double required_sinr(const ErrorModel& model, double target_pe, double lo_db, double hi_db) {
    if (!(target_pe > 0 && target_pe <= 1)) throw ConfigError("target error probability must lie in (0, 1]");
    if (model.pe(db_to_linear(lo_db)) <= target_pe) return db_to_linear(lo_db);
    if (model.pe(db_to_linear(hi_db)) > target_pe)
        throw InfeasibleError("target error probability not reachable within the SINR range", -1);
    double lo = lo_db, hi = hi_db;
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (model.pe(db_to_linear(mid)) > target_pe) lo = mid;
        else hi = mid;
    }
    return db_to_linear(hi);
}

double fading_averaged_pe(const ErrorModel& model, double sinr, std::size_t antennas) {
    if (antennas == 0) throw ConfigError("fading average needs at least one antenna");
    const double m = static_cast<double>(antennas);
    const double sd = 1.0 / std::sqrt(m);
    const double lo = std::max(1e-9, 1.0 - 9.0 * sd), hi = 1.0 + 12.0 * sd;
    // Simpson's rule on the Gamma(M, 1/M) density
    const int n = 1200;
    const double h = (hi - lo) / n;
    const double log_norm = m * std::log(m) - std::lgamma(m);
    double acc = 0, mass = 0;
    for (int i = 0; i <= n; ++i) {
        const double x = lo + h * i;
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        const double dens = std::exp(log_norm + (m - 1.0) * std::log(x) - m * x);
        acc += w * dens * model.pe(sinr * x);
        mass += w * dens;
    }
    return acc / mass;
}

double orthogonal_mse(double received_power, std::size_t pilot_length, double noise_var) {
    return noise_var / (noise_var + static_cast<double>(pilot_length) * received_power);
}

RVector sinr_staged(const RVector& power, const RVector& mse, const std::vector<std::size_t>& stage, const RVector& eps,
                    std::size_t antennas, double noise_var) {
    const Eigen::Index k = power.size();
    if (mse.size() != k || eps.size() != k || static_cast<Eigen::Index>(stage.size()) != k)
        throw ConfigError("SINR: inconsistent input lengths");
    const auto m = static_cast<double>(antennas);
    // per-stage sums of residual (cancelled) and full interference, then prefix sums over stages
    std::size_t stages = 0;
    for (auto st : stage) stages = std::max(stages, st + 1);
    std::vector<double> resid(stages + 1, 0.0), full(stages + 1, 0.0);
    for (Eigen::Index j = 0; j < k; ++j) {
        const auto st = stage[static_cast<std::size_t>(j)];
        resid[st] += ((1.0 - eps(j)) * mse(j) + eps(j)) * power(j);
        full[st] += power(j);
    }
    std::vector<double> before(stages + 1, 0.0), after(stages + 1, 0.0);
    for (std::size_t st = 1; st <= stages; ++st) before[st] = before[st - 1] + resid[st - 1];
    for (std::size_t st = stages; st-- > 0;) after[st] = after[st + 1] + full[st];
    RVector out(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        const auto st = stage[static_cast<std::size_t>(i)];
        const double denom = noise_var + mse(i) * power(i) + before[st] + (after[st] - power(i));
        out(i) = m * (1.0 - mse(i)) * power(i) / denom;
    }
    return out;
}

RVector sinr_no_sic(const RVector& power, const RVector& mse, std::size_t antennas, double noise_var) {
    const std::vector<std::size_t> stage(static_cast<std::size_t>(power.size()), 0);
    return sinr_staged(power, mse, stage, RVector::Zero(power.size()), antennas, noise_var);
}

namespace {

std::vector<std::vector<Eigen::Index>> stage_members(const std::vector<std::size_t>& stage) {
    std::size_t n = 0;
    for (auto s : stage) n = std::max(n, s + 1);
    std::vector<std::vector<Eigen::Index>> out(n);
    for (std::size_t k = 0; k < stage.size(); ++k) out[stage[k]].push_back(static_cast<Eigen::Index>(k));
    return out;
}

// Evaluates all users of one stage given the indicators of earlier stages.
template <class Fill>
RVector staged_sweep(const RVector& power, const RVector& mse, const std::vector<std::size_t>& stage, std::size_t antennas,
                     double noise_var, Fill fill) {
    const Eigen::Index k = power.size();
    RVector eps = RVector::Zero(k);
    RVector sinr = RVector::Zero(k);
    for (const auto& members : stage_members(stage)) {
        if (members.empty()) continue;
        const RVector s = sinr_staged(power, mse, stage, eps, antennas, noise_var);
        for (auto i : members) {
            sinr(i) = s(i);
            eps(i) = fill(s(i));
        }
    }
    return sinr;
}

}  // namespace

SicSample sinr_sic_sample(const RVector& power, const RVector& mse, const std::vector<std::size_t>& stage,
                          std::size_t antennas, double noise_var, const ErrorModel& model, Rng& rng) {
    SicSample out;
    out.eps = RVector::Zero(power.size());
    const Eigen::Index k = power.size();
    if (static_cast<Eigen::Index>(stage.size()) != k) throw ConfigError("SINR: inconsistent input lengths");
    out.sinr = RVector::Zero(k);
    for (const auto& members : stage_members(stage)) {
        if (members.empty()) continue;
        const RVector s = sinr_staged(power, mse, stage, out.eps, antennas, noise_var);
        for (auto i : members) {
            out.sinr(i) = s(i);
            out.eps(i) = rng.bernoulli(model.pe(s(i))) ? 1.0 : 0.0;
        }
    }
    return out;
}

SicSample sinr_full_sic(const RVector& power, const RVector& mse, std::size_t antennas, double noise_var,
                        const ErrorModel& model, Rng& rng) {
    const auto k = static_cast<std::size_t>(power.size());
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return power(static_cast<Eigen::Index>(a)) > power(static_cast<Eigen::Index>(b));
    });
    std::vector<std::size_t> stage(k);
    for (std::size_t r = 0; r < k; ++r) stage[order[r]] = r;
    return sinr_sic_sample(power, mse, stage, antennas, noise_var, model, rng);
}

RVector sinr_staged_mean_field(const RVector& power, const RVector& mse, const std::vector<std::size_t>& stage,
                               std::size_t antennas, double noise_var, const ErrorModel& model) {
    if (static_cast<Eigen::Index>(stage.size()) != power.size()) throw ConfigError("SINR: inconsistent input lengths");
    return staged_sweep(power, mse, stage, antennas, noise_var, [&](double s) { return model.pe(s); });
}

RVector sinr_levels(const std::vector<double>& levels, const std::vector<double>& counts, const std::vector<double>& mse,
                    const std::vector<double>& error_fraction, std::size_t antennas, double noise_var) {
    const std::size_t g = levels.size();
    if (counts.size() != g || mse.size() != g || error_fraction.size() != g) throw ConfigError("SINR: inconsistent level inputs");
    const auto m = static_cast<double>(antennas);
    RVector out(static_cast<Eigen::Index>(g));
    for (std::size_t q = 0; q < g; ++q) {
        double denom = noise_var + mse[q] * levels[q] - levels[q];
        for (std::size_t i = 0; i < q; ++i)
            denom += counts[i] * levels[i] * ((1.0 - error_fraction[i]) * mse[i] + error_fraction[i]);
        for (std::size_t j = q; j < g; ++j) denom += counts[j] * levels[j];
        out(static_cast<Eigen::Index>(q)) = m * (1.0 - mse[q]) * levels[q] / denom;
    }
    return out;
}

RVector sinr_levels_mean_field(const std::vector<double>& levels, const std::vector<double>& counts,
                               const std::vector<double>& mse, std::size_t antennas, double noise_var,
                               const ErrorModel& model) {
    const std::size_t g = levels.size();
    std::vector<double> p(g, 0.0);
    RVector out(static_cast<Eigen::Index>(g));
    for (std::size_t q = 0; q < g; ++q) {
        const RVector s = sinr_levels(levels, counts, mse, p, antennas, noise_var);
        out(static_cast<Eigen::Index>(q)) = s(static_cast<Eigen::Index>(q));
        p[q] = model.pe(s(static_cast<Eigen::Index>(q)));
    }
    return out;
}

OutageResult outage_quantile(const std::function<RVector(std::size_t)>& sampler, double delta, std::size_t n_samples,
                             const ErrorModel& model) {
    if (!(delta > 0 && delta < 1)) throw ConfigError("outage level must lie in (0, 1)");
    if (static_cast<double>(n_samples) < 10.0 / delta)
        throw ConfigError("outage quantile needs at least 10/delta samples");
    std::vector<RVector> draws;
    draws.reserve(n_samples);
    for (std::size_t s = 0; s < n_samples; ++s) draws.push_back(sampler(s));
    const Eigen::Index k = draws.front().size();
    const auto idx = static_cast<std::size_t>(std::max(1.0, std::floor(static_cast<double>(n_samples) * delta))) - 1;
    OutageResult out;
    out.quantile.resize(k);
    std::vector<double> col(n_samples);
    double sum = 0;
    for (Eigen::Index i = 0; i < k; ++i) {
        for (std::size_t s = 0; s < n_samples; ++s) {
            if (draws[s].size() != k) throw ConfigError("sampler returned profiles of varying length");
            col[s] = draws[s](i);
        }
        std::nth_element(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(idx), col.end());
        out.quantile(i) = col[idx];
        sum += (1.0 - delta) * model.pe(col[idx]) + delta;
    }
    out.pmd_bound = k ? sum / static_cast<double>(k) : delta;
    return out;
}

void write_profile_csv(std::ostream& os, const SinrProfile& p) {
    os << "user,sinr_db,outage_sinr_db,pe\n";
    for (Eigen::Index i = 0; i < p.sinr.size(); ++i) {
        os << i << ',' << linear_to_db(p.sinr(i)) << ',';
        if (i < p.outage.size()) os << linear_to_db(p.outage(i));
        os << ',';
        if (i < p.pe.size()) os << p.pe(i);
        os << '\n';
    }
}

std::vector<std::size_t> group_counts(const std::vector<double>& gains_db, const std::vector<double>& corners_db) {
    if (corners_db.size() < 2) throw ConfigError("need at least two corner points");
    std::vector<std::size_t> n(corners_db.size() - 1, 0);
    for (double g : gains_db)
        for (std::size_t q = 0; q + 1 < corners_db.size(); ++q)
            if (corners_db[q] > g && g >= corners_db[q + 1]) {
                ++n[q];
                break;
            }
    return n;
}

}  // namespace ura
