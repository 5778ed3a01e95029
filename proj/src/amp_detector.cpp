#include "ura/amp_detector.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <set>

namespace ura {

namespace {

inline double logistic(double v) {
    if (v >= 0) {
        const double e = std::exp(-v);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(v);
    return e / (1.0 + e);
}

void check_row(const CVector& r, const RVector& tau2) {
    if (r.size() != tau2.size() || r.size() == 0) throw ConfigError("denoiser: row and noise level sizes differ");
}

// Activity posterior and its derivatives for the known-g conditional model.
struct ActivityTerms {
    double phi;
    double log_odds;
    double dphi_dg;
};

ActivityTerms activity_terms(const RVector& s, const RVector& tau2, double g, double lambda, RVector* dphi_ds) {
    double llr = 0;    // log p(r | inactive) / p(r | active, g)
    double dl_dg = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        const double t = tau2(i);
        llr += std::log1p(g / t) - g * s(i) / (t * (g + t));
        dl_dg += 1.0 / (g + t) - s(i) / ((g + t) * (g + t));
    }
    const double u = llr + std::log((1.0 - lambda) / lambda);
    const double phi = logistic(-u);
    const double w = -phi * (1.0 - phi);  // d phi / d u
    if (dphi_ds) {
        dphi_ds->resize(s.size());
        for (Eigen::Index i = 0; i < s.size(); ++i) (*dphi_ds)(i) = w * (-g / (tau2(i) * (g + tau2(i))));
    }
    return {phi, -u, w * dl_dg};
}

}  // namespace

RowEstimate denoise_row_conditional(const CVector& r, const RVector& tau2, double g, double lambda, bool force_active) {
    check_row(r, tau2);
    const RVector s = r.cwiseAbs2();
    RVector dphi_ds;
    const auto act = activity_terms(s, tau2, g, lambda, &dphi_ds);
    const double phi = force_active ? 1.0 : act.phi;
    RowEstimate out;
    out.gamma = g;
    out.raw_gamma = g;
    out.log_odds = act.log_odds;
    out.x.resize(r.size());
    out.jacobian.resize(r.size());
    for (Eigen::Index m = 0; m < r.size(); ++m) {
        const double c = g / (g + tau2(m));
        out.x(m) = phi * c * r(m);
        const double dfds = force_active ? 0.0 : c * dphi_ds(m);
        out.jacobian(m) = phi * c + s(m) * dfds;
    }
    return out;
}

RowEstimate denoise_row_ml(const CVector& r, const RVector& tau2, double g_min, double lambda) {
    check_row(r, tau2);
    const auto m_count = static_cast<double>(r.size());
    const RVector s = r.cwiseAbs2();
    const double raw = std::max(0.0, s.sum() / m_count - tau2.mean());
    const bool clamped = !(raw > g_min);
    const double g = clamped ? g_min : raw;
    const double dg_ds = clamped ? 0.0 : 1.0 / m_count;

    RVector dphi_ds;
    const auto act = activity_terms(s, tau2, g, lambda, &dphi_ds);
    RowEstimate out;
    out.gamma = g;
    out.raw_gamma = raw;
    out.log_odds = act.log_odds;
    out.x.resize(r.size());
    out.jacobian.resize(r.size());
    for (Eigen::Index m = 0; m < r.size(); ++m) {
        const double t = tau2(m);
        const double c = g > 0 ? g / (g + t) : 0.0;
        out.x(m) = act.phi * c * r(m);
        // F_m = phi(s, g(s)) c_m(g(s)); diagonal derivative is F_m + s_m dF_m/ds_m
        double dfds = c * dphi_ds(m);
        if (dg_ds != 0) {
            const double dc_dg = (t / (g + t)) / (g + t);
            dfds += (c * act.dphi_dg + act.phi * dc_dg) * dg_ds;
        }
        out.jacobian(m) = act.phi * c + s(m) * dfds;
    }
    return out;
}

RowEstimate denoise_row_discrete(const CVector& r, const RVector& tau2, std::span<const double> levels,
                                 std::span<const double> priors, double lambda) {
    check_row(r, tau2);
    if (levels.size() != priors.size() || levels.empty()) throw ConfigError("denoiser: levels and priors differ in size");
    const std::size_t g = levels.size();
    const RVector s = r.cwiseAbs2();
    const auto m_count = r.size();

    // log-likelihood of each hypothesis, index 0 = inactive (power 0)
    std::vector<double> ll(g + 1);
    auto power = [&](std::size_t q) { return q == 0 ? 0.0 : levels[q - 1]; };
    for (std::size_t q = 0; q <= g; ++q) {
        const double p = power(q);
        double v = std::log(q == 0 ? 1.0 - lambda : lambda * priors[q - 1]);
        for (Eigen::Index i = 0; i < m_count; ++i) {
            const double var = p + tau2(i);
            v -= std::log(var) + s(i) / var;
        }
        ll[q] = v;
    }
    const double mx = *std::max_element(ll.begin(), ll.end());
    std::vector<double> w(g + 1);
    double total = 0;
    for (std::size_t q = 0; q <= g; ++q) total += (w[q] = std::exp(ll[q] - mx));
    for (auto& v : w) v /= total;

    RowEstimate out;
    out.posteriors = w;
    // log-sum-exp over active hypotheses minus the inactive one
    double act = 0;
    for (std::size_t q = 1; q <= g; ++q) act += std::exp(ll[q] - mx);
    out.log_odds = std::log(act) + mx - ll[0];
    const auto map = static_cast<std::size_t>(std::max_element(w.begin() + 1, w.end()) - w.begin());
    out.gamma = power(map);
    out.raw_gamma = out.gamma;

    out.x.resize(m_count);
    out.jacobian.resize(m_count);
    for (Eigen::Index m = 0; m < m_count; ++m) {
        const double t = tau2(m);
        double f = 0, mean_dl = 0;
        for (std::size_t q = 0; q <= g; ++q) {
            f += w[q] * power(q) / (power(q) + t);
            mean_dl += w[q] * (-1.0 / (power(q) + t));
        }
        double dfds = 0;
        for (std::size_t q = 1; q <= g; ++q) {
            const double dw = w[q] * (-1.0 / (power(q) + t) - mean_dl);
            dfds += power(q) / (power(q) + t) * dw;
        }
        out.x(m) = f * r(m);
        out.jacobian(m) = f + s(m) * dfds;
    }
    return out;
}

const char* to_string(TauDivisor d) { return d == TauDivisor::Pilots ? "n_p" : "N"; }

TauDivisor tau_divisor_from_string(const std::string& s) {
    if (s == "n_p" || s == "pilots") return TauDivisor::Pilots;
    if (s == "N" || s == "columns") return TauDivisor::Columns;
    throw ConfigError("unknown tau divisor '" + s + "' (expected n_p or N)");
}

void DenoiserSpec::validate() const {
    if (!(activity > 0 && activity < 1)) throw ConfigError("detector.activity must lie in (0, 1)");
    if (auto* p = std::get_if<DiscretePmeDenoiser>(&kind)) {
        if (p->levels.empty() || p->levels.size() != p->priors.size())
            throw ConfigError("detector.levels and detector.priors must be non-empty and equally long");
        double sum = 0;
        for (std::size_t i = 0; i < p->levels.size(); ++i) {
            if (!(p->levels[i] > 0)) throw ConfigError("detector.levels must be positive");
            if (!(p->priors[i] >= 0)) throw ConfigError("detector.priors must be nonnegative");
            sum += p->priors[i];
        }
        if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("detector.priors must sum to one");
    } else {
        const auto& ml = std::get<MlLsfcDenoiser>(kind);
        if (!(ml.value >= 0)) throw ConfigError("detector.g_min must be nonnegative");
    }
}

AmpState amp_init(const CMatrix& pilot_rx, std::size_t columns) {
    AmpState st;
    const auto n = static_cast<Eigen::Index>(columns);
    st.x = CMatrix::Zero(n, pilot_rx.cols());
    st.z = pilot_rx;
    st.r = CMatrix::Zero(n, pilot_rx.cols());
    st.tau2 = RVector::Zero(pilot_rx.cols());
    st.gamma = RVector::Zero(n);
    st.score = RVector::Zero(n);
    return st;
}

void amp_iterate(AmpState& st, const PilotMatrix& pilots, const CMatrix& pilot_rx, const DenoiserSpec& denoiser,
                 const AmpOptions& options) {
    const auto np = static_cast<double>(pilots.rows());
    const auto n = static_cast<double>(pilots.columns());
    const Eigen::Index rows = st.x.rows();
    const Eigen::Index ants = st.x.cols();
    if (st.z.rows() != static_cast<Eigen::Index>(pilots.rows()) || rows != static_cast<Eigen::Index>(pilots.columns()) ||
        pilot_rx.rows() != st.z.rows() || pilot_rx.cols() != ants)
        throw ConfigError("AMP state dimensions do not match the pilot matrix");
    const double scale = 1.0 / std::sqrt(np);
    const double divisor = options.divisor == TauDivisor::Pilots ? np : n;

    for (Eigen::Index m = 0; m < ants; ++m) st.tau2(m) = st.z.col(m).squaredNorm() / divisor;
    if (!st.tau2.allFinite()) throw DivergenceError("AMP noise level became non-finite");
    // a zero noise level would make every shrinker singular
    const double floor = 1e-100;
    for (Eigen::Index m = 0; m < ants; ++m) st.tau2(m) = std::max(st.tau2(m), floor);
    const double mean_tau = st.tau2.mean();

    st.r = scale * pilots.apply_adjoint(st.z) + st.x;

    RVector jac_sum = RVector::Zero(ants);
    const auto* pme = std::get_if<DiscretePmeDenoiser>(&denoiser.kind);
    std::vector<double> levels;
    double g_min = 0;
    if (pme) {
        levels.resize(pme->levels.size());
        for (std::size_t q = 0; q < levels.size(); ++q) levels[q] = pme->levels[q] * np;
    } else {
        const auto& ml = std::get<MlLsfcDenoiser>(denoiser.kind);
        g_min = ml.rule == MlLsfcDenoiser::GminRule::Absolute ? ml.value * np : ml.value * mean_tau;
    }
    CVector row(ants);
    for (Eigen::Index k = 0; k < rows; ++k) {
        row = st.r.row(k).transpose();
        const RowEstimate est = pme ? denoise_row_discrete(row, st.tau2, levels, pme->priors, denoiser.activity)
                                    : denoise_row_ml(row, st.tau2, g_min, denoiser.activity);
        st.x.row(k) = est.x.transpose();
        jac_sum += est.jacobian;  // fixed row order keeps the reduction deterministic
        st.gamma(k) = est.gamma / np;
        st.score(k) = pme ? est.log_odds : est.raw_gamma;
    }
    const RVector onsager = jac_sum / n * (n / np);
    CMatrix z_next = pilot_rx - scale * pilots.apply(st.x);
    for (Eigen::Index m = 0; m < ants; ++m) z_next.col(m) += onsager(m) * st.z.col(m);
    if (!z_next.allFinite() || !st.x.allFinite()) throw DivergenceError("AMP iterate became non-finite");
    st.z = std::move(z_next);
    st.discrete = pme != nullptr;
    ++st.iteration;
}

double ml_threshold(std::size_t antennas, double tau2, double g) {
    const auto m = static_cast<double>(antennas);
    if (!(g > 0)) return m * tau2;
    const double x = g / tau2;
    return m * tau2 * (1.0 + x) / x * std::log1p(x);
}

DetectionResult select_active(const AmpState& st, const SelectionRule& rule, std::size_t pilot_rows) {
    const auto rows = static_cast<std::size_t>(st.x.rows());
    DetectionResult out;
    out.iterations = st.iteration;
    std::vector<std::size_t> chosen;
    if (const auto* top = std::get_if<TopK>(&rule)) {
        const std::size_t k = top->active_users + top->extra;
        if (k > rows) throw ConfigError("K_a + Delta exceeds the number of pilots");
        chosen.resize(rows);
        std::iota(chosen.begin(), chosen.end(), std::size_t{0});
        std::stable_sort(chosen.begin(), chosen.end(),
                         [&](std::size_t a, std::size_t b) { return st.score(static_cast<Eigen::Index>(a)) > st.score(static_cast<Eigen::Index>(b)); });
        chosen.resize(k);
    } else {
        out.threshold_rule = true;
        const double tau = st.tau2.mean();
        const auto np = static_cast<double>(pilot_rows);
        for (std::size_t k = 0; k < rows; ++k) {
            const auto kk = static_cast<Eigen::Index>(k);
            const bool on = st.discrete
                                ? st.score(kk) > 0
                                : st.r.row(kk).squaredNorm() > ml_threshold(static_cast<std::size_t>(st.x.cols()), tau, st.gamma(kk) * np);
            if (on) chosen.push_back(k);
        }
        std::stable_sort(chosen.begin(), chosen.end(),
                         [&](std::size_t a, std::size_t b) { return st.score(static_cast<Eigen::Index>(a)) > st.score(static_cast<Eigen::Index>(b)); });
    }
    for (auto k : chosen) {
        out.active.push_back(k);
        out.gamma.push_back(st.gamma(static_cast<Eigen::Index>(k)));
        out.score.push_back(st.score(static_cast<Eigen::Index>(k)));
    }
    return out;
}

DetectionResult detect(const PilotMatrix& pilots, const CMatrix& pilot_rx, const DenoiserSpec& denoiser,
                       const AmpOptions& options, const SelectionRule& rule) {
    denoiser.validate();
    if (options.max_iterations == 0) throw ConfigError("detector.iterations must be positive");
    AmpState st = amp_init(pilot_rx, pilots.columns());
    std::vector<AmpTraceRow> trace;
    double last_tau = std::numeric_limits<double>::infinity();
    std::size_t growth = 0;
    for (std::size_t t = 0; t < options.max_iterations; ++t) {
        const CMatrix x_prev = st.x;
        amp_iterate(st, pilots, pilot_rx, denoiser, options);
        const double tau = st.tau2.mean();
        if (tau > last_tau * (1.0 + options.divergence_growth)) {
            if (++growth >= options.divergence_patience)
                throw DivergenceError("AMP noise level grew for " + std::to_string(growth) + " consecutive iterations");
        } else {
            growth = 0;
        }
        last_tau = tau;
        if (options.trace) {
            const auto sel = select_active(st, ThresholdRule{}, pilots.rows());
            trace.push_back({st.iteration, tau, st.z.norm(), sel.active.size()});
        }
        const double nx = st.x.norm();
        if (nx > 0 && (st.x - x_prev).norm() / nx < options.tolerance) break;
    }
    auto out = select_active(st, rule, pilots.rows());
    out.trace = std::move(trace);
    return out;
}

DetectionCounts count_detection(const DetectionResult& result, const UserPopulation& population) {
    std::set<std::size_t> truth;
    for (const auto& u : population.users) truth.insert(u.pilot);
    const std::set<std::size_t> found(result.active.begin(), result.active.end());
    DetectionCounts c;
    c.active_columns = truth.size();
    for (auto i : truth)
        if (!found.count(i)) ++c.missed_columns;
    for (auto i : found)
        if (!truth.count(i)) ++c.false_alarm_columns;
    return c;
}

void write_trace_csv(std::ostream& os, const std::vector<AmpTraceRow>& trace) {
    os << "iteration,mean_tau2,residual_norm,threshold_count\n";
    for (const auto& t : trace) os << t.iteration << ',' << t.mean_tau2 << ',' << t.residual_norm << ',' << t.threshold_count << '\n';
}

}  // namespace ura
