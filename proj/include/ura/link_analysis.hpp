#pragma once

#include <functional>
#include <iosfwd>
#include <variant>
#include <vector>

#include "ura/common.hpp"
#include "ura/polar_codec.hpp"
#include "ura/rng.hpp"

namespace ura {

double q_function(double x);

/// Channel dispersion of the real AWGN channel in bits^2: (S/2)(S+2)/(S+1)^2 log2(e)^2.
double awgn_dispersion(double sinr);

/// Normal approximation of the block error on 2 n_d real channel uses carrying `info_bits` bits.
double normal_approx_pe(double sinr, std::size_t data_symbols, double info_bits);

struct NormalApprox {
    std::size_t data_symbols = 0;  // n_d
    double info_bits = 0;          // rate R = info_bits / (2 n_d) bits per real dimension
};

/// Measured p_e(SINR), interpolated linearly in (dB, log10 p_e).
struct EmpiricalCurve {
    std::vector<double> sinr_db;  // increasing
    std::vector<double> pe;
};

class ErrorModel {
public:
    ErrorModel() = default;
    explicit ErrorModel(NormalApprox na);
    explicit ErrorModel(EmpiricalCurve curve);
    static ErrorModel from_curve(const std::vector<ErrorPoint>& points);

    double pe(double sinr) const;
    /// True if sinr lies outside the tabulated range (empirical curves only).
    bool extrapolated(double sinr) const;
    bool empirical() const { return std::holds_alternative<EmpiricalCurve>(model_); }
    const std::variant<NormalApprox, EmpiricalCurve>& model() const { return model_; }

private:
    std::variant<NormalApprox, EmpiricalCurve> model_;
};

/// Smallest SINR (linear) with p_e(SINR) <= target, by bisection in dB over [lo_db, hi_db].
double required_sinr(const ErrorModel& model, double target_pe, double lo_db = -40.0, double hi_db = 40.0);

/// E[p_e(sinr X)] with X ~ Gamma(M, 1/M): the desired user's channel energy |h|^2 / M
/// fluctuating around its mean over a quasi-static codeword.
double fading_averaged_pe(const ErrorModel& model, double sinr, std::size_t antennas);

/// sigma^2 = N0 / (N0 + n_p g P), the error variance for orthogonal pilots.
double orthogonal_mse(double received_power, std::size_t pilot_length, double noise_var);

/// Post-MRC SINR when user k is decoded in stage[k] and earlier stages have been cancelled
/// with decoding-error indicators eps (fractional values give the mean-field version):
///   M (1 - s_k) p_k / (N0 + s_k p_k + sum_{stage j < stage k} [(1-e_j) s_j + e_j] p_j
///                     + sum_{j != k, stage j >= stage k} p_j)
RVector sinr_staged(const RVector& power, const RVector& mse, const std::vector<std::size_t>& stage,
                    const RVector& eps, std::size_t antennas, double noise_var);

/// No SIC: M (1 - s_k) p_k / (N0 + s_k p_k + sum_{j != k} p_j).
RVector sinr_no_sic(const RVector& power, const RVector& mse, std::size_t antennas, double noise_var);

struct SicSample {
    RVector sinr;
    RVector eps;
};

/// Sequential SIC with eps_i ~ Bernoulli(p_e(SINR_i)) drawn stage by stage; stage[k] gives the order.
SicSample sinr_sic_sample(const RVector& power, const RVector& mse, const std::vector<std::size_t>& stage,
                          std::size_t antennas, double noise_var, const ErrorModel& model, Rng& rng);

/// Full SIC in decreasing power order.
SicSample sinr_full_sic(const RVector& power, const RVector& mse, std::size_t antennas, double noise_var,
                        const ErrorModel& model, Rng& rng);

/// Mean-field version: eps_i replaced by p_e(SINR_i) computed stage by stage.
RVector sinr_staged_mean_field(const RVector& power, const RVector& mse, const std::vector<std::size_t>& stage,
                               std::size_t antennas, double noise_var, const ErrorModel& model);

/// Per-level SINR for G received-power levels with n_q users each (level order = decoding order):
///   M (1 - s_q) pi_q / (N0 + s_q pi_q - pi_q + sum_{i<q} n_i pi_i [(1-p_i) s_i + p_i] + sum_{j>=q} n_j pi_j)
/// where p_i is the residual error fraction of level i.
RVector sinr_levels(const std::vector<double>& levels, const std::vector<double>& counts, const std::vector<double>& mse,
                    const std::vector<double>& error_fraction, std::size_t antennas, double noise_var);

/// Levels with p_i = p_e(SINR_i) computed by forward recursion.
RVector sinr_levels_mean_field(const std::vector<double>& levels, const std::vector<double>& counts,
                               const std::vector<double>& mse, std::size_t antennas, double noise_var,
                               const ErrorModel& model);

struct OutageResult {
    RVector quantile;   // per-user delta-quantile of the SINR
    double pmd_bound;   // (1/K) sum [(1 - delta) p_e(quantile_k) + delta]
};

/// Per-user delta-quantile from n_samples draws of the sampler (the floor(n delta)-th smallest entry).
OutageResult outage_quantile(const std::function<RVector(std::size_t)>& sampler, double delta, std::size_t n_samples,
                             const ErrorModel& model);

struct SinrProfile {
    RVector sinr;
    RVector outage;
    RVector pe;
    double pmd_bound = 0;
};

void write_profile_csv(std::ostream& os, const SinrProfile& profile);

/// Group occupancy counts for a set of LSFCs (dB) and descending corner points (G+1 entries).
std::vector<std::size_t> group_counts(const std::vector<double>& gains_db, const std::vector<double>& corners_db);

}  // namespace ura
