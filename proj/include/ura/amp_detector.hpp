#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "ura/channel_model.hpp"
#include "ura/common.hpp"
#include "ura/pilot_codebook.hpp"

namespace ura {

/// Per-row output of an AMP denoiser. Works in whatever units r and tau2 are given in.
struct RowEstimate {
    CVector x;             // eta(r)
    RVector jacobian;      // d eta_m / d r_m (diagonal, real)
    double gamma = 0;      // LSFC estimate used for shrinkage (ML: g_hat, PME: MAP level)
    double raw_gamma = 0;  // ML: max(0, |r|^2/M - mean tau2) before the g_min clamp
    double log_odds = 0;   // log P(active | r) / P(inactive | r)
    std::vector<double> posteriors;  // PME only: {inactive, level 1, ..., level G}
};

/// ML-LSFC denoiser: g_hat = max(max(0, |r|^2/M - mean tau2), g_min), then the
/// conditional posterior-mean shrinkage at g_hat.
RowEstimate denoise_row_ml(const CVector& r, const RVector& tau2, double g_min, double lambda);

/// Posterior-mean denoiser for a known LSFC g with activity prior lambda.
/// With force_active the activity factor is fixed to 1 (pure linear MMSE shrinkage).
RowEstimate denoise_row_conditional(const CVector& r, const RVector& tau2, double g, double lambda,
                                    bool force_active = false);

/// Posterior mean under the mixture {inactive w.p. 1-lambda, level pi_i w.p. lambda xi_i}.
RowEstimate denoise_row_discrete(const CVector& r, const RVector& tau2, std::span<const double> levels,
                                 std::span<const double> priors, double lambda);

enum class TauDivisor { Pilots, Columns };
const char* to_string(TauDivisor d);
TauDivisor tau_divisor_from_string(const std::string& s);

struct MlLsfcDenoiser {
    enum class GminRule { Absolute, TauMultiple };
    GminRule rule = GminRule::TauMultiple;
    double value = 2.0;  // Absolute: received power (linear); TauMultiple: factor on the mean tau^2
};

struct DiscretePmeDenoiser {
    std::vector<double> levels;  // received power levels (linear)
    std::vector<double> priors;  // sum to one
};

struct DenoiserSpec {
    std::variant<MlLsfcDenoiser, DiscretePmeDenoiser> kind = MlLsfcDenoiser{};
    double activity = 0.01;  // lambda = K_a / N

    void validate() const;
};

struct AmpOptions {
    std::size_t max_iterations = 20;
    double tolerance = 1e-6;  // relative change of |X_t|_F
    TauDivisor divisor = TauDivisor::Pilots;
    double divergence_growth = 0.05;  // relative growth of mean tau^2 counted as an increase
    std::size_t divergence_patience = 3;
    bool trace = false;
};

/// Iterate in the normalized model Y = (A / sqrt(n_p)) X + Z, where the active rows of X
/// are sqrt(n_p P_k g_k) h_k^T. Row LSFC estimates are reported in received-power units.
struct AmpState {
    CMatrix x;      // N x M
    CMatrix z;      // n_p x M
    CMatrix r;      // N x M, last denoiser input
    RVector tau2;   // M, normalized-model noise level per antenna
    RVector gamma;  // N, received-power estimate per row
    RVector score;  // N, ranking score (ML: raw ML estimate, PME: activity log-odds)
    std::size_t iteration = 0;
    bool discrete = false;  // last denoiser was the discrete PME
};

AmpState amp_init(const CMatrix& pilot_rx, std::size_t columns);

/// One iteration: tau from Z_t, X_{t+1} = eta(A~^H Z_t + X_t), Z_{t+1} with the Onsager term.
void amp_iterate(AmpState& state, const PilotMatrix& pilots, const CMatrix& pilot_rx, const DenoiserSpec& denoiser,
                 const AmpOptions& options);

struct AmpTraceRow {
    std::size_t iteration;
    double mean_tau2;
    double residual_norm;
    std::size_t threshold_count;
};

struct TopK {
    std::size_t active_users;
    std::size_t extra;  // Delta
};
struct ThresholdRule {};
using SelectionRule = std::variant<TopK, ThresholdRule>;

struct DetectionResult {
    std::vector<std::size_t> active;  // sorted by decreasing ranking score
    std::vector<double> gamma;        // received-power estimate per entry of `active`
    std::vector<double> score;
    bool threshold_rule = false;
    std::size_t iterations = 0;
    std::vector<AmpTraceRow> trace;
};

/// ||r||^2 threshold on a row of the final denoiser input; limit M tau2 as g -> 0.
double ml_threshold(std::size_t antennas, double tau2, double g);

/// Threshold rule: ML rows use ml_threshold at the clamped estimate, PME rows use positive log-odds.
DetectionResult select_active(const AmpState& state, const SelectionRule& rule, std::size_t pilot_rows);

/// Full detector: T iterations of MMV-AMP followed by selection.
DetectionResult detect(const PilotMatrix& pilots, const CMatrix& pilot_rx, const DenoiserSpec& denoiser,
                       const AmpOptions& options, const SelectionRule& rule);

struct DetectionCounts {
    std::size_t active_columns = 0;  // distinct pilots used
    std::size_t missed_columns = 0;
    std::size_t false_alarm_columns = 0;
};

DetectionCounts count_detection(const DetectionResult& result, const UserPopulation& population);

void write_trace_csv(std::ostream& os, const std::vector<AmpTraceRow>& trace);

}  // namespace ura
