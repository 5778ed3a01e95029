#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ura/channel_model.hpp"
#include "ura/link_analysis.hpp"

namespace ura {

struct OptimizerParams {
    std::size_t active_users = 800;
    std::size_t antennas = 50;
    std::size_t pilot_length = 1152;
    double noise_var = 1.0;
    double sinr_target = 0;      // linear SINR*
    double residual_error = 0.05;  // p used for every cancelled level inside the constraints
    LsfcModel lsfc;
    std::size_t draws = 1000000;
    std::uint64_t seed = 1;
};

/// Monte-Carlo LSFC draws sorted by decreasing gain, with prefix sums of 1/g.
class LsfcSamples {
public:
    LsfcSamples(const LsfcModel& model, std::size_t draws, std::uint64_t seed);

    std::size_t size() const { return gain_db_.size(); }
    const std::vector<double>& gain_db() const { return gain_db_; }
    /// Gain (dB) at the boundary after the first `count` strongest draws.
    double boundary_db(std::size_t count) const;
    /// Mean over all draws of 1/g restricted to ranks [begin, end).
    double inverse_gain_mass(std::size_t begin, std::size_t end) const;
    /// Number of draws with gain_db >= threshold.
    std::size_t count_above(double threshold_db) const;

private:
    std::vector<double> gain_db_;
    std::vector<long double> prefix_inv_;
};

struct LevelPlan {
    std::string method;
    std::vector<double> levels;      // pi_q, linear, decreasing
    std::vector<double> corners_db;  // G + 1 entries, +inf ... -inf
    std::vector<double> occupancy;   // xi_q
    std::vector<double> sinr;        // per-level SINR under the constraint model
    double sinr_target = 0;
    double transmit_power = 0;  // P_T summed over users (linear)
    double received_power = 0;  // P_R = K_a sum xi_q pi_q
    double pmd = 0;             // predicted sum_q xi_q p_e(SINR_q) with mean-field residuals

    std::size_t groups() const { return levels.size(); }
};

/// Per-level SINR of a plan with counts K_a xi_q, orthogonal-pilot mse and uniform residual p.
RVector plan_sinr(const std::vector<double>& levels, const std::vector<double>& occupancy, const OptimizerParams& params);

/// Fills corners, P_T, P_R, per-level SINR and predicted p_md.
void evaluate_plan(LevelPlan& plan, const OptimizerParams& params, const LsfcSamples& samples, const ErrorModel& model);

/// Equal expected group sizes; levels by damped Gauss-Seidel from the weakest group.
LevelPlan optimize_equal_groups(std::size_t groups, const OptimizerParams& params, const LsfcSamples& samples,
                                const ErrorModel& model);

/// Occupancies over a fixed descending grid of levels minimizing the received power.
LevelPlan optimize_linear(const std::vector<double>& grid, const OptimizerParams& params, const LsfcSamples& samples,
                          const ErrorModel& model);

/// Grid from top_db down to bottom_db with the given spacing, best of `offsets` shifts by spacing/offsets.
LevelPlan optimize_linear_sweep(double spacing_db, double top_db, double bottom_db, std::size_t offsets,
                                const OptimizerParams& params, const LsfcSamples& samples, const ErrorModel& model);

/// Single received-power level meeting SINR* (statistical channel inversion).
LevelPlan sci_plan(const OptimizerParams& params, const LsfcSamples& samples, const ErrorModel& model);

void write_plan_json(std::ostream& os, const LevelPlan& plan);
LevelPlan read_plan_json(std::istream& is);

/// Partial channel-inversion policy realizing a plan.
PartialInversion plan_policy(const LevelPlan& plan);

}  // namespace ura
