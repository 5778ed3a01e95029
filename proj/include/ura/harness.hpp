#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ura/amp_detector.hpp"
#include "ura/channel_model.hpp"
#include "ura/link_analysis.hpp"
#include "ura/pilot_codebook.hpp"
#include "ura/polar_codec.hpp"
#include "ura/receiver.hpp"

namespace ura {

struct SystemConfig {
    std::size_t pilot_length = 288;  // n_p
    std::size_t data_length = 512;   // n_d
    unsigned pilot_bits = 12;        // J, N = 2^J
    unsigned message_bits = 96;      // B
    std::size_t antennas = 16;       // M
    std::size_t active_users = 16;   // K_a
    double noise_var = 1.0;          // N0

    std::size_t columns() const { return std::size_t{1} << pilot_bits; }
    std::size_t block_length() const { return pilot_length + data_length; }  // n
    std::size_t payload_bits() const { return message_bits - pilot_bits; }
};

enum class PolicyKind { Npc, Sci, ImperfectSci, PartialSci };

struct PolicyConfig {
    PolicyKind kind = PolicyKind::Sci;
    double power_db = -16.0;  // NPC transmit power or (imperfect) SCI target, dB relative to N0
    double error_db = 3.0;    // ImperfectSci half-width
    std::vector<double> levels_rel_db;  // PartialSci levels relative to power_db
    std::vector<double> corners_db;     // PartialSci corners, G + 1 entries

    PowerPolicy build() const;
};

struct DetectorConfig {
    enum class Kind { Ml, Pme };
    Kind kind = Kind::Ml;
    enum class GminRule { Tau, Absolute, Relative };
    GminRule gmin_rule = GminRule::Tau;
    double gmin_value = 2.0;  // Tau: factor; Absolute: dB; Relative: dB w.r.t. policy power
    std::vector<double> levels_rel_db;  // PME levels relative to the policy power
    std::vector<double> priors;
    AmpOptions amp;
    bool threshold = false;
    std::optional<std::size_t> delta;  // default floor(K_a / 40)
};

struct CodecConfig {
    std::size_t list_size = 32;
    std::optional<double> design_sinr_db;  // default: normal-approximation SINR* at the payload rate
    double design_target_pe = 0.05;
};

struct AnalysisConfig {
    enum class Model { Normal, Empirical };
    Model model = Model::Normal;
    std::string curve_file;         // empirical curve CSV; measured when empty
    std::vector<double> curve_grid_db;
    std::size_t curve_trials = 2000;
    std::optional<double> info_bits;  // normal approximation, default B - J
    enum class Mse { Pilots, Orthogonal };
    Mse mse = Mse::Pilots;  // error covariance of the drawn pilot columns, or the orthogonal-pilot value
    bool small_scale_fading = false;  // average p_e over |h_k|^2 instead of plugging in its mean
};

struct SweepConfig {
    std::string axis;  // K_a, M, power_db or ebn0_db; empty = single point
    std::vector<double> values;
};

struct SearchConfig {
    double target = 0.05;  // P_e = p_md + p_fa
    double lo_db = -30.0;  // bracket on power_db
    double hi_db = 0.0;
    std::size_t probes = 10;
    std::size_t widen = 3;
    std::string method = "simulate";  // simulate, analyze or both
};

enum class RunMode { Simulate, Analyze, Search };

struct ScenarioConfig {
    std::string scenario = "scenario";
    SystemConfig system;
    PilotKind pilot_kind = PilotKind::SubsampledDft;
    bool scramble = true;
    LsfcModel lsfc;
    PolicyConfig policy;
    DetectorConfig detector;
    CodecConfig codec;
    SicPlan sic;
    NoiseEstimate noise_estimate = NoiseEstimate::Analysis;
    AnalysisConfig analysis;
    SweepConfig sweep;
    SearchConfig search;
    std::size_t trials = 100;
    std::uint64_t seed = 1;
    RunMode mode = RunMode::Simulate;

    /// Same scenario with the sweep axis set to `value`.
    ScenarioConfig at(const std::string& axis, double value) const;
    double ebn0_db() const;  // P n / (B N0) for the policy power
    void validate() const;
    nlohmann::json to_json() const;
};

/// Parses a config document; errors are ConfigError with the offending field path.
ScenarioConfig parse_config(const nlohmann::json& doc);
ScenarioConfig load_config(const std::filesystem::path& path);

double ebn0_db_from_power(double power_db, const SystemConfig& system);
double power_db_from_ebn0(double ebn0_db, const SystemConfig& system);

struct Interval {
    double lo;
    double hi;
};
/// 95% Wilson score interval for k successes in n trials.
Interval wilson_interval(std::size_t k, std::size_t n, double z = 1.959963984540054);

struct TrialResult {
    std::size_t active_users = 0;
    std::size_t list_size = 0;
    std::size_t missed = 0;        // n_md
    std::size_t false_alarms = 0;  // n_fa
    std::size_t ad_missed = 0;
    std::size_t ad_false = 0;
    std::size_t ad_columns = 0;
    std::size_t iterations = 0;
    bool failed = false;
    std::string failure;
    std::vector<std::size_t> missed_users;  // indices into the population
};

/// Everything shared by the trials of one sweep point.
class PointContext {
public:
    explicit PointContext(const ScenarioConfig& config);

    const ScenarioConfig& config() const { return config_; }
    const PilotMatrix& pilots() const { return pilots_; }
    const PolarCodec& codec() const { return codec_; }
    ReceiverConfig receiver_config() const;
    PopulationSpec population_spec() const;

private:
    ScenarioConfig config_;
    PilotMatrix pilots_;
    PolarCodec codec_;
};

/// One end-to-end trial: population, signals, receiver, scoring.
TrialResult run_trial(const PointContext& ctx, std::uint64_t trial_seed);

/// Per-trial base seed.
inline std::uint64_t trial_seed(std::uint64_t base, std::size_t trial) { return base ^ static_cast<std::uint64_t>(trial); }

struct PointMetrics {
    std::string scenario;
    std::string axis;
    double value = 0;
    double ebn0_db = 0;
    std::size_t trials = 0;
    std::size_t failed_trials = 0;
    std::size_t users = 0;           // sum K_a
    std::size_t list_total = 0;      // sum |L|
    std::size_t missed = 0;          // sum n_md
    std::size_t false_alarms = 0;    // sum n_fa
    std::size_t identity_violations = 0;
    double p_md = 0;
    double p_fa = 0;  // mean over trials of n_fa / |L|
    Interval p_md_ci{0, 0};
    Interval p_fa_ci{0, 0};
    std::size_t ad_columns = 0, ad_missed = 0, ad_false = 0;
    double mean_iterations = 0;
    double wall_seconds = 0;
    std::uint64_t seed = 0;

    double pe() const { return p_md + p_fa; }
};

/// Runs all trials of one point on `threads` workers; aggregation is order-independent.
PointMetrics simulate_point(const ScenarioConfig& config, std::size_t threads, std::vector<TrialResult>* trials = nullptr);

struct AnalysisPoint {
    double value = 0;
    double ebn0_db = 0;
    double mean_sinr_db = 0;
    double p_md = 0;
};

/// Closed-form prediction: SINR from the configured SIC strategy, averaged over `trials`
/// populations; p_md = mean p_e(SINR_k).
AnalysisPoint analyze_point(const ScenarioConfig& config, const ErrorModel& model, std::size_t trials);

ErrorModel analysis_error_model(const ScenarioConfig& config, const std::filesystem::path& out_dir);

struct SearchProbe {
    double power_db;
    double pe;
    Interval ci;
};

struct SearchResult {
    std::string method;
    double power_db = 0;
    double ebn0_db = 0;
    Interval ebn0_ci{0, 0};
    bool bracket_ok = true;
    std::vector<SearchProbe> probes;
};

/// Bisection on the policy power for P_e = target; simulated probes share trial seeds.
SearchResult ebn0_search_simulated(const ScenarioConfig& config, std::size_t threads);
SearchResult ebn0_search_analysis(const ScenarioConfig& config, const ErrorModel& model);

void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const PointMetrics& m, const std::string& build_id);

/// Runs the configured campaign into out_dir (metrics.csv, meta.json, timings.csv, ...).
/// Points already present in metrics.csv under an identical config are skipped.
/// Returns the number of failed (divergent) trials.
std::size_t run_campaign(const ScenarioConfig& config, const std::filesystem::path& out_dir, std::size_t threads,
                  std::ostream& log);

const char* build_id();

}  // namespace ura
