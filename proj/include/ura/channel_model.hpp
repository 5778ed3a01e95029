#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <variant>
#include <vector>

#include "ura/common.hpp"
#include "ura/pilot_codebook.hpp"
#include "ura/rng.hpp"

namespace ura {

/// Shadowing-pathloss model: g[dB] = -alpha - beta*log10(d) + sigma_shadow*z,
/// with d uniform over the annulus r_min <= d <= r_max (km) and an optional cap.
struct LsfcModel {
    double alpha_db = 128.1;
    double beta_db = 36.7;
    double sigma_shadow_db = 4.0;  // standard deviation in dB
    double r_min_km = 0.25;
    double r_max_km = 1.0;
    std::optional<double> g_max_db;

    void validate() const;

    /// Deterministic part of the model for a given distance and shadowing realization.
    double gain_db(double distance_km, double z) const;
};

struct LsfcDraw {
    double distance_km;
    double gain_db;
    double gain;  // linear
};

LsfcDraw sample_lsfc(const LsfcModel& model, Rng& rng);
double sample_lsfc(const LsfcModel& model, std::uint64_t seed);

// Power-control policies. Powers and received powers are linear, per symbol.
struct NoPowerControl {
    double power;
};
struct ChannelInversion {
    double target;  // received power rho
};
struct ImperfectInversion {
    double target;
    double error_db;  // received power uniform in target * [-error_db, +error_db] dB
};
/// Users pick the group q with corners_db[q] > g_dB >= corners_db[q+1] and
/// invert their LSFC to reach levels[q]. corners_db has G+1 entries, +inf first
/// and -inf last; levels are strictly decreasing.
struct PartialInversion {
    std::vector<double> corners_db;
    std::vector<double> levels;

    std::size_t group_of(double gain) const;
};

using PowerPolicy = std::variant<NoPowerControl, ChannelInversion, ImperfectInversion, PartialInversion>;

void validate(const PowerPolicy& policy);

struct PowerAssignment {
    double power;
    std::optional<std::size_t> group;
    double received;  // P g; the exact target level under inversion policies
};

PowerAssignment assign_power(const PowerPolicy& policy, double gain, Rng& rng);

struct User {
    double distance_km = 0;
    double gain = 1;   // LSFC g_k, linear
    double power = 0;  // P_k
    std::optional<std::size_t> group;
    std::uint32_t pilot = 0;
    Bits message;
    CVector channel;  // h_k ~ CN(0, I_M)
    double received = -1;  // set by the power policy; negative means P g

    double received_power() const { return received >= 0 ? received : power * gain; }
};

struct UserPopulation {
    std::vector<User> users;

    std::size_t size() const { return users.size(); }
    bool empty() const { return users.empty(); }
};

struct PopulationSpec {
    std::size_t active_users = 0;
    unsigned message_bits = 0;
    unsigned pilot_bits = 0;
    std::size_t antennas = 1;
    LsfcModel lsfc;
    PowerPolicy policy = ChannelInversion{1.0};
};

/// Draws LSFCs, powers, messages (pairwise distinct) and Rayleigh channels.
UserPopulation draw_population(const PopulationSpec& spec, std::uint64_t seed);

void write_population_csv(std::ostream& os, const UserPopulation& population);

struct ReceivedSignals {
    CMatrix pilot_rx;  // n_p x M
    CMatrix data_rx;   // n_d x M
    double noise_var = 0;
};

/// Y_p = sum_k sqrt(P_k g_k) a_{i_k} h_k^T + Z_p and Y_d = sum_k sqrt(P_k g_k) s_k h_k^T + Z_d.
/// data_symbols[k] is the n_d-symbol sequence of user k.
ReceivedSignals synthesize(const PilotMatrix& pilots, const UserPopulation& population,
                           const std::vector<CVector>& data_symbols, std::size_t data_length, double noise_var,
                           std::uint64_t seed);

}  // namespace ura
