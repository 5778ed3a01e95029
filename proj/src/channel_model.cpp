#include "ura/channel_model.hpp"

#include <algorithm>
#include <ostream>
#include <set>

namespace ura {

void LsfcModel::validate() const {
    if (!(r_min_km > 0)) throw ConfigError("lsfc.r_min must be positive");
    if (!(r_min_km < r_max_km)) throw ConfigError("lsfc.r_min must be below lsfc.r_max");
    if (!(sigma_shadow_db >= 0)) throw ConfigError("lsfc.sigma_shadow must be nonnegative");
}

double LsfcModel::gain_db(double distance_km, double z) const {
    double g = -alpha_db - beta_db * std::log10(distance_km) + sigma_shadow_db * z;
    if (g_max_db) g = std::min(g, *g_max_db);
    return g;
}

LsfcDraw sample_lsfc(const LsfcModel& model, Rng& rng) {
    // density proportional to d on [r_min, r_max]
    const double lo2 = model.r_min_km * model.r_min_km;
    const double hi2 = model.r_max_km * model.r_max_km;
    const double d = std::sqrt(lo2 + rng.uniform() * (hi2 - lo2));
    const double z = rng.normal();
    const double gdb = model.gain_db(d, z);
    return {d, gdb, db_to_linear(gdb)};
}

double sample_lsfc(const LsfcModel& model, std::uint64_t seed) {
    Rng rng(seed);
    return sample_lsfc(model, rng).gain;
}

std::size_t PartialInversion::group_of(double gain) const {
    const double gdb = linear_to_db(gain);
    for (std::size_t q = 0; q < levels.size(); ++q)
        if (corners_db[q] > gdb && gdb >= corners_db[q + 1]) return q;
    return levels.size() - 1;
}

namespace {

struct PolicyValidator {
    void operator()(const NoPowerControl& p) const {
        if (!(p.power >= 0)) throw ConfigError("policy.power must be nonnegative");
    }
    void operator()(const ChannelInversion& p) const {
        if (!(p.target > 0)) throw ConfigError("policy.target must be positive");
    }
    void operator()(const ImperfectInversion& p) const {
        if (!(p.target > 0)) throw ConfigError("policy.target must be positive");
        if (!(p.error_db >= 0)) throw ConfigError("policy.error_db must be nonnegative");
    }
    void operator()(const PartialInversion& p) const {
        if (p.levels.empty()) throw ConfigError("policy.levels must not be empty");
        if (p.corners_db.size() != p.levels.size() + 1)
            throw ConfigError("policy.corners_db must have one more entry than policy.levels");
        if (!(std::isinf(p.corners_db.front()) && p.corners_db.front() > 0))
            throw ConfigError("policy.corners_db must start at +inf");
        if (!(std::isinf(p.corners_db.back()) && p.corners_db.back() < 0))
            throw ConfigError("policy.corners_db must end at -inf");
        for (std::size_t i = 1; i < p.corners_db.size(); ++i)
            if (!(p.corners_db[i] < p.corners_db[i - 1]))
                throw ConfigError("policy.corners_db must be strictly decreasing");
        for (std::size_t i = 0; i < p.levels.size(); ++i) {
            if (!(p.levels[i] > 0)) throw ConfigError("policy.levels must be positive");
            if (i > 0 && !(p.levels[i] < p.levels[i - 1]))
                throw ConfigError("policy.levels must be strictly decreasing");
        }
    }
};

}  // namespace

void validate(const PowerPolicy& policy) { std::visit(PolicyValidator{}, policy); }

PowerAssignment assign_power(const PowerPolicy& policy, double gain, Rng& rng) {
    if (std::holds_alternative<NoPowerControl>(policy)) {
        const double p = std::get<NoPowerControl>(policy).power;
        return {p, {}, p * gain};
    }
    if (!(gain > 0)) throw ConfigError("non-invertible LSFC");
    if (auto* p = std::get_if<ChannelInversion>(&policy)) return {p->target / gain, {}, p->target};
    if (auto* p = std::get_if<ImperfectInversion>(&policy)) {
        const double u = rng.uniform(-p->error_db, p->error_db);
        const double rx = p->target * db_to_linear(u);
        return {rx / gain, {}, rx};
    }
    const auto& p = std::get<PartialInversion>(policy);
    const std::size_t q = p.group_of(gain);
    return {p.levels[q] / gain, q, p.levels[q]};
}

UserPopulation draw_population(const PopulationSpec& spec, std::uint64_t seed) {
    spec.lsfc.validate();
    validate(spec.policy);
    if (spec.message_bits < spec.pilot_bits) throw ConfigError("message must be at least J bits long");
    if (spec.active_users > 0 && spec.message_bits < 64 &&
        static_cast<double>(spec.active_users) > std::ldexp(1.0, static_cast<int>(spec.message_bits)))
        throw ConfigError("more active users than distinct messages");
    if (spec.antennas == 0) throw ConfigError("antenna count must be positive");

    Rng rng(derive_seed(seed, Stream::Population));
    UserPopulation pop;
    pop.users.reserve(spec.active_users);
    std::set<Bits> seen;
    for (std::size_t k = 0; k < spec.active_users; ++k) {
        User u;
        const auto draw = sample_lsfc(spec.lsfc, rng);
        u.distance_km = draw.distance_km;
        u.gain = draw.gain;
        const auto pa = assign_power(spec.policy, u.gain, rng);
        u.power = pa.power;
        u.group = pa.group;
        u.received = pa.received;
        // messages are kept pairwise distinct so that list scoring is unambiguous
        do {
            u.message.resize(spec.message_bits);
            for (auto& b : u.message) b = rng.bit();
        } while (!seen.insert(u.message).second);
        u.pilot = message_to_pilot(u.message, spec.pilot_bits);
        u.channel.resize(static_cast<Eigen::Index>(spec.antennas));
        for (Eigen::Index m = 0; m < u.channel.size(); ++m) u.channel(m) = rng.complex_normal();
        pop.users.push_back(std::move(u));
    }
    return pop;
}

void write_population_csv(std::ostream& os, const UserPopulation& population) {
    os << "user_id,d_km,g_dB,P_tx,group,pilot_index\n";
    for (std::size_t k = 0; k < population.size(); ++k) {
        const auto& u = population.users[k];
        os << k << ',' << u.distance_km << ',' << linear_to_db(u.gain) << ',' << u.power << ',';
        if (u.group) os << *u.group;
        os << ',' << u.pilot << '\n';
    }
}

ReceivedSignals synthesize(const PilotMatrix& pilots, const UserPopulation& population,
                           const std::vector<CVector>& data_symbols, std::size_t data_length, double noise_var,
                           std::uint64_t seed) {
    if (!(noise_var >= 0)) throw ConfigError("noise variance must be nonnegative");
    if (!data_symbols.empty() && data_symbols.size() != population.size())
        throw ConfigError("one data sequence per user required");
    const auto np = static_cast<Eigen::Index>(pilots.rows());
    const auto nd = static_cast<Eigen::Index>(data_length);
    Eigen::Index antennas = 0;
    for (const auto& u : population.users) {
        if (antennas == 0) antennas = u.channel.size();
        if (u.channel.size() != antennas) throw ConfigError("inconsistent antenna count across users");
        if (u.pilot >= pilots.columns()) throw ConfigError("pilot index outside the codebook");
    }
    if (antennas == 0) antennas = 1;

    ReceivedSignals out;
    out.noise_var = noise_var;
    out.pilot_rx = CMatrix::Zero(np, antennas);
    out.data_rx = CMatrix::Zero(nd, antennas);
    for (std::size_t k = 0; k < population.size(); ++k) {
        const auto& u = population.users[k];
        const double amp = std::sqrt(u.received_power());
        out.pilot_rx.noalias() += (amp * pilots.column(u.pilot)) * u.channel.transpose();
        if (!data_symbols.empty()) {
            if (data_symbols[k].size() != nd) throw ConfigError("data sequence length mismatch");
            out.data_rx.noalias() += (amp * data_symbols[k]) * u.channel.transpose();
        }
    }
    if (noise_var > 0) {
        Rng pn(derive_seed(seed, Stream::PilotNoise));
        for (Eigen::Index m = 0; m < antennas; ++m)
            for (Eigen::Index r = 0; r < np; ++r) out.pilot_rx(r, m) += pn.complex_normal(noise_var);
        Rng dn(derive_seed(seed, Stream::DataNoise));
        for (Eigen::Index m = 0; m < antennas; ++m)
            for (Eigen::Index r = 0; r < nd; ++r) out.data_rx(r, m) += dn.complex_normal(noise_var);
    }
    return out;
}

}  // namespace ura
