#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "ura/channel_model.hpp"
#include "ura/pilot_codebook.hpp"

using namespace ura;

namespace {

// P(g_dB >= c) by quadrature over the distance law and the Gaussian shadowing.
double tail_mass(const LsfcModel& m, double c_db) {
    const int n = 20000;
    const double r = m.r_min_km, big_r = m.r_max_km;
    double acc = 0;
    for (int i = 0; i < n; ++i) {
        const double d = r + (big_r - r) * (i + 0.5) / n;
        const double dens = 2 * d / (big_r * big_r - r * r);
        const double mean = -m.alpha_db - m.beta_db * std::log10(d);
        acc += dens * 0.5 * std::erfc((c_db - mean) / (m.sigma_shadow_db * std::sqrt(2.0)));
    }
    return acc * (big_r - r) / n;
}

UserPopulation manual_population(const std::vector<std::pair<std::uint32_t, double>>& users, std::size_t antennas,
                                 Rng& rng) {
    UserPopulation pop;
    for (const auto& [pilot, rx] : users) {
        User u;
        u.gain = 1e-3;
        u.power = rx / u.gain;
        u.pilot = pilot;
        u.channel.resize(static_cast<Eigen::Index>(antennas));
        for (Eigen::Index m = 0; m < u.channel.size(); ++m) u.channel(m) = rng.complex_normal();
        pop.users.push_back(u);
    }
    return pop;
}

}  // namespace

TEST_CASE("pathloss evaluation") {
    LsfcModel m;
    m.sigma_shadow_db = 0;
    CHECK(m.gain_db(1.0, 0.0) == doctest::Approx(-128.1).epsilon(1e-14));
    CHECK(m.gain_db(0.1, 0.0) == doctest::Approx(-128.1 + 36.7).epsilon(1e-14));
    m.sigma_shadow_db = 4;
    CHECK(m.gain_db(1.0, 1.5) == doctest::Approx(-128.1 + 6.0).epsilon(1e-14));
}

TEST_CASE("LSFC cap") {
    LsfcModel m;
    m.alpha_db = 0;
    m.beta_db = 0;
    m.sigma_shadow_db = 0;
    m.g_max_db = -3.0;
    Rng rng(1);
    for (int i = 0; i < 10; ++i) {
        const auto d = sample_lsfc(m, rng);
        CHECK(d.gain_db == doctest::Approx(-3.0));
        CHECK(d.gain == doctest::Approx(db_to_linear(-3.0)));
    }
    LsfcModel capped;
    capped.g_max_db = -100.0;
    Rng r2(2);
    for (int i = 0; i < 2000; ++i) CHECK(sample_lsfc(capped, r2).gain_db <= -100.0);
}

TEST_CASE("model validation") {
    LsfcModel m;
    m.r_min_km = 0;
    CHECK_THROWS_AS(m.validate(), ConfigError);
    m.r_min_km = 2;
    CHECK_THROWS_AS(m.validate(), ConfigError);
    LsfcModel s;
    s.sigma_shadow_db = -1;
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("distance is uniform over the annulus, shadowing has the configured spread") {
    LsfcModel m;
    Rng rng(5);
    const int n = 100000;
    std::vector<double> below(3, 0);
    const double probes[] = {0.4, 0.6, 0.85};
    double s1 = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        const auto d = sample_lsfc(m, rng);
        for (int j = 0; j < 3; ++j) below[j] += d.distance_km <= probes[j];
        const double z = d.gain_db - m.gain_db(d.distance_km, 0.0);
        s1 += z;
        s2 += z * z;
    }
    for (int j = 0; j < 3; ++j) {
        const double x = probes[j];
        const double p = (x * x - 0.0625) / (1.0 - 0.0625);
        const double se = std::sqrt(p * (1 - p) / n);
        CHECK(std::abs(below[j] / n - p) < 4 * se);
    }
    const double mean = s1 / n, var = s2 / n - mean * mean;
    CHECK(std::abs(mean) < 4 * 4.0 / std::sqrt(double(n)));
    CHECK(var == doctest::Approx(16.0).epsilon(0.02));
}

TEST_CASE("power policies") {
    Rng rng(3);
    SUBCASE("SCI") {
        const auto a = assign_power(ChannelInversion{1.0}, 0.01, rng);
        CHECK(a.power == doctest::Approx(100.0));
        CHECK(a.received == 1.0);
        // bit-exact received power over a population
        PopulationSpec spec;
        spec.active_users = 200;
        spec.message_bits = 30;
        spec.pilot_bits = 10;
        spec.policy = ChannelInversion{0.037};
        const auto pop = draw_population(spec, 9);
        for (const auto& u : pop.users) REQUIRE(u.received_power() == 0.037);
    }
    SUBCASE("NPC") {
        const auto a = assign_power(NoPowerControl{2.5}, 1e-9, rng);
        CHECK(a.power == 2.5);
        CHECK(a.received == doctest::Approx(2.5e-9));
    }
    SUBCASE("imperfect SCI spans +-e dB uniformly") {
        const ImperfectInversion p{0.5, 3.0};
        double s1 = 0, s2 = 0;
        const int n = 20000;
        for (int i = 0; i < n; ++i) {
            const double g = db_to_linear(-100.0 - 20.0 * rng.uniform());
            const auto a = assign_power(p, g, rng);
            const double u = linear_to_db(a.power * g / 0.5);
            REQUIRE(u >= -3.0 - 1e-12);
            REQUIRE(u <= 3.0 + 1e-12);
            s1 += u;
            s2 += u * u;
        }
        CHECK(std::abs(s1 / n) < 0.05);
        CHECK(s2 / n == doctest::Approx(3.0).epsilon(0.03));  // (2e)^2 / 12
    }
    SUBCASE("partial SCI interval membership") {
        const double inf = std::numeric_limits<double>::infinity();
        const PartialInversion p{{inf, -16.0, -inf}, {1.0, 0.5}};
        const auto a = assign_power(p, db_to_linear(-20.0), rng);
        REQUIRE(a.group.has_value());
        CHECK(*a.group == 1);
        CHECK(a.power == doctest::Approx(0.5 * 100.0));
        CHECK(a.received == 0.5);
        CHECK(p.group_of(db_to_linear(-15.9)) == 0);
        CHECK(p.group_of(db_to_linear(-16.001)) == 1);
    }
    SUBCASE("non-invertible LSFC") {
        CHECK_THROWS_WITH_AS(assign_power(ChannelInversion{1.0}, 0.0, rng), "non-invertible LSFC", ConfigError);
        CHECK_THROWS_AS(assign_power(ImperfectInversion{1.0, 3.0}, 0.0, rng), ConfigError);
        CHECK_NOTHROW(assign_power(NoPowerControl{1.0}, 0.0, rng));
    }
    SUBCASE("policy validation") {
        const double inf = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(validate(PartialInversion{{inf, -10.0, -inf}, {0.5, 1.0}}), ConfigError);
        CHECK_THROWS_AS(validate(PartialInversion{{inf, -10.0, -20.0}, {1.0, 0.5}}), ConfigError);
        CHECK_THROWS_AS(validate(PartialInversion{{inf, -10.0, -inf}, {1.0}}), ConfigError);
        CHECK_NOTHROW(validate(PartialInversion{{inf, -10.0, -inf}, {1.0, 0.5}}));
    }
}

TEST_CASE("population invariants and determinism") {
    PopulationSpec spec;
    spec.active_users = 300;
    spec.message_bits = 20;
    spec.pilot_bits = 8;
    spec.antennas = 4;
    spec.policy = ImperfectInversion{1.0, 3.0};
    const auto a = draw_population(spec, 17);
    const auto b = draw_population(spec, 17);
    REQUIRE(a.size() == 300);
    std::set<Bits> msgs;
    double h2 = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const auto& u = a.users[k];
        CHECK(u.gain > 0);
        CHECK(u.power >= 0);
        CHECK(u.pilot == message_to_pilot(u.message, 8));
        CHECK(u.message.size() == 20);
        msgs.insert(u.message);
        CHECK(u.message == b.users[k].message);
        CHECK(u.channel == b.users[k].channel);
        CHECK(u.gain == b.users[k].gain);
        h2 += u.channel.squaredNorm();
    }
    CHECK(msgs.size() == 300);
    CHECK(h2 / (300.0 * 4) == doctest::Approx(1.0).epsilon(0.1));
    std::ostringstream os;
    write_population_csv(os, a);
    CHECK(os.str().rfind("user_id,d_km,g_dB,P_tx,group,pilot_index\n", 0) == 0);
}

TEST_CASE("partial SCI group fractions match the quantile masses") {
    const LsfcModel m;
    const double inf = std::numeric_limits<double>::infinity();
    const std::vector<double> corners{inf, -112.0, -120.0, -128.0, -inf};
    const PartialInversion p{corners, {4.0, 2.0, 1.5, 1.0}};
    std::vector<double> xi;
    for (std::size_t q = 0; q + 1 < corners.size(); ++q) {
        const double hi = std::isinf(corners[q]) ? 0.0 : tail_mass(m, corners[q]);
        const double lo = std::isinf(corners[q + 1]) ? 1.0 : tail_mass(m, corners[q + 1]);
        xi.push_back(lo - hi);
    }
    PopulationSpec spec;
    spec.active_users = 100000;
    spec.message_bits = 40;
    spec.pilot_bits = 12;
    spec.policy = p;
    const auto pop = draw_population(spec, 2024);
    std::vector<double> counts(xi.size(), 0);
    for (const auto& u : pop.users) counts[*u.group] += 1;
    for (std::size_t q = 0; q < xi.size(); ++q) {
        const double n = double(spec.active_users);
        const double sd = std::sqrt(n * xi[q] * (1 - xi[q]));
        CHECK(std::abs(counts[q] - n * xi[q]) < 3 * sd);
    }
}

TEST_CASE("synthesized signals") {
    const auto pilots = PilotMatrix::build(PilotKind::SubsampledDft, 32, 128, 1);
    Rng rng(8);

    SUBCASE("no users leaves pure noise") {
        const auto s = synthesize(pilots, UserPopulation{}, {}, 16, 0.0, 5);
        CHECK(s.pilot_rx.rows() == 32);
        CHECK(s.data_rx.rows() == 16);
        CHECK(s.pilot_rx.cwiseAbs().maxCoeff() == 0.0);
        // same noise is added whether or not users are present
        const auto pop = manual_population({{3, 0.5}}, 2, rng);
        const auto noisy0 = synthesize(pilots, UserPopulation{}, {}, 16, 2.0, 5);
        const auto noisy1 = synthesize(pilots, pop, {}, 16, 2.0, 5);
        const auto clean1 = synthesize(pilots, pop, {}, 16, 0.0, 5);
        CHECK(((noisy1.pilot_rx - clean1.pilot_rx) - noisy0.pilot_rx).norm() < 1e-12);
        CHECK(noisy0.pilot_rx.squaredNorm() / double(noisy0.pilot_rx.size()) == doctest::Approx(2.0).epsilon(0.25));
    }

    SUBCASE("one user, noiseless: rank one along its pilot") {
        auto pop = manual_population({{7, 0.3}}, 4, rng);
        const CVector sym = CVector::Constant(16, cd(1, 0));
        const auto s = synthesize(pilots, pop, {sym}, 16, 0.0, 1);
        const CVector a = pilots.column(7);
        const CMatrix proj = a * (a.adjoint() * s.pilot_rx) / 32.0;
        CHECK((s.pilot_rx - proj).norm() < 1e-12 * s.pilot_rx.norm());
        const CMatrix expect = std::sqrt(0.3) * a * pop.users[0].channel.transpose();
        CHECK((s.pilot_rx - expect).norm() < 1e-12);
        CHECK((s.data_rx - std::sqrt(0.3) * sym * pop.users[0].channel.transpose()).norm() < 1e-12);
    }

    SUBCASE("colliding users add their received powers on the shared column") {
        const int redraws = 10000;
        double acc = 0;
        for (int t = 0; t < redraws; ++t) {
            const auto pop = manual_population({{5, 0.2}, {5, 0.7}}, 1, rng);
            const auto s = synthesize(pilots, pop, {}, 4, 0.0, 1);
            const cd c = (pilots.column(5).adjoint() * s.pilot_rx)(0, 0) / 32.0;
            acc += std::norm(c);
        }
        const double mean = acc / redraws;
        // exponential with mean 0.9: standard error 0.9 / sqrt(n)
        CHECK(std::abs(mean - 0.9) < 3 * 0.9 / std::sqrt(double(redraws)));
    }

    SUBCASE("dimension mismatch") {
        auto pop = manual_population({{1, 1.0}}, 2, rng);
        CHECK_THROWS_AS(synthesize(pilots, pop, {CVector::Zero(3)}, 4, 1.0, 1), ConfigError);
        pop.users[0].pilot = 500;
        CHECK_THROWS_AS(synthesize(pilots, pop, {}, 4, 1.0, 1), ConfigError);
    }

    SUBCASE("reproducible from the seed") {
        const auto pop = manual_population({{1, 1.0}, {9, 0.1}}, 3, rng);
        const auto a = synthesize(pilots, pop, {}, 8, 1.0, 77);
        const auto b = synthesize(pilots, pop, {}, 8, 1.0, 77);
        CHECK(a.pilot_rx == b.pilot_rx);
        CHECK(a.data_rx == b.data_rx);
    }
}
