#include <doctest.h>

#include <numeric>
#include <random>

#include "ura/link_analysis.hpp"

using namespace ura;

namespace {

// Direct evaluation of the staged SINR expression, user by user.
double staged_oracle(const RVector& p, const RVector& s, const std::vector<std::size_t>& stage, const RVector& e,
                     std::size_t m, double n0, Eigen::Index k) {
    double denom = n0 + s(k) * p(k);
    for (Eigen::Index j = 0; j < p.size(); ++j) {
        if (j == k) continue;
        if (stage[j] < stage[k]) denom += ((1 - e(j)) * s(j) + e(j)) * p(j);
        else denom += p(j);
    }
    return double(m) * (1 - s(k)) * p(k) / denom;
}

const ErrorModel kNormal(NormalApprox{512, 84});

}  // namespace

TEST_CASE("scalar SINR values") {
    RVector p(2), s = RVector::Zero(2);
    p << 1.0, 0.4;
    const auto v = sinr_no_sic(p, s, 6, 1.0);
    CHECK(v(0) == doctest::Approx(6.0 / 1.4));
    CHECK(v(0) == doctest::Approx(4.2857).epsilon(1e-4));
    RVector one(1), zero = RVector::Zero(1), full = RVector::Ones(1);
    one << 1.0;
    CHECK(sinr_no_sic(one, zero, 50, 1.0)(0) == doctest::Approx(50.0));
    CHECK(sinr_no_sic(one, full, 50, 1.0)(0) == 0.0);
    CHECK(orthogonal_mse(1.0, 9, 1.0) == doctest::Approx(0.1));
    CHECK_THROWS_AS(sinr_staged(p, s, {0}, RVector::Zero(2), 4, 1.0), ConfigError);
}

TEST_CASE("staged SINR against direct evaluation") {
    Rng rng(3);
    for (int t = 0; t < 200; ++t) {
        const Eigen::Index k = 1 + Eigen::Index(rng.next() % 7);
        RVector p(k), s(k), e(k);
        std::vector<std::size_t> stage(k);
        for (Eigen::Index i = 0; i < k; ++i) {
            p(i) = 0.01 + rng.uniform();
            s(i) = 0.5 * rng.uniform();
            e(i) = rng.uniform();
            stage[i] = rng.next() % 4;
        }
        const auto v = sinr_staged(p, s, stage, e, 8, 0.7);
        for (Eigen::Index i = 0; i < k; ++i) CHECK(v(i) == doctest::Approx(staged_oracle(p, s, stage, e, 8, 0.7, i)).epsilon(1e-12));
    }
}

TEST_CASE("error indicators at the extremes") {
    RVector p(3), s(3);
    p << 3.0, 2.0, 1.0;
    s << 0.1, 0.2, 0.3;
    const std::vector<std::size_t> stage{0, 1, 2};
    // all decoded: only the estimation residual of earlier users remains
    const auto ok = sinr_staged(p, s, stage, RVector::Zero(3), 4, 1.0);
    CHECK(ok(2) == doctest::Approx(4 * 0.7 * 1.0 / (1.0 + 0.3 + 0.3 + 0.4)));
    // all failed: identical to no cancellation
    const auto bad = sinr_staged(p, s, stage, RVector::Ones(3), 4, 1.0);
    const auto none = sinr_no_sic(p, s, 4, 1.0);
    CHECK((bad - none).norm() < 1e-12);
}

TEST_CASE("sampled SIC matches exhaustive enumeration over indicators") {
    RVector p(3), s(3);
    p << 1.2, 1.0, 0.9;
    s << 0.05, 0.05, 0.05;
    const std::vector<std::size_t> stage{0, 1, 2};
    const std::size_t m = 1;
    const double n0 = 3.5;
    const ErrorModel model(NormalApprox{40, 10});
    // P(user 3 fails) summed over the 2^2 outcomes of the first two users, then the 2^3 joint law
    double p_fail3 = 0;
    std::vector<double> joint(8, 0.0);
    for (int e1 = 0; e1 < 2; ++e1)
        for (int e2 = 0; e2 < 2; ++e2)
            for (int e3 = 0; e3 < 2; ++e3) {
                RVector e(3);
                e << 0, 0, 0;
                const double q1 = model.pe(sinr_staged(p, s, stage, e, m, n0)(0));
                e(0) = e1;
                const double q2 = model.pe(sinr_staged(p, s, stage, e, m, n0)(1));
                e(1) = e2;
                const double q3 = model.pe(sinr_staged(p, s, stage, e, m, n0)(2));
                const double pr = (e1 ? q1 : 1 - q1) * (e2 ? q2 : 1 - q2) * (e3 ? q3 : 1 - q3);
                joint[e1 * 4 + e2 * 2 + e3] = pr;
                if (e3) p_fail3 += pr;
            }
    CHECK(std::accumulate(joint.begin(), joint.end(), 0.0) == doctest::Approx(1.0));
    Rng rng(5);
    const int n = 40000;
    std::vector<double> freq(8, 0.0);
    for (int t = 0; t < n; ++t) {
        const auto smp = sinr_sic_sample(p, s, stage, m, n0, model, rng);
        freq[int(smp.eps(0)) * 4 + int(smp.eps(1)) * 2 + int(smp.eps(2))] += 1.0 / n;
    }
    for (int i = 0; i < 8; ++i) CHECK(std::abs(freq[i] - joint[i]) < 4 * std::sqrt(joint[i] * (1 - joint[i]) / n) + 1e-9);
    CHECK(p_fail3 > 0.05);
    CHECK(p_fail3 < 0.95);
    // full SIC orders by decreasing power
    Rng r1(9), r2(9);
    const auto a = sinr_full_sic(p, s, m, n0, model, r1);
    const auto b = sinr_sic_sample(p, s, stage, m, n0, model, r2);
    CHECK(a.sinr == b.sinr);
}

TEST_CASE("level form") {
    SUBCASE("one level equals the no-SIC expression with equal powers") {
        const auto lv = sinr_levels({0.2}, {10}, {0.05}, {0.3}, 16, 1.0);
        const RVector p = RVector::Constant(10, 0.2), s = RVector::Constant(10, 0.05);
        CHECK(lv(0) == doctest::Approx(sinr_no_sic(p, s, 16, 1.0)(0)));
    }
    SUBCASE("levels equal staged users with fractional indicators") {
        const std::vector<double> levels{1.0, 0.5, 0.2}, counts{2, 3, 4}, mse{0.05, 0.1, 0.2}, frac{0.1, 0.0, 0.4};
        const auto lv = sinr_levels(levels, counts, mse, frac, 8, 1.0);
        RVector p(9), s(9), e(9);
        std::vector<std::size_t> stage;
        Eigen::Index k = 0;
        for (std::size_t q = 0; q < 3; ++q)
            for (int c = 0; c < counts[q]; ++c, ++k) {
                p(k) = levels[q];
                s(k) = mse[q];
                e(k) = frac[q];
                stage.push_back(q);
            }
        const auto st = sinr_staged(p, s, stage, e, 8, 1.0);
        CHECK(lv(0) == doctest::Approx(st(0)));
        CHECK(lv(1) == doctest::Approx(st(2)));
        CHECK(lv(2) == doctest::Approx(st(8)));
    }
    SUBCASE("no residual errors") {
        const auto lv = sinr_levels({1.0, 0.1}, {1, 1}, {0.0, 0.0}, {0.0, 0.0}, 4, 1.0);
        CHECK(lv(1) == doctest::Approx(4 * 0.1 / 1.0));
    }
    SUBCASE("mean-field recursion") {
        const std::vector<double> levels{0.05, 0.02}, counts{10, 10}, mse{0.1, 0.2};
        const auto mf = sinr_levels_mean_field(levels, counts, mse, 16, 1.0, kNormal);
        const double p0 = kNormal.pe(mf(0));
        const auto direct = sinr_levels(levels, counts, mse, {p0, 0.0}, 16, 1.0);
        CHECK(mf(1) == doctest::Approx(direct(1)));
    }
}

TEST_CASE("cancellation never lowers SINR") {
    Rng rng(7);
    for (int t = 0; t < 100; ++t) {
        RVector p(6), s(6);
        for (int i = 0; i < 6; ++i) {
            p(i) = db_to_linear(-20 + 15 * rng.uniform());
            s(i) = 0.3 * rng.uniform();
        }
        std::vector<std::size_t> order(6);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return p(a) > p(b); });
        std::vector<std::size_t> full(6), grouped(6);
        for (std::size_t r = 0; r < 6; ++r) {
            full[order[r]] = r;
            grouped[order[r]] = r / 3;
        }
        const RVector z = RVector::Zero(6);
        const auto sf = sinr_staged(p, s, full, z, 8, 1.0);
        const auto sg = sinr_staged(p, s, grouped, z, 8, 1.0);
        const auto sn = sinr_no_sic(p, s, 8, 1.0);
        for (int i = 0; i < 6; ++i) {
            CHECK(sf(i) >= sg(i) * (1 - 1e-12));
            CHECK(sg(i) >= sn(i) * (1 - 1e-12));
        }
        const auto mf = sinr_staged_mean_field(p, s, full, 8, 1.0, kNormal);
        for (int i = 0; i < 6; ++i) CHECK(mf(i) >= sn(i) * (1 - 1e-12));
    }
}

TEST_CASE("outage quantile") {
    SUBCASE("uniform SINR") {
        Rng rng(2);
        auto sampler = [&](std::size_t) {
            RVector v(1);
            v(0) = rng.uniform(1.0, 2.0);
            return v;
        };
        const auto r = outage_quantile(sampler, 0.1, 20000, kNormal);
        CHECK(r.quantile(0) == doctest::Approx(1.1).epsilon(0.02));
    }
    SUBCASE("deterministic profile is its own quantile") {
        auto sampler = [](std::size_t) {
            RVector v(2);
            v << 0.3, 0.7;
            return v;
        };
        const auto r = outage_quantile(sampler, 0.05, 400, kNormal);
        CHECK(r.quantile(0) == 0.3);
        CHECK(r.quantile(1) == 0.7);
        CHECK(r.pmd_bound == doctest::Approx(0.95 * 0.5 * (kNormal.pe(0.3) + kNormal.pe(0.7)) + 0.05));
        const ErrorModel never(EmpiricalCurve{{-10, 10}, {0.0, 0.0}});
        CHECK(outage_quantile(sampler, 0.05, 400, never).pmd_bound == doctest::Approx(0.05));
    }
    SUBCASE("too few samples") {
        auto sampler = [](std::size_t) { return RVector::Ones(1); };
        CHECK_THROWS_AS(outage_quantile(sampler, 0.01, 500, kNormal), ConfigError);
        CHECK_THROWS_AS(outage_quantile(sampler, 0.0, 500, kNormal), ConfigError);
    }
}

TEST_CASE("normal approximation") {
    const double rate = 84.0 / 1024.0;
    const double shannon = std::pow(2.0, 2 * rate) - 1;
    CHECK(normal_approx_pe(shannon, 512, 84) == doctest::Approx(0.5));
    CHECK(normal_approx_pe(shannon * 1.5, 512, 84) < 0.5);
    CHECK(awgn_dispersion(0.0) == 0.0);
    CHECK(normal_approx_pe(0.0, 512, 84) == 1.0);
    // dispersion tends to log2(e)^2 / 2 at high SINR
    CHECK(awgn_dispersion(1e9) == doctest::Approx(0.5 * std::pow(std::log2(std::exp(1.0)), 2)).epsilon(1e-6));
    for (double target : {0.5, 0.1, 0.05, 1e-3}) {
        const double s = required_sinr(kNormal, target);
        CHECK(kNormal.pe(s) == doctest::Approx(target).epsilon(1e-6));
    }
    CHECK_THROWS_AS(required_sinr(kNormal, 0.0), ConfigError);
    CHECK_THROWS_AS(ErrorModel(NormalApprox{0, 10}), ConfigError);
    CHECK(q_function(0.0) == doctest::Approx(0.5));
    CHECK(q_function(1.959963984540054) == doctest::Approx(0.025));
}

TEST_CASE("empirical curve") {
    const ErrorModel m(EmpiricalCurve{{-8, -7, -6}, {0.5, 0.05, 0.07}});
    CHECK(m.empirical());
    CHECK(m.pe(db_to_linear(-7)) == doctest::Approx(0.05));
    CHECK(m.pe(db_to_linear(-6)) == doctest::Approx(0.05));  // forced non-increasing
    CHECK(m.pe(db_to_linear(-7.5)) == doctest::Approx(std::sqrt(0.5 * 0.05)));
    CHECK(m.pe(db_to_linear(-20)) == 0.5);
    CHECK(m.extrapolated(db_to_linear(-9)));
    CHECK_FALSE(m.extrapolated(db_to_linear(-7.2)));
    CHECK(linear_to_db(required_sinr(m, 0.05)) == doctest::Approx(-7.0).epsilon(1e-6));
    CHECK_THROWS_AS(required_sinr(m, 0.01), InfeasibleError);
    CHECK_THROWS_AS(ErrorModel(EmpiricalCurve{{-8, -9}, {0.5, 0.1}}), ConfigError);
    const auto from = ErrorModel::from_curve({{-1.0, 100, 50, 0}, {0.0, 100, 5, 0}});
    CHECK(from.pe(1.0) == doctest::Approx(0.05));
}

TEST_CASE("fading average") {
    const double s = db_to_linear(-7.5);
    CHECK(fading_averaged_pe(kNormal, s, 20000) == doctest::Approx(kNormal.pe(s)).epsilon(0.01));
    std::mt19937_64 eng(3);
    std::gamma_distribution<double> gam(16.0, 1.0 / 16.0);
    const int n = 100000;
    double acc = 0, acc2 = 0;
    for (int i = 0; i < n; ++i) {
        const double v = kNormal.pe(s * gam(eng));
        acc += v;
        acc2 += v * v;
    }
    const double mean = acc / n, se = std::sqrt((acc2 / n - mean * mean) / n);
    CHECK(std::abs(fading_averaged_pe(kNormal, s, 16) - mean) < 4 * se);
    CHECK_THROWS_AS(fading_averaged_pe(kNormal, s, 0), ConfigError);
}

TEST_CASE("group counts") {
    const double inf = std::numeric_limits<double>::infinity();
    const auto n = group_counts({-100, -110, -110.5, -130, -95}, {inf, -105, -120, -inf});
    CHECK(n == std::vector<std::size_t>{2, 2, 1});
    CHECK_THROWS_AS(group_counts({}, {inf}), ConfigError);
}
