#include <doctest.h>

#include <complex>
#include <numbers>

#include "ura/pilot_codebook.hpp"
#include "ura/rng.hpp"

using namespace ura;

namespace {

CMatrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    Rng rng(seed);
    CMatrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.complex_normal();
    return m;
}

double rel_err(const CMatrix& a, const CMatrix& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

}  // namespace

TEST_CASE("4-point DFT rows {0,2}") {
    const auto a = PilotMatrix::from_dft_rows({0, 2}, 4);
    // explicit entries exp(-2 pi j r i / 4)
    CMatrix expected(2, 4);
    expected << 1, 1, 1, 1,
                1, -1, 1, -1;
    CHECK(rel_err(a.dense(), expected) < 1e-15);
    for (std::size_t i = 0; i < 4; ++i) CHECK(a.column(i).squaredNorm() == doctest::Approx(2.0).epsilon(1e-15));
    const CMatrix gram = a.dense().adjoint() * a.dense();
    const CMatrix gram_expected = expected.adjoint() * expected;
    CHECK(rel_err(gram, gram_expected) < 1e-15);
    CHECK(std::abs(gram(0, 1)) < 1e-15);
    CHECK(std::abs(gram(0, 2) - 2.0) < 1e-15);
}

TEST_CASE("DFT column norms are exactly n_p") {
    const auto a = PilotMatrix::build(PilotKind::SubsampledDft, 100, 1024, 7);
    for (std::size_t i = 0; i < 1024; i += 37) CHECK(a.column(i).squaredNorm() == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("Gaussian pilots: unit columns scaled to n_p and low coherence") {
    const std::size_t np = 64, n = 1000;
    const auto a = PilotMatrix::build(PilotKind::GaussianIid, np, n, 3);
    const CMatrix d = a.dense();
    double mean = 0, max_coh = 0;
    for (Eigen::Index i = 0; i < d.cols(); ++i) {
        CHECK(std::abs(d.col(i).squaredNorm() - double(np)) / double(np) < 1e-10);
        mean += d.col(i).squaredNorm();
    }
    mean /= double(n);
    CHECK(mean == doctest::Approx(double(np)).epsilon(1e-10));
    double coh2 = 0;
    for (Eigen::Index i = 0; i + 1 < d.cols(); i += 2) {
        const double c = std::abs(d.col(i).dot(d.col(i + 1))) / double(np);
        coh2 += c * c;
        max_coh = std::max(max_coh, c);
    }
    // E|a_i^H a_j|^2 / n_p^2 = 1 / n_p for independent columns
    coh2 /= double(n / 2);
    CHECK(coh2 * double(np) == doctest::Approx(1.0).epsilon(0.15));
    CHECK(max_coh < 5.0 / std::sqrt(double(np)));
}

TEST_CASE("fast transform matches the dense product; adjoint consistency") {
    for (bool scramble : {false, true}) {
        const auto a = PilotMatrix::build(PilotKind::SubsampledDft, 48, 256, 11, scramble);
        const CMatrix dense = a.dense();
        const CMatrix x = random_matrix(256, 3, 1);
        const CMatrix z = random_matrix(48, 3, 2);
        CHECK(rel_err(a.apply(x), dense * x) < 1e-9);
        CHECK(rel_err(a.apply_adjoint(z), dense.adjoint() * z) < 1e-9);
        const cd lhs = (a.apply(x).adjoint() * z).trace();
        const cd rhs = (x.adjoint() * a.apply_adjoint(z)).trace();
        CHECK(std::abs(lhs - rhs) / std::abs(rhs) < 1e-9);
    }
    const auto g = PilotMatrix::build(PilotKind::GaussianIid, 20, 50, 5);
    const CMatrix x = random_matrix(50, 2, 9);
    CHECK(rel_err(g.apply(x), g.dense() * x) < 1e-12);
}

TEST_CASE("DFT rows are distinct and the build is deterministic") {
    const auto a = PilotMatrix::build(PilotKind::SubsampledDft, 64, 128, 42);
    const auto b = PilotMatrix::build(PilotKind::SubsampledDft, 64, 128, 42);
    const auto c = PilotMatrix::build(PilotKind::SubsampledDft, 64, 128, 43);
    CHECK(a.dense() == b.dense());
    CHECK(a.dense() != c.dense());
    auto rows = a.dft_rows();
    std::sort(rows.begin(), rows.end());
    CHECK(std::adjacent_find(rows.begin(), rows.end()) == rows.end());
    CHECK(rows.back() < 128);
    const auto g1 = PilotMatrix::build(PilotKind::GaussianIid, 10, 20, 4);
    const auto g2 = PilotMatrix::build(PilotKind::GaussianIid, 10, 20, 4);
    CHECK(g1.dense() == g2.dense());
}

TEST_CASE("n_p > N is rejected for the DFT kind") {
    CHECK_THROWS_AS(PilotMatrix::build(PilotKind::SubsampledDft, 65, 64, 1), ConfigError);
    CHECK_THROWS_AS(pilot_kind_from_string("hadamard"), ConfigError);
    CHECK(pilot_kind_from_string("dft") == PilotKind::SubsampledDft);
    CHECK(pilot_kind_from_string("gaussian") == PilotKind::GaussianIid);
}

TEST_CASE("message prefix to pilot index") {
    Bits zeros(20, 0);
    CHECK(message_to_pilot(zeros, 16) == 0);
    Bits b{1, 0, 1, 1, 1, 0};
    CHECK(message_to_pilot(b, 3) == 5);
    CHECK(pilot_to_prefix(5, 3) == Bits{1, 0, 1});
    CHECK_THROWS_AS(message_to_pilot(Bits{1, 0}, 3), ConfigError);

    Rng rng(77);
    for (int t = 0; t < 10000; ++t) {
        const unsigned j = 1 + static_cast<unsigned>(t % 24);
        Bits m(40);
        for (auto& x : m) x = rng.bit();
        const Bits prefix = pilot_to_prefix(message_to_pilot(m, j), j);
        REQUIRE(prefix == Bits(m.begin(), m.begin() + j));
    }
}
