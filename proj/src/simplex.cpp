#include "ura/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ura/common.hpp"

namespace ura {

namespace {

constexpr double kEps = 1e-10;

class Tableau {
public:
    Tableau(std::size_t rows, std::size_t cols) : m_(rows), n_(cols), t_((rows + 1) * (cols + 1), 0.0), basis_(rows) {}

    double& at(std::size_t i, std::size_t j) { return t_[i * (n_ + 1) + j]; }
    double at(std::size_t i, std::size_t j) const { return t_[i * (n_ + 1) + j]; }
    double& rhs(std::size_t i) { return at(i, n_); }
    double& cost(std::size_t j) { return at(m_, j); }
    std::size_t& basis(std::size_t i) { return basis_[i]; }
    std::size_t rows() const { return m_; }
    std::size_t cols() const { return n_; }

    void pivot(std::size_t r, std::size_t c) {
        const double p = at(r, c);
        for (std::size_t j = 0; j <= n_; ++j) at(r, j) /= p;
        for (std::size_t i = 0; i <= m_; ++i) {
            if (i == r) continue;
            const double f = at(i, c);
            if (f == 0.0) continue;
            for (std::size_t j = 0; j <= n_; ++j) at(i, j) -= f * at(r, j);
            at(i, c) = 0.0;
        }
        basis_[r] = c;
    }

    // Returns false if unbounded. `allowed` masks columns that may enter.
    bool optimize(const std::vector<char>& allowed) {
        std::size_t degenerate = 0;
        const std::size_t limit = 50 * (m_ + n_) + 1000;
        for (std::size_t it = 0; it < limit; ++it) {
            const bool bland = degenerate > 2 * (m_ + 1);
            std::size_t enter = n_;
            double best = -kEps;
            for (std::size_t j = 0; j < n_; ++j) {
                if (!allowed[j]) continue;
                const double d = at(m_, j);
                if (bland) {
                    if (d < -kEps) {
                        enter = j;
                        break;
                    }
                } else if (d < best) {
                    best = d;
                    enter = j;
                }
            }
            if (enter == n_) return true;
            std::size_t leave = m_;
            double ratio = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < m_; ++i) {
                const double a = at(i, enter);
                if (a <= kEps) continue;
                const double r = at(i, n_) / a;
                if (r < ratio - 1e-12 || (std::abs(r - ratio) <= 1e-12 && leave < m_ && basis_[i] < basis_[leave])) {
                    ratio = r;
                    leave = i;
                }
            }
            if (leave == m_) return false;
            degenerate = ratio <= 1e-12 ? degenerate + 1 : 0;
            pivot(leave, enter);
        }
        throw DivergenceError("simplex iteration limit reached");
    }

private:
    std::size_t m_, n_;
    std::vector<double> t_;
    std::vector<std::size_t> basis_;
};

}  // namespace

LpResult solve_lp(const std::vector<double>& c, const std::vector<std::vector<double>>& a_ub,
                  const std::vector<double>& b_ub, const std::vector<std::vector<double>>& a_eq,
                  const std::vector<double>& b_eq) {
    const std::size_t n = c.size();
    const std::size_t mu = a_ub.size(), me = a_eq.size();
    if (b_ub.size() != mu || b_eq.size() != me) throw ConfigError("LP: constraint and bound counts differ");
    for (const auto& r : a_ub)
        if (r.size() != n) throw ConfigError("LP: inequality row has wrong width");
    for (const auto& r : a_eq)
        if (r.size() != n) throw ConfigError("LP: equality row has wrong width");

    const std::size_t m = mu + me;
    // rows needing an artificial variable: negative-rhs inequalities and all equalities
    std::vector<std::size_t> art_row;
    for (std::size_t i = 0; i < mu; ++i)
        if (b_ub[i] < 0) art_row.push_back(i);
    for (std::size_t i = 0; i < me; ++i) art_row.push_back(mu + i);
    const std::size_t na = art_row.size();
    const std::size_t cols = n + mu + na;
    Tableau t(m, cols);

    for (std::size_t i = 0; i < mu; ++i) {
        const double s = b_ub[i] < 0 ? -1.0 : 1.0;
        for (std::size_t j = 0; j < n; ++j) t.at(i, j) = s * a_ub[i][j];
        t.at(i, n + i) = s;
        t.rhs(i) = s * b_ub[i];
        t.basis(i) = n + i;
    }
    for (std::size_t i = 0; i < me; ++i) {
        const double s = b_eq[i] < 0 ? -1.0 : 1.0;
        for (std::size_t j = 0; j < n; ++j) t.at(mu + i, j) = s * a_eq[i][j];
        t.rhs(mu + i) = s * b_eq[i];
    }
    for (std::size_t a = 0; a < na; ++a) {
        t.at(art_row[a], n + mu + a) = 1.0;
        t.basis(art_row[a]) = n + mu + a;
    }

    LpResult res;
    std::vector<char> allowed(cols, 1);
    if (na > 0) {
        // phase 1: minimize the sum of artificials
        for (std::size_t j = 0; j <= cols; ++j) t.cost(j) = 0.0;
        for (std::size_t a = 0; a < na; ++a) t.cost(n + mu + a) = 1.0;
        for (auto r : art_row)
            for (std::size_t j = 0; j <= cols; ++j) t.cost(j) -= t.at(r, j);
        t.optimize(allowed);
        double scale = 1.0;
        for (auto v : b_ub) scale = std::max(scale, std::abs(v));
        for (auto v : b_eq) scale = std::max(scale, std::abs(v));
        if (-t.cost(cols) > 1e-9 * scale) return res;
        // drive remaining artificials out of the basis
        for (std::size_t i = 0; i < m; ++i) {
            if (t.basis(i) < n + mu) continue;
            for (std::size_t j = 0; j < n + mu; ++j)
                if (std::abs(t.at(i, j)) > 1e-9) {
                    t.pivot(i, j);
                    break;
                }
        }
        for (std::size_t a = 0; a < na; ++a) allowed[n + mu + a] = 0;
    }

    // phase 2
    for (std::size_t j = 0; j <= cols; ++j) t.cost(j) = j < n ? c[j] : 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t b = t.basis(i);
        const double cb = b < n ? c[b] : 0.0;
        if (cb == 0.0) continue;
        for (std::size_t j = 0; j <= cols; ++j) t.cost(j) -= cb * t.at(i, j);
    }
    if (!t.optimize(allowed)) {
        res.status = LpResult::Status::Unbounded;
        return res;
    }
    res.status = LpResult::Status::Optimal;
    res.x.assign(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        if (t.basis(i) < n) res.x[t.basis(i)] = std::max(0.0, t.rhs(i));
    res.objective = 0;
    for (std::size_t j = 0; j < n; ++j) res.objective += c[j] * res.x[j];
    return res;
}

}  // namespace ura
