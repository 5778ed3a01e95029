#pragma once

#include <vector>

namespace ura {

struct LpResult {
    enum class Status { Optimal, Infeasible, Unbounded };
    Status status = Status::Infeasible;
    std::vector<double> x;
    double objective = 0;

    bool optimal() const { return status == Status::Optimal; }
};

/// Dense two-phase simplex for  min c^T x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0.
/// Dantzig pricing with a switch to Bland's rule after a run of degenerate pivots.
LpResult solve_lp(const std::vector<double>& c, const std::vector<std::vector<double>>& a_ub,
                  const std::vector<double>& b_ub, const std::vector<std::vector<double>>& a_eq,
                  const std::vector<double>& b_eq);

}  // namespace ura
