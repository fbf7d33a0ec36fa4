#ifndef GRASPEVO_LP_HPP
#define GRASPEVO_LP_HPP

#include <graspevo/error.hpp>
#include <graspevo/math.hpp>

#include <cmath>
#include <cstddef>

namespace graspevo::lp {

struct FeasibilityResult {
    bool feasible = false;
    double infeasibility = 0.0; // phase-1 optimum: summed artificial slack
    VecX x;
    int iterations = 0;
};

/// Phase-1 simplex on a dense tableau. Decides whether some x >= 0 satisfies
///   A_eq x = b_eq  and  A_le x <= b_le  (b_le >= 0 required).
/// Feasible when the minimal summed slack is <= tolerance. Dantzig pricing,
/// falling back to Bland's rule after `bland_after` pivots to rule out cycling.
inline FeasibilityResult find_feasible(const MatX& a_eq, const VecX& b_eq, const MatX& a_le, const VecX& b_le,
    double tolerance = 1e-7, int max_iterations = 20000, int bland_after = 2000)
{
    const Eigen::Index n = a_eq.cols() > 0 ? a_eq.cols() : a_le.cols();
    const Eigen::Index m_eq = a_eq.rows();
    const Eigen::Index m_le = a_le.rows();
    if ((m_eq > 0 && a_eq.cols() != n) || (m_le > 0 && a_le.cols() != n) || b_eq.size() != m_eq || b_le.size() != m_le)
        throw Error("lp-failed", "inconsistent dimensions");
    if (m_le > 0 && b_le.minCoeff() < 0.0)
        throw Error("lp-failed", "inequality right-hand side must be nonnegative");

    const Eigen::Index m = m_eq + m_le;
    const Eigen::Index cols = n + m_le + m_eq; // structural, slack, artificial
    MatX t = MatX::Zero(m + 1, cols + 1);      // last row: reduced costs; last col: rhs
    Eigen::VectorXi basis(m);

    for (Eigen::Index i = 0; i < m_eq; ++i) {
        const double sign = b_eq[i] < 0.0 ? -1.0 : 1.0;
        t.row(i).head(n) = sign * a_eq.row(i);
        t(i, n + m_le + i) = 1.0;
        t(i, cols) = sign * b_eq[i];
        basis[i] = static_cast<int>(n + m_le + i);
    }
    for (Eigen::Index i = 0; i < m_le; ++i) {
        const Eigen::Index r = m_eq + i;
        t.row(r).head(n) = a_le.row(i);
        t(r, n + i) = 1.0;
        t(r, cols) = b_le[i];
        basis[r] = static_cast<int>(n + i);
    }
    // Phase-1 objective: minimize the artificial sum, priced out against the initial basis.
    for (Eigen::Index i = 0; i < m_eq; ++i)
        t.row(m) -= t.row(i);
    for (Eigen::Index i = 0; i < m_eq; ++i)
        t(m, n + m_le + i) = 0.0;

    constexpr double pivot_eps = 1e-11;
    FeasibilityResult res;
    for (;;) {
        if (res.iterations >= max_iterations)
            throw Error("lp-failed", "iteration limit");

        Eigen::Index enter = -1;
        double most_negative = -1e-12;
        const bool bland = res.iterations >= bland_after;
        for (Eigen::Index j = 0; j < cols; ++j) {
            if (t(m, j) < most_negative) {
                enter = j;
                if (bland)
                    break;
                most_negative = t(m, j);
            }
        }
        if (enter < 0)
            break;

        Eigen::Index leave = -1;
        double best_ratio = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            const double a = t(i, enter);
            if (a <= pivot_eps)
                continue;
            const double ratio = t(i, cols) / a;
            if (leave < 0 || ratio < best_ratio - 1e-15 || (std::abs(ratio - best_ratio) <= 1e-15 && basis[i] < basis[leave])) {
                leave = i;
                best_ratio = ratio;
            }
        }
        if (leave < 0)
            break; // unbounded direction cannot occur in phase 1 (objective bounded below by 0)

        t.row(leave) /= t(leave, enter);
        for (Eigen::Index i = 0; i <= m; ++i) {
            if (i == leave)
                continue;
            const double f = t(i, enter);
            if (f != 0.0)
                t.row(i) -= f * t.row(leave);
        }
        basis[leave] = static_cast<int>(enter);
        ++res.iterations;
    }

    res.infeasibility = -t(m, cols);
    if (!std::isfinite(res.infeasibility))
        throw Error("lp-failed", "non-finite objective");
    res.feasible = res.infeasibility <= tolerance;
    res.x = VecX::Zero(n);
    for (Eigen::Index i = 0; i < m; ++i)
        if (basis[i] < n)
            res.x[basis[i]] = t(i, cols);
    return res;
}

} // namespace graspevo::lp

#endif
