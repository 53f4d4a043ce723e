#pragma once

// Discretized eigendecomposition of the smoothed covariance surface.

#include "fqif/kernelsmooth.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>
#include <variant>

namespace fqif {

/// Eigenvalues and grid-sampled eigenfunctions of the covariance operator.
/// Eigenfunctions are normalized so the rectangle rule gives unit L2 norm:
/// delta * sum_j phi_r(t_j)^2 = 1.
struct EigenSystem {
    TimeGrid grid;
    VectorXd eigenvalues;    // all G, descending, negatives clipped to 0
    MatrixXd eigenfunctions; // K_max x G, rows are phi_r on the grid
    VectorXd fve;            // cumulative fraction of variance, over positive eigenvalues
    int retained = 0;        // count of positive eigenvalues, capped at K_max

    double spacing() const { return grid.spacing(); }
};

inline int default_k_max(int g) { return std::min(g, 20); }

inline EigenSystem eigen_decompose(const SmoothedCovariance& cov, int k_max = -1) {
    const int g = cov.grid.size();
    if (!cov.values.allFinite()) throw std::invalid_argument("eigen_decompose: non-finite surface");
    if (k_max < 0) k_max = default_k_max(g);
    const double delta = cov.grid.spacing();

    Eigen::SelfAdjointEigenSolver<MatrixXd> solver(cov.values * delta);
    if (solver.info() != Eigen::Success) throw std::runtime_error("eigen_decompose: eigensolver failed");

    EigenSystem sys;
    sys.grid = cov.grid;
    sys.eigenvalues.resize(g);
    sys.eigenfunctions.resize(k_max, g);
    const double inv_sqrt_delta = 1.0 / std::sqrt(delta);

    // numerically-zero eigenvalues count as zero, not as retained components
    const double tol = 1e-12 * std::max(0.0, solver.eigenvalues().maxCoeff());
    int positive = 0;
    for (int r = 0; r < g; ++r) {
        const double lam = solver.eigenvalues()[g - 1 - r];  // descending
        sys.eigenvalues[r] = lam > tol ? lam : 0.0;
        if (lam > tol) ++positive;
        if (r < k_max) {
            VectorXd v = solver.eigenvectors().col(g - 1 - r) * inv_sqrt_delta;
            int arg = 0;
            v.cwiseAbs().maxCoeff(&arg);
            if (v[arg] < 0.0) v = -v;  // sign: largest-magnitude entry positive
            sys.eigenfunctions.row(r) = v.transpose();
        }
    }
    sys.retained = std::min(positive, k_max);

    const double total = sys.eigenvalues.sum();
    sys.fve.resize(g);
    double cum = 0.0;
    for (int r = 0; r < g; ++r) {
        cum += sys.eigenvalues[r];
        sys.fve[r] = total > 0.0 ? cum / total : 0.0;
    }
    if (total > 0.0) sys.fve[g - 1] = 1.0;
    return sys;
}

struct KappaFixed { int k; };
struct KappaFveThreshold { double tau; };
using KappaPolicy = std::variant<KappaFixed, KappaFveThreshold>;

inline int select_kappa(const EigenSystem& sys, const KappaPolicy& policy) {
    if (sys.retained < 1) throw std::invalid_argument("select_kappa: no positive eigenvalues");
    if (const auto* fixed = std::get_if<KappaFixed>(&policy)) {
        if (fixed->k < 1) throw std::invalid_argument("select_kappa: Fixed(k) needs k >= 1");
        return std::min(fixed->k, sys.retained);
    }
    const double tau = std::get<KappaFveThreshold>(policy).tau;
    if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("select_kappa: threshold must be in (0,1)");
    for (int k = 1; k <= sys.retained; ++k)
        if (sys.fve[k - 1] >= tau) return k;
    return sys.retained;
}

/// phi_r at an off-grid time by linear interpolation (clamped at the grid ends).
inline double eval_eigenfunction(const EigenSystem& sys, int r, double t) {
    if (r < 0 || r >= sys.retained) throw std::out_of_range("eval_eigenfunction: component index out of range");
    const auto& pts = sys.grid.points;
    const int g = sys.grid.size();
    if (t <= pts.front()) return sys.eigenfunctions(r, 0);
    if (t >= pts.back()) return sys.eigenfunctions(r, g - 1);
    const int lo = static_cast<int>(std::upper_bound(pts.begin(), pts.end(), t) - pts.begin()) - 1;
    const double frac = (t - pts[lo]) / (pts[lo + 1] - pts[lo]);
    return (1.0 - frac) * sys.eigenfunctions(r, lo) + frac * sys.eigenfunctions(r, lo + 1);
}

/// phi_r sampled at a vector of times.
inline VectorXd eval_eigenfunction(const EigenSystem& sys, int r, const VectorXd& times) {
    VectorXd out(times.size());
    for (int j = 0; j < times.size(); ++j) out[j] = eval_eigenfunction(sys, r, times[j]);
    return out;
}

/// Scree CSV: k, lambda, cumulative fve.
inline void write_fve_scree(const EigenSystem& sys, std::ostream& out) {
    out << "k,lambda,fve\n";
    for (int r = 0; r < sys.eigenvalues.size(); ++r)
        out << (r + 1) << ',' << detail::fmt_full(sys.eigenvalues[r]) << ',' << detail::fmt_full(sys.fve[r]) << "\n";
}

/// Eigen table CSV: r, lambda, fve, then the G grid values of phi_r.
inline void write_eigensystem_csv(const EigenSystem& sys, std::ostream& out) {
    const int g = sys.grid.size();
    out << "r,lambda,fve";
    for (int j = 1; j <= g; ++j) out << ",v" << j;
    out << "\n";
    for (int r = 0; r < sys.retained; ++r) {
        out << (r + 1) << ',' << detail::fmt_full(sys.eigenvalues[r]) << ',' << detail::fmt_full(sys.fve[r]);
        for (int j = 0; j < g; ++j) out << ',' << detail::fmt_full(sys.eigenfunctions(r, j));
        out << "\n";
    }
}

}  // namespace fqif
