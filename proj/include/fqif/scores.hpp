#pragma once

// Extended score vectors, their Jacobian and sample covariance, for the
// FPCA-derived basis and the classical CS/AR(1) basis-matrix baselines.

#include "fqif/fpca.hpp"

#include <memory>
#include <stdexcept>

namespace fqif {

enum class BasisKind { Fpca, CompoundSymmetry, Ar1 };

/// Strategy selecting the score construction. For Fpca the blocks use the
/// rank-1 matrices Phi_ik built from estimated eigenfunctions; CS uses
/// {I, J} and AR(1) uses {I, J1, J2}.
struct ScoreBasis {
    BasisKind kind = BasisKind::CompoundSymmetry;
    std::shared_ptr<const EigenSystem> eigsys;  // Fpca only
    int kappa0 = 0;                             // Fpca only
    // Optional diagonal marginal-variance scaling for CS/AR: entries of
    // A^{-1/2} at shared design points (empty = identity).
    VectorXd a_inv_sqrt;

    static ScoreBasis fpca(std::shared_ptr<const EigenSystem> sys, int kappa0) {
        if (!sys) throw std::invalid_argument("ScoreBasis: null eigensystem");
        if (kappa0 < 1 || kappa0 > sys->retained)
            throw std::invalid_argument("ScoreBasis: kappa0 must be in [1, retained eigen count]");
        ScoreBasis b;
        b.kind = BasisKind::Fpca;
        b.eigsys = std::move(sys);
        b.kappa0 = kappa0;
        return b;
    }
    static ScoreBasis compound_symmetry() { return ScoreBasis{BasisKind::CompoundSymmetry, nullptr, 0, {}}; }
    static ScoreBasis ar1() { return ScoreBasis{BasisKind::Ar1, nullptr, 0, {}}; }

    int block_count() const {
        switch (kind) {
            case BasisKind::Fpca: return kappa0;
            case BasisKind::CompoundSymmetry: return 2;
            case BasisKind::Ar1: return 3;
        }
        return 0;
    }
    int score_dim(int p) const { return p * block_count(); }
};

/// Rank-1 matrix Phi_ik with (j,j') entry m_i^{-2} phi_k(T_ij) phi_k(T_ij').
inline MatrixXd phi_matrix(const EigenSystem& sys, int k, const FunctionalSample& sample) {
    const VectorXd u = eval_eigenfunction(sys, k, sample.times);
    const double inv_m2 = 1.0 / (static_cast<double>(sample.num_obs()) * sample.num_obs());
    return inv_m2 * (u * u.transpose());
}

/// CS basis matrices {I_m, J_m} with J_m = 1 1^T - I_m.
inline std::vector<MatrixXd> basis_matrices_cs(int m) {
    if (m < 1) throw std::invalid_argument("basis_matrices_cs: m >= 1 required");
    MatrixXd j = MatrixXd::Ones(m, m) - MatrixXd::Identity(m, m);
    return {MatrixXd::Identity(m, m), std::move(j)};
}

/// AR(1) basis matrices {I_m, J1_m, J2_m}: J1 has ones on the first off-
/// diagonals, J2 has ones at (1,1) and (m,m) only.
inline std::vector<MatrixXd> basis_matrices_ar1(int m) {
    if (m < 2) throw std::invalid_argument("basis_matrices_ar1: m >= 2 required");
    MatrixXd j1 = MatrixXd::Zero(m, m);
    for (int i = 0; i + 1 < m; ++i) {
        j1(i, i + 1) = 1.0;
        j1(i + 1, i) = 1.0;
    }
    MatrixXd j2 = MatrixXd::Zero(m, m);
    j2(0, 0) = 1.0;
    j2(m - 1, m - 1) = 1.0;
    return {MatrixXd::Identity(m, m), std::move(j1), std::move(j2)};
}

namespace detail {

// Applies basis block k without forming the m x m matrix: returns B_k v.
inline VectorXd apply_basis_block(const ScoreBasis& basis, int k, const FunctionalSample& sample,
                                  const VectorXd& v) {
    const int m = sample.num_obs();
    switch (basis.kind) {
        case BasisKind::Fpca: {
            const VectorXd u = eval_eigenfunction(*basis.eigsys, k, sample.times);
            return u * (u.dot(v) / (static_cast<double>(m) * m));
        }
        case BasisKind::CompoundSymmetry: {
            VectorXd scaled = basis.a_inv_sqrt.size() ? basis.a_inv_sqrt.cwiseProduct(v).eval() : v;
            VectorXd mv;
            if (k == 0) mv = scaled;
            else mv = VectorXd::Constant(m, scaled.sum()) - scaled;  // J v
            return basis.a_inv_sqrt.size() ? basis.a_inv_sqrt.cwiseProduct(mv).eval() : mv;
        }
        case BasisKind::Ar1: {
            VectorXd scaled = basis.a_inv_sqrt.size() ? basis.a_inv_sqrt.cwiseProduct(v).eval() : v;
            VectorXd mv = VectorXd::Zero(m);
            if (k == 0) mv = scaled;
            else if (k == 1) {
                for (int j = 0; j < m; ++j) {
                    if (j > 0) mv[j] += scaled[j - 1];
                    if (j + 1 < m) mv[j] += scaled[j + 1];
                }
            } else {
                mv[0] = scaled[0];
                mv[m - 1] = scaled[m - 1];
            }
            return basis.a_inv_sqrt.size() ? basis.a_inv_sqrt.cwiseProduct(mv).eval() : mv;
        }
    }
    throw std::logic_error("apply_basis_block: unreachable");
}

/// The full m x m basis matrix for block k (A^{-1/2} M_k A^{-1/2} or Phi_ik).
inline MatrixXd basis_block_matrix(const ScoreBasis& basis, int k, const FunctionalSample& sample) {
    const int m = sample.num_obs();
    MatrixXd out(m, m);
    for (int col = 0; col < m; ++col)
        out.col(col) = apply_basis_block(basis, k, sample, VectorXd::Unit(m, col));
    return out;
}

}  // namespace detail

/// Score vector g_i(beta): stacked blocks X_i^T B_k (y_i - X_i beta).
inline VectorXd score_i(const FunctionalSample& sample, const VectorXd& beta, const ScoreBasis& basis) {
    const int p = static_cast<int>(sample.x.cols());
    if (beta.size() != p) throw std::invalid_argument("score_i: beta length mismatch");
    const VectorXd resid = sample.y - sample.x * beta;
    const int kappa = basis.block_count();
    VectorXd g(p * kappa);
    for (int k = 0; k < kappa; ++k)
        g.segment(k * p, p) = sample.x.transpose() * detail::apply_basis_block(basis, k, sample, resid);
    return g;
}

/// Mean score, per-subject scores, constant Jacobian and sample covariance.
struct ScoreSet {
    VectorXd gbar;        // q
    MatrixXd per_subject; // n x q
    MatrixXd jacobian;    // q x p, block k = -n^{-1} sum_i X_i^T B_k X_i
    MatrixXd chat;        // q x q, possibly ridged
    bool ridged = false;
};

namespace detail {

// Ridge policy shared with the Hessian solve: if the condition number of a
// symmetric PSD matrix exceeds 1e12 (or it is not PD), add eps*I with
// eps = 1e-8 * trace / dim.
inline bool ridge_if_needed(MatrixXd& mat) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(mat, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (lo > 0.0 && hi / lo <= 1e12) return false;
    const double eps = 1e-8 * mat.trace() / mat.rows();
    mat += eps * MatrixXd::Identity(mat.rows(), mat.cols());
    return true;
}

}  // namespace detail

inline ScoreSet gbar_and_chat(const FunctionalDataset& dataset, const VectorXd& beta, const ScoreBasis& basis) {
    const int n = dataset.num_subjects();
    const int p = dataset.p;
    const int q = basis.score_dim(p);
    if (n < q)
        throw std::invalid_argument("gbar_and_chat: n < p*kappa, sample covariance of scores would be singular "
                                    "(reduce kappa0)");

    ScoreSet out;
    out.per_subject.resize(n, q);
    out.jacobian = MatrixXd::Zero(q, p);
    const int kappa = basis.block_count();
    for (int i = 0; i < n; ++i) {
        const auto& sample = dataset.samples[i];
        out.per_subject.row(i) = score_i(sample, beta, basis).transpose();
        for (int k = 0; k < kappa; ++k) {
            MatrixXd bx(sample.num_obs(), p);
            for (int col = 0; col < p; ++col)
                bx.col(col) = detail::apply_basis_block(basis, k, sample, sample.x.col(col));
            out.jacobian.block(k * p, 0, p, p) -= sample.x.transpose() * bx / n;
        }
    }
    out.gbar = out.per_subject.colwise().mean().transpose();
    out.chat = out.per_subject.transpose() * out.per_subject / n;
    out.ridged = detail::ridge_if_needed(out.chat);
    return out;
}

/// Cross-sectional residual variance per design point, for the optional
/// diagonal marginal-variance scaling of the CS/AR baselines. Requires all
/// subjects to share the same observation times (fixed design).
inline VectorXd estimate_a_inv_sqrt(const FunctionalDataset& dataset, const ResidualSet& resid) {
    const auto& t0 = dataset.samples.front().times;
    for (const auto& s : dataset.samples)
        if (s.times.size() != t0.size() || (s.times - t0).cwiseAbs().maxCoeff() > 0.0)
            throw std::invalid_argument("estimate_a_inv_sqrt: requires a shared fixed design");
    const int m = static_cast<int>(t0.size());
    VectorXd var = VectorXd::Zero(m);
    for (const auto& e : resid.residuals) var += e.cwiseProduct(e);
    var /= static_cast<double>(dataset.num_subjects());
    if (var.minCoeff() <= 0.0) throw std::runtime_error("estimate_a_inv_sqrt: zero cross-sectional variance");
    return var.cwiseSqrt().cwiseInverse();
}

}  // namespace fqif
