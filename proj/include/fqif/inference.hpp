#pragma once

// Sandwich covariance Sigma = B^{-1} A B^{-1} and standard errors.

#include "fqif/qif.hpp"

namespace fqif {

struct SandwichVariance {
    MatrixXd sigma;       // p x p, per-coefficient covariance of beta_hat (already / n)
    VectorXd std_errors;  // sqrt(diag(sigma))
    MatrixXd a_hat;       // p x p
    MatrixXd b_hat;       // p x p
};

/// Inverts Chat (after ridge) and partitions into contiguous p x p blocks.
inline std::vector<std::vector<MatrixXd>> c_inverse_blocks(const MatrixXd& chat, int p, int kappa) {
    if (chat.rows() != p * kappa || chat.cols() != p * kappa)
        throw std::invalid_argument("c_inverse_blocks: Chat dimension is not p*kappa");
    MatrixXd ridged = chat;
    detail::ridge_if_needed(ridged);
    Eigen::LDLT<MatrixXd> ldlt(ridged);
    if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("c_inverse_blocks: singular Chat");
    const MatrixXd cinv = ldlt.solve(MatrixXd::Identity(chat.rows(), chat.cols()));
    std::vector<std::vector<MatrixXd>> blocks(kappa, std::vector<MatrixXd>(kappa));
    for (int k1 = 0; k1 < kappa; ++k1)
        for (int k2 = 0; k2 < kappa; ++k2)
            blocks[k1][k2] = cinv.block(k1 * p, k2 * p, p, p);
    return blocks;
}

/// Curly-C_i = sum_{k1,k2} B_{k1} X_i Cinv_{k1,k2} X_i^T B_{k2}, with B_k the
/// basis block matrix (Phi_ik for the FPCA basis, M_k for CS/AR analogues).
inline MatrixXd curly_c_i(const FunctionalSample& sample,
                          const std::vector<std::vector<MatrixXd>>& blocks,
                          const ScoreBasis& basis) {
    const int kappa = basis.block_count();
    const int m = sample.num_obs();
    // P_k = B_k X_i, an m x p factor shared by both sums
    std::vector<MatrixXd> pk(kappa);
    for (int k = 0; k < kappa; ++k) {
        pk[k].resize(m, sample.x.cols());
        for (int col = 0; col < sample.x.cols(); ++col)
            pk[k].col(col) = detail::apply_basis_block(basis, k, sample, sample.x.col(col));
    }
    MatrixXd cc = MatrixXd::Zero(m, m);
    for (int k1 = 0; k1 < kappa; ++k1)
        for (int k2 = 0; k2 < kappa; ++k2)
            cc.noalias() += pk[k1] * blocks[k1][k2] * pk[k2].transpose();
    return cc;
}

/// A_hat = n^{-1} sum X_i^T C_i e_i e_i^T C_i X_i, B_hat = n^{-1} sum X_i^T C_i X_i,
/// Sigma_hat = B^{-1} A B^{-1} / n. Residuals are taken at beta_hat.
inline SandwichVariance sandwich(const FunctionalDataset& dataset, const VectorXd& beta_hat,
                                 const ScoreBasis& basis) {
    const int n = dataset.num_subjects();
    const int p = dataset.p;
    const auto scores = gbar_and_chat(dataset, beta_hat, basis);
    const auto blocks = c_inverse_blocks(scores.chat, p, basis.block_count());

    MatrixXd a_hat = MatrixXd::Zero(p, p);
    MatrixXd b_hat = MatrixXd::Zero(p, p);
    for (int i = 0; i < n; ++i) {
        const auto& sample = dataset.samples[i];
        const MatrixXd cc = curly_c_i(sample, blocks, basis);
        const VectorXd e = sample.y - sample.x * beta_hat;
        const MatrixXd xtc = sample.x.transpose() * cc;  // p x m
        const VectorXd v = xtc * e;
        a_hat.noalias() += v * v.transpose();
        b_hat.noalias() += xtc * sample.x;
    }
    a_hat /= n;
    b_hat /= n;

    Eigen::FullPivLU<MatrixXd> lu(b_hat);
    if (!lu.isInvertible()) throw std::runtime_error("sandwich: B_hat is singular");
    const MatrixXd binv = lu.inverse();

    SandwichVariance out;
    out.a_hat = a_hat;
    out.b_hat = b_hat;
    out.sigma = binv * a_hat * binv.transpose() / n;
    out.sigma = 0.5 * (out.sigma + out.sigma.transpose()).eval();
    out.std_errors = out.sigma.diagonal().cwiseMax(0.0).cwiseSqrt();
    return out;
}

}  // namespace fqif
