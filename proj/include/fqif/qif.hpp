#pragma once

// QIF objective Q(beta) = n gbar^T Chat^{-1} gbar, its Gauss-Newton
// derivatives, and the quasi-Newton-with-halving minimizer.

#include "fqif/scores.hpp"

#include <optional>

namespace fqif {

struct FitConfig {
    double epsilon0 = 1e-10;  // threshold on ||beta2 - beta1||^2
    int max_count = 500;
    int max_halvings = 50;
    ScoreBasis basis;
    // Test hook: evaluate Chat once at the initial beta and keep it fixed.
    // With the affine scores of the linear model the frozen problem is an
    // exact quadratic and one full Newton step solves it.
    bool freeze_chat = false;
    std::optional<VectorXd> initial_beta;  // default: OLS
};

struct FitResult {
    VectorXd beta_hat;
    double q_value = 0.0;
    int iterations = 0;
    bool converged = false;
    int halving_events = 0;
    std::vector<double> objective_trace;  // Q at the initial point and each accepted iterate
    bool ridge_flag = false;
};

/// Pooled ordinary least squares over all observations.
inline VectorXd ols_initial(const FunctionalDataset& dataset) {
    long long rows = 0;
    for (const auto& s : dataset.samples) rows += s.num_obs();
    MatrixXd x(rows, dataset.p);
    VectorXd y(rows);
    long long at = 0;
    for (const auto& s : dataset.samples) {
        x.middleRows(at, s.num_obs()) = s.x;
        y.segment(at, s.num_obs()) = s.y;
        at += s.num_obs();
    }
    Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
    if (qr.rank() < dataset.p) throw std::runtime_error("ols_initial: pooled design matrix is rank deficient");
    return qr.solve(y);
}

namespace detail {

struct QifState {
    ScoreSet scores;
    Eigen::LDLT<MatrixXd> chat_ldlt;
    double q = 0.0;
};

inline QifState qif_state(const FunctionalDataset& dataset, const VectorXd& beta, const ScoreBasis& basis,
                          const Eigen::LDLT<MatrixXd>* frozen_chat = nullptr) {
    QifState st;
    st.scores = gbar_and_chat(dataset, beta, basis);
    if (frozen_chat) {
        st.chat_ldlt = *frozen_chat;
    } else {
        st.chat_ldlt.compute(st.scores.chat);
        if (st.chat_ldlt.info() != Eigen::Success)
            throw std::runtime_error("qif: Chat factorization failed even after ridge");
    }
    st.q = dataset.num_subjects() * st.scores.gbar.dot(st.chat_ldlt.solve(st.scores.gbar));
    return st;
}

}  // namespace detail

inline double qif_value(const FunctionalDataset& dataset, const VectorXd& beta, const ScoreBasis& basis) {
    return detail::qif_state(dataset, beta, basis).q;
}

/// 2n gdot^T Chat^{-1} gbar (Chat held fixed at the current beta).
inline VectorXd qif_gradient(const FunctionalDataset& dataset, const VectorXd& beta, const ScoreBasis& basis) {
    const auto st = detail::qif_state(dataset, beta, basis);
    return 2.0 * dataset.num_subjects() * st.scores.jacobian.transpose() * st.chat_ldlt.solve(st.scores.gbar);
}

/// Gauss-Newton Hessian 2n gdot^T Chat^{-1} gdot, symmetric PSD.
inline MatrixXd qif_hessian(const FunctionalDataset& dataset, const VectorXd& beta, const ScoreBasis& basis) {
    const auto st = detail::qif_state(dataset, beta, basis);
    MatrixXd h = 2.0 * dataset.num_subjects() * st.scores.jacobian.transpose() *
                 st.chat_ldlt.solve(st.scores.jacobian);
    return 0.5 * (h + h.transpose());
}

/// beta2 = beta1 - r0 * Hess(beta1)^{-1} grad(beta1) with r0 starting at 1
/// and halved until Q(beta2) <= Q(beta1); terminates when
/// ||beta2 - beta1||^2 <= epsilon0 or the iteration count reaches max_count.
inline FitResult fit_quasi_newton_halving(const FunctionalDataset& dataset, const FitConfig& config) {
    const ScoreBasis& basis = config.basis;
    const int n = dataset.num_subjects();
    const int p = dataset.p;

    VectorXd beta1 = config.initial_beta ? *config.initial_beta : ols_initial(dataset);
    if (beta1.size() != p) throw std::invalid_argument("fit: initial beta length mismatch");

    FitResult result;

    std::optional<Eigen::LDLT<MatrixXd>> frozen_chat;
    auto state_at = [&](const VectorXd& beta) {
        auto st = detail::qif_state(dataset, beta, basis,
                                    frozen_chat ? &*frozen_chat : nullptr);
        result.ridge_flag = result.ridge_flag || st.scores.ridged;
        return st;
    };

    detail::QifState st1 = state_at(beta1);
    if (config.freeze_chat) {
        frozen_chat = st1.chat_ldlt;
    }
    result.objective_trace.push_back(st1.q);

    for (int iter = 1; iter <= config.max_count; ++iter) {
        result.iterations = iter;
        const VectorXd grad =
            2.0 * n * st1.scores.jacobian.transpose() * st1.chat_ldlt.solve(st1.scores.gbar);
        MatrixXd hess =
            2.0 * n * st1.scores.jacobian.transpose() * st1.chat_ldlt.solve(st1.scores.jacobian);
        hess = 0.5 * (hess + hess.transpose()).eval();
        detail::ridge_if_needed(hess);
        const Eigen::LDLT<MatrixXd> hess_ldlt(hess);
        if (hess_ldlt.info() != Eigen::Success)
            throw std::runtime_error("fit: Hessian factorization failed even after ridge");
        const VectorXd step = hess_ldlt.solve(grad);

        double r0 = 1.0;
        VectorXd beta2 = beta1 - r0 * step;
        detail::QifState st2 = state_at(beta2);
        int halvings = 0;
        while (st2.q > st1.q && halvings < config.max_halvings) {
            r0 /= 2.0;
            ++halvings;
            ++result.halving_events;
            beta2 = beta1 - r0 * step;
            st2 = state_at(beta2);
        }
        if (st2.q > st1.q) {
            // halving exhausted with no descent: report best-so-far
            result.beta_hat = beta1;
            result.q_value = st1.q;
            result.converged = false;
            return result;
        }

        const double error = (beta2 - beta1).squaredNorm();
        beta1 = std::move(beta2);
        st1 = std::move(st2);
        result.objective_trace.push_back(st1.q);
        if (error <= config.epsilon0) {
            result.converged = true;
            break;
        }
    }
    result.beta_hat = beta1;
    result.q_value = st1.q;
    return result;
}

}  // namespace fqif
