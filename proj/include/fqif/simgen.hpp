#pragma once

// Generators for the simulation study's residual-covariance scenarios and
// the covariate process, with known truth retained for recovery metrics.

#include "fqif/funcdata.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fqif {

enum class ScenarioKind {
    BrownianMotion,     // (a)
    LinearProcess,      // (b), l0 in {1,2,3}
    OrnsteinUhlenbeck,  // (c), mu0 in {1,3}
    PowerExponential,   // (d), a0=1, b0 in {1,2,5}
    RationalQuadratic,  // (e), a0=1, b0 in {1,2,5}
};

struct Scenario {
    ScenarioKind kind = ScenarioKind::BrownianMotion;
    int l0 = 1;        // LinearProcess
    double mu0 = 1.0;  // OrnsteinUhlenbeck
    double a0 = 1.0;   // PowerExponential / RationalQuadratic scale
    double b0 = 1.0;   // PowerExponential / RationalQuadratic shape
    static constexpr int kl_truncation = 3;  // (a)-(c)

    bool has_closed_form_eigen() const {
        return kind == ScenarioKind::BrownianMotion || kind == ScenarioKind::LinearProcess ||
               kind == ScenarioKind::OrnsteinUhlenbeck;
    }

    void validate(bool unsafe_params = false) const {
        if (unsafe_params) return;
        switch (kind) {
            case ScenarioKind::BrownianMotion: break;
            case ScenarioKind::LinearProcess:
                if (l0 != 1 && l0 != 2 && l0 != 3) throw std::invalid_argument("Scenario: l0 must be 1, 2 or 3");
                break;
            case ScenarioKind::OrnsteinUhlenbeck:
                if (mu0 != 1.0 && mu0 != 3.0) throw std::invalid_argument("Scenario: mu0 must be 1 or 3");
                break;
            case ScenarioKind::PowerExponential:
            case ScenarioKind::RationalQuadratic:
                if (a0 != 1.0 || (b0 != 1.0 && b0 != 2.0 && b0 != 5.0))
                    throw std::invalid_argument("Scenario: a0=1 and b0 in {1,2,5} required");
                break;
        }
    }
};

struct EigenPair {
    double lambda;
    std::function<double(double)> phi;
};

/// Brownian motion: lambda_k = 4 / (pi^2 (2k-1)^2), phi_k(t) = sqrt(2) sin(t / sqrt(lambda_k)).
inline EigenPair bm_eigen(int k) {
    if (k < 1) throw std::invalid_argument("bm_eigen: k >= 1");
    const double pi = std::numbers::pi;
    const double lambda = 4.0 / (pi * pi * (2.0 * k - 1.0) * (2.0 * k - 1.0));
    const double freq = 1.0 / std::sqrt(lambda);
    return {lambda, [freq](double t) { return std::numbers::sqrt2 * std::sin(freq * t); }};
}

/// Linear process: lambda_k = k^{-2 l0}, phi_k(t) = sqrt(2) cos(k pi t).
inline EigenPair linear_process_eigen(int k, int l0) {
    if (k < 1) throw std::invalid_argument("linear_process_eigen: k >= 1");
    const double lambda = std::pow(static_cast<double>(k), -2.0 * l0);
    const double freq = k * std::numbers::pi;
    return {lambda, [freq](double t) { return std::numbers::sqrt2 * std::cos(freq * t); }};
}

/// First `count` positive roots of cot(w) = (w^2 - mu0^2) / (2 mu0 w), one per
/// interval ((j-1)pi, j pi). Bisection runs on the pole-free equivalent
/// g(w) = 2 mu0 w cos(w) - (w^2 - mu0^2) sin(w).
inline std::vector<double> ou_roots(double mu0, int count) {
    if (!(mu0 > 0.0)) throw std::invalid_argument("ou_roots: mu0 > 0 required");
    auto g = [mu0](double w) { return 2.0 * mu0 * w * std::cos(w) - (w * w - mu0 * mu0) * std::sin(w); };
    std::vector<double> roots;
    roots.reserve(count);
    const double pi = std::numbers::pi;
    for (int j = 1; j <= count; ++j) {
        double lo = std::max((j - 1) * pi, 1e-12);
        double hi = j * pi;
        double glo = g(lo);
        if (glo == 0.0) { roots.push_back(lo); continue; }
        if (glo * g(hi) > 0.0)
            throw std::runtime_error("ou_roots: bracket failure on [" + std::to_string(lo) + "," +
                                     std::to_string(hi) + "]");
        while (hi - lo > 1e-13) {
            const double mid = 0.5 * (lo + hi);
            if (glo * g(mid) <= 0.0) hi = mid;
            else { lo = mid; glo = g(mid); }
        }
        roots.push_back(0.5 * (lo + hi));
    }
    return roots;
}

/// OU: lambda_k = 2 mu0 / (w_k^2 + mu0^2), phi_k(t) = A_k cos(w_k t) + B_k sin(w_k t)
/// with A_k = sqrt(2 w_k^2 / (2 mu0 + mu0^2 + w_k^2)) and B_k = mu0 A_k / w_k.
inline EigenPair ou_eigen(int k, double mu0) {
    const double w = ou_roots(mu0, k).back();
    const double lambda = 2.0 * mu0 / (w * w + mu0 * mu0);
    const double a = std::sqrt(2.0 * w * w / (2.0 * mu0 + mu0 * mu0 + w * w));
    const double b = mu0 * a / w;
    return {lambda, [a, b, w](double t) { return a * std::cos(w * t) + b * std::sin(w * t); }};
}

inline EigenPair scenario_eigen(const Scenario& scenario, int k) {
    switch (scenario.kind) {
        case ScenarioKind::BrownianMotion: return bm_eigen(k);
        case ScenarioKind::LinearProcess: return linear_process_eigen(k, scenario.l0);
        case ScenarioKind::OrnsteinUhlenbeck: return ou_eigen(k, scenario.mu0);
        default: throw std::invalid_argument("scenario_eigen: no closed-form eigenpairs for this scenario");
    }
}

/// True covariance on a grid: truncated KL sum for (a)-(c); the stationary
/// kernels for (d) and (e). The power-exponential uses exp{-(|s-t|/a0)^{b0}}.
inline MatrixXd cov_matrix(const Scenario& scenario, const TimeGrid& grid) {
    const int g = grid.size();
    MatrixXd cov = MatrixXd::Zero(g, g);
    if (scenario.has_closed_form_eigen()) {
        for (int k = 1; k <= Scenario::kl_truncation; ++k) {
            const auto pair = scenario_eigen(scenario, k);
            VectorXd phi(g);
            for (int j = 0; j < g; ++j) phi[j] = pair.phi(grid.points[j]);
            cov.noalias() += pair.lambda * (phi * phi.transpose());
        }
        return cov;
    }
    for (int a = 0; a < g; ++a) {
        for (int b = 0; b < g; ++b) {
            const double d = grid.points[a] - grid.points[b];
            if (scenario.kind == ScenarioKind::PowerExponential)
                cov(a, b) = std::exp(-std::pow(std::abs(d) / scenario.a0, scenario.b0));
            else
                cov(a, b) = std::pow(1.0 + d * d / (scenario.a0 * scenario.a0), -scenario.b0);
        }
    }
    return cov;
}

/// Covariate coefficient SDs: sigma1(k) = 2^{-0.5(k-1)}, sigma2 = 0.85 sigma1,
/// sigma3 = 0.7 sigma1 (k is the 1-based covariate index).
struct CovariateModel {
    static double sigma1(int k) { return std::pow(2.0, -0.5 * (k - 1)); }
    static double sigma2(int k) { return 0.85 * sigma1(k); }
    static double sigma3(int k) { return 0.7 * sigma1(k); }
};

struct SimulatedTruth {
    VectorXd beta_true;
    Scenario scenario;
    std::vector<double> eigenvalues;                   // (a)-(c): first 3
    std::vector<std::function<double(double)>> phis;   // (a)-(c): first 3
};

namespace detail {

// splitmix64: the documented stream-derivation mix for (seed, replication,
// subject), so replications and subjects are order-independent.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t replication, std::uint64_t subject) {
    return mix64(seed ^ mix64(replication + 0x1234567ULL) ^ mix64(mix64(subject) + 0x9876543ULL));
}

// Factor of the covariance used for MVN draws: V sqrt(clip(lambda)) with
// eigenvalues below -1e-12 * max(1, lambda_max) rejected.
inline MatrixXd cov_factor(const MatrixXd& cov) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw std::runtime_error("gen_dataset: covariance factorization failure");
    const double lmax = es.eigenvalues().maxCoeff();
    const double floor = -1e-12 * std::max(1.0, lmax);
    VectorXd lam = es.eigenvalues();
    for (int i = 0; i < lam.size(); ++i) {
        if (lam[i] < floor) throw std::runtime_error("gen_dataset: covariance is not positive semi-definite");
        lam[i] = std::max(lam[i], 0.0);
    }
    return es.eigenvectors() * lam.cwiseSqrt().asDiagonal();
}

}  // namespace detail

/// Equidistant design with known truth: y = X beta + e, deterministic given
/// (seed, replication). The replication index feeds the per-subject RNG
/// streams; pass 0 for standalone datasets.
inline std::pair<FunctionalDataset, SimulatedTruth> gen_dataset(const Scenario& scenario, int n, int m,
                                                                const VectorXd& beta, std::uint64_t seed,
                                                                std::uint64_t replication = 0,
                                                                bool unsafe_params = false) {
    scenario.validate(unsafe_params);
    if (n < 1 || m < 2) throw std::invalid_argument("gen_dataset: need n >= 1 and m >= 2");
    const int p = static_cast<int>(beta.size());

    // fixed design t_j = (j-1)/(m-1)
    VectorXd times(m);
    for (int j = 0; j < m; ++j) times[j] = static_cast<double>(j) / (m - 1);

    SimulatedTruth truth;
    truth.beta_true = beta;
    truth.scenario = scenario;

    std::vector<VectorXd> phi_on_design;
    if (scenario.has_closed_form_eigen()) {
        for (int k = 1; k <= Scenario::kl_truncation; ++k) {
            auto pair = scenario_eigen(scenario, k);
            VectorXd phi(m);
            for (int j = 0; j < m; ++j) phi[j] = pair.phi(times[j]);
            phi_on_design.push_back(std::move(phi));
            truth.eigenvalues.push_back(pair.lambda);
            truth.phis.push_back(std::move(pair.phi));
        }
    }

    MatrixXd factor;  // (d), (e)
    if (!scenario.has_closed_form_eigen())
        factor = detail::cov_factor(cov_matrix(scenario, TimeGrid(std::vector<double>(times.data(), times.data() + m))));

    const double pi = std::numbers::pi;
    VectorXd sin_t(m), cos_t(m);
    for (int j = 0; j < m; ++j) {
        sin_t[j] = std::numbers::sqrt2 * std::sin(pi * times[j]);
        cos_t[j] = std::numbers::sqrt2 * std::cos(pi * times[j]);
    }

    std::vector<FunctionalSample> samples;
    samples.reserve(n);
    for (int i = 0; i < n; ++i) {
        std::mt19937_64 rng(detail::stream_seed(seed, replication, static_cast<std::uint64_t>(i)));
        std::normal_distribution<double> normal(0.0, 1.0);

        FunctionalSample s;
        s.subject_id = std::to_string(i + 1);
        s.times = times;
        s.x.resize(m, p);
        for (int k = 0; k < p; ++k) {
            const double chi1 = CovariateModel::sigma1(k + 1) * normal(rng);
            const double chi2 = CovariateModel::sigma2(k + 1) * normal(rng);
            const double chi3 = CovariateModel::sigma3(k + 1) * normal(rng);
            s.x.col(k) = VectorXd::Constant(m, chi1) + chi2 * sin_t + chi3 * cos_t;
        }

        VectorXd e = VectorXd::Zero(m);
        if (scenario.has_closed_form_eigen()) {
            for (int k = 0; k < Scenario::kl_truncation; ++k) {
                const double xi = std::sqrt(truth.eigenvalues[k]) * normal(rng);
                e += xi * phi_on_design[k];
            }
        } else {
            VectorXd z(m);
            for (int j = 0; j < m; ++j) z[j] = normal(rng);
            e = factor * z;
        }
        s.y = s.x * beta + e;
        samples.push_back(std::move(s));
    }
    return {FunctionalDataset::from_samples(std::move(samples)), std::move(truth)};
}

/// Scenario labels used by the CLI: bm, lp1..lp3, ou1, ou3, pe1, pe2, pe5, rq1, rq2, rq5.
inline Scenario parse_scenario(const std::string& label) {
    Scenario s;
    if (label == "bm") { s.kind = ScenarioKind::BrownianMotion; return s; }
    if (label.rfind("lp", 0) == 0 && label.size() == 3) {
        s.kind = ScenarioKind::LinearProcess;
        s.l0 = label[2] - '0';
        s.validate();
        return s;
    }
    if (label.rfind("ou", 0) == 0 && label.size() == 3) {
        s.kind = ScenarioKind::OrnsteinUhlenbeck;
        s.mu0 = label[2] - '0';
        s.validate();
        return s;
    }
    if (label.rfind("pe", 0) == 0 && label.size() == 3) {
        s.kind = ScenarioKind::PowerExponential;
        s.b0 = label[2] - '0';
        s.validate();
        return s;
    }
    if (label.rfind("rq", 0) == 0 && label.size() == 3) {
        s.kind = ScenarioKind::RationalQuadratic;
        s.b0 = label[2] - '0';
        s.validate();
        return s;
    }
    throw std::invalid_argument("unknown scenario label: " + label);
}

}  // namespace fqif
