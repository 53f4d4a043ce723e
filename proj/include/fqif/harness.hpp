#pragma once

// Monte-Carlo replication runner, metric computation and report emission.

#include "fqif/inference.hpp"
#include "fqif/simgen.hpp"

#include <atomic>
#include <cstdio>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <thread>

namespace fqif {

/// Bandwidth policy: a fixed h or GCV over the default candidate set.
struct BandwidthPolicy {
    bool use_gcv = true;
    double fixed_h = 0.1;
    std::vector<double> candidates = default_bandwidth_candidates();

    static BandwidthPolicy gcv() { return {}; }
    static BandwidthPolicy fixed(double h) { return {false, h, {}}; }
};

enum class MethodKind { Init, LdaCS, LdaAR, Fda };

struct MethodSpec {
    MethodKind kind = MethodKind::Init;
    int kappa = 0;        // Fda with fixed kappa (0 = auto)
    double fve_tau = 0.85;  // Fda auto threshold

    std::string label() const {
        switch (kind) {
            case MethodKind::Init: return "init";
            case MethodKind::LdaCS: return "ldaCS";
            case MethodKind::LdaAR: return "ldaAR";
            case MethodKind::Fda:
                return kappa > 0 ? "fda-" + std::to_string(kappa) : "fda-auto";
        }
        return "?";
    }
};

/// Parses "init", "ldaCS", "ldaAR", "fda-3", "fda-auto".
inline MethodSpec parse_method(const std::string& label, double fve_tau = 0.85) {
    MethodSpec m;
    m.fve_tau = fve_tau;
    if (label == "init") { m.kind = MethodKind::Init; return m; }
    if (label == "ldaCS") { m.kind = MethodKind::LdaCS; return m; }
    if (label == "ldaAR") { m.kind = MethodKind::LdaAR; return m; }
    if (label == "fda-auto") { m.kind = MethodKind::Fda; m.kappa = 0; return m; }
    if (label.rfind("fda-", 0) == 0) {
        m.kind = MethodKind::Fda;
        m.kappa = std::stoi(label.substr(4));
        if (m.kappa < 1) throw std::invalid_argument("method: fda-k needs k >= 1");
        return m;
    }
    throw std::invalid_argument("unknown method label: " + label);
}

/// Smoothed-covariance eigensystem from OLS residuals: the shared front end
/// of every fda-k fit on one dataset.
struct FdaPipeline {
    std::shared_ptr<const EigenSystem> eigsys;
    double bandwidth = 0.0;
    VectorXd beta_init;
};

inline FdaPipeline run_fpca_pipeline(const FunctionalDataset& dataset, int grid_size,
                                     const BandwidthPolicy& bandwidth) {
    FdaPipeline out;
    out.beta_init = ols_initial(dataset);
    const auto resid = residuals(dataset, out.beta_init);
    const auto pairs = raw_cov_pairs(dataset, resid, PairWeighting::per_subject);
    const auto grid = TimeGrid::uniform(grid_size);
    out.bandwidth = bandwidth.use_gcv ? select_bandwidth_gcv(pairs, grid, bandwidth.candidates)
                                      : bandwidth.fixed_h;
    const auto surface = smooth_cov_surface(pairs, grid, KernelSpec(out.bandwidth));
    out.eigsys = std::make_shared<EigenSystem>(eigen_decompose(surface));
    return out;
}

struct MethodFit {
    FitResult fit;
    std::optional<SandwichVariance> variance;
    double fve = std::numeric_limits<double>::quiet_NaN();  // fda methods: cumulative FVE at kappa0
    int kappa0 = 0;
};

/// Fits one method on one dataset, reusing a prepared pipeline when given.
inline MethodFit fit_method(const FunctionalDataset& dataset, const MethodSpec& method, int grid_size,
                            const BandwidthPolicy& bandwidth, const FdaPipeline* pipeline = nullptr,
                            bool with_variance = true) {
    MethodFit out;
    if (method.kind == MethodKind::Init) {
        out.fit.beta_hat = pipeline ? pipeline->beta_init : ols_initial(dataset);
        out.fit.converged = true;
        return out;
    }

    FitConfig config;
    if (method.kind == MethodKind::LdaCS) {
        config.basis = ScoreBasis::compound_symmetry();
    } else if (method.kind == MethodKind::LdaAR) {
        config.basis = ScoreBasis::ar1();
    } else {
        FdaPipeline local;
        if (!pipeline) {
            local = run_fpca_pipeline(dataset, grid_size, bandwidth);
            pipeline = &local;
        }
        out.kappa0 = method.kappa > 0
                         ? select_kappa(*pipeline->eigsys, KappaFixed{method.kappa})
                         : select_kappa(*pipeline->eigsys, KappaFveThreshold{method.fve_tau});
        out.fve = pipeline->eigsys->fve[out.kappa0 - 1];
        config.basis = ScoreBasis::fpca(pipeline->eigsys, out.kappa0);
        config.initial_beta = pipeline->beta_init;
        out.fit = fit_quasi_newton_halving(dataset, config);
        if (with_variance) out.variance = sandwich(dataset, out.fit.beta_hat, config.basis);
        return out;
    }
    if (pipeline) config.initial_beta = pipeline->beta_init;
    out.fit = fit_quasi_newton_halving(dataset, config);
    if (with_variance) out.variance = sandwich(dataset, out.fit.beta_hat, config.basis);
    return out;
}

struct StudyConfig {
    Scenario scenario;
    int n = 100;
    int m = 100;
    int replications = 100;
    std::vector<MethodSpec> methods;
    std::uint64_t seed = 1;
    BandwidthPolicy bandwidth;
    int grid_size = 51;
    VectorXd beta_true = (VectorXd(2) << 1.0, 0.5).finished();
    int threads = 0;  // 0 = hardware concurrency

    void validate() const {
        if (replications < 1) throw std::invalid_argument("StudyConfig: replications >= 1");
        if (methods.empty()) throw std::invalid_argument("StudyConfig: method list is empty");
        scenario.validate();
    }
};

struct ReplicationResult {
    std::map<std::string, VectorXd> beta_by_method;  // missing key = failed fit
    std::map<std::string, double> fve_by_method;
    std::map<std::string, bool> converged_by_method;
};

/// One replication: generate with the (seed, b) stream, run every method.
/// fda-k methods share a single smoothed surface and eigensystem.
/// Per-method failures are recorded as missing cells, never rethrown.
inline ReplicationResult run_replication(const StudyConfig& config, int b) {
    ReplicationResult out;
    auto [dataset, truth] = gen_dataset(config.scenario, config.n, config.m, config.beta_true,
                                        config.seed, static_cast<std::uint64_t>(b) + 1);

    bool any_fda = false;
    for (const auto& m : config.methods) any_fda |= (m.kind == MethodKind::Fda);

    std::optional<FdaPipeline> pipeline;
    try {
        if (any_fda) {
            pipeline = run_fpca_pipeline(dataset, config.grid_size, config.bandwidth);
        } else {
            FdaPipeline init_only;
            init_only.beta_init = ols_initial(dataset);
            pipeline = std::move(init_only);
        }
    } catch (const std::exception&) {
        return out;  // initialization failed: every cell missing
    }

    for (const auto& method : config.methods) {
        try {
            const auto fit = fit_method(dataset, method, config.grid_size, config.bandwidth,
                                        &*pipeline, /*with_variance=*/false);
            const bool ok = method.kind == MethodKind::Init || fit.fit.converged;
            out.converged_by_method[method.label()] = ok;
            if (ok) {
                out.beta_by_method[method.label()] = fit.fit.beta_hat;
                if (method.kind == MethodKind::Fda) out.fve_by_method[method.label()] = fit.fve;
            }
        } catch (const std::exception&) {
            out.converged_by_method[method.label()] = false;
        }
    }
    return out;
}

/// One row per (method, coefficient), Table-1 layout.
struct MetricsRow {
    std::string method;
    int coefficient = 0;  // 1-based
    double mean = std::numeric_limits<double>::quiet_NaN();
    double sd = std::numeric_limits<double>::quiet_NaN();
    double ab = std::numeric_limits<double>::quiet_NaN();
    double mse_x100 = std::numeric_limits<double>::quiet_NaN();
    double fve_pct = std::numeric_limits<double>::quiet_NaN();  // fda methods only
    int successes = 0;
    int failures = 0;
};

using Report = std::vector<MetricsRow>;

namespace detail {

template <typename Fn>
inline void parallel_for(int count, int threads, Fn&& fn) {
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, std::min(threads, count));
    if (threads == 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace detail

inline Report run_study(const StudyConfig& config) {
    config.validate();
    const int b_total = config.replications;
    std::vector<ReplicationResult> reps(b_total);
    detail::parallel_for(b_total, config.threads, [&](int b) { reps[b] = run_replication(config, b); });

    Report report;
    const int p = static_cast<int>(config.beta_true.size());
    for (const auto& method : config.methods) {
        const std::string label = method.label();
        std::vector<const VectorXd*> betas;
        double fve_sum = 0.0;
        int fve_count = 0, failures = 0;
        for (const auto& rep : reps) {
            const auto it = rep.beta_by_method.find(label);
            if (it == rep.beta_by_method.end()) { ++failures; continue; }
            betas.push_back(&it->second);
            const auto fit = rep.fve_by_method.find(label);
            if (fit != rep.fve_by_method.end()) { fve_sum += fit->second; ++fve_count; }
        }
        const int b_ok = static_cast<int>(betas.size());
        for (int k = 0; k < p; ++k) {
            MetricsRow row;
            row.method = label;
            row.coefficient = k + 1;
            row.successes = b_ok;
            row.failures = failures;
            if (fve_count > 0) row.fve_pct = 100.0 * fve_sum / fve_count;
            if (b_ok > 0) {
                double sum = 0.0, ab = 0.0, mse = 0.0;
                for (const auto* beta : betas) {
                    sum += (*beta)[k];
                    ab += std::abs((*beta)[k] - config.beta_true[k]);
                    mse += ((*beta)[k] - config.beta_true[k]) * ((*beta)[k] - config.beta_true[k]);
                }
                row.mean = sum / b_ok;
                row.ab = ab / b_ok;
                row.mse_x100 = 100.0 * mse / b_ok;
                if (b_ok > 1) {
                    double ss = 0.0;
                    for (const auto* beta : betas) ss += ((*beta)[k] - row.mean) * ((*beta)[k] - row.mean);
                    row.sd = std::sqrt(ss / (b_ok - 1));
                }
            }
            report.push_back(std::move(row));
        }
    }
    return report;
}

enum class ReportFormat { csv, markdown };

namespace detail {

inline std::string fmt4(double v) {
    if (std::isnan(v)) return "NA";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

}  // namespace detail

/// Deterministic Table-1 layout: one line per method, then per-coefficient
/// Mean/SD/AB/MSE columns, then FVE%. 4 decimal places, NA for missing cells.
inline void emit_report(const Report& report, ReportFormat format, std::ostream& out) {
    if (report.empty()) throw std::invalid_argument("emit_report: empty report");
    int p = 0;
    for (const auto& r : report) p = std::max(p, r.coefficient);
    std::vector<std::string> methods;
    for (const auto& r : report)
        if (methods.empty() || methods.back() != r.method) methods.push_back(r.method);

    auto find_row = [&](const std::string& method, int coef) -> const MetricsRow* {
        for (const auto& r : report)
            if (r.method == method && r.coefficient == coef) return &r;
        return nullptr;
    };

    const bool csv = format == ReportFormat::csv;
    if (csv) {
        out << "method";
        for (int k = 1; k <= p; ++k)
            out << ",mean_b" << k << ",sd_b" << k << ",ab_b" << k << ",mse_x100_b" << k;
        out << ",fve_pct,successes,failures\n";
    } else {
        out << "| Method |";
        for (int k = 1; k <= p; ++k)
            out << " Mean b" << k << " | SD b" << k << " | AB b" << k << " | MSE(x100) b" << k << " |";
        out << " FVE % |\n|---|";
        for (int k = 0; k < 4 * p + 1; ++k) out << "---|";
        out << "\n";
    }
    for (const auto& method : methods) {
        const MetricsRow* first = find_row(method, 1);
        if (csv) out << method;
        else out << "| " << method << " |";
        for (int k = 1; k <= p; ++k) {
            const MetricsRow* r = find_row(method, k);
            const double mean = r ? r->mean : std::numeric_limits<double>::quiet_NaN();
            const double sd = r ? r->sd : std::numeric_limits<double>::quiet_NaN();
            const double ab = r ? r->ab : std::numeric_limits<double>::quiet_NaN();
            const double mse = r ? r->mse_x100 : std::numeric_limits<double>::quiet_NaN();
            if (csv)
                out << ',' << detail::fmt4(mean) << ',' << detail::fmt4(sd) << ',' << detail::fmt4(ab) << ','
                    << detail::fmt4(mse);
            else
                out << ' ' << detail::fmt4(mean) << " | " << detail::fmt4(sd) << " | " << detail::fmt4(ab)
                    << " | " << detail::fmt4(mse) << " |";
        }
        const double fve = first ? first->fve_pct : std::numeric_limits<double>::quiet_NaN();
        if (csv)
            out << ',' << detail::fmt4(fve) << ',' << (first ? first->successes : 0) << ','
                << (first ? first->failures : 0) << "\n";
        else
            out << ' ' << detail::fmt4(fve) << " |\n";
    }
}

}  // namespace fqif
