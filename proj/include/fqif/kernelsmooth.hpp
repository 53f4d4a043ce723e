#pragma once

// Epanechnikov local linear smoothing of the raw residual covariance surface,
// with GCV bandwidth selection.

#include "fqif/funcdata.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace fqif {

inline double epanechnikov(double u) {
    const double a = 1.0 - u * u;
    return a > 0.0 ? 0.75 * a : 0.0;
}

struct KernelSpec {
    double bandwidth = 0.1;  // on the unit time domain

    KernelSpec() = default;
    explicit KernelSpec(double h) : bandwidth(h) {
        if (!(h > 0.0)) throw std::invalid_argument("KernelSpec: bandwidth must be positive");
    }
};

enum class PairWeighting {
    per_subject,  // weight 1/(n N_i), the n^{-1} N_i^{-1} objective prefactor
    per_pair,     // weight 1/N
};

/// All ordered off-diagonal residual products e_i(T_j1) e_i(T_j2) with weights.
struct RawCovPairs {
    struct Pair {
        int subject;
        double s, t, c, w;
    };
    std::vector<Pair> pairs;
    long long total_pairs = 0;  // N
    PairWeighting weighting = PairWeighting::per_subject;

    // Pairs aggregated by exact (s,t) location, sorted by (s,t). Weighted
    // least squares only needs these sufficient statistics per location, so
    // replicated designs collapse from N pairs to m(m-1) locations.
    struct Location {
        double s, t;
        double sum_w, sum_wc, sum_wc2;
    };
    std::vector<Location> locations;
    std::vector<int> s_block_start;  // index of first location of each distinct s
    std::vector<double> s_values;    // distinct s, ascending

    void build_index() {
        std::map<std::pair<double, double>, Location> agg;
        for (const auto& p : pairs) {
            auto& loc = agg[{p.s, p.t}];
            loc.s = p.s;
            loc.t = p.t;
            loc.sum_w += p.w;
            loc.sum_wc += p.w * p.c;
            loc.sum_wc2 += p.w * p.c * p.c;
        }
        locations.clear();
        locations.reserve(agg.size());
        for (auto& [key, loc] : agg) locations.push_back(loc);
        s_block_start.clear();
        s_values.clear();
        for (std::size_t i = 0; i < locations.size(); ++i) {
            if (i == 0 || locations[i].s != locations[i - 1].s) {
                s_block_start.push_back(static_cast<int>(i));
                s_values.push_back(locations[i].s);
            }
        }
        s_block_start.push_back(static_cast<int>(locations.size()));
    }
};

inline RawCovPairs raw_cov_pairs(const FunctionalDataset& dataset, const ResidualSet& resid,
                                 PairWeighting weighting = PairWeighting::per_subject) {
    RawCovPairs out;
    out.weighting = weighting;
    out.total_pairs = dataset.total_pairs;
    out.pairs.reserve(static_cast<std::size_t>(dataset.total_pairs));
    const int n = dataset.num_subjects();
    for (int i = 0; i < n; ++i) {
        const auto& s = dataset.samples[i];
        const auto& e = resid.residuals[i];
        const int m = s.num_obs();
        const double ni = static_cast<double>(m) * (m - 1);
        const double w = weighting == PairWeighting::per_subject
                             ? 1.0 / (n * ni)
                             : 1.0 / static_cast<double>(dataset.total_pairs);
        for (int j1 = 0; j1 < m; ++j1)
            for (int j2 = 0; j2 < m; ++j2)
                if (j1 != j2)
                    out.pairs.push_back({i, s.times[j1], s.times[j2], e[j1] * e[j2], w});
    }
    out.build_index();
    return out;
}

/// Covariance surface on a uniform grid with bandwidth metadata.
struct SmoothedCovariance {
    TimeGrid grid;
    MatrixXd values;  // G x G, symmetrized
    double bandwidth = 0.0;
    long long pair_count = 0;
};

namespace detail {

struct LocalFit {
    double a0;
    double inv00;  // (X^T W X)^{-1}(0,0), for GCV self-influence
    bool singular;
};

// Weighted plane fit of the aggregated pair locations around (s,t).
inline LocalFit local_linear_fit(const RawCovPairs& pairs, double s, double t, double h) {
    Eigen::Matrix3d M = Eigen::Matrix3d::Zero();
    Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
    const auto& sv = pairs.s_values;
    const auto lo = std::lower_bound(sv.begin(), sv.end(), s - h) - sv.begin();
    for (std::size_t b = static_cast<std::size_t>(lo); b < sv.size() && sv[b] < s + h; ++b) {
        const double ds = sv[b] - s;
        const double ks = epanechnikov(ds / h) / h;
        if (ks <= 0.0) continue;
        const int begin = pairs.s_block_start[b];
        const int end = pairs.s_block_start[b + 1];
        // locations within one s-block are sorted by t
        const auto* locs = pairs.locations.data();
        auto cmp = [](const RawCovPairs::Location& a, double v) { return a.t < v; };
        int j = static_cast<int>(std::lower_bound(locs + begin, locs + end, t - h, cmp) - locs);
        for (; j < end && locs[j].t < t + h; ++j) {
            const double dt = locs[j].t - t;
            const double kt = epanechnikov(dt / h) / h;
            if (kt <= 0.0) continue;
            const double w = locs[j].sum_w * ks * kt;
            M(0, 0) += w;
            M(0, 1) += w * ds;
            M(0, 2) += w * dt;
            M(1, 1) += w * ds * ds;
            M(1, 2) += w * ds * dt;
            M(2, 2) += w * dt * dt;
            const double wc = locs[j].sum_wc * ks * kt;
            rhs[0] += wc;
            rhs[1] += wc * ds;
            rhs[2] += wc * dt;
        }
    }
    M(1, 0) = M(0, 1);
    M(2, 0) = M(0, 2);
    M(2, 1) = M(1, 2);
    if (M(0, 0) <= 0.0) return {0.0, 0.0, true};
    Eigen::FullPivLU<Eigen::Matrix3d> lu(M);
    lu.setThreshold(1e-10);
    if (lu.rank() < 3) return {0.0, 0.0, true};
    const Eigen::Matrix3d Minv = lu.inverse();
    const Eigen::Vector3d theta = Minv * rhs;
    return {theta[0], Minv(0, 0), false};
}

}  // namespace detail

/// Local linear estimate of R(s,t): the intercept of the weighted plane fit.
/// A singular local system is retried with the bandwidth doubled (up to 3x).
inline double local_linear_cov_at(const RawCovPairs& pairs, double s, double t, const KernelSpec& kernel) {
    double h = kernel.bandwidth;
    for (int attempt = 0; attempt <= 3; ++attempt) {
        const auto fit = detail::local_linear_fit(pairs, s, t, h);
        if (!fit.singular) return fit.a0;
        h *= 2.0;
    }
    throw std::runtime_error("local_linear_cov_at: singular local system at (s,t)=(" + std::to_string(s) +
                             "," + std::to_string(t) + ") even after bandwidth widening");
}

inline SmoothedCovariance smooth_cov_surface(const RawCovPairs& pairs, const TimeGrid& grid,
                                             const KernelSpec& kernel) {
    const int g = grid.size();
    if (!(kernel.bandwidth > grid.spacing()))
        throw std::invalid_argument("smooth_cov_surface: bandwidth must exceed grid spacing");
    MatrixXd raw(g, g);
    for (int a = 0; a < g; ++a)
        for (int b = 0; b < g; ++b)
            raw(a, b) = local_linear_cov_at(pairs, grid.points[a], grid.points[b], kernel);
    SmoothedCovariance out;
    out.grid = grid;
    out.values = 0.5 * (raw + raw.transpose());
    out.bandwidth = kernel.bandwidth;
    out.pair_count = pairs.total_pairs;
    return out;
}

/// Bilinear interpolation of the grid surface, clamped at the grid boundary.
inline double interp_surface(const SmoothedCovariance& cov, double s, double t) {
    const auto& pts = cov.grid.points;
    const int g = cov.grid.size();
    auto locate = [&](double v, int& lo, double& frac) {
        if (v <= pts.front()) { lo = 0; frac = 0.0; return; }
        if (v >= pts.back()) { lo = g - 2; frac = 1.0; return; }
        lo = static_cast<int>(std::upper_bound(pts.begin(), pts.end(), v) - pts.begin()) - 1;
        frac = (v - pts[lo]) / (pts[lo + 1] - pts[lo]);
    };
    int a, b;
    double fa, fb;
    locate(s, a, fa);
    locate(t, b, fb);
    return (1 - fa) * (1 - fb) * cov.values(a, b) + (1 - fa) * fb * cov.values(a, b + 1) +
           fa * (1 - fb) * cov.values(a + 1, b) + fa * fb * cov.values(a + 1, b + 1);
}

inline std::vector<double> default_bandwidth_candidates() {
    return {0.05, 0.075, 0.10, 0.15, 0.20, 0.25, 0.30};
}

/// GCV(h) = RSS(h) / (1 - tr(h)/N)^2 with fitted values interpolated from the
/// grid surface and tr(h) the summed self-influence of each pair in its own
/// local fit. Ties break toward larger h.
inline double select_bandwidth_gcv(const RawCovPairs& pairs, const TimeGrid& grid,
                                   const std::vector<double>& candidates) {
    if (candidates.empty()) throw std::invalid_argument("select_bandwidth_gcv: no candidates");
    std::vector<double> sorted = candidates;
    std::sort(sorted.begin(), sorted.end());
    const double n_pairs = static_cast<double>(pairs.total_pairs);
    double best_h = 0.0, best_gcv = std::numeric_limits<double>::infinity();
    bool any_valid = false;
    for (double h : sorted) {
        if (!(h > grid.spacing()))
            throw std::invalid_argument("select_bandwidth_gcv: candidate bandwidth not above grid spacing");
        const auto surface = smooth_cov_surface(pairs, grid, KernelSpec(h));
        double rss = 0.0, trace = 0.0;
        const double k0h = epanechnikov(0.0) / h;
        for (const auto& loc : pairs.locations) {
            const double fit = interp_surface(surface, loc.s, loc.t);
            rss += loc.sum_wc2 - 2.0 * fit * loc.sum_wc + fit * fit * loc.sum_w;
            const auto lf = detail::local_linear_fit(pairs, loc.s, loc.t, h);
            if (!lf.singular) trace += loc.sum_w * k0h * k0h * lf.inv00;
        }
        if (trace >= n_pairs) continue;
        any_valid = true;
        const double denom = 1.0 - trace / n_pairs;
        const double gcv = rss / (denom * denom);
        if (gcv <= best_gcv) {  // <= so ties prefer the larger h (ascending candidates)
            best_gcv = gcv;
            best_h = h;
        }
    }
    if (!any_valid)
        throw std::runtime_error("select_bandwidth_gcv: degenerate, every candidate has tr(h) >= N");
    return best_h;
}

/// Rows `s,t,value` for external inspection.
inline void write_surface_csv(const SmoothedCovariance& cov, std::ostream& out) {
    out << "s,t,value\n";
    const int g = cov.grid.size();
    for (int a = 0; a < g; ++a)
        for (int b = 0; b < g; ++b)
            out << detail::fmt_full(cov.grid.points[a]) << ',' << detail::fmt_full(cov.grid.points[b]) << ','
                << detail::fmt_full(cov.values(a, b)) << "\n";
}

}  // namespace fqif
