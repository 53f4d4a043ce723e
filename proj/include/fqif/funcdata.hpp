#pragma once

// Core data model for dense functional/longitudinal data and CSV ingestion.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fqif {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Ordered time points on the rescaled unit domain [0, 1].
struct TimeGrid {
    std::vector<double> points;

    TimeGrid() = default;
    explicit TimeGrid(std::vector<double> pts) : points(std::move(pts)) {
        validate();
    }

    /// G midpoint-uniform points t_j = (j - 1/2)/G, so the rectangle rule
    /// with spacing 1/G is the midpoint rule over [0, 1].
    static TimeGrid uniform(int g) {
        if (g < 2) throw std::invalid_argument("TimeGrid: need at least 2 points");
        std::vector<double> pts(g);
        for (int j = 0; j < g; ++j) pts[j] = (j + 0.5) / g;
        return TimeGrid(std::move(pts));
    }

    int size() const { return static_cast<int>(points.size()); }
    double spacing() const { return points[1] - points[0]; }

    void validate() const {
        if (points.size() < 2) throw std::invalid_argument("TimeGrid: need at least 2 points");
        for (std::size_t j = 0; j < points.size(); ++j) {
            if (!std::isfinite(points[j]) || points[j] < 0.0 || points[j] > 1.0)
                throw std::invalid_argument("TimeGrid: points must lie in [0,1]");
            if (j > 0 && points[j] <= points[j - 1])
                throw std::invalid_argument("TimeGrid: points must be strictly increasing");
        }
    }
};

/// One subject: m_i observation times, responses and covariate rows.
struct FunctionalSample {
    std::string subject_id;
    VectorXd times;  // sorted ascending, in [0,1]
    VectorXd y;      // length m_i
    MatrixXd x;      // m_i x p

    int num_obs() const { return static_cast<int>(times.size()); }

    void validate() const {
        const int m = num_obs();
        if (m < 2) throw std::invalid_argument("sample '" + subject_id + "': insufficient observations (m_i >= 2 required)");
        if (y.size() != m || x.rows() != m)
            throw std::invalid_argument("sample '" + subject_id + "': inconsistent lengths");
        for (int j = 0; j < m; ++j) {
            if (!std::isfinite(times[j]) || times[j] < 0.0 || times[j] > 1.0)
                throw std::invalid_argument("sample '" + subject_id + "': time outside [0,1]");
            if (j > 0 && times[j] < times[j - 1])
                throw std::invalid_argument("sample '" + subject_id + "': times not sorted");
            if (!std::isfinite(y[j]))
                throw std::invalid_argument("sample '" + subject_id + "': non-finite response");
        }
        if (!x.allFinite())
            throw std::invalid_argument("sample '" + subject_id + "': non-finite covariate");
    }
};

/// Affine map applied to raw times when loading: t_unit = (t_raw - offset) / scale.
struct TimeRescale {
    double offset = 0.0;
    double scale = 1.0;
    bool applied = false;
};

/// Immutable collection of subjects sharing a covariate dimension p.
struct FunctionalDataset {
    std::vector<FunctionalSample> samples;
    int p = 0;
    long long total_pairs = 0;  // N = sum_i m_i (m_i - 1)
    TimeRescale rescale;

    int num_subjects() const { return static_cast<int>(samples.size()); }

    static long long pair_count(const std::vector<FunctionalSample>& samples) {
        long long n = 0;
        for (const auto& s : samples) {
            const long long m = s.num_obs();
            n += m * (m - 1);
        }
        return n;
    }

    static FunctionalDataset from_samples(std::vector<FunctionalSample> samples, TimeRescale rescale = {}) {
        if (samples.empty()) throw std::invalid_argument("dataset: need at least one subject");
        const int p = static_cast<int>(samples.front().x.cols());
        for (const auto& s : samples) {
            s.validate();
            if (s.x.cols() != p) throw std::invalid_argument("dataset: covariate dimension differs across subjects");
        }
        FunctionalDataset d;
        d.total_pairs = pair_count(samples);
        d.samples = std::move(samples);
        d.p = p;
        d.rescale = rescale;
        return d;
    }
};

/// Per-subject residual vectors e_i = y_i - X_i beta.
struct ResidualSet {
    std::vector<VectorXd> residuals;  // residuals[i] has length m_i
    VectorXd beta_used;
};

inline ResidualSet residuals(const FunctionalDataset& dataset, const VectorXd& beta) {
    if (beta.size() != dataset.p)
        throw std::invalid_argument("residuals: beta length does not match covariate dimension");
    if (!beta.allFinite())
        throw std::invalid_argument("residuals: beta must be finite");
    ResidualSet r;
    r.beta_used = beta;
    r.residuals.reserve(dataset.samples.size());
    for (const auto& s : dataset.samples)
        r.residuals.push_back(s.y - s.x * beta);
    return r;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') { fields.push_back(cur); cur.clear(); }
        else if (c != '\r') cur.push_back(c);
    }
    fields.push_back(cur);
    return fields;
}

inline double parse_finite(const std::string& s, long long row) {
    std::size_t pos = 0;
    double v;
    try { v = std::stod(s, &pos); }
    catch (const std::exception&) {
        throw std::runtime_error("load_csv: malformed numeric field '" + s + "' at row " + std::to_string(row));
    }
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos != s.size() || !std::isfinite(v))
        throw std::runtime_error("load_csv: malformed numeric field '" + s + "' at row " + std::to_string(row));
    return v;
}

}  // namespace detail

/// Long-format CSV: header `subject_id,time,y,x1,...,xp`. Rows are grouped by
/// subject in order of first appearance and sorted by time within subject.
/// Times outside [0,1] trigger an affine rescale from the global min/max.
inline FunctionalDataset load_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("load_csv: empty input");
    const auto header = detail::split_csv_line(line);
    if (header.size() < 4 || header[0] != "subject_id" || header[1] != "time" || header[2] != "y")
        throw std::runtime_error("load_csv: expected header subject_id,time,y,x1,...,xp");
    const int p = static_cast<int>(header.size()) - 3;

    struct Row { double t, y; std::vector<double> x; };
    std::vector<std::string> order;
    std::vector<std::vector<Row>> rows_by_subject;
    std::vector<std::pair<std::string, std::size_t>> index;  // sorted id -> slot

    long long row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (static_cast<int>(fields.size()) != p + 3)
            throw std::runtime_error("load_csv: inconsistent column count at row " + std::to_string(row_no));
        Row r;
        r.t = detail::parse_finite(fields[1], row_no);
        r.y = detail::parse_finite(fields[2], row_no);
        r.x.resize(p);
        for (int k = 0; k < p; ++k) r.x[k] = detail::parse_finite(fields[3 + k], row_no);

        auto it = std::lower_bound(index.begin(), index.end(), fields[0],
                                   [](const auto& a, const std::string& b) { return a.first < b; });
        if (it == index.end() || it->first != fields[0]) {
            it = index.insert(it, {fields[0], rows_by_subject.size()});
            order.push_back(fields[0]);
            rows_by_subject.emplace_back();
        }
        rows_by_subject[it->second].push_back(std::move(r));
    }
    if (order.empty()) throw std::runtime_error("load_csv: no data rows");

    double tmin = std::numeric_limits<double>::infinity();
    double tmax = -std::numeric_limits<double>::infinity();
    for (const auto& rows : rows_by_subject)
        for (const auto& r : rows) { tmin = std::min(tmin, r.t); tmax = std::max(tmax, r.t); }

    TimeRescale rescale;
    if (tmin < 0.0 || tmax > 1.0) {
        if (tmax == tmin) throw std::runtime_error("load_csv: all times identical, cannot rescale");
        rescale.offset = tmin;
        rescale.scale = tmax - tmin;
        rescale.applied = true;
    }

    std::vector<FunctionalSample> samples;
    samples.reserve(order.size());
    for (std::size_t s = 0; s < order.size(); ++s) {
        auto& rows = rows_by_subject[s];
        if (rows.size() < 2)
            throw std::runtime_error("load_csv: subject '" + order[s] + "': insufficient observations");
        std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.t < b.t; });
        FunctionalSample sample;
        sample.subject_id = order[s];
        const int m = static_cast<int>(rows.size());
        sample.times.resize(m);
        sample.y.resize(m);
        sample.x.resize(m, p);
        for (int j = 0; j < m; ++j) {
            sample.times[j] = rescale.applied ? (rows[j].t - rescale.offset) / rescale.scale : rows[j].t;
            sample.y[j] = rows[j].y;
            for (int k = 0; k < p; ++k) sample.x(j, k) = rows[j].x[k];
        }
        samples.push_back(std::move(sample));
    }
    return FunctionalDataset::from_samples(std::move(samples), rescale);
}

namespace detail {
inline std::string fmt_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace detail

/// Lossless long-format CSV writer (17 significant digits round-trip doubles).
inline void write_csv(const FunctionalDataset& dataset, std::ostream& out) {
    out << "subject_id,time,y";
    for (int k = 1; k <= dataset.p; ++k) out << ",x" << k;
    out << "\n";
    for (const auto& s : dataset.samples) {
        for (int j = 0; j < s.num_obs(); ++j) {
            out << s.subject_id << ',' << detail::fmt_full(s.times[j]) << ',' << detail::fmt_full(s.y[j]);
            for (int k = 0; k < dataset.p; ++k) out << ',' << detail::fmt_full(s.x(j, k));
            out << "\n";
        }
    }
}

}  // namespace fqif
