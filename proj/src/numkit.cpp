#include "sag/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "sag/errors.hpp"
#include "sag/rng.hpp"

namespace sag {

std::string to_string(Metric m) {
    return m == Metric::cosine ? "cosine" : "euclidean";
}

Metric metric_from_string(const std::string& s) {
    if (s == "cosine") return Metric::cosine;
    if (s == "euclidean") return Metric::euclidean;
    throw std::invalid_argument("unknown metric: " + s);
}

namespace {

double row_norm(std::span<const double> r) {
    double s = 0.0;
    for (double v : r) s += v * v;
    return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double euclidean(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

double cosine_dist(std::span<const double> a, std::span<const double> b,
                   double na, double nb) {
    const double d = 1.0 - dot(a, b) / (na * nb);
    return std::clamp(d, 0.0, 2.0);
}

std::vector<double> cosine_norms(const Mat& x, const char* what) {
    std::vector<double> norms(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        norms[i] = row_norm(x.row(i));
        if (norms[i] == 0.0)
            throw DegenerateInput(std::string(what) +
                                  ": zero-norm row under cosine distance (row " +
                                  std::to_string(i) + ")");
    }
    return norms;
}

} // namespace

Mat pairwise_distance(const Mat& x, const Mat& y, Metric metric) {
    if (x.cols() != y.cols())
        throw std::invalid_argument("pairwise_distance: column mismatch");
    Mat d(x.rows(), y.rows());
    if (metric == Metric::cosine) {
        const auto nx = cosine_norms(x, "pairwise_distance");
        const auto ny = cosine_norms(y, "pairwise_distance");
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < y.rows(); ++j)
                d(i, j) = cosine_dist(x.row(i), y.row(j), nx[i], ny[j]);
    } else {
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < y.rows(); ++j)
                d(i, j) = euclidean(x.row(i), y.row(j));
    }
    return d;
}

CondensedDist pairwise_distance(const Mat& x, Metric metric) {
    if (x.rows() < 2)
        throw std::invalid_argument("pairwise_distance: need at least 2 rows");
    CondensedDist d(x.rows());
    if (metric == Metric::cosine) {
        const auto n = cosine_norms(x, "pairwise_distance");
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = i + 1; j < x.rows(); ++j)
                d.at(i, j) = cosine_dist(x.row(i), x.row(j), n[i], n[j]);
    } else {
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = i + 1; j < x.rows(); ++j)
                d.at(i, j) = euclidean(x.row(i), x.row(j));
    }
    return d;
}

namespace {

// One Jacobi rotation zeroing a(p,q); updates a (full symmetric storage)
// and accumulates the rotation into v.
void jacobi_rotate(Mat& a, Mat& v, std::size_t p, std::size_t q) {
    const double apq = a(p, q);
    if (apq == 0.0) return;
    const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
    double t;
    if (std::abs(theta) > 1e150) {
        t = 1.0 / (2.0 * theta);  // avoid theta^2 overflow
    } else {
        t = 1.0 / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        if (theta < 0.0) t = -t;
    }
    const double c = 1.0 / std::sqrt(t * t + 1.0);
    const double s = t * c;
    const double tau = s / (1.0 + c);
    const std::size_t n = a.rows();

    const double app = a(p, p), aqq = a(q, q);
    a(p, p) = app - t * apq;
    a(q, q) = aqq + t * apq;
    a(p, q) = 0.0;
    a(q, p) = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (i == p || i == q) continue;
        const double aip = a(i, p), aiq = a(i, q);
        a(i, p) = aip - s * (aiq + tau * aip);
        a(p, i) = a(i, p);
        a(i, q) = aiq + s * (aip - tau * aiq);
        a(q, i) = a(i, q);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double vip = v(i, p), viq = v(i, q);
        v(i, p) = vip - s * (viq + tau * vip);
        v(i, q) = viq + s * (vip - tau * viq);
    }
}

double off_diagonal_norm(const Mat& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j) s += a(i, j) * a(i, j);
    return std::sqrt(2.0 * s);
}

void fix_sign(Mat& vectors, std::size_t col) {
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < vectors.rows(); ++i) {
        const double mag = std::abs(vectors(i, col));
        if (mag > best) {
            best = mag;
            arg = i;
        }
    }
    if (vectors(arg, col) < 0.0)
        for (std::size_t i = 0; i < vectors.rows(); ++i) vectors(i, col) = -vectors(i, col);
}

} // namespace

EigDecomp symmetric_eig(const Mat& a) {
    const std::size_t n = a.rows();
    if (n != a.cols()) throw std::invalid_argument("symmetric_eig: matrix not square");
    require_finite(a, "symmetric_eig");

    double max_abs = 0.0;
    for (double v : a.data()) max_abs = std::max(max_abs, std::abs(v));
    const double sym_tol = 1e-12 * std::max(1.0, max_abs);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(a(i, j) - a(j, i)) > sym_tol)
                throw std::invalid_argument("symmetric_eig: matrix not symmetric");

    // work on the symmetrized copy so rotation updates stay exact mirror images
    Mat w(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) w(i, j) = 0.5 * (a(i, j) + a(j, i));
    Mat v = Mat::identity(n);

    double frob = 0.0;
    for (double x : w.data()) frob += x * x;
    frob = std::sqrt(frob);
    const double tol = 1e-12 * std::max(frob, std::numeric_limits<double>::min());

    const int max_sweeps = 100;
    bool converged = off_diagonal_norm(w) <= tol;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) jacobi_rotate(w, v, p, q);
        converged = off_diagonal_norm(w) <= tol;
    }
    if (!converged)
        throw std::runtime_error("symmetric_eig: no convergence within 100 sweeps");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return w(i, i) < w(j, j); });

    EigDecomp out;
    out.values.resize(n);
    out.vectors = Mat(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        out.values[j] = w(order[j], order[j]);
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = v(i, order[j]);
        fix_sign(out.vectors, j);
    }
    return out;
}

std::size_t zero_eigenvalue_multiplicity(std::span<const double> ascending_values) {
    double largest = 0.0;
    for (double v : ascending_values) largest = std::max(largest, std::abs(v));
    const double thresh = 1e-10 * std::max(largest, 1e-300);
    std::size_t count = 0;
    for (double v : ascending_values)
        if (std::abs(v) <= thresh) ++count;
    return count;
}

namespace {

double sq_euclidean(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

Mat kmeanspp_init(const Mat& x, std::size_t k, Rng& rng) {
    const std::size_t n = x.rows();
    Mat centers(k, x.cols());
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());

    std::size_t first = rng.uniform_below(n);
    for (std::size_t j = 0; j < x.cols(); ++j) centers(0, j) = x(first, j);

    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], sq_euclidean(x.row(i), centers.row(c - 1)));
            total += d2[i];
        }
        std::size_t pick;
        if (total <= 0.0) {
            pick = rng.uniform_below(n);
        } else {
            const double r = rng.uniform() * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc > r) {
                    pick = i;
                    break;
                }
            }
        }
        for (std::size_t j = 0; j < x.cols(); ++j) centers(c, j) = x(pick, j);
    }
    return centers;
}

struct LloydRun {
    std::vector<int> labels;
    Mat centers;
    double inertia;
    std::vector<double> history;
};

LloydRun lloyd(const Mat& x, Mat centers, std::size_t k) {
    const std::size_t n = x.rows();
    std::vector<int> labels(n, -1);
    std::vector<double> point_d2(n);
    LloydRun run{{}, Mat(k, x.cols()), 0.0, {}};

    const int max_iter = 300;
    for (int iter = 0; iter < max_iter; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double bd = sq_euclidean(x.row(i), centers.row(0));
            for (std::size_t c = 1; c < k; ++c) {
                const double d = sq_euclidean(x.row(i), centers.row(c));
                if (d < bd) {
                    bd = d;
                    best = static_cast<int>(c);
                }
            }
            point_d2[i] = bd;
            if (labels[i] != best) {
                labels[i] = best;
                changed = true;
            }
        }

        // empty clusters grab the point farthest from its centroid
        std::vector<std::size_t> counts(k, 0);
        for (int l : labels) ++counts[static_cast<std::size_t>(l)];
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) continue;
            std::size_t far = 0;
            double fd = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[static_cast<std::size_t>(labels[i])] > 1 && point_d2[i] > fd) {
                    fd = point_d2[i];
                    far = i;
                }
            }
            --counts[static_cast<std::size_t>(labels[far])];
            labels[far] = static_cast<int>(c);
            counts[c] = 1;
            point_d2[far] = 0.0;
            changed = true;
        }

        centers = Mat(k, x.cols(), 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < x.cols(); ++j)
                centers(static_cast<std::size_t>(labels[i]), j) += x(i, j);
        for (std::size_t c = 0; c < k; ++c)
            for (std::size_t j = 0; j < x.cols(); ++j)
                centers(c, j) /= static_cast<double>(counts[c]);

        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            inertia += sq_euclidean(x.row(i), centers.row(static_cast<std::size_t>(labels[i])));
        run.history.push_back(inertia);

        if (!changed) break;
    }

    run.labels = std::move(labels);
    run.centers = std::move(centers);
    run.inertia = run.history.back();
    return run;
}

} // namespace

KmeansResult kmeans(const Mat& x, std::size_t k, std::size_t restarts, std::uint64_t seed) {
    if (k < 1 || k > x.rows())
        throw std::invalid_argument("kmeans: require 1 <= k <= rows");
    if (restarts < 1) throw std::invalid_argument("kmeans: restarts must be >= 1");
    require_finite(x, "kmeans");

    Rng rng(seed);
    KmeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < restarts; ++r) {
        LloydRun run = lloyd(x, kmeanspp_init(x, k, rng), k);
        if (run.inertia < best.inertia) {
            best.partition.labels = std::move(run.labels);
            best.centroids = std::move(run.centers);
            best.inertia = run.inertia;
            best.inertia_history = std::move(run.history);
        }
    }
    return best;
}

std::vector<double> rank_transform(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("rank_transform: empty vector");
    for (double x : v)
        if (!std::isfinite(x))
            throw std::invalid_argument("rank_transform: non-finite entry");

    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });

    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        // block spans 1-based ranks [i+1, j+1]; everyone gets the mean
        const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
        i = j + 1;
    }
    return ranks;
}

double percentile(std::span<const double> values, double p) {
    if (values.empty()) throw std::invalid_argument("percentile: empty input");
    if (p < 0.0 || p > 100.0) throw std::invalid_argument("percentile: p out of range");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double pos = p / 100.0 * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

Mat project_pca2(const Mat& x) {
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    if (n < 2) throw std::invalid_argument("project_pca2: need at least 2 rows");

    Mat centered(n, d);
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += x(i, j);
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) centered(i, j) = x(i, j) - mean;
    }
    if (d == 1) {
        Mat out(n, 2, 0.0);
        for (std::size_t i = 0; i < n; ++i) out(i, 0) = centered(i, 0);
        return out;
    }

    Mat cov = matmul_tn(centered, centered);
    for (double& v : cov.data()) v /= static_cast<double>(n - 1);
    const EigDecomp eig = symmetric_eig(cov);

    Mat out(n, 2, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 2; ++c) {
            const std::size_t col = d - 1 - c;  // top components live at the back
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += centered(i, j) * eig.vectors(j, col);
            out(i, c) = s;
        }
    return out;
}

} // namespace sag
