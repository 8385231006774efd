#include "sag/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sag/errors.hpp"
#include "sag/rng.hpp"

namespace sag {

SymAffinity::SymAffinity(Mat m) : w(std::move(m)) {
    if (w.rows() != w.cols())
        throw std::invalid_argument("SymAffinity: matrix not square");
    require_finite(w, "SymAffinity");
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) {
            if (w(i, j) < 0.0 || w(i, j) > 1.0)
                throw std::invalid_argument("SymAffinity: entry outside [0, 1]");
            if (j > i && std::abs(w(i, j) - w(j, i)) > 1e-12)
                throw std::invalid_argument("SymAffinity: matrix not symmetric");
        }
    }
}

RandomWalk::RandomWalk(Mat m) : p(std::move(m)) {
    require_finite(p, "RandomWalk");
    for (std::size_t i = 0; i < p.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) {
            if (p(i, j) < 0.0)
                throw std::invalid_argument("RandomWalk: negative entry");
            sum += p(i, j);
        }
        if (std::abs(sum - 1.0) > 1e-12)
            throw std::invalid_argument("RandomWalk: row " + std::to_string(i) +
                                        " does not sum to 1");
    }
}

Mat laplacian(const SymAffinity& w) {
    const std::size_t n = w.w.rows();
    Mat l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        double degree = 0.0;
        for (std::size_t j = 0; j < n; ++j) degree += w.w(i, j);
        for (std::size_t j = 0; j < n; ++j) l(i, j) = -w.w(i, j);
        l(i, i) += degree;
    }
    return l;
}

RandomWalk random_walk_matrix(const Mat& w) {
    require_finite(w, "random_walk_matrix");
    Mat p(w.rows(), w.cols());
    for (std::size_t i = 0; i < w.rows(); ++i) {
        double degree = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) {
            if (w(i, j) < 0.0)
                throw std::invalid_argument("random_walk_matrix: negative entry");
            degree += w(i, j);
        }
        if (degree == 0.0) {
            if (i >= w.cols())
                throw std::invalid_argument(
                    "random_walk_matrix: zero row without a self-transition slot");
            for (std::size_t j = 0; j < w.cols(); ++j) p(i, j) = 0.0;
            p(i, i) = 1.0;
        } else {
            for (std::size_t j = 0; j < w.cols(); ++j) p(i, j) = w(i, j) / degree;
        }
    }
    return RandomWalk(std::move(p));
}

std::vector<std::size_t> sample_rows(const RandomWalk& p, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::size_t> picks(p.p.rows());
    for (std::size_t i = 0; i < p.p.rows(); ++i) {
        const double r = rng.uniform();
        double acc = 0.0;
        std::size_t pick = 0;
        bool found = false;
        for (std::size_t j = 0; j < p.p.cols(); ++j) {
            acc += p.p(i, j);
            if (r < acc) {
                pick = j;
                found = true;
                break;
            }
        }
        if (!found) {
            // guard against accumulated rounding: fall back to the last
            // column with positive mass
            for (std::size_t j = p.p.cols(); j-- > 0;) {
                if (p.p(i, j) > 0.0) {
                    pick = j;
                    break;
                }
            }
        }
        picks[i] = pick;
    }
    return picks;
}

Mat spectral_embed(const SymAffinity& w, std::size_t dim, bool include_trivial) {
    const std::size_t n = w.w.rows();
    if (dim >= n)
        throw std::invalid_argument("spectral_embed: dim must be < n");
    if (dim == 0)
        throw std::invalid_argument("spectral_embed: dim must be >= 1");

    const EigDecomp eig = symmetric_eig(laplacian(w));
    const std::size_t first = include_trivial ? 0 : 1;
    if (first + dim > n)
        throw std::invalid_argument("spectral_embed: not enough eigenvectors");

    Mat out(n, dim);
    for (std::size_t c = 0; c < dim; ++c)
        for (std::size_t i = 0; i < n; ++i) out(i, c) = eig.vectors(i, first + c);
    return out;
}

double spectralnet_loss(const Mat& w, const Mat& y) {
    const std::size_t n = y.rows();
    if (w.rows() != n || w.cols() != n)
        throw std::invalid_argument("spectralnet_loss: W must be n x n");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (w(i, j) == 0.0) continue;
            double sq = 0.0;
            for (std::size_t c = 0; c < y.cols(); ++c) {
                const double d = y(i, c) - y(j, c);
                sq += d * d;
            }
            total += w(i, j) * sq;
        }
    }
    return total / (static_cast<double>(n) * static_cast<double>(n));
}

double orthogonality_residual(const Mat& y) {
    const std::size_t n = y.rows();
    const std::size_t k = y.cols();
    Mat g = matmul_tn(y, y);
    double sq = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            const double v = g(i, j) / static_cast<double>(n) - (i == j ? 1.0 : 0.0);
            sq += v * v;
        }
    }
    return std::sqrt(sq);
}

SymAffinity local_scaled_affinity(const Mat& x, const GraphConfig& cfg) {
    const std::size_t n = x.rows();
    if (n < 2)
        throw std::invalid_argument("local_scaled_affinity: need at least 2 rows");
    if (cfg.n_neighbors < 1)
        throw std::invalid_argument("local_scaled_affinity: n_neighbors must be >= 1");
    const std::size_t k = std::min(cfg.n_neighbors, n - 1);

    const CondensedDist dist = pairwise_distance(x, cfg.metric);
    Mat w(n, n, 0.0);
    std::vector<std::size_t> order(n - 1);
    std::vector<double> adjusted(k);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t m = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) order[m++] = j;
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                          order.end(), [&](std::size_t a, std::size_t b) {
                              const double da = dist(i, a), db = dist(i, b);
                              return da < db || (da == db && a < b);
                          });
        const double nearest = dist(i, order[0]);
        for (std::size_t t = 0; t < k; ++t) adjusted[t] = dist(i, order[t]) - nearest;
        const double scale =
            std::max(percentile(adjusted, cfg.scale_percentile), cfg.scale_floor);
        for (std::size_t t = 0; t < k; ++t)
            w(i, order[t]) = std::exp(-(adjusted[t] * adjusted[t]) / (scale * scale));
    }

    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = 0.5 * (w(i, j) + w(j, i));
            w(i, j) = v;
            w(j, i) = v;
        }
    return SymAffinity(std::move(w));
}

Partition spectral_clustering(const Mat& x, std::size_t k, const GraphConfig& cfg,
                              std::uint64_t seed) {
    const std::size_t n = x.rows();
    if (k < 1 || k > n)
        throw std::invalid_argument("spectral_clustering: require 1 <= k <= rows");
    if (n == 1) return Partition{{0}};

    const SymAffinity w = local_scaled_affinity(x, cfg);
    const std::size_t dim = std::min(k, n - 1);
    const Mat embedding = spectral_embed(w, dim, /*include_trivial=*/true);
    return kmeans(embedding, k, /*restarts=*/10, seed).partition;
}

} // namespace sag
