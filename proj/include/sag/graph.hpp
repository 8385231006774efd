#pragma once

#include <cstdint>
#include <vector>

#include "sag/mat.hpp"
#include "sag/numkit.hpp"

namespace sag {

// Symmetric affinity matrix: entries in [0, 1], symmetric within 1e-12.
// A zero diagonal is fine (kNN masks usually exclude self-affinity).
struct SymAffinity {
    Mat w;

    explicit SymAffinity(Mat m);
};

// Row-stochastic transition matrix. May be rectangular when the walk steps
// from one batch into another over the same index set.
struct RandomWalk {
    Mat p;

    explicit RandomWalk(Mat m);
};

// Knobs for kNN graph construction with locally scaled Gaussian affinities.
struct GraphConfig {
    std::size_t n_neighbors = 7;
    double scale_percentile = 20.0;
    double scale_floor = 1e-7;
    Metric metric = Metric::euclidean;
};

// Unnormalized graph Laplacian L = D - W.
Mat laplacian(const SymAffinity& w);

// Row-normalize a nonnegative matrix into a transition matrix. All-zero rows
// become self-transitions so every row remains a distribution.
RandomWalk random_walk_matrix(const Mat& w);

// Draw one column index per row from that row's transition distribution.
std::vector<std::size_t> sample_rows(const RandomWalk& p, std::uint64_t seed);

// Columns are Laplacian eigenvectors for the smallest eigenvalues, ascending.
// By default the first (trivial, near-constant) eigenvector is skipped;
// include_trivial keeps it as column 0.
Mat spectral_embed(const SymAffinity& w, std::size_t dim, bool include_trivial = false);

// (1/n^2) * sum_ij W_ij * ||y_i - y_j||^2.
double spectralnet_loss(const Mat& w, const Mat& y);

// Frobenius norm of (1/n) * Y^T Y - I.
double orthogonality_residual(const Mat& y);

// kNN affinity with per-point Gaussian scaling: distances to each point's
// neighbors are shifted so the nearest sits at 0, the kernel width is the
// configured percentile of those shifted distances (clamped from below), and
// non-neighbor entries are masked to zero before symmetrization.
SymAffinity local_scaled_affinity(const Mat& x, const GraphConfig& cfg = {});

// Spectral clustering: local-scaled affinity -> spectral embedding (trivial
// eigenvector kept, dim = min(k, n-1)) -> k-means.
Partition spectral_clustering(const Mat& x, std::size_t k,
                              const GraphConfig& cfg = {}, std::uint64_t seed = 0);

} // namespace sag
