#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sag/mat.hpp"

namespace sag {

enum class Metric { cosine, euclidean };

std::string to_string(Metric m);
Metric metric_from_string(const std::string& s);

/// Full cross-distance matrix: entry (i,j) = distance between row i of x and
/// row j of y. Cosine output is clamped to [0, 2]; a zero-norm row under
/// cosine raises DegenerateInput.
Mat pairwise_distance(const Mat& x, const Mat& y, Metric metric);

/// Self-distances of x, condensed upper triangle.
CondensedDist pairwise_distance(const Mat& x, Metric metric);

/// Eigendecomposition of a symmetric matrix; values ascending, vectors(:,j)
/// pairs with values[j]. Sign convention: the first component of largest
/// magnitude in each vector is positive.
struct EigDecomp {
    std::vector<double> values;
    Mat vectors;
};

/// Cyclic Jacobi sweeps; off-diagonal tolerance 1e-12 relative to ‖A‖_F,
/// hard cap of 100 sweeps. Input must be square and symmetric within 1e-12.
EigDecomp symmetric_eig(const Mat& a);

/// Count of eigenvalues below 1e-10 relative to the largest magnitude;
/// equals the number of graph components when applied to a Laplacian spectrum.
std::size_t zero_eigenvalue_multiplicity(std::span<const double> ascending_values);

struct KmeansResult {
    Partition partition;
    Mat centroids;
    double inertia = 0.0;
    std::vector<double> inertia_history;  // per Lloyd iteration of the winning restart
};

/// Lloyd iterations with k-means++ seeding; best inertia over `restarts`
/// runs, fully deterministic for a given seed.
KmeansResult kmeans(const Mat& x, std::size_t k, std::size_t restarts, std::uint64_t seed);

/// Average ranks, 1-based; ties get the mean rank of their block.
std::vector<double> rank_transform(std::span<const double> v);

/// Percentile with linear interpolation between order statistics
/// (the NumPy default convention). p in [0, 100].
double percentile(std::span<const double> values, double p);

/// Projection onto the top-2 principal components; used for plot emission.
Mat project_pca2(const Mat& x);

} // namespace sag
