#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sag/graph.hpp"
#include "sag/hierclust.hpp"
#include "sag/mat.hpp"
#include "sag/numkit.hpp"

namespace sag {

enum class CorrelationKind { pearson, spearman, kendall };

std::string to_string(CorrelationKind k);

// Pearson product-moment, Spearman (Pearson on average ranks), or Kendall
// tau-b (tie-corrected, Knight's O(n log n) algorithm). Zero variance in
// either vector raises DegenerateInput: degenerate inputs should be loud.
double correlation(std::span<const double> x, std::span<const double> y,
                   CorrelationKind kind);

// Pearson correlation between cophenetic distances T(i,j) and the raw
// distances D(i,j) the dendrogram was built from.
double cophenetic_correlation(const CondensedDist& t, const CondensedDist& d);

// Fraction of item pairs on which two partitions agree (together in both or
// separated in both), via pair-count contingency algebra. Exact for n <= 1e6.
double rand_index(const Partition& a, const Partition& b);

struct LcaSimilarityResult {
    double pearson;
    double spearman;
    double kendall;
};

// Correlations between the LCA-distance vectors of two dendrograms over
// index-aligned leaves.
LcaSimilarityResult lca_similarity(const Dendrogram& da, const Dendrogram& db,
                                   LcaMode mode = LcaMode::hops);

struct SimilarityConfig {
    LinkageKind linkage = LinkageKind::ward;
    Metric metric = Metric::cosine;
    LcaMode lca_mode = LcaMode::hops;
    // 0 correlates all C(n,2) pairs; otherwise a seeded subsample of this
    // many pairs is used for every statistic.
    std::size_t max_pairs = 0;
    std::uint64_t seed = 0;
};

struct SimilarityReport {
    double lca_pearson = 0.0;
    double lca_spearman = 0.0;
    double lca_kendall = 0.0;
    // Pearson between one set's cophenetic distances and the other set's raw
    // pairwise distances, in both directions.
    double coph_d1_to_p2 = 0.0;
    double coph_d2_to_p1 = 0.0;
    std::size_t n = 0;
    std::string linkage;
    std::string metric;
    std::string lca_mode;

    std::string to_json() const;
};

// Builds a dendrogram per embedding set and reports LCA similarity plus the
// two cross cophenetic correlations.
SimilarityReport structural_similarity(const Mat& a, const Mat& b,
                                       const SimilarityConfig& cfg = {});

// Per-item labels at every level of a class hierarchy, level 0 coarsest.
// Adjacent levels must be consistent: each fine class has exactly one coarse
// parent.
struct Hierarchy {
    std::vector<std::vector<int>> levels;

    void validate() const;
    std::size_t n_items() const { return levels.empty() ? 0 : levels.front().size(); }
    std::size_t n_levels() const { return levels.size(); }
    std::size_t n_classes(std::size_t level) const;

    // Map finest-level class ids to the class ids of a coarser level.
    std::vector<int> coarsen(std::span<const int> finest_labels,
                             std::size_t level) const;

    // CSV with header "item_id,level1,...,levelL"; item ids must cover
    // 0..n-1 exactly once.
    static Hierarchy from_csv(const std::string& text);
    std::string to_csv() const;
};

// Per hierarchy level, spectral-cluster x with k = number of classes at that
// level and score the partition against the level labels.
std::vector<double> hierarchical_rand(const Mat& x, const Hierarchy& h,
                                      const GraphConfig& gcfg = {},
                                      std::uint64_t seed = 0);

struct RandSweep {
    std::vector<std::size_t> ks;
    std::vector<double> values;
};

// Rand index against the finest labels while the cluster count sweeps an
// inclusive range.
RandSweep rand_index_sweep(const Mat& x, std::span<const int> finest_labels,
                           std::size_t k_min, std::size_t k_max,
                           const GraphConfig& gcfg = {}, std::uint64_t seed = 0);

// Predict each test row's finest class by majority vote among its k
// cosine-nearest training rows (vote ties go to the class of the nearest
// contender), then coarsen that prediction to every level. Returns per-level
// accuracy, level 0 coarsest.
std::vector<double> knn_hierarchical_classify(const Mat& train,
                                              std::span<const int> train_finest,
                                              const Mat& test, const Hierarchy& h,
                                              std::size_t k);

} // namespace sag
