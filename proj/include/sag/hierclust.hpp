#pragma once

#include <string>
#include <vector>

#include "sag/mat.hpp"
#include "sag/numkit.hpp"

namespace sag {

enum class LinkageKind { ward, average, complete, single };

std::string to_string(LinkageKind k);
LinkageKind linkage_from_string(const std::string& s);

// Binary merge tree from agglomerative clustering. Leaves are ids 0..n-1;
// merge r creates internal id n + r. Heights are non-decreasing for all
// supported linkages.
struct Dendrogram {
    struct Merge {
        std::size_t left;
        std::size_t right;
        double height;
        std::size_t size;
    };

    std::size_t n_leaves = 0;
    std::vector<Merge> merges;

    // Throws std::invalid_argument when the merge table is inconsistent
    // (wrong count, id reuse, bad sizes, decreasing heights).
    void validate() const;
};

// Nearest-pair agglomeration with Lance-Williams distance updates. Ties are
// broken by the lexicographically smallest (id, id) pair. Ward treats the
// input distances as if they were Euclidean (squares feed the recurrence),
// which is what the usual toolkits do for non-Euclidean metrics too.
Dendrogram agglomerate(const Mat& x, Metric metric, LinkageKind linkage);
Dendrogram agglomerate(const CondensedDist& d, LinkageKind linkage);

// T(i, j) = height of the merge that first unites leaves i and j.
CondensedDist cophenetic_distances(const Dendrogram& d);

enum class LcaMode { hops, height };

std::string to_string(LcaMode m);
LcaMode lca_mode_from_string(const std::string& s);

// Distance of a leaf pair to its lowest common ancestor: hops counts tree
// edges on the path leaf_i -> LCA -> leaf_j; height returns the LCA's merge
// height (identical to cophenetic_distances).
CondensedDist lca_distances(const Dendrogram& d, LcaMode mode = LcaMode::hops);

// CSV merge table with header "left,right,height,size", one merge per line.
std::string dendrogram_to_csv(const Dendrogram& d);
Dendrogram dendrogram_from_csv(const std::string& text);

} // namespace sag
