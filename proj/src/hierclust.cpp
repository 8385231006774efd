#include "sag/hierclust.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "sag/errors.hpp"

namespace sag {

std::string to_string(LinkageKind k) {
    switch (k) {
        case LinkageKind::ward: return "ward";
        case LinkageKind::average: return "average";
        case LinkageKind::complete: return "complete";
        case LinkageKind::single: return "single";
    }
    return "?";
}

LinkageKind linkage_from_string(const std::string& s) {
    if (s == "ward") return LinkageKind::ward;
    if (s == "average") return LinkageKind::average;
    if (s == "complete") return LinkageKind::complete;
    if (s == "single") return LinkageKind::single;
    throw std::invalid_argument("unknown linkage: " + s);
}

std::string to_string(LcaMode m) {
    return m == LcaMode::hops ? "hops" : "height";
}

LcaMode lca_mode_from_string(const std::string& s) {
    if (s == "hops") return LcaMode::hops;
    if (s == "height") return LcaMode::height;
    throw std::invalid_argument("unknown lca mode: " + s);
}

void Dendrogram::validate() const {
    if (n_leaves < 1) throw std::invalid_argument("Dendrogram: no leaves");
    if (merges.size() != n_leaves - 1)
        throw std::invalid_argument("Dendrogram: expected " +
                                    std::to_string(n_leaves - 1) + " merges, got " +
                                    std::to_string(merges.size()));
    std::vector<bool> consumed(n_leaves + merges.size(), false);
    std::vector<std::size_t> size(n_leaves + merges.size(), 1);
    double last_height = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < merges.size(); ++r) {
        const auto& m = merges[r];
        const std::size_t created = n_leaves + r;
        for (std::size_t child : {m.left, m.right}) {
            if (child >= created)
                throw std::invalid_argument("Dendrogram: merge " + std::to_string(r) +
                                            " references id " + std::to_string(child) +
                                            " not yet created");
            if (consumed[child])
                throw std::invalid_argument("Dendrogram: id " + std::to_string(child) +
                                            " consumed twice");
            consumed[child] = true;
        }
        if (m.left == m.right)
            throw std::invalid_argument("Dendrogram: merge joins an id with itself");
        size[created] = size[m.left] + size[m.right];
        if (m.size != size[created])
            throw std::invalid_argument("Dendrogram: merge " + std::to_string(r) +
                                        " size mismatch");
        if (!std::isfinite(m.height) || m.height < 0.0)
            throw std::invalid_argument("Dendrogram: bad merge height");
        if (m.height < last_height)
            throw std::invalid_argument("Dendrogram: heights decrease at merge " +
                                        std::to_string(r));
        last_height = m.height;
    }
}

namespace {

struct Cluster {
    std::size_t id;
    std::size_t size;
    std::size_t slot;
};

// Working distances live in a full symmetric buffer indexed by slot; ward
// stores squared values there so the Lance-Williams recurrence stays linear.
double updated_distance(LinkageKind linkage, double dik, double djk, double dij,
                        std::size_t ni, std::size_t nj, std::size_t nk) {
    switch (linkage) {
        case LinkageKind::single:
            return std::min(dik, djk);
        case LinkageKind::complete:
            return std::max(dik, djk);
        case LinkageKind::average: {
            const double wi = static_cast<double>(ni);
            const double wj = static_cast<double>(nj);
            return (wi * dik + wj * djk) / (wi + wj);
        }
        case LinkageKind::ward: {
            const double wi = static_cast<double>(ni + nk);
            const double wj = static_cast<double>(nj + nk);
            const double wk = static_cast<double>(nk);
            const double total = static_cast<double>(ni + nj + nk);
            return std::max(0.0, (wi * dik + wj * djk - wk * dij) / total);
        }
    }
    return 0.0;
}

} // namespace

Dendrogram agglomerate(const CondensedDist& d, LinkageKind linkage) {
    const std::size_t n = d.n;
    if (n < 2) throw std::invalid_argument("agglomerate: need at least 2 points");
    for (double v : d.values)
        if (!std::isfinite(v) || v < 0.0)
            throw std::invalid_argument("agglomerate: distances must be finite and >= 0");

    const bool squared = linkage == LinkageKind::ward;
    Mat work(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = squared ? d(i, j) * d(i, j) : d(i, j);
            work(i, j) = v;
            work(j, i) = v;
        }

    std::vector<Cluster> active(n);
    for (std::size_t i = 0; i < n; ++i) active[i] = {i, 1, i};

    Dendrogram out;
    out.n_leaves = n;
    out.merges.reserve(n - 1);
    double last_height = 0.0;

    for (std::size_t r = 0; r + 1 < n; ++r) {
        // active is kept sorted by id, so the first strict minimum found is
        // automatically the lexicographically smallest tied pair
        std::size_t bi = 0, bj = 1;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a + 1 < active.size(); ++a)
            for (std::size_t b = a + 1; b < active.size(); ++b) {
                const double v = work(active[a].slot, active[b].slot);
                if (v < best) {
                    best = v;
                    bi = a;
                    bj = b;
                }
            }

        const Cluster ci = active[bi];
        const Cluster cj = active[bj];
        double height = squared ? std::sqrt(best) : best;
        // absorb sub-ulp dips from the floating-point recurrence
        if (height < last_height && last_height - height <= 1e-9 * std::max(1.0, last_height))
            height = last_height;
        last_height = height;

        for (std::size_t a = 0; a < active.size(); ++a) {
            if (a == bi || a == bj) continue;
            const Cluster& ck = active[a];
            const double v =
                updated_distance(linkage, work(ci.slot, ck.slot), work(cj.slot, ck.slot),
                                 best, ci.size, cj.size, ck.size);
            work(ci.slot, ck.slot) = v;
            work(ck.slot, ci.slot) = v;
        }

        out.merges.push_back({ci.id, cj.id, height, ci.size + cj.size});
        active[bi] = {n + r, ci.size + cj.size, ci.slot};
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(bj));
        // new id n + r exceeds every live id, so moving it to bi's position
        // keeps the vector sorted only if bi is the last element; re-sort
        std::sort(active.begin(), active.end(),
                  [](const Cluster& x, const Cluster& y) { return x.id < y.id; });
    }
    return out;
}

Dendrogram agglomerate(const Mat& x, Metric metric, LinkageKind linkage) {
    if (x.rows() < 2) throw std::invalid_argument("agglomerate: need at least 2 points");
    return agglomerate(pairwise_distance(x, metric), linkage);
}

namespace {

// Runs over merges in order, handing each new (a in A, b in B) leaf pair to
// the sink together with the per-leaf depths below the clusters being joined.
template <typename Sink>
void for_each_first_union(const Dendrogram& d, Sink&& sink) {
    d.validate();
    const std::size_t n = d.n_leaves;
    std::vector<std::vector<std::size_t>> members(n + d.merges.size());
    for (std::size_t i = 0; i < n; ++i) members[i] = {i};
    std::vector<std::size_t> depth(n, 0);

    for (std::size_t r = 0; r < d.merges.size(); ++r) {
        const auto& m = d.merges[r];
        auto& left = members[m.left];
        auto& right = members[m.right];
        for (std::size_t a : left)
            for (std::size_t b : right) sink(a, b, m.height, depth[a], depth[b]);
        auto& merged = members[n + r];
        merged = std::move(left);
        merged.insert(merged.end(), right.begin(), right.end());
        right.clear();
        right.shrink_to_fit();
        for (std::size_t leaf : merged) ++depth[leaf];
    }
}

} // namespace

CondensedDist cophenetic_distances(const Dendrogram& d) {
    if (d.n_leaves < 2)
        throw std::invalid_argument("cophenetic_distances: need at least 2 leaves");
    CondensedDist t(d.n_leaves);
    for_each_first_union(d, [&](std::size_t a, std::size_t b, double height,
                                std::size_t, std::size_t) { t.at(a, b) = height; });
    return t;
}

CondensedDist lca_distances(const Dendrogram& d, LcaMode mode) {
    if (mode == LcaMode::height) return cophenetic_distances(d);
    if (d.n_leaves < 2)
        throw std::invalid_argument("lca_distances: need at least 2 leaves");
    CondensedDist t(d.n_leaves);
    for_each_first_union(d, [&](std::size_t a, std::size_t b, double,
                                std::size_t depth_a, std::size_t depth_b) {
        // the freshly created merge node is the LCA, one edge above each child
        t.at(a, b) = static_cast<double>(depth_a + depth_b + 2);
    });
    return t;
}

std::string dendrogram_to_csv(const Dendrogram& d) {
    d.validate();
    std::string out = "left,right,height,size\n";
    char buf[64];
    for (const auto& m : d.merges) {
        std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g,%zu\n", m.left, m.right,
                      m.height, m.size);
        out += buf;
    }
    return out;
}

Dendrogram dendrogram_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "left,right,height,size")
        throw IoError("dendrogram csv: missing or bad header");

    Dendrogram d;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Dendrogram::Merge m;
        char extra;
        if (std::sscanf(line.c_str(), "%zu,%zu,%lf,%zu%c", &m.left, &m.right,
                        &m.height, &m.size, &extra) != 4)
            throw IoError("dendrogram csv: bad merge line: " + line);
        d.merges.push_back(m);
    }
    if (d.merges.empty()) throw IoError("dendrogram csv: no merges");
    d.n_leaves = d.merges.size() + 1;
    try {
        d.validate();
    } catch (const std::invalid_argument& e) {
        throw IoError(std::string("dendrogram csv: ") + e.what());
    }
    return d;
}

} // namespace sag
