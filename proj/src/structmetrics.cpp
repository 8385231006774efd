#include "sag/structmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "sag/errors.hpp"
#include "sag/rng.hpp"

namespace sag {

std::string to_string(CorrelationKind k) {
    switch (k) {
        case CorrelationKind::pearson: return "pearson";
        case CorrelationKind::spearman: return "spearman";
        case CorrelationKind::kendall: return "kendall";
    }
    return "?";
}

namespace {

void check_pair(std::span<const double> x, std::span<const double> y,
                const char* what) {
    if (x.size() != y.size())
        throw std::invalid_argument(std::string(what) + ": length mismatch");
    if (x.size() < 2)
        throw std::invalid_argument(std::string(what) + ": need at least 2 values");
    for (double v : x)
        if (!std::isfinite(v))
            throw std::invalid_argument(std::string(what) + ": non-finite value");
    for (double v : y)
        if (!std::isfinite(v))
            throw std::invalid_argument(std::string(what) + ": non-finite value");
}

double pearson(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw DegenerateInput("correlation undefined: zero variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// Counts pairs i < j with v[i] > v[j]; equal values are not inversions.
std::uint64_t merge_count_inversions(std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<double> buf(n);
    std::uint64_t inversions = 0;
    for (std::size_t width = 1; width < n; width *= 2) {
        for (std::size_t lo = 0; lo + width < n; lo += 2 * width) {
            const std::size_t mid = lo + width;
            const std::size_t hi = std::min(lo + 2 * width, n);
            std::size_t a = lo, b = mid, out = lo;
            while (a < mid && b < hi) {
                if (v[a] <= v[b]) {
                    buf[out++] = v[a++];
                } else {
                    inversions += mid - a;
                    buf[out++] = v[b++];
                }
            }
            while (a < mid) buf[out++] = v[a++];
            while (b < hi) buf[out++] = v[b++];
            std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo),
                      buf.begin() + static_cast<std::ptrdiff_t>(hi),
                      v.begin() + static_cast<std::ptrdiff_t>(lo));
        }
    }
    return inversions;
}

std::uint64_t choose2(std::uint64_t m) { return m * (m - 1) / 2; }

// Knight's algorithm: sort by (x, y), count x-ties and joint ties by group
// scan, then count discordant swaps as inversions of the y sequence.
double kendall_tau_b(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (x[a] != x[b]) return x[a] < x[b];
        return y[a] < y[b];
    });

    const std::uint64_t n0 = choose2(n);
    std::uint64_t n1 = 0, n3 = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        n1 += choose2(j - i + 1);
        for (std::size_t a = i; a <= j;) {
            std::size_t b = a;
            while (b + 1 <= j && y[order[b + 1]] == y[order[a]]) ++b;
            n3 += choose2(b - a + 1);
            a = b + 1;
        }
        i = j + 1;
    }

    std::uint64_t n2 = 0;
    {
        std::vector<double> ys(y.begin(), y.end());
        std::sort(ys.begin(), ys.end());
        for (std::size_t i = 0; i < n;) {
            std::size_t j = i;
            while (j + 1 < n && ys[j + 1] == ys[i]) ++j;
            n2 += choose2(j - i + 1);
            i = j + 1;
        }
    }

    if (n0 == n1 || n0 == n2)
        throw DegenerateInput("correlation undefined: zero variance");

    std::vector<double> seq(n);
    for (std::size_t i = 0; i < n; ++i) seq[i] = y[order[i]];
    const std::uint64_t swaps = merge_count_inversions(seq);

    const std::int64_t numerator = static_cast<std::int64_t>(n0) -
                                   static_cast<std::int64_t>(n1) -
                                   static_cast<std::int64_t>(n2) +
                                   static_cast<std::int64_t>(n3) -
                                   2 * static_cast<std::int64_t>(swaps);
    const double denominator = std::sqrt(static_cast<double>(n0 - n1) *
                                         static_cast<double>(n0 - n2));
    return std::clamp(static_cast<double>(numerator) / denominator, -1.0, 1.0);
}

} // namespace

double correlation(std::span<const double> x, std::span<const double> y,
                   CorrelationKind kind) {
    check_pair(x, y, "correlation");
    switch (kind) {
        case CorrelationKind::pearson:
            return pearson(x, y);
        case CorrelationKind::spearman: {
            const std::vector<double> rx = rank_transform(x);
            const std::vector<double> ry = rank_transform(y);
            return pearson(rx, ry);
        }
        case CorrelationKind::kendall:
            return kendall_tau_b(x, y);
    }
    throw std::invalid_argument("correlation: unknown kind");
}

double cophenetic_correlation(const CondensedDist& t, const CondensedDist& d) {
    if (t.n != d.n)
        throw std::invalid_argument("cophenetic_correlation: size mismatch");
    return correlation(t.values, d.values, CorrelationKind::pearson);
}

double rand_index(const Partition& a, const Partition& b) {
    const std::size_t n = a.labels.size();
    if (b.labels.size() != n)
        throw std::invalid_argument("rand_index: partition length mismatch");
    if (n < 2) throw std::invalid_argument("rand_index: need at least 2 items");

    std::unordered_map<int, std::uint64_t> row_sizes, col_sizes;
    std::unordered_map<std::uint64_t, std::uint64_t> cells;
    std::unordered_map<int, std::uint32_t> a_ids, b_ids;
    for (std::size_t i = 0; i < n; ++i) {
        const auto ai = a_ids.emplace(a.labels[i], static_cast<std::uint32_t>(a_ids.size()))
                            .first->second;
        const auto bi = b_ids.emplace(b.labels[i], static_cast<std::uint32_t>(b_ids.size()))
                            .first->second;
        ++row_sizes[a.labels[i]];
        ++col_sizes[b.labels[i]];
        ++cells[(static_cast<std::uint64_t>(ai) << 32) | bi];
    }

    std::uint64_t together_both = 0, together_a = 0, together_b = 0;
    for (const auto& [key, count] : cells) together_both += choose2(count);
    for (const auto& [label, count] : row_sizes) together_a += choose2(count);
    for (const auto& [label, count] : col_sizes) together_b += choose2(count);

    const std::uint64_t total = choose2(n);
    const std::uint64_t agreements =
        total + 2 * together_both - together_a - together_b;
    return static_cast<double>(agreements) / static_cast<double>(total);
}

LcaSimilarityResult lca_similarity(const Dendrogram& da, const Dendrogram& db,
                                   LcaMode mode) {
    if (da.n_leaves != db.n_leaves)
        throw std::invalid_argument("lca_similarity: leaf count mismatch");
    const CondensedDist la = lca_distances(da, mode);
    const CondensedDist lb = lca_distances(db, mode);
    return {correlation(la.values, lb.values, CorrelationKind::pearson),
            correlation(la.values, lb.values, CorrelationKind::spearman),
            correlation(la.values, lb.values, CorrelationKind::kendall)};
}

std::string SimilarityReport::to_json() const {
    nlohmann::json j;
    j["lca_pearson"] = lca_pearson;
    j["lca_spearman"] = lca_spearman;
    j["lca_kendall"] = lca_kendall;
    j["coph_d1_to_p2"] = coph_d1_to_p2;
    j["coph_d2_to_p1"] = coph_d2_to_p1;
    j["n"] = n;
    j["linkage"] = linkage;
    j["metric"] = metric;
    j["lca_mode"] = lca_mode;
    return j.dump(2) + "\n";
}

namespace {

// Seeded subsample of `keep` distinct positions in ascending order.
std::vector<std::size_t> sample_positions(std::size_t total, std::size_t keep,
                                          std::uint64_t seed) {
    std::vector<std::size_t> pool(total);
    std::iota(pool.begin(), pool.end(), 0);
    Rng rng(seed);
    for (std::size_t i = 0; i < keep; ++i) {
        const std::size_t j = i + rng.uniform_below(total - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(keep);
    std::sort(pool.begin(), pool.end());
    return pool;
}

std::vector<double> gather(const std::vector<double>& v,
                           const std::vector<std::size_t>& positions) {
    std::vector<double> out(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) out[i] = v[positions[i]];
    return out;
}

} // namespace

SimilarityReport structural_similarity(const Mat& a, const Mat& b,
                                       const SimilarityConfig& cfg) {
    if (a.rows() != b.rows())
        throw std::invalid_argument("structural_similarity: row count mismatch");
    if (a.rows() < 3)
        throw std::invalid_argument("structural_similarity: need at least 3 rows");

    const CondensedDist dist_a = pairwise_distance(a, cfg.metric);
    const CondensedDist dist_b = pairwise_distance(b, cfg.metric);
    const Dendrogram dend_a = agglomerate(dist_a, cfg.linkage);
    const Dendrogram dend_b = agglomerate(dist_b, cfg.linkage);

    std::vector<double> lca_a = lca_distances(dend_a, cfg.lca_mode).values;
    std::vector<double> lca_b = lca_distances(dend_b, cfg.lca_mode).values;
    std::vector<double> coph_a = cophenetic_distances(dend_a).values;
    std::vector<double> coph_b = cophenetic_distances(dend_b).values;
    std::vector<double> raw_a = dist_a.values;
    std::vector<double> raw_b = dist_b.values;

    if (cfg.max_pairs > 0 && cfg.max_pairs < raw_a.size()) {
        const auto keep = sample_positions(raw_a.size(), cfg.max_pairs, cfg.seed);
        lca_a = gather(lca_a, keep);
        lca_b = gather(lca_b, keep);
        coph_a = gather(coph_a, keep);
        coph_b = gather(coph_b, keep);
        raw_a = gather(raw_a, keep);
        raw_b = gather(raw_b, keep);
    }

    SimilarityReport report;
    report.lca_pearson = correlation(lca_a, lca_b, CorrelationKind::pearson);
    report.lca_spearman = correlation(lca_a, lca_b, CorrelationKind::spearman);
    report.lca_kendall = correlation(lca_a, lca_b, CorrelationKind::kendall);
    report.coph_d1_to_p2 = correlation(coph_a, raw_b, CorrelationKind::pearson);
    report.coph_d2_to_p1 = correlation(coph_b, raw_a, CorrelationKind::pearson);
    report.n = a.rows();
    report.linkage = to_string(cfg.linkage);
    report.metric = to_string(cfg.metric);
    report.lca_mode = to_string(cfg.lca_mode);
    return report;
}

void Hierarchy::validate() const {
    if (levels.empty()) throw std::invalid_argument("Hierarchy: no levels");
    const std::size_t n = levels.front().size();
    if (n == 0) throw std::invalid_argument("Hierarchy: no items");
    for (const auto& level : levels)
        if (level.size() != n)
            throw std::invalid_argument("Hierarchy: level length mismatch");
    for (std::size_t l = 1; l < levels.size(); ++l) {
        std::unordered_map<int, int> parent;
        for (std::size_t i = 0; i < n; ++i) {
            const auto [it, inserted] = parent.emplace(levels[l][i], levels[l - 1][i]);
            if (!inserted && it->second != levels[l - 1][i])
                throw std::invalid_argument(
                    "Hierarchy: class " + std::to_string(levels[l][i]) + " at level " +
                    std::to_string(l + 1) + " has two parents");
        }
    }
}

std::size_t Hierarchy::n_classes(std::size_t level) const {
    if (level >= levels.size())
        throw std::invalid_argument("Hierarchy: level out of range");
    const std::unordered_set<int> distinct(levels[level].begin(), levels[level].end());
    return distinct.size();
}

std::vector<int> Hierarchy::coarsen(std::span<const int> finest_labels,
                                    std::size_t level) const {
    if (level >= levels.size())
        throw std::invalid_argument("Hierarchy: level out of range");
    std::unordered_map<int, int> map;
    const auto& finest = levels.back();
    for (std::size_t i = 0; i < finest.size(); ++i) map.emplace(finest[i], levels[level][i]);
    std::vector<int> out(finest_labels.size());
    for (std::size_t i = 0; i < finest_labels.size(); ++i) {
        const auto it = map.find(finest_labels[i]);
        if (it == map.end())
            throw std::invalid_argument("Hierarchy: unknown finest class " +
                                        std::to_string(finest_labels[i]));
        out[i] = it->second;
    }
    return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

int parse_int_field(const std::string& s, const char* what) {
    std::size_t pos = 0;
    int value = 0;
    try {
        value = std::stoi(s, &pos);
    } catch (const std::exception&) {
        throw IoError(std::string(what) + ": bad integer '" + s + "'");
    }
    if (pos != s.size())
        throw IoError(std::string(what) + ": bad integer '" + s + "'");
    return value;
}

} // namespace

Hierarchy Hierarchy::from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw IoError("hierarchy csv: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line);
    if (header.size() < 2 || header[0] != "item_id")
        throw IoError("hierarchy csv: header must be item_id,level1,...");
    const std::size_t n_levels = header.size() - 1;

    std::vector<std::pair<int, std::vector<int>>> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != n_levels + 1)
            throw IoError("hierarchy csv: row has " + std::to_string(fields.size()) +
                          " fields, expected " + std::to_string(n_levels + 1));
        std::vector<int> labels(n_levels);
        const int id = parse_int_field(fields[0], "hierarchy csv");
        for (std::size_t l = 0; l < n_levels; ++l)
            labels[l] = parse_int_field(fields[l + 1], "hierarchy csv");
        rows.emplace_back(id, std::move(labels));
    }
    if (rows.empty()) throw IoError("hierarchy csv: no data rows");

    const std::size_t n = rows.size();
    Hierarchy h;
    h.levels.assign(n_levels, std::vector<int>(n));
    std::vector<bool> seen(n, false);
    for (const auto& [id, labels] : rows) {
        if (id < 0 || static_cast<std::size_t>(id) >= n || seen[static_cast<std::size_t>(id)])
            throw IoError("hierarchy csv: item ids must cover 0.." +
                          std::to_string(n - 1) + " exactly once");
        seen[static_cast<std::size_t>(id)] = true;
        for (std::size_t l = 0; l < n_levels; ++l)
            h.levels[l][static_cast<std::size_t>(id)] = labels[l];
    }
    try {
        h.validate();
    } catch (const std::invalid_argument& e) {
        throw IoError(std::string("hierarchy csv: ") + e.what());
    }
    return h;
}

std::string Hierarchy::to_csv() const {
    validate();
    std::string out = "item_id";
    for (std::size_t l = 0; l < levels.size(); ++l)
        out += ",level" + std::to_string(l + 1);
    out += "\n";
    for (std::size_t i = 0; i < n_items(); ++i) {
        out += std::to_string(i);
        for (const auto& level : levels) out += "," + std::to_string(level[i]);
        out += "\n";
    }
    return out;
}

std::vector<double> hierarchical_rand(const Mat& x, const Hierarchy& h,
                                      const GraphConfig& gcfg, std::uint64_t seed) {
    h.validate();
    if (h.n_items() != x.rows())
        throw std::invalid_argument("hierarchical_rand: label/row count mismatch");
    std::vector<double> out;
    out.reserve(h.n_levels());
    for (std::size_t l = 0; l < h.n_levels(); ++l) {
        const std::size_t k = h.n_classes(l);
        const Partition clusters = spectral_clustering(x, k, gcfg, seed + l);
        out.push_back(rand_index(clusters, Partition{h.levels[l]}));
    }
    return out;
}

RandSweep rand_index_sweep(const Mat& x, std::span<const int> finest_labels,
                           std::size_t k_min, std::size_t k_max,
                           const GraphConfig& gcfg, std::uint64_t seed) {
    if (finest_labels.size() != x.rows())
        throw std::invalid_argument("rand_index_sweep: label/row count mismatch");
    if (k_min < 1 || k_min > k_max || k_max > x.rows())
        throw std::invalid_argument("rand_index_sweep: bad cluster range");
    const Partition truth{std::vector<int>(finest_labels.begin(), finest_labels.end())};
    RandSweep sweep;
    for (std::size_t k = k_min; k <= k_max; ++k) {
        sweep.ks.push_back(k);
        sweep.values.push_back(rand_index(spectral_clustering(x, k, gcfg, seed + k), truth));
    }
    return sweep;
}

std::vector<double> knn_hierarchical_classify(const Mat& train,
                                              std::span<const int> train_finest,
                                              const Mat& test, const Hierarchy& h,
                                              std::size_t k) {
    h.validate();
    if (train.rows() == 0) throw std::invalid_argument("knn: empty training set");
    if (train_finest.size() != train.rows())
        throw std::invalid_argument("knn: training label count mismatch");
    if (h.n_items() != test.rows())
        throw std::invalid_argument("knn: hierarchy/test row count mismatch");
    if (k < 1 || k > train.rows())
        throw std::invalid_argument("knn: require 1 <= k <= train rows");

    const Mat dist = pairwise_distance(test, train, Metric::cosine);
    std::vector<int> finest_pred(test.rows());
    std::vector<std::size_t> order(train.rows());
    for (std::size_t i = 0; i < test.rows(); ++i) {
        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                          order.end(), [&](std::size_t a, std::size_t b) {
                              const double da = dist(i, a), db = dist(i, b);
                              return da < db || (da == db && a < b);
                          });
        std::unordered_map<int, std::size_t> votes;
        std::unordered_map<int, double> best_dist;
        for (std::size_t t = 0; t < k; ++t) {
            const int label = train_finest[order[t]];
            ++votes[label];
            const auto [it, inserted] = best_dist.emplace(label, dist(i, order[t]));
            if (!inserted) it->second = std::min(it->second, dist(i, order[t]));
        }
        int winner = train_finest[order[0]];
        for (const auto& [label, count] : votes) {
            if (label == winner) continue;
            const std::size_t wc = votes[winner];
            if (count > wc ||
                (count == wc && best_dist[label] < best_dist[winner]) ||
                (count == wc && best_dist[label] == best_dist[winner] && label < winner))
                winner = label;
        }
        finest_pred[i] = winner;
    }

    std::vector<double> accuracy(h.n_levels());
    for (std::size_t l = 0; l < h.n_levels(); ++l) {
        const std::vector<int> pred = h.coarsen(finest_pred, l);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < test.rows(); ++i)
            if (pred[i] == h.levels[l][i]) ++hits;
        accuracy[l] = static_cast<double>(hits) / static_cast<double>(test.rows());
    }
    return accuracy;
}

} // namespace sag
