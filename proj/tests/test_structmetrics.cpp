#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "sag/errors.hpp"
#include "sag/hierclust.hpp"
#include "sag/mat.hpp"
#include "sag/numkit.hpp"
#include "sag/rng.hpp"
#include "sag/structmetrics.hpp"

using namespace sag;

namespace {

Mat random_points(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    Mat x(n, d);
    for (auto& v : x.data()) v = rng.gaussian();
    return x;
}

// Quadratic tie-corrected tau-b, straight from the definition.
double naive_kendall(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    std::int64_t num = 0;
    std::uint64_t tied_x = 0, tied_y = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = x[i] - x[j];
            const double dy = y[i] - y[j];
            if (dx == 0.0) ++tied_x;
            if (dy == 0.0) ++tied_y;
            if (dx == 0.0 || dy == 0.0) continue;
            num += ((dx > 0.0) == (dy > 0.0)) ? 1 : -1;
        }
    const std::uint64_t n0 = n * (n - 1) / 2;
    const double den = std::sqrt(static_cast<double>(n0 - tied_x) *
                                 static_cast<double>(n0 - tied_y));
    return static_cast<double>(num) / den;
}

// Quadratic Rand index, straight from the pair-agreement definition.
double naive_rand(const std::vector<int>& a, const std::vector<int>& b) {
    const std::size_t n = a.size();
    std::size_t agree = 0, total = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            ++total;
            if ((a[i] == a[j]) == (b[i] == b[j])) ++agree;
        }
    return static_cast<double>(agree) / static_cast<double>(total);
}

// Orthogonal matrix from Gram-Schmidt over a seeded Gaussian draw.
Mat random_orthogonal(std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    Mat q(d, d);
    for (auto& v : q.data()) v = rng.gaussian();
    for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t prev = 0; prev < c; ++prev) {
            double dot = 0.0;
            for (std::size_t r = 0; r < d; ++r) dot += q(r, c) * q(r, prev);
            for (std::size_t r = 0; r < d; ++r) q(r, c) -= dot * q(r, prev);
        }
        double norm = 0.0;
        for (std::size_t r = 0; r < d; ++r) norm += q(r, c) * q(r, c);
        norm = std::sqrt(norm);
        for (std::size_t r = 0; r < d; ++r) q(r, c) /= norm;
    }
    return q;
}

} // namespace

TEST_CASE("correlation: identity, reversal, and a near-linear triple") {
    const std::vector<double> x = {1.0, 2.0, 3.0};
    const std::vector<double> rev = {3.0, 2.0, 1.0};
    const std::vector<double> y = {1.0, 2.0, 4.0};

    for (CorrelationKind k :
         {CorrelationKind::pearson, CorrelationKind::spearman, CorrelationKind::kendall}) {
        CHECK(correlation(x, x, k) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(correlation(x, rev, k) == doctest::Approx(-1.0).epsilon(1e-12));
    }

    CHECK(correlation(x, y, CorrelationKind::pearson) ==
          doctest::Approx(0.9819805060619659).epsilon(1e-12));
    CHECK(correlation(x, y, CorrelationKind::spearman) ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK(correlation(x, y, CorrelationKind::kendall) ==
          doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("spearman averages tied ranks") {
    const std::vector<double> x = {1.0, 1.0, 2.0};
    const std::vector<double> y = {1.0, 2.0, 3.0};
    CHECK(correlation(x, y, CorrelationKind::spearman) ==
          doctest::Approx(std::sqrt(3.0) / 2.0).epsilon(1e-12));
}

TEST_CASE("correlation input contract") {
    const std::vector<double> x = {1.0, 2.0, 3.0};
    const std::vector<double> shorter = {1.0, 2.0};
    const std::vector<double> constant = {5.0, 5.0, 5.0};
    std::vector<double> with_nan = {1.0, std::nan(""), 3.0};

    for (CorrelationKind k :
         {CorrelationKind::pearson, CorrelationKind::spearman, CorrelationKind::kendall}) {
        CHECK_THROWS_AS((void)correlation(x, shorter, k), std::invalid_argument);
        CHECK_THROWS_AS((void)correlation(x, with_nan, k), std::invalid_argument);
        CHECK_THROWS_AS((void)correlation(constant, x, k), DegenerateInput);
        CHECK_THROWS_AS((void)correlation(x, constant, k), DegenerateInput);
    }
    const std::vector<double> one = {1.0};
    CHECK_THROWS_AS((void)correlation(one, one, CorrelationKind::pearson),
                    std::invalid_argument);
}

TEST_CASE("kendall tau-b matches a quadratic oracle on tied data") {
    Rng rng(2718);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 3 + rng.uniform_below(48);
        std::vector<double> x(n), y(n);
        // Small alphabets force heavy ties.
        for (auto& v : x) v = static_cast<double>(rng.uniform_below(6));
        for (auto& v : y) v = static_cast<double>(rng.uniform_below(6));
        const bool x_const = std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; });
        const bool y_const = std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
        if (x_const || y_const) continue;
        CHECK(correlation(x, y, CorrelationKind::kendall) ==
              doctest::Approx(naive_kendall(x, y)).epsilon(1e-12).scale(1.0));
    }
}

TEST_CASE("kendall is exactly +/-1 on strictly monotone data") {
    Rng rng(9);
    std::vector<double> x(200);
    for (auto& v : x) v = rng.gaussian();
    std::vector<double> inc = x;
    std::sort(inc.begin(), inc.end());
    std::vector<double> up(inc.size()), down(inc.size());
    std::iota(up.begin(), up.end(), 0.0);
    for (std::size_t i = 0; i < down.size(); ++i) down[i] = -up[i];
    CHECK(correlation(inc, up, CorrelationKind::kendall) == 1.0);
    CHECK(correlation(inc, down, CorrelationKind::kendall) == -1.0);
}

TEST_CASE("cophenetic correlation: exact ultrametric input and the chain triple") {
    // D already ultrametric: the dendrogram reproduces it, correlation 1.
    CondensedDist ultra(3);
    ultra.at(0, 1) = 1.0;
    ultra.at(0, 2) = 4.0;
    ultra.at(1, 2) = 4.0;
    const CondensedDist t0 = cophenetic_distances(agglomerate(ultra, LinkageKind::single));
    CHECK(cophenetic_correlation(t0, ultra) == doctest::Approx(1.0).epsilon(1e-12));

    // Points {0, 1, 5}, average linkage: T = (1, 4.5, 4.5) against
    // D = (1, 5, 4) gives 7 / (2 sqrt(13)).
    const Mat x = Mat::from_rows({{0.0}, {1.0}, {5.0}});
    const CondensedDist d = pairwise_distance(x, Metric::euclidean);
    const CondensedDist t =
        cophenetic_distances(agglomerate(x, Metric::euclidean, LinkageKind::average));
    CHECK(cophenetic_correlation(t, d) ==
          doctest::Approx(7.0 / (2.0 * std::sqrt(13.0))).epsilon(1e-12));

    CondensedDist constant(3);
    constant.at(0, 1) = constant.at(0, 2) = constant.at(1, 2) = 2.0;
    CHECK_THROWS_AS((void)cophenetic_correlation(t0, constant), DegenerateInput);
}

TEST_CASE("rand_index hand values") {
    const Partition a{{0, 0, 1, 1}};
    const Partition b{{0, 1, 0, 1}};
    CHECK(rand_index(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(rand_index(a, a) == 1.0);

    // Relabeling does not matter.
    const Partition a_relabeled{{7, 7, -2, -2}};
    CHECK(rand_index(a, a_relabeled) == 1.0);

    const Partition mismatch{{0, 1}};
    CHECK_THROWS_AS((void)rand_index(a, mismatch), std::invalid_argument);
}

TEST_CASE("rand_index matches a quadratic oracle and is symmetric") {
    Rng rng(606);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.uniform_below(11);
        std::vector<int> a(n), b(n);
        for (auto& v : a) v = static_cast<int>(rng.uniform_below(4));
        for (auto& v : b) v = static_cast<int>(rng.uniform_below(4));
        const double fast = rand_index(Partition{a}, Partition{b});
        CHECK(fast == naive_rand(a, b));
        CHECK(fast == rand_index(Partition{b}, Partition{a}));
    }
}

TEST_CASE("rand_index of independent balanced labelings hovers near 1/2") {
    Rng rng(11);
    std::vector<int> a(400), b(400);
    for (std::size_t i = 0; i < 400; ++i) {
        a[i] = static_cast<int>(i % 2);
        b[i] = static_cast<int>(rng.uniform_below(2));
    }
    CHECK(rand_index(Partition{a}, Partition{b}) == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("lca_similarity is exactly 1 for identical and mirrored trees") {
    const Mat x = random_points(20, 3, 42);
    const Dendrogram d = agglomerate(x, Metric::euclidean, LinkageKind::average);

    const LcaSimilarityResult self = lca_similarity(d, d);
    CHECK(self.pearson == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(self.spearman == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(self.kendall == doctest::Approx(1.0).epsilon(1e-12));

    Dendrogram mirrored = d;
    for (auto& m : mirrored.merges) std::swap(m.left, m.right);
    const LcaSimilarityResult mir = lca_similarity(d, mirrored);
    CHECK(mir.pearson == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mir.spearman == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mir.kendall == doctest::Approx(1.0).epsilon(1e-12));

    Dendrogram small;
    small.n_leaves = 2;
    small.merges = {{0, 1, 1.0, 2}};
    CHECK_THROWS_AS((void)lca_similarity(d, small), std::invalid_argument);
}

TEST_CASE("lca_similarity between unrelated embeddings is near zero") {
    int quiet = 0;
    const int seeds = 20;
    for (int s = 0; s < seeds; ++s) {
        const Mat a = random_points(64, 16, 3000 + static_cast<std::uint64_t>(2 * s));
        const Mat b = random_points(64, 16, 3001 + static_cast<std::uint64_t>(2 * s));
        const Dendrogram da = agglomerate(a, Metric::euclidean, LinkageKind::average);
        const Dendrogram db = agglomerate(b, Metric::euclidean, LinkageKind::average);
        const LcaSimilarityResult r = lca_similarity(da, db);
        if (std::abs(r.pearson) < 0.3 && std::abs(r.spearman) < 0.3 &&
            std::abs(r.kendall) < 0.3)
            ++quiet;
    }
    CHECK(quiet >= 18);
}

TEST_CASE("structural_similarity of a set with itself") {
    const Mat a = random_points(24, 6, 77);
    const SimilarityReport r = structural_similarity(a, a);

    CHECK(r.lca_pearson == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.lca_spearman == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.lca_kendall == doctest::Approx(1.0).epsilon(1e-12));

    // Both cross cophenetic statistics reduce to the classic cophenetic
    // correlation of the dendrogram against its own input distances. That is
    // below 1 whenever the input is not already ultrametric.
    const CondensedDist dist = pairwise_distance(a, Metric::cosine);
    const CondensedDist coph =
        cophenetic_distances(agglomerate(dist, LinkageKind::ward));
    const double classic = cophenetic_correlation(coph, dist);
    CHECK(r.coph_d1_to_p2 == classic);
    CHECK(r.coph_d2_to_p1 == classic);
    CHECK(r.coph_d1_to_p2 < 1.0);
    CHECK(r.coph_d1_to_p2 > 0.5);

    CHECK(r.n == 24);
    CHECK(r.linkage == "ward");
    CHECK(r.metric == "cosine");
    CHECK(r.lca_mode == "hops");
}

TEST_CASE("structural_similarity is invariant under orthogonal maps") {
    const Mat a = random_points(30, 5, 123);
    const Mat q = random_orthogonal(5, 321);
    const Mat b = matmul(a, q);

    const SimilarityReport self = structural_similarity(a, a);
    const SimilarityReport rot = structural_similarity(a, b);
    CHECK(rot.lca_pearson == doctest::Approx(self.lca_pearson).epsilon(1e-9));
    CHECK(rot.lca_spearman == doctest::Approx(self.lca_spearman).epsilon(1e-9));
    CHECK(rot.lca_kendall == doctest::Approx(self.lca_kendall).epsilon(1e-9));
    CHECK(rot.coph_d1_to_p2 == doctest::Approx(self.coph_d1_to_p2).epsilon(1e-9));
    CHECK(rot.coph_d2_to_p1 == doctest::Approx(self.coph_d2_to_p1).epsilon(1e-9));
    CHECK(rot.lca_pearson == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("structural_similarity is invariant under joint row permutation") {
    const Mat a = random_points(18, 4, 5);
    const Mat b = random_points(18, 4, 6);
    const SimilarityReport direct = structural_similarity(a, b);

    std::vector<std::size_t> perm(18);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(99);
    for (std::size_t i = 17; i > 0; --i)
        std::swap(perm[i], perm[rng.uniform_below(i + 1)]);
    Mat pa(18, 4), pb(18, 4);
    for (std::size_t i = 0; i < 18; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            pa(i, j) = a(perm[i], j);
            pb(i, j) = b(perm[i], j);
        }
    const SimilarityReport permuted = structural_similarity(pa, pb);
    CHECK(permuted.lca_pearson == doctest::Approx(direct.lca_pearson).epsilon(1e-9));
    CHECK(permuted.lca_spearman == doctest::Approx(direct.lca_spearman).epsilon(1e-9));
    CHECK(permuted.lca_kendall == doctest::Approx(direct.lca_kendall).epsilon(1e-9));
    CHECK(permuted.coph_d1_to_p2 == doctest::Approx(direct.coph_d1_to_p2).epsilon(1e-9));
    CHECK(permuted.coph_d2_to_p1 == doctest::Approx(direct.coph_d2_to_p1).epsilon(1e-9));
}

TEST_CASE("structural_similarity null distribution stays near zero") {
    int quiet = 0;
    const int seeds = 20;
    for (int s = 0; s < seeds; ++s) {
        const Mat a = random_points(64, 16, 8000 + static_cast<std::uint64_t>(2 * s));
        const Mat b = random_points(64, 16, 8001 + static_cast<std::uint64_t>(2 * s));
        const SimilarityReport r = structural_similarity(a, b);
        if (std::abs(r.lca_pearson) < 0.3 && std::abs(r.lca_spearman) < 0.3 &&
            std::abs(r.lca_kendall) < 0.3 && std::abs(r.coph_d1_to_p2) < 0.3 &&
            std::abs(r.coph_d2_to_p1) < 0.3)
            ++quiet;
    }
    CHECK(quiet >= 18);
}

TEST_CASE("structural_similarity pair subsampling is seeded and sane") {
    const Mat a = random_points(40, 6, 1);
    const Mat b = random_points(40, 6, 2);

    SimilarityConfig cfg;
    cfg.max_pairs = 200;
    cfg.seed = 5;
    const SimilarityReport r1 = structural_similarity(a, b, cfg);
    const SimilarityReport r2 = structural_similarity(a, b, cfg);
    CHECK(r1.lca_pearson == r2.lca_pearson);
    CHECK(r1.coph_d1_to_p2 == r2.coph_d1_to_p2);

    const SimilarityReport full = structural_similarity(a, b);
    CHECK(std::abs(r1.lca_pearson - full.lca_pearson) < 0.3);
    CHECK(std::abs(r1.coph_d1_to_p2 - full.coph_d1_to_p2) < 0.3);

    // Self-similarity still reports perfect LCA agreement on any subsample.
    const SimilarityReport self = structural_similarity(a, a, cfg);
    CHECK(self.lca_pearson == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(self.lca_kendall == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("structural_similarity validates its inputs") {
    const Mat a = random_points(10, 3, 0);
    const Mat b = random_points(11, 3, 0);
    CHECK_THROWS_AS((void)structural_similarity(a, b), std::invalid_argument);
    const Mat tiny = random_points(2, 3, 0);
    CHECK_THROWS_AS((void)structural_similarity(tiny, tiny), std::invalid_argument);
}

TEST_CASE("SimilarityReport serializes every statistic") {
    const Mat a = random_points(12, 4, 3);
    const std::string json = structural_similarity(a, a).to_json();
    for (const char* key :
         {"lca_pearson", "lca_spearman", "lca_kendall", "coph_d1_to_p2",
          "coph_d2_to_p1", "n", "linkage", "metric", "lca_mode"})
        CHECK(json.find(key) != std::string::npos);
    CHECK(json.back() == '\n');
}

TEST_CASE("Hierarchy validation and coarsening") {
    Hierarchy h;
    h.levels = {
        {0, 0, 0, 1, 1, 1},
        {0, 0, 1, 2, 2, 3},
    };
    CHECK_NOTHROW(h.validate());
    CHECK(h.n_items() == 6);
    CHECK(h.n_levels() == 2);
    CHECK(h.n_classes(0) == 2);
    CHECK(h.n_classes(1) == 4);

    const std::vector<int> finest = {3, 0, 2, 1};
    const std::vector<int> coarse = h.coarsen(finest, 0);
    CHECK(coarse == std::vector<int>{1, 0, 1, 0});
    const std::vector<int> same = h.coarsen(finest, 1);
    CHECK(same == finest);
    CHECK_THROWS_AS((void)h.coarsen(std::vector<int>{9}, 0), std::invalid_argument);

    // Fine class 1 cannot have two coarse parents.
    Hierarchy bad;
    bad.levels = {
        {0, 0, 1, 1},
        {0, 1, 1, 2},
    };
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    Hierarchy ragged;
    ragged.levels = {{0, 0}, {0}};
    CHECK_THROWS_AS(ragged.validate(), std::invalid_argument);
}

TEST_CASE("Hierarchy CSV round-trip and malformed input") {
    Hierarchy h;
    h.levels = {
        {0, 0, 1, 1, 1},
        {0, 1, 2, 2, 3},
    };
    const std::string csv = h.to_csv();
    CHECK(csv.rfind("item_id,level1,level2\n", 0) == 0);
    const Hierarchy back = Hierarchy::from_csv(csv);
    CHECK(back.levels == h.levels);

    // Rows may arrive in any order as long as ids cover 0..n-1.
    const Hierarchy shuffled = Hierarchy::from_csv(
        "item_id,level1\n2,1\n0,0\n1,0\n");
    CHECK(shuffled.levels[0] == std::vector<int>{0, 0, 1});

    CHECK_THROWS_AS((void)Hierarchy::from_csv(""), IoError);
    CHECK_THROWS_AS((void)Hierarchy::from_csv("wrong,header\n0,1\n"), IoError);
    CHECK_THROWS_AS((void)Hierarchy::from_csv("item_id,level1\n0,0\n0,1\n"), IoError);
    CHECK_THROWS_AS((void)Hierarchy::from_csv("item_id,level1\n0,0\n5,1\n"), IoError);
    CHECK_THROWS_AS((void)Hierarchy::from_csv("item_id,level1\n0,abc\n"), IoError);
    CHECK_THROWS_AS((void)Hierarchy::from_csv("item_id,level1\n"), IoError);
    // Parent consistency is enforced on load.
    CHECK_THROWS_AS(
        (void)Hierarchy::from_csv("item_id,level1,level2\n0,0,0\n1,1,0\n"), IoError);
}

TEST_CASE("hierarchical_rand recovers a two-level block layout exactly") {
    // Two coarse groups 10 apart on the x axis; two fine blocks per group one
    // apart on the y axis; three identical points per fine block.
    Mat x(12, 2);
    Hierarchy h;
    h.levels.assign(2, std::vector<int>(12));
    for (std::size_t i = 0; i < 12; ++i) {
        const std::size_t coarse = i / 6;
        const std::size_t fine = i / 3;
        x(i, 0) = 10.0 * static_cast<double>(coarse);
        x(i, 1) = static_cast<double>(fine % 2);
        h.levels[0][i] = static_cast<int>(coarse);
        h.levels[1][i] = static_cast<int>(fine);
    }
    GraphConfig gcfg;
    gcfg.n_neighbors = 11;
    const std::vector<double> scores = hierarchical_rand(x, h, gcfg, 0);
    REQUIRE(scores.size() == 2);
    CHECK(scores[0] == 1.0);
    CHECK(scores[1] == 1.0);

    Hierarchy wrong = h;
    wrong.levels[0].pop_back();
    CHECK_THROWS_AS((void)hierarchical_rand(x, wrong, gcfg, 0), std::invalid_argument);
}

TEST_CASE("hierarchical_rand scores a single-class level as 1") {
    Rng rng(4);
    Mat x(14, 3);
    for (auto& v : x.data()) v = rng.gaussian();
    Hierarchy h;
    h.levels = {std::vector<int>(14, 0)};
    // One class means one cluster: every pair agrees.
    const std::vector<double> scores = hierarchical_rand(x, h);
    REQUIRE(scores.size() == 1);
    CHECK(scores[0] == 1.0);
}

TEST_CASE("rand_index_sweep covers the inclusive range deterministically") {
    Rng rng(15);
    Mat x(30, 2);
    std::vector<int> labels(30);
    for (std::size_t i = 0; i < 30; ++i) {
        const std::size_t blob = i / 10;
        labels[i] = static_cast<int>(blob);
        x(i, 0) = 7.0 * static_cast<double>(blob) + 0.2 * rng.gaussian();
        x(i, 1) = (blob == 1 ? 5.0 : 0.0) + 0.2 * rng.gaussian();
    }
    const RandSweep sweep = rand_index_sweep(x, labels, 2, 6);
    REQUIRE(sweep.ks == std::vector<std::size_t>{2, 3, 4, 5, 6});
    REQUIRE(sweep.values.size() == 5);
    for (double v : sweep.values) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(sweep.values[1] == 1.0);  // k = 3 matches the generating blobs

    const RandSweep again = rand_index_sweep(x, labels, 2, 6);
    CHECK(again.values == sweep.values);

    CHECK_THROWS_AS((void)rand_index_sweep(x, labels, 5, 2), std::invalid_argument);
    CHECK_THROWS_AS((void)rand_index_sweep(x, labels, 2, 31), std::invalid_argument);
}

TEST_CASE("knn_hierarchical_classify: separable blobs are perfect at all levels") {
    Rng rng(32);
    const std::size_t per = 15;
    Mat train(2 * per, 3);
    std::vector<int> train_labels(2 * per);
    Mat test(10, 3);
    Hierarchy h;
    h.levels.assign(2, std::vector<int>(10));
    auto fill = [&](Mat& m, std::size_t row, int blob) {
        m(row, 0) = (blob == 0) ? 5.0 + rng.gaussian() * 0.2 : -5.0 + rng.gaussian() * 0.2;
        m(row, 1) = (blob == 0) ? 1.0 : -1.0;
        m(row, 2) = rng.gaussian() * 0.2;
    };
    for (std::size_t i = 0; i < 2 * per; ++i) {
        const int blob = static_cast<int>(i / per);
        train_labels[i] = blob;
        fill(train, i, blob);
    }
    for (std::size_t i = 0; i < 10; ++i) {
        const int blob = static_cast<int>(i / 5);
        fill(test, i, blob);
        h.levels[0][i] = 0;     // single coarse class
        h.levels[1][i] = blob;  // fine class = blob
    }
    const std::vector<double> acc = knn_hierarchical_classify(train, train_labels, test, h, 3);
    REQUIRE(acc.size() == 2);
    CHECK(acc[0] == 1.0);
    CHECK(acc[1] == 1.0);
}

TEST_CASE("knn_hierarchical_classify: k=1 on duplicated rows is exact") {
    const Mat train = random_points(12, 4, 8);
    std::vector<int> labels(12);
    for (std::size_t i = 0; i < 12; ++i) labels[i] = static_cast<int>(i % 4);
    Hierarchy h;
    h.levels.assign(2, std::vector<int>(12));
    for (std::size_t i = 0; i < 12; ++i) {
        h.levels[1][i] = labels[i];
        h.levels[0][i] = labels[i] / 2;
    }
    const std::vector<double> acc = knn_hierarchical_classify(train, labels, train, h, 1);
    CHECK(acc[0] == 1.0);
    CHECK(acc[1] == 1.0);
}

TEST_CASE("knn_hierarchical_classify: coarse accuracy never drops below fine") {
    Rng rng(66);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n_train = 12 + rng.uniform_below(20);
        const std::size_t n_test = 6 + rng.uniform_below(10);
        const Mat train = random_points(n_train, 4, 700 + 2 * static_cast<std::uint64_t>(trial));
        const Mat test = random_points(n_test, 4, 701 + 2 * static_cast<std::uint64_t>(trial));
        std::vector<int> train_labels(n_train);
        for (auto& l : train_labels) l = static_cast<int>(rng.uniform_below(6));
        Hierarchy h;
        h.levels.assign(2, std::vector<int>(n_test));
        for (std::size_t i = 0; i < n_test; ++i) {
            // First six rows cover every class so any prediction can coarsen.
            h.levels[1][i] =
                (i < 6) ? static_cast<int>(i) : static_cast<int>(rng.uniform_below(6));
            h.levels[0][i] = h.levels[1][i] / 2;
        }
        const std::size_t k = 1 + rng.uniform_below(5);
        const std::vector<double> acc =
            knn_hierarchical_classify(train, train_labels, test, h, k);
        REQUIRE(acc.size() == 2);
        CHECK(acc[0] >= acc[1]);
    }
}

TEST_CASE("knn_hierarchical_classify validates arguments") {
    const Mat train = random_points(8, 3, 1);
    const Mat test = random_points(4, 3, 2);
    const std::vector<int> labels = {0, 0, 1, 1, 2, 2, 3, 3};
    Hierarchy h;
    h.levels = {{0, 0, 1, 1}, {0, 1, 2, 3}};
    CHECK_NOTHROW((void)knn_hierarchical_classify(train, labels, test, h, 2));
    CHECK_THROWS_AS((void)knn_hierarchical_classify(train, labels, test, h, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)knn_hierarchical_classify(train, labels, test, h, 9),
                    std::invalid_argument);
    const std::vector<int> short_labels = {0, 1};
    CHECK_THROWS_AS((void)knn_hierarchical_classify(train, short_labels, test, h, 2),
                    std::invalid_argument);
}
