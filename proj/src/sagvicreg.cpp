#include "sag/sagvicreg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "sag/errors.hpp"
#include "sag/graph.hpp"
#include "sag/rng.hpp"

namespace sag {

void VicregConfig::validate() const {
    if (!(lambda_inv > 0.0) || !(mu_var > 0.0) || !(nu_cov > 0.0))
        throw std::invalid_argument("VicregConfig: loss weights must be positive");
    if (!(gamma > 0.0) || !(epsilon > 0.0))
        throw std::invalid_argument("VicregConfig: gamma and epsilon must be positive");
    if (k_neighbors < 1)
        throw std::invalid_argument("VicregConfig: k_neighbors must be >= 1");
    if (!(scale_percentile > 0.0) || !(scale_percentile < 100.0))
        throw std::invalid_argument("VicregConfig: scale_percentile must be in (0, 100)");
    if (!(scale_floor > 0.0))
        throw std::invalid_argument("VicregConfig: scale_floor must be positive");
}

namespace {

void check_min_rows(const Mat& y, const char* what) {
    if (y.rows() < 2)
        throw std::invalid_argument(std::string(what) + ": need at least 2 rows");
}

// Column means of y.
std::vector<double> column_means(const Mat& y) {
    std::vector<double> m(y.cols(), 0.0);
    for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < y.cols(); ++j) m[j] += y(i, j);
    for (double& v : m) v /= static_cast<double>(y.rows());
    return m;
}

} // namespace

double variance_term(const Mat& y, double gamma, double epsilon) {
    check_min_rows(y, "variance_term");
    const auto mean = column_means(y);
    const double n1 = static_cast<double>(y.rows() - 1);
    double total = 0.0;
    for (std::size_t j = 0; j < y.cols(); ++j) {
        double ss = 0.0;
        for (std::size_t i = 0; i < y.rows(); ++i) {
            const double d = y(i, j) - mean[j];
            ss += d * d;
        }
        const double sd = std::sqrt(ss / n1 + epsilon);
        total += std::max(0.0, gamma - sd);
    }
    return total / static_cast<double>(y.cols());
}

double invariance_term(const Mat& y, const Mat& y2) {
    if (!y.same_shape(y2))
        throw std::invalid_argument("invariance_term: shape mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < y.cols(); ++j) {
            const double d = y(i, j) - y2(i, j);
            total += d * d;
        }
    return total / static_cast<double>(y.rows());
}

double covariance_term(const Mat& y) {
    check_min_rows(y, "covariance_term");
    const std::size_t n = y.rows();
    const std::size_t k = y.cols();
    if (k == 1) return 0.0;
    const auto mean = column_means(y);
    Mat centered(n, k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) centered(i, j) = y(i, j) - mean[j];
    Mat cov = matmul_tn(centered, centered);
    const double n1 = static_cast<double>(n - 1);
    double total = 0.0;
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) {
            if (a == b) continue;
            const double c = cov(a, b) / n1;
            total += c * c;
        }
    return total / static_cast<double>(k);
}

double weighted_invariance(const Mat& z, const Mat& z2,
                           std::span<const double> weights) {
    if (!z.same_shape(z2))
        throw std::invalid_argument("weighted_invariance: shape mismatch");
    if (weights.size() != z.rows())
        throw std::invalid_argument("weighted_invariance: weight count mismatch");
    for (double w : weights)
        if (!(w >= 0.0) || !(w <= 1.0))
            throw std::invalid_argument("weighted_invariance: weights must be in [0, 1]");
    double total = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < z.cols(); ++j) {
            const double d = z(i, j) - z2(i, j);
            sq += d * d;
        }
        total += weights[i] * sq;
    }
    return total / static_cast<double>(z.rows());
}

CrossAffinity batch_affinity(const Mat& z, const Mat& z2, const VicregConfig& cfg) {
    cfg.validate();
    const std::size_t n = z.rows();
    const std::size_t m = z2.rows();
    if (cfg.k_neighbors > m)
        throw std::invalid_argument("batch_affinity: k_neighbors exceeds batch size");

    const Mat dist = pairwise_distance(z, z2, Metric::cosine);
    CrossAffinity out;
    out.w = Mat(n, m, 0.0);
    out.scales.resize(n);
    out.neighbors.assign(n, {});

    const std::size_t k = cfg.k_neighbors;
    std::vector<std::size_t> order(m);
    std::vector<double> adjusted(k);
    for (std::size_t i = 0; i < n; ++i) {
        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                          order.end(), [&](std::size_t a, std::size_t b) {
                              const double da = dist(i, a), db = dist(i, b);
                              return da < db || (da == db && a < b);
                          });
        const double nearest = dist(i, order[0]);
        for (std::size_t t = 0; t < k; ++t) adjusted[t] = dist(i, order[t]) - nearest;
        const double scale =
            std::max(percentile(adjusted, cfg.scale_percentile), cfg.scale_floor);
        out.scales[i] = scale;
        out.neighbors[i].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
        for (std::size_t t = 0; t < k; ++t)
            out.w(i, order[t]) = std::exp(-(adjusted[t] * adjusted[t]) / (scale * scale));
    }
    return out;
}

SampledPairs sample_pairs(const CrossAffinity& w, std::uint64_t seed) {
    const RandomWalk walk = random_walk_matrix(w.w);
    SampledPairs out;
    out.indices = sample_rows(walk, seed);
    out.weights.resize(out.indices.size());
    for (std::size_t i = 0; i < out.indices.size(); ++i)
        out.weights[i] = w.w(i, out.indices[i]);
    return out;
}

Mlp Mlp::make(std::span<const std::size_t> dims, std::uint64_t seed) {
    if (dims.size() < 2)
        throw std::invalid_argument("Mlp: need at least input and output dims");
    Rng rng(seed);
    Mlp net;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        DenseLayer layer{Mat(dims[l + 1], dims[l]), std::vector<double>(dims[l + 1])};
        const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
        for (double& v : layer.w.data()) v = (2.0 * rng.uniform() - 1.0) * bound;
        for (double& v : layer.b) v = (2.0 * rng.uniform() - 1.0) * bound;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

std::vector<Mat> Mlp::forward_trace(const Mat& x) const {
    if (x.cols() != input_dim())
        throw std::invalid_argument("Mlp: input dimension mismatch");
    std::vector<Mat> trace;
    trace.reserve(layers.size() + 1);
    trace.push_back(x);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Mat y = matmul_nt(trace.back(), layers[l].w);
        for (std::size_t i = 0; i < y.rows(); ++i)
            for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += layers[l].b[j];
        if (l + 1 < layers.size())
            for (double& v : y.data()) v = std::max(0.0, v);
        trace.push_back(std::move(y));
    }
    return trace;
}

Mat Mlp::forward(const Mat& x) const { return forward_trace(x).back(); }

Mat Mlp::backward(const std::vector<Mat>& trace, const Mat& grad_out,
                  MlpGrads& grads) const {
    Mat g = grad_out;
    for (std::size_t l = layers.size(); l-- > 0;) {
        const Mat& input = trace[l];
        const Mat dw = matmul_tn(g, input);
        for (std::size_t i = 0; i < dw.rows(); ++i)
            for (std::size_t j = 0; j < dw.cols(); ++j) grads.w[l](i, j) += dw(i, j);
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) grads.b[l][j] += g(i, j);
        g = matmul(g, layers[l].w);
        if (l > 0) {
            // trace[l] holds the rectified output feeding this layer
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j)
                    if (input(i, j) <= 0.0) g(i, j) = 0.0;
        }
    }
    return g;
}

MlpGrads Mlp::zero_grads() const {
    MlpGrads grads;
    for (const auto& layer : layers) {
        grads.w.emplace_back(layer.w.rows(), layer.w.cols(), 0.0);
        grads.b.emplace_back(layer.b.size(), 0.0);
    }
    return grads;
}

void Mlp::apply_update(const MlpGrads& grads, double lr) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        for (std::size_t i = 0; i < layers[l].w.rows(); ++i)
            for (std::size_t j = 0; j < layers[l].w.cols(); ++j)
                layers[l].w(i, j) -= lr * grads.w[l](i, j);
        for (std::size_t j = 0; j < layers[l].b.size(); ++j)
            layers[l].b[j] -= lr * grads.b[l][j];
    }
}

ToyEncoder ToyEncoder::make(std::size_t input_dim, std::uint64_t seed,
                            std::size_t rep_dim, std::size_t embed_dim,
                            std::size_t hidden) {
    const std::size_t enc_dims[] = {input_dim, hidden, rep_dim};
    const std::size_t exp_dims[] = {rep_dim, hidden, embed_dim};
    ToyEncoder enc;
    enc.encoder = Mlp::make(enc_dims, seed);
    enc.expander = Mlp::make(exp_dims, seed ^ 0x9E3779B97F4A7C15ULL);
    return enc;
}

Mat ToyEncoder::represent(const Mat& x) const { return encoder.forward(x); }

Mat ToyEncoder::embed(const Mat& x) const { return expander.forward(encoder.forward(x)); }

namespace {

// dL/dY of the variance term, scaled by `weight`, accumulated into grad.
void add_variance_grad(const Mat& y, double gamma, double epsilon, double weight,
                       Mat& grad) {
    const auto mean = column_means(y);
    const double n1 = static_cast<double>(y.rows() - 1);
    const double k = static_cast<double>(y.cols());
    for (std::size_t j = 0; j < y.cols(); ++j) {
        double ss = 0.0;
        for (std::size_t i = 0; i < y.rows(); ++i) {
            const double d = y(i, j) - mean[j];
            ss += d * d;
        }
        const double sd = std::sqrt(ss / n1 + epsilon);
        if (gamma - sd <= 0.0) continue;  // hinge inactive
        const double factor = -weight / (k * n1 * sd);
        for (std::size_t i = 0; i < y.rows(); ++i)
            grad(i, j) += factor * (y(i, j) - mean[j]);
    }
}

// dL/dY of the covariance term, scaled by `weight`: (4/(k(n-1))) * Yc * C0
// with C0 the zero-diagonal covariance. The centering Jacobian contributes
// nothing because every column of Yc * C0 is already mean-free.
void add_covariance_grad(const Mat& y, double weight, Mat& grad) {
    const std::size_t n = y.rows();
    const std::size_t k = y.cols();
    if (k == 1) return;
    const auto mean = column_means(y);
    Mat centered(n, k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) centered(i, j) = y(i, j) - mean[j];
    const double n1 = static_cast<double>(n - 1);
    Mat cov0 = matmul_tn(centered, centered);
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = 0; b < k; ++b) cov0(a, b) /= n1;
        cov0(a, a) = 0.0;
    }
    const Mat prod = matmul(centered, cov0);
    const double factor = 4.0 * weight / (static_cast<double>(k) * n1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) grad(i, j) += factor * prod(i, j);
}

struct ForwardPass {
    std::vector<Mat> enc_trace;
    std::vector<Mat> exp_trace;
};

ForwardPass run_forward(const ToyEncoder& enc, const Mat& x) {
    ForwardPass fp;
    fp.enc_trace = enc.encoder.forward_trace(x);
    fp.exp_trace = enc.expander.forward_trace(fp.enc_trace.back());
    return fp;
}

void run_backward(const ToyEncoder& enc, const ForwardPass& fp, const Mat& dz,
                  EncoderGrads& grads) {
    const Mat drep = enc.expander.backward(fp.exp_trace, dz, grads.expander);
    enc.encoder.backward(fp.enc_trace, drep, grads.encoder);
}

LossBreakdown assemble(double inv, double var, double cov, const VicregConfig& cfg) {
    LossBreakdown loss;
    loss.invariance = inv;
    loss.variance = var;
    loss.covariance = cov;
    loss.total = cfg.lambda_inv * inv + cfg.mu_var * var + cfg.nu_cov * cov;
    return loss;
}

Mat gather_rows(const Mat& x, std::span<const std::size_t> rows) {
    Mat out(rows.size(), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(rows[i], j);
    return out;
}

void check_views(const Mat& v1, const Mat& v2, const char* what) {
    if (!v1.same_shape(v2))
        throw std::invalid_argument(std::string(what) + ": view shape mismatch");
    if (v1.rows() < 2)
        throw std::invalid_argument(std::string(what) + ": batch must have >= 2 rows");
    require_finite(v1, what);
    require_finite(v2, what);
}

} // namespace

StepResult sag_step(const Mat& view1, const Mat& view2, const ToyEncoder& enc,
                    const VicregConfig& cfg, std::uint64_t seed) {
    check_views(view1, view2, "sag_step");
    cfg.validate();

    const ForwardPass fp1 = run_forward(enc, view1);
    const ForwardPass fp2 = run_forward(enc, view2);
    const Mat& z1 = fp1.exp_trace.back();
    const Mat& z2 = fp2.exp_trace.back();

    const CrossAffinity affinity = batch_affinity(z1, z2, cfg);
    const SampledPairs pairs = sample_pairs(affinity, seed);
    const Mat zpair = gather_rows(z2, pairs.indices);

    const std::size_t n = z1.rows();
    const double inv = weighted_invariance(z1, zpair, pairs.weights);
    const double var = 0.5 * (variance_term(z1, cfg.gamma, cfg.epsilon) +
                              variance_term(zpair, cfg.gamma, cfg.epsilon));
    const double cov = 0.5 * (covariance_term(z1) + covariance_term(zpair));

    Mat dz1(z1.rows(), z1.cols(), 0.0);
    Mat dzpair(zpair.rows(), zpair.cols(), 0.0);
    const double inv_factor = 2.0 * cfg.lambda_inv / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < z1.cols(); ++j) {
            const double g = inv_factor * pairs.weights[i] * (z1(i, j) - zpair(i, j));
            dz1(i, j) += g;
            dzpair(i, j) -= g;
        }
    add_variance_grad(z1, cfg.gamma, cfg.epsilon, 0.5 * cfg.mu_var, dz1);
    add_variance_grad(zpair, cfg.gamma, cfg.epsilon, 0.5 * cfg.mu_var, dzpair);
    add_covariance_grad(z1, 0.5 * cfg.nu_cov, dz1);
    add_covariance_grad(zpair, 0.5 * cfg.nu_cov, dzpair);

    // route the Z'' gradient back into the rows of Z' it was gathered from
    Mat dz2(z2.rows(), z2.cols(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < z2.cols(); ++j)
            dz2(pairs.indices[i], j) += dzpair(i, j);

    StepResult result;
    result.grads.encoder = enc.encoder.zero_grads();
    result.grads.expander = enc.expander.zero_grads();
    run_backward(enc, fp1, dz1, result.grads);
    run_backward(enc, fp2, dz2, result.grads);
    result.loss = assemble(inv, var, cov, cfg);
    result.pair_indices = pairs.indices;
    result.pair_weights = pairs.weights;
    return result;
}

StepResult vicreg_step(const Mat& view1, const Mat& view2, const ToyEncoder& enc,
                       const VicregConfig& cfg) {
    check_views(view1, view2, "vicreg_step");
    cfg.validate();

    const ForwardPass fp1 = run_forward(enc, view1);
    const ForwardPass fp2 = run_forward(enc, view2);
    const Mat& z1 = fp1.exp_trace.back();
    const Mat& z2 = fp2.exp_trace.back();

    const std::size_t n = z1.rows();
    const double inv = invariance_term(z1, z2);
    const double var = 0.5 * (variance_term(z1, cfg.gamma, cfg.epsilon) +
                              variance_term(z2, cfg.gamma, cfg.epsilon));
    const double cov = 0.5 * (covariance_term(z1) + covariance_term(z2));

    Mat dz1(z1.rows(), z1.cols(), 0.0);
    Mat dz2(z2.rows(), z2.cols(), 0.0);
    const double inv_factor = 2.0 * cfg.lambda_inv / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < z1.cols(); ++j) {
            const double g = inv_factor * (z1(i, j) - z2(i, j));
            dz1(i, j) += g;
            dz2(i, j) -= g;
        }
    add_variance_grad(z1, cfg.gamma, cfg.epsilon, 0.5 * cfg.mu_var, dz1);
    add_variance_grad(z2, cfg.gamma, cfg.epsilon, 0.5 * cfg.mu_var, dz2);
    add_covariance_grad(z1, 0.5 * cfg.nu_cov, dz1);
    add_covariance_grad(z2, 0.5 * cfg.nu_cov, dz2);

    StepResult result;
    result.grads.encoder = enc.encoder.zero_grads();
    result.grads.expander = enc.expander.zero_grads();
    run_backward(enc, fp1, dz1, result.grads);
    run_backward(enc, fp2, dz2, result.grads);
    result.loss = assemble(inv, var, cov, cfg);
    result.pair_indices.resize(n);
    std::iota(result.pair_indices.begin(), result.pair_indices.end(), 0);
    result.pair_weights.assign(n, 1.0);
    return result;
}

LossBreakdown sag_loss_fixed_pairs(const Mat& view1, const Mat& view2,
                                   const ToyEncoder& enc,
                                   std::span<const std::size_t> pair_indices,
                                   std::span<const double> pair_weights,
                                   const VicregConfig& cfg) {
    check_views(view1, view2, "sag_loss_fixed_pairs");
    const Mat z1 = enc.embed(view1);
    const Mat z2 = enc.embed(view2);
    if (pair_indices.size() != z1.rows() || pair_weights.size() != z1.rows())
        throw std::invalid_argument("sag_loss_fixed_pairs: pairing length mismatch");
    const Mat zpair = gather_rows(z2, pair_indices);
    const double inv = weighted_invariance(z1, zpair, pair_weights);
    const double var = 0.5 * (variance_term(z1, cfg.gamma, cfg.epsilon) +
                              variance_term(zpair, cfg.gamma, cfg.epsilon));
    const double cov = 0.5 * (covariance_term(z1) + covariance_term(zpair));
    return assemble(inv, var, cov, cfg);
}

LossBreakdown vicreg_loss(const Mat& view1, const Mat& view2, const ToyEncoder& enc,
                          const VicregConfig& cfg) {
    check_views(view1, view2, "vicreg_loss");
    const Mat z1 = enc.embed(view1);
    const Mat z2 = enc.embed(view2);
    const double inv = invariance_term(z1, z2);
    const double var = 0.5 * (variance_term(z1, cfg.gamma, cfg.epsilon) +
                              variance_term(z2, cfg.gamma, cfg.epsilon));
    const double cov = 0.5 * (covariance_term(z1) + covariance_term(z2));
    return assemble(inv, var, cov, cfg);
}

void SynthConfig::validate() const {
    if (n_clusters < 1 || points_per_cluster < 1 || ambient_dim < 1)
        throw std::invalid_argument("SynthConfig: counts must be positive");
    if (center_spread < 0.0 || cluster_std < 0.0 || augment_std < 0.0)
        throw std::invalid_argument("SynthConfig: spreads must be non-negative");
}

std::pair<Mat, Mat> Augmenter::views(const Mat& batch, std::uint64_t draw_id) const {
    Rng rng(seed ^ (0x9E3779B97F4A7C15ULL * (draw_id + 1)));
    Mat v1 = batch;
    Mat v2 = batch;
    if (augment_std > 0.0) {
        for (double& v : v1.data()) v += augment_std * rng.gaussian();
        for (double& v : v2.data()) v += augment_std * rng.gaussian();
    }
    return {std::move(v1), std::move(v2)};
}

SynthData synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    Mat centers(cfg.n_clusters, cfg.ambient_dim);
    for (double& v : centers.data()) v = cfg.center_spread * rng.gaussian();

    const std::size_t n = cfg.n_clusters * cfg.points_per_cluster;
    SynthData data{Mat(n, cfg.ambient_dim), Partition{std::vector<int>(n)},
                   Augmenter{cfg.augment_std, cfg.seed ^ 0xA5A5A5A5A5A5A5A5ULL}};
    std::size_t row = 0;
    for (std::size_t c = 0; c < cfg.n_clusters; ++c) {
        for (std::size_t p = 0; p < cfg.points_per_cluster; ++p, ++row) {
            for (std::size_t j = 0; j < cfg.ambient_dim; ++j)
                data.points(row, j) = centers(c, j) + cfg.cluster_std * rng.gaussian();
            data.labels.labels[row] = static_cast<int>(c);
        }
    }
    return data;
}

std::string to_string(Variant v) { return v == Variant::vicreg ? "vicreg" : "sag"; }

Variant variant_from_string(const std::string& s) {
    if (s == "vicreg") return Variant::vicreg;
    if (s == "sag") return Variant::sag;
    throw std::invalid_argument("unknown variant: " + s);
}

TrainResult train(Variant variant, const Mat& points, const Augmenter& aug,
                  ToyEncoder enc, const VicregConfig& vcfg, const TrainConfig& tcfg) {
    vcfg.validate();
    require_finite(points, "train");
    if (tcfg.batch_size < 2)
        throw std::invalid_argument("train: batch_size must be >= 2");
    if (!(tcfg.lr > 0.0)) throw std::invalid_argument("train: lr must be positive");

    const std::size_t n = points.rows();
    const std::size_t min_batch =
        variant == Variant::sag ? std::max<std::size_t>(2, vcfg.k_neighbors) : 2;
    if (n < min_batch)
        throw std::invalid_argument("train: dataset smaller than a usable batch");

    TrainResult result;
    result.encoder = std::move(enc);
    result.history.reserve(tcfg.epochs);
    std::vector<std::size_t> order(n);

    for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
        Rng shuffle_rng(tcfg.seed ^ (0xD1B54A32D192ED03ULL * (epoch + 1)));
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = n; i > 1; --i) {
            const std::size_t j = shuffle_rng.uniform_below(i);
            std::swap(order[i - 1], order[j]);
        }

        LossBreakdown epoch_sum;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < n; start += tcfg.batch_size) {
            const std::size_t size = std::min(tcfg.batch_size, n - start);
            if (size < min_batch) break;  // trailing sliver, skip
            const std::span<const std::size_t> rows(order.data() + start, size);
            const Mat batch = gather_rows(points, rows);
            const std::uint64_t draw_id = epoch * 1000003ULL + start / tcfg.batch_size;
            const auto [v1, v2] = aug.views(batch, draw_id);

            StepResult step =
                variant == Variant::sag
                    ? sag_step(v1, v2, result.encoder, vcfg,
                               tcfg.seed ^ (0x94D049BB133111EBULL * (draw_id + 1)))
                    : vicreg_step(v1, v2, result.encoder, vcfg);
            if (!std::isfinite(step.loss.total))
                throw DivergenceError(static_cast<int>(epoch));

            result.encoder.encoder.apply_update(step.grads.encoder, tcfg.lr);
            result.encoder.expander.apply_update(step.grads.expander, tcfg.lr);
            // A finite loss can still produce an overflowing update; catch it
            // here so the next batch never feeds non-finite activations into
            // the affinity pipeline.
            for (const Mlp* net : {&result.encoder.encoder, &result.encoder.expander})
                for (const DenseLayer& layer : net->layers) {
                    const bool ok =
                        std::all_of(layer.w.data().begin(), layer.w.data().end(),
                                    [](double v) { return std::isfinite(v); }) &&
                        std::all_of(layer.b.begin(), layer.b.end(),
                                    [](double v) { return std::isfinite(v); });
                    if (!ok) throw DivergenceError(static_cast<int>(epoch));
                }

            epoch_sum.invariance += step.loss.invariance;
            epoch_sum.variance += step.loss.variance;
            epoch_sum.covariance += step.loss.covariance;
            epoch_sum.total += step.loss.total;
            ++steps;
        }
        if (steps == 0) throw std::invalid_argument("train: no usable batches");
        const double scale = 1.0 / static_cast<double>(steps);
        result.history.push_back({epoch_sum.invariance * scale, epoch_sum.variance * scale,
                                  epoch_sum.covariance * scale, epoch_sum.total * scale});
    }
    return result;
}

namespace {

nlohmann::json similarity_to_json(const SimilarityReport& r) {
    return nlohmann::json{{"lca_pearson", r.lca_pearson},
                          {"lca_spearman", r.lca_spearman},
                          {"lca_kendall", r.lca_kendall},
                          {"coph_d1_to_p2", r.coph_d1_to_p2},
                          {"coph_d2_to_p1", r.coph_d2_to_p1},
                          {"n", r.n},
                          {"linkage", r.linkage},
                          {"metric", r.metric},
                          {"lca_mode", r.lca_mode}};
}

nlohmann::json outcome_to_json(const VariantOutcome& v) {
    nlohmann::json j;
    j["cluster_dispersion"] = v.cluster_dispersion;
    j["seen_dispersion"] = v.seen_dispersion;
    if (v.has_unseen) {
        j["unseen_dispersion"] = v.unseen_dispersion;
        j["unseen_similarity"] = similarity_to_json(v.unseen_similarity);
    } else {
        j["unseen_dispersion"] = nullptr;
        j["unseen_similarity"] = nullptr;
    }
    j["has_unseen"] = v.has_unseen;
    return j;
}

// Mean within-cluster pairwise distance over mean centroid-to-centroid
// distance, per cluster, in the given representation space.
std::vector<double> cluster_dispersion(const Mat& rep, std::span<const int> labels,
                                       std::size_t n_clusters) {
    std::vector<std::vector<std::size_t>> members(n_clusters);
    for (std::size_t i = 0; i < rep.rows(); ++i)
        members[static_cast<std::size_t>(labels[i])].push_back(i);

    Mat centroids(n_clusters, rep.cols(), 0.0);
    for (std::size_t c = 0; c < n_clusters; ++c) {
        for (std::size_t i : members[c])
            for (std::size_t j = 0; j < rep.cols(); ++j) centroids(c, j) += rep(i, j);
        for (std::size_t j = 0; j < rep.cols(); ++j)
            centroids(c, j) /= static_cast<double>(members[c].size());
    }
    double centroid_mean = 0.0;
    std::size_t centroid_pairs = 0;
    for (std::size_t a = 0; a < n_clusters; ++a)
        for (std::size_t b = a + 1; b < n_clusters; ++b) {
            double sq = 0.0;
            for (std::size_t j = 0; j < rep.cols(); ++j) {
                const double d = centroids(a, j) - centroids(b, j);
                sq += d * d;
            }
            centroid_mean += std::sqrt(sq);
            ++centroid_pairs;
        }
    if (centroid_pairs == 0)
        throw DegenerateInput("cluster_dispersion: need at least 2 clusters");
    centroid_mean /= static_cast<double>(centroid_pairs);
    if (centroid_mean <= 0.0)
        throw DegenerateInput("cluster_dispersion: coincident centroids");

    std::vector<double> out(n_clusters, 0.0);
    for (std::size_t c = 0; c < n_clusters; ++c) {
        double within = 0.0;
        std::size_t pairs = 0;
        for (std::size_t a = 0; a < members[c].size(); ++a)
            for (std::size_t b = a + 1; b < members[c].size(); ++b) {
                double sq = 0.0;
                for (std::size_t j = 0; j < rep.cols(); ++j) {
                    const double d = rep(members[c][a], j) - rep(members[c][b], j);
                    sq += d * d;
                }
                within += std::sqrt(sq);
                ++pairs;
            }
        out[c] = pairs == 0 ? 0.0 : within / static_cast<double>(pairs) / centroid_mean;
    }
    return out;
}

} // namespace

std::string DistortionReport::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["train_clusters"] = train_clusters;
    j["vicreg"] = outcome_to_json(vicreg);
    j["sag"] = outcome_to_json(sag);
    return j.dump(2) + "\n";
}

UnseenExperiment unseen_cluster_experiment(const SynthConfig& cfg,
                                           std::span<const std::size_t> train_clusters,
                                           std::uint64_t seed, const VicregConfig& vcfg,
                                           const TrainConfig& tcfg) {
    cfg.validate();
    if (train_clusters.empty())
        throw std::invalid_argument("unseen_cluster_experiment: no training clusters");
    std::vector<std::size_t> subset(train_clusters.begin(), train_clusters.end());
    std::sort(subset.begin(), subset.end());
    subset.erase(std::unique(subset.begin(), subset.end()), subset.end());
    if (subset.back() >= cfg.n_clusters)
        throw std::invalid_argument("unseen_cluster_experiment: cluster id out of range");

    UnseenExperiment ex;
    ex.data = synth_generate(cfg);
    std::vector<bool> cluster_in_train(cfg.n_clusters, false);
    for (std::size_t c : subset) cluster_in_train[c] = true;

    const std::size_t n = ex.data.points.rows();
    ex.in_train_cluster.resize(n);
    std::vector<std::size_t> train_rows, unseen_rows;
    for (std::size_t i = 0; i < n; ++i) {
        const bool in = cluster_in_train[static_cast<std::size_t>(ex.data.labels.labels[i])];
        ex.in_train_cluster[i] = in;
        (in ? train_rows : unseen_rows).push_back(i);
    }

    const Mat subset_points = gather_rows(ex.data.points, train_rows);
    const ToyEncoder init = ToyEncoder::make(cfg.ambient_dim, seed);
    TrainConfig run_cfg = tcfg;
    run_cfg.seed = seed;

    ex.vicreg_subset =
        train(Variant::vicreg, subset_points, ex.data.augmenter, init, vcfg, run_cfg)
            .encoder;
    ex.sag_subset =
        train(Variant::sag, subset_points, ex.data.augmenter, init, vcfg, run_cfg).encoder;
    ex.vicreg_all =
        train(Variant::vicreg, ex.data.points, ex.data.augmenter, init, vcfg, run_cfg)
            .encoder;
    ex.sag_all =
        train(Variant::sag, ex.data.points, ex.data.augmenter, init, vcfg, run_cfg).encoder;

    const bool has_unseen = !unseen_rows.empty();
    const auto evaluate = [&](const ToyEncoder& subset_model,
                              const ToyEncoder& all_model) {
        VariantOutcome out;
        const Mat rep_subset = subset_model.represent(ex.data.points);
        out.cluster_dispersion =
            cluster_dispersion(rep_subset, ex.data.labels.labels, cfg.n_clusters);
        double seen = 0.0, unseen = 0.0;
        std::size_t n_seen = 0, n_unseen = 0;
        for (std::size_t c = 0; c < cfg.n_clusters; ++c) {
            if (cluster_in_train[c]) {
                seen += out.cluster_dispersion[c];
                ++n_seen;
            } else {
                unseen += out.cluster_dispersion[c];
                ++n_unseen;
            }
        }
        out.seen_dispersion = seen / static_cast<double>(n_seen);
        out.has_unseen = has_unseen;
        if (has_unseen) {
            out.unseen_dispersion = unseen / static_cast<double>(n_unseen);
            const Mat rep_all = all_model.represent(ex.data.points);
            out.unseen_similarity = structural_similarity(
                gather_rows(rep_subset, unseen_rows), gather_rows(rep_all, unseen_rows));
        }
        return out;
    };

    ex.report.vicreg = evaluate(ex.vicreg_subset, ex.vicreg_all);
    ex.report.sag = evaluate(ex.sag_subset, ex.sag_all);
    ex.report.train_clusters = subset;
    ex.report.seed = seed;
    return ex;
}

} // namespace sag
