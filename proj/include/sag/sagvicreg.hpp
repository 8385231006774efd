#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sag/mat.hpp"
#include "sag/structmetrics.hpp"

namespace sag {

struct VicregConfig {
    double lambda_inv = 25.0;
    double mu_var = 25.0;
    double nu_cov = 1.0;
    double gamma = 1.0;
    double epsilon = 1e-4;
    std::size_t k_neighbors = 5;
    double scale_percentile = 20.0;
    double scale_floor = 1e-7;

    void validate() const;
};

struct LossBreakdown {
    double invariance = 0.0;
    double variance = 0.0;
    double covariance = 0.0;
    double total = 0.0;
};

// Sparse cross-batch affinity: rows indexed by Z, columns by Z'. Each row has
// at most k_neighbors nonzeros and its maximum entry is exactly 1 (the
// nearest neighbor sits at adjusted distance 0).
struct CrossAffinity {
    Mat w;
    std::vector<double> scales;
    std::vector<std::vector<std::size_t>> neighbors;
};

// (1/k) sum_j max(0, gamma - sqrt(Var(y^j) + epsilon)), unbiased variance.
double variance_term(const Mat& y, double gamma, double epsilon);

// (1/n) sum_i ||y_i - y2_i||^2.
double invariance_term(const Mat& y, const Mat& y2);

// (1/k) sum_{i != j} C(Y)_ij^2 with C the unbiased sample covariance.
double covariance_term(const Mat& y);

// (1/n) sum_i weights_i * ||z_i - z2_i||^2.
double weighted_invariance(const Mat& z, const Mat& z2,
                           std::span<const double> weights);

// Cross-batch affinity built stepwise: cosine distances to the k nearest
// columns, shift each row so its nearest distance is 0, per-row Gaussian
// scale from the configured percentile of the shifted row (clamped from
// below), kernel on neighbors, zero elsewhere.
CrossAffinity batch_affinity(const Mat& z, const Mat& z2, const VicregConfig& cfg);

struct SampledPairs {
    std::vector<std::size_t> indices;
    std::vector<double> weights;
};

// Row-normalize the affinity into a random walk and draw one partner per
// row; returns the chosen column indices and their affinity weights.
SampledPairs sample_pairs(const CrossAffinity& w, std::uint64_t seed);

// Fully-connected layer, rectifier on hidden layers only.
struct DenseLayer {
    Mat w;                  // out x in
    std::vector<double> b;  // out
};

struct MlpGrads {
    std::vector<Mat> w;
    std::vector<std::vector<double>> b;
};

struct Mlp {
    std::vector<DenseLayer> layers;

    static Mlp make(std::span<const std::size_t> dims, std::uint64_t seed);

    Mat forward(const Mat& x) const;
    // Activations after every layer (index 0 is the input), for backprop.
    std::vector<Mat> forward_trace(const Mat& x) const;
    // Given dL/d(output) and the forward trace, accumulate parameter
    // gradients and return dL/d(input).
    Mat backward(const std::vector<Mat>& trace, const Mat& grad_out,
                 MlpGrads& grads) const;

    MlpGrads zero_grads() const;
    void apply_update(const MlpGrads& grads, double lr);
    std::size_t input_dim() const { return layers.front().w.cols(); }
    std::size_t output_dim() const { return layers.back().w.rows(); }
};

// Encoder f followed by expander h; losses are evaluated on the expander
// output, downstream structure on the encoder output.
struct ToyEncoder {
    Mlp encoder;
    Mlp expander;

    static ToyEncoder make(std::size_t input_dim, std::uint64_t seed,
                           std::size_t rep_dim = 16, std::size_t embed_dim = 32,
                           std::size_t hidden = 32);

    Mat represent(const Mat& x) const;
    Mat embed(const Mat& x) const;
};

struct EncoderGrads {
    MlpGrads encoder;
    MlpGrads expander;
};

struct StepResult {
    LossBreakdown loss;
    EncoderGrads grads;
    // the pairing sag_step drew, so callers can replay the loss
    std::vector<std::size_t> pair_indices;
    std::vector<double> pair_weights;
};

// One SAG step: embed both views, build the affinity, draw random-walk
// partners Z'' from Z', then loss = lambda * weighted_invariance(Z, Z'') +
// mu * (var(Z) + var(Z''))/2 + nu * (cov(Z) + cov(Z''))/2. Sampled indices
// and weights are constants of the step; gradients are exact otherwise.
StepResult sag_step(const Mat& view1, const Mat& view2, const ToyEncoder& enc,
                    const VicregConfig& cfg, std::uint64_t seed);

// Baseline step: invariance on (Z, Z') directly, same variance/covariance
// handling.
StepResult vicreg_step(const Mat& view1, const Mat& view2, const ToyEncoder& enc,
                       const VicregConfig& cfg);

// Replays the SAG loss for a fixed pairing; the finite-difference tests lean
// on this to probe parameters while the sampling stays frozen.
LossBreakdown sag_loss_fixed_pairs(const Mat& view1, const Mat& view2,
                                   const ToyEncoder& enc,
                                   std::span<const std::size_t> pair_indices,
                                   std::span<const double> pair_weights,
                                   const VicregConfig& cfg);
LossBreakdown vicreg_loss(const Mat& view1, const Mat& view2,
                          const ToyEncoder& enc, const VicregConfig& cfg);

struct SynthConfig {
    std::size_t n_clusters = 3;
    std::size_t points_per_cluster = 128;
    std::size_t ambient_dim = 16;
    double center_spread = 5.0;
    double cluster_std = 3.0;
    double augment_std = 0.075;
    std::uint64_t seed = 0;

    void validate() const;
};

// Two noisy views of a batch; draw_id keeps successive calls distinct while
// the whole stream stays reproducible.
struct Augmenter {
    double augment_std = 0.0;
    std::uint64_t seed = 0;

    std::pair<Mat, Mat> views(const Mat& batch, std::uint64_t draw_id) const;
};

struct SynthData {
    Mat points;
    Partition labels;
    Augmenter augmenter;
};

// Gaussian clusters around seeded random centers.
SynthData synth_generate(const SynthConfig& cfg);

enum class Variant { vicreg, sag };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct TrainConfig {
    std::size_t epochs = 500;
    double lr = 0.01;
    std::size_t batch_size = 384;
    std::uint64_t seed = 0;
};

struct TrainResult {
    ToyEncoder encoder;
    // per-epoch mean of the step losses
    std::vector<LossBreakdown> history;
};

// Plain SGD over shuffled mini-batches. Non-finite loss raises
// DivergenceError carrying the epoch index.
TrainResult train(Variant variant, const Mat& points, const Augmenter& aug,
                  ToyEncoder enc, const VicregConfig& vcfg, const TrainConfig& tcfg);

// Per-variant outcome of the unseen-cluster protocol. Dispersion of a
// cluster is its mean within-cluster pairwise distance divided by the mean
// distance between all cluster centroids, in the subset-trained model's
// representation space.
struct VariantOutcome {
    std::vector<double> cluster_dispersion;
    double seen_dispersion = 0.0;
    double unseen_dispersion = 0.0;
    bool has_unseen = false;
    // subset-trained vs all-clusters-trained representations, unseen rows only
    SimilarityReport unseen_similarity;
};

struct DistortionReport {
    VariantOutcome vicreg;
    VariantOutcome sag;
    std::vector<std::size_t> train_clusters;
    std::uint64_t seed = 0;

    std::string to_json() const;
};

struct UnseenExperiment {
    DistortionReport report;
    SynthData data;
    std::vector<bool> in_train_cluster;  // per point
    ToyEncoder vicreg_subset;
    ToyEncoder sag_subset;
    ToyEncoder vicreg_all;
    ToyEncoder sag_all;
};

// Trains both variants on a cluster subset and on all clusters (shared
// initialization), then reports dispersion for seen and unseen clusters and
// the structural similarity of subset-trained against all-trained
// representations on the held-out points.
UnseenExperiment unseen_cluster_experiment(const SynthConfig& cfg,
                                           std::span<const std::size_t> train_clusters,
                                           std::uint64_t seed,
                                           const VicregConfig& vcfg = {},
                                           const TrainConfig& tcfg = {});

} // namespace sag
