#include <cstdio>
#include <future>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sag/errors.hpp"
#include "sag/graph.hpp"
#include "sag/hierclust.hpp"
#include "sag/io.hpp"
#include "sag/numkit.hpp"
#include "sag/sagvicreg.hpp"
#include "sag/structmetrics.hpp"

namespace {

using namespace sag;

struct EvalOpts {
    std::string a_path;
    std::string b_path;
    std::string out;
    std::string linkage = "ward";
    std::string metric = "cosine";
    std::string lca_mode = "hops";
    std::size_t max_pairs = 0;
    std::uint64_t seed = 0;
};

void run_eval(const EvalOpts& o) {
    const Mat a = load_matrix_any(o.a_path);
    const Mat b = load_matrix_any(o.b_path);
    SimilarityConfig cfg;
    cfg.linkage = linkage_from_string(o.linkage);
    cfg.metric = metric_from_string(o.metric);
    cfg.lca_mode = lca_mode_from_string(o.lca_mode);
    cfg.max_pairs = o.max_pairs;
    cfg.seed = o.seed;
    const SimilarityReport report = structural_similarity(a, b, cfg);
    const std::string json = report.to_json();
    if (o.out.empty()) {
        std::cout << json;
    } else {
        write_text_file(o.out, json);
        std::cout << "wrote " << o.out << "\n";
    }
}

struct SpectralOpts {
    std::string graph_path;
    std::string out;
    std::size_t dim = 1;
    bool include_trivial = false;
};

void run_spectral(const SpectralOpts& o) {
    Mat w = load_csv_matrix(o.graph_path);
    if (w.rows() != w.cols()) throw IoError(o.graph_path + ": matrix not square");
    double max_entry = 0.0;
    for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) {
            if (w(i, j) < 0.0) throw IoError(o.graph_path + ": negative affinity");
            if (std::abs(w(i, j) - w(j, i)) > 1e-12)
                throw IoError(o.graph_path + ": matrix not symmetric");
            max_entry = std::max(max_entry, w(i, j));
        }
    // the embedding only sees eigenvectors of L, which are invariant under
    // global rescaling of W, so large affinities are safe to normalize away
    if (max_entry > 1.0)
        for (double& v : w.data()) v /= max_entry;
    const Mat embedding = spectral_embed(SymAffinity(std::move(w)), o.dim, o.include_trivial);
    save_emb(o.out, embedding);
    std::cout << "wrote " << o.out << " (" << embedding.rows() << "x"
              << embedding.cols() << ")\n";
}

struct SynthOpts {
    std::size_t clusters = SynthConfig{}.n_clusters;
    std::size_t points_per_cluster = SynthConfig{}.points_per_cluster;
    std::size_t dim = SynthConfig{}.ambient_dim;
    double center_spread = SynthConfig{}.center_spread;
    double cluster_std = SynthConfig{}.cluster_std;
    double augment_std = SynthConfig{}.augment_std;
    std::uint64_t data_seed = SynthConfig{}.seed;

    SynthConfig to_config() const {
        SynthConfig cfg;
        cfg.n_clusters = clusters;
        cfg.points_per_cluster = points_per_cluster;
        cfg.ambient_dim = dim;
        cfg.center_spread = center_spread;
        cfg.cluster_std = cluster_std;
        cfg.augment_std = augment_std;
        cfg.seed = data_seed;
        return cfg;
    }
};

struct VicregOpts {
    double lambda = VicregConfig{}.lambda_inv;
    double mu = VicregConfig{}.mu_var;
    double nu = VicregConfig{}.nu_cov;
    double gamma = VicregConfig{}.gamma;
    double epsilon = VicregConfig{}.epsilon;
    std::size_t k_neighbors = VicregConfig{}.k_neighbors;
    double scale_percentile = VicregConfig{}.scale_percentile;
    double scale_floor = VicregConfig{}.scale_floor;

    VicregConfig to_config() const {
        VicregConfig cfg;
        cfg.lambda_inv = lambda;
        cfg.mu_var = mu;
        cfg.nu_cov = nu;
        cfg.gamma = gamma;
        cfg.epsilon = epsilon;
        cfg.k_neighbors = k_neighbors;
        cfg.scale_percentile = scale_percentile;
        cfg.scale_floor = scale_floor;
        return cfg;
    }
};

struct TrainOpts {
    std::string variant = "vicreg";
    std::size_t epochs = TrainConfig{}.epochs;
    double lr = TrainConfig{}.lr;
    std::size_t batch_size = TrainConfig{}.batch_size;
    std::uint64_t seed = TrainConfig{}.seed;
    std::string out_encoder;
    std::string out_history;

    TrainConfig to_config() const { return {epochs, lr, batch_size, seed}; }
};

void add_synth_flags(CLI::App* cmd, SynthOpts& o) {
    cmd->add_option("--clusters", o.clusters, "Number of synthetic clusters");
    cmd->add_option("--points-per-cluster", o.points_per_cluster, "Points per cluster");
    cmd->add_option("--ambient-dim", o.dim, "Ambient dimensionality");
    cmd->add_option("--center-spread", o.center_spread, "Std of cluster centers");
    cmd->add_option("--cluster-std", o.cluster_std, "Std of points around centers");
    cmd->add_option("--augment-std", o.augment_std, "Std of augmentation noise");
    cmd->add_option("--data-seed", o.data_seed, "Seed for data generation");
}

void add_vicreg_flags(CLI::App* cmd, VicregOpts& o) {
    cmd->add_option("--lambda", o.lambda, "Invariance weight");
    cmd->add_option("--mu", o.mu, "Variance weight");
    cmd->add_option("--nu", o.nu, "Covariance weight");
    cmd->add_option("--gamma", o.gamma, "Target standard deviation");
    cmd->add_option("--epsilon", o.epsilon, "Variance stabilizer");
    cmd->add_option("--k-neighbors", o.k_neighbors, "Affinity neighbors");
    cmd->add_option("--scale-percentile", o.scale_percentile, "Local scale percentile");
    cmd->add_option("--scale-floor", o.scale_floor, "Minimum kernel scale");
}

void add_train_flags(CLI::App* cmd, TrainOpts& o) {
    cmd->add_option("--epochs", o.epochs, "Training epochs");
    cmd->add_option("--lr", o.lr, "Learning rate");
    cmd->add_option("--batch-size", o.batch_size, "Mini-batch size");
    cmd->add_option("--seed", o.seed, "Seed for init, shuffling, and sampling");
}

void run_train(const SynthOpts& so, const VicregOpts& vo, const TrainOpts& to) {
    const SynthData data = synth_generate(so.to_config());
    const ToyEncoder init = ToyEncoder::make(so.dim, to.seed);
    const TrainResult result = train(variant_from_string(to.variant), data.points,
                                     data.augmenter, init, vo.to_config(), to.to_config());
    save_encoder(to.out_encoder, result.encoder);
    write_text_file(to.out_history, history_to_csv(result.history));
    if (result.history.empty()) {
        std::cout << "trained 0 epochs (initial encoder saved)\n";
    } else {
        const LossBreakdown& final = result.history.back();
        std::printf("final epoch=%zu invariance=%.6g variance=%.6g covariance=%.6g total=%.6g\n",
                    result.history.size() - 1, final.invariance, final.variance,
                    final.covariance, final.total);
    }
}

struct RandIndexOpts {
    std::string emb_path;
    std::string hierarchy_path;
    std::string out_levels;
    std::string out_sweep;
    std::size_t neighbors = 7;
    std::size_t sweep_min = 2;
    std::size_t sweep_max = 20;
    std::uint64_t seed = 0;
};

void run_randindex(const RandIndexOpts& o) {
    const Mat x = load_matrix_any(o.emb_path);
    const Hierarchy h = Hierarchy::from_csv(read_text_file(o.hierarchy_path));
    GraphConfig gcfg;
    gcfg.n_neighbors = o.neighbors;

    const std::vector<double> per_level = hierarchical_rand(x, h, gcfg, o.seed);
    nlohmann::json j;
    j["n"] = x.rows();
    j["n_levels"] = h.n_levels();
    nlohmann::json levels = nlohmann::json::array();
    for (std::size_t l = 0; l < h.n_levels(); ++l)
        levels.push_back({{"level", l + 1},
                          {"n_classes", h.n_classes(l)},
                          {"rand_index", per_level[l]}});
    j["levels"] = levels;
    const std::string levels_json = j.dump(2) + "\n";
    if (o.out_levels.empty()) {
        std::cout << levels_json;
    } else {
        write_text_file(o.out_levels, levels_json);
        std::cout << "wrote " << o.out_levels << "\n";
    }

    if (!o.out_sweep.empty()) {
        const RandSweep sweep = rand_index_sweep(x, h.levels.back(), o.sweep_min,
                                                 o.sweep_max, gcfg, o.seed);
        std::string csv = "k,rand_index\n";
        char buf[64];
        for (std::size_t i = 0; i < sweep.ks.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", sweep.ks[i], sweep.values[i]);
            csv += buf;
        }
        write_text_file(o.out_sweep, csv);
        std::cout << "wrote " << o.out_sweep << "\n";
    }
}

struct DemoOpts {
    std::vector<std::size_t> train_clusters = {0, 1};
    std::size_t n_seeds = 1;
    std::uint64_t seed = 0;
    std::string out_report = "unseen_report.json";
    std::string out_prefix = "scatter";
};

void write_scatter(const std::string& path, const Mat& pca,
                   const std::vector<int>& labels, const std::vector<bool>& keep_mask,
                   bool keep_value) {
    std::string csv = "x,y,cluster\n";
    char buf[96];
    for (std::size_t i = 0; i < pca.rows(); ++i) {
        if (keep_mask[i] != keep_value) continue;
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%d\n", pca(i, 0), pca(i, 1),
                      labels[i]);
        csv += buf;
    }
    write_text_file(path, csv);
}

void run_demo_unseen(const SynthOpts& so, const VicregOpts& vo, const TrainOpts& to,
                     const DemoOpts& o) {
    const SynthConfig scfg = so.to_config();
    const VicregConfig vcfg = vo.to_config();
    const TrainConfig tcfg = to.to_config();

    std::vector<std::future<UnseenExperiment>> futures;
    futures.reserve(o.n_seeds);
    for (std::size_t i = 0; i < o.n_seeds; ++i)
        futures.push_back(std::async(std::launch::async, [&, i] {
            return unseen_cluster_experiment(scfg, o.train_clusters, o.seed + i, vcfg,
                                             tcfg);
        }));
    std::vector<UnseenExperiment> runs;
    runs.reserve(o.n_seeds);
    for (auto& f : futures) runs.push_back(f.get());

    nlohmann::json report;
    report["base_seed"] = o.seed;
    report["n_seeds"] = o.n_seeds;
    report["train_clusters"] = runs.front().report.train_clusters;
    nlohmann::json per_seed = nlohmann::json::array();
    std::size_t vicreg_distorted = 0, sag_distorted = 0, sag_ge = 0;
    for (const auto& run : runs) {
        per_seed.push_back(nlohmann::json::parse(run.report.to_json()));
        if (run.report.vicreg.has_unseen) {
            if (run.report.vicreg.unseen_dispersion > run.report.vicreg.seen_dispersion)
                ++vicreg_distorted;
            if (run.report.sag.unseen_dispersion > run.report.sag.seen_dispersion)
                ++sag_distorted;
            if (run.report.sag.unseen_similarity.lca_spearman >=
                run.report.vicreg.unseen_similarity.lca_spearman)
                ++sag_ge;
        }
    }
    report["runs"] = per_seed;
    report["aggregate"] = {{"vicreg_unseen_dispersion_exceeds_seen", vicreg_distorted},
                           {"sag_unseen_dispersion_exceeds_seen", sag_distorted},
                           {"sag_lca_spearman_ge_vicreg", sag_ge}};
    write_text_file(o.out_report, report.dump(2) + "\n");
    std::cout << "wrote " << o.out_report << "\n";

    // scatter plots come from the first seed's subset-trained models
    const UnseenExperiment& first = runs.front();
    const auto emit = [&](const ToyEncoder& model, const std::string& name) {
        const Mat pca = project_pca2(model.represent(first.data.points));
        write_scatter(o.out_prefix + "_" + name + "_train.csv", pca,
                      first.data.labels.labels, first.in_train_cluster, true);
        write_scatter(o.out_prefix + "_" + name + "_test.csv", pca,
                      first.data.labels.labels, first.in_train_cluster, false);
    };
    emit(first.vicreg_subset, "vicreg");
    emit(first.sag_subset, "sag");
    std::cout << "wrote " << o.out_prefix << "_{vicreg,sag}_{train,test}.csv\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Affinity-weighted VICReg training kernel and structural evaluation metrics"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from an INI/TOML config file");

    EvalOpts eval_opts;
    auto* eval_cmd = app.add_subcommand(
        "eval", "Structural similarity report between two embedding sets");
    eval_cmd->add_option("a", eval_opts.a_path, "First embedding file (EMB1 or CSV)")
        ->required();
    eval_cmd->add_option("b", eval_opts.b_path, "Second embedding file (EMB1 or CSV)")
        ->required();
    eval_cmd->add_option("--out", eval_opts.out, "Report path (default: stdout)");
    eval_cmd->add_option("--linkage", eval_opts.linkage,
                         "ward, average, complete, or single");
    eval_cmd->add_option("--metric", eval_opts.metric, "cosine or euclidean");
    eval_cmd->add_option("--lca-mode", eval_opts.lca_mode, "hops or height");
    eval_cmd->add_option("--max-pairs", eval_opts.max_pairs,
                         "Subsample this many pairs (0 = all)");
    eval_cmd->add_option("--seed", eval_opts.seed, "Seed for pair subsampling");

    SpectralOpts spectral_opts;
    auto* spectral_cmd =
        app.add_subcommand("spectral", "Spectral embedding of an affinity CSV");
    spectral_cmd->add_option("graph", spectral_opts.graph_path, "Affinity matrix CSV")
        ->required();
    spectral_cmd->add_option("--dim", spectral_opts.dim, "Embedding dimension")
        ->required();
    spectral_cmd->add_flag("--include-trivial", spectral_opts.include_trivial,
                           "Keep the trivial eigenvector as column 0");
    spectral_cmd->add_option("--out", spectral_opts.out, "Output EMB1 path")->required();

    SynthOpts train_synth;
    VicregOpts train_vicreg;
    TrainOpts train_opts;
    auto* train_cmd =
        app.add_subcommand("train", "Train an encoder on synthetic clusters");
    train_cmd->add_option("--variant", train_opts.variant, "vicreg or sag")->required();
    add_synth_flags(train_cmd, train_synth);
    add_vicreg_flags(train_cmd, train_vicreg);
    add_train_flags(train_cmd, train_opts);
    train_cmd->add_option("--out-encoder", train_opts.out_encoder, "Encoder checkpoint path")
        ->required();
    train_cmd->add_option("--out-history", train_opts.out_history, "Loss history CSV path")
        ->required();

    RandIndexOpts rand_opts;
    auto* rand_cmd = app.add_subcommand(
        "randindex", "Per-level Rand index of spectral clusterings against a hierarchy");
    rand_cmd->add_option("embeddings", rand_opts.emb_path, "Embedding file (EMB1 or CSV)")
        ->required();
    rand_cmd->add_option("hierarchy", rand_opts.hierarchy_path,
                         "Hierarchy CSV (item_id,level1,...)")
        ->required();
    rand_cmd->add_option("--neighbors", rand_opts.neighbors, "Affinity graph neighbors");
    rand_cmd->add_option("--seed", rand_opts.seed, "Clustering seed");
    rand_cmd->add_option("--sweep-min", rand_opts.sweep_min, "Smallest sweep cluster count");
    rand_cmd->add_option("--sweep-max", rand_opts.sweep_max, "Largest sweep cluster count");
    rand_cmd->add_option("--out-levels", rand_opts.out_levels,
                         "Per-level JSON path (default: stdout)");
    rand_cmd->add_option("--out-sweep", rand_opts.out_sweep,
                         "Cluster-count sweep CSV path (omit to skip the sweep)");

    SynthOpts demo_synth;
    VicregOpts demo_vicreg;
    TrainOpts demo_train;
    DemoOpts demo_opts;
    auto* demo_cmd = app.add_subcommand(
        "demo-unseen", "Unseen-cluster distortion experiment for both variants");
    add_synth_flags(demo_cmd, demo_synth);
    add_vicreg_flags(demo_cmd, demo_vicreg);
    add_train_flags(demo_cmd, demo_train);
    demo_cmd->add_option("--train-clusters", demo_opts.train_clusters,
                         "Cluster ids used for training")
        ->delimiter(',');
    demo_cmd->add_option("--seeds", demo_opts.n_seeds, "Number of replicate seeds");
    demo_cmd->add_option("--out-report", demo_opts.out_report, "Report JSON path");
    demo_cmd->add_option("--out-prefix", demo_opts.out_prefix, "Scatter CSV prefix");

    try {
        try {
            app.parse(argc, argv);
        } catch (const CLI::ParseError& e) {
            if (e.get_exit_code() == 0) return app.exit(e);
            std::cerr << "error[usage]: " << e.what() << std::endl;
            return 1;
        }
        // --seed drives demo-unseen replicas too
        demo_opts.seed = demo_train.seed;

        if (eval_cmd->parsed()) run_eval(eval_opts);
        if (spectral_cmd->parsed()) run_spectral(spectral_opts);
        if (train_cmd->parsed()) run_train(train_synth, train_vicreg, train_opts);
        if (rand_cmd->parsed()) run_randindex(rand_opts);
        if (demo_cmd->parsed())
            run_demo_unseen(demo_synth, demo_vicreg, demo_train, demo_opts);
    } catch (const IoError& e) {
        std::cerr << "error[io]: " << e.what() << std::endl;
        return 2;
    } catch (const DegenerateInput& e) {
        std::cerr << "error[degenerate]: " << e.what() << std::endl;
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error[usage]: " << e.what() << std::endl;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error[numeric]: " << e.what() << std::endl;
        return 3;
    }
    return 0;
}
