// cse - contrastively selected embedding engine for surface anomaly detection.
//
// Subcommands:
//   synth  - write corrupted samples + masks for visual inspection
//   train  - contrastive training on the defect-free train split
//   bank   - build the k-means cluster bank from a checkpoint
//   score  - per-image anomaly scores (JSON lines or CSV)
//   eval   - image-level AUROC report over a dataset's test split
//   bench  - per-stage latency benchmark
//
// Exit codes: 0 ok, 1 runtime error, 2 usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "cse/config.hpp"
#include "cse/container.hpp"
#include "cse/defectgen.hpp"
#include "cse/errors.hpp"
#include "cse/eval.hpp"
#include "cse/image.hpp"
#include "cse/threading.hpp"
#include "cse/train.hpp"

using nlohmann::json;

namespace {

struct CommonOpts {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string backbone;
    std::string dataset;
    std::string layout = "mvtec";
    int k = 0;
    std::string out;
    std::string format = "json";
};

cse::EngineConfig resolve_config(const CommonOpts& opts) {
    cse::EngineConfig config =
        opts.config_path.empty() ? cse::default_engine_config() : cse::load_engine_config(opts.config_path);
    if (opts.seed_set) config.seed = opts.seed;
    if (!opts.backbone.empty()) config.adapter.source = opts.backbone;
    if (opts.k > 0) config.bank_k = opts.k;
    return config;
}

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_dataset = true) {
    cmd->add_option("--config", opts.config_path, "JSON config file");
    cmd->add_option("--seed", opts.seed, "master seed")->each([&](const std::string&) {
        opts.seed_set = true;
    });
    cmd->add_option("--backbone", opts.backbone, "backbone source: 'stub' or model file path");
    if (with_dataset) {
        cmd->add_option("--dataset", opts.dataset, "dataset root directory");
        cmd->add_option("--layout", opts.layout, "dataset layout: mvtec|flat")
            ->check(CLI::IsMember({"mvtec", "flat"}));
    }
    cmd->add_option("--out", opts.out, "output path");
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw cse::PersistenceError("cannot write output file: " + path);
    return out;
}

// --- synth ------------------------------------------------------------------

int run_synth(const CommonOpts& opts, int count) {
    cse::EngineConfig config = resolve_config(opts);
    if (opts.dataset.empty()) throw cse::ConfigError("synth: --dataset is required");
    if (opts.out.empty()) throw cse::ConfigError("synth: --out directory is required");

    const cse::DatasetIndex index = cse::ingest_dataset(opts.dataset, opts.layout);
    std::filesystem::create_directories(opts.out);

    cse::DefectGenerator generator(config.defects);
    cse::Rng rng(config.seed);
    std::ofstream manifest(std::filesystem::path(opts.out) / "manifest.jsonl");

    for (int i = 0; i < count; ++i) {
        const std::string& src =
            index.train_good[static_cast<std::size_t>(i) % index.train_good.size()];
        cse::Tensor image = cse::preprocess_image(cse::load_image(src), config.adapter);
        cse::CorruptedSample sample = generator.sample_corruption(image, rng);

        char name[64];
        std::snprintf(name, sizeof(name), "sample_%04d", i);
        const std::string img_path = (std::filesystem::path(opts.out) / (std::string(name) + ".png")).string();
        const std::string mask_path =
            (std::filesystem::path(opts.out) / (std::string(name) + "_mask.png")).string();
        cse::save_png(img_path, sample.image);
        cse::save_png(mask_path, sample.mask.data);

        manifest << json{{"image", img_path},
                         {"mask", mask_path},
                         {"source", src},
                         {"kind", cse::defect_kind_name(sample.spec.kind)},
                         {"beta", sample.spec.beta},
                         {"coverage", sample.mask.coverage}}
                        .dump()
                 << "\n";
    }
    std::cout << "wrote " << count << " corrupted samples to " << opts.out << "\n";
    return 0;
}

// --- train ------------------------------------------------------------------

int run_train(const CommonOpts& opts) {
    cse::EngineConfig config = resolve_config(opts);
    if (opts.dataset.empty()) throw cse::ConfigError("train: --dataset is required");
    const std::string out = opts.out.empty() ? "checkpoint.cse" : opts.out;

    const cse::DatasetIndex index = cse::ingest_dataset(opts.dataset, opts.layout);
    if (index.warnings > 0)
        std::cerr << "warning: skipped " << index.warnings << " unreadable files\n";

    cse::Checkpoint ckpt = cse::fit_paths(config, index.train_good, &std::cout);
    cse::save_checkpoint(out, ckpt);
    std::cout << "checkpoint: " << out << "\n"
              << "params_digest: " << cse::params_digest(ckpt.embedder, ckpt.decoder) << "\n"
              << "best_epoch: " << ckpt.epoch << " val_loss: " << ckpt.val_loss << "\n";
    return 0;
}

// --- bank -------------------------------------------------------------------

int run_bank(const CommonOpts& opts, const std::string& ckpt_path) {
    cse::EngineConfig config = resolve_config(opts);
    if (opts.dataset.empty()) throw cse::ConfigError("bank: --dataset is required");
    const std::string out = opts.out.empty() ? "bank.cse" : opts.out;

    cse::Checkpoint ckpt = cse::load_checkpoint(ckpt_path);
    cse::BackboneAdapter adapter = cse::BackboneAdapter::load(ckpt.adapter);
    const cse::DatasetIndex index = cse::ingest_dataset(opts.dataset, opts.layout);

    std::vector<std::vector<float>> embeddings(index.train_good.size());
    cse::parallel_for(index.train_good.size(), [&](std::size_t i) {
        cse::Tensor image = cse::preprocess_image(cse::load_image(index.train_good[i]), ckpt.adapter);
        const cse::FeatureStack stack = adapter.extract_one(image);
        cse::Tensor fused = cse::fuse_features(stack);
        cse::Tensor batch({1, fused.dim(0), fused.dim(1), fused.dim(2)});
        std::copy(fused.data.begin(), fused.data.end(), batch.data.begin());
        cse::Tensor emb = cse::embed(ckpt.embedder, batch, cse::Mode::Eval);
        embeddings[i] = emb.data;
    });

    cse::ClusterBank bank = cse::build_bank(embeddings, config.bank_k, config.kmeans);
    bank.digest = cse::params_digest(ckpt.embedder, ckpt.decoder);
    cse::save_bank(out, bank);
    std::cout << "bank: " << out << " (k=" << bank.k << ", dim=" << bank.dim << ")\n";
    return 0;
}

// --- score / eval -----------------------------------------------------------

struct ScoredImage {
    std::string path;
    double score = 0.0;
    bool has_label = false;
    bool defective = false;
    std::string defect_type;
};

std::vector<ScoredImage> score_test_set(cse::Pipeline& pipeline, const cse::DatasetIndex& index) {
    std::vector<ScoredImage> rows(index.test.size());
    // eval-mode scoring never mutates the pipeline: safe to share across workers
    cse::parallel_for(index.test.size(), [&](std::size_t i) {
        const auto& entry = index.test[i];
        ScoredImage row;
        row.path = entry.path;
        row.score = pipeline.score_image(cse::load_image(entry.path)).score;
        row.has_label = true;
        row.defective = entry.defective;
        row.defect_type = entry.defect_type;
        rows[i] = std::move(row);
    });
    return rows;
}

void write_scores(std::ostream& out, const std::vector<ScoredImage>& rows,
                  const std::string& format) {
    if (format == "csv") {
        out << "path,score,label\n";
        for (const auto& r : rows)
            out << r.path << "," << r.score << ","
                << (r.has_label ? (r.defective ? "defective" : "good") : "") << "\n";
        return;
    }
    for (const auto& r : rows) {
        json line{{"path", r.path}, {"score", r.score}};
        if (r.has_label) line["label"] = r.defective ? "defective" : "good";
        out << line.dump() << "\n";
    }
}

int run_score(const CommonOpts& opts, const std::string& ckpt_path, const std::string& bank_path,
              const std::vector<std::string>& images) {
    cse::Pipeline pipeline = cse::Pipeline::load(ckpt_path, bank_path);

    std::vector<ScoredImage> rows;
    if (!opts.dataset.empty()) {
        const cse::DatasetIndex index = cse::ingest_dataset(opts.dataset, opts.layout);
        rows = score_test_set(pipeline, index);
    } else if (!images.empty()) {
        rows.resize(images.size());
        cse::parallel_for(images.size(), [&](std::size_t i) {
            rows[i].path = images[i];
            rows[i].score = pipeline.score_image(cse::load_image(images[i])).score;
        });
    } else {
        throw cse::ConfigError("score: provide --dataset or positional image paths");
    }

    if (opts.out.empty()) {
        write_scores(std::cout, rows, opts.format);
    } else {
        auto out = open_out(opts.out);
        write_scores(out, rows, opts.format);
        std::cout << "scores: " << opts.out << "\n";
    }
    return 0;
}

int run_eval(const CommonOpts& opts, const std::string& ckpt_path, const std::string& bank_path) {
    if (opts.dataset.empty()) throw cse::ConfigError("eval: --dataset is required");
    cse::Pipeline pipeline = cse::Pipeline::load(ckpt_path, bank_path);
    const cse::DatasetIndex index = cse::ingest_dataset(opts.dataset, opts.layout);

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<ScoredImage> rows = score_test_set(pipeline, index);
    const auto t1 = std::chrono::steady_clock::now();

    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    int n_good = 0, n_defective = 0;
    json table = json::array();
    for (const auto& r : rows) {
        scores.push_back(r.score);
        labels.push_back(r.defective ? 1 : 0);
        (r.defective ? n_defective : n_good)++;
        table.push_back({{"path", r.path},
                         {"score", r.score},
                         {"label", r.defective ? "defective" : "good"},
                         {"defect_type", r.defect_type}});
    }
    const double auroc = cse::compute_auroc(scores, labels);
    const double wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

    json report{{"category", index.category},
                {"auroc", auroc},
                {"n_good", n_good},
                {"n_defective", n_defective},
                {"warnings", index.warnings},
                {"scores", table},
                {"wall_clock",
                 {{"total_ms", wall_ms},
                  {"per_image_ms", wall_ms / static_cast<double>(rows.size())}}}};

    std::cout << "AUROC: " << auroc << " (" << n_good << " good, " << n_defective
              << " defective)\n";
    if (!opts.out.empty()) {
        auto out = open_out(opts.out);
        out << report.dump(2) << "\n";
        std::cout << "report: " << opts.out << "\n";
    }
    return 0;
}

// --- bench ------------------------------------------------------------------

int run_bench(const CommonOpts& opts, const std::string& ckpt_path, const std::string& bank_path,
              const std::vector<std::string>& images, int warmup, int iters) {
    cse::Pipeline pipeline = cse::Pipeline::load(ckpt_path, bank_path);

    std::vector<cse::Tensor> loaded;
    if (!images.empty()) {
        for (const auto& p : images) loaded.push_back(cse::load_image(p));
    } else if (!opts.dataset.empty()) {
        const cse::DatasetIndex index = cse::ingest_dataset(opts.dataset, opts.layout);
        const std::size_t n = std::min<std::size_t>(index.test.size(), 8);
        for (std::size_t i = 0; i < n; ++i)
            loaded.push_back(cse::load_image(index.test[i].path));
    } else {
        throw cse::ConfigError("bench: provide --dataset or positional image paths");
    }

    const cse::BenchReport report = cse::bench_latency(pipeline, loaded, warmup, iters);
    std::cout << "stage        mean ms    p50 ms    p95 ms\n";
    const auto line = [](const char* name, const cse::StageStats& s) {
        std::printf("%-10s %9.3f %9.3f %9.3f\n", name, s.mean_ms, s.p50_ms, s.p95_ms);
    };
    line("preprocess", report.preprocess);
    line("extract", report.extract);
    line("fuse+embed", report.fuse_embed);
    line("score", report.score);
    line("total", report.total);
    std::printf("fps: %.2f (warmup %d, iters %d)\n", report.fps, report.warmup, report.iters);

    if (!opts.out.empty()) {
        auto out = open_out(opts.out);
        out << report.to_json().dump(2) << "\n";
        std::cout << "report: " << opts.out << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"contrastively selected embedding engine for surface anomaly detection"};
    app.require_subcommand(1);

    CommonOpts opts;
    int synth_count = 16;
    std::string ckpt_path = "checkpoint.cse";
    std::string bank_path = "bank.cse";
    std::vector<std::string> images;
    int warmup = 3, iters = 20;

    CLI::App* synth = app.add_subcommand("synth", "emit corrupted samples + masks");
    add_common(synth, opts);
    synth->add_option("--count", synth_count, "number of samples to synthesize");

    CLI::App* train = app.add_subcommand("train", "train the embedder");
    add_common(train, opts);

    CLI::App* bank = app.add_subcommand("bank", "build the cluster bank");
    add_common(bank, opts);
    bank->add_option("--ckpt", ckpt_path, "checkpoint path");
    bank->add_option("--k", opts.k, "number of clusters");

    CLI::App* score = app.add_subcommand("score", "score images");
    add_common(score, opts);
    score->add_option("--ckpt", ckpt_path, "checkpoint path");
    score->add_option("--bank", bank_path, "bank path");
    score->add_option("--format", opts.format, "output format")->check(CLI::IsMember({"json", "csv"}));
    score->add_option("images", images, "image files to score");

    CLI::App* eval = app.add_subcommand("eval", "AUROC evaluation");
    add_common(eval, opts);
    eval->add_option("--ckpt", ckpt_path, "checkpoint path");
    eval->add_option("--bank", bank_path, "bank path");

    CLI::App* bench = app.add_subcommand("bench", "latency benchmark");
    add_common(bench, opts);
    bench->add_option("--ckpt", ckpt_path, "checkpoint path");
    bench->add_option("--bank", bank_path, "bank path");
    bench->add_option("--warmup", warmup, "warmup iterations (excluded from stats)");
    bench->add_option("--iters", iters, "measured iterations");
    bench->add_option("images", images, "image files to cycle through");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) return run_synth(opts, synth_count);
        if (train->parsed()) return run_train(opts);
        if (bank->parsed()) return run_bank(opts, ckpt_path);
        if (score->parsed()) return run_score(opts, ckpt_path, bank_path, images);
        if (eval->parsed()) return run_eval(opts, ckpt_path, bank_path);
        if (bench->parsed()) return run_bench(opts, ckpt_path, bank_path, images, warmup, iters);
    } catch (const cse::Error& e) {
        std::cerr << json{{"error", e.what()}}.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", e.what()}}.dump() << "\n";
        return 1;
    }
    return 2;
}
