#pragma once

// Dataset ingestion (MVTec-style layouts), image-level AUROC, the scoring
// pipeline and the latency benchmark.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cse/bank.hpp"
#include "cse/train.hpp"

namespace cse {

struct DatasetIndex {
    std::string category;
    std::vector<std::string> train_good;
    struct TestEntry {
        std::string path;
        bool defective = false;
        std::string defect_type;
    };
    std::vector<TestEntry> test;
    int warnings = 0; // unreadable files skipped during ingestion
};

// layout "mvtec": root/train/good/*, root/test/<type>/* (type "good" = clean)
// layout "flat":  root/train/*,      root/test/<type>/*
DatasetIndex ingest_dataset(const std::string& root, const std::string& layout);

// Mann-Whitney statistic with midrank tie handling:
// P(score_defective > score_good) + 1/2 P(tie). Exact via integer rank
// arithmetic. labels: true = defective.
double compute_auroc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

// ---------------------------------------------------------------------------
// scoring pipeline
// ---------------------------------------------------------------------------

class Pipeline {
public:
    Pipeline(Checkpoint checkpoint, ClusterBank bank);

    static Pipeline load(const std::string& checkpoint_path, const std::string& bank_path);

    // raw image (any size, [0,1]) -> anomaly score. Eval-mode inference
    // never mutates the pipeline; concurrent calls are safe.
    ScoreResult score_image(const Tensor& image);

    // embedding of a preprocessed image, flattened (bank building / tests)
    std::vector<float> embed_image(const Tensor& image);

    const BackboneAdapter& adapter() const { return adapter_; }
    const Checkpoint& checkpoint() const { return checkpoint_; }
    const ClusterBank& bank() const { return bank_; }

    // staged execution for the benchmark
    struct Staged {
        double preprocess_ms = 0.0;
        double extract_ms = 0.0;
        double fuse_embed_ms = 0.0;
        double score_ms = 0.0;
        ScoreResult result;
    };
    Staged score_image_staged(const Tensor& image);

private:
    Checkpoint checkpoint_;
    BackboneAdapter adapter_;
    ClusterBank bank_;
};

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

struct StageStats {
    double mean_ms = 0.0;
    double p50_ms = 0.0;
    double p95_ms = 0.0;
};

struct BenchReport {
    StageStats preprocess, extract, fuse_embed, score, total;
    double fps = 0.0;
    int warmup = 0;
    int iters = 0;
    nlohmann::json to_json() const;
};

// Single-stream by construction: iterations run back to back on one thread,
// cycling through the provided images. Warmup iterations are discarded.
BenchReport bench_latency(Pipeline& pipeline, const std::vector<Tensor>& images, int warmup,
                          int iters);

} // namespace cse
