#include "cse/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "cse/errors.hpp"
#include "cse/image.hpp"

namespace cse {

namespace fs = std::filesystem;

namespace {

// cheap readability probe: the magic bytes must belong to a format the
// loader can actually decode
bool probe_readable(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    unsigned char magic[8] = {0};
    in.read(reinterpret_cast<char*>(magic), 8);
    if (!in) return false;
    static const unsigned char png[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (std::memcmp(magic, png, 8) == 0) return true;
    if (magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6')) return true;
    return false;
}

std::vector<std::string> sorted_images_in(const fs::path& dir) {
    std::vector<std::string> out;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && has_image_extension(entry.path().string()))
            out.push_back(entry.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace

DatasetIndex ingest_dataset(const std::string& root, const std::string& layout) {
    if (layout != "mvtec" && layout != "flat")
        throw ConfigError("unknown dataset layout '" + layout + "' (expected mvtec or flat)");
    const fs::path base(root);
    if (!fs::is_directory(base)) throw ConfigError("dataset root is not a directory: " + root);

    DatasetIndex index;
    index.category = base.filename().string();

    const fs::path train_dir = layout == "mvtec" ? base / "train" / "good" : base / "train";
    if (!fs::is_directory(train_dir))
        throw ConfigError("missing training directory: " + train_dir.string());
    for (const std::string& path : sorted_images_in(train_dir)) {
        if (!probe_readable(path)) {
            ++index.warnings;
            continue;
        }
        index.train_good.push_back(path);
    }
    if (index.train_good.empty())
        throw ConfigError("no readable training images under " + train_dir.string());

    const fs::path test_dir = base / "test";
    if (!fs::is_directory(test_dir))
        throw ConfigError("missing test directory: " + test_dir.string());

    std::vector<fs::path> type_dirs;
    for (const auto& entry : fs::directory_iterator(test_dir))
        if (entry.is_directory()) type_dirs.push_back(entry.path());
    std::sort(type_dirs.begin(), type_dirs.end());

    for (const fs::path& type_dir : type_dirs) {
        const std::string type = type_dir.filename().string();
        for (const std::string& path : sorted_images_in(type_dir)) {
            if (!probe_readable(path)) {
                ++index.warnings;
                continue;
            }
            DatasetIndex::TestEntry entry;
            entry.path = path;
            entry.defective = type != "good";
            entry.defect_type = type;
            index.test.push_back(std::move(entry));
        }
    }
    if (index.test.empty())
        throw ConfigError("no test images under " + test_dir.string());
    return index;
}

double compute_auroc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw EvalError("compute_auroc: scores and labels must align and be non-empty");
    long n_pos = 0, n_neg = 0;
    for (std::uint8_t l : labels) (l ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0)
        throw EvalError("compute_auroc: both classes must be present");

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // doubled midranks keep everything in integers, so the result is exact
    long long sum_pos_ranks2 = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const long long midrank2 = static_cast<long long>(i + 1) + static_cast<long long>(j + 1);
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]]) sum_pos_ranks2 += midrank2;
        i = j + 1;
    }
    const long long u2 = sum_pos_ranks2 - static_cast<long long>(n_pos) * (n_pos + 1);
    return static_cast<double>(u2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

Pipeline::Pipeline(Checkpoint checkpoint, ClusterBank bank)
    : checkpoint_(std::move(checkpoint)),
      adapter_(BackboneAdapter::load(checkpoint_.adapter)),
      bank_(std::move(bank)) {
    if (!bank_.digest.empty()) {
        const std::string expect = params_digest(checkpoint_.embedder, checkpoint_.decoder);
        if (bank_.digest != expect)
            throw ConfigError("cluster bank was built by a different checkpoint (bank digest " +
                              bank_.digest + ", checkpoint " + expect + ")");
    }
}

Pipeline Pipeline::load(const std::string& checkpoint_path, const std::string& bank_path) {
    return Pipeline(load_checkpoint(checkpoint_path), load_bank(bank_path));
}

std::vector<float> Pipeline::embed_image(const Tensor& image) {
    const FeatureStack stack = adapter_.extract_one(image);
    Tensor fused = fuse_features(stack);
    Tensor batch({1, fused.dim(0), fused.dim(1), fused.dim(2)});
    std::copy(fused.data.begin(), fused.data.end(), batch.data.begin());
    Tensor emb = embed(checkpoint_.embedder, batch, Mode::Eval);
    std::vector<float> flat(emb.data.begin(), emb.data.end());
    return flat;
}

ScoreResult Pipeline::score_image(const Tensor& image) {
    const Tensor input = preprocess_image(image, checkpoint_.adapter);
    return anomaly_score(embed_image(input), bank_);
}

Pipeline::Staged Pipeline::score_image_staged(const Tensor& image) {
    using clock = std::chrono::steady_clock;
    Staged staged;

    auto t0 = clock::now();
    const Tensor input = preprocess_image(image, checkpoint_.adapter);
    auto t1 = clock::now();
    const FeatureStack stack = adapter_.extract_one(input);
    auto t2 = clock::now();
    Tensor fused = fuse_features(stack);
    Tensor batch({1, fused.dim(0), fused.dim(1), fused.dim(2)});
    std::copy(fused.data.begin(), fused.data.end(), batch.data.begin());
    Tensor emb = embed(checkpoint_.embedder, batch, Mode::Eval);
    auto t3 = clock::now();
    staged.result = anomaly_score(emb.data, bank_);
    auto t4 = clock::now();

    const auto ms = [](clock::time_point a, clock::time_point b) {
        return std::chrono::duration<double, std::milli>(b - a).count();
    };
    staged.preprocess_ms = ms(t0, t1);
    staged.extract_ms = ms(t1, t2);
    staged.fuse_embed_ms = ms(t2, t3);
    staged.score_ms = ms(t3, t4);
    return staged;
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

namespace {

StageStats stats_of(std::vector<double> samples) {
    StageStats stats;
    if (samples.empty()) return stats;
    double sum = 0.0;
    for (double v : samples) sum += v;
    stats.mean_ms = sum / static_cast<double>(samples.size());
    std::sort(samples.begin(), samples.end());
    stats.p50_ms = samples[samples.size() / 2];
    stats.p95_ms = samples[std::min(samples.size() - 1,
                                    static_cast<std::size_t>(0.95 * static_cast<double>(samples.size())))];
    return stats;
}

nlohmann::json stage_json(const StageStats& s) {
    return {{"mean_ms", s.mean_ms}, {"p50_ms", s.p50_ms}, {"p95_ms", s.p95_ms}};
}

} // namespace

nlohmann::json BenchReport::to_json() const {
    return {{"preprocess", stage_json(preprocess)}, {"extract", stage_json(extract)},
            {"fuse_embed", stage_json(fuse_embed)}, {"score", stage_json(score)},
            {"total", stage_json(total)},           {"fps", fps},
            {"warmup", warmup},                     {"iters", iters}};
}

BenchReport bench_latency(Pipeline& pipeline, const std::vector<Tensor>& images, int warmup,
                          int iters) {
    if (iters < 1) throw InvalidInputError("bench_latency: iters must be >= 1");
    if (images.empty()) throw InvalidInputError("bench_latency: need at least one image");
    using clock = std::chrono::steady_clock;

    std::vector<double> pre, ext, fe, sc, tot;
    pre.reserve(static_cast<std::size_t>(iters));
    for (int i = 0; i < warmup + iters; ++i) {
        const Tensor& img = images[static_cast<std::size_t>(i) % images.size()];
        const auto t0 = clock::now();
        Pipeline::Staged staged = pipeline.score_image_staged(img);
        const auto t1 = clock::now();
        if (i < warmup) continue;
        pre.push_back(staged.preprocess_ms);
        ext.push_back(staged.extract_ms);
        fe.push_back(staged.fuse_embed_ms);
        sc.push_back(staged.score_ms);
        tot.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }

    BenchReport report;
    report.preprocess = stats_of(pre);
    report.extract = stats_of(ext);
    report.fuse_embed = stats_of(fe);
    report.score = stats_of(sc);
    report.total = stats_of(tot);
    report.fps = report.total.mean_ms > 0.0 ? 1000.0 / report.total.mean_ms : 0.0;
    report.warmup = warmup;
    report.iters = iters;
    return report;
}

} // namespace cse
