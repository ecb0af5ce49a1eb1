#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cse/container.hpp"
#include "cse/errors.hpp"
#include "cse/eval.hpp"
#include "cse/image.hpp"
#include "test_support.hpp"

using namespace cse;
namespace fs = std::filesystem;

namespace {

// O(n^2) pairwise oracle: P(defective > good) + 1/2 P(tie)
double auroc_oracle(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    long long wins2 = 0, pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            ++pairs;
            if (scores[i] > scores[j])
                wins2 += 2;
            else if (scores[i] == scores[j])
                wins2 += 1;
        }
    }
    return static_cast<double>(wins2) / (2.0 * static_cast<double>(pairs));
}

void write_toy_tree(const testsupport::TempDir& tmp, const std::string& layout) {
    const fs::path root(tmp.path());
    const fs::path train = layout == "mvtec" ? root / "train" / "good" : root / "train";
    fs::create_directories(train);
    for (int i = 0; i < 3; ++i)
        save_png((train / ("good_" + std::to_string(i) + ".png")).string(),
                 testsupport::make_stripes(64, 64, 16.0, 0.1 * i, 100 + i));
    fs::create_directories(root / "test" / "good");
    fs::create_directories(root / "test" / "scratch");
    fs::create_directories(root / "test" / "hole");
    save_png((root / "test" / "good" / "t0.png").string(),
             testsupport::make_stripes(64, 64, 16.0, 0.7, 200));
    save_png((root / "test" / "good" / "t1.png").string(),
             testsupport::make_stripes(64, 64, 16.0, 0.9, 201));
    save_png((root / "test" / "scratch" / "s0.png").string(),
             testsupport::make_checker(64, 64, 8, 0, 202));
    save_png((root / "test" / "scratch" / "s1.png").string(),
             testsupport::make_checker(64, 64, 8, 1, 203));
    save_png((root / "test" / "hole" / "h0.png").string(),
             testsupport::make_checker(64, 64, 4, 2, 204));
}

} // namespace

TEST_CASE("ingest_dataset mvtec layout") {
    testsupport::TempDir tmp;
    write_toy_tree(tmp, "mvtec");

    DatasetIndex index = ingest_dataset(tmp.path(), "mvtec");
    CHECK(index.train_good.size() == 3);
    REQUIRE(index.test.size() == 5);
    CHECK(index.warnings == 0);

    int good = 0, defective = 0;
    for (const auto& e : index.test) {
        if (e.defective) {
            ++defective;
            CHECK(e.defect_type != "good");
        } else {
            ++good;
            CHECK(e.defect_type == "good");
        }
    }
    CHECK(good == 2);
    CHECK(defective == 3);

    DatasetIndex again = ingest_dataset(tmp.path(), "mvtec");
    for (std::size_t i = 0; i < index.test.size(); ++i) CHECK(index.test[i].path == again.test[i].path);
    CHECK(index.train_good == again.train_good);
}

TEST_CASE("ingest_dataset flat layout, errors, unreadable files") {
    testsupport::TempDir tmp;
    write_toy_tree(tmp, "flat");
    DatasetIndex index = ingest_dataset(tmp.path(), "flat");
    CHECK(index.train_good.size() == 3);
    CHECK(index.test.size() == 5);

    // garbage bytes with an image extension: warned and skipped
    {
        std::ofstream junk(fs::path(tmp.path()) / "test" / "scratch" / "junk.png");
        junk << "not an image";
    }
    DatasetIndex warned = ingest_dataset(tmp.path(), "flat");
    CHECK(warned.warnings == 1);
    CHECK(warned.test.size() == 5);

    testsupport::TempDir empty;
    fs::create_directories(fs::path(empty.path()) / "train");
    CHECK_THROWS_AS(ingest_dataset(empty.path(), "flat"), ConfigError);
    CHECK_THROWS_AS(ingest_dataset(tmp.path(), "weird"), ConfigError);
    CHECK_THROWS_AS(ingest_dataset(tmp.sub("missing"), "mvtec"), ConfigError);

    // empty test directory names the missing path
    testsupport::TempDir no_test;
    fs::create_directories(fs::path(no_test.path()) / "train");
    save_png((fs::path(no_test.path()) / "train" / "a.png").string(),
             testsupport::make_stripes(32, 32, 8.0, 0.0, 1));
    try {
        ingest_dataset(no_test.path(), "flat");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("test") != std::string::npos);
    }
}

TEST_CASE("compute_auroc boundaries and oracle equality") {
    // perfectly separated
    CHECK(compute_auroc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == doctest::Approx(1.0));
    // all ties
    CHECK(compute_auroc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
    // inverted
    CHECK(compute_auroc({0.9, 0.8, 0.1, 0.2}, {0, 0, 1, 1}) == doctest::Approx(0.0));

    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 5 + rng.uniform_int(0, 15);
        std::vector<double> scores;
        std::vector<std::uint8_t> labels;
        bool has_pos = false, has_neg = false;
        for (int i = 0; i < n; ++i) {
            scores.push_back(rng.uniform_int(0, 6) * 0.125); // small set forces ties
            const bool pos = rng.uniform() < 0.5;
            labels.push_back(pos);
            (pos ? has_pos : has_neg) = true;
        }
        if (!has_pos || !has_neg) {
            CHECK_THROWS_AS(compute_auroc(scores, labels), EvalError);
            continue;
        }
        CHECK(compute_auroc(scores, labels) == auroc_oracle(scores, labels));

        // invariance under a strictly increasing transform
        std::vector<double> transformed;
        for (double s : scores) transformed.push_back(std::exp(s) + 3.0);
        CHECK(compute_auroc(transformed, labels) == compute_auroc(scores, labels));
    }

    CHECK_THROWS_AS(compute_auroc({1.0, 2.0}, {1, 1}), EvalError);
    CHECK_THROWS_AS(compute_auroc({}, {}), EvalError);
}

TEST_CASE("named tensor container round trip and corruption") {
    testsupport::TempDir tmp;
    NamedTensorFile file;
    file.meta["kind"] = "test";
    file.meta["note"] = "round trip";
    Tensor a({2, 3}, {1.0f, -2.5f, 3.25f, 0.0f, 1e-7f, -4096.0f});
    Tensor b({4}, {0.5f, 0.25f, 0.125f, 0.0625f});
    file.tensors.emplace_back("alpha", a);
    file.tensors.emplace_back("beta", b);

    const std::string path = tmp.sub("file.cse");
    save_named_tensors(path, file);
    NamedTensorFile loaded = load_named_tensors(path);
    CHECK(loaded.meta.at("note") == "round trip");
    CHECK(loaded.find("alpha").data == a.data);
    CHECK(loaded.find("beta").data == b.data);
    CHECK(loaded.find("alpha").shape == a.shape);
    CHECK_THROWS_AS(loaded.find("gamma"), PersistenceError);

    // identical writes produce identical bytes
    const std::string path2 = tmp.sub("file2.cse");
    save_named_tensors(path2, file);
    CHECK(file_digest(path) == file_digest(path2));

    {
        std::ofstream bad(tmp.sub("bad.cse"), std::ios::binary);
        bad << "BADMAGIC and then some";
    }
    CHECK_THROWS_AS(load_named_tensors(tmp.sub("bad.cse")), PersistenceError);
}

TEST_CASE("pipeline scoring and bank digest binding") {
    testsupport::TempDir tmp;

    // a minimal untrained pipeline: seeded embedder + decoder + k=1 bank
    EngineConfig config = testsupport::toy_engine_config(3);
    BackboneAdapter adapter = BackboneAdapter::load(config.adapter);

    Checkpoint ckpt;
    ckpt.adapter = config.adapter;
    EmbedderConfig ec = config.embedder;
    ec.in_channels = adapter.fused_channels();
    ckpt.embedder = init_embedder<float>(ec, 10);
    DecoderConfig dc = config.decoder;
    dc.mode = DecoderMode::RandomFrozen;
    dc.seed = 11;
    dc.in_channels = ec.out_channels;
    dc.target_shapes = config.adapter.declared_shapes;
    ckpt.decoder = init_decoder<float>(dc);

    std::vector<Tensor> images = testsupport::make_toy_corpus(4, 64, 64, 77);
    std::vector<std::vector<float>> embeddings;
    {
        Pipeline probe(ckpt, ClusterBank{1, 256, std::vector<float>(256, 0.1f), ""});
        for (const Tensor& img : images)
            embeddings.push_back(probe.embed_image(preprocess_image(img, config.adapter)));
    }
    ClusterBank bank = build_bank(embeddings, 1, KmeansConfig{});
    bank.digest = params_digest(ckpt.embedder, ckpt.decoder);

    Pipeline pipeline(ckpt, bank);
    ScoreResult r1 = pipeline.score_image(images[0]);
    ScoreResult r2 = pipeline.score_image(images[0]);
    CHECK(r1.score == r2.score);
    CHECK(r1.score >= 0.0f);
    CHECK(r1.score <= 2.0f);

    // mismatched digest is rejected
    ClusterBank wrong = bank;
    wrong.digest = "ffffffffffffffff";
    CHECK_THROWS_AS(Pipeline(ckpt, wrong), ConfigError);

    // persistence round trip through files
    save_checkpoint(tmp.sub("ckpt.cse"), ckpt);
    save_bank(tmp.sub("bank.cse"), bank);
    Pipeline reloaded = Pipeline::load(tmp.sub("ckpt.cse"), tmp.sub("bank.cse"));
    CHECK(reloaded.score_image(images[0]).score == doctest::Approx(r1.score).epsilon(1e-6));
}

TEST_CASE("bench_latency accounting") {
    EngineConfig config = testsupport::toy_engine_config(5);
    BackboneAdapter adapter = BackboneAdapter::load(config.adapter);

    Checkpoint ckpt;
    ckpt.adapter = config.adapter;
    EmbedderConfig ec = config.embedder;
    ec.in_channels = adapter.fused_channels();
    ckpt.embedder = init_embedder<float>(ec, 20);
    DecoderConfig dc = config.decoder;
    dc.seed = 21;
    dc.in_channels = ec.out_channels;
    dc.target_shapes = config.adapter.declared_shapes;
    ckpt.decoder = init_decoder<float>(dc);

    std::vector<Tensor> images = testsupport::make_toy_corpus(2, 64, 64, 88);
    Pipeline probe(ckpt, ClusterBank{1, 256, std::vector<float>(256, 0.1f), ""});
    std::vector<std::vector<float>> embeddings;
    for (const Tensor& img : images) embeddings.push_back(probe.embed_image(img));
    ClusterBank bank = build_bank(embeddings, 1, KmeansConfig{});
    Pipeline pipeline(ckpt, bank);

    BenchReport report = bench_latency(pipeline, images, 2, 10);
    CHECK(report.iters == 10);
    CHECK(report.warmup == 2);
    CHECK(report.total.mean_ms > 0.0);
    CHECK(report.fps > 0.0);
    const double stage_sum = report.preprocess.mean_ms + report.extract.mean_ms +
                             report.fuse_embed.mean_ms + report.score.mean_ms;
    CHECK(stage_sum <= report.total.mean_ms * 1.05);
    CHECK(stage_sum >= report.total.mean_ms * 0.80);

    const nlohmann::json j = report.to_json();
    CHECK(j.contains("extract"));
    CHECK(j.at("fps").get<double>() > 0.0);

    CHECK_THROWS_AS(bench_latency(pipeline, images, 0, 0), InvalidInputError);
}
