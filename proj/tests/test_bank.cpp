#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cse/bank.hpp"
#include "cse/errors.hpp"
#include "cse/rng.hpp"
#include "test_support.hpp"

using namespace cse;

namespace {

std::vector<float> normalized(const std::vector<float>& v) {
    double n = 0.0;
    for (float x : v) n += static_cast<double>(x) * x;
    n = std::sqrt(n);
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / n);
    return out;
}

std::vector<std::vector<float>> random_embeddings(int n, int dim, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<float>> out(static_cast<std::size_t>(n));
    for (auto& e : out) {
        e.resize(static_cast<std::size_t>(dim));
        for (auto& v : e) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    return out;
}

// blob of near-duplicates of a base direction
std::vector<std::vector<float>> blob(const std::vector<float>& base, int n, double noise,
                                     std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<float>> out;
    for (int i = 0; i < n; ++i) {
        std::vector<float> e(base.size());
        for (std::size_t d = 0; d < base.size(); ++d)
            e[d] = static_cast<float>(base[d] + noise * rng.uniform(-1.0, 1.0));
        out.push_back(std::move(e));
    }
    return out;
}

} // namespace

TEST_CASE("k=1 centroid is the mean of the normalized embeddings") {
    auto embeddings = random_embeddings(17, 32, 5);
    ClusterBank bank = build_bank(embeddings, 1, KmeansConfig{});
    REQUIRE(bank.k == 1);
    REQUIRE(bank.dim == 32);

    std::vector<double> mean(32, 0.0);
    for (const auto& e : embeddings) {
        const std::vector<float> u = normalized(e);
        for (int d = 0; d < 32; ++d) mean[static_cast<std::size_t>(d)] += u[static_cast<std::size_t>(d)];
    }
    for (int d = 0; d < 32; ++d)
        CHECK(bank.centroids[static_cast<std::size_t>(d)] ==
              doctest::Approx(mean[static_cast<std::size_t>(d)] / 17.0).epsilon(1e-6));
}

TEST_CASE("k=n distinct embeddings gives zero inertia") {
    auto embeddings = random_embeddings(6, 8, 9);
    std::vector<double> inertia;
    ClusterBank bank = build_bank(embeddings, 6, KmeansConfig{}, &inertia);
    REQUIRE_FALSE(inertia.empty());
    CHECK(inertia.back() == doctest::Approx(0.0).epsilon(1e-10));

    // every embedding scores 0 against its own centroid
    for (const auto& e : embeddings)
        CHECK(anomaly_score(e, bank).score == doctest::Approx(0.0f).epsilon(1e-6));
}

TEST_CASE("two separated blobs are recovered with k=2") {
    std::vector<float> dir_a(16, 0.0f), dir_b(16, 0.0f);
    dir_a[0] = 1.0f;
    dir_b[5] = 1.0f;
    auto embeddings = blob(dir_a, 50, 0.05, 1);
    auto more = blob(dir_b, 50, 0.05, 2);
    embeddings.insert(embeddings.end(), more.begin(), more.end());

    std::vector<double> inertia;
    ClusterBank bank = build_bank(embeddings, 2, KmeansConfig{.max_iters = 100, .tol = 1e-9, .seed = 3},
                                  &inertia);

    // Lloyd-style oracle: with perfect assignment each centroid must be the
    // mean of its blob's normalized members.
    std::vector<double> mean_a(16, 0.0), mean_b(16, 0.0);
    for (int i = 0; i < 50; ++i) {
        const auto ua = normalized(embeddings[static_cast<std::size_t>(i)]);
        const auto ub = normalized(embeddings[static_cast<std::size_t>(50 + i)]);
        for (int d = 0; d < 16; ++d) {
            mean_a[static_cast<std::size_t>(d)] += ua[static_cast<std::size_t>(d)] / 50.0;
            mean_b[static_cast<std::size_t>(d)] += ub[static_cast<std::size_t>(d)] / 50.0;
        }
    }
    // match centroids to blob means by nearest distance
    auto dist = [&](int c, const std::vector<double>& mean) {
        double s = 0.0;
        for (int d = 0; d < 16; ++d) {
            const double diff = bank.centroids[static_cast<std::size_t>(c) * 16 + d] -
                                mean[static_cast<std::size_t>(d)];
            s += diff * diff;
        }
        return std::sqrt(s);
    };
    const bool first_is_a = dist(0, mean_a) < dist(0, mean_b);
    CHECK(dist(0, first_is_a ? mean_a : mean_b) < 1e-3);
    CHECK(dist(1, first_is_a ? mean_b : mean_a) < 1e-3);

    // inertia is non-increasing across Lloyd iterations
    for (std::size_t i = 1; i < inertia.size(); ++i) CHECK(inertia[i] <= inertia[i - 1] + 1e-12);
}

TEST_CASE("anomaly_score basics and exhaustive-min oracle") {
    auto embeddings = random_embeddings(12, 24, 77);
    ClusterBank bank = build_bank(embeddings, 3, KmeansConfig{.max_iters = 100, .tol = 1e-6, .seed = 4});

    // embedding equal to a centroid: score 0
    std::vector<float> c0(bank.centroids.begin(), bank.centroids.begin() + 24);
    CHECK(anomaly_score(c0, bank).score == doctest::Approx(0.0f).epsilon(1e-6));

    // antipodal embedding with k=1: score 2
    ClusterBank k1 = build_bank(embeddings, 1, KmeansConfig{});
    std::vector<float> anti(k1.centroids.begin(), k1.centroids.end());
    for (auto& v : anti) v = -v;
    CHECK(anomaly_score(anti, k1).score == doctest::Approx(2.0f).epsilon(1e-6));

    // brute-force min over per-centroid cosine distances
    Rng rng(123);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<float> e(24);
        for (auto& v : e) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        ScoreResult r = anomaly_score(e, bank);

        double en = 0.0;
        for (float v : e) en += static_cast<double>(v) * v;
        en = std::sqrt(en);
        double best = 1e30;
        int best_c = -1;
        for (int c = 0; c < 3; ++c) {
            double dot = 0.0, cn = 0.0;
            for (int d = 0; d < 24; ++d) {
                dot += static_cast<double>(e[static_cast<std::size_t>(d)]) *
                       bank.centroids[static_cast<std::size_t>(c) * 24 + d];
                cn += static_cast<double>(bank.centroids[static_cast<std::size_t>(c) * 24 + d]) *
                      bank.centroids[static_cast<std::size_t>(c) * 24 + d];
            }
            const double dc = 1.0 - dot / (en * std::sqrt(cn));
            if (dc < best) {
                best = dc;
                best_c = c;
            }
        }
        CHECK(r.score == doctest::Approx(best).epsilon(1e-6));
        CHECK(r.nearest == best_c);
        REQUIRE(r.score >= 0.0f);
        REQUIRE(r.score <= 2.0f);

        // scale invariance
        std::vector<float> scaled = e;
        for (auto& v : scaled) v *= 41.0f;
        CHECK(anomaly_score(scaled, bank).score == doctest::Approx(r.score).epsilon(1e-6));
    }
}

TEST_CASE("score is monotone non-increasing as clusters are added") {
    auto embeddings = random_embeddings(10, 16, 31);
    ClusterBank small = build_bank(embeddings, 2, KmeansConfig{.max_iters = 100, .tol = 1e-6, .seed = 1});

    ClusterBank big = small;
    big.k = 3;
    std::vector<float> extra = normalized(random_embeddings(1, 16, 99)[0]);
    big.centroids.insert(big.centroids.end(), extra.begin(), extra.end());

    Rng rng(7);
    for (int i = 0; i < 100; ++i) {
        std::vector<float> e(16);
        for (auto& v : e) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        CHECK(anomaly_score(e, big).score <= anomaly_score(e, small).score + 1e-7f);
    }
}

TEST_CASE("build_bank determinism and error contracts") {
    auto embeddings = random_embeddings(9, 12, 3);
    ClusterBank a = build_bank(embeddings, 3, KmeansConfig{.max_iters = 50, .tol = 1e-6, .seed = 8});
    ClusterBank b = build_bank(embeddings, 3, KmeansConfig{.max_iters = 50, .tol = 1e-6, .seed = 8});
    CHECK(a.centroids == b.centroids);

    CHECK_THROWS_AS(build_bank(embeddings, 0, KmeansConfig{}), ConfigError);
    CHECK_THROWS_AS(build_bank(embeddings, 10, KmeansConfig{}), ConfigError);

    auto withzero = embeddings;
    withzero.push_back(std::vector<float>(12, 0.0f));
    CHECK_THROWS_AS(build_bank(withzero, 2, KmeansConfig{}), DegenerateInputError);

    CHECK_THROWS_AS(anomaly_score(std::vector<float>(12, 0.0f), a), DegenerateInputError);
    CHECK_THROWS_AS(anomaly_score(std::vector<float>(5, 1.0f), a), InvalidInputError);
}

TEST_CASE("bank persistence round trip") {
    auto embeddings = random_embeddings(8, 16, 21);
    ClusterBank bank = build_bank(embeddings, 2, KmeansConfig{.max_iters = 50, .tol = 1e-6, .seed = 2});
    bank.digest = "0123456789abcdef";

    testsupport::TempDir tmp;
    const std::string path = tmp.sub("bank.cse");
    save_bank(path, bank);
    ClusterBank loaded = load_bank(path);
    CHECK(loaded.k == bank.k);
    CHECK(loaded.dim == bank.dim);
    CHECK(loaded.digest == bank.digest);
    CHECK(loaded.centroids == bank.centroids);
}
