#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <map>

#include "cse/defectgen.hpp"
#include "cse/errors.hpp"
#include "cse/image.hpp"
#include "cse/nn.hpp"
#include "cse/perlin.hpp"
#include "test_support.hpp"

using namespace cse;

namespace {

DefectConfig toy_defect_config() {
    DefectConfig cfg;
    cfg.structural_grid = 8;
    return cfg;
}

bool outside_mask_identical(const Tensor& original, const CorruptedSample& sample) {
    const int h = original.dim(1), w = original.dim(2);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < hw; ++i) {
        if (sample.mask.data.data[i] != 0.0f) continue;
        for (int c = 0; c < 3; ++c)
            if (sample.image.data[static_cast<std::size_t>(c) * hw + i] !=
                original.data[static_cast<std::size_t>(c) * hw + i])
                return false;
    }
    return true;
}

} // namespace

TEST_CASE("perlin determinism, range, lattice zeros") {
    PerlinParams pp;
    pp.grid_res_x = 4;
    pp.grid_res_y = 4;
    pp.seed = 99;
    Tensor a = perlin_noise(pp, 64, 64);
    Tensor b = perlin_noise(pp, 64, 64);
    CHECK(a.data == b.data);

    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        PerlinParams p{8, 8, 1, seed};
        Tensor f = perlin_noise(p, 32, 32);
        for (float v : f.data) {
            REQUIRE(v >= -1.0f);
            REQUIRE(v <= 1.0f);
        }
    }

    // single octave: lattice points (every 16 px for a 4-cell grid on 64 px)
    for (int y = 0; y < 64; y += 16)
        for (int x = 0; x < 64; x += 16)
            CHECK(std::abs(a.data[static_cast<std::size_t>(y) * 64 + x]) < 1e-6);

    CHECK_THROWS_AS(perlin_noise(PerlinParams{16, 16, 1, 0}, 8, 8), InvalidInputError);
}

TEST_CASE("threshold_mask boundaries and determinism pin") {
    PerlinParams pp{8, 8, 1, 1234};
    Tensor noise = perlin_noise(pp, 64, 64);

    AnomalyMask all = threshold_mask(noise, -1.0f);
    CHECK(all.coverage == 1.0f); // field values in [-1,1], strictly > -1 almost surely

    AnomalyMask none = threshold_mask(noise, 1.0f);
    CHECK(none.coverage == 0.0f);

    AnomalyMask m1 = threshold_mask(noise, 0.5f);
    AnomalyMask m2 = threshold_mask(perlin_noise(pp, 64, 64), 0.5f);
    CHECK(m1.coverage == m2.coverage);
    CHECK(m1.data.data == m2.data.data);
    // regression pin: ones count for this seed/threshold on this build
    std::size_t ones = 0;
    for (float v : m1.data.data) ones += v == 1.0f;
    CHECK(ones == 218);
    for (float v : m1.data.data) CHECK((v == 0.0f || v == 1.0f));
}

TEST_CASE("corrupt_textural blending") {
    Tensor img = testsupport::make_stripes(32, 32, 8.0, 0.25, 5);
    Tensor tex = testsupport::make_checker(32, 32, 4, 1, 6);

    AnomalyMask ones = threshold_mask(Tensor::full({32, 32}, 0.5f), 0.0f);
    CorruptedSample full = corrupt_textural(img, tex, ones, 1.0f);
    CHECK(full.image.data == tex.data);

    AnomalyMask zeros = threshold_mask(Tensor::full({32, 32}, -0.5f), 0.0f);
    CorruptedSample none = corrupt_textural(img, tex, zeros, 1.0f);
    CHECK(none.image.data == img.data);

    Tensor single({32, 32});
    single.data[5 * 32 + 7] = 1.0f;
    AnomalyMask one_px = threshold_mask(single, 0.5f);
    CorruptedSample half = corrupt_textural(img, tex, one_px, 0.5f);
    const std::size_t hw = 32 * 32, i = 5 * 32 + 7;
    for (int c = 0; c < 3; ++c)
        CHECK(half.image.data[c * hw + i] ==
              doctest::Approx(0.5f * (img.data[c * hw + i] + tex.data[c * hw + i])).epsilon(1e-6));

    Tensor small_tex({3, 16, 16});
    CHECK_THROWS_AS(corrupt_textural(img, small_tex, ones, 1.0f), InvalidInputError);
}

TEST_CASE("corrupt_structural permutation properties") {
    Tensor img = testsupport::make_stripes(64, 64, 16.0, 0.1, 7);
    Rng rng(21);

    AnomalyMask zeros = threshold_mask(Tensor::full({64, 64}, -0.5f), 0.0f);
    CorruptedSample none = corrupt_structural(img, zeros, 8, rng, 1.0f);
    CHECK(none.image.data == img.data);

    // full mask + beta 1: output is the shuffled source; pixel multiset preserved
    AnomalyMask ones = threshold_mask(Tensor::full({64, 64}, 0.5f), 0.0f);
    Rng rng2(22);
    CorruptedSample shuffled = corrupt_structural(img, ones, 8, rng2, 1.0f);
    CHECK(shuffled.image.data != img.data); // non-identity permutation
    std::vector<float> a = img.data, b = shuffled.image.data;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);

    Rng r3(23), r4(23);
    CorruptedSample s1 = corrupt_structural(img, ones, 8, r3, 0.7f);
    CorruptedSample s2 = corrupt_structural(img, ones, 8, r4, 0.7f);
    CHECK(s1.image.data == s2.image.data);

    Rng r5(5);
    CHECK_THROWS_AS(corrupt_structural(img, ones, 7, r5, 1.0f), InvalidInputError);
}

TEST_CASE("corrupt_blur locality and DC preservation") {
    Tensor img = testsupport::make_checker(64, 64, 8, 2, 9);
    DefectConfig cfg = toy_defect_config();

    AnomalyMask zeros = threshold_mask(Tensor::full({64, 64}, -0.5f), 0.0f);
    Rng r1(31);
    CorruptedSample none = corrupt_blur(img, zeros, r1, cfg);
    CHECK(none.image.data == img.data);

    Tensor constant = Tensor::full({3, 64, 64}, 0.42f);
    PerlinParams pp{8, 8, 1, 77};
    AnomalyMask some = threshold_mask(perlin_noise(pp, 64, 64), 0.3f);
    Rng r2(32);
    CorruptedSample flat = corrupt_blur(constant, some, r2, cfg);
    for (std::size_t i = 0; i < flat.image.size(); ++i)
        CHECK(flat.image.data[i] == doctest::Approx(0.42f).epsilon(1e-6));

    // inside the mask the output equals the blur of the full image
    Rng r3(33);
    CorruptedSample blurred = corrupt_blur(img, some, r3, cfg);
    Tensor reference = gaussian_blur(img, blurred.spec.blur_kernel, blurred.spec.blur_sigma);
    const std::size_t hw = 64 * 64;
    for (std::size_t i = 0; i < hw; ++i) {
        if (some.data.data[i] == 0.0f) continue;
        for (int c = 0; c < 3; ++c)
            CHECK(std::abs(blurred.image.data[c * hw + i] -
                           std::clamp(reference.data[c * hw + i], 0.0f, 1.0f)) < 1e-6);
    }
}

TEST_CASE("sample_corruption kind balance, coverage, determinism") {
    testsupport::TempDir tmp;
    for (int i = 0; i < 3; ++i)
        save_png(tmp.sub("tex" + std::to_string(i) + ".png"),
                 testsupport::make_checker(64, 64, 4 + 2 * i, i, 100 + i));

    DefectConfig cfg = toy_defect_config();
    cfg.texture_dir = tmp.path();
    DefectGenerator gen(cfg);
    CHECK(gen.enabled_kinds().size() == 3);

    Tensor img = testsupport::make_stripes(64, 64, 16.0, 0.3, 11);

    std::map<DefectKind, int> counts;
    Rng rng(2024);
    for (int i = 0; i < 3000; ++i) {
        CorruptedSample s = gen.sample_corruption(img, rng);
        counts[s.spec.kind]++;
        REQUIRE(s.mask.coverage >= cfg.coverage_range[0]);
        REQUIRE(s.mask.coverage <= cfg.coverage_range[1]);
        REQUIRE(s.is_defective);
    }
    for (const auto& [kind, n] : counts) {
        const double freq = n / 3000.0;
        CHECK(freq >= 0.30);
        CHECK(freq <= 0.37);
    }

    // determinism: same stream seed, same sample
    Rng ra(555), rb(555);
    CorruptedSample sa = gen.sample_corruption(img, ra);
    CorruptedSample sb = gen.sample_corruption(img, rb);
    CHECK(sa.image.data == sb.image.data);
    CHECK(sa.mask.data.data == sb.mask.data.data);
    CHECK(sa.spec.kind == sb.spec.kind);

    // locality and valid range for every kind
    Rng rl(777);
    for (int i = 0; i < 30; ++i) {
        CorruptedSample s = gen.sample_corruption(img, rl);
        CHECK(outside_mask_identical(img, s));
        for (float v : s.image.data) {
            REQUIRE(v >= 0.0f);
            REQUIRE(v <= 1.0f);
        }
    }
}

TEST_CASE("sample_corruption without texture corpus uses two kinds evenly") {
    DefectConfig cfg = toy_defect_config();
    DefectGenerator gen(cfg);
    CHECK(gen.enabled_kinds().size() == 2);

    Tensor img = testsupport::make_checker(64, 64, 8, 0, 13);
    std::map<DefectKind, int> counts;
    Rng rng(99);
    for (int i = 0; i < 2000; ++i) counts[gen.sample_corruption(img, rng).spec.kind]++;
    CHECK(counts.count(DefectKind::Textural) == 0);
    for (const auto& [kind, n] : counts) {
        const double freq = n / 2000.0;
        CHECK(freq >= 0.46);
        CHECK(freq <= 0.54);
    }
}

TEST_CASE("sample_corruption reports unreachable coverage") {
    DefectConfig cfg = toy_defect_config();
    cfg.coverage_range = {0.999f, 0.9999f};
    DefectGenerator gen(cfg);
    Tensor img = testsupport::make_stripes(64, 64, 16.0, 0.0, 17);
    Rng rng(1);
    CHECK_THROWS_AS(gen.sample_corruption(img, rng), GenerationError);
}
