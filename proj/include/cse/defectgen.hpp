#pragma once

// Synthesized training defects: a thresholded Perlin mask N blends an
// anomaly source S into the original image as N*S + (1-N)*I. Three source
// kinds: foreign texture, shuffled patches of the image itself, and a
// Gaussian-blurred copy. Everything is a pure function of (image, rng
// stream, config); pixels outside the mask stay bit-identical.

#include <array>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "cse/perlin.hpp"
#include "cse/rng.hpp"
#include "cse/tensor.hpp"

namespace cse {

enum class DefectKind { Textural, Structural, Blur };

const char* defect_kind_name(DefectKind kind);

struct AnomalyMask {
    Tensor data;          // HxW, values in {0, 1}
    float coverage = 0.0f; // fraction of ones
};

struct DefectSpec {
    DefectKind kind = DefectKind::Blur;
    float beta = 1.0f;      // opacity of the anomaly source inside the mask
    int texture_index = -1; // Textural
    int grid = 0;           // Structural
    int blur_kernel = 0;    // Blur
    float blur_sigma = 0.0f;
};

struct CorruptedSample {
    Tensor image; // 3xHxW
    AnomalyMask mask;
    DefectSpec spec;
    bool is_defective = false;
};

struct DefectConfig {
    std::array<float, 2> threshold_range{0.3f, 0.7f};
    std::array<float, 2> coverage_range{0.02f, 0.35f};
    std::array<float, 2> beta_range{0.2f, 1.0f};
    std::vector<int> perlin_res{2, 4, 8, 16};
    int octaves = 1;
    int structural_grid = 8;
    std::array<int, 2> blur_kernel_range{5, 15}; // odd draws only
    std::array<float, 2> blur_sigma_range{1.0f, 4.0f};
    int max_mask_tries = 20;
    std::string texture_dir; // empty: textural defects disabled
};

// mask = indicator(noise > threshold)
AnomalyMask threshold_mask(const Tensor& noise, float threshold);

CorruptedSample corrupt_textural(const Tensor& image, const Tensor& source_texture,
                                 const AnomalyMask& mask, float beta);

CorruptedSample corrupt_structural(const Tensor& image, const AnomalyMask& mask, int grid,
                                   Rng& rng, float beta);

CorruptedSample corrupt_blur(const Tensor& image, const AnomalyMask& mask, Rng& rng,
                             const DefectConfig& config);

// Lazily loads and caches corpus textures resized to the working resolution.
class TextureCorpus {
public:
    explicit TextureCorpus(const std::string& dir);
    std::size_t size() const { return paths_.size(); }
    const std::string& path(std::size_t i) const { return paths_[i]; }
    const Tensor& get(std::size_t index, int h, int w) const;

private:
    std::vector<std::string> paths_;
    mutable std::vector<Tensor> cache_; // slots are filled once, never evicted
    mutable std::mutex mutex_;
};

class DefectGenerator {
public:
    explicit DefectGenerator(DefectConfig config);

    // Draws kind, Perlin mask (resampled until coverage lands in range) and
    // kind parameters from rng, then applies the corruption. Throws
    // GenerationError when max_mask_tries masks in a row miss the coverage
    // window.
    CorruptedSample sample_corruption(const Tensor& image, Rng& rng) const;

    const DefectConfig& config() const { return config_; }
    std::vector<DefectKind> enabled_kinds() const;

private:
    AnomalyMask draw_mask(int h, int w, Rng& rng) const;

    DefectConfig config_;
    std::unique_ptr<TextureCorpus> corpus_;
};

} // namespace cse
