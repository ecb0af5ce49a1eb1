#include "cse/defectgen.hpp"

#include <algorithm>
#include <cmath>

#include "cse/errors.hpp"
#include "cse/image.hpp"
#include "cse/nn.hpp"

namespace cse {

namespace {

void require_mask_matches(const Tensor& image, const AnomalyMask& mask) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw InvalidInputError("corruption: image must be 3xHxW, got " + image.shape_str());
    if (mask.data.rank() != 2 || mask.data.dim(0) != image.dim(1) ||
        mask.data.dim(1) != image.dim(2))
        throw InvalidInputError("corruption: mask " + mask.data.shape_str() +
                                " does not match image " + image.shape_str());
}

// out = (1-N)*I + N*(beta*S + (1-beta)*I), touching only pixels with N=1
Tensor blend_under_mask(const Tensor& image, const Tensor& source, const AnomalyMask& mask,
                        float beta) {
    const int h = image.dim(1), w = image.dim(2);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    Tensor out = image;
    for (std::size_t i = 0; i < hw; ++i) {
        if (mask.data.data[i] == 0.0f) continue;
        for (int c = 0; c < 3; ++c) {
            const std::size_t k = static_cast<std::size_t>(c) * hw + i;
            const float v = beta * source.data[k] + (1.0f - beta) * image.data[k];
            out.data[k] = std::clamp(v, 0.0f, 1.0f);
        }
    }
    return out;
}

} // namespace

const char* defect_kind_name(DefectKind kind) {
    switch (kind) {
        case DefectKind::Textural: return "textural";
        case DefectKind::Structural: return "structural";
        case DefectKind::Blur: return "blur";
    }
    return "unknown";
}

AnomalyMask threshold_mask(const Tensor& noise, float threshold) {
    if (noise.rank() != 2) throw InvalidInputError("threshold_mask: noise must be HxW");
    AnomalyMask mask;
    mask.data = Tensor(noise.shape);
    std::size_t ones = 0;
    for (std::size_t i = 0; i < noise.size(); ++i) {
        const bool on = noise.data[i] > threshold;
        mask.data.data[i] = on ? 1.0f : 0.0f;
        ones += on;
    }
    mask.coverage = static_cast<float>(ones) / static_cast<float>(noise.size());
    return mask;
}

CorruptedSample corrupt_textural(const Tensor& image, const Tensor& source_texture,
                                 const AnomalyMask& mask, float beta) {
    require_mask_matches(image, mask);
    if (!source_texture.same_shape(image))
        throw InvalidInputError("corrupt_textural: source texture " + source_texture.shape_str() +
                                " must match image " + image.shape_str());
    CorruptedSample out;
    out.image = blend_under_mask(image, source_texture, mask, beta);
    out.mask = mask;
    out.spec.kind = DefectKind::Textural;
    out.spec.beta = beta;
    out.is_defective = true;
    return out;
}

CorruptedSample corrupt_structural(const Tensor& image, const AnomalyMask& mask, int grid,
                                   Rng& rng, float beta) {
    require_mask_matches(image, mask);
    const int h = image.dim(1), w = image.dim(2);
    if (grid < 2 || h % grid != 0 || w % grid != 0)
        throw InvalidInputError("corrupt_structural: grid " + std::to_string(grid) +
                                " does not divide " + std::to_string(h) + "x" + std::to_string(w));
    const int ph = h / grid, pw = w / grid;
    const int n_patches = grid * grid;

    // Fisher-Yates; redraw in the (vanishing) case the permutation is identity
    std::vector<int> perm(static_cast<std::size_t>(n_patches));
    bool identity = true;
    do {
        for (int i = 0; i < n_patches; ++i) perm[static_cast<std::size_t>(i)] = i;
        for (int i = n_patches - 1; i > 0; --i)
            std::swap(perm[static_cast<std::size_t>(i)],
                      perm[static_cast<std::size_t>(rng.uniform_int(0, i))]);
        identity = true;
        for (int i = 0; i < n_patches; ++i)
            if (perm[static_cast<std::size_t>(i)] != i) {
                identity = false;
                break;
            }
    } while (identity);

    // source = image with patches rearranged
    Tensor source(image.shape);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int dst = 0; dst < n_patches; ++dst) {
        const int src = perm[static_cast<std::size_t>(dst)];
        const int dy = (dst / grid) * ph, dx = (dst % grid) * pw;
        const int sy = (src / grid) * ph, sx = (src % grid) * pw;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < ph; ++y)
                std::copy_n(image.ptr() + static_cast<std::size_t>(c) * hw +
                                static_cast<std::size_t>(sy + y) * w + sx,
                            pw,
                            source.ptr() + static_cast<std::size_t>(c) * hw +
                                static_cast<std::size_t>(dy + y) * w + dx);
    }

    CorruptedSample out;
    out.image = blend_under_mask(image, source, mask, beta);
    out.mask = mask;
    out.spec.kind = DefectKind::Structural;
    out.spec.beta = beta;
    out.spec.grid = grid;
    out.is_defective = true;
    return out;
}

CorruptedSample corrupt_blur(const Tensor& image, const AnomalyMask& mask, Rng& rng,
                             const DefectConfig& config) {
    require_mask_matches(image, mask);
    // odd kernel in [lo, hi], sigma uniform
    const int lo = config.blur_kernel_range[0] | 1;
    const int hi = config.blur_kernel_range[1];
    const int n_odd = (hi - lo) / 2 + 1;
    const int kernel = lo + 2 * rng.uniform_int(0, n_odd - 1);
    const float sigma =
        static_cast<float>(rng.uniform(config.blur_sigma_range[0], config.blur_sigma_range[1]));

    Tensor blurred = gaussian_blur(image, kernel, sigma);
    CorruptedSample out;
    out.image = blend_under_mask(image, blurred, mask, 1.0f);
    out.mask = mask;
    out.spec.kind = DefectKind::Blur;
    out.spec.beta = 1.0f;
    out.spec.blur_kernel = kernel;
    out.spec.blur_sigma = sigma;
    out.is_defective = true;
    return out;
}

TextureCorpus::TextureCorpus(const std::string& dir) {
    paths_ = list_images_recursive(dir);
    if (paths_.empty()) throw ConfigError("texture corpus is empty: " + dir);
    cache_.resize(paths_.size());
}

const Tensor& TextureCorpus::get(std::size_t index, int h, int w) const {
    if (index >= paths_.size())
        throw ConfigError("texture index out of range: " + std::to_string(index));
    std::lock_guard<std::mutex> lock(mutex_);
    Tensor& slot = cache_[index];
    if (slot.size() == 0 || slot.dim(1) != h || slot.dim(2) != w) {
        try {
            slot = resize_cover_crop(load_image(paths_[index]), h, w);
        } catch (const Error& e) {
            throw ConfigError("cannot load texture source " + paths_[index] + ": " + e.what());
        }
    }
    return slot;
}

DefectGenerator::DefectGenerator(DefectConfig config) : config_(std::move(config)) {
    if (!config_.texture_dir.empty())
        corpus_ = std::make_unique<TextureCorpus>(config_.texture_dir);
    if (config_.perlin_res.empty())
        throw ConfigError("defect config: perlin_res must not be empty");
    if (!(config_.coverage_range[0] > 0.0f) ||
        config_.coverage_range[1] <= config_.coverage_range[0])
        throw ConfigError("defect config: invalid coverage range");
}

std::vector<DefectKind> DefectGenerator::enabled_kinds() const {
    std::vector<DefectKind> kinds;
    if (corpus_) kinds.push_back(DefectKind::Textural);
    kinds.push_back(DefectKind::Structural);
    kinds.push_back(DefectKind::Blur);
    return kinds;
}

AnomalyMask DefectGenerator::draw_mask(int h, int w, Rng& rng) const {
    for (int attempt = 0; attempt < config_.max_mask_tries; ++attempt) {
        PerlinParams pp;
        pp.grid_res_x = config_.perlin_res[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(config_.perlin_res.size()) - 1))];
        pp.grid_res_y = config_.perlin_res[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(config_.perlin_res.size()) - 1))];
        pp.octaves = config_.octaves;
        pp.seed = rng.next_u64();
        const float threshold =
            static_cast<float>(rng.uniform(config_.threshold_range[0], config_.threshold_range[1]));
        AnomalyMask mask = threshold_mask(perlin_noise(pp, h, w), threshold);
        if (mask.coverage >= config_.coverage_range[0] &&
            mask.coverage <= config_.coverage_range[1])
            return mask;
    }
    throw GenerationError("defect mask coverage missed [" +
                          std::to_string(config_.coverage_range[0]) + ", " +
                          std::to_string(config_.coverage_range[1]) + "] for " +
                          std::to_string(config_.max_mask_tries) +
                          " consecutive draws; check coverage/threshold configuration");
}

CorruptedSample DefectGenerator::sample_corruption(const Tensor& image, Rng& rng) const {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw InvalidInputError("sample_corruption: image must be 3xHxW");
    const int h = image.dim(1), w = image.dim(2);

    const std::vector<DefectKind> kinds = enabled_kinds();
    const DefectKind kind =
        kinds[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(kinds.size()) - 1))];
    AnomalyMask mask = draw_mask(h, w, rng);

    switch (kind) {
        case DefectKind::Textural: {
            const int index = rng.uniform_int(0, static_cast<int>(corpus_->size()) - 1);
            const float beta =
                static_cast<float>(rng.uniform(config_.beta_range[0], config_.beta_range[1]));
            CorruptedSample out =
                corrupt_textural(image, corpus_->get(static_cast<std::size_t>(index), h, w), mask, beta);
            out.spec.texture_index = index;
            return out;
        }
        case DefectKind::Structural: {
            const float beta =
                static_cast<float>(rng.uniform(config_.beta_range[0], config_.beta_range[1]));
            return corrupt_structural(image, mask, config_.structural_grid, rng, beta);
        }
        case DefectKind::Blur:
            return corrupt_blur(image, mask, rng, config_);
    }
    throw GenerationError("unreachable defect kind");
}

} // namespace cse
