#include "cse/backbone.hpp"

#include <cmath>
#include <filesystem>

#include "cse/errors.hpp"
#include "cse/image.hpp"
#include "cse/nn.hpp"
#include "cse/rng.hpp"

namespace cse {

namespace {

// 3x3 convolution, stride 2, zero padding 1. Only the stub backbone needs a
// spatial kernel; the trainable model is pointwise-only.
Tensor conv3x3_s2(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    const int ci = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int co = weight.dim(0);
    const int oh = (h + 1) / 2, ow = (w + 1) / 2;

    Tensor y({co, oh, ow});
    for (int o = 0; o < co; ++o) {
        float* yp = y.ptr() + static_cast<std::size_t>(o) * oh * ow;
        const float b = bias[static_cast<std::size_t>(o)];
        for (int i = 0; i < oh * ow; ++i) yp[i] = b;
        for (int c = 0; c < ci; ++c) {
            const float* xp = x.ptr() + static_cast<std::size_t>(c) * h * w;
            const float* wk =
                weight.ptr() + (static_cast<std::size_t>(o) * ci + c) * 9;
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    const float wv = wk[ky * 3 + kx];
                    if (wv == 0.0f) continue;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = 2 * oy - 1 + ky;
                        if (iy < 0 || iy >= h) continue;
                        const float* xrow = xp + static_cast<std::size_t>(iy) * w;
                        float* yrow = yp + static_cast<std::size_t>(oy) * ow;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = 2 * ox - 1 + kx;
                            if (ix < 0 || ix >= w) continue;
                            yrow[ox] += wv * xrow[ix];
                        }
                    }
                }
        }
    }
    return y;
}

int stage_index_from_name(const std::string& name) {
    if (name.rfind("stage", 0) != 0) return -1;
    try {
        const int idx = std::stoi(name.substr(5));
        return idx >= 1 ? idx : -1;
    } catch (...) {
        return -1;
    }
}

} // namespace

BackboneAdapter BackboneAdapter::load(const AdapterDescriptor& descriptor) {
    if (descriptor.tap_points.empty() || descriptor.declared_shapes.empty())
        throw ConfigError("backbone descriptor: tap points and declared shapes are required");
    if (descriptor.tap_points.size() != descriptor.declared_shapes.size())
        throw ConfigError("backbone descriptor: tap point / declared shape count mismatch");
    if (descriptor.input_h < 2 || descriptor.input_w < 2)
        throw ConfigError("backbone descriptor: input size too small");

    BackboneAdapter adapter;
    adapter.desc_ = descriptor;

    if (descriptor.source == "stub") {
        adapter.build_stub();
    } else {
        if (!std::filesystem::exists(descriptor.source))
            throw ConfigError("backbone model file not found: " + descriptor.source);
        throw ConfigError(
            "backbone source '" + descriptor.source +
            "': executing ONNX exports requires an ONNX runtime, which this build does not "
            "include; use source=\"stub\" or rebuild with a runtime");
    }

    // probe: the declared shapes must actually come out
    Tensor probe({1, 3, descriptor.input_h, descriptor.input_w});
    const FeatureStack stack = adapter.extract(probe)[0];
    for (std::size_t i = 0; i < stack.layers.size(); ++i) {
        const auto& want = descriptor.declared_shapes[i];
        const Tensor& got = stack.layers[i];
        if (got.dim(0) != want[0] || got.dim(1) != want[1] || got.dim(2) != want[2])
            throw ConfigError("backbone tap " + descriptor.tap_points[i] + " produced " +
                              got.shape_str() + ", declared " + std::to_string(want[0]) + "x" +
                              std::to_string(want[1]) + "x" + std::to_string(want[2]));
    }
    return adapter;
}

void BackboneAdapter::build_stub() {
    // Stage s halves the spatial dims; taps bind by name ("stageK").
    int max_stage = 0;
    std::vector<int> tap_stage(desc_.tap_points.size());
    for (std::size_t i = 0; i < desc_.tap_points.size(); ++i) {
        const int s = stage_index_from_name(desc_.tap_points[i]);
        if (s < 0)
            throw ConfigError("stub backbone has no tap point named '" + desc_.tap_points[i] +
                              "' (expected stage1..stageN)");
        tap_stage[i] = s;
        max_stage = std::max(max_stage, s);
    }

    // declared spatial sizes must match the halving schedule
    for (std::size_t i = 0; i < desc_.declared_shapes.size(); ++i) {
        const int s = tap_stage[i];
        const int eh = desc_.input_h >> s, ew = desc_.input_w >> s;
        if (eh < 1 || ew < 1)
            throw ConfigError("stub backbone tap " + desc_.tap_points[i] +
                              " is deeper than the input allows");
        if (desc_.declared_shapes[i][1] != eh || desc_.declared_shapes[i][2] != ew)
            throw ConfigError("stub backbone tap " + desc_.tap_points[i] + " produces " +
                              std::to_string(eh) + "x" + std::to_string(ew) + ", declared " +
                              std::to_string(desc_.declared_shapes[i][1]) + "x" +
                              std::to_string(desc_.declared_shapes[i][2]));
    }

    Rng rng(desc_.stub_seed);
    stages_.clear();
    int in_ch = 3;
    const int base_width = 40;
    for (int s = 1; s <= max_stage; ++s) {
        int out_ch = std::min(base_width << (s - 1), 256);
        int tap = -1;
        for (std::size_t i = 0; i < tap_stage.size(); ++i)
            if (tap_stage[i] == s) {
                out_ch = desc_.declared_shapes[i][0];
                tap = static_cast<int>(i);
            }

        Stage stage;
        stage.tap = tap;
        stage.weight = Tensor({out_ch, in_ch, 3, 3});
        stage.bias = Tensor({out_ch});
        const double he_std = std::sqrt(2.0 / (9.0 * in_ch));
        for (auto& v : stage.weight.data) v = static_cast<float>(rng.normal(0.0, he_std));
        for (auto& v : stage.bias.data) v = static_cast<float>(rng.normal(0.0, 0.2));
        stages_.push_back(std::move(stage));
        in_ch = out_ch;
    }
}

FeatureStack BackboneAdapter::run_stub(const Tensor& image) const {
    FeatureStack stack;
    stack.layers.resize(desc_.declared_shapes.size());
    Tensor x = image;
    for (const Stage& stage : stages_) {
        Tensor y = conv3x3_s2(x, stage.weight, stage.bias);
        for (auto& v : y.data) v = v > 0.0f ? v : 0.0f; // ReLU
        if (stage.tap >= 0) stack.layers[static_cast<std::size_t>(stage.tap)] = y;
        x = std::move(y);
    }
    return stack;
}

std::vector<FeatureStack> BackboneAdapter::extract(const Tensor& batch) const {
    if (batch.rank() != 4 || batch.dim(1) != 3)
        throw InvalidInputError("extract: batch must be Nx3xHxW, got " + batch.shape_str());
    if (batch.dim(2) != desc_.input_h || batch.dim(3) != desc_.input_w)
        throw InvalidInputError("extract: input is " + std::to_string(batch.dim(2)) + "x" +
                                std::to_string(batch.dim(3)) + ", adapter expects " +
                                std::to_string(desc_.input_h) + "x" +
                                std::to_string(desc_.input_w));

    const int n = batch.dim(0);
    const std::size_t chw =
        3 * static_cast<std::size_t>(desc_.input_h) * static_cast<std::size_t>(desc_.input_w);

    std::vector<FeatureStack> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Tensor img({3, desc_.input_h, desc_.input_w});
        std::copy_n(batch.ptr() + static_cast<std::size_t>(i) * chw, chw, img.ptr());
        // per-channel normalization
        const std::size_t hw =
            static_cast<std::size_t>(desc_.input_h) * static_cast<std::size_t>(desc_.input_w);
        for (int c = 0; c < 3; ++c) {
            const float mean = desc_.norm_mean[static_cast<std::size_t>(c)];
            const float inv = 1.0f / desc_.norm_std[static_cast<std::size_t>(c)];
            float* p = img.ptr() + static_cast<std::size_t>(c) * hw;
            for (std::size_t k = 0; k < hw; ++k) p[k] = (p[k] - mean) * inv;
        }
        out[static_cast<std::size_t>(i)] = run_stub(img);
    }
    return out;
}

FeatureStack BackboneAdapter::extract_one(const Tensor& image) const {
    if (image.rank() != 3)
        throw InvalidInputError("extract_one: image must be 3xHxW, got " + image.shape_str());
    Tensor batch({1, image.dim(0), image.dim(1), image.dim(2)});
    std::copy(image.data.begin(), image.data.end(), batch.data.begin());
    return extract(batch)[0];
}

int BackboneAdapter::fused_channels() const {
    int c = 0;
    for (const auto& s : desc_.declared_shapes) c += s[0];
    return c;
}

Tensor fuse_features(const FeatureStack& stack) {
    if (stack.layers.empty()) throw InvalidInputError("fuse_features: empty feature stack");
    int max_h = 0, max_w = 0, c_total = 0;
    for (const Tensor& layer : stack.layers) {
        if (layer.rank() != 3) throw InvalidInputError("fuse_features: layers must be CxHxW");
        max_h = std::max(max_h, layer.dim(1));
        max_w = std::max(max_w, layer.dim(2));
        c_total += layer.dim(0);
    }

    Tensor fused({c_total, max_h, max_w});
    std::size_t offset = 0;
    for (const Tensor& layer : stack.layers) {
        if (layer.dim(1) == max_h && layer.dim(2) == max_w) {
            std::copy(layer.data.begin(), layer.data.end(), fused.data.begin() + offset);
            offset += layer.size();
        } else {
            Tensor up = resize_bilinear(layer, max_h, max_w);
            std::copy(up.data.begin(), up.data.end(), fused.data.begin() + offset);
            offset += up.size();
        }
    }
    return fused;
}

Tensor preprocess_image(const Tensor& image, const AdapterDescriptor& descriptor) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw InvalidInputError("preprocess_image: expected 3xHxW, got " + image.shape_str());
    if (descriptor.preprocess == "resize") {
        if (image.dim(1) == descriptor.input_h && image.dim(2) == descriptor.input_w) return image;
        return resize_bilinear(image, descriptor.input_h, descriptor.input_w);
    }
    if (descriptor.preprocess == "resize_crop") {
        Tensor resized = (image.dim(1) == descriptor.resize_to && image.dim(2) == descriptor.resize_to)
                             ? image
                             : resize_bilinear(image, descriptor.resize_to, descriptor.resize_to);
        return center_crop(resized, descriptor.input_h, descriptor.input_w);
    }
    throw ConfigError("unknown preprocess profile: " + descriptor.preprocess);
}

} // namespace cse
