#pragma once

// Frozen feature extraction. A BackboneAdapter exposes the L deepest feature
// maps of a pre-trained classifier behind a shape-validated contract. Two
// sources exist:
//   "stub"       - a fixed, seeded stack of strided 3x3 random convolutions
//                  producing exactly the declared shapes; used for tests and
//                  self-contained runs.
//   <file path>  - an ONNX model-exchange export with named intermediate
//                  outputs. Executing ONNX graphs requires an external
//                  runtime this build does not link, so loading a file
//                  source raises ConfigError; the descriptor contract and
//                  everything downstream are source-agnostic.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cse/tensor.hpp"

namespace cse {

struct AdapterDescriptor {
    std::string source = "stub";
    std::uint64_t stub_seed = 7;
    std::vector<std::string> tap_points = {"stage4", "stage5"};
    std::vector<std::array<int, 3>> declared_shapes = {{136, 14, 14}, {384, 7, 7}};
    int input_h = 224;
    int input_w = 224;
    std::array<float, 3> norm_mean = {0.485f, 0.456f, 0.406f};
    std::array<float, 3> norm_std = {0.229f, 0.224f, 0.225f};
    std::string preprocess = "resize_crop"; // "resize_crop" | "resize"
    int resize_to = 256;                    // pre-crop edge for resize_crop
};

// Per-layer feature maps for one image, deepest last.
struct FeatureStack {
    std::vector<Tensor> layers;
};

class BackboneAdapter {
public:
    // Validates the descriptor (tap points resolvable, declared shapes
    // reproduced on a probe input) and returns an immutable adapter.
    static BackboneAdapter load(const AdapterDescriptor& descriptor);

    // batch: Nx3xHxW in [0,1] at the adapter input size. Normalization is
    // applied internally. Deterministic; parameters never change.
    std::vector<FeatureStack> extract(const Tensor& batch) const;

    FeatureStack extract_one(const Tensor& image) const; // 3xHxW

    const AdapterDescriptor& descriptor() const { return desc_; }

    // Total fused channel count (sum of declared c_l).
    int fused_channels() const;

private:
    struct Stage {
        Tensor weight; // C_out x C_in x 3 x 3, stride 2, zero padding 1
        Tensor bias;   // C_out
        int tap = -1;  // index into declared_shapes, or -1
    };

    BackboneAdapter() = default;
    void build_stub();
    FeatureStack run_stub(const Tensor& image) const; // normalized 3xHxW

    AdapterDescriptor desc_;
    std::vector<Stage> stages_;
};

// Upscale every layer bilinearly to the largest spatial size in the stack,
// then concatenate along channels in stack order.
Tensor fuse_features(const FeatureStack& stack);

// Dataset image -> adapter input: either resize to resize_to then center
// crop, or resize directly, per descriptor.preprocess.
Tensor preprocess_image(const Tensor& image, const AdapterDescriptor& descriptor);

} // namespace cse
