#pragma once

// The trainable embedder (pointwise conv -> BN -> ReLU stages, final
// pointwise conv, average pooling) and the decoder reconstructing each
// backbone layer from the embedding. The decoder stays frozen unless the
// mode says otherwise.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cse/nn.hpp"
#include "cse/rng.hpp"
#include "cse/tensor.hpp"

namespace cse {

struct EmbedderConfig {
    int in_channels = 520;
    std::vector<int> hidden = {256, 128};
    int out_channels = 64;
    int pool_kernel = 2;
    int pool_stride = 2;
};

template <class T>
struct EmbedderParamsT {
    EmbedderConfig config;
    std::vector<ConvParamsT<T>> convs;    // one per hidden stage, plus the final conv
    std::vector<BatchNormParamsT<T>> bns; // one per hidden stage
};

using EmbedderParams = EmbedderParamsT<float>;

// Trainable scalar count: conv weights+biases plus BN gamma/beta.
inline std::size_t embedder_trainable_count(const EmbedderConfig& config) {
    std::size_t n = 0;
    int in_ch = config.in_channels;
    for (int h : config.hidden) {
        n += static_cast<std::size_t>(h) * in_ch + h; // conv w + b
        n += 2 * static_cast<std::size_t>(h);         // bn gamma + beta
        in_ch = h;
    }
    n += static_cast<std::size_t>(config.out_channels) * in_ch + config.out_channels;
    return n;
}

template <class T>
EmbedderParamsT<T> init_embedder(const EmbedderConfig& config, std::uint64_t seed) {
    if (config.in_channels < 1 || config.out_channels < 1)
        throw InvalidInputError("init_embedder: channel counts must be positive");
    EmbedderParamsT<T> p;
    p.config = config;
    Rng rng(seed);
    int in_ch = config.in_channels;
    for (int h : config.hidden) {
        p.convs.push_back(make_pointwise<T>(h, in_ch, rng));
        p.bns.push_back(make_batchnorm<T>(h));
        in_ch = h;
    }
    // no ReLU after the final conv: cosine similarity needs signed directions
    p.convs.push_back(make_pointwise<T>(config.out_channels, in_ch, rng));
    return p;
}

template <class T>
struct EmbedCacheT {
    std::vector<TensorT<T>> conv_in; // input of conv i
    std::vector<BnCacheT<T>> bn;     // cache of bn i
    std::vector<TensorT<T>> relu_in; // bn output of stage i
    TensorT<T> pool_in;              // final conv output
};

// fused: N x in_channels x H x W  ->  N x out_channels x H/2 x W/2
template <class T>
TensorT<T> embed(EmbedderParamsT<T>& params, const TensorT<T>& fused, Mode mode,
                 EmbedCacheT<T>* cache = nullptr) {
    if (fused.rank() != 4 || fused.dim(1) != params.config.in_channels)
        throw InvalidInputError("embed: expected Nx" + std::to_string(params.config.in_channels) +
                                "xHxW, got " + fused.shape_str());
    if (cache) {
        cache->conv_in.clear();
        cache->bn.clear();
        cache->relu_in.clear();
    }

    TensorT<T> x = fused;
    const std::size_t n_hidden = params.bns.size();
    for (std::size_t i = 0; i < n_hidden; ++i) {
        if (cache) cache->conv_in.push_back(x);
        TensorT<T> y = pointwise_conv(x, params.convs[i]);
        BnCacheT<T> bn_cache;
        TensorT<T> z = batch_norm(y, params.bns[i], mode, cache ? &bn_cache : nullptr);
        if (cache) {
            cache->bn.push_back(std::move(bn_cache));
            cache->relu_in.push_back(z);
        }
        x = relu(z);
    }
    if (cache) cache->conv_in.push_back(x);
    TensorT<T> pre_pool = pointwise_conv(x, params.convs[n_hidden]);
    if (cache) cache->pool_in = pre_pool;
    return avg_pool2d(pre_pool, params.config.pool_kernel, params.config.pool_stride);
}

template <class T>
struct EmbedderGradsT {
    std::vector<ConvGradsT<T>> convs;
    std::vector<BnGradsT<T>> bns;
};

template <class T>
EmbedderGradsT<T> embed_backward(const EmbedderParamsT<T>& params, const EmbedCacheT<T>& cache,
                                 const TensorT<T>& grad_embedding) {
    EmbedderGradsT<T> grads;
    const std::size_t n_hidden = params.bns.size();

    TensorT<T> g = avg_pool2d_backward(grad_embedding, cache.pool_in.shape,
                                       params.config.pool_kernel, params.config.pool_stride);
    grads.convs.resize(n_hidden + 1);
    grads.bns.resize(n_hidden);
    {
        ConvGradsT<T> cg = pointwise_conv_backward(g, cache.conv_in[n_hidden], params.convs[n_hidden]);
        grads.convs[n_hidden] = std::move(cg);
        g = std::move(grads.convs[n_hidden].input);
    }
    for (std::size_t i = n_hidden; i-- > 0;) {
        g = relu_backward(g, cache.relu_in[i]);
        BnGradsT<T> bg = batch_norm_backward(g, cache.bn[i], params.bns[i]);
        grads.bns[i] = std::move(bg);
        ConvGradsT<T> cg =
            pointwise_conv_backward(grads.bns[i].input, cache.conv_in[i], params.convs[i]);
        grads.convs[i] = std::move(cg);
        g = std::move(grads.convs[i].input);
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

enum class DecoderMode { RandomFrozen, TrainedBefore, TrainedTogether };

inline const char* decoder_mode_name(DecoderMode mode) {
    switch (mode) {
        case DecoderMode::RandomFrozen: return "random_frozen";
        case DecoderMode::TrainedBefore: return "trained_before";
        case DecoderMode::TrainedTogether: return "trained_together";
    }
    return "unknown";
}

inline DecoderMode decoder_mode_from_name(const std::string& name) {
    if (name == "random_frozen") return DecoderMode::RandomFrozen;
    if (name == "trained_before") return DecoderMode::TrainedBefore;
    if (name == "trained_together") return DecoderMode::TrainedTogether;
    throw ConfigError("unknown decoder mode: " + name);
}

struct DecoderConfig {
    DecoderMode mode = DecoderMode::RandomFrozen;
    std::uint64_t seed = 0;
    int in_channels = 64;
    int hidden = 128;
    std::vector<std::array<int, 3>> target_shapes; // (c_l, h_l, w_l), stack order
};

template <class T>
struct DecoderParamsT {
    DecoderConfig config;
    std::vector<ConvParamsT<T>> conv1; // in_channels -> hidden, per target layer
    std::vector<ConvParamsT<T>> conv2; // hidden -> c_l, per target layer

    bool trainable() const { return config.mode == DecoderMode::TrainedTogether; }
};

using DecoderParams = DecoderParamsT<float>;

// In RandomFrozen mode parameters are seeded and never updated afterwards.
// TrainedBefore requires the artifact of a prior reconstruction-only fit.
template <class T>
DecoderParamsT<T> init_decoder(const DecoderConfig& config,
                               const DecoderParamsT<T>* pretrained = nullptr) {
    if (config.target_shapes.empty())
        throw InvalidInputError("init_decoder: target shapes are required");
    if (config.mode == DecoderMode::TrainedBefore) {
        if (!pretrained)
            throw ConfigError(
                "decoder mode trained_before requires a prior reconstruction-only fit artifact");
        DecoderParamsT<T> p = *pretrained;
        p.config = config;
        const bool trainable = p.trainable();
        for (auto& c : p.conv1) c.trainable = trainable;
        for (auto& c : p.conv2) c.trainable = trainable;
        return p;
    }

    DecoderParamsT<T> p;
    p.config = config;
    Rng rng(config.seed);
    const bool trainable = p.trainable();
    for (const auto& shape : config.target_shapes) {
        ConvParamsT<T> c1 = make_pointwise<T>(config.hidden, config.in_channels, rng);
        ConvParamsT<T> c2 = make_pointwise<T>(shape[0], config.hidden, rng);
        c1.trainable = trainable;
        c2.trainable = trainable;
        p.conv1.push_back(std::move(c1));
        p.conv2.push_back(std::move(c2));
    }
    return p;
}

template <class T>
struct DecodeCacheT {
    std::vector<TensorT<T>> resized; // conv1 input per head
    std::vector<TensorT<T>> relu_in; // conv1 output per head
    std::vector<TensorT<T>> conv2_in;
    int emb_h = 0, emb_w = 0;
};

// embedding: N x in_channels x h x w -> one tensor per target layer,
// N x c_l x h_l x w_l (nearest resize, conv, ReLU, conv).
template <class T>
std::vector<TensorT<T>> decode(const DecoderParamsT<T>& params, const TensorT<T>& embedding,
                               DecodeCacheT<T>* cache = nullptr) {
    if (embedding.rank() != 4 || embedding.dim(1) != params.config.in_channels)
        throw InvalidInputError("decode: expected Nx" + std::to_string(params.config.in_channels) +
                                "xhxw embedding, got " + embedding.shape_str());
    if (cache) {
        cache->resized.clear();
        cache->relu_in.clear();
        cache->conv2_in.clear();
        cache->emb_h = embedding.dim(2);
        cache->emb_w = embedding.dim(3);
    }

    std::vector<TensorT<T>> out;
    for (std::size_t l = 0; l < params.config.target_shapes.size(); ++l) {
        const auto& shape = params.config.target_shapes[l];
        TensorT<T> x = resize_nearest(embedding, shape[1], shape[2]);
        if (cache) cache->resized.push_back(x);
        TensorT<T> y = pointwise_conv(x, params.conv1[l]);
        if (cache) cache->relu_in.push_back(y);
        TensorT<T> z = relu(y);
        if (cache) cache->conv2_in.push_back(z);
        out.push_back(pointwise_conv(z, params.conv2[l]));
    }
    return out;
}

template <class T>
struct DecoderGradsT {
    TensorT<T> embedding;
    std::vector<ConvGradsT<T>> conv1;
    std::vector<ConvGradsT<T>> conv2;
};

template <class T>
DecoderGradsT<T> decode_backward(const DecoderParamsT<T>& params, const DecodeCacheT<T>& cache,
                                 const std::vector<TensorT<T>>& grad_layers) {
    if (grad_layers.size() != params.config.target_shapes.size())
        throw InvalidInputError("decode_backward: gradient layer count mismatch");

    DecoderGradsT<T> grads;
    grads.conv1.resize(grad_layers.size());
    grads.conv2.resize(grad_layers.size());
    for (std::size_t l = 0; l < grad_layers.size(); ++l) {
        ConvGradsT<T> g2 = pointwise_conv_backward(grad_layers[l], cache.conv2_in[l], params.conv2[l]);
        TensorT<T> g = relu_backward(g2.input, cache.relu_in[l]);
        ConvGradsT<T> g1 = pointwise_conv_backward(g, cache.resized[l], params.conv1[l]);
        TensorT<T> ge = resize_nearest_backward(g1.input, cache.emb_h, cache.emb_w);
        if (grads.embedding.size() == 0) {
            grads.embedding = std::move(ge);
        } else {
            for (std::size_t i = 0; i < ge.size(); ++i) grads.embedding.data[i] += ge.data[i];
        }
        grads.conv2[l] = std::move(g2);
        grads.conv1[l] = std::move(g1);
    }
    return grads;
}

} // namespace cse
