#pragma once

// Reduced double-precision pipeline for finite-difference checks of the
// total loss gradient: embedder 16 -> 8 -> 4 over a 4x4 grid, frozen random
// decoder reconstructing two small layers, one anchor/partner pair.
//
// Finite differences are only meaningful away from the ReLU kinks, so
// fixtures whose pre-activations come too close to zero are resampled; the
// epsilon used keeps every perturbation well inside the margin.

#include <cstdint>
#include <vector>

#include "cse/gradcheck.hpp"
#include "cse/losses.hpp"
#include "cse/model.hpp"
#include "cse/rng.hpp"
#include "cse/tensor.hpp"

namespace testsupport {

struct ReducedFixture {
    cse::EmbedderParamsT<double> embedder;
    cse::DecoderParamsT<double> decoder;
    cse::DTensor inputs; // 2 x 16 x 4 x 4 fused features: anchor then partner
    std::vector<cse::DTensor> anchor_features;
    bool partner_defective = false;
    double alpha = 10.0;

    static constexpr double kReluMargin = 2e-3;
    static constexpr double kEpsilon = 1e-5;

    static ReducedFixture make(std::uint64_t seed, bool defective) {
        for (std::uint64_t attempt = 0;; ++attempt) {
            ReducedFixture f = build(cse::Rng::mix(seed, attempt), defective);
            if (f.relu_margin() > kReluMargin) return f;
        }
    }

    double loss() const {
        cse::EmbedderParamsT<double> work = embedder; // running stats stay untouched
        cse::TensorT<double> emb = cse::embed(work, inputs, cse::Mode::Train);
        const double contr = cse::contrastive_loss(slice(emb, 0), slice(emb, 1), partner_defective);

        cse::TensorT<double> anchor = first_of(emb);
        std::vector<cse::DTensor> recon = cse::decode(decoder, anchor);
        std::vector<cse::DTensor> recon_single;
        for (const auto& r : recon) recon_single.push_back(drop_batch(r));
        const double rec = cse::reconstruction_loss(anchor_features, recon_single);
        return cse::total_loss(rec, contr, alpha);
    }

    std::vector<double*> trainable_param_ptrs() {
        std::vector<double*> ptrs;
        auto add = [&](cse::TensorT<double>& t) {
            for (auto& v : t.data) ptrs.push_back(&v);
        };
        for (std::size_t i = 0; i < embedder.bns.size(); ++i) {
            add(embedder.convs[i].weight);
            add(embedder.convs[i].bias);
            add(embedder.bns[i].gamma);
            add(embedder.bns[i].beta);
        }
        add(embedder.convs.back().weight);
        add(embedder.convs.back().bias);
        return ptrs;
    }

    // Analytic gradient in the same order as trainable_param_ptrs().
    std::vector<double> analytic_gradient() const {
        cse::EmbedderParamsT<double> work = embedder;
        cse::EmbedCacheT<double> cache;
        cse::TensorT<double> emb = cse::embed(work, inputs, cse::Mode::Train, &cache);

        cse::TensorT<double> grad_emb(emb.shape);
        {
            cse::TensorT<double> e_k = slice(emb, 0), e_m = slice(emb, 1);
            cse::TensorT<double> gk(e_k.shape), gm(e_m.shape);
            cse::contrastive_backward(e_k, e_m, partner_defective, alpha, gk, gm);
            write_slice(grad_emb, 0, gk);
            write_slice(grad_emb, 1, gm);
        }

        cse::TensorT<double> anchor = first_of(emb);
        cse::DecodeCacheT<double> dec_cache;
        std::vector<cse::DTensor> recon = cse::decode(decoder, anchor, &dec_cache);
        std::vector<cse::DTensor> recon_single;
        for (const auto& r : recon) recon_single.push_back(drop_batch(r));
        std::vector<cse::DTensor> grad_layers =
            cse::reconstruction_backward(anchor_features, recon_single, false, 1.0);
        std::vector<cse::DTensor> grad_batched;
        for (auto& g : grad_layers) grad_batched.push_back(add_batch(g));
        cse::DecoderGradsT<double> dg = cse::decode_backward(decoder, dec_cache, grad_batched);
        add_slice(grad_emb, 0, drop_batch(dg.embedding));

        cse::EmbedderGradsT<double> eg = cse::embed_backward(embedder, cache, grad_emb);

        std::vector<double> out;
        auto add = [&](const cse::TensorT<double>& t) {
            out.insert(out.end(), t.data.begin(), t.data.end());
        };
        for (std::size_t i = 0; i < eg.bns.size(); ++i) {
            add(eg.convs[i].weight);
            add(eg.convs[i].bias);
            add(eg.bns[i].gamma);
            add(eg.bns[i].beta);
        }
        add(eg.convs.back().weight);
        add(eg.convs.back().bias);
        return out;
    }

    double run_grad_check() {
        const std::vector<double> analytic = analytic_gradient();
        std::vector<double*> ptrs = trainable_param_ptrs();
        return cse::grad_check([this]() { return loss(); }, ptrs, analytic, kEpsilon);
    }

    // Smallest |pre-ReLU| activation in the embedder and decoder.
    double relu_margin() const {
        cse::EmbedderParamsT<double> work = embedder;
        cse::EmbedCacheT<double> cache;
        cse::TensorT<double> emb = cse::embed(work, inputs, cse::Mode::Train, &cache);
        double margin = 1e30;
        for (const auto& t : cache.relu_in)
            for (double v : t.data) margin = std::min(margin, std::abs(v));
        cse::TensorT<double> anchor = first_of(emb);
        cse::DecodeCacheT<double> dec_cache;
        cse::decode(decoder, anchor, &dec_cache);
        for (const auto& t : dec_cache.relu_in)
            for (double v : t.data) margin = std::min(margin, std::abs(v));
        return margin;
    }

private:
    static ReducedFixture build(std::uint64_t seed, bool defective) {
        ReducedFixture f;
        f.partner_defective = defective;

        cse::EmbedderConfig ec;
        ec.in_channels = 16;
        ec.hidden = {8};
        ec.out_channels = 4;
        f.embedder = cse::init_embedder<double>(ec, cse::Rng::mix(seed, 11));

        cse::DecoderConfig dc;
        dc.mode = cse::DecoderMode::RandomFrozen;
        dc.seed = cse::Rng::mix(seed, 12);
        dc.in_channels = 4;
        dc.hidden = 8;
        dc.target_shapes = {{6, 4, 4}, {10, 2, 2}};
        f.decoder = cse::init_decoder<double>(dc);

        cse::Rng rng(cse::Rng::mix(seed, 13));
        f.inputs = cse::DTensor({2, 16, 4, 4});
        for (auto& v : f.inputs.data) v = rng.uniform(-1.0, 1.0);
        for (const auto& shape : dc.target_shapes) {
            cse::DTensor layer({shape[0], shape[1], shape[2]});
            for (auto& v : layer.data) v = rng.uniform(-1.0, 1.0);
            f.anchor_features.push_back(std::move(layer));
        }
        return f;
    }

    static cse::DTensor slice(const cse::DTensor& batch, int i) {
        const int c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
        cse::DTensor out({c, h, w});
        std::copy_n(batch.ptr() + static_cast<std::size_t>(i) * out.size(), out.size(), out.ptr());
        return out;
    }

    static cse::DTensor first_of(const cse::DTensor& batch) {
        const int c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
        cse::DTensor out({1, c, h, w});
        std::copy_n(batch.ptr(), out.size(), out.ptr());
        return out;
    }

    static cse::DTensor drop_batch(const cse::DTensor& t) {
        cse::DTensor out({t.dim(1), t.dim(2), t.dim(3)});
        std::copy_n(t.ptr(), out.size(), out.ptr());
        return out;
    }

    static cse::DTensor add_batch(const cse::DTensor& t) {
        cse::DTensor out({1, t.dim(0), t.dim(1), t.dim(2)});
        std::copy_n(t.ptr(), out.size(), out.ptr());
        return out;
    }

    static void write_slice(cse::DTensor& batch, int i, const cse::DTensor& value) {
        std::copy_n(value.ptr(), value.size(),
                    batch.ptr() + static_cast<std::size_t>(i) * value.size());
    }

    static void add_slice(cse::DTensor& batch, int i, const cse::DTensor& value) {
        double* dst = batch.ptr() + static_cast<std::size_t>(i) * value.size();
        for (std::size_t k = 0; k < value.size(); ++k) dst[k] += value.data[k];
    }
};

} // namespace testsupport
