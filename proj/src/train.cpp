#include "cse/train.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>

#include "cse/config.hpp"
#include "cse/container.hpp"
#include "cse/errors.hpp"
#include "cse/image.hpp"
#include "cse/threading.hpp"

namespace cse {

// ---------------------------------------------------------------------------
// split / schedule
// ---------------------------------------------------------------------------

std::vector<std::size_t> split_indices(std::size_t n, double split, std::uint64_t seed,
                                       std::vector<std::size_t>* val_out) {
    if (n < 2) throw ConfigError("dataset split requires at least 2 items");
    if (!(split > 0.0 && split < 1.0)) throw ConfigError("split fraction must be in (0, 1)");

    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    Rng rng(seed);
    for (std::size_t i = n - 1; i > 0; --i)
        std::swap(perm[i], perm[static_cast<std::size_t>(
                      rng.uniform_int(0, static_cast<int>(i)))]);

    std::size_t n_train = static_cast<std::size_t>(std::lround(split * static_cast<double>(n)));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

    std::vector<std::size_t> train(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    if (val_out) val_out->assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
    return train;
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_dataset(
    const std::vector<std::string>& paths, double split, std::uint64_t seed) {
    std::vector<std::size_t> val;
    std::vector<std::size_t> train = split_indices(paths.size(), split, seed, &val);
    std::pair<std::vector<std::string>, std::vector<std::string>> out;
    for (std::size_t i : train) out.first.push_back(paths[i]);
    for (std::size_t i : val) out.second.push_back(paths[i]);
    return out;
}

double one_cycle_lr(long step, long total_steps, double max_lr, const OneCycleConfig& config) {
    if (total_steps <= 1) return max_lr;
    step = std::clamp(step, 0L, total_steps - 1);
    const double initial = max_lr / config.div_factor;
    const double final_lr = max_lr / config.final_div;
    const long warm = std::max(1L, std::lround(config.pct_start * static_cast<double>(total_steps)));

    if (step < warm) {
        const double t = static_cast<double>(step) / static_cast<double>(warm);
        return initial + (max_lr - initial) * 0.5 * (1.0 - std::cos(M_PI * t));
    }
    const double t = static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
    return final_lr + (max_lr - final_lr) * 0.5 * (1.0 + std::cos(M_PI * t));
}

// ---------------------------------------------------------------------------
// ADAM
// ---------------------------------------------------------------------------

AdamOptimizer::AdamOptimizer(std::vector<Tensor*> params, AdamConfig config) : config_(config) {
    slots_.reserve(params.size());
    for (Tensor* p : params) {
        Slot s;
        s.param = p;
        s.m.assign(p->size(), 0.0);
        s.v.assign(p->size(), 0.0);
        slots_.push_back(std::move(s));
    }
}

void AdamOptimizer::step(const std::vector<const Tensor*>& grads, double lr) {
    if (grads.size() != slots_.size())
        throw InvalidInputError("AdamOptimizer::step: gradient list does not match parameters");
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t s = 0; s < slots_.size(); ++s) {
        Slot& slot = slots_[s];
        const Tensor& g = *grads[s];
        if (g.size() != slot.param->size())
            throw InvalidInputError("AdamOptimizer::step: gradient shape mismatch");
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double gi = static_cast<double>(g.data[i]);
            slot.m[i] = config_.beta1 * slot.m[i] + (1.0 - config_.beta1) * gi;
            slot.v[i] = config_.beta2 * slot.v[i] + (1.0 - config_.beta2) * gi * gi;
            const double mhat = slot.m[i] / bc1;
            const double vhat = slot.v[i] / bc2;
            slot.param->data[i] = static_cast<float>(
                static_cast<double>(slot.param->data[i]) -
                lr * mhat / (std::sqrt(vhat) + config_.eps));
        }
    }
}

// ---------------------------------------------------------------------------
// pair batches
// ---------------------------------------------------------------------------

PairBatch sample_pair_batch(const std::vector<std::size_t>& pool,
                            const std::vector<Tensor>& images, Rng& rng,
                            const TrainConfig& config, const DefectGenerator& generator) {
    if (pool.empty()) throw ConfigError("sample_pair_batch: empty image pool");
    PairBatch batch;
    const int last = static_cast<int>(pool.size()) - 1;
    for (int i = 0; i < config.batch_size; ++i) {
        const int anchor = static_cast<int>(pool[static_cast<std::size_t>(rng.uniform_int(0, last))]);
        const int partner = static_cast<int>(pool[static_cast<std::size_t>(rng.uniform_int(0, last))]);
        const bool defective = rng.uniform() < config.p_defective;
        batch.anchor_idx.push_back(anchor);
        batch.partner_idx.push_back(partner);
        batch.partner_defective.push_back(defective ? 1 : 0);
        if (defective) {
            // per-item stream so corruption stays deterministic under any
            // parallelization of the surrounding loop
            Rng item_rng(rng.next_u64());
            CorruptedSample sample =
                generator.sample_corruption(images[static_cast<std::size_t>(partner)], item_rng);
            batch.partner_images.push_back(std::move(sample.image));
            batch.masks.push_back(std::move(sample.mask));
        } else {
            batch.partner_images.emplace_back();
            batch.masks.emplace_back();
        }
    }
    return batch;
}

// ---------------------------------------------------------------------------
// feature plumbing
// ---------------------------------------------------------------------------

namespace {

void ensure_clean_features(const TrainContext& ctx, const std::vector<int>& indices) {
    std::set<int> unique;
    for (int i : indices)
        if (!ctx.cache->has(static_cast<std::size_t>(i))) unique.insert(i);
    if (unique.empty()) return;
    const std::vector<int> missing(unique.begin(), unique.end());
    parallel_for(missing.size(), [&](std::size_t j) {
        const int idx = missing[j];
        FeatureStack stack = ctx.adapter->extract_one((*ctx.images)[static_cast<std::size_t>(idx)]);
        Tensor fused = fuse_features(stack);
        ctx.cache->put(static_cast<std::size_t>(idx), std::move(stack), std::move(fused));
    });
}

Tensor slice_image(const Tensor& batch, int i) {
    const int c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    const std::size_t chw = static_cast<std::size_t>(c) * h * w;
    Tensor out({c, h, w});
    std::copy_n(batch.ptr() + static_cast<std::size_t>(i) * chw, chw, out.ptr());
    return out;
}

void add_into_slice(Tensor& batch, int i, const Tensor& value) {
    const std::size_t chw = value.size();
    float* dst = batch.ptr() + static_cast<std::size_t>(i) * chw;
    for (std::size_t k = 0; k < chw; ++k) dst[k] += value.data[k];
}

void copy_into_slice(Tensor& batch, int i, const Tensor& value) {
    std::copy_n(value.ptr(), value.size(), batch.ptr() + value.size() * static_cast<std::size_t>(i));
}

// Gathers fused features for the whole pair batch: anchors first, partners
// second. Corrupted partners are extracted fresh.
Tensor assemble_pair_inputs(const PairBatch& batch, const TrainContext& ctx) {
    const int b = static_cast<int>(batch.anchor_idx.size());

    std::vector<int> clean = batch.anchor_idx;
    for (int i = 0; i < b; ++i)
        if (!batch.partner_defective[static_cast<std::size_t>(i)])
            clean.push_back(batch.partner_idx[static_cast<std::size_t>(i)]);
    ensure_clean_features(ctx, clean);

    std::vector<Tensor> corrupt_fused(static_cast<std::size_t>(b));
    std::vector<std::size_t> defect_positions;
    for (int i = 0; i < b; ++i)
        if (batch.partner_defective[static_cast<std::size_t>(i)])
            defect_positions.push_back(static_cast<std::size_t>(i));
    parallel_for(defect_positions.size(), [&](std::size_t j) {
        const std::size_t i = defect_positions[j];
        corrupt_fused[i] = fuse_features(ctx.adapter->extract_one(batch.partner_images[i]));
    });

    const Tensor& probe = ctx.cache->fused(static_cast<std::size_t>(batch.anchor_idx[0]));
    const int c = probe.dim(0), h = probe.dim(1), w = probe.dim(2);
    Tensor x({2 * b, c, h, w});
    for (int i = 0; i < b; ++i)
        copy_into_slice(x, i, ctx.cache->fused(static_cast<std::size_t>(batch.anchor_idx[static_cast<std::size_t>(i)])));
    for (int i = 0; i < b; ++i) {
        if (batch.partner_defective[static_cast<std::size_t>(i)])
            copy_into_slice(x, b + i, corrupt_fused[static_cast<std::size_t>(i)]);
        else
            copy_into_slice(x, b + i,
                            ctx.cache->fused(static_cast<std::size_t>(
                                batch.partner_idx[static_cast<std::size_t>(i)])));
    }
    return x;
}

std::vector<Tensor> slice_layers(const std::vector<Tensor>& batch_layers, int i) {
    std::vector<Tensor> out;
    out.reserve(batch_layers.size());
    for (const Tensor& layer : batch_layers) out.push_back(slice_image(layer, i));
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// parameter registry
// ---------------------------------------------------------------------------

std::vector<Tensor*> trainable_params(EmbedderParams& embedder, DecoderParams& decoder) {
    std::vector<Tensor*> params;
    for (std::size_t i = 0; i < embedder.bns.size(); ++i) {
        params.push_back(&embedder.convs[i].weight);
        params.push_back(&embedder.convs[i].bias);
        params.push_back(&embedder.bns[i].gamma);
        params.push_back(&embedder.bns[i].beta);
    }
    params.push_back(&embedder.convs.back().weight);
    params.push_back(&embedder.convs.back().bias);
    if (decoder.trainable()) {
        for (std::size_t l = 0; l < decoder.conv1.size(); ++l) {
            params.push_back(&decoder.conv1[l].weight);
            params.push_back(&decoder.conv1[l].bias);
            params.push_back(&decoder.conv2[l].weight);
            params.push_back(&decoder.conv2[l].bias);
        }
    }
    return params;
}

namespace {

std::vector<const Tensor*> collect_grads(const EmbedderGradsT<float>& eg,
                                         const DecoderGradsT<float>& dg, bool decoder_trainable) {
    std::vector<const Tensor*> grads;
    const std::size_t n_hidden = eg.bns.size();
    for (std::size_t i = 0; i < n_hidden; ++i) {
        grads.push_back(&eg.convs[i].weight);
        grads.push_back(&eg.convs[i].bias);
        grads.push_back(&eg.bns[i].gamma);
        grads.push_back(&eg.bns[i].beta);
    }
    grads.push_back(&eg.convs.back().weight);
    grads.push_back(&eg.convs.back().bias);
    if (decoder_trainable) {
        for (std::size_t l = 0; l < dg.conv1.size(); ++l) {
            grads.push_back(&dg.conv1[l].weight);
            grads.push_back(&dg.conv1[l].bias);
            grads.push_back(&dg.conv2[l].weight);
            grads.push_back(&dg.conv2[l].bias);
        }
    }
    return grads;
}

} // namespace

// ---------------------------------------------------------------------------
// train / validation steps
// ---------------------------------------------------------------------------

LossBreakdown train_step(EmbedderParams& embedder, DecoderParams& decoder,
                         const PairBatch& batch, const TrainContext& ctx,
                         AdamOptimizer& optimizer, double lr, const TrainConfig& config) {
    const int b = static_cast<int>(batch.anchor_idx.size());
    Tensor x = assemble_pair_inputs(batch, ctx);

    EmbedCacheT<float> emb_cache;
    Tensor emb = embed(embedder, x, Mode::Train, &emb_cache);
    const int ec = emb.dim(1), eh = emb.dim(2), ew = emb.dim(3);

    // contrastive term over the pairs
    Tensor grad_emb(emb.shape);
    double contr_sum = 0.0;
    for (int i = 0; i < b; ++i) {
        Tensor e_k = slice_image(emb, i);
        Tensor e_m = slice_image(emb, b + i);
        const bool defective = batch.partner_defective[static_cast<std::size_t>(i)] != 0;
        contr_sum += contrastive_loss(e_k, e_m, defective);
        Tensor gk({ec, eh, ew}), gm({ec, eh, ew});
        contrastive_backward(e_k, e_m, defective, config.alpha / b, gk, gm);
        add_into_slice(grad_emb, i, gk);
        add_into_slice(grad_emb, b + i, gm);
    }

    // reconstruction term, defect-free anchors only
    Tensor anchors({b, ec, eh, ew});
    std::copy_n(emb.ptr(), anchors.size(), anchors.ptr());
    DecodeCacheT<float> dec_cache;
    std::vector<Tensor> recon = decode(decoder, anchors, &dec_cache);

    double rec_sum = 0.0;
    std::vector<Tensor> grad_layers;
    for (const Tensor& layer : recon) grad_layers.emplace_back(layer.shape);
    for (int i = 0; i < b; ++i) {
        const FeatureStack& stack =
            ctx.cache->stack(static_cast<std::size_t>(batch.anchor_idx[static_cast<std::size_t>(i)]));
        std::vector<Tensor> recon_i = slice_layers(recon, i);
        rec_sum += reconstruction_loss(stack.layers, recon_i, config.squared_ploss);
        std::vector<Tensor> g =
            reconstruction_backward(stack.layers, recon_i, config.squared_ploss, 1.0 / b);
        for (std::size_t l = 0; l < g.size(); ++l) add_into_slice(grad_layers[l], i, g[l]);
    }

    LossBreakdown losses;
    losses.alpha = config.alpha;
    losses.contrastive = contr_sum / b;
    losses.reconstruction = rec_sum / b;
    losses.total = total_loss(losses.reconstruction, losses.contrastive, config.alpha);
    if (!std::isfinite(losses.total))
        throw TrainingError("training aborted: non-finite loss (reconstruction=" +
                            std::to_string(losses.reconstruction) + ", contrastive=" +
                            std::to_string(losses.contrastive) + ")");

    DecoderGradsT<float> dec_grads = decode_backward(decoder, dec_cache, grad_layers);
    for (int i = 0; i < b; ++i) {
        Tensor ge = slice_image(dec_grads.embedding, i);
        add_into_slice(grad_emb, i, ge);
    }
    EmbedderGradsT<float> emb_grads = embed_backward(embedder, emb_cache, grad_emb);

    optimizer.step(collect_grads(emb_grads, dec_grads, decoder.trainable()), lr);
    return losses;
}

LossBreakdown validation_loss(EmbedderParams& embedder, const DecoderParams& decoder,
                              const std::vector<std::size_t>& val_pool, const TrainContext& ctx,
                              const TrainConfig& config, std::uint64_t epoch_seed) {
    Rng rng(epoch_seed);
    const int n_batches =
        std::max<int>(1, static_cast<int>(val_pool.size()) / config.batch_size);

    double contr_sum = 0.0, rec_sum = 0.0;
    long n_pairs = 0;
    for (int bi = 0; bi < n_batches; ++bi) {
        PairBatch batch = sample_pair_batch(val_pool, *ctx.images, rng, config, *ctx.generator);
        Tensor x = assemble_pair_inputs(batch, ctx);
        Tensor emb = embed(embedder, x, Mode::Eval);
        const int b = static_cast<int>(batch.anchor_idx.size());
        const int ec = emb.dim(1), eh = emb.dim(2), ew = emb.dim(3);

        for (int i = 0; i < b; ++i) {
            Tensor e_k = slice_image(emb, i);
            Tensor e_m = slice_image(emb, b + i);
            contr_sum += contrastive_loss(e_k, e_m,
                                          batch.partner_defective[static_cast<std::size_t>(i)] != 0);
        }
        Tensor anchors({b, ec, eh, ew});
        std::copy_n(emb.ptr(), anchors.size(), anchors.ptr());
        std::vector<Tensor> recon = decode(decoder, anchors);
        for (int i = 0; i < b; ++i) {
            const FeatureStack& stack = ctx.cache->stack(
                static_cast<std::size_t>(batch.anchor_idx[static_cast<std::size_t>(i)]));
            std::vector<Tensor> recon_i = slice_layers(recon, i);
            rec_sum += reconstruction_loss(stack.layers, recon_i, config.squared_ploss);
        }
        n_pairs += b;
    }

    LossBreakdown losses;
    losses.alpha = config.alpha;
    losses.contrastive = contr_sum / static_cast<double>(n_pairs);
    losses.reconstruction = rec_sum / static_cast<double>(n_pairs);
    losses.total = total_loss(losses.reconstruction, losses.contrastive, config.alpha);
    if (!std::isfinite(losses.total))
        throw TrainingError("validation produced a non-finite loss");
    return losses;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

namespace {

// reconstruction-only fit of the decoder against the frozen initial
// embedder (trained_before mode)
DecoderParams pretrain_decoder(const EngineConfig& config, EmbedderParams& embedder,
                               const TrainContext& ctx, const std::vector<std::size_t>& train_pool,
                               const DecoderConfig& decoder_config, std::ostream* log) {
    DecoderConfig pre_config = decoder_config;
    pre_config.mode = DecoderMode::TrainedTogether; // trainable during the pre-fit
    DecoderParams decoder = init_decoder<float>(pre_config);

    std::vector<Tensor*> params;
    for (std::size_t l = 0; l < decoder.conv1.size(); ++l) {
        params.push_back(&decoder.conv1[l].weight);
        params.push_back(&decoder.conv1[l].bias);
        params.push_back(&decoder.conv2[l].weight);
        params.push_back(&decoder.conv2[l].bias);
    }
    AdamOptimizer opt(params);

    Rng rng(Rng::mix(config.seed, 6));
    const TrainConfig& tc = config.train;
    const int steps =
        std::max<int>(1, static_cast<int>(train_pool.size()) / tc.batch_size);
    const int last = static_cast<int>(train_pool.size()) - 1;

    for (int epoch = 0; epoch < tc.decoder_pretrain_epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (int s = 0; s < steps; ++s) {
            std::vector<int> idxs;
            for (int i = 0; i < tc.batch_size; ++i)
                idxs.push_back(static_cast<int>(
                    train_pool[static_cast<std::size_t>(rng.uniform_int(0, last))]));
            ensure_clean_features(ctx, idxs);

            const Tensor& probe = ctx.cache->fused(static_cast<std::size_t>(idxs[0]));
            Tensor x({tc.batch_size, probe.dim(0), probe.dim(1), probe.dim(2)});
            for (int i = 0; i < tc.batch_size; ++i)
                copy_into_slice(x, i, ctx.cache->fused(static_cast<std::size_t>(idxs[static_cast<std::size_t>(i)])));

            Tensor emb = embed(embedder, x, Mode::Eval);
            DecodeCacheT<float> cache;
            std::vector<Tensor> recon = decode(decoder, emb, &cache);

            double rec_sum = 0.0;
            std::vector<Tensor> grad_layers;
            for (const Tensor& layer : recon) grad_layers.emplace_back(layer.shape);
            for (int i = 0; i < tc.batch_size; ++i) {
                const FeatureStack& stack =
                    ctx.cache->stack(static_cast<std::size_t>(idxs[static_cast<std::size_t>(i)]));
                std::vector<Tensor> recon_i = slice_layers(recon, i);
                rec_sum += reconstruction_loss(stack.layers, recon_i, tc.squared_ploss);
                std::vector<Tensor> g = reconstruction_backward(stack.layers, recon_i,
                                                                tc.squared_ploss, 1.0 / tc.batch_size);
                for (std::size_t l = 0; l < g.size(); ++l) add_into_slice(grad_layers[l], i, g[l]);
            }
            DecoderGradsT<float> dg = decode_backward(decoder, cache, grad_layers);

            std::vector<const Tensor*> grads;
            for (std::size_t l = 0; l < dg.conv1.size(); ++l) {
                grads.push_back(&dg.conv1[l].weight);
                grads.push_back(&dg.conv1[l].bias);
                grads.push_back(&dg.conv2[l].weight);
                grads.push_back(&dg.conv2[l].bias);
            }
            opt.step(grads, tc.lr);
            epoch_loss += rec_sum / tc.batch_size;
        }
        if (log)
            *log << "[pretrain] epoch " << epoch + 1 << "/" << tc.decoder_pretrain_epochs
                 << " recon_loss=" << epoch_loss / steps << "\n";
    }
    return decoder;
}

} // namespace

Checkpoint fit(const EngineConfig& config, const BackboneAdapter& adapter,
               const std::vector<Tensor>& images, std::ostream* log) {
    if (images.size() < 2) throw ConfigError("fit: need at least 2 defect-free images");
    if (config.train.epochs < 1) throw ConfigError("fit: epochs must be >= 1");
    if (config.train.batch_size < 1) throw ConfigError("fit: batch_size must be >= 1");
    if (!(config.train.p_defective > 0.0 && config.train.p_defective < 1.0) &&
        config.train.p_defective != 0.0 && config.train.p_defective != 1.0)
        throw ConfigError("fit: p_defective must lie in [0, 1]");

    // preprocess everything up front
    std::vector<Tensor> proc(images.size());
    parallel_for(images.size(),
                 [&](std::size_t i) { proc[i] = preprocess_image(images[i], config.adapter); });

    std::vector<std::size_t> val_pool;
    std::vector<std::size_t> train_pool =
        split_indices(proc.size(), config.train.split, Rng::mix(config.seed, 1), &val_pool);

    // resolve model configuration against the adapter
    EmbedderConfig emb_config = config.embedder;
    if (emb_config.in_channels == 0) emb_config.in_channels = adapter.fused_channels();
    if (emb_config.in_channels != adapter.fused_channels())
        throw ConfigError("embedder in_channels " + std::to_string(emb_config.in_channels) +
                          " does not match fused backbone channels " +
                          std::to_string(adapter.fused_channels()));

    DecoderConfig dec_config = config.decoder;
    dec_config.in_channels = emb_config.out_channels;
    if (dec_config.target_shapes.empty())
        dec_config.target_shapes = adapter.descriptor().declared_shapes;
    if (dec_config.seed == 0) dec_config.seed = Rng::mix(config.seed, 3);

    EmbedderParams embedder = init_embedder<float>(emb_config, Rng::mix(config.seed, 2));

    FeatureCache cache(proc.size());
    DefectGenerator generator(config.defects);
    TrainContext ctx;
    ctx.adapter = &adapter;
    ctx.images = &proc;
    ctx.cache = &cache;
    ctx.generator = &generator;

    DecoderParams decoder;
    if (dec_config.mode == DecoderMode::TrainedBefore) {
        DecoderParams pretrained =
            pretrain_decoder(config, embedder, ctx, train_pool, dec_config, log);
        decoder = init_decoder<float>(dec_config, &pretrained);
    } else {
        decoder = init_decoder<float>(dec_config);
    }

    AdamOptimizer optimizer(trainable_params(embedder, decoder));

    const int steps_per_epoch =
        std::max<int>(1, static_cast<int>(train_pool.size()) / config.train.batch_size);
    const long total_steps = static_cast<long>(steps_per_epoch) * config.train.epochs;

    Rng train_rng(Rng::mix(config.seed, 4));
    const std::string digest = engine_config_digest(config);

    Checkpoint best;
    best.adapter = adapter.descriptor();
    best.config_digest = digest;

    long global_step = 0;
    for (int epoch = 0; epoch < config.train.epochs; ++epoch) {
        double train_total = 0.0;
        double lr = 0.0;
        for (int s = 0; s < steps_per_epoch; ++s, ++global_step) {
            lr = one_cycle_lr(global_step, total_steps, config.train.lr, config.train.one_cycle);
            PairBatch batch =
                sample_pair_batch(train_pool, proc, train_rng, config.train, generator);
            LossBreakdown losses =
                train_step(embedder, decoder, batch, ctx, optimizer, lr, config.train);
            train_total += losses.total;
        }

        LossBreakdown val = validation_loss(embedder, decoder, val_pool, ctx, config.train,
                                            Rng::mix(Rng::mix(config.seed, 5),
                                                     static_cast<std::uint64_t>(epoch)));
        if (log)
            *log << "epoch " << epoch + 1 << "/" << config.train.epochs
                 << " train_loss=" << train_total / steps_per_epoch
                 << " val_loss=" << val.total << " (recon=" << val.reconstruction
                 << " contr=" << val.contrastive << ") lr=" << lr << "\n";

        if (val.total < best.val_loss) {
            best.embedder = embedder;
            best.decoder = decoder;
            best.epoch = epoch;
            best.val_loss = val.total;
        }
    }
    return best;
}

Checkpoint fit_paths(const EngineConfig& config, const std::vector<std::string>& paths,
                     std::ostream* log) {
    if (paths.empty()) throw ConfigError("fit: empty dataset");
    BackboneAdapter adapter = BackboneAdapter::load(config.adapter);
    std::vector<Tensor> images(paths.size());
    parallel_for(paths.size(), [&](std::size_t i) { images[i] = load_image(paths[i]); });
    return fit(config, adapter, images, log);
}

// ---------------------------------------------------------------------------
// checkpoint persistence
// ---------------------------------------------------------------------------

namespace {

void push_conv(NamedTensorFile& file, const std::string& prefix, const ConvParams& conv) {
    file.tensors.emplace_back(prefix + ".weight", conv.weight);
    file.tensors.emplace_back(prefix + ".bias", conv.bias);
}

ConvParams pull_conv(const NamedTensorFile& file, const std::string& prefix, bool trainable) {
    ConvParams conv;
    conv.weight = file.find(prefix + ".weight");
    conv.bias = file.find(prefix + ".bias");
    conv.trainable = trainable;
    return conv;
}

} // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    NamedTensorFile file;
    file.meta["kind"] = "checkpoint";
    file.meta["checkpoint_version"] = kCheckpointFormatVersion;
    file.meta["epoch"] = ckpt.epoch;
    if (std::isfinite(ckpt.val_loss)) file.meta["val_loss"] = ckpt.val_loss;
    file.meta["config_digest"] = ckpt.config_digest;
    file.meta["adapter"] = adapter_to_json(ckpt.adapter);

    const EmbedderConfig& ec = ckpt.embedder.config;
    file.meta["embedder"] = {{"in_channels", ec.in_channels},
                             {"hidden", ec.hidden},
                             {"out_channels", ec.out_channels},
                             {"pool_kernel", ec.pool_kernel},
                             {"pool_stride", ec.pool_stride}};
    const DecoderConfig& dc = ckpt.decoder.config;
    file.meta["decoder"] = {{"mode", decoder_mode_name(dc.mode)},
                            {"seed", dc.seed},
                            {"in_channels", dc.in_channels},
                            {"hidden", dc.hidden},
                            {"target_shapes", dc.target_shapes}};

    for (std::size_t i = 0; i < ckpt.embedder.bns.size(); ++i) {
        push_conv(file, "emb.conv" + std::to_string(i), ckpt.embedder.convs[i]);
        const BatchNormParams& bn = ckpt.embedder.bns[i];
        const std::string p = "emb.bn" + std::to_string(i);
        file.tensors.emplace_back(p + ".gamma", bn.gamma);
        file.tensors.emplace_back(p + ".beta", bn.beta);
        file.tensors.emplace_back(p + ".running_mean", bn.running_mean);
        file.tensors.emplace_back(p + ".running_var", bn.running_var);
    }
    push_conv(file, "emb.conv" + std::to_string(ckpt.embedder.bns.size()),
              ckpt.embedder.convs.back());
    for (std::size_t l = 0; l < ckpt.decoder.conv1.size(); ++l) {
        push_conv(file, "dec.head" + std::to_string(l) + ".conv1", ckpt.decoder.conv1[l]);
        push_conv(file, "dec.head" + std::to_string(l) + ".conv2", ckpt.decoder.conv2[l]);
    }
    save_named_tensors(path, file);
}

Checkpoint load_checkpoint(const std::string& path) {
    const NamedTensorFile file = load_named_tensors(path);
    if (file.meta.value("kind", "") != "checkpoint")
        throw PersistenceError("not a checkpoint file: " + path);
    const int version = file.meta.value("checkpoint_version", -1);
    if (version != kCheckpointFormatVersion)
        throw PersistenceError("unsupported checkpoint_version " + std::to_string(version) +
                               " (expected " + std::to_string(kCheckpointFormatVersion) +
                               "): " + path);

    Checkpoint ckpt;
    ckpt.epoch = file.meta.value("epoch", -1);
    if (file.meta.contains("val_loss") && file.meta.at("val_loss").is_number())
        ckpt.val_loss = file.meta.at("val_loss").get<double>();
    ckpt.config_digest = file.meta.value("config_digest", "");
    ckpt.adapter = adapter_from_json(file.meta.at("adapter"));

    const auto& em = file.meta.at("embedder");
    EmbedderConfig ec;
    ec.in_channels = em.at("in_channels").get<int>();
    ec.hidden = em.at("hidden").get<std::vector<int>>();
    ec.out_channels = em.at("out_channels").get<int>();
    ec.pool_kernel = em.at("pool_kernel").get<int>();
    ec.pool_stride = em.at("pool_stride").get<int>();

    const auto& dm = file.meta.at("decoder");
    DecoderConfig dc;
    dc.mode = decoder_mode_from_name(dm.at("mode").get<std::string>());
    dc.seed = dm.at("seed").get<std::uint64_t>();
    dc.in_channels = dm.at("in_channels").get<int>();
    dc.hidden = dm.at("hidden").get<int>();
    dc.target_shapes = dm.at("target_shapes").get<std::vector<std::array<int, 3>>>();

    ckpt.embedder.config = ec;
    for (std::size_t i = 0; i < ec.hidden.size(); ++i) {
        ckpt.embedder.convs.push_back(pull_conv(file, "emb.conv" + std::to_string(i), true));
        BatchNormParams bn;
        const std::string p = "emb.bn" + std::to_string(i);
        bn.gamma = file.find(p + ".gamma");
        bn.beta = file.find(p + ".beta");
        bn.running_mean = file.find(p + ".running_mean");
        bn.running_var = file.find(p + ".running_var");
        ckpt.embedder.bns.push_back(std::move(bn));
    }
    ckpt.embedder.convs.push_back(
        pull_conv(file, "emb.conv" + std::to_string(ec.hidden.size()), true));

    ckpt.decoder.config = dc;
    const bool dec_trainable = dc.mode == DecoderMode::TrainedTogether;
    for (std::size_t l = 0; l < dc.target_shapes.size(); ++l) {
        ckpt.decoder.conv1.push_back(
            pull_conv(file, "dec.head" + std::to_string(l) + ".conv1", dec_trainable));
        ckpt.decoder.conv2.push_back(
            pull_conv(file, "dec.head" + std::to_string(l) + ".conv2", dec_trainable));
    }
    return ckpt;
}

// ---------------------------------------------------------------------------
// digests
// ---------------------------------------------------------------------------

namespace {

std::uint64_t hash_tensor(std::uint64_t h, const Tensor& t) {
    h = fnv1a64(t.shape.data(), t.shape.size() * sizeof(int), h);
    return fnv1a64(t.data.data(), t.data.size() * sizeof(float), h);
}

std::uint64_t hash_decoder(std::uint64_t h, const DecoderParams& decoder) {
    for (std::size_t l = 0; l < decoder.conv1.size(); ++l) {
        h = hash_tensor(h, decoder.conv1[l].weight);
        h = hash_tensor(h, decoder.conv1[l].bias);
        h = hash_tensor(h, decoder.conv2[l].weight);
        h = hash_tensor(h, decoder.conv2[l].bias);
    }
    return h;
}

} // namespace

std::string params_digest(const EmbedderParams& embedder, const DecoderParams& decoder) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < embedder.bns.size(); ++i) {
        h = hash_tensor(h, embedder.convs[i].weight);
        h = hash_tensor(h, embedder.convs[i].bias);
        h = hash_tensor(h, embedder.bns[i].gamma);
        h = hash_tensor(h, embedder.bns[i].beta);
        h = hash_tensor(h, embedder.bns[i].running_mean);
        h = hash_tensor(h, embedder.bns[i].running_var);
    }
    h = hash_tensor(h, embedder.convs.back().weight);
    h = hash_tensor(h, embedder.convs.back().bias);
    h = hash_decoder(h, decoder);
    return hex64(h);
}

std::string decoder_params_digest(const DecoderParams& decoder) {
    return hex64(hash_decoder(0xcbf29ce484222325ULL, decoder));
}

Tensor embed_eval(EmbedderParams& embedder, const Tensor& fused_batch) {
    return embed(embedder, fused_batch, Mode::Eval);
}

} // namespace cse
