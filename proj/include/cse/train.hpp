#pragma once

// Pair-based contrastive training: ADAM with a one-cycle schedule, pairs of
// (defect-free anchor, partner that is synthetically corrupted with
// probability p_defective), total loss = reconstruction + alpha *
// contrastive, checkpoint kept at minimum validation loss.

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cse/backbone.hpp"
#include "cse/bank.hpp"
#include "cse/defectgen.hpp"
#include "cse/losses.hpp"
#include "cse/model.hpp"
#include "cse/tensor.hpp"

namespace cse {

struct OneCycleConfig {
    double pct_start = 0.3;  // fraction of steps spent ramping up
    double div_factor = 25.0; // initial lr = max_lr / div_factor
    double final_div = 1e4;   // final lr = max_lr / final_div
};

struct TrainConfig {
    double lr = 4e-4; // peak learning rate of the one-cycle schedule
    int epochs = 100;
    int batch_size = 8;
    double alpha = 10.0;
    double p_defective = 0.5;
    double split = 0.7; // training fraction; the rest is validation
    OneCycleConfig one_cycle;
    bool squared_ploss = false;
    int decoder_pretrain_epochs = 10; // trained_before mode only
};

struct EngineConfig {
    std::uint64_t seed = 0;
    AdapterDescriptor adapter;
    EmbedderConfig embedder;
    DecoderConfig decoder;
    TrainConfig train;
    DefectConfig defects;
    int bank_k = 1;
    KmeansConfig kmeans;
};

// Deterministic shuffled split; disjoint, union preserving, both sides
// non-empty for n >= 2.
std::pair<std::vector<std::string>, std::vector<std::string>> split_dataset(
    const std::vector<std::string>& paths, double split, std::uint64_t seed);

std::vector<std::size_t> split_indices(std::size_t n, double split, std::uint64_t seed,
                                       std::vector<std::size_t>* val_out);

// Cosine one-cycle: ramp from max_lr/div_factor to max_lr over pct_start of
// the run, anneal to max_lr/final_div afterwards.
double one_cycle_lr(long step, long total_steps, double max_lr, const OneCycleConfig& config);

// ---------------------------------------------------------------------------
// ADAM
// ---------------------------------------------------------------------------

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamOptimizer {
public:
    explicit AdamOptimizer(std::vector<Tensor*> params, AdamConfig config = {});

    // grads must align with the bound parameter list.
    void step(const std::vector<const Tensor*>& grads, double lr);

    std::size_t param_tensor_count() const { return slots_.size(); }

private:
    struct Slot {
        Tensor* param;
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;
    AdamConfig config_;
    long t_ = 0;
};

// ---------------------------------------------------------------------------
// Pair batches
// ---------------------------------------------------------------------------

struct PairBatch {
    std::vector<int> anchor_idx;   // into the image pool; anchors are always defect-free
    std::vector<int> partner_idx;
    std::vector<std::uint8_t> partner_defective;
    std::vector<Tensor> partner_images; // corrupted partner pixels (empty tensor when clean)
    std::vector<AnomalyMask> masks;     // empty mask when clean
};

// Anchors and partners drawn independently with replacement from `pool`;
// each partner corrupted with probability p_defective via the generator.
PairBatch sample_pair_batch(const std::vector<std::size_t>& pool,
                            const std::vector<Tensor>& images, Rng& rng,
                            const TrainConfig& config, const DefectGenerator& generator);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
    EmbedderParams embedder;
    DecoderParams decoder;
    AdapterDescriptor adapter;
    std::string config_digest;
    int epoch = -1;
    double val_loss = std::numeric_limits<double>::infinity();
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// FNV digest over all parameter tensors (embedder + decoder) in canonical order.
std::string params_digest(const EmbedderParams& embedder, const DecoderParams& decoder);
std::string decoder_params_digest(const DecoderParams& decoder);

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

// Fused features (and feature stacks) of clean images, cached per index:
// the backbone is frozen, so clean extractions never change. Corrupted
// partners are always extracted fresh.
class FeatureCache {
public:
    explicit FeatureCache(std::size_t n) : fused_(n), stacks_(n) {}
    bool has(std::size_t i) const { return !fused_[i].data.empty(); }
    const Tensor& fused(std::size_t i) const { return fused_[i]; }
    const FeatureStack& stack(std::size_t i) const { return stacks_[i]; }
    void put(std::size_t i, FeatureStack stack, Tensor fused) {
        stacks_[i] = std::move(stack);
        fused_[i] = std::move(fused);
    }

private:
    std::vector<Tensor> fused_;
    std::vector<FeatureStack> stacks_;
};

struct TrainContext {
    const BackboneAdapter* adapter = nullptr;
    const std::vector<Tensor>* images = nullptr; // preprocessed to adapter input size
    FeatureCache* cache = nullptr;
    const DefectGenerator* generator = nullptr;
};

// One forward/backward/ADAM update on the trainable set. Returns the batch
// loss breakdown. Throws TrainingError on non-finite losses.
LossBreakdown train_step(EmbedderParams& embedder, DecoderParams& decoder,
                         const PairBatch& batch, const TrainContext& ctx,
                         AdamOptimizer& optimizer, double lr, const TrainConfig& config);

// Validation pass: eval-mode embeddings, no parameter or running-stat updates.
LossBreakdown validation_loss(EmbedderParams& embedder, const DecoderParams& decoder,
                              const std::vector<std::size_t>& val_pool, const TrainContext& ctx,
                              const TrainConfig& config, std::uint64_t epoch_seed);

// Full training run on preprocessed images. Returns the checkpoint with the
// minimum validation loss.
Checkpoint fit(const EngineConfig& config, const BackboneAdapter& adapter,
               const std::vector<Tensor>& images, std::ostream* log = nullptr);

// Convenience: load + preprocess the files, then fit.
Checkpoint fit_paths(const EngineConfig& config, const std::vector<std::string>& paths,
                     std::ostream* log = nullptr);

// Builds the trainable-parameter pointer list for the current decoder mode.
std::vector<Tensor*> trainable_params(EmbedderParams& embedder, DecoderParams& decoder);

// Embeds a batch of already-fused feature tensors in eval mode.
Tensor embed_eval(EmbedderParams& embedder, const Tensor& fused_batch);

} // namespace cse
