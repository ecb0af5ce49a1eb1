#pragma once

// k-means cluster bank over defect-free embeddings and the cosine anomaly
// score. Embeddings are L2-normalized before clustering so that Euclidean
// assignment is order-equivalent to cosine distance; scoring itself is
// scale-invariant.

#include <cstdint>
#include <string>
#include <vector>

#include "cse/tensor.hpp"

namespace cse {

struct KmeansConfig {
    int max_iters = 100;
    double tol = 1e-6; // stop when the largest centroid shift drops below
    std::uint64_t seed = 0;
};

struct ClusterBank {
    int k = 0;
    int dim = 0;
    std::vector<float> centroids; // k x dim, row-major; each has non-zero norm
    std::string digest;           // binds the bank to the embedder that produced it
};

// k-means++ seeding, Lloyd iterations on L2-normalized embeddings. With
// k == 1 the single centroid is exactly the arithmetic mean of the
// normalized embeddings. Empty clusters are re-seeded from the farthest
// point. Optional inertia trace records the assignment cost per iteration.
ClusterBank build_bank(const std::vector<std::vector<float>>& embeddings, int k,
                       const KmeansConfig& config, std::vector<double>* inertia_trace = nullptr);

struct ScoreResult {
    float score = 0.0f; // min over clusters of (1 - CosSim), in [0, 2]
    int nearest = -1;
    std::vector<float> distances;
};

ScoreResult anomaly_score(const std::vector<float>& embedding, const ClusterBank& bank);

std::vector<float> flatten_embedding(const Tensor& embedding);

void save_bank(const std::string& path, const ClusterBank& bank);
ClusterBank load_bank(const std::string& path);

} // namespace cse
