#include "cse/bank.hpp"

#include <cmath>
#include <limits>

#include "cse/container.hpp"
#include "cse/errors.hpp"
#include "cse/rng.hpp"

namespace cse {

namespace {

double sq_dist(const float* a, const double* b, int dim) {
    double s = 0.0;
    for (int i = 0; i < dim; ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        s += d * d;
    }
    return s;
}

} // namespace

ClusterBank build_bank(const std::vector<std::vector<float>>& embeddings, int k,
                       const KmeansConfig& config, std::vector<double>* inertia_trace) {
    const int n = static_cast<int>(embeddings.size());
    if (k < 1) throw ConfigError("build_bank: k must be >= 1");
    if (k > n)
        throw ConfigError("build_bank: k=" + std::to_string(k) + " exceeds " +
                          std::to_string(n) + " embeddings");
    const int dim = static_cast<int>(embeddings[0].size());
    for (const auto& e : embeddings)
        if (static_cast<int>(e.size()) != dim)
            throw InvalidInputError("build_bank: inconsistent embedding dimensions");

    // L2-normalize
    std::vector<std::vector<float>> x(embeddings.size());
    for (int i = 0; i < n; ++i) {
        double norm = 0.0;
        for (float v : embeddings[static_cast<std::size_t>(i)]) norm += static_cast<double>(v) * v;
        norm = std::sqrt(norm);
        if (norm <= 0.0)
            throw DegenerateInputError("build_bank: embedding " + std::to_string(i) +
                                       " has zero norm");
        auto& xi = x[static_cast<std::size_t>(i)];
        xi.resize(static_cast<std::size_t>(dim));
        for (int d = 0; d < dim; ++d)
            xi[static_cast<std::size_t>(d)] =
                static_cast<float>(embeddings[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] / norm);
    }

    Rng rng(config.seed);
    std::vector<std::vector<double>> centroids(static_cast<std::size_t>(k),
                                               std::vector<double>(static_cast<std::size_t>(dim)));

    // k-means++ seeding
    {
        const int first = rng.uniform_int(0, n - 1);
        for (int d = 0; d < dim; ++d)
            centroids[0][static_cast<std::size_t>(d)] =
                x[static_cast<std::size_t>(first)][static_cast<std::size_t>(d)];
        std::vector<double> best(static_cast<std::size_t>(n),
                                 std::numeric_limits<double>::infinity());
        for (int j = 1; j < k; ++j) {
            double total = 0.0;
            for (int i = 0; i < n; ++i) {
                const double d2 = sq_dist(x[static_cast<std::size_t>(i)].data(),
                                          centroids[static_cast<std::size_t>(j - 1)].data(), dim);
                best[static_cast<std::size_t>(i)] = std::min(best[static_cast<std::size_t>(i)], d2);
                total += best[static_cast<std::size_t>(i)];
            }
            int pick;
            if (total <= 0.0) {
                pick = rng.uniform_int(0, n - 1);
            } else {
                const double r = rng.uniform() * total;
                double acc = 0.0;
                pick = n - 1;
                for (int i = 0; i < n; ++i) {
                    acc += best[static_cast<std::size_t>(i)];
                    if (acc >= r) {
                        pick = i;
                        break;
                    }
                }
            }
            for (int d = 0; d < dim; ++d)
                centroids[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)] =
                    x[static_cast<std::size_t>(pick)][static_cast<std::size_t>(d)];
        }
    }

    std::vector<int> assign(static_cast<std::size_t>(n), 0);
    for (int iter = 0; iter < config.max_iters; ++iter) {
        // assignment
        double inertia = 0.0;
        for (int i = 0; i < n; ++i) {
            double best_d = std::numeric_limits<double>::infinity();
            int best_c = 0;
            for (int c = 0; c < k; ++c) {
                const double d2 = sq_dist(x[static_cast<std::size_t>(i)].data(),
                                          centroids[static_cast<std::size_t>(c)].data(), dim);
                if (d2 < best_d) {
                    best_d = d2;
                    best_c = c;
                }
            }
            assign[static_cast<std::size_t>(i)] = best_c;
            inertia += best_d;
        }
        if (inertia_trace) inertia_trace->push_back(inertia);

        // update
        std::vector<std::vector<double>> next(static_cast<std::size_t>(k),
                                              std::vector<double>(static_cast<std::size_t>(dim), 0.0));
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (int i = 0; i < n; ++i) {
            const int c = assign[static_cast<std::size_t>(i)];
            ++counts[static_cast<std::size_t>(c)];
            for (int d = 0; d < dim; ++d)
                next[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] +=
                    static_cast<double>(x[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)]);
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] == 0) {
                // re-seed from the farthest point
                double far_d = -1.0;
                int far_i = 0;
                for (int i = 0; i < n; ++i) {
                    const double d2 =
                        sq_dist(x[static_cast<std::size_t>(i)].data(),
                                centroids[static_cast<std::size_t>(
                                              assign[static_cast<std::size_t>(i)])].data(),
                                dim);
                    if (d2 > far_d) {
                        far_d = d2;
                        far_i = i;
                    }
                }
                for (int d = 0; d < dim; ++d)
                    next[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] =
                        static_cast<double>(
                            x[static_cast<std::size_t>(far_i)][static_cast<std::size_t>(d)]);
                counts[static_cast<std::size_t>(c)] = 1;
            } else {
                for (int d = 0; d < dim; ++d)
                    next[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] /=
                        counts[static_cast<std::size_t>(c)];
            }
        }

        double shift = 0.0;
        for (int c = 0; c < k; ++c) {
            double d2 = 0.0;
            for (int d = 0; d < dim; ++d) {
                const double diff = next[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] -
                                    centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)];
                d2 += diff * diff;
            }
            shift = std::max(shift, std::sqrt(d2));
        }
        centroids = std::move(next);
        if (shift < config.tol) break;
    }

    ClusterBank bank;
    bank.k = k;
    bank.dim = dim;
    bank.centroids.resize(static_cast<std::size_t>(k) * dim);
    for (int c = 0; c < k; ++c) {
        double norm = 0.0;
        for (int d = 0; d < dim; ++d) {
            const double v = centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)];
            bank.centroids[static_cast<std::size_t>(c) * dim + d] = static_cast<float>(v);
            norm += v * v;
        }
        if (norm <= 0.0)
            throw DegenerateInputError("build_bank: centroid " + std::to_string(c) +
                                       " collapsed to zero norm");
    }
    return bank;
}

ScoreResult anomaly_score(const std::vector<float>& embedding, const ClusterBank& bank) {
    if (bank.k < 1 || bank.dim < 1) throw ConfigError("anomaly_score: empty bank");
    if (static_cast<int>(embedding.size()) != bank.dim)
        throw InvalidInputError("anomaly_score: embedding dim " +
                                std::to_string(embedding.size()) + " does not match bank dim " +
                                std::to_string(bank.dim));
    double ne = 0.0;
    for (float v : embedding) ne += static_cast<double>(v) * v;
    ne = std::sqrt(ne);
    if (ne <= 0.0) throw DegenerateInputError("anomaly_score: zero-norm embedding");

    ScoreResult result;
    result.distances.resize(static_cast<std::size_t>(bank.k));
    double best = std::numeric_limits<double>::infinity();
    for (int c = 0; c < bank.k; ++c) {
        const float* ctr = bank.centroids.data() + static_cast<std::size_t>(c) * bank.dim;
        double dot = 0.0, nc = 0.0;
        for (int d = 0; d < bank.dim; ++d) {
            dot += static_cast<double>(embedding[static_cast<std::size_t>(d)]) * ctr[d];
            nc += static_cast<double>(ctr[d]) * ctr[d];
        }
        nc = std::sqrt(nc);
        const double cos = std::clamp(dot / (ne * nc), -1.0, 1.0);
        const double dist = 1.0 - cos;
        result.distances[static_cast<std::size_t>(c)] = static_cast<float>(dist);
        if (dist < best) {
            best = dist;
            result.nearest = c;
        }
    }
    result.score = static_cast<float>(best);
    return result;
}

std::vector<float> flatten_embedding(const Tensor& embedding) {
    return embedding.data;
}

void save_bank(const std::string& path, const ClusterBank& bank) {
    NamedTensorFile file;
    file.meta["kind"] = "cluster_bank";
    file.meta["k"] = bank.k;
    file.meta["dim"] = bank.dim;
    file.meta["digest"] = bank.digest;
    Tensor centroids({bank.k, bank.dim});
    centroids.data = bank.centroids;
    file.tensors.emplace_back("centroids", std::move(centroids));
    save_named_tensors(path, file);
}

ClusterBank load_bank(const std::string& path) {
    const NamedTensorFile file = load_named_tensors(path);
    if (file.meta.value("kind", "") != "cluster_bank")
        throw PersistenceError("not a cluster bank file: " + path);
    ClusterBank bank;
    bank.k = file.meta.at("k").get<int>();
    bank.dim = file.meta.at("dim").get<int>();
    bank.digest = file.meta.value("digest", "");
    const Tensor& centroids = file.find("centroids");
    if (centroids.rank() != 2 || centroids.dim(0) != bank.k || centroids.dim(1) != bank.dim)
        throw PersistenceError("cluster bank centroid shape mismatch: " + path);
    bank.centroids = centroids.data;
    return bank;
}

} // namespace cse
