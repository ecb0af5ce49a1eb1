#pragma once

// Loss algebra: cosine similarity over flattened embeddings, the
// contrastive cosine loss, the per-layer reconstruction loss
//   ploss_ij = 1/2 * || F_ij - R_ij ||   (channel vector at each position)
//   layer loss = spatial mean, decoder loss = sum over layers
// and the alpha-weighted total.

#include <cmath>
#include <vector>

#include "cse/errors.hpp"
#include "cse/tensor.hpp"

namespace cse {

struct LossBreakdown {
    double contrastive = 0.0;
    double reconstruction = 0.0;
    double total = 0.0;
    double alpha = 10.0;
};

// Flattened cosine similarity in [-1, 1]. Accumulates in double regardless
// of the tensor scalar type.
template <class T>
double cos_sim(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.size() != b.size() || a.size() == 0)
        throw InvalidInputError("cos_sim: operands must share a non-empty flattened size");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = static_cast<double>(a.data[i]);
        const double y = static_cast<double>(b.data[i]);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na <= 0.0 || nb <= 0.0)
        throw DegenerateInputError("cos_sim: zero-norm embedding");
    const double s = dot / (std::sqrt(na) * std::sqrt(nb));
    return std::clamp(s, -1.0, 1.0);
}

// 1 + CosSim for a defective partner, 1 - CosSim otherwise; range [0, 2].
template <class T>
double contrastive_loss(const TensorT<T>& e_k, const TensorT<T>& e_m, bool partner_defective) {
    const double s = cos_sim(e_k, e_m);
    return partner_defective ? 1.0 + s : 1.0 - s;
}

// d loss / d e_k and d loss / d e_m, scaled by `scale`.
template <class T>
void contrastive_backward(const TensorT<T>& e_k, const TensorT<T>& e_m, bool partner_defective,
                          double scale, TensorT<T>& grad_k, TensorT<T>& grad_m) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < e_k.size(); ++i) {
        const double x = static_cast<double>(e_k.data[i]);
        const double y = static_cast<double>(e_m.data[i]);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na <= 0.0 || nb <= 0.0)
        throw DegenerateInputError("contrastive_backward: zero-norm embedding");
    const double norm_a = std::sqrt(na), norm_b = std::sqrt(nb);
    const double inv_ab = 1.0 / (norm_a * norm_b);
    const double s = dot * inv_ab;
    // d s / d a = b/(|a||b|) - s * a/|a|^2 ; sign of the loss flips with the label
    const double sign = partner_defective ? 1.0 : -1.0;

    if (grad_k.size() != e_k.size()) {
        grad_k = TensorT<T>(e_k.shape);
    }
    if (grad_m.size() != e_m.size()) {
        grad_m = TensorT<T>(e_m.shape);
    }
    for (std::size_t i = 0; i < e_k.size(); ++i) {
        const double a = static_cast<double>(e_k.data[i]);
        const double b = static_cast<double>(e_m.data[i]);
        grad_k.data[i] += static_cast<T>(sign * scale * (b * inv_ab - s * a / na));
        grad_m.data[i] += static_cast<T>(sign * scale * (a * inv_ab - s * b / nb));
    }
}

// Computed only on the defect-free image's features. `squared` switches to
// the 1/2*||.||^2 reading for sensitivity checks.
template <class T>
double reconstruction_loss(const std::vector<TensorT<T>>& features,
                           const std::vector<TensorT<T>>& recon, bool squared = false) {
    if (features.size() != recon.size() || features.empty())
        throw InvalidInputError("reconstruction_loss: layer count mismatch");
    double total = 0.0;
    for (std::size_t l = 0; l < features.size(); ++l) {
        const TensorT<T>& f = features[l];
        const TensorT<T>& r = recon[l];
        if (!f.same_shape(r) || f.rank() != 3)
            throw InvalidInputError("reconstruction_loss: layer " + std::to_string(l) +
                                    " shapes differ: " + f.shape_str() + " vs " + r.shape_str());
        const int c = f.dim(0), h = f.dim(1), w = f.dim(2);
        const std::size_t hw = static_cast<std::size_t>(h) * w;
        double layer = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
            double sq = 0.0;
            for (int ch = 0; ch < c; ++ch) {
                const double d = static_cast<double>(f.data[static_cast<std::size_t>(ch) * hw + i]) -
                                 static_cast<double>(r.data[static_cast<std::size_t>(ch) * hw + i]);
                sq += d * d;
            }
            layer += squared ? 0.5 * sq : 0.5 * std::sqrt(sq);
        }
        total += layer / static_cast<double>(hw);
    }
    return total;
}

// Gradient with respect to the reconstruction, scaled by `scale`. At the
// non-differentiable point F_ij == R_ij the contribution is zero.
template <class T>
std::vector<TensorT<T>> reconstruction_backward(const std::vector<TensorT<T>>& features,
                                                const std::vector<TensorT<T>>& recon,
                                                bool squared, double scale) {
    if (features.size() != recon.size())
        throw InvalidInputError("reconstruction_backward: layer count mismatch");
    std::vector<TensorT<T>> grads;
    for (std::size_t l = 0; l < features.size(); ++l) {
        const TensorT<T>& f = features[l];
        const TensorT<T>& r = recon[l];
        const int c = f.dim(0), h = f.dim(1), w = f.dim(2);
        const std::size_t hw = static_cast<std::size_t>(h) * w;
        const double inv_hw = 1.0 / static_cast<double>(hw);
        TensorT<T> g(f.shape);
        for (std::size_t i = 0; i < hw; ++i) {
            double sq = 0.0;
            for (int ch = 0; ch < c; ++ch) {
                const double d = static_cast<double>(r.data[static_cast<std::size_t>(ch) * hw + i]) -
                                 static_cast<double>(f.data[static_cast<std::size_t>(ch) * hw + i]);
                sq += d * d;
            }
            double factor;
            if (squared) {
                factor = inv_hw; // d(1/2 d^2) = d
            } else if (sq > 0.0) {
                factor = 0.5 * inv_hw / std::sqrt(sq);
            } else {
                continue; // zero gradient at F == R
            }
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t k = static_cast<std::size_t>(ch) * hw + i;
                const double d = static_cast<double>(r.data[k]) - static_cast<double>(f.data[k]);
                g.data[k] = static_cast<T>(scale * factor * d);
            }
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

inline double total_loss(double reconstruction, double contrastive, double alpha) {
    if (!(alpha > 0.0)) throw InvalidInputError("total_loss: alpha must be > 0");
    return reconstruction + alpha * contrastive;
}

} // namespace cse
