#pragma once

// Minimal deterministic neural layers: pointwise (1x1) convolution, batch
// norm, ReLU, average pooling, bilinear/nearest resize and Gaussian blur,
// each with the backward passes the trainer needs. Kernels are templated on
// the scalar type; the engine runs float, test oracles re-run in double.

#include <algorithm>
#include <cmath>
#include <vector>

#include "cse/errors.hpp"
#include "cse/rng.hpp"
#include "cse/tensor.hpp"

namespace cse {

enum class Mode { Train, Eval };

template <class T>
struct ConvParamsT {
    TensorT<T> weight; // C_out x C_in x 1 x 1
    TensorT<T> bias;   // C_out
    bool trainable = true;

    int out_channels() const { return weight.dim(0); }
    int in_channels() const { return weight.dim(1); }
};

template <class T>
struct BatchNormParamsT {
    TensorT<T> gamma;        // C
    TensorT<T> beta;         // C
    TensorT<T> running_mean; // C
    TensorT<T> running_var;  // C, strictly positive
    T momentum = T(0.1);
    T epsilon = T(1e-5);
    bool trainable = true;

    int channels() const { return gamma.dim(0); }
};

using ConvParams = ConvParamsT<float>;
using BatchNormParams = BatchNormParamsT<float>;

// Kaiming-uniform weight, zero bias.
template <class T>
ConvParamsT<T> make_pointwise(int c_out, int c_in, Rng& rng) {
    ConvParamsT<T> p;
    p.weight = TensorT<T>({c_out, c_in, 1, 1});
    p.bias = TensorT<T>({c_out});
    const double bound = std::sqrt(6.0 / static_cast<double>(c_in));
    for (auto& w : p.weight.data) w = static_cast<T>(rng.uniform(-bound, bound));
    return p;
}

template <class T>
BatchNormParamsT<T> make_batchnorm(int c) {
    BatchNormParamsT<T> p;
    p.gamma = TensorT<T>::full({c}, T(1));
    p.beta = TensorT<T>({c});
    p.running_mean = TensorT<T>({c});
    p.running_var = TensorT<T>::full({c}, T(1));
    return p;
}

namespace detail {

inline void require(bool cond, const char* msg) {
    if (!cond) throw InvalidInputError(msg);
}

// Interprets any rank>=2 tensor as (planes, H, W).
template <class T>
void plane_dims(const TensorT<T>& t, int& planes, int& h, int& w) {
    require(t.rank() >= 2, "expected a tensor of rank >= 2");
    h = t.dim(t.rank() - 2);
    w = t.dim(t.rank() - 1);
    planes = 1;
    for (int i = 0; i + 2 < t.rank(); ++i) planes *= t.dim(i);
}

// reflect-101 boundary: ... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...
inline int reflect101(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Pointwise convolution
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> pointwise_conv(const TensorT<T>& x, const ConvParamsT<T>& p) {
    detail::require(x.rank() == 4, "pointwise_conv: input must be NxCxHxW");
    const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (ci != p.in_channels())
        throw InvalidInputError("pointwise_conv: input channels " + std::to_string(ci) +
                                " do not match weight C_in " + std::to_string(p.in_channels()));
    const int co = p.out_channels();
    const std::size_t hw = static_cast<std::size_t>(h) * w;

    TensorT<T> y({n, co, h, w});
    for (int b = 0; b < n; ++b) {
        const T* xb = x.ptr() + static_cast<std::size_t>(b) * ci * hw;
        T* yb = y.ptr() + static_cast<std::size_t>(b) * co * hw;
        for (int o = 0; o < co; ++o) {
            T* yp = yb + static_cast<std::size_t>(o) * hw;
            const T b0 = p.bias[static_cast<std::size_t>(o)];
            for (std::size_t i = 0; i < hw; ++i) yp[i] = b0;
            for (int c = 0; c < ci; ++c) {
                const T wk = p.weight[static_cast<std::size_t>(o) * ci + c];
                const T* xp = xb + static_cast<std::size_t>(c) * hw;
                for (std::size_t i = 0; i < hw; ++i) yp[i] += wk * xp[i];
            }
        }
    }
    return y;
}

template <class T>
struct ConvGradsT {
    TensorT<T> input;  // like x
    TensorT<T> weight; // like p.weight
    TensorT<T> bias;   // like p.bias
};

template <class T>
ConvGradsT<T> pointwise_conv_backward(const TensorT<T>& grad_out, const TensorT<T>& x,
                                      const ConvParamsT<T>& p) {
    detail::require(x.rank() == 4 && grad_out.rank() == 4,
                    "pointwise_conv_backward: tensors must be NxCxHxW");
    const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int co = p.out_channels();
    if (ci != p.in_channels())
        throw InvalidInputError("pointwise_conv_backward: input/weight channel mismatch");
    check_shape(grad_out, {n, co, h, w}, "pointwise_conv_backward: grad_out");
    const std::size_t hw = static_cast<std::size_t>(h) * w;

    ConvGradsT<T> g;
    g.input = TensorT<T>({n, ci, h, w});
    g.weight = TensorT<T>({co, ci, 1, 1});
    g.bias = TensorT<T>({co});

    for (int b = 0; b < n; ++b) {
        const T* xb = x.ptr() + static_cast<std::size_t>(b) * ci * hw;
        const T* gob = grad_out.ptr() + static_cast<std::size_t>(b) * co * hw;
        T* gib = g.input.ptr() + static_cast<std::size_t>(b) * ci * hw;
        for (int o = 0; o < co; ++o) {
            const T* gop = gob + static_cast<std::size_t>(o) * hw;
            T gb = T(0);
            for (std::size_t i = 0; i < hw; ++i) gb += gop[i];
            g.bias[static_cast<std::size_t>(o)] += gb;
            for (int c = 0; c < ci; ++c) {
                const T wk = p.weight[static_cast<std::size_t>(o) * ci + c];
                const T* xp = xb + static_cast<std::size_t>(c) * hw;
                T* gip = gib + static_cast<std::size_t>(c) * hw;
                T gw = T(0);
                for (std::size_t i = 0; i < hw; ++i) {
                    gip[i] += wk * gop[i];
                    gw += gop[i] * xp[i];
                }
                g.weight[static_cast<std::size_t>(o) * ci + c] += gw;
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <class T>
struct BnCacheT {
    TensorT<T> xhat;
    std::vector<T> inv_std; // per channel
    Mode mode = Mode::Train;
};

// Train mode normalizes with batch statistics and updates running stats;
// eval mode uses the stored running statistics and leaves them untouched.
template <class T>
TensorT<T> batch_norm(const TensorT<T>& x, BatchNormParamsT<T>& p, Mode mode,
                      BnCacheT<T>* cache = nullptr) {
    detail::require(x.rank() == 4, "batch_norm: input must be NxCxHxW");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (c != p.channels())
        throw InvalidInputError("batch_norm: channel count " + std::to_string(c) +
                                " does not match params C=" + std::to_string(p.channels()));
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const std::size_t m = static_cast<std::size_t>(n) * hw;

    TensorT<T> y({n, c, h, w});
    if (cache) {
        cache->xhat = TensorT<T>({n, c, h, w});
        cache->inv_std.assign(static_cast<std::size_t>(c), T(0));
        cache->mode = mode;
    }

    for (int ch = 0; ch < c; ++ch) {
        T mean, inv_std;
        if (mode == Mode::Train) {
            T sum = T(0), sq = T(0);
            for (int b = 0; b < n; ++b) {
                const T* xp = x.ptr() + (static_cast<std::size_t>(b) * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    sum += xp[i];
                    sq += xp[i] * xp[i];
                }
            }
            mean = sum / static_cast<T>(m);
            T var = sq / static_cast<T>(m) - mean * mean;
            if (var < T(0)) var = T(0); // numerical floor
            inv_std = T(1) / std::sqrt(var + p.epsilon);

            const T unbiased = m > 1 ? var * static_cast<T>(m) / static_cast<T>(m - 1) : var;
            p.running_mean[ch] = (T(1) - p.momentum) * p.running_mean[ch] + p.momentum * mean;
            p.running_var[ch] = (T(1) - p.momentum) * p.running_var[ch] + p.momentum * unbiased;
        } else {
            mean = p.running_mean[ch];
            inv_std = T(1) / std::sqrt(p.running_var[ch] + p.epsilon);
        }

        const T g = p.gamma[ch], be = p.beta[ch];
        for (int b = 0; b < n; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
            const T* xp = x.ptr() + off;
            T* yp = y.ptr() + off;
            T* xh = cache ? cache->xhat.ptr() + off : nullptr;
            for (std::size_t i = 0; i < hw; ++i) {
                const T xhat = (xp[i] - mean) * inv_std;
                if (xh) xh[i] = xhat;
                yp[i] = g * xhat + be;
            }
        }
        if (cache) cache->inv_std[static_cast<std::size_t>(ch)] = inv_std;
    }
    return y;
}

template <class T>
struct BnGradsT {
    TensorT<T> input;
    TensorT<T> gamma;
    TensorT<T> beta;
};

template <class T>
BnGradsT<T> batch_norm_backward(const TensorT<T>& grad_out, const BnCacheT<T>& cache,
                                const BatchNormParamsT<T>& p) {
    const TensorT<T>& xhat = cache.xhat;
    check_shape(grad_out, xhat.shape, "batch_norm_backward: grad_out");
    const int n = xhat.dim(0), c = xhat.dim(1), h = xhat.dim(2), w = xhat.dim(3);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const std::size_t m = static_cast<std::size_t>(n) * hw;

    BnGradsT<T> g;
    g.input = TensorT<T>({n, c, h, w});
    g.gamma = TensorT<T>({c});
    g.beta = TensorT<T>({c});

    for (int ch = 0; ch < c; ++ch) {
        T sum_go = T(0), sum_goxh = T(0);
        for (int b = 0; b < n; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
            const T* go = grad_out.ptr() + off;
            const T* xh = xhat.ptr() + off;
            for (std::size_t i = 0; i < hw; ++i) {
                sum_go += go[i];
                sum_goxh += go[i] * xh[i];
            }
        }
        g.gamma[ch] = sum_goxh;
        g.beta[ch] = sum_go;

        const T gm = p.gamma[ch];
        const T is = cache.inv_std[static_cast<std::size_t>(ch)];
        if (cache.mode == Mode::Train) {
            const T mean_go = sum_go / static_cast<T>(m);
            const T mean_goxh = sum_goxh / static_cast<T>(m);
            for (int b = 0; b < n; ++b) {
                const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
                const T* go = grad_out.ptr() + off;
                const T* xh = xhat.ptr() + off;
                T* gi = g.input.ptr() + off;
                for (std::size_t i = 0; i < hw; ++i)
                    gi[i] = gm * is * (go[i] - mean_go - xh[i] * mean_goxh);
            }
        } else {
            for (int b = 0; b < n; ++b) {
                const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
                const T* go = grad_out.ptr() + off;
                T* gi = g.input.ptr() + off;
                for (std::size_t i = 0; i < hw; ++i) gi[i] = gm * is * go[i];
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> relu(const TensorT<T>& x) {
    TensorT<T> y;
    y.shape = x.shape;
    y.data.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    return y;
}

template <class T>
TensorT<T> relu_backward(const TensorT<T>& grad_out, const TensorT<T>& x) {
    check_shape(grad_out, x.shape, "relu_backward: grad_out");
    TensorT<T> g;
    g.shape = x.shape;
    g.data.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        g.data[i] = x.data[i] > T(0) ? grad_out.data[i] : T(0);
    return g;
}

// ---------------------------------------------------------------------------
// Average pooling (non-overlapping when kernel == stride)
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> avg_pool2d(const TensorT<T>& x, int kernel, int stride) {
    detail::require(x.rank() == 4, "avg_pool2d: input must be NxCxHxW");
    detail::require(kernel >= 1 && stride >= 1, "avg_pool2d: kernel and stride must be >= 1");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h < kernel || w < kernel || (h - kernel) % stride != 0 || (w - kernel) % stride != 0)
        throw InvalidInputError("avg_pool2d: spatial dims " + std::to_string(h) + "x" +
                                std::to_string(w) + " not divisible by kernel/stride");
    const int oh = (h - kernel) / stride + 1;
    const int ow = (w - kernel) / stride + 1;
    const T inv = T(1) / static_cast<T>(kernel * kernel);

    TensorT<T> y({n, c, oh, ow});
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const T* xp = x.ptr() + (static_cast<std::size_t>(b) * c + ch) *
                                        static_cast<std::size_t>(h) * w;
            T* yp = y.ptr() + (static_cast<std::size_t>(b) * c + ch) *
                                  static_cast<std::size_t>(oh) * ow;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    T acc = T(0);
                    for (int ky = 0; ky < kernel; ++ky)
                        for (int kx = 0; kx < kernel; ++kx)
                            acc += xp[static_cast<std::size_t>(oy * stride + ky) * w +
                                      (ox * stride + kx)];
                    yp[static_cast<std::size_t>(oy) * ow + ox] = acc * inv;
                }
        }
    return y;
}

template <class T>
TensorT<T> avg_pool2d_backward(const TensorT<T>& grad_out, const std::vector<int>& in_shape,
                               int kernel, int stride) {
    detail::require(grad_out.rank() == 4 && in_shape.size() == 4,
                    "avg_pool2d_backward: tensors must be NxCxHxW");
    const int n = in_shape[0], c = in_shape[1], h = in_shape[2], w = in_shape[3];
    const int oh = grad_out.dim(2), ow = grad_out.dim(3);
    const T inv = T(1) / static_cast<T>(kernel * kernel);

    TensorT<T> g(in_shape);
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            T* gp = g.ptr() + (static_cast<std::size_t>(b) * c + ch) *
                                  static_cast<std::size_t>(h) * w;
            const T* gop = grad_out.ptr() + (static_cast<std::size_t>(b) * c + ch) *
                                                static_cast<std::size_t>(oh) * ow;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const T v = gop[static_cast<std::size_t>(oy) * ow + ox] * inv;
                    for (int ky = 0; ky < kernel; ++ky)
                        for (int kx = 0; kx < kernel; ++kx)
                            gp[static_cast<std::size_t>(oy * stride + ky) * w +
                               (ox * stride + kx)] += v;
                }
        }
    return g;
}

// ---------------------------------------------------------------------------
// Resizing (channelwise over the two trailing dims)
// ---------------------------------------------------------------------------

// align-corners=false bilinear interpolation.
template <class T>
TensorT<T> resize_bilinear(const TensorT<T>& x, int out_h, int out_w) {
    detail::require(out_h >= 1 && out_w >= 1, "resize_bilinear: output dims must be >= 1");
    int planes, h, w;
    detail::plane_dims(x, planes, h, w);

    std::vector<int> out_shape = x.shape;
    out_shape[out_shape.size() - 2] = out_h;
    out_shape[out_shape.size() - 1] = out_w;
    TensorT<T> y(out_shape);

    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;

    std::vector<int> x0(static_cast<std::size_t>(out_w)), x1(static_cast<std::size_t>(out_w));
    std::vector<T> fx(static_cast<std::size_t>(out_w));
    for (int ox = 0; ox < out_w; ++ox) {
        double src = (ox + 0.5) * sx - 0.5;
        src = std::max(0.0, std::min(src, static_cast<double>(w - 1)));
        const int i0 = static_cast<int>(std::floor(src));
        x0[ox] = i0;
        x1[ox] = std::min(i0 + 1, w - 1);
        fx[ox] = static_cast<T>(src - i0);
    }

    for (int oy = 0; oy < out_h; ++oy) {
        double src = (oy + 0.5) * sy - 0.5;
        src = std::max(0.0, std::min(src, static_cast<double>(h - 1)));
        const int y0 = static_cast<int>(std::floor(src));
        const int y1 = std::min(y0 + 1, h - 1);
        const T fy = static_cast<T>(src - y0);
        for (int p = 0; p < planes; ++p) {
            const T* r0 = x.ptr() + (static_cast<std::size_t>(p) * h + y0) * w;
            const T* r1 = x.ptr() + (static_cast<std::size_t>(p) * h + y1) * w;
            T* yp = y.ptr() + (static_cast<std::size_t>(p) * out_h + oy) * out_w;
            for (int ox = 0; ox < out_w; ++ox) {
                const T a = r0[x0[ox]] + fx[ox] * (r0[x1[ox]] - r0[x0[ox]]);
                const T b = r1[x0[ox]] + fx[ox] * (r1[x1[ox]] - r1[x0[ox]]);
                yp[ox] = a + fy * (b - a);
            }
        }
    }
    return y;
}

template <class T>
TensorT<T> resize_nearest(const TensorT<T>& x, int out_h, int out_w) {
    detail::require(out_h >= 1 && out_w >= 1, "resize_nearest: output dims must be >= 1");
    int planes, h, w;
    detail::plane_dims(x, planes, h, w);

    std::vector<int> out_shape = x.shape;
    out_shape[out_shape.size() - 2] = out_h;
    out_shape[out_shape.size() - 1] = out_w;
    TensorT<T> y(out_shape);

    for (int oy = 0; oy < out_h; ++oy) {
        const int iy = std::min(oy * h / out_h, h - 1);
        for (int p = 0; p < planes; ++p) {
            const T* xp = x.ptr() + (static_cast<std::size_t>(p) * h + iy) * w;
            T* yp = y.ptr() + (static_cast<std::size_t>(p) * out_h + oy) * out_w;
            for (int ox = 0; ox < out_w; ++ox) yp[ox] = xp[std::min(ox * w / out_w, w - 1)];
        }
    }
    return y;
}

template <class T>
TensorT<T> resize_nearest_backward(const TensorT<T>& grad_out, int in_h, int in_w) {
    int planes, oh, ow;
    detail::plane_dims(grad_out, planes, oh, ow);

    std::vector<int> in_shape = grad_out.shape;
    in_shape[in_shape.size() - 2] = in_h;
    in_shape[in_shape.size() - 1] = in_w;
    TensorT<T> g(in_shape);

    for (int oy = 0; oy < oh; ++oy) {
        const int iy = std::min(oy * in_h / oh, in_h - 1);
        for (int p = 0; p < planes; ++p) {
            const T* gop = grad_out.ptr() + (static_cast<std::size_t>(p) * oh + oy) * ow;
            T* gp = g.ptr() + (static_cast<std::size_t>(p) * in_h + iy) * in_w;
            for (int ox = 0; ox < ow; ++ox) gp[std::min(ox * in_w / ow, in_w - 1)] += gop[ox];
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Gaussian blur (separable, reflect-101 padding)
// ---------------------------------------------------------------------------

template <class T>
std::vector<T> gaussian_kernel1d(int kernel_size, double sigma) {
    if (kernel_size < 3 || kernel_size % 2 == 0)
        throw InvalidInputError("gaussian_kernel1d: kernel size must be odd and >= 3");
    if (!(sigma > 0.0)) throw InvalidInputError("gaussian_kernel1d: sigma must be > 0");
    std::vector<T> k(static_cast<std::size_t>(kernel_size));
    const int c = kernel_size / 2;
    double sum = 0.0;
    for (int i = 0; i < kernel_size; ++i) {
        const double d = i - c;
        const double v = std::exp(-d * d / (2.0 * sigma * sigma));
        k[static_cast<std::size_t>(i)] = static_cast<T>(v);
        sum += v;
    }
    for (auto& v : k) v = static_cast<T>(static_cast<double>(v) / sum);
    return k;
}

template <class T>
TensorT<T> gaussian_blur(const TensorT<T>& x, int kernel_size, double sigma) {
    const std::vector<T> k = gaussian_kernel1d<T>(kernel_size, sigma);
    int planes, h, w;
    detail::plane_dims(x, planes, h, w);
    const int c = kernel_size / 2;

    TensorT<T> tmp;
    tmp.shape = x.shape;
    tmp.data.resize(x.size());
    TensorT<T> y;
    y.shape = x.shape;
    y.data.resize(x.size());

    // horizontal pass
    for (int p = 0; p < planes; ++p)
        for (int row = 0; row < h; ++row) {
            const T* xp = x.ptr() + (static_cast<std::size_t>(p) * h + row) * w;
            T* tp = tmp.ptr() + (static_cast<std::size_t>(p) * h + row) * w;
            for (int col = 0; col < w; ++col) {
                T acc = T(0);
                for (int i = -c; i <= c; ++i)
                    acc += k[static_cast<std::size_t>(i + c)] * xp[detail::reflect101(col + i, w)];
                tp[col] = acc;
            }
        }
    // vertical pass
    for (int p = 0; p < planes; ++p)
        for (int col = 0; col < w; ++col)
            for (int row = 0; row < h; ++row) {
                T acc = T(0);
                for (int i = -c; i <= c; ++i)
                    acc += k[static_cast<std::size_t>(i + c)] *
                           tmp.ptr()[(static_cast<std::size_t>(p) * h +
                                      detail::reflect101(row + i, h)) * w + col];
                y.ptr()[(static_cast<std::size_t>(p) * h + row) * w + col] = acc;
            }
    return y;
}

} // namespace cse
