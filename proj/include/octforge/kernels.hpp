#pragma once

#include <cmath>
#include <cstring>
#include <utility>
#include <vector>

#include "octforge/gemm.hpp"
#include "octforge/tensor.hpp"

namespace octforge {
namespace kernels {

// ---------------------------------------------------------------- shapes ---

// [C,H,W] and [N,C,H,W] are both accepted by the spatial ops; a rank-3 tensor
// is treated as a single-sample batch.
struct Nchw {
    int n, c, h, w;
};

inline Nchw as_nchw(const std::vector<int>& dims, const char* what) {
    if (dims.size() == 4) return {dims[0], dims[1], dims[2], dims[3]};
    if (dims.size() == 3) return {1, dims[0], dims[1], dims[2]};
    throw ShapeError(std::string(what) + ": expected rank 3 or 4 input");
}

struct Conv2dDims {
    Nchw x;
    int cout, kh, kw, stride, pad, ho, wo;
};

inline Conv2dDims conv2d_dims(const std::vector<int>& xd, const std::vector<int>& wd,
                              int stride, int pad) {
    Conv2dDims d{};
    d.x = as_nchw(xd, "conv2d");
    check_shape(wd.size() == 4, "conv2d: weight must be rank 4 [Cout,Cin,kH,kW]");
    d.cout = wd[0];
    d.kh = wd[2];
    d.kw = wd[3];
    d.stride = stride;
    d.pad = pad;
    check_shape(wd[1] == d.x.c, "conv2d: weight expects " + std::to_string(wd[1]) +
                                    " input channels, input has " + std::to_string(d.x.c));
    check_shape(d.kh % 2 == 1 && d.kw % 2 == 1, "conv2d: kernel dims must be odd, got " +
                                                    std::to_string(d.kh) + "x" + std::to_string(d.kw));
    check_shape(stride >= 1, "conv2d: stride must be >= 1");
    check_shape(pad >= 0, "conv2d: pad must be >= 0");
    check_shape(d.x.h + 2 * pad >= d.kh && d.x.w + 2 * pad >= d.kw,
                "conv2d: padded input " + std::to_string(d.x.h + 2 * pad) + "x" +
                    std::to_string(d.x.w + 2 * pad) + " smaller than kernel " +
                    std::to_string(d.kh) + "x" + std::to_string(d.kw));
    d.ho = (d.x.h + 2 * pad - d.kh) / stride + 1;
    d.wo = (d.x.w + 2 * pad - d.kw) / stride + 1;
    return d;
}

inline std::vector<int> conv2d_out_dims(const std::vector<int>& xd, const Conv2dDims& d) {
    if (xd.size() == 3) return {d.cout, d.ho, d.wo};
    return {d.x.n, d.cout, d.ho, d.wo};
}

// ---------------------------------------------------------------- conv2d ---

template <typename T>
void im2col(const T* x, const Conv2dDims& d, T* col) {
    const int hw = d.ho * d.wo;
    for (int c = 0; c < d.x.c; ++c) {
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                T* row = col + (int64_t(c) * d.kh * d.kw + ki * d.kw + kj) * hw;
                for (int oh = 0; oh < d.ho; ++oh) {
                    const int ih = oh * d.stride - d.pad + ki;
                    if (ih < 0 || ih >= d.x.h) {
                        std::memset(row + int64_t(oh) * d.wo, 0, sizeof(T) * size_t(d.wo));
                        continue;
                    }
                    const T* src = x + (int64_t(c) * d.x.h + ih) * d.x.w;
                    T* dst = row + int64_t(oh) * d.wo;
                    for (int ow = 0; ow < d.wo; ++ow) {
                        const int iw = ow * d.stride - d.pad + kj;
                        dst[ow] = (iw >= 0 && iw < d.x.w) ? src[iw] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, const Conv2dDims& d, T* gx) {
    const int hw = d.ho * d.wo;
    for (int c = 0; c < d.x.c; ++c) {
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                const T* row = col + (int64_t(c) * d.kh * d.kw + ki * d.kw + kj) * hw;
                for (int oh = 0; oh < d.ho; ++oh) {
                    const int ih = oh * d.stride - d.pad + ki;
                    if (ih < 0 || ih >= d.x.h) continue;
                    T* dst = gx + (int64_t(c) * d.x.h + ih) * d.x.w;
                    const T* src = row + int64_t(oh) * d.wo;
                    for (int ow = 0; ow < d.wo; ++ow) {
                        const int iw = ow * d.stride - d.pad + kj;
                        if (iw >= 0 && iw < d.x.w) dst[iw] += src[ow];
                    }
                }
            }
        }
    }
}

// y = correlate(x, w) + b  (no kernel flip). Batches parallelize across
// samples (disjoint outputs, so results are thread-count invariant);
// single-sample calls parallelize inside the GEMM instead.
template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const T* bias,
                    const Conv2dDims& d, Tensor<T>& y) {
    const int K = d.x.c * d.kh * d.kw;
    const int hw = d.ho * d.wo;
    const int64_t xstride = int64_t(d.x.c) * d.x.h * d.x.w;
    const int64_t ystride = int64_t(d.cout) * hw;
    y.zero();
    const bool outer = d.x.n >= 2 && max_threads() > 1;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_threads()) if (outer)
#endif
    for (int n = 0; n < d.x.n; ++n) {
        std::vector<T> col(size_t(K) * hw);
        im2col(x.data() + n * xstride, d, col.data());
        gemm_nn(d.cout, hw, K, w.data(), col.data(), y.data() + n * ystride, !outer);
        if (bias)
            for (int co = 0; co < d.cout; ++co) {
                T* dst = y.data() + n * ystride + int64_t(co) * hw;
                const T bv = bias[co];
                for (int i = 0; i < hw; ++i) dst[i] += bv;
            }
    }
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Conv2dDims& d,
                     const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
    const int K = d.x.c * d.kh * d.kw;
    const int hw = d.ho * d.wo;
    const int64_t xstride = int64_t(d.x.c) * d.x.h * d.x.w;
    const int64_t ystride = int64_t(d.cout) * hw;
    // weight/bias gradients accumulate per sample first, then reduce in a
    // fixed order, keeping results identical for any worker count
    std::vector<Tensor<T>> gw_parts, gb_parts;
    if (gw) gw_parts.assign(size_t(d.x.n), Tensor<T>(w.dims()));
    if (gb) gb_parts.assign(size_t(d.x.n), Tensor<T>({d.cout}));
    const bool outer = d.x.n >= 2 && max_threads() > 1;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_threads()) if (outer)
#endif
    for (int n = 0; n < d.x.n; ++n) {
        std::vector<T> col(size_t(K) * hw);
        const T* gyn = gy.data() + n * ystride;
        if (gw) {
            im2col(x.data() + n * xstride, d, col.data());
            gemm_nt(d.cout, K, hw, gyn, col.data(), gw_parts[size_t(n)].data(), !outer);
        }
        if (gx) {
            std::fill(col.begin(), col.end(), T(0));
            gemm_tn(K, hw, d.cout, w.data(), gyn, col.data(), !outer);
            col2im_add(col.data(), d, gx->data() + n * xstride);
        }
        if (gb) {
            for (int co = 0; co < d.cout; ++co) {
                T acc = T(0);
                const T* src = gyn + int64_t(co) * hw;
                for (int i = 0; i < hw; ++i) acc += src[i];
                gb_parts[size_t(n)][co] = acc;
            }
        }
    }
    for (int n = 0; n < d.x.n; ++n) {
        if (gw)
            for (int64_t i = 0; i < gw->numel(); ++i) (*gw)[i] += gw_parts[size_t(n)][i];
        if (gb)
            for (int co = 0; co < d.cout; ++co) (*gb)[co] += gb_parts[size_t(n)][co];
    }
}

// ------------------------------------------------------------- pooling -----

template <typename T>
Tensor<T> avg_pool2x2_forward(const Tensor<T>& x) {
    Nchw s = as_nchw(x.dims(), "avg_pool2x2");
    check_shape(s.h % 2 == 0 && s.w % 2 == 0, "avg_pool2x2: spatial dims must be even, got " +
                                                  std::to_string(s.h) + "x" + std::to_string(s.w));
    std::vector<int> od = x.dims();
    od[od.size() - 1] /= 2;
    od[od.size() - 2] /= 2;
    Tensor<T> y(od);
    const int ho = s.h / 2, wo = s.w / 2;
    for (int nc = 0; nc < s.n * s.c; ++nc) {
        const T* xs = x.data() + int64_t(nc) * s.h * s.w;
        T* ys = y.data() + int64_t(nc) * ho * wo;
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                const T* p = xs + (2 * i) * s.w + 2 * j;
                ys[i * wo + j] = (p[0] + p[1] + p[s.w] + p[s.w + 1]) * T(0.25);
            }
    }
    return y;
}

template <typename T>
void avg_pool2x2_backward(const Nchw& s, const Tensor<T>& gy, Tensor<T>& gx) {
    const int ho = s.h / 2, wo = s.w / 2;
    for (int nc = 0; nc < s.n * s.c; ++nc) {
        T* gxs = gx.data() + int64_t(nc) * s.h * s.w;
        const T* gys = gy.data() + int64_t(nc) * ho * wo;
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                const T g = gys[i * wo + j] * T(0.25);
                T* p = gxs + (2 * i) * s.w + 2 * j;
                p[0] += g;
                p[1] += g;
                p[s.w] += g;
                p[s.w + 1] += g;
            }
    }
}

template <typename T>
Tensor<T> upsample_nearest2x_forward(const Tensor<T>& x) {
    Nchw s = as_nchw(x.dims(), "upsample_nearest2x");
    std::vector<int> od = x.dims();
    od[od.size() - 1] *= 2;
    od[od.size() - 2] *= 2;
    Tensor<T> y(od);
    const int ho = s.h * 2, wo = s.w * 2;
    for (int nc = 0; nc < s.n * s.c; ++nc) {
        const T* xs = x.data() + int64_t(nc) * s.h * s.w;
        T* ys = y.data() + int64_t(nc) * ho * wo;
        for (int i = 0; i < s.h; ++i)
            for (int j = 0; j < s.w; ++j) {
                const T v = xs[i * s.w + j];
                T* p = ys + (2 * i) * wo + 2 * j;
                p[0] = v;
                p[1] = v;
                p[wo] = v;
                p[wo + 1] = v;
            }
    }
    return y;
}

template <typename T>
void upsample_nearest2x_backward(const Nchw& s, const Tensor<T>& gy, Tensor<T>& gx) {
    const int wo = s.w * 2;
    for (int nc = 0; nc < s.n * s.c; ++nc) {
        T* gxs = gx.data() + int64_t(nc) * s.h * s.w;
        const T* gys = gy.data() + int64_t(nc) * (s.h * 2) * wo;
        for (int i = 0; i < s.h; ++i)
            for (int j = 0; j < s.w; ++j) {
                const T* p = gys + (2 * i) * wo + 2 * j;
                gxs[i * s.w + j] += p[0] + p[1] + p[wo] + p[wo + 1];
            }
    }
}

// ------------------------------------------------------------ batchnorm ----

// Per-channel statistics over batch and spatial dims; biased variance.
template <typename T>
struct BnSaved {
    std::vector<T> mean, inv_std; // per channel, from whichever stats normalized
};

template <typename T>
BnSaved<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                             T momentum, T eps, Tensor<T>& y) {
    Nchw s = as_nchw(x.dims(), "batchnorm");
    check_shape(gamma.numel() == s.c && beta.numel() == s.c &&
                    running_mean.numel() == s.c && running_var.numel() == s.c,
                "batchnorm: affine/stat tensors must have one entry per channel");
    const int64_t m = int64_t(s.n) * s.h * s.w;
    BnSaved<T> saved;
    saved.mean.resize(size_t(s.c));
    saved.inv_std.resize(size_t(s.c));
    const int64_t chw = int64_t(s.c) * s.h * s.w;
    const int64_t hw = int64_t(s.h) * s.w;
    for (int c = 0; c < s.c; ++c) {
        T mean, var;
        if (training) {
            T sum = T(0), sq = T(0);
            for (int n = 0; n < s.n; ++n) {
                const T* p = x.data() + n * chw + c * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    sum += p[i];
                    sq += p[i] * p[i];
                }
            }
            mean = sum / T(m);
            var = sq / T(m) - mean * mean;
            if (var < T(0)) var = T(0); // fp cancellation guard
            running_mean[c] = momentum * running_mean[c] + (T(1) - momentum) * mean;
            running_var[c] = momentum * running_var[c] + (T(1) - momentum) * var;
        } else {
            mean = running_mean[c];
            var = running_var[c];
        }
        const T inv = T(1) / std::sqrt(var + eps);
        saved.mean[size_t(c)] = mean;
        saved.inv_std[size_t(c)] = inv;
        const T g = gamma[c], b = beta[c];
        for (int n = 0; n < s.n; ++n) {
            const T* p = x.data() + n * chw + c * hw;
            T* q = y.data() + n * chw + c * hw;
            for (int64_t i = 0; i < hw; ++i) q[i] = (p[i] - mean) * inv * g + b;
        }
    }
    return saved;
}

template <typename T>
void batchnorm_backward(const Tensor<T>& x, const Tensor<T>& gamma, const BnSaved<T>& saved,
                        bool training, const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* ggamma,
                        Tensor<T>* gbeta) {
    Nchw s = as_nchw(x.dims(), "batchnorm");
    const int64_t m = int64_t(s.n) * s.h * s.w;
    const int64_t chw = int64_t(s.c) * s.h * s.w;
    const int64_t hw = int64_t(s.h) * s.w;
    for (int c = 0; c < s.c; ++c) {
        const T mean = saved.mean[size_t(c)];
        const T inv = saved.inv_std[size_t(c)];
        const T g = gamma[c];
        T sum_gy = T(0), sum_gy_xhat = T(0);
        for (int n = 0; n < s.n; ++n) {
            const T* px = x.data() + n * chw + c * hw;
            const T* pg = gy.data() + n * chw + c * hw;
            for (int64_t i = 0; i < hw; ++i) {
                sum_gy += pg[i];
                sum_gy_xhat += pg[i] * (px[i] - mean) * inv;
            }
        }
        if (gbeta) (*gbeta)[c] += sum_gy;
        if (ggamma) (*ggamma)[c] += sum_gy_xhat;
        if (!gx) continue;
        for (int n = 0; n < s.n; ++n) {
            const T* px = x.data() + n * chw + c * hw;
            const T* pg = gy.data() + n * chw + c * hw;
            T* pq = gx->data() + n * chw + c * hw;
            if (training) {
                // d/dx of batch standardization: mean and variance both depend on x
                const T k = g * inv / T(m);
                for (int64_t i = 0; i < hw; ++i) {
                    const T xhat = (px[i] - mean) * inv;
                    pq[i] += k * (T(m) * pg[i] - sum_gy - xhat * sum_gy_xhat);
                }
            } else {
                const T k = g * inv;
                for (int64_t i = 0; i < hw; ++i) pq[i] += k * pg[i];
            }
        }
    }
}

// --------------------------------------------------------------- linear ----

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    check_shape(x.rank() == 2 && w.rank() == 2 && b.rank() == 1,
                "linear: expected x[N,Din], w[Dout,Din], b[Dout]");
    const int n = x.dim(0), din = x.dim(1), dout = w.dim(0);
    check_shape(w.dim(1) == din, "linear: weight inner dim " + std::to_string(w.dim(1)) +
                                     " != input feature dim " + std::to_string(din));
    check_shape(b.dim(0) == dout, "linear: bias dim " + std::to_string(b.dim(0)) +
                                      " != output dim " + std::to_string(dout));
    Tensor<T> y({n, dout});
    gemm_nt(n, dout, din, x.data(), w.data(), y.data());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dout; ++j) y[int64_t(i) * dout + j] += b[j];
    return y;
}

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy,
                     Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
    const int n = x.dim(0), din = x.dim(1), dout = w.dim(0);
    if (gx) gemm_nn(n, din, dout, gy.data(), w.data(), gx->data());
    if (gw) gemm_tn(dout, din, n, gy.data(), x.data(), gw->data());
    if (gb)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < dout; ++j) (*gb)[j] += gy[int64_t(i) * dout + j];
}

// ---------------------------------------------------------- reductions -----

template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& x) {
    Nchw s = as_nchw(x.dims(), "global_avg_pool");
    Tensor<T> y({s.n, s.c});
    const int64_t hw = int64_t(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T* p = x.data() + (int64_t(n) * s.c + c) * hw;
            T acc = T(0);
            for (int64_t i = 0; i < hw; ++i) acc += p[i];
            y[int64_t(n) * s.c + c] = acc / T(hw);
        }
    return y;
}

template <typename T>
void global_avg_pool_backward(const Nchw& s, const Tensor<T>& gy, Tensor<T>& gx) {
    const int64_t hw = int64_t(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T g = gy[int64_t(n) * s.c + c] / T(hw);
            T* p = gx.data() + (int64_t(n) * s.c + c) * hw;
            for (int64_t i = 0; i < hw; ++i) p[i] += g;
        }
}

// ------------------------------------------------------- cross-entropy -----

// Mean over the batch of -log softmax(logits)[label]; max-subtraction keeps
// exp() in range for arbitrarily large logits.
template <typename T>
T softmax_cross_entropy_forward(const Tensor<T>& logits, const std::vector<int>& labels) {
    check_shape(logits.rank() == 2, "softmax_cross_entropy: logits must be [N,K]");
    const int n = logits.dim(0), k = logits.dim(1);
    check(n >= 1, "softmax_cross_entropy: empty batch");
    check(labels.size() == size_t(n), "softmax_cross_entropy: label count mismatch");
    T total = T(0);
    for (int i = 0; i < n; ++i) {
        const int y = labels[size_t(i)];
        check(y >= 0 && y < k, "softmax_cross_entropy: label " + std::to_string(y) +
                                   " out of range [0," + std::to_string(k) + ")");
        const T* row = logits.data() + int64_t(i) * k;
        T m = row[0];
        for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
        T lse = T(0);
        for (int j = 0; j < k; ++j) lse += std::exp(row[j] - m);
        total += std::log(lse) + m - row[y];
    }
    return total / T(n);
}

template <typename T>
void softmax_cross_entropy_backward(const Tensor<T>& logits, const std::vector<int>& labels,
                                    T gout, Tensor<T>& glogits) {
    const int n = logits.dim(0), k = logits.dim(1);
    const T scale = gout / T(n);
    for (int i = 0; i < n; ++i) {
        const T* row = logits.data() + int64_t(i) * k;
        T* grow = glogits.data() + int64_t(i) * k;
        T m = row[0];
        for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
        T lse = T(0);
        for (int j = 0; j < k; ++j) lse += std::exp(row[j] - m);
        for (int j = 0; j < k; ++j) {
            T p = std::exp(row[j] - m) / lse;
            grow[j] += scale * (p - (j == labels[size_t(i)] ? T(1) : T(0)));
        }
    }
}

// ----------------------------------------------------- attention fusion ----

// Scalar dot-product scores against a shared kernel, softmax over the two
// streams, weighted concat. Weights are returned for diagnostics.
template <typename T>
void attention_fuse_forward(const Tensor<T>& v1, const Tensor<T>& v2, const Tensor<T>& q,
                            Tensor<T>& fused, Tensor<T>& weights) {
    check_shape(v1.rank() == 2 && v2.rank() == 2 && q.rank() == 1,
                "attention_fuse: expected v1[N,D], v2[N,D], q[D]");
    const int n = v1.dim(0), d = v1.dim(1);
    check_shape(v2.dim(0) == n && v2.dim(1) == d && q.dim(0) == d,
                "attention_fuse: dim mismatch, v1 " + v1.shape_str() + " v2 " + v2.shape_str() +
                    " q " + q.shape_str());
    for (int i = 0; i < n; ++i) {
        const T* a = v1.data() + int64_t(i) * d;
        const T* b = v2.data() + int64_t(i) * d;
        T s1 = T(0), s2 = T(0);
        for (int j = 0; j < d; ++j) {
            s1 += q[j] * a[j];
            s2 += q[j] * b[j];
        }
        const T m = std::max(s1, s2);
        const T e1 = std::exp(s1 - m), e2 = std::exp(s2 - m);
        const T w1 = e1 / (e1 + e2), w2 = e2 / (e1 + e2);
        weights[int64_t(i) * 2] = w1;
        weights[int64_t(i) * 2 + 1] = w2;
        T* f = fused.data() + int64_t(i) * 2 * d;
        for (int j = 0; j < d; ++j) {
            f[j] = w1 * a[j];
            f[d + j] = w2 * b[j];
        }
    }
}

template <typename T>
void attention_fuse_backward(const Tensor<T>& v1, const Tensor<T>& v2, const Tensor<T>& q,
                             const Tensor<T>& weights, const Tensor<T>& gfused, Tensor<T>* gv1,
                             Tensor<T>* gv2, Tensor<T>* gq) {
    const int n = v1.dim(0), d = v1.dim(1);
    for (int i = 0; i < n; ++i) {
        const T* a = v1.data() + int64_t(i) * d;
        const T* b = v2.data() + int64_t(i) * d;
        const T* g1 = gfused.data() + int64_t(i) * 2 * d;
        const T* g2 = g1 + d;
        const T w1 = weights[int64_t(i) * 2], w2 = weights[int64_t(i) * 2 + 1];
        T ga = T(0), gb = T(0); // upstream dotted with each stream
        for (int j = 0; j < d; ++j) {
            ga += a[j] * g1[j];
            gb += b[j] * g2[j];
        }
        const T ds1 = w1 * (T(1) - w1) * ga - w1 * w2 * gb;
        const T ds2 = -w1 * w2 * ga + w2 * (T(1) - w2) * gb;
        if (gv1) {
            T* p = gv1->data() + int64_t(i) * d;
            for (int j = 0; j < d; ++j) p[j] += w1 * g1[j] + ds1 * q[j];
        }
        if (gv2) {
            T* p = gv2->data() + int64_t(i) * d;
            for (int j = 0; j < d; ++j) p[j] += w2 * g2[j] + ds2 * q[j];
        }
        if (gq)
            for (int j = 0; j < d; ++j) (*gq)[j] += ds1 * a[j] + ds2 * b[j];
    }
}

// -------------------------------------------------- mean-embedding MMD -----

// Average squared distance between per-domain feature means over ordered
// domain pairs, 1/(K(K-1)) * sum_{d != j} ||mu_d - mu_j||^2.
struct DomainRange {
    int start; // first row in the feature matrix
    int count;
};

template <typename T>
T mmd_forward(const Tensor<T>& feats, const std::vector<DomainRange>& ranges,
              std::vector<T>* means_out = nullptr) {
    check_shape(feats.rank() == 2, "mmd: features must be [N,D]");
    const int k = int(ranges.size());
    check(k >= 2, "mmd: need at least 2 domains, got " + std::to_string(k));
    const int d = feats.dim(1);
    std::vector<T> means(size_t(k) * d, T(0));
    for (int r = 0; r < k; ++r) {
        check(ranges[size_t(r)].count >= 1, "mmd: empty domain batch " + std::to_string(r));
        check(ranges[size_t(r)].start >= 0 &&
                  ranges[size_t(r)].start + ranges[size_t(r)].count <= feats.dim(0),
              "mmd: domain range out of bounds");
        T* mu = means.data() + size_t(r) * d;
        for (int t = 0; t < ranges[size_t(r)].count; ++t) {
            const T* row = feats.data() + int64_t(ranges[size_t(r)].start + t) * d;
            for (int j = 0; j < d; ++j) mu[j] += row[j];
        }
        for (int j = 0; j < d; ++j) mu[j] /= T(ranges[size_t(r)].count);
    }
    T total = T(0);
    for (int a = 0; a < k; ++a)
        for (int b = 0; b < k; ++b) {
            if (a == b) continue;
            const T* ma = means.data() + size_t(a) * d;
            const T* mb = means.data() + size_t(b) * d;
            T dist = T(0);
            for (int j = 0; j < d; ++j) {
                const T diff = ma[j] - mb[j];
                dist += diff * diff;
            }
            total += dist;
        }
    if (means_out) *means_out = std::move(means);
    return total / T(k * (k - 1));
}

template <typename T>
void mmd_backward(const std::vector<DomainRange>& ranges, const std::vector<T>& means, int d,
                  T gout, Tensor<T>& gfeats) {
    const int k = int(ranges.size());
    std::vector<T> mean_sum(size_t(d), T(0));
    for (int r = 0; r < k; ++r)
        for (int j = 0; j < d; ++j) mean_sum[size_t(j)] += means[size_t(r) * d + j];
    const T scale = gout * T(4) / T(k * (k - 1));
    for (int r = 0; r < k; ++r) {
        const T* mu = means.data() + size_t(r) * d;
        const T per_row = scale / T(ranges[size_t(r)].count);
        for (int t = 0; t < ranges[size_t(r)].count; ++t) {
            T* row = gfeats.data() + int64_t(ranges[size_t(r)].start + t) * d;
            // sum_{j != r} (mu_r - mu_j) == K*mu_r - sum_j mu_j
            for (int j = 0; j < d; ++j)
                row[j] += per_row * (T(k) * mu[j] - mean_sum[size_t(j)]);
        }
    }
}

} // namespace kernels
} // namespace octforge
