#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dmad/rng.hpp"
#include "dmad/tensor.hpp"

namespace dmad {

// ---------------------------------------------------------------------------
// Dense kernels. These are the single source of truth for the math; the
// autodiff graph calls the same functions in its forward and backward passes.
// All matrices are row-major.
// ---------------------------------------------------------------------------

/// c = op(a) * op(b) where op transposes when the flag is set.
/// a is [m x k] (or [k x m] if ta), b is [k x n] (or [n x k] if tb).
template <class S>
TensorT<S> matmul_ex(const TensorT<S>& a, const TensorT<S>& b, bool ta, bool tb) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimensionError("matmul expects rank-2 tensors, got " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    const int m = ta ? a.extent(1) : a.extent(0);
    const int k = ta ? a.extent(0) : a.extent(1);
    const int kb = tb ? b.extent(1) : b.extent(0);
    const int n = tb ? b.extent(0) : b.extent(1);
    if (k != kb)
        throw DimensionError("matmul inner extents differ: " + shape_str(a.shape()) +
                             (ta ? "^T" : "") + " vs " + shape_str(b.shape()) +
                             (tb ? "^T" : ""));
    TensorT<S> c(Shape{m, n});
    const S* pa = a.data();
    const S* pb = b.data();
    S* pc = c.data();
    if (!ta && !tb) {
        // ikj: stream rows of b, accumulate into row of c.
        for (int i = 0; i < m; ++i) {
            S* crow = pc + static_cast<std::size_t>(i) * n;
            const S* arow = pa + static_cast<std::size_t>(i) * k;
            for (int p = 0; p < k; ++p) {
                const S s = arow[p];
                const S* brow = pb + static_cast<std::size_t>(p) * n;
                for (int j = 0; j < n; ++j) crow[j] += s * brow[j];
            }
        }
    } else if (!ta && tb) {
        // rows of a dot rows of b.
        for (int i = 0; i < m; ++i) {
            const S* arow = pa + static_cast<std::size_t>(i) * k;
            S* crow = pc + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                const S* brow = pb + static_cast<std::size_t>(j) * k;
                S acc = 0;
                for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
                crow[j] = acc;
            }
        }
    } else if (ta && !tb) {
        // outer-product accumulation over the shared leading axis.
        for (int p = 0; p < k; ++p) {
            const S* arow = pa + static_cast<std::size_t>(p) * m;
            const S* brow = pb + static_cast<std::size_t>(p) * n;
            for (int i = 0; i < m; ++i) {
                const S s = arow[i];
                S* crow = pc + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) crow[j] += s * brow[j];
            }
        }
    } else {
        for (int i = 0; i < m; ++i) {
            S* crow = pc + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                const S* brow = pb + static_cast<std::size_t>(j) * k;
                S acc = 0;
                for (int p = 0; p < k; ++p) acc += pa[static_cast<std::size_t>(p) * m + i] * brow[p];
                crow[j] = acc;
            }
        }
    }
    return c;
}

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    return matmul_ex(a, b, false, false);
}

/// Row-wise softmax over the last axis, max-subtracted for stability.
template <class S>
TensorT<S> softmax_rows(const TensorT<S>& x) {
    TensorT<S> y(x.shape());
    const int rows = x.leading_rows();
    const int n = x.last_extent();
    for (int r = 0; r < rows; ++r) {
        const S* in = x.data() + static_cast<std::size_t>(r) * n;
        S* out = y.data() + static_cast<std::size_t>(r) * n;
        S mx = in[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, in[j]);
        S sum = 0;
        for (int j = 0; j < n; ++j) {
            out[j] = std::exp(in[j] - mx);
            sum += out[j];
        }
        const S inv = S(1) / sum;
        for (int j = 0; j < n; ++j) out[j] *= inv;
    }
    return y;
}

/// Row-wise log-softmax over the last axis (log-sum-exp form).
template <class S>
TensorT<S> log_softmax_rows(const TensorT<S>& x) {
    TensorT<S> y(x.shape());
    const int rows = x.leading_rows();
    const int n = x.last_extent();
    for (int r = 0; r < rows; ++r) {
        const S* in = x.data() + static_cast<std::size_t>(r) * n;
        S* out = y.data() + static_cast<std::size_t>(r) * n;
        S mx = in[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, in[j]);
        S sum = 0;
        for (int j = 0; j < n; ++j) sum += std::exp(in[j] - mx);
        const S lse = mx + std::log(sum);
        for (int j = 0; j < n; ++j) out[j] = in[j] - lse;
    }
    return y;
}

/// Normalize each row over the last axis: gain * (x - mean)/sqrt(var + eps) + bias.
template <class S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& bias,
                      S eps) {
    if (eps <= S(0)) throw ConfigError("layer_norm eps must be > 0");
    const int n = x.last_extent();
    if (static_cast<int>(gain.size()) != n || static_cast<int>(bias.size()) != n)
        throw DimensionError("layer_norm gain/bias width " + shape_str(gain.shape()) +
                             " does not match last axis of " + shape_str(x.shape()));
    TensorT<S> y(x.shape());
    const int rows = x.leading_rows();
    for (int r = 0; r < rows; ++r) {
        const S* in = x.data() + static_cast<std::size_t>(r) * n;
        S* out = y.data() + static_cast<std::size_t>(r) * n;
        S mean = 0;
        for (int j = 0; j < n; ++j) mean += in[j];
        mean /= S(n);
        S var = 0;
        for (int j = 0; j < n; ++j) {
            const S d = in[j] - mean;
            var += d * d;
        }
        var /= S(n);
        const S inv = S(1) / std::sqrt(var + eps);
        for (int j = 0; j < n; ++j) out[j] = gain[static_cast<std::size_t>(j)] * (in[j] - mean) * inv +
                                             bias[static_cast<std::size_t>(j)];
    }
    return y;
}

/// Per-channel normalization of a [c x h x w] map over its spatial positions,
/// with per-channel gain/bias. Batch-size independent by construction.
template <class S>
TensorT<S> channel_norm(const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& bias,
                        S eps) {
    if (x.rank() != 3)
        throw DimensionError("channel_norm expects [c x h x w], got " + shape_str(x.shape()));
    const int c = x.extent(0);
    const int hw = x.extent(1) * x.extent(2);
    if (static_cast<int>(gain.size()) != c || static_cast<int>(bias.size()) != c)
        throw DimensionError("channel_norm gain/bias must have one entry per channel");
    TensorT<S> y(x.shape());
    for (int ch = 0; ch < c; ++ch) {
        const S* in = x.data() + static_cast<std::size_t>(ch) * hw;
        S* out = y.data() + static_cast<std::size_t>(ch) * hw;
        S mean = 0;
        for (int j = 0; j < hw; ++j) mean += in[j];
        mean /= S(hw);
        S var = 0;
        for (int j = 0; j < hw; ++j) {
            const S d = in[j] - mean;
            var += d * d;
        }
        var /= S(hw);
        const S inv = S(1) / std::sqrt(var + eps);
        const S g = gain[static_cast<std::size_t>(ch)];
        const S b = bias[static_cast<std::size_t>(ch)];
        for (int j = 0; j < hw; ++j) out[j] = g * (in[j] - mean) * inv + b;
    }
    return y;
}

/// Exact-erf GELU: x * Phi(x).
template <class S>
S gelu_scalar(S x) {
    return x * S(0.5) * (S(1) + std::erf(x * S(std::numbers::sqrt2) / S(2)));
}

/// d/dx of exact GELU: Phi(x) + x * phi(x).
template <class S>
S gelu_grad_scalar(S x) {
    const S phi = std::exp(S(-0.5) * x * x) / S(std::sqrt(2.0 * std::numbers::pi));
    return S(0.5) * (S(1) + std::erf(x * S(std::numbers::sqrt2) / S(2))) + x * phi;
}

template <class S>
TensorT<S> gelu(const TensorT<S>& x) {
    TensorT<S> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu_scalar(x[i]);
    return y;
}

struct Conv2dDims {
    int c_in, h, w, c_out, kh, kw, h_out, w_out;
};

template <class S>
Conv2dDims conv2d_dims(const TensorT<S>& x, const TensorT<S>& kernels, int stride, int pad) {
    if (x.rank() != 3)
        throw DimensionError("conv2d input must be [c x h x w], got " + shape_str(x.shape()));
    if (kernels.rank() != 4)
        throw DimensionError("conv2d kernels must be [c_out x c_in x kh x kw], got " +
                             shape_str(kernels.shape()));
    if (stride < 1) throw ConfigError("conv2d stride must be >= 1");
    if (pad < 0) throw ConfigError("conv2d pad must be >= 0");
    Conv2dDims d{x.extent(0), x.extent(1), x.extent(2),
                 kernels.extent(0), kernels.extent(2), kernels.extent(3), 0, 0};
    if (kernels.extent(1) != d.c_in)
        throw DimensionError("conv2d channel mismatch: input " + shape_str(x.shape()) +
                             " vs kernels " + shape_str(kernels.shape()));
    if (d.kh > d.h + 2 * pad || d.kw > d.w + 2 * pad)
        throw DimensionError("conv2d kernel " + shape_str(kernels.shape()) +
                             " larger than padded input " + shape_str(x.shape()));
    d.h_out = (d.h + 2 * pad - d.kh) / stride + 1;
    d.w_out = (d.w + 2 * pad - d.kw) / stride + 1;
    return d;
}

/// Unfold x into [h_out*w_out x c_in*kh*kw] patches (zero padding).
template <class S>
TensorT<S> im2col(const TensorT<S>& x, const Conv2dDims& d, int stride, int pad) {
    const int cols = d.c_in * d.kh * d.kw;
    TensorT<S> out(Shape{d.h_out * d.w_out, cols});
    S* po = out.data();
    for (int oy = 0; oy < d.h_out; ++oy) {
        for (int ox = 0; ox < d.w_out; ++ox) {
            S* row = po + (static_cast<std::size_t>(oy) * d.w_out + ox) * cols;
            int idx = 0;
            for (int c = 0; c < d.c_in; ++c) {
                for (int ky = 0; ky < d.kh; ++ky) {
                    const int iy = oy * stride + ky - pad;
                    for (int kx = 0; kx < d.kw; ++kx, ++idx) {
                        const int ix = ox * stride + kx - pad;
                        if (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
                            row[idx] = x.at(c, iy, ix);
                    }
                }
            }
        }
    }
    return out;
}

/// Fold [h_out*w_out x c_in*kh*kw] patch gradients back onto an input-shaped map.
template <class S>
void col2im_add(const TensorT<S>& cols, const Conv2dDims& d, int stride, int pad,
                TensorT<S>& grad_x) {
    const int ncols = d.c_in * d.kh * d.kw;
    for (int oy = 0; oy < d.h_out; ++oy) {
        for (int ox = 0; ox < d.w_out; ++ox) {
            const S* row = cols.data() + (static_cast<std::size_t>(oy) * d.w_out + ox) * ncols;
            int idx = 0;
            for (int c = 0; c < d.c_in; ++c) {
                for (int ky = 0; ky < d.kh; ++ky) {
                    const int iy = oy * stride + ky - pad;
                    for (int kx = 0; kx < d.kw; ++kx, ++idx) {
                        const int ix = ox * stride + kx - pad;
                        if (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
                            grad_x.at(c, iy, ix) += row[idx];
                    }
                }
            }
        }
    }
}

/// Cross-correlation (no kernel flip), zero padding.
/// x: [c_in x h x w], kernels: [c_out x c_in x k x k] -> [c_out x h' x w'].
template <class S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& kernels, int stride, int pad) {
    const Conv2dDims d = conv2d_dims(x, kernels, stride, pad);
    const TensorT<S> cols = im2col(x, d, stride, pad);
    // K [c_out x ckk] rows dot patch rows -> [c_out x positions].
    TensorT<S> kmat(Shape{d.c_out, d.c_in * d.kh * d.kw}, kernels.vec());
    TensorT<S> flat = matmul_ex(kmat, cols, false, true);
    return TensorT<S>(Shape{d.c_out, d.h_out, d.w_out}, std::move(flat.vec()));
}

/// Global average pool: [c x h x w] -> [c].
template <class S>
TensorT<S> mean_spatial(const TensorT<S>& x) {
    if (x.rank() != 3)
        throw DimensionError("mean_spatial expects [c x h x w], got " + shape_str(x.shape()));
    const int c = x.extent(0);
    const int hw = x.extent(1) * x.extent(2);
    TensorT<S> y(Shape{c});
    for (int ch = 0; ch < c; ++ch) {
        S acc = 0;
        const S* in = x.data() + static_cast<std::size_t>(ch) * hw;
        for (int j = 0; j < hw; ++j) acc += in[j];
        y[static_cast<std::size_t>(ch)] = acc / S(hw);
    }
    return y;
}

/// Inverted-dropout mask: 0 with probability rate, else 1/(1-rate).
/// Evaluation mode is the identity, so no mask is drawn there at all.
template <class S>
TensorT<S> dropout_mask(const Shape& shape, S rate, RngState& rng) {
    if (!(rate >= S(0) && rate < S(1)))
        throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    TensorT<S> mask = TensorT<S>::full(shape, S(1));
    if (rate == S(0)) return mask;
    const S keep = S(1) / (S(1) - rate);
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask[i] = (rng.next_double() < static_cast<double>(rate)) ? S(0) : keep;
    return mask;
}

} // namespace dmad
