#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "dmad/nn.hpp"
#include "dmad/tensor.hpp"
#include "dmad/tensor_ops.hpp"

namespace dmad {

/// Eager tape: every operation evaluates immediately and records enough to
/// run reverse-mode backward in one pass over the node list. A graph lives
/// for one forward/backward (one batch); parameters persist outside it and
/// receive accumulated gradients on backward().
///
/// Subgraphs that cannot reach a trainable parameter are skipped entirely
/// during backward, so a frozen teacher under a student loss costs only its
/// forward pass.
template <class S>
class GraphT {
public:
    using Var = int;

    enum class Op {
        Leaf, Param, Matmul, Add, Sub, Mul, AddRow, AddChan, Scale, Gelu,
        LayerNorm, ChannelNorm, SoftmaxRows, LogSoftmaxRows, ReduceSum,
        Gather, ConcatRows, StackRows, ConcatCols, Conv2d, MeanSpatial
    };

    Var input(TensorT<S> t) {
        Node n;
        n.op = Op::Leaf;
        n.val = std::move(t);
        n.ng = false;
        return push(std::move(n));
    }

    Var param(ParameterT<S>& p) {
        Node n;
        n.op = Op::Param;
        n.val = p.value; // copy keeps the tape immutable vs optimizer steps
        n.ng = p.trainable;
        n.param = &p;
        return push(std::move(n));
    }

    const TensorT<S>& value(Var v) const { return nodes_[static_cast<std::size_t>(v)].val; }

    Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
        Node n;
        n.op = Op::Matmul;
        n.in = {a, b};
        n.ta = ta;
        n.tb = tb;
        n.val = matmul_ex(val(a), val(b), ta, tb);
        return push_auto(std::move(n));
    }

    Var add(Var a, Var b) { return ew(Op::Add, a, b); }
    Var sub(Var a, Var b) { return ew(Op::Sub, a, b); }
    Var mul(Var a, Var b) { return ew(Op::Mul, a, b); }

    /// m [r x c] + broadcast row vector v [c].
    Var add_row(Var m, Var v) {
        const int c = val(m).last_extent();
        if (static_cast<int>(val(v).size()) != c)
            throw DimensionError("add_row width mismatch: " + shape_str(val(m).shape()) +
                                 " vs " + shape_str(val(v).shape()));
        Node n;
        n.op = Op::AddRow;
        n.in = {m, v};
        n.val = val(m);
        const int rows = n.val.leading_rows();
        for (int r = 0; r < rows; ++r) {
            S* row = n.val.data() + static_cast<std::size_t>(r) * c;
            for (int j = 0; j < c; ++j) row[j] += val(v)[static_cast<std::size_t>(j)];
        }
        return push_auto(std::move(n));
    }

    /// x [c x h x w] + per-channel bias [c].
    Var add_chan(Var x, Var bias) {
        const TensorT<S>& xv = val(x);
        if (xv.rank() != 3 || static_cast<int>(val(bias).size()) != xv.extent(0))
            throw DimensionError("add_chan expects [c x h x w] plus [c]");
        Node n;
        n.op = Op::AddChan;
        n.in = {x, bias};
        n.val = xv;
        const int hw = xv.extent(1) * xv.extent(2);
        for (int c = 0; c < xv.extent(0); ++c) {
            const S b = val(bias)[static_cast<std::size_t>(c)];
            S* p = n.val.data() + static_cast<std::size_t>(c) * hw;
            for (int j = 0; j < hw; ++j) p[j] += b;
        }
        return push_auto(std::move(n));
    }

    Var scale(Var a, S c) {
        Node n;
        n.op = Op::Scale;
        n.in = {a};
        n.c0 = c;
        n.val = val(a);
        for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] *= c;
        return push_auto(std::move(n));
    }

    Var gelu(Var a) {
        Node n;
        n.op = Op::Gelu;
        n.in = {a};
        n.val = dmad::gelu(val(a));
        return push_auto(std::move(n));
    }

    Var layer_norm(Var x, Var gain, Var bias, S eps) {
        Node n;
        n.op = Op::LayerNorm;
        n.in = {x, gain, bias};
        n.c0 = eps;
        n.val = dmad::layer_norm(val(x), val(gain), val(bias), eps);
        return push_auto(std::move(n));
    }

    Var channel_norm(Var x, Var gain, Var bias, S eps) {
        Node n;
        n.op = Op::ChannelNorm;
        n.in = {x, gain, bias};
        n.c0 = eps;
        n.val = dmad::channel_norm(val(x), val(gain), val(bias), eps);
        return push_auto(std::move(n));
    }

    Var softmax_rows(Var a) {
        Node n;
        n.op = Op::SoftmaxRows;
        n.in = {a};
        n.val = dmad::softmax_rows(val(a));
        return push_auto(std::move(n));
    }

    Var log_softmax_rows(Var a) {
        Node n;
        n.op = Op::LogSoftmaxRows;
        n.in = {a};
        n.val = dmad::log_softmax_rows(val(a));
        return push_auto(std::move(n));
    }

    /// Scalar c * sum of all entries -> [1].
    Var reduce_sum(Var a, S c) {
        Node n;
        n.op = Op::ReduceSum;
        n.in = {a};
        n.c0 = c;
        S acc = 0;
        for (std::size_t i = 0; i < val(a).size(); ++i) acc += val(a)[i];
        n.val = TensorT<S>(Shape{1}, {acc * c});
        return push_auto(std::move(n));
    }

    /// out[i] = in[map[i]]; backward scatter-adds. Covers patch extraction,
    /// row/column slices and static reshuffles.
    Var gather(Var a, std::vector<int> map, Shape out_shape) {
        if (map.size() != shape_numel(out_shape))
            throw DimensionError("gather map length does not match output shape");
        Node n;
        n.op = Op::Gather;
        n.in = {a};
        n.map = std::move(map);
        n.val = TensorT<S>(std::move(out_shape));
        const TensorT<S>& src = val(a);
        for (std::size_t i = 0; i < n.val.size(); ++i)
            n.val[i] = src[static_cast<std::size_t>(n.map[i])];
        return push_auto(std::move(n));
    }

    /// Stack rank-1/row tensors as the rows of a new matrix.
    Var stack_rows(const std::vector<Var>& rows) {
        if (rows.empty()) throw DimensionError("stack_rows needs at least one row");
        const int width = static_cast<int>(val(rows[0]).size());
        Node n;
        n.op = Op::StackRows;
        n.in = rows;
        n.val = TensorT<S>(Shape{static_cast<int>(rows.size()), width});
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const TensorT<S>& rv = val(rows[r]);
            if (static_cast<int>(rv.size()) != width)
                throw DimensionError("stack_rows: inconsistent row widths");
            for (int j = 0; j < width; ++j) n.val.at(static_cast<int>(r), j) = rv[static_cast<std::size_t>(j)];
        }
        return push_auto(std::move(n));
    }

    /// Concatenate two matrices with equal column counts along rows.
    Var concat_rows(Var a, Var b) {
        const TensorT<S>& av = val(a);
        const TensorT<S>& bv = val(b);
        if (av.last_extent() != bv.last_extent())
            throw DimensionError("concat_rows column mismatch");
        Node n;
        n.op = Op::ConcatRows;
        n.in = {a, b};
        const int cols = av.last_extent();
        n.val = TensorT<S>(Shape{av.leading_rows() + bv.leading_rows(), cols});
        std::copy(av.data(), av.data() + av.size(), n.val.data());
        std::copy(bv.data(), bv.data() + bv.size(), n.val.data() + av.size());
        return push_auto(std::move(n));
    }

    /// Concatenate matrices with equal row counts along columns.
    Var concat_cols(const std::vector<Var>& parts) {
        if (parts.empty()) throw DimensionError("concat_cols needs at least one part");
        const int rows = val(parts[0]).extent(0);
        int total = 0;
        for (Var p : parts) {
            if (val(p).rank() != 2 || val(p).extent(0) != rows)
                throw DimensionError("concat_cols: inconsistent row counts");
            total += val(p).extent(1);
        }
        Node n;
        n.op = Op::ConcatCols;
        n.in = parts;
        n.val = TensorT<S>(Shape{rows, total});
        int off = 0;
        for (Var p : parts) {
            const TensorT<S>& pv = val(p);
            const int w = pv.extent(1);
            for (int r = 0; r < rows; ++r)
                std::copy(pv.data() + static_cast<std::size_t>(r) * w,
                          pv.data() + static_cast<std::size_t>(r) * w + w,
                          n.val.data() + static_cast<std::size_t>(r) * total + off);
            off += w;
        }
        return push_auto(std::move(n));
    }

    Var conv2d(Var x, Var k, int stride, int pad) {
        Node n;
        n.op = Op::Conv2d;
        n.in = {x, k};
        n.stride = stride;
        n.pad = pad;
        n.val = dmad::conv2d(val(x), val(k), stride, pad);
        return push_auto(std::move(n));
    }

    Var mean_spatial(Var x) {
        Node n;
        n.op = Op::MeanSpatial;
        n.in = {x};
        n.val = dmad::mean_spatial(val(x));
        return push_auto(std::move(n));
    }

    /// Reverse pass from a scalar node; accumulates into trainable parameters.
    void backward(Var loss) {
        Node& top = nodes_[static_cast<std::size_t>(loss)];
        if (top.val.size() != 1) throw DimensionError("backward expects a scalar loss node");
        for (Node& n : nodes_) n.grad = TensorT<S>();
        top.grad = TensorT<S>(Shape{1}, {S(1)});
        for (int i = loss; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.ng || n.grad.empty()) continue;
            backprop_node(n);
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Op op{};
        std::vector<int> in;
        TensorT<S> val;
        TensorT<S> grad;
        bool ng = false; // can reach a trainable parameter
        bool ta = false, tb = false;
        S c0 = 0;
        int stride = 1, pad = 0;
        std::vector<int> map;
        ParameterT<S>* param = nullptr;
    };

    const TensorT<S>& val(Var v) const { return nodes_[static_cast<std::size_t>(v)].val; }

    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<Var>(nodes_.size() - 1);
    }

    Var push_auto(Node n) {
        for (int i : n.in)
            if (nodes_[static_cast<std::size_t>(i)].ng) {
                n.ng = true;
                break;
            }
        return push(std::move(n));
    }

    Var ew(Op op, Var a, Var b) {
        const TensorT<S>& av = val(a);
        const TensorT<S>& bv = val(b);
        if (!av.same_shape(bv))
            throw DimensionError("elementwise op shape mismatch: " + shape_str(av.shape()) +
                                 " vs " + shape_str(bv.shape()));
        Node n;
        n.op = op;
        n.in = {a, b};
        n.val = av;
        switch (op) {
            case Op::Add:
                for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] += bv[i];
                break;
            case Op::Sub:
                for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] -= bv[i];
                break;
            case Op::Mul:
                for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] *= bv[i];
                break;
            default: break;
        }
        return push_auto(std::move(n));
    }

    TensorT<S>& grad_of(Var v) {
        Node& n = nodes_[static_cast<std::size_t>(v)];
        if (n.grad.empty()) n.grad = TensorT<S>(n.val.shape());
        return n.grad;
    }

    bool wants_grad(Var v) const { return nodes_[static_cast<std::size_t>(v)].ng; }

    void backprop_node(Node& n) {
        const TensorT<S>& g = n.grad;
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Param:
                if (n.param && n.param->trainable)
                    for (std::size_t i = 0; i < g.size(); ++i) n.param->grad[i] += g[i];
                break;
            case Op::Matmul: {
                const Var a = n.in[0], b = n.in[1];
                if (wants_grad(a)) {
                    TensorT<S> da = n.ta ? matmul_ex(val(b), g, n.tb, true)
                                         : matmul_ex(g, val(b), false, !n.tb);
                    accumulate(a, da);
                }
                if (wants_grad(b)) {
                    TensorT<S> db = n.tb ? matmul_ex(g, val(a), true, n.ta)
                                         : matmul_ex(val(a), g, !n.ta, false);
                    accumulate(b, db);
                }
                break;
            }
            case Op::Add:
                pass_through(n.in[0], g);
                pass_through(n.in[1], g);
                break;
            case Op::Sub: {
                pass_through(n.in[0], g);
                if (wants_grad(n.in[1])) {
                    TensorT<S>& gb = grad_of(n.in[1]);
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                }
                break;
            }
            case Op::Mul: {
                if (wants_grad(n.in[0])) {
                    TensorT<S>& ga = grad_of(n.in[0]);
                    const TensorT<S>& bv = val(n.in[1]);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                }
                if (wants_grad(n.in[1])) {
                    TensorT<S>& gb = grad_of(n.in[1]);
                    const TensorT<S>& av = val(n.in[0]);
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                }
                break;
            }
            case Op::AddRow: {
                pass_through(n.in[0], g);
                if (wants_grad(n.in[1])) {
                    TensorT<S>& gv = grad_of(n.in[1]);
                    const int c = static_cast<int>(gv.size());
                    const int rows = g.leading_rows();
                    for (int r = 0; r < rows; ++r)
                        for (int j = 0; j < c; ++j)
                            gv[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(r) * c + j];
                }
                break;
            }
            case Op::AddChan: {
                pass_through(n.in[0], g);
                if (wants_grad(n.in[1])) {
                    TensorT<S>& gb = grad_of(n.in[1]);
                    const int c = static_cast<int>(gb.size());
                    const int hw = static_cast<int>(g.size()) / c;
                    for (int ch = 0; ch < c; ++ch) {
                        S acc = 0;
                        for (int j = 0; j < hw; ++j) acc += g[static_cast<std::size_t>(ch) * hw + j];
                        gb[static_cast<std::size_t>(ch)] += acc;
                    }
                }
                break;
            }
            case Op::Scale:
                if (wants_grad(n.in[0])) {
                    TensorT<S>& ga = grad_of(n.in[0]);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.c0;
                }
                break;
            case Op::Gelu:
                if (wants_grad(n.in[0])) {
                    TensorT<S>& ga = grad_of(n.in[0]);
                    const TensorT<S>& x = val(n.in[0]);
                    for (std::size_t i = 0; i < g.size(); ++i)
                        ga[i] += g[i] * gelu_grad_scalar(x[i]);
                }
                break;
            case Op::LayerNorm:
                backprop_norm(n, /*channelwise=*/false);
                break;
            case Op::ChannelNorm:
                backprop_norm(n, /*channelwise=*/true);
                break;
            case Op::SoftmaxRows:
                if (wants_grad(n.in[0])) {
                    TensorT<S>& ga = grad_of(n.in[0]);
                    const TensorT<S>& y = n.val;
                    const int cols = y.last_extent();
                    const int rows = y.leading_rows();
                    for (int r = 0; r < rows; ++r) {
                        const std::size_t off = static_cast<std::size_t>(r) * cols;
                        S dot = 0;
                        for (int j = 0; j < cols; ++j) dot += g[off + j] * y[off + j];
                        for (int j = 0; j < cols; ++j)
                            ga[off + j] += y[off + j] * (g[off + j] - dot);
                    }
                }
                break;
            case Op::LogSoftmaxRows:
                if (wants_grad(n.in[0])) {
                    TensorT<S>& ga = grad_of(n.in[0]);
                    const TensorT<S>& y = n.val; // log-probs
                    const int cols = y.last_extent();
                    const int rows = y.leading_rows();
                    for (int r = 0; r < rows; ++r) {
                        const std::size_t off = static_cast<std::size_t>(r) * cols;
                        S gsum = 0;
                        for (int j = 0; j < cols; ++j) gsum += g[off + j];
                        for (int j = 0; j < cols; ++j)
                            ga[off + j] += g[off + j] - std::exp(y[off + j]) * gsum;
                    }
                }
                break;
            case Op::ReduceSum:
                if (wants_grad(n.in[0])) {
                    TensorT<S>& ga = grad_of(n.in[0]);
                    const S gc = g[0] * n.c0;
                    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gc;
                }
                break;
            case Op::Gather:
                if (wants_grad(n.in[0])) {
                    TensorT<S>& ga = grad_of(n.in[0]);
                    for (std::size_t i = 0; i < g.size(); ++i)
                        ga[static_cast<std::size_t>(n.map[i])] += g[i];
                }
                break;
            case Op::StackRows: {
                const int width = n.val.last_extent();
                for (std::size_t r = 0; r < n.in.size(); ++r) {
                    if (!wants_grad(n.in[r])) continue;
                    TensorT<S>& gr = grad_of(n.in[r]);
                    for (int j = 0; j < width; ++j)
                        gr[static_cast<std::size_t>(j)] += g[r * static_cast<std::size_t>(width) + j];
                }
                break;
            }
            case Op::ConcatRows: {
                const std::size_t asz = val(n.in[0]).size();
                if (wants_grad(n.in[0])) {
                    TensorT<S>& ga = grad_of(n.in[0]);
                    for (std::size_t i = 0; i < asz; ++i) ga[i] += g[i];
                }
                if (wants_grad(n.in[1])) {
                    TensorT<S>& gb = grad_of(n.in[1]);
                    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[asz + i];
                }
                break;
            }
            case Op::ConcatCols: {
                const int rows = n.val.extent(0);
                const int total = n.val.extent(1);
                int off = 0;
                for (Var p : n.in) {
                    const int w = nodes_[static_cast<std::size_t>(p)].val.extent(1);
                    if (wants_grad(p)) {
                        TensorT<S>& gp = grad_of(p);
                        for (int r = 0; r < rows; ++r)
                            for (int j = 0; j < w; ++j)
                                gp[static_cast<std::size_t>(r) * w + j] +=
                                    g[static_cast<std::size_t>(r) * total + off + j];
                    }
                    off += w;
                }
                break;
            }
            case Op::Conv2d: {
                const TensorT<S>& x = val(n.in[0]);
                const TensorT<S>& k = val(n.in[1]);
                const Conv2dDims d = conv2d_dims(x, k, n.stride, n.pad);
                const int pos = d.h_out * d.w_out;
                const int ckk = d.c_in * d.kh * d.kw;
                // dY viewed as [c_out x positions].
                TensorT<S> gflat(Shape{d.c_out, pos}, g.vec());
                if (wants_grad(n.in[1])) {
                    // dK = dY [c_out x pos] * cols [pos x ckk]; cols recomputed, not cached.
                    const TensorT<S> cols = im2col(x, d, n.stride, n.pad);
                    TensorT<S> dk = matmul_ex(gflat, cols, false, false);
                    TensorT<S>& gk = grad_of(n.in[1]);
                    for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += dk[i];
                }
                if (wants_grad(n.in[0])) {
                    TensorT<S> kmat(Shape{d.c_out, ckk}, k.vec());
                    TensorT<S> dcols = matmul_ex(gflat, kmat, true, false); // [pos x ckk]
                    col2im_add(dcols, d, n.stride, n.pad, grad_of(n.in[0]));
                }
                break;
            }
            case Op::MeanSpatial:
                if (wants_grad(n.in[0])) {
                    TensorT<S>& ga = grad_of(n.in[0]);
                    const int c = static_cast<int>(g.size());
                    const int hw = static_cast<int>(ga.size()) / c;
                    for (int ch = 0; ch < c; ++ch) {
                        const S gc = g[static_cast<std::size_t>(ch)] / S(hw);
                        for (int j = 0; j < hw; ++j) ga[static_cast<std::size_t>(ch) * hw + j] += gc;
                    }
                }
                break;
        }
    }

    void backprop_norm(Node& n, bool channelwise) {
        const Var xi = n.in[0], gi = n.in[1], bi = n.in[2];
        const TensorT<S>& x = val(xi);
        const TensorT<S>& gain = val(gi);
        const TensorT<S>& g = n.grad;
        const S eps = n.c0;
        int groups, width;
        if (channelwise) {
            groups = x.extent(0);
            width = x.extent(1) * x.extent(2);
        } else {
            width = x.last_extent();
            groups = x.leading_rows();
        }
        TensorT<S>* gx = wants_grad(xi) ? &grad_of(xi) : nullptr;
        TensorT<S>* gg = wants_grad(gi) ? &grad_of(gi) : nullptr;
        TensorT<S>* gb = wants_grad(bi) ? &grad_of(bi) : nullptr;
        std::vector<S> xhat(static_cast<std::size_t>(width));
        for (int r = 0; r < groups; ++r) {
            const std::size_t off = static_cast<std::size_t>(r) * width;
            S mean = 0;
            for (int j = 0; j < width; ++j) mean += x[off + j];
            mean /= S(width);
            S var = 0;
            for (int j = 0; j < width; ++j) {
                const S d = x[off + j] - mean;
                var += d * d;
            }
            var /= S(width);
            const S inv = S(1) / std::sqrt(var + eps);
            for (int j = 0; j < width; ++j) xhat[static_cast<std::size_t>(j)] = (x[off + j] - mean) * inv;
            // Per-group gain index: channelwise uses the group id, rowwise the column.
            auto gain_at = [&](int j) { return channelwise ? gain[static_cast<std::size_t>(r)] : gain[static_cast<std::size_t>(j)]; };
            if (gx) {
                S m1 = 0, m2 = 0;
                for (int j = 0; j < width; ++j) {
                    const S dg = g[off + j] * gain_at(j);
                    m1 += dg;
                    m2 += dg * xhat[static_cast<std::size_t>(j)];
                }
                m1 /= S(width);
                m2 /= S(width);
                for (int j = 0; j < width; ++j) {
                    const S dg = g[off + j] * gain_at(j);
                    (*gx)[off + j] += (dg - m1 - xhat[static_cast<std::size_t>(j)] * m2) * inv;
                }
            }
            if (gg) {
                if (channelwise) {
                    S acc = 0;
                    for (int j = 0; j < width; ++j) acc += g[off + j] * xhat[static_cast<std::size_t>(j)];
                    (*gg)[static_cast<std::size_t>(r)] += acc;
                } else {
                    for (int j = 0; j < width; ++j)
                        (*gg)[static_cast<std::size_t>(j)] += g[off + j] * xhat[static_cast<std::size_t>(j)];
                }
            }
            if (gb) {
                if (channelwise) {
                    S acc = 0;
                    for (int j = 0; j < width; ++j) acc += g[off + j];
                    (*gb)[static_cast<std::size_t>(r)] += acc;
                } else {
                    for (int j = 0; j < width; ++j) (*gb)[static_cast<std::size_t>(j)] += g[off + j];
                }
            }
        }
    }

    void pass_through(Var v, const TensorT<S>& g) {
        if (!wants_grad(v)) return;
        TensorT<S>& gv = grad_of(v);
        for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }

    void accumulate(Var v, const TensorT<S>& delta) {
        TensorT<S>& gv = grad_of(v);
        for (std::size_t i = 0; i < delta.size(); ++i) gv[i] += delta[i];
    }

    std::vector<Node> nodes_;
};

using Graph = GraphT<float>;
using Graph64 = GraphT<double>;

} // namespace dmad
