#include "seglife/graph.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace seglife {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

namespace {

// im2col for a 3x3 same-padded kernel: rows are (c,dh,dw), columns are pixels.
void im2col3x3(const Tensor& x, int n, RowMat& col) {
    const int C = x.dim(1), H = x.dim(2), W = x.dim(3);
    col.setZero(C * 9, H * W);
    for (int c = 0; c < C; ++c) {
        for (int dh = 0; dh < 3; ++dh) {
            for (int dw = 0; dw < 3; ++dw) {
                const int row = (c * 3 + dh) * 3 + dw;
                double* out = col.row(row).data();
                for (int h = 0; h < H; ++h) {
                    const int ih = h + dh - 1;
                    if (ih < 0 || ih >= H) continue;
                    const double* src = &x.data[((static_cast<size_t>(n) * C + c) * H + ih) * W];
                    const int w0 = std::max(0, 1 - dw);
                    const int w1 = std::min(W, W + 1 - dw);
                    for (int w = w0; w < w1; ++w) out[h * W + w] = src[w + dw - 1];
                }
            }
        }
    }
}

void col2im3x3(const RowMat& col, int n, std::vector<double>& dx, int C, int H, int W) {
    for (int c = 0; c < C; ++c) {
        for (int dh = 0; dh < 3; ++dh) {
            for (int dw = 0; dw < 3; ++dw) {
                const int row = (c * 3 + dh) * 3 + dw;
                const double* src = col.row(row).data();
                for (int h = 0; h < H; ++h) {
                    const int ih = h + dh - 1;
                    if (ih < 0 || ih >= H) continue;
                    double* dst = &dx[((static_cast<size_t>(n) * C + c) * H + ih) * W];
                    const int w0 = std::max(0, 1 - dw);
                    const int w1 = std::min(W, W + 1 - dw);
                    for (int w = w0; w < w1; ++w) dst[w + dw - 1] += src[h * W + w];
                }
            }
        }
    }
}

struct AxisLerp {
    std::vector<int> i0, i1;
    std::vector<double> t;
};

// Half-pixel-center (align-corners-false) factor-2 source coordinates.
AxisLerp make_axis_lerp(int in_len) {
    AxisLerp a;
    const int out_len = 2 * in_len;
    a.i0.resize(out_len);
    a.i1.resize(out_len);
    a.t.resize(out_len);
    for (int o = 0; o < out_len; ++o) {
        const double src = (o + 0.5) / 2.0 - 0.5;
        const double f = std::floor(src);
        const int i = static_cast<int>(f);
        a.t[o] = src - f;
        a.i0[o] = std::clamp(i, 0, in_len - 1);
        a.i1[o] = std::clamp(i + 1, 0, in_len - 1);
    }
    return a;
}

} // namespace

int conv2d(Graph& g, int input, int weight) {
    const Tensor& x = g.value(input);
    const Tensor& w = g.value(weight);
    if (x.ndim() != 4 || w.ndim() != 4)
        throw ShapeError("conv2d expects 4-d input/weight, got " + x.shape_str() + " and " + w.shape_str());
    if (w.dim(2) != 3 || w.dim(3) != 3)
        throw ShapeError("conv2d kernel must be 3x3, got " + w.shape_str());
    if (x.dim(1) != w.dim(1))
        throw ShapeError("conv2d channel mismatch: input " + x.shape_str() + " vs weight " + w.shape_str());
    const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), K = Cin * 9;

    Tensor y({N, Cout, H, W});
    CMapMat wm(w.data.data(), Cout, K);
    RowMat col;
    for (int n = 0; n < N; ++n) {
        im2col3x3(x, n, col);
        MapMat ym(&y.data[static_cast<size_t>(n) * Cout * H * W], Cout, H * W);
        ym.noalias() = wm * col;
    }

    return g.make_node(std::move(y), {input, weight}, [input, weight, N, Cin, Cout, H, W, K](Graph& gg, int self) {
        const Tensor& xx = gg.value(input);
        const Tensor& ww = gg.value(weight);
        const auto& dy = gg.node(self).grad;
        auto* dx = gg.grad_of(input);
        auto* dw = gg.grad_of(weight);
        CMapMat wm2(ww.data.data(), Cout, K);
        RowMat col, dcol;
        for (int n = 0; n < N; ++n) {
            CMapMat dym(&dy[static_cast<size_t>(n) * Cout * H * W], Cout, H * W);
            if (dw || dx) im2col3x3(xx, n, col);
            if (dw) {
                MapMat dwm(dw->data(), Cout, K);
                dwm.noalias() += dym * col.transpose();
            }
            if (dx) {
                dcol.noalias() = wm2.transpose() * dym;
                col2im3x3(dcol, n, *dx, Cin, H, W);
            }
        }
    });
}

int conv1x1(Graph& g, int input, int weight) {
    const Tensor& x = g.value(input);
    const Tensor& w = g.value(weight);
    if (x.ndim() != 4 || w.ndim() != 4 || w.dim(2) != 1 || w.dim(3) != 1)
        throw ShapeError("conv1x1 expects 4-d input and [K,C,1,1] weight, got " + x.shape_str() +
                         " and " + w.shape_str());
    if (x.dim(1) != w.dim(1))
        throw ShapeError("conv1x1 channel mismatch: input " + x.shape_str() + " vs weight " + w.shape_str());
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int K = w.dim(0);
    const int HW = H * W;

    Tensor y({N, K, H, W});
    CMapMat wm(w.data.data(), K, C);
    for (int n = 0; n < N; ++n) {
        CMapMat xm(&x.data[static_cast<size_t>(n) * C * HW], C, HW);
        MapMat ym(&y.data[static_cast<size_t>(n) * K * HW], K, HW);
        ym.noalias() = wm * xm;
    }

    return g.make_node(std::move(y), {input, weight}, [input, weight, N, C, K, HW](Graph& gg, int self) {
        const Tensor& xx = gg.value(input);
        const Tensor& ww = gg.value(weight);
        const auto& dy = gg.node(self).grad;
        auto* dx = gg.grad_of(input);
        auto* dw = gg.grad_of(weight);
        CMapMat wm2(ww.data.data(), K, C);
        for (int n = 0; n < N; ++n) {
            CMapMat dym(&dy[static_cast<size_t>(n) * K * HW], K, HW);
            CMapMat xm(&xx.data[static_cast<size_t>(n) * C * HW], C, HW);
            if (dw) {
                MapMat dwm(dw->data(), K, C);
                dwm.noalias() += dym * xm.transpose();
            }
            if (dx) {
                MapMat dxm(&(*dx)[static_cast<size_t>(n) * C * HW], C, HW);
                dxm.noalias() += wm2.transpose() * dym;
            }
        }
    });
}

int maxpool2(Graph& g, int input) {
    const Tensor& x = g.value(input);
    if (x.ndim() != 4) throw ShapeError("maxpool2 expects 4-d input, got " + x.shape_str());
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw ShapeError("maxpool2 requires even spatial dims, got " + x.shape_str());
    const int Ho = H / 2, Wo = W / 2;

    Tensor y({N, C, Ho, Wo});
    std::vector<size_t> argmax(y.data.size());
    size_t o = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < Ho; ++h)
                for (int w = 0; w < Wo; ++w, ++o) {
                    const size_t base = ((static_cast<size_t>(n) * C + c) * H + 2 * h) * W + 2 * w;
                    size_t best = base;
                    double bv = x.data[base];
                    // first occurrence in row-major order wins ties
                    const size_t cands[3] = {base + 1, base + W, base + W + 1};
                    for (size_t cand : cands)
                        if (x.data[cand] > bv) {
                            bv = x.data[cand];
                            best = cand;
                        }
                    y.data[o] = bv;
                    argmax[o] = best;
                }

    return g.make_node(std::move(y), {input}, [input, argmax = std::move(argmax)](Graph& gg, int self) {
        auto* dx = gg.grad_of(input);
        if (!dx) return;
        const auto& dy = gg.node(self).grad;
        for (size_t i = 0; i < dy.size(); ++i) (*dx)[argmax[i]] += dy[i];
    });
}

int upsample_bilinear2(Graph& g, int input) {
    const Tensor& x = g.value(input);
    if (x.ndim() != 4) throw ShapeError("upsample expects 4-d input, got " + x.shape_str());
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const AxisLerp ay = make_axis_lerp(H), ax = make_axis_lerp(W);

    Tensor y({N, C, 2 * H, 2 * W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* src = &x.data[(static_cast<size_t>(n) * C + c) * H * W];
            double* dst = &y.data[(static_cast<size_t>(n) * C + c) * 4 * H * W];
            for (int oy = 0; oy < 2 * H; ++oy) {
                const double ty = ay.t[oy];
                const double* r0 = src + ay.i0[oy] * W;
                const double* r1 = src + ay.i1[oy] * W;
                for (int ox = 0; ox < 2 * W; ++ox) {
                    const double tx = ax.t[ox];
                    const double v0 = r0[ax.i0[ox]] * (1 - tx) + r0[ax.i1[ox]] * tx;
                    const double v1 = r1[ax.i0[ox]] * (1 - tx) + r1[ax.i1[ox]] * tx;
                    dst[oy * 2 * W + ox] = v0 * (1 - ty) + v1 * ty;
                }
            }
        }

    return g.make_node(std::move(y), {input}, [input, N, C, H, W, ay, ax](Graph& gg, int self) {
        auto* dx = gg.grad_of(input);
        if (!dx) return;
        const auto& dy = gg.node(self).grad;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                double* d = &(*dx)[(static_cast<size_t>(n) * C + c) * H * W];
                const double* gsrc = &dy[(static_cast<size_t>(n) * C + c) * 4 * H * W];
                for (int oy = 0; oy < 2 * H; ++oy) {
                    const double ty = ay.t[oy];
                    for (int ox = 0; ox < 2 * W; ++ox) {
                        const double tx = ax.t[ox];
                        const double gv = gsrc[oy * 2 * W + ox];
                        d[ay.i0[oy] * W + ax.i0[ox]] += gv * (1 - ty) * (1 - tx);
                        d[ay.i0[oy] * W + ax.i1[ox]] += gv * (1 - ty) * tx;
                        d[ay.i1[oy] * W + ax.i0[ox]] += gv * ty * (1 - tx);
                        d[ay.i1[oy] * W + ax.i1[ox]] += gv * ty * tx;
                    }
                }
            }
    });
}

int relu(Graph& g, int input) {
    const Tensor& x = g.value(input);
    Tensor y = x;
    y.requires_grad = false;
    y.grad.reset();
    for (double& v : y.data) v = std::max(v, 0.0);
    return g.make_node(std::move(y), {input}, [input](Graph& gg, int self) {
        auto* dx = gg.grad_of(input);
        if (!dx) return;
        const auto& dy = gg.node(self).grad;
        const auto& xv = gg.value(input).data;
        for (size_t i = 0; i < dy.size(); ++i)
            if (xv[i] > 0.0) (*dx)[i] += dy[i];
    });
}

int concat_channels(Graph& g, const std::vector<int>& inputs) {
    if (inputs.empty()) throw ContractError("concat_channels needs at least one input");
    const Tensor& first = g.value(inputs[0]);
    if (first.ndim() != 4) throw ShapeError("concat expects 4-d inputs, got " + first.shape_str());
    const int N = first.dim(0), H = first.dim(2), W = first.dim(3);
    int Ctot = 0;
    for (int id : inputs) {
        const Tensor& t = g.value(id);
        if (t.ndim() != 4 || t.dim(0) != N || t.dim(2) != H || t.dim(3) != W)
            throw ShapeError("concat inputs disagree: " + first.shape_str() + " vs " + t.shape_str());
        Ctot += t.dim(1);
    }

    Tensor y({N, Ctot, H, W});
    std::vector<int> offsets;
    int off = 0;
    for (int id : inputs) {
        offsets.push_back(off);
        const Tensor& t = g.value(id);
        const int C = t.dim(1);
        for (int n = 0; n < N; ++n)
            std::copy_n(&t.data[static_cast<size_t>(n) * C * H * W], static_cast<size_t>(C) * H * W,
                        &y.data[(static_cast<size_t>(n) * Ctot + off) * H * W]);
        off += C;
    }

    return g.make_node(std::move(y), inputs,
                       [inputs, offsets, N, Ctot, H, W](Graph& gg, int self) {
                           const auto& dy = gg.node(self).grad;
                           for (size_t k = 0; k < inputs.size(); ++k) {
                               auto* dx = gg.grad_of(inputs[k]);
                               if (!dx) continue;
                               const int C = gg.value(inputs[k]).dim(1);
                               for (int n = 0; n < N; ++n) {
                                   const double* src = &dy[(static_cast<size_t>(n) * Ctot + offsets[k]) * H * W];
                                   double* dst = &(*dx)[static_cast<size_t>(n) * C * H * W];
                                   for (size_t i = 0; i < static_cast<size_t>(C) * H * W; ++i) dst[i] += src[i];
                               }
                           }
                       });
}

int softmax_channels(Graph& g, int input) {
    const Tensor& x = g.value(input);
    if (x.ndim() != 4) throw ShapeError("softmax expects 4-d input, got " + x.shape_str());
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const size_t plane = static_cast<size_t>(H) * W;

    Tensor y({N, C, H, W});
    for (int n = 0; n < N; ++n) {
        const double* src = &x.data[static_cast<size_t>(n) * C * plane];
        double* dst = &y.data[static_cast<size_t>(n) * C * plane];
        for (size_t p = 0; p < plane; ++p) {
            double mx = src[p];
            for (int c = 1; c < C; ++c) mx = std::max(mx, src[c * plane + p]);
            double z = 0.0;
            for (int c = 0; c < C; ++c) {
                const double e = std::exp(src[c * plane + p] - mx);
                dst[c * plane + p] = e;
                z += e;
            }
            for (int c = 0; c < C; ++c) dst[c * plane + p] /= z;
        }
    }

    return g.make_node(std::move(y), {input}, [input, N, C, plane](Graph& gg, int self) {
        auto* dx = gg.grad_of(input);
        if (!dx) return;
        const auto& dy = gg.node(self).grad;
        const auto& p = gg.value(self).data;
        for (int n = 0; n < N; ++n) {
            const size_t base = static_cast<size_t>(n) * C * plane;
            for (size_t px = 0; px < plane; ++px) {
                double dot = 0.0;
                for (int c = 0; c < C; ++c) dot += dy[base + c * plane + px] * p[base + c * plane + px];
                for (int c = 0; c < C; ++c)
                    (*dx)[base + c * plane + px] += p[base + c * plane + px] * (dy[base + c * plane + px] - dot);
            }
        }
    });
}

int sum_all(Graph& g, int input) {
    const Tensor& x = g.value(input);
    Tensor y({1});
    for (double v : x.data) y.data[0] += v;
    return g.make_node(std::move(y), {input}, [input](Graph& gg, int self) {
        auto* dx = gg.grad_of(input);
        if (!dx) return;
        const double gv = gg.node(self).grad[0];
        for (double& v : *dx) v += gv;
    });
}

} // namespace seglife
