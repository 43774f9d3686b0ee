#include "dpgan/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dpgan::kernels {

namespace {

std::atomic<bool> g_parallel{true};
std::atomic<bool> g_det_reductions{true};

void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

void check_conv_shapes(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad) {
    require(x.rank() == 4 && w.rank() == 4, "conv2d: inputs must be 4D");
    require(w.dim(2) == w.dim(3), "conv2d: kernel must be square");
    require(x.dim(1) == w.dim(1), "conv2d: channel mismatch");
    require(stride >= 1 && pad >= 0, "conv2d: bad stride or pad");
    if (b) require(b->rank() == 1 && b->dim(0) == w.dim(0), "conv2d: bias shape");
}

// Valid output range [lo, hi] for one kernel offset: positions where the
// tapped input index o*stride + k - pad lands inside [0, in).
inline void tap_range(int in, int out, int k, int stride, int pad, int& lo, int& hi) {
    int a = pad - k;
    lo = a <= 0 ? 0 : (a + stride - 1) / stride;
    int top = in - 1 + pad - k;
    hi = top < 0 ? -1 : std::min(out - 1, top / stride);
}

}  // namespace

void set_parallel(bool on) { g_parallel = on; }
bool parallel() { return g_parallel; }
void set_deterministic_reductions(bool on) { g_det_reductions = on; }
bool deterministic_reductions() { return g_det_reductions; }

int conv_out_dim(int in, int k, int stride, int pad) {
    int v = (in + 2 * pad - k) / stride + 1;
    require(v >= 1, "conv2d: output dimension would be empty");
    return v;
}

// ---- naive serial references (independent of the tuned kernels; kept for
// ---- correctness tests and the kernel benchmark) ----

void conv2d_forward_serial(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad,
                           Tensor& out) {
    check_conv_shapes(x, w, b, stride, pad);
    const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(0), K = w.dim(2);
    const int Ho = out.dim(2), Wo = out.dim(3);
    for (int n = 0; n < B; ++n)
        for (int co = 0; co < Co; ++co)
            for (int yo = 0; yo < Ho; ++yo)
                for (int xo = 0; xo < Wo; ++xo) {
                    double acc = b ? (*b)[static_cast<std::size_t>(co)] : 0.0;
                    for (int ci = 0; ci < Ci; ++ci)
                        for (int ky = 0; ky < K; ++ky)
                            for (int kx = 0; kx < K; ++kx) {
                                const int y = yo * stride + ky - pad;
                                const int xc = xo * stride + kx - pad;
                                if (y < 0 || y >= H || xc < 0 || xc >= W) continue;
                                acc += w.at4(co, ci, ky, kx) * x.at4(n, ci, y, xc);
                            }
                    out.at4(n, co, yo, xo) = acc;
                }
}

void conv2d_grad_input_serial(const Tensor& gy, const Tensor& w, int stride, int pad, Tensor& gx) {
    const int B = gx.dim(0), Ci = gx.dim(1), H = gx.dim(2), W = gx.dim(3);
    const int Co = w.dim(0), K = w.dim(2);
    const int Ho = gy.dim(2), Wo = gy.dim(3);
    for (int n = 0; n < B; ++n)
        for (int co = 0; co < Co; ++co)
            for (int yo = 0; yo < Ho; ++yo)
                for (int xo = 0; xo < Wo; ++xo) {
                    const double g = gy.at4(n, co, yo, xo);
                    for (int ci = 0; ci < Ci; ++ci)
                        for (int ky = 0; ky < K; ++ky)
                            for (int kx = 0; kx < K; ++kx) {
                                const int y = yo * stride + ky - pad;
                                const int xc = xo * stride + kx - pad;
                                if (y < 0 || y >= H || xc < 0 || xc >= W) continue;
                                gx.at4(n, ci, y, xc) += g * w.at4(co, ci, ky, kx);
                            }
                }
}

void conv2d_grad_weight_serial(const Tensor& gy, const Tensor& x, int stride, int pad, Tensor& gw) {
    const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = gw.dim(0), K = gw.dim(2);
    const int Ho = gy.dim(2), Wo = gy.dim(3);
    for (int n = 0; n < B; ++n)
        for (int co = 0; co < Co; ++co)
            for (int yo = 0; yo < Ho; ++yo)
                for (int xo = 0; xo < Wo; ++xo) {
                    const double g = gy.at4(n, co, yo, xo);
                    for (int ci = 0; ci < Ci; ++ci)
                        for (int ky = 0; ky < K; ++ky)
                            for (int kx = 0; kx < K; ++kx) {
                                const int y = yo * stride + ky - pad;
                                const int xc = xo * stride + kx - pad;
                                if (y < 0 || y >= H || xc < 0 || xc >= W) continue;
                                gw.at4(co, ci, ky, kx) += g * x.at4(n, ci, y, xc);
                            }
                }
}

void conv2d_grad_bias_serial(const Tensor& gy, Tensor& gb) {
    const int B = gy.dim(0), C = gy.dim(1), HW = gy.dim(2) * gy.dim(3);
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int n = 0; n < B; ++n) {
            const double* p = gy.data() + gy.idx4(n, c, 0, 0);
            for (int i = 0; i < HW; ++i) acc += p[i];
        }
        gb[static_cast<std::size_t>(c)] += acc;
    }
}

// ---- tuned kernels; parallelism is over independent output slices, and each
// ---- slice accumulates serially in a fixed order, so results do not depend
// ---- on the thread count ----

namespace {

// 3x3 stride-1 pad-1 layers dominate training cost, so they get a fused
// path: all nine taps of a channel are applied in one pass over each output
// row, instead of nine separate read-modify-write passes over the slice.
// `acc_row` adds one channel's contribution to output row y.
inline void k3_acc_row(const double* __restrict xs, const double* __restrict wk, int H, int W,
                       int y, double* __restrict orow) {
    const double* r0 = y > 0 ? xs + (y - 1) * W : nullptr;
    const double* r1 = xs + y * W;
    const double* r2 = y + 1 < H ? xs + (y + 1) * W : nullptr;
    if (r0 && r2 && W >= 3) {
        const double w00 = wk[0], w01 = wk[1], w02 = wk[2];
        const double w10 = wk[3], w11 = wk[4], w12 = wk[5];
        const double w20 = wk[6], w21 = wk[7], w22 = wk[8];
        orow[0] += w01 * r0[0] + w02 * r0[1] + w11 * r1[0] + w12 * r1[1] + w21 * r2[0] +
                   w22 * r2[1];
        for (int xo = 1; xo + 1 < W; ++xo)
            orow[xo] += w00 * r0[xo - 1] + w01 * r0[xo] + w02 * r0[xo + 1] + w10 * r1[xo - 1] +
                        w11 * r1[xo] + w12 * r1[xo + 1] + w20 * r2[xo - 1] + w21 * r2[xo] +
                        w22 * r2[xo + 1];
        const int e = W - 1;
        orow[e] += w00 * r0[e - 1] + w01 * r0[e] + w10 * r1[e - 1] + w11 * r1[e] +
                   w20 * r2[e - 1] + w21 * r2[e];
        return;
    }
    // Boundary rows (and very narrow slices): guarded taps.
    for (int xo = 0; xo < W; ++xo) {
        double acc = 0.0;
        for (int ky = 0; ky < 3; ++ky) {
            const int yy = y + ky - 1;
            if (yy < 0 || yy >= H) continue;
            const double* xr = xs + yy * W;
            for (int kx = 0; kx < 3; ++kx) {
                const int xx = xo + kx - 1;
                if (xx < 0 || xx >= W) continue;
                acc += wk[ky * 3 + kx] * xr[xx];
            }
        }
        orow[xo] += acc;
    }
}

void conv_fwd_slice_k3(const Tensor& x, const Tensor& w, const Tensor* bias, Tensor& out, int b,
                       int co) {
    const int Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    double* oslice = out.data() + out.idx4(b, co, 0, 0);
    const double bv = bias ? (*bias)[static_cast<std::size_t>(co)] : 0.0;
    for (int i = 0; i < H * W; ++i) oslice[i] = bv;
    for (int ci = 0; ci < Ci; ++ci) {
        const double* xs = x.data() + x.idx4(b, ci, 0, 0);
        const double* wk = w.data() + w.idx4(co, ci, 0, 0);
        for (int y = 0; y < H; ++y) k3_acc_row(xs, wk, H, W, y, oslice + y * W);
    }
}

// Input gradient of the same layer shape: a full correlation with the
// 180-degree rotated kernel, which reuses the fused row pass.
void conv_gx_slice_k3(const Tensor& gy, const Tensor& w, Tensor& gx, int b, int ci) {
    const int Co = w.dim(0), H = gx.dim(2), W = gx.dim(3);
    double* gslice = gx.data() + gx.idx4(b, ci, 0, 0);
    for (int co = 0; co < Co; ++co) {
        const double* gys = gy.data() + gy.idx4(b, co, 0, 0);
        const double* wk = w.data() + w.idx4(co, ci, 0, 0);
        const double wrot[9] = {wk[8], wk[7], wk[6], wk[5], wk[4], wk[3], wk[2], wk[1], wk[0]};
        for (int y = 0; y < H; ++y) k3_acc_row(gys, wrot, H, W, y, gslice + y * W);
    }
}

void conv_fwd_slice(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad,
                    Tensor& out, int b, int co) {
    const int Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int K = w.dim(2);
    const int Ho = out.dim(2), Wo = out.dim(3);
    double* oslice = out.data() + out.idx4(b, co, 0, 0);
    const double bv = bias ? (*bias)[static_cast<std::size_t>(co)] : 0.0;
    for (int i = 0; i < Ho * Wo; ++i) oslice[i] = bv;
    for (int ci = 0; ci < Ci; ++ci) {
        const double* xslice = x.data() + x.idx4(b, ci, 0, 0);
        const double* wk = w.data() + w.idx4(co, ci, 0, 0);
        for (int ky = 0; ky < K; ++ky) {
            int ylo, yhi;
            tap_range(H, Ho, ky, stride, pad, ylo, yhi);
            for (int kx = 0; kx < K; ++kx) {
                const double wv = wk[ky * K + kx];
                int xlo, xhi;
                tap_range(W, Wo, kx, stride, pad, xlo, xhi);
                if (stride == 1) {
                    const int off = kx - pad;
                    for (int yo = ylo; yo <= yhi; ++yo) {
                        const double* xr = xslice + (yo + ky - pad) * W + off;
                        double* orow = oslice + yo * Wo;
                        for (int xo = xlo; xo <= xhi; ++xo) orow[xo] += wv * xr[xo];
                    }
                } else {
                    for (int yo = ylo; yo <= yhi; ++yo) {
                        const double* xr = xslice + (yo * stride + ky - pad) * W + kx - pad;
                        double* orow = oslice + yo * Wo;
                        for (int xo = xlo; xo <= xhi; ++xo) orow[xo] += wv * xr[xo * stride];
                    }
                }
            }
        }
    }
}

void conv_gx_slice(const Tensor& gy, const Tensor& w, int stride, int pad, Tensor& gx, int b,
                   int ci) {
    const int Co = w.dim(0), K = w.dim(2);
    const int Ho = gy.dim(2), Wo = gy.dim(3);
    const int H = gx.dim(2), W = gx.dim(3);
    double* gslice = gx.data() + gx.idx4(b, ci, 0, 0);
    for (int co = 0; co < Co; ++co) {
        const double* gyslice = gy.data() + gy.idx4(b, co, 0, 0);
        const double* wk = w.data() + w.idx4(co, ci, 0, 0);
        for (int ky = 0; ky < K; ++ky) {
            int ylo, yhi;
            tap_range(H, Ho, ky, stride, pad, ylo, yhi);
            for (int kx = 0; kx < K; ++kx) {
                const double wv = wk[ky * K + kx];
                int xlo, xhi;
                tap_range(W, Wo, kx, stride, pad, xlo, xhi);
                if (stride == 1) {
                    const int off = kx - pad;
                    for (int yo = ylo; yo <= yhi; ++yo) {
                        const double* gr = gyslice + yo * Wo;
                        double* gxr = gslice + (yo + ky - pad) * W + off;
                        for (int xo = xlo; xo <= xhi; ++xo) gxr[xo] += wv * gr[xo];
                    }
                } else {
                    for (int yo = ylo; yo <= yhi; ++yo) {
                        const double* gr = gyslice + yo * Wo;
                        double* gxr = gslice + (yo * stride + ky - pad) * W + kx - pad;
                        for (int xo = xlo; xo <= xhi; ++xo) gxr[xo * stride] += wv * gr[xo];
                    }
                }
            }
        }
    }
}

// Dot products accumulate into a fixed lane array so the sum vectorizes with
// a data-independent association order (bitwise reproducible across runs).
inline double dot_lanes(const double* a, const double* b, int n) {
    constexpr int L = 8;
    double lane[L] = {0, 0, 0, 0, 0, 0, 0, 0};
    int i = 0;
    for (; i + L <= n; i += L)
        for (int l = 0; l < L; ++l) lane[l] += a[i + l] * b[i + l];
    double tail = 0.0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return (((lane[0] + lane[1]) + (lane[2] + lane[3])) +
            ((lane[4] + lane[5]) + (lane[6] + lane[7]))) +
           tail;
}

// Three shifted dot products in one pass: d[k] = sum_i g[i] * x[i + k].
// Lane accumulators keep the association order fixed and vectorizable.
inline void dot3_lanes(const double* __restrict g, const double* __restrict x, int n, double* d) {
    constexpr int L = 8;
    double l0[L] = {0, 0, 0, 0, 0, 0, 0, 0};
    double l1[L] = {0, 0, 0, 0, 0, 0, 0, 0};
    double l2[L] = {0, 0, 0, 0, 0, 0, 0, 0};
    int i = 0;
    for (; i + L <= n; i += L)
        for (int l = 0; l < L; ++l) {
            const double gv = g[i + l];
            l0[l] += gv * x[i + l];
            l1[l] += gv * x[i + l + 1];
            l2[l] += gv * x[i + l + 2];
        }
    double t0 = 0.0, t1 = 0.0, t2 = 0.0;
    for (; i < n; ++i) {
        const double gv = g[i];
        t0 += gv * x[i];
        t1 += gv * x[i + 1];
        t2 += gv * x[i + 2];
    }
    d[0] = (((l0[0] + l0[1]) + (l0[2] + l0[3])) + ((l0[4] + l0[5]) + (l0[6] + l0[7]))) + t0;
    d[1] = (((l1[0] + l1[1]) + (l1[2] + l1[3])) + ((l1[4] + l1[5]) + (l1[6] + l1[7]))) + t1;
    d[2] = (((l2[0] + l2[1]) + (l2[2] + l2[3])) + ((l2[4] + l2[5]) + (l2[6] + l2[7]))) + t2;
}

// Weight gradient of the fused 3x3 stride-1 pad-1 layer: for each kernel row,
// one sweep of the overlapping output/input rows yields all three column taps.
void conv_gw_slice_k3(const Tensor& gy, const Tensor& x, Tensor& gw, int co) {
    const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    for (int ci = 0; ci < Ci; ++ci) {
        double* wk = gw.data() + gw.idx4(co, ci, 0, 0);
        double acc[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
        for (int n = 0; n < B; ++n) {
            const double* gyslice = gy.data() + gy.idx4(n, co, 0, 0);
            const double* xslice = x.data() + x.idx4(n, ci, 0, 0);
            for (int ky = 0; ky < 3; ++ky) {
                const int ylo = ky == 0 ? 1 : 0;
                const int yhi = ky == 2 ? H - 2 : H - 1;
                double row_acc[3] = {0, 0, 0};
                for (int yo = ylo; yo <= yhi; ++yo) {
                    const double* gr = gyslice + yo * W;
                    const double* xr = xslice + (yo + ky - 1) * W;
                    double d[3];
                    dot3_lanes(gr + 1, xr, W - 2, d);
                    // Edge columns complete the taps they participate in.
                    d[0] += gr[W - 1] * xr[W - 2];
                    d[1] += gr[0] * xr[0] + gr[W - 1] * xr[W - 1];
                    d[2] += gr[0] * xr[1];
                    row_acc[0] += d[0];
                    row_acc[1] += d[1];
                    row_acc[2] += d[2];
                }
                acc[ky * 3 + 0] += row_acc[0];
                acc[ky * 3 + 1] += row_acc[1];
                acc[ky * 3 + 2] += row_acc[2];
            }
        }
        for (int k = 0; k < 9; ++k) wk[k] += acc[k];
    }
}

void conv_gw_slice(const Tensor& gy, const Tensor& x, int stride, int pad, Tensor& gw, int co) {
    const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int K = gw.dim(2);
    const int Ho = gy.dim(2), Wo = gy.dim(3);
    for (int ci = 0; ci < Ci; ++ci) {
        double* wk = gw.data() + gw.idx4(co, ci, 0, 0);
        for (int ky = 0; ky < K; ++ky) {
            int ylo, yhi;
            tap_range(H, Ho, ky, stride, pad, ylo, yhi);
            for (int kx = 0; kx < K; ++kx) {
                int xlo, xhi;
                tap_range(W, Wo, kx, stride, pad, xlo, xhi);
                double acc = 0.0;
                for (int n = 0; n < B; ++n) {
                    const double* gyslice = gy.data() + gy.idx4(n, co, 0, 0);
                    const double* xslice = x.data() + x.idx4(n, ci, 0, 0);
                    if (stride == 1) {
                        const int off = kx - pad;
                        for (int yo = ylo; yo <= yhi; ++yo) {
                            const double* gr = gyslice + yo * Wo;
                            const double* xr = xslice + (yo + ky - pad) * W + off;
                            acc += dot_lanes(gr + xlo, xr + xlo, xhi - xlo + 1);
                        }
                    } else {
                        for (int yo = ylo; yo <= yhi; ++yo) {
                            const double* gr = gyslice + yo * Wo;
                            const double* xr = xslice + (yo * stride + ky - pad) * W + kx - pad;
                            double dot = 0.0;
                            for (int xo = xlo; xo <= xhi; ++xo) dot += gr[xo] * xr[xo * stride];
                            acc += dot;
                        }
                    }
                }
                wk[ky * K + kx] += acc;
            }
        }
    }
}

}  // namespace

void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad,
                    Tensor& out) {
    check_conv_shapes(x, w, b, stride, pad);
    const int B = x.dim(0), Co = w.dim(0);
    const long total = static_cast<long>(B) * Co;
    const bool k3 = w.dim(2) == 3 && stride == 1 && pad == 1;
    if (!parallel()) {
        for (long t = 0; t < total; ++t) {
            const int n = static_cast<int>(t / Co), co = static_cast<int>(t % Co);
            if (k3)
                conv_fwd_slice_k3(x, w, b, out, n, co);
            else
                conv_fwd_slice(x, w, b, stride, pad, out, n, co);
        }
        return;
    }
#pragma omp parallel for schedule(static)
    for (long t = 0; t < total; ++t) {
        const int n = static_cast<int>(t / Co), co = static_cast<int>(t % Co);
        if (k3)
            conv_fwd_slice_k3(x, w, b, out, n, co);
        else
            conv_fwd_slice(x, w, b, stride, pad, out, n, co);
    }
}

void conv2d_grad_input(const Tensor& gy, const Tensor& w, int stride, int pad, Tensor& gx) {
    const int B = gx.dim(0), Ci = gx.dim(1);
    const long total = static_cast<long>(B) * Ci;
    const bool k3 = w.dim(2) == 3 && stride == 1 && pad == 1;
    if (!parallel()) {
        for (long t = 0; t < total; ++t) {
            const int n = static_cast<int>(t / Ci), ci = static_cast<int>(t % Ci);
            if (k3)
                conv_gx_slice_k3(gy, w, gx, n, ci);
            else
                conv_gx_slice(gy, w, stride, pad, gx, n, ci);
        }
        return;
    }
#pragma omp parallel for schedule(static)
    for (long t = 0; t < total; ++t) {
        const int n = static_cast<int>(t / Ci), ci = static_cast<int>(t % Ci);
        if (k3)
            conv_gx_slice_k3(gy, w, gx, n, ci);
        else
            conv_gx_slice(gy, w, stride, pad, gx, n, ci);
    }
}

void conv2d_grad_weight(const Tensor& gy, const Tensor& x, int stride, int pad, Tensor& gw) {
    const int Co = gw.dim(0);
    const bool k3 = gw.dim(2) == 3 && stride == 1 && pad == 1 && x.dim(3) >= 3;
    if (!parallel()) {
        for (int co = 0; co < Co; ++co) {
            if (k3)
                conv_gw_slice_k3(gy, x, gw, co);
            else
                conv_gw_slice(gy, x, stride, pad, gw, co);
        }
        return;
    }
#pragma omp parallel for schedule(static)
    for (int co = 0; co < Co; ++co) {
        if (k3)
            conv_gw_slice_k3(gy, x, gw, co);
        else
            conv_gw_slice(gy, x, stride, pad, gw, co);
    }
}

void conv2d_grad_bias(const Tensor& gy, Tensor& gb) {
    if (!parallel()) return conv2d_grad_bias_serial(gy, gb);
    const int B = gy.dim(0), C = gy.dim(1), HW = gy.dim(2) * gy.dim(3);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int n = 0; n < B; ++n) {
            const double* p = gy.data() + gy.idx4(n, c, 0, 0);
            for (int i = 0; i < HW; ++i) acc += p[i];
        }
        gb[static_cast<std::size_t>(c)] += acc;
    }
}

namespace {

template <typename F>
void for_each_slice(int B, int C, bool par, F&& f) {
    const long total = static_cast<long>(B) * C;
    if (!par) {
        for (long t = 0; t < total; ++t) f(static_cast<int>(t / C), static_cast<int>(t % C));
        return;
    }
#pragma omp parallel for schedule(static)
    for (long t = 0; t < total; ++t) f(static_cast<int>(t / C), static_cast<int>(t % C));
}

void up_slice(const Tensor& x, int f, Tensor& out, int n, int c) {
    const int H = x.dim(2), W = x.dim(3);
    const double* xs = x.data() + x.idx4(n, c, 0, 0);
    double* os = out.data() + out.idx4(n, c, 0, 0);
    const int Wo = W * f;
    for (int y = 0; y < H * f; ++y) {
        const double* xr = xs + (y / f) * W;
        double* orow = os + y * Wo;
        for (int xo = 0; xo < Wo; ++xo) orow[xo] = xr[xo / f];
    }
}

void up_grad_slice(const Tensor& gy, int f, Tensor& gx, int n, int c) {
    const int H = gx.dim(2), W = gx.dim(3);
    const double* gs = gy.data() + gy.idx4(n, c, 0, 0);
    double* xs = gx.data() + gx.idx4(n, c, 0, 0);
    const int Wo = W * f;
    for (int yo = 0; yo < H * f; ++yo) {
        const double* gr = gs + yo * Wo;
        double* xr = xs + (yo / f) * W;
        for (int xo = 0; xo < Wo; ++xo) xr[xo / f] += gr[xo];
    }
}

void down_slice(const Tensor& x, int f, Tensor& out, int n, int c) {
    const int Ho = out.dim(2), Wo = out.dim(3);
    const int W = x.dim(3);
    const double* xs = x.data() + x.idx4(n, c, 0, 0);
    double* os = out.data() + out.idx4(n, c, 0, 0);
    for (int y = 0; y < Ho; ++y) {
        const double* xr = xs + y * f * W;
        double* orow = os + y * Wo;
        for (int xo = 0; xo < Wo; ++xo) orow[xo] = xr[xo * f];
    }
}

void down_grad_slice(const Tensor& gy, int f, Tensor& gx, int n, int c) {
    const int Ho = gy.dim(2), Wo = gy.dim(3);
    const int W = gx.dim(3);
    const double* gs = gy.data() + gy.idx4(n, c, 0, 0);
    double* xs = gx.data() + gx.idx4(n, c, 0, 0);
    for (int y = 0; y < Ho; ++y) {
        const double* gr = gs + y * Wo;
        double* xr = xs + y * f * W;
        for (int xo = 0; xo < Wo; ++xo) xr[xo * f] += gr[xo];
    }
}

void check_resample(const Tensor& x, int f) {
    require(x.rank() == 4, "resample: input must be 4D");
    require(f >= 1, "resample: factor must be positive");
}

}  // namespace

void upsample_nearest(const Tensor& x, int f, Tensor& out) {
    check_resample(x, f);
    for_each_slice(x.dim(0), x.dim(1), parallel(), [&](int n, int c) { up_slice(x, f, out, n, c); });
}
void upsample_nearest_serial(const Tensor& x, int f, Tensor& out) {
    check_resample(x, f);
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H * f; ++y)
                for (int xo = 0; xo < W * f; ++xo)
                    out.at4(n, c, y, xo) = x.at4(n, c, y / f, xo / f);
}
void upsample_nearest_grad(const Tensor& gy, int f, Tensor& gx) {
    for_each_slice(gx.dim(0), gx.dim(1), parallel(),
                   [&](int n, int c) { up_grad_slice(gy, f, gx, n, c); });
}
void upsample_nearest_grad_serial(const Tensor& gy, int f, Tensor& gx) {
    const int B = gx.dim(0), C = gx.dim(1), H = gx.dim(2), W = gx.dim(3);
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c)
            for (int yo = 0; yo < H * f; ++yo)
                for (int xo = 0; xo < W * f; ++xo)
                    gx.at4(n, c, yo / f, xo / f) += gy.at4(n, c, yo, xo);
}

void downsample_nearest(const Tensor& x, int f, Tensor& out) {
    check_resample(x, f);
    require(x.dim(2) % f == 0 && x.dim(3) % f == 0, "downsample: size not divisible by factor");
    for_each_slice(x.dim(0), x.dim(1), parallel(),
                   [&](int n, int c) { down_slice(x, f, out, n, c); });
}
void downsample_nearest_serial(const Tensor& x, int f, Tensor& out) {
    check_resample(x, f);
    require(x.dim(2) % f == 0 && x.dim(3) % f == 0, "downsample: size not divisible by factor");
    const int B = x.dim(0), C = x.dim(1);
    const int Ho = x.dim(2) / f, Wo = x.dim(3) / f;
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < Ho; ++y)
                for (int xo = 0; xo < Wo; ++xo) out.at4(n, c, y, xo) = x.at4(n, c, y * f, xo * f);
}
void downsample_nearest_grad(const Tensor& gy, int f, Tensor& gx) {
    for_each_slice(gx.dim(0), gx.dim(1), parallel(),
                   [&](int n, int c) { down_grad_slice(gy, f, gx, n, c); });
}
void downsample_nearest_grad_serial(const Tensor& gy, int f, Tensor& gx) {
    const int B = gy.dim(0), C = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < Ho; ++y)
                for (int xo = 0; xo < Wo; ++xo) gx.at4(n, c, y * f, xo * f) += gy.at4(n, c, y, xo);
}

namespace {

void mean_var_channel(const Tensor& x, int c, double& mu, double& var) {
    const int B = x.dim(0), H = x.dim(2), W = x.dim(3);
    const std::size_t M = static_cast<std::size_t>(B) * H * W;
    double s = 0.0;
    for (int n = 0; n < B; ++n) {
        const double* p = x.data() + x.idx4(n, c, 0, 0);
        for (int i = 0; i < H * W; ++i) s += p[i];
    }
    mu = s / static_cast<double>(M);
    double s2 = 0.0;
    for (int n = 0; n < B; ++n) {
        const double* p = x.data() + x.idx4(n, c, 0, 0);
        for (int i = 0; i < H * W; ++i) {
            const double d = p[i] - mu;
            s2 += d * d;
        }
    }
    var = s2 / static_cast<double>(M);
}

}  // namespace

void channel_mean_var(const Tensor& x, std::vector<double>& mu, std::vector<double>& var) {
    const int C = x.dim(1);
    mu.assign(static_cast<std::size_t>(C), 0.0);
    var.assign(static_cast<std::size_t>(C), 0.0);
    if (!parallel()) {
        for (int c = 0; c < C; ++c) mean_var_channel(x, c, mu[c], var[c]);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) mean_var_channel(x, c, mu[c], var[c]);
}

void channel_mean_var_serial(const Tensor& x, std::vector<double>& mu, std::vector<double>& var) {
    const int C = x.dim(1);
    mu.assign(static_cast<std::size_t>(C), 0.0);
    var.assign(static_cast<std::size_t>(C), 0.0);
    for (int c = 0; c < C; ++c) mean_var_channel(x, c, mu[c], var[c]);
}

double sum_array(const double* p, std::size_t n) {
    if (deterministic_reductions() || !parallel()) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += p[i];
        return s;
    }
    double s = 0.0;
    const long ln = static_cast<long>(n);
#pragma omp parallel for schedule(static) reduction(+ : s)
    for (long i = 0; i < ln; ++i) s += p[i];
    return s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    const long ln = static_cast<long>(n);
    if (parallel() && n > 65536) {
#pragma omp parallel for schedule(static)
        for (long i = 0; i < ln; ++i) y[i] += a * x[i];
    } else {
        for (long i = 0; i < ln; ++i) y[i] += a * x[i];
    }
}

}  // namespace dpgan::kernels
