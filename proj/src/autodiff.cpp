#include "dpgan/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_set>

#include "dpgan/kernels.hpp"

namespace dpgan::ad {

namespace {

bool g_grad_enabled = true;

Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bwd) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool need = g_grad_enabled;
    if (need) {
        bool any = false;
        for (const auto& p : parents)
            if (p && p->requires_grad) {
                any = true;
                break;
            }
        need = any;
    }
    if (need) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward = std::move(bwd);
    }
    return n;
}

void accum(const Var& p, const Tensor& g) {
    if (!p || !p->requires_grad) return;
    Tensor& dst = p->ensure_grad();
    kernels::axpy(1.0, g.data(), dst.data(), dst.size());
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a->value.shape_str() +
                                    " vs " + b->value.shape_str());
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGrad::NoGrad() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGrad::~NoGrad() { g_grad_enabled = prev_; }

Var constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return n;
}

Var leaf(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    return n;
}

Var detach(const Var& x) { return constant(x->value); }

void backward(const Var& root) {
    if (!root) throw std::invalid_argument("backward: null root");
    if (root->value.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    if (!root->requires_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p && p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad.defined()) n->backward(*n);
    }
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const Tensor& xv = x->value;
    const Tensor& wv = w->value;
    Tensor out({xv.dim(0), wv.dim(0), kernels::conv_out_dim(xv.dim(2), wv.dim(2), stride, pad),
                kernels::conv_out_dim(xv.dim(3), wv.dim(3), stride, pad)});
    kernels::conv2d_forward(xv, wv, b ? &b->value : nullptr, stride, pad, out);
    std::vector<Var> parents{x, w};
    if (b) parents.push_back(b);
    return make(std::move(out), std::move(parents), [stride, pad](Node& self) {
        const Var& px = self.parents[0];
        const Var& pw = self.parents[1];
        if (px->requires_grad)
            kernels::conv2d_grad_input(self.grad, pw->value, stride, pad, px->ensure_grad());
        if (pw->requires_grad)
            kernels::conv2d_grad_weight(self.grad, px->value, stride, pad, pw->ensure_grad());
        if (self.parents.size() > 2 && self.parents[2]->requires_grad)
            kernels::conv2d_grad_bias(self.grad, self.parents[2]->ensure_grad());
    });
}

Var batch_standardize(const Var& x, double eps) {
    const Tensor& xv = x->value;
    if (xv.rank() != 4) throw std::invalid_argument("batch_standardize: input must be 4D");
    std::vector<double> mu, var;
    kernels::channel_mean_var(xv, mu, var);
    const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    std::vector<double> sd(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) sd[c] = std::sqrt(var[c] + eps);
    Tensor out(xv.shape);
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            const double* xp = xv.data() + xv.idx4(n, c, 0, 0);
            double* op = out.data() + out.idx4(n, c, 0, 0);
            const double m = mu[c], s = sd[c];
            for (int i = 0; i < H * W; ++i) op[i] = (xp[i] - m) / s;
        }
    return make(std::move(out), {x}, [sd](Node& self) {
        const Var& px = self.parents[0];
        if (!px->requires_grad) return;
        const Tensor& y = self.value;
        const Tensor& g = self.grad;
        Tensor& gx = px->ensure_grad();
        const int B = y.dim(0), C = y.dim(1), HW = y.dim(2) * y.dim(3);
        const double M = static_cast<double>(B) * HW;
        for (int c = 0; c < C; ++c) {
            double gsum = 0.0, gy = 0.0;
            for (int n = 0; n < B; ++n) {
                const double* gp = g.data() + g.idx4(n, c, 0, 0);
                const double* yp = y.data() + y.idx4(n, c, 0, 0);
                for (int i = 0; i < HW; ++i) {
                    gsum += gp[i];
                    gy += gp[i] * yp[i];
                }
            }
            const double gm = gsum / M, pm = gy / M, s = sd[static_cast<std::size_t>(c)];
            for (int n = 0; n < B; ++n) {
                const double* gp = g.data() + g.idx4(n, c, 0, 0);
                const double* yp = y.data() + y.idx4(n, c, 0, 0);
                double* xp = gx.data() + gx.idx4(n, c, 0, 0);
                for (int i = 0; i < HW; ++i) xp[i] += (gp[i] - gm - yp[i] * pm) / s;
            }
        }
    });
}

Var channel_affine(const Var& x, const Var& gain, const Var& bias) {
    const Tensor& xv = x->value;
    const int C = xv.dim(1);
    if (gain->value.size() != static_cast<std::size_t>(C) ||
        bias->value.size() != static_cast<std::size_t>(C))
        throw std::invalid_argument("channel_affine: gain/bias must have one entry per channel");
    const int B = xv.dim(0), HW = xv.dim(2) * xv.dim(3);
    Tensor out(xv.shape);
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            const double* xp = xv.data() + xv.idx4(n, c, 0, 0);
            double* op = out.data() + out.idx4(n, c, 0, 0);
            const double gk = gain->value[static_cast<std::size_t>(c)];
            const double bk = bias->value[static_cast<std::size_t>(c)];
            for (int i = 0; i < HW; ++i) op[i] = xp[i] * gk + bk;
        }
    return make(std::move(out), {x, gain, bias}, [](Node& self) {
        const Var& px = self.parents[0];
        const Var& pg = self.parents[1];
        const Var& pb = self.parents[2];
        const Tensor& g = self.grad;
        const Tensor& xv = px->value;
        const int B = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
        if (px->requires_grad) {
            Tensor& gx = px->ensure_grad();
            for (int n = 0; n < B; ++n)
                for (int c = 0; c < C; ++c) {
                    const double* gp = g.data() + g.idx4(n, c, 0, 0);
                    double* xp = gx.data() + gx.idx4(n, c, 0, 0);
                    const double gk = pg->value[static_cast<std::size_t>(c)];
                    for (int i = 0; i < HW; ++i) xp[i] += gp[i] * gk;
                }
        }
        if (pg->requires_grad || pb->requires_grad) {
            for (int c = 0; c < C; ++c) {
                double sg = 0.0, sgx = 0.0;
                for (int n = 0; n < B; ++n) {
                    const double* gp = g.data() + g.idx4(n, c, 0, 0);
                    const double* xp = xv.data() + xv.idx4(n, c, 0, 0);
                    for (int i = 0; i < HW; ++i) {
                        sg += gp[i];
                        sgx += gp[i] * xp[i];
                    }
                }
                if (pg->requires_grad) pg->ensure_grad()[static_cast<std::size_t>(c)] += sgx;
                if (pb->requires_grad) pb->ensure_grad()[static_cast<std::size_t>(c)] += sg;
            }
        }
    });
}

namespace {

template <typename FwdFn, typename BwdFn>
Var elementwise(const Var& x, FwdFn fwd, BwdFn bwd) {
    const Tensor& xv = x->value;
    Tensor out(xv.shape);
    const double* xp = xv.data();
    double* op = out.data();
    for (std::size_t i = 0; i < xv.size(); ++i) op[i] = fwd(xp[i]);
    return make(std::move(out), {x}, [bwd](Node& self) {
        const Var& px = self.parents[0];
        if (!px->requires_grad) return;
        Tensor& gx = px->ensure_grad();
        const double* gp = self.grad.data();
        const double* xp = px->value.data();
        const double* yp = self.value.data();
        double* dp = gx.data();
        for (std::size_t i = 0; i < gx.size(); ++i) dp[i] += gp[i] * bwd(xp[i], yp[i]);
    });
}

}  // namespace

Var relu(const Var& x) {
    return elementwise(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
    return elementwise(
        x, [slope](double v) { return v > 0.0 ? v : slope * v; },
        [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var tanh_act(const Var& x) {
    return elementwise(
        x, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Var upsample_nearest(const Var& x, int factor) {
    const Tensor& xv = x->value;
    Tensor out({xv.dim(0), xv.dim(1), xv.dim(2) * factor, xv.dim(3) * factor});
    kernels::upsample_nearest(xv, factor, out);
    return make(std::move(out), {x}, [factor](Node& self) {
        const Var& px = self.parents[0];
        if (px->requires_grad) kernels::upsample_nearest_grad(self.grad, factor, px->ensure_grad());
    });
}

Var downsample_nearest(const Var& x, int factor) {
    const Tensor& xv = x->value;
    Tensor out({xv.dim(0), xv.dim(1), xv.dim(2) / factor, xv.dim(3) / factor});
    kernels::downsample_nearest(xv, factor, out);
    return make(std::move(out), {x}, [factor](Node& self) {
        const Var& px = self.parents[0];
        if (px->requires_grad)
            kernels::downsample_nearest_grad(self.grad, factor, px->ensure_grad());
    });
}

Var resample_to(const Var& x, int target) {
    const int h = x->value.dim(2);
    if (h == target) return x;
    if (target > h) {
        if (target % h != 0) throw std::invalid_argument("resample_to: non-integer upsample ratio");
        return upsample_nearest(x, target / h);
    }
    if (h % target != 0) throw std::invalid_argument("resample_to: non-integer downsample ratio");
    return downsample_nearest(x, h / target);
}

Var concat_channels(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
    const int B = parts[0]->value.dim(0), H = parts[0]->value.dim(2), W = parts[0]->value.dim(3);
    int C = 0;
    for (const auto& p : parts) {
        if (p->value.dim(0) != B || p->value.dim(2) != H || p->value.dim(3) != W)
            throw std::invalid_argument("concat_channels: mismatched batch or spatial dims");
        C += p->value.dim(1);
    }
    Tensor out({B, C, H, W});
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (int n = 0; n < B; ++n) {
        std::size_t off = out.idx4(n, 0, 0, 0);
        for (const auto& p : parts) {
            const std::size_t cnt = static_cast<std::size_t>(p->value.dim(1)) * plane;
            std::memcpy(out.data() + off, p->value.data() + p->value.idx4(n, 0, 0, 0),
                        cnt * sizeof(double));
            off += cnt;
        }
    }
    return make(std::move(out), std::vector<Var>(parts), [](Node& self) {
        const Tensor& g = self.grad;
        const int B = g.dim(0);
        const std::size_t plane = static_cast<std::size_t>(g.dim(2)) * g.dim(3);
        for (int n = 0; n < B; ++n) {
            std::size_t off = g.idx4(n, 0, 0, 0);
            for (const auto& p : self.parents) {
                const std::size_t cnt = static_cast<std::size_t>(p->value.dim(1)) * plane;
                if (p->requires_grad) {
                    Tensor& gx = p->ensure_grad();
                    kernels::axpy(1.0, g.data() + off, gx.data() + gx.idx4(n, 0, 0, 0), cnt);
                }
                off += cnt;
            }
        }
    });
}

Var concat_batch(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_batch: no inputs");
    const auto& s0 = parts[0]->value.shape;
    int B = 0;
    for (const auto& p : parts) {
        if (p->value.rank() != 4 || p->value.dim(1) != s0[1] || p->value.dim(2) != s0[2] ||
            p->value.dim(3) != s0[3])
            throw std::invalid_argument("concat_batch: mismatched sample shape");
        B += p->value.dim(0);
    }
    Tensor out({B, s0[1], s0[2], s0[3]});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::memcpy(out.data() + off, p->value.data(), p->value.size() * sizeof(double));
        off += p->value.size();
    }
    return make(std::move(out), std::vector<Var>(parts), [](Node& self) {
        std::size_t off = 0;
        for (const auto& p : self.parents) {
            if (p->requires_grad) {
                Tensor& gx = p->ensure_grad();
                kernels::axpy(1.0, self.grad.data() + off, gx.data(), gx.size());
            }
            off += p->value.size();
        }
    });
}

Var slice_batch(const Var& x, int begin, int end) {
    const Tensor& xv = x->value;
    if (begin < 0 || end > xv.dim(0) || begin >= end)
        throw std::invalid_argument("slice_batch: bad range");
    Tensor out({end - begin, xv.dim(1), xv.dim(2), xv.dim(3)});
    const std::size_t sample = xv.size() / static_cast<std::size_t>(xv.dim(0));
    std::memcpy(out.data(), xv.data() + sample * static_cast<std::size_t>(begin),
                out.size() * sizeof(double));
    return make(std::move(out), {x}, [begin, sample](Node& self) {
        const Var& px = self.parents[0];
        if (!px->requires_grad) return;
        Tensor& gx = px->ensure_grad();
        kernels::axpy(1.0, self.grad.data(), gx.data() + sample * static_cast<std::size_t>(begin),
                      self.grad.size());
    });
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out(a->value.shape);
    const double* pa = a->value.data();
    const double* pb = b->value.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
    return make(std::move(out), {a, b}, [](Node& self) {
        accum(self.parents[0], self.grad);
        accum(self.parents[1], self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a->value.shape);
    const double* pa = a->value.data();
    const double* pb = b->value.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] - pb[i];
    return make(std::move(out), {a, b}, [](Node& self) {
        accum(self.parents[0], self.grad);
        const Var& pb2 = self.parents[1];
        if (pb2->requires_grad) {
            Tensor& gx = pb2->ensure_grad();
            kernels::axpy(-1.0, self.grad.data(), gx.data(), gx.size());
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a->value.shape);
    const double* pa = a->value.data();
    const double* pb = b->value.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] * pb[i];
    return make(std::move(out), {a, b}, [](Node& self) {
        const Var& pa2 = self.parents[0];
        const Var& pb2 = self.parents[1];
        const double* gp = self.grad.data();
        if (pa2->requires_grad) {
            Tensor& gx = pa2->ensure_grad();
            const double* ov = pb2->value.data();
            double* dp = gx.data();
            for (std::size_t i = 0; i < gx.size(); ++i) dp[i] += gp[i] * ov[i];
        }
        if (pb2->requires_grad) {
            Tensor& gx = pb2->ensure_grad();
            const double* ov = pa2->value.data();
            double* dp = gx.data();
            for (std::size_t i = 0; i < gx.size(); ++i) dp[i] += gp[i] * ov[i];
        }
    });
}

Var broadcast_mul(const Var& x, const Var& m) {
    const Tensor& xv = x->value;
    const Tensor& mv = m->value;
    if (mv.dim(0) != xv.dim(0) || mv.dim(1) != 1 || mv.dim(2) != xv.dim(2) ||
        mv.dim(3) != xv.dim(3))
        throw std::invalid_argument("broadcast_mul: mask must be [B,1,H,W] matching x");
    const int B = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    Tensor out(xv.shape);
    for (int n = 0; n < B; ++n) {
        const double* mp = mv.data() + mv.idx4(n, 0, 0, 0);
        for (int c = 0; c < C; ++c) {
            const double* xp = xv.data() + xv.idx4(n, c, 0, 0);
            double* op = out.data() + out.idx4(n, c, 0, 0);
            for (int i = 0; i < HW; ++i) op[i] = xp[i] * mp[i];
        }
    }
    return make(std::move(out), {x, m}, [](Node& self) {
        const Var& px = self.parents[0];
        const Var& pm = self.parents[1];
        const Tensor& g = self.grad;
        const int B = g.dim(0), C = g.dim(1), HW = g.dim(2) * g.dim(3);
        if (px->requires_grad) {
            Tensor& gx = px->ensure_grad();
            for (int n = 0; n < B; ++n) {
                const double* mp = pm->value.data() + pm->value.idx4(n, 0, 0, 0);
                for (int c = 0; c < C; ++c) {
                    const double* gp = g.data() + g.idx4(n, c, 0, 0);
                    double* dp = gx.data() + gx.idx4(n, c, 0, 0);
                    for (int i = 0; i < HW; ++i) dp[i] += gp[i] * mp[i];
                }
            }
        }
        if (pm->requires_grad) {
            Tensor& gm = pm->ensure_grad();
            for (int n = 0; n < B; ++n) {
                double* dp = gm.data() + gm.idx4(n, 0, 0, 0);
                for (int c = 0; c < C; ++c) {
                    const double* gp = g.data() + g.idx4(n, c, 0, 0);
                    const double* xp = px->value.data() + px->value.idx4(n, c, 0, 0);
                    for (int i = 0; i < HW; ++i) dp[i] += gp[i] * xp[i];
                }
            }
        }
    });
}

Var scale(const Var& x, double s) {
    Tensor out(x->value.shape);
    const double* xp = x->value.data();
    double* op = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) op[i] = xp[i] * s;
    return make(std::move(out), {x}, [s](Node& self) {
        const Var& px = self.parents[0];
        if (!px->requires_grad) return;
        Tensor& gx = px->ensure_grad();
        kernels::axpy(s, self.grad.data(), gx.data(), gx.size());
    });
}

Var add_scalar(const Var& x, double s) {
    Tensor out(x->value.shape);
    const double* xp = x->value.data();
    double* op = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) op[i] = xp[i] + s;
    return make(std::move(out), {x},
                [](Node& self) { accum(self.parents[0], self.grad); });
}

Var log_softmax_channels(const Var& x) {
    const Tensor& xv = x->value;
    if (xv.rank() != 4) throw std::invalid_argument("log_softmax: input must be 4D");
    const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    Tensor out(xv.shape);
    for (int n = 0; n < B; ++n) {
        const double* xs = xv.data() + xv.idx4(n, 0, 0, 0);
        double* os = out.data() + out.idx4(n, 0, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) {
            double mx = xs[i];
            for (int c = 1; c < C; ++c) mx = std::max(mx, xs[c * plane + i]);
            double se = 0.0;
            for (int c = 0; c < C; ++c) se += std::exp(xs[c * plane + i] - mx);
            const double lse = mx + std::log(se);
            for (int c = 0; c < C; ++c) os[c * plane + i] = xs[c * plane + i] - lse;
        }
    }
    return make(std::move(out), {x}, [](Node& self) {
        const Var& px = self.parents[0];
        if (!px->requires_grad) return;
        const Tensor& g = self.grad;
        const Tensor& y = self.value;
        Tensor& gx = px->ensure_grad();
        const int B = y.dim(0), C = y.dim(1);
        const std::size_t plane = static_cast<std::size_t>(y.dim(2)) * y.dim(3);
        for (int n = 0; n < B; ++n) {
            const double* gs = g.data() + g.idx4(n, 0, 0, 0);
            const double* ys = y.data() + y.idx4(n, 0, 0, 0);
            double* ds = gx.data() + gx.idx4(n, 0, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                double gsum = 0.0;
                for (int c = 0; c < C; ++c) gsum += gs[c * plane + i];
                for (int c = 0; c < C; ++c)
                    ds[c * plane + i] += gs[c * plane + i] - std::exp(ys[c * plane + i]) * gsum;
            }
        }
    });
}

namespace {

Var reduce_all(const Var& x, double factor) {
    const double s = kernels::sum_array(x->value.data(), x->value.size()) * factor;
    return make(Tensor::scalar(s), {x}, [factor](Node& self) {
        const Var& px = self.parents[0];
        if (!px->requires_grad) return;
        Tensor& gx = px->ensure_grad();
        const double g = self.grad[0] * factor;
        double* dp = gx.data();
        for (std::size_t i = 0; i < gx.size(); ++i) dp[i] += g;
    });
}

}  // namespace

Var sum_all(const Var& x) { return reduce_all(x, 1.0); }

Var mean_all(const Var& x) {
    return reduce_all(x, 1.0 / static_cast<double>(x->value.size()));
}

double spectral_sigma(const Tensor& w, Tensor& u, Tensor& v, bool update, int iters) {
    const int Co = w.dim(0);
    const std::size_t M = w.size() / static_cast<std::size_t>(Co);
    const double* W = w.data();
    auto normalize = [](double* p, std::size_t n) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += p[i] * p[i];
        s = std::sqrt(s) + 1e-12;
        for (std::size_t i = 0; i < n; ++i) p[i] /= s;
    };
    if (update) {
        for (int it = 0; it < iters; ++it) {
            // v = normalize(W^T u)
            for (std::size_t j = 0; j < M; ++j) v[j] = 0.0;
            for (int a = 0; a < Co; ++a) {
                const double ua = u[static_cast<std::size_t>(a)];
                const double* row = W + static_cast<std::size_t>(a) * M;
                for (std::size_t j = 0; j < M; ++j) v[j] += ua * row[j];
            }
            normalize(v.data(), M);
            // u = normalize(W v)
            for (int a = 0; a < Co; ++a) {
                const double* row = W + static_cast<std::size_t>(a) * M;
                double s = 0.0;
                for (std::size_t j = 0; j < M; ++j) s += row[j] * v[j];
                u[static_cast<std::size_t>(a)] = s;
            }
            normalize(u.data(), static_cast<std::size_t>(Co));
        }
    }
    double sigma = 0.0;
    for (int a = 0; a < Co; ++a) {
        const double* row = W + static_cast<std::size_t>(a) * M;
        double s = 0.0;
        for (std::size_t j = 0; j < M; ++j) s += row[j] * v[j];
        sigma += u[static_cast<std::size_t>(a)] * s;
    }
    return std::max(sigma, 1e-12);
}

Var spectral_scale(const Var& w, Tensor& u, Tensor& v, bool update, int iters) {
    const double sigma = spectral_sigma(w->value, u, v, update, iters);
    Tensor out(w->value.shape);
    const double* wp = w->value.data();
    double* op = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) op[i] = wp[i] / sigma;
    Tensor us = u.clone(), vs = v.clone();
    return make(std::move(out), {w}, [sigma, us, vs](Node& self) {
        const Var& pw = self.parents[0];
        if (!pw->requires_grad) return;
        const Tensor& g = self.grad;
        const Tensor& wv = pw->value;
        Tensor& gw = pw->ensure_grad();
        double dot = 0.0;
        const double* gp = g.data();
        const double* wp = wv.data();
        for (std::size_t i = 0; i < g.size(); ++i) dot += gp[i] * wp[i];
        const double c = dot / (sigma * sigma);
        const int Co = wv.dim(0);
        const std::size_t M = wv.size() / static_cast<std::size_t>(Co);
        double* dp = gw.data();
        for (int a = 0; a < Co; ++a) {
            const double ua = us[static_cast<std::size_t>(a)];
            const std::size_t base = static_cast<std::size_t>(a) * M;
            for (std::size_t j = 0; j < M; ++j)
                dp[base + j] += gp[base + j] / sigma - c * ua * vs[j];
        }
    });
}

}  // namespace dpgan::ad
