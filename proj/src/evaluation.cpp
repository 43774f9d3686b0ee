#include "dpgan/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "dpgan/checkpoint.hpp"
#include "dpgan/losses.hpp"
#include "dpgan/trainer.hpp"

namespace dpgan {

namespace {

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

/// Packs images[first..first+count) into one [count,C,H,W] batch tensor.
Tensor pack_batch(std::span<const Tensor> images, std::size_t first, int count) {
    const Tensor& head = images[first];
    if (head.rank() != 3) throw std::invalid_argument("eval: images must be rank-3 [C,H,W]");
    const int C = head.dim(0), H = head.dim(1), W = head.dim(2);
    Tensor out({count, C, H, W});
    for (int b = 0; b < count; ++b) {
        const Tensor& img = images[first + static_cast<std::size_t>(b)];
        if (img.shape != head.shape)
            throw std::invalid_argument("eval: image shapes differ within a batch");
        const std::size_t n = img.size();
        double* dst = out.data() + static_cast<std::size_t>(b) * n;
        std::copy(img.data(), img.data() + n, dst);
    }
    return out;
}

Tensor slice_image(const Tensor& batch, int b) {
    const int C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
    Tensor out({C, H, W});
    const std::size_t n = out.size();
    std::copy(batch.data() + static_cast<std::size_t>(b) * n,
              batch.data() + static_cast<std::size_t>(b + 1) * n, out.data());
    return out;
}

void check_stats(const GaussianStats& g, const char* side) {
    if (g.d <= 0 || static_cast<int>(g.mu.size()) != g.d ||
        g.sigma.size() != static_cast<std::size_t>(g.d) * g.d)
        throw std::invalid_argument(std::string("frechet: malformed stats for ") + side);
    for (double v : g.mu)
        if (!std::isfinite(v)) throw std::invalid_argument("frechet: non-finite stats");
    for (double v : g.sigma)
        if (!std::isfinite(v)) throw std::invalid_argument("frechet: non-finite stats");
}

/// c = a * b for d x d row-major matrices.
void mat_mul(const std::vector<double>& a, const std::vector<double>& b, int d,
             std::vector<double>& c) {
    c.assign(static_cast<std::size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i)
        for (int k = 0; k < d; ++k) {
            const double aik = a[static_cast<std::size_t>(i) * d + k];
            if (aik == 0.0) continue;
            const double* brow = b.data() + static_cast<std::size_t>(k) * d;
            double* crow = c.data() + static_cast<std::size_t>(i) * d;
            for (int j = 0; j < d; ++j) crow[j] += aik * brow[j];
        }
}

/// V diag(sqrt(vals)) V^T with eigenvalues clamped at zero first. Each factor
/// carries lambda^(1/4), so the product form stays symmetric by construction.
std::vector<double> eig_sqrt(const std::vector<double>& vals, const std::vector<double>& vecs,
                             int d) {
    std::vector<double> scaled(static_cast<std::size_t>(d) * d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            const double lam = std::max(0.0, vals[static_cast<std::size_t>(j)]);
            scaled[static_cast<std::size_t>(i) * d + j] =
                vecs[static_cast<std::size_t>(i) * d + j] * std::sqrt(std::sqrt(lam));
        }
    }
    std::vector<double> out(static_cast<std::size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
            double s = 0.0;
            for (int k = 0; k < d; ++k)
                s += scaled[static_cast<std::size_t>(i) * d + k] *
                     scaled[static_cast<std::size_t>(j) * d + k];
            out[static_cast<std::size_t>(i) * d + j] = s;
            out[static_cast<std::size_t>(j) * d + i] = s;
        }
    return out;
}

std::vector<double> symmetrized(const std::vector<double>& a, int d) {
    std::vector<double> s(a.size());
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            s[static_cast<std::size_t>(i) * d + j] =
                0.5 * (a[static_cast<std::size_t>(i) * d + j] +
                       a[static_cast<std::size_t>(j) * d + i]);
    return s;
}

double bucket_fid(const CropSet& real, const CropSet& fake, const Segmenter& seg,
                  int min_bucket) {
    const std::size_t need = static_cast<std::size_t>(std::max(min_bucket, 16));
    if (real.size() < need || fake.size() < need)
        return std::numeric_limits<double>::quiet_NaN();
    return toy_fid(real.images, fake.images, seg);
}

}  // namespace

GaussianStats fit_gaussian(const std::vector<std::vector<double>>& feats) {
    if (feats.size() < 2) throw std::invalid_argument("gaussian fit: need at least 2 samples");
    const int d = static_cast<int>(feats[0].size());
    if (d == 0) throw std::invalid_argument("gaussian fit: empty feature vectors");
    for (const auto& f : feats)
        if (static_cast<int>(f.size()) != d)
            throw std::invalid_argument("gaussian fit: feature dimensions differ");
    const double n = static_cast<double>(feats.size());
    // Samples are accumulated in lexicographic order, so the fit is a pure
    // function of the feature multiset: permuting the inputs changes nothing,
    // not even the rounding.
    std::vector<std::size_t> order(feats.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&feats](std::size_t i, std::size_t j) { return feats[i] < feats[j]; });
    GaussianStats g;
    g.d = d;
    g.mu.assign(static_cast<std::size_t>(d), 0.0);
    for (const std::size_t i : order)
        for (int j = 0; j < d; ++j)
            g.mu[static_cast<std::size_t>(j)] += feats[i][static_cast<std::size_t>(j)];
    for (double& v : g.mu) v /= n;
    g.sigma.assign(static_cast<std::size_t>(d) * d, 0.0);
    std::vector<double> c(static_cast<std::size_t>(d));
    for (const std::size_t k : order) {
        const auto& f = feats[k];
        for (int j = 0; j < d; ++j)
            c[static_cast<std::size_t>(j)] =
                f[static_cast<std::size_t>(j)] - g.mu[static_cast<std::size_t>(j)];
        for (int i = 0; i < d; ++i) {
            const double ci = c[static_cast<std::size_t>(i)];
            double* row = g.sigma.data() + static_cast<std::size_t>(i) * d;
            for (int j = i; j < d; ++j) row[j] += ci * c[static_cast<std::size_t>(j)];
        }
    }
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
            const double v = g.sigma[static_cast<std::size_t>(i) * d + j] / (n - 1.0);
            g.sigma[static_cast<std::size_t>(i) * d + j] = v;
            g.sigma[static_cast<std::size_t>(j) * d + i] = v;
        }
    return g;
}

void sym_eig(std::vector<double> a, int d, std::vector<double>& vals,
             std::vector<double>& vecs) {
    if (d <= 0 || a.size() != static_cast<std::size_t>(d) * d)
        throw std::invalid_argument("eig: matrix size does not match dimension");
    auto A = [&a, d](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * d + j]; };
    vecs.assign(static_cast<std::size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) vecs[static_cast<std::size_t>(i) * d + i] = 1.0;
    auto V = [&vecs, d](int i, int j) -> double& {
        return vecs[static_cast<std::size_t>(i) * d + j];
    };

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < d - 1; ++p)
            for (int q = p + 1; q < d; ++q) off += std::abs(A(p, q));
        if (off == 0.0) break;
        // Small rotations are skipped early on; after a few sweeps every
        // remaining element gets rotated away.
        const double thresh = sweep < 3 ? 0.2 * off / (static_cast<double>(d) * d) : 0.0;
        for (int p = 0; p < d - 1; ++p) {
            for (int q = p + 1; q < d; ++q) {
                const double apq = A(p, q);
                const double g = 100.0 * std::abs(apq);
                if (sweep > 3 && std::abs(A(p, p)) + g == std::abs(A(p, p)) &&
                    std::abs(A(q, q)) + g == std::abs(A(q, q))) {
                    A(p, q) = A(q, p) = 0.0;
                    continue;
                }
                if (std::abs(apq) <= thresh) continue;
                const double diff = A(q, q) - A(p, p);
                double t;
                if (std::abs(apq) * 100.0 < 1e-36 * std::abs(diff)) {
                    t = apq / diff;
                } else {
                    const double theta = 0.5 * diff / apq;
                    t = 1.0 / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                    if (theta < 0.0) t = -t;
                }
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                const double tau = s / (1.0 + c);
                const double h = t * apq;
                A(p, p) -= h;
                A(q, q) += h;
                A(p, q) = A(q, p) = 0.0;
                for (int k = 0; k < d; ++k) {
                    if (k == p || k == q) continue;
                    const double akp = A(k, p), akq = A(k, q);
                    A(k, p) = A(p, k) = akp - s * (akq + tau * akp);
                    A(k, q) = A(q, k) = akq + s * (akp - tau * akq);
                }
                for (int k = 0; k < d; ++k) {
                    const double vkp = V(k, p), vkq = V(k, q);
                    V(k, p) = vkp - s * (vkq + tau * vkp);
                    V(k, q) = vkq + s * (vkp - tau * vkq);
                }
            }
        }
    }

    vals.assign(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < d; ++i) vals[static_cast<std::size_t>(i)] = A(i, i);
    std::vector<int> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&vals](int i, int j) {
        return vals[static_cast<std::size_t>(i)] < vals[static_cast<std::size_t>(j)];
    });
    std::vector<double> sv(static_cast<std::size_t>(d));
    std::vector<double> svec(vecs.size());
    for (int j = 0; j < d; ++j) {
        sv[static_cast<std::size_t>(j)] = vals[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])];
        for (int i = 0; i < d; ++i)
            svec[static_cast<std::size_t>(i) * d + j] =
                vecs[static_cast<std::size_t>(i) * d + order[static_cast<std::size_t>(j)]];
    }
    vals = std::move(sv);
    vecs = std::move(svec);
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    check_stats(a, "lhs");
    check_stats(b, "rhs");
    if (a.d != b.d) throw std::invalid_argument("frechet: dimension mismatch");
    const int d = a.d;

    double mu2 = 0.0;
    for (int j = 0; j < d; ++j) {
        const double dm = a.mu[static_cast<std::size_t>(j)] - b.mu[static_cast<std::size_t>(j)];
        mu2 += dm * dm;
    }
    const std::vector<double> s1 = symmetrized(a.sigma, d);
    const std::vector<double> s2 = symmetrized(b.sigma, d);
    double tr1 = 0.0, tr2 = 0.0;
    for (int i = 0; i < d; ++i) {
        tr1 += s1[static_cast<std::size_t>(i) * d + i];
        tr2 += s2[static_cast<std::size_t>(i) * d + i];
    }

    std::vector<double> vals, vecs;
    sym_eig(s1, d, vals, vecs);
    const std::vector<double> root1 = eig_sqrt(vals, vecs, d);

    std::vector<double> tmp, mid;
    mat_mul(root1, s2, d, tmp);
    mat_mul(tmp, root1, d, mid);
    mid = symmetrized(mid, d);
    sym_eig(mid, d, vals, vecs);
    double tr_root = 0.0;
    for (double v : vals) tr_root += std::sqrt(std::max(0.0, v));

    return std::max(0.0, mu2 + tr1 + tr2 - 2.0 * tr_root);
}

Tensor resize_bilinear(const Tensor& img, int oh, int ow) {
    if (img.rank() != 3) throw std::invalid_argument("resize: image must be rank-3 [C,H,W]");
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("resize: non-positive target size");
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    if (oh == H && ow == W) return img.clone();
    Tensor out({C, oh, ow});
    for (int y = 0; y < oh; ++y) {
        const double sy = (y + 0.5) * static_cast<double>(H) / oh - 0.5;
        const int y0 = static_cast<int>(std::floor(sy));
        const double fy = sy - y0;
        const int y0c = std::clamp(y0, 0, H - 1);
        const int y1c = std::clamp(y0 + 1, 0, H - 1);
        for (int x = 0; x < ow; ++x) {
            const double sx = (x + 0.5) * static_cast<double>(W) / ow - 0.5;
            const int x0 = static_cast<int>(std::floor(sx));
            const double fx = sx - x0;
            const int x0c = std::clamp(x0, 0, W - 1);
            const int x1c = std::clamp(x0 + 1, 0, W - 1);
            for (int c = 0; c < C; ++c) {
                const double v00 = img.at3(c, y0c, x0c), v01 = img.at3(c, y0c, x1c);
                const double v10 = img.at3(c, y1c, x0c), v11 = img.at3(c, y1c, x1c);
                out.at3(c, y, x) = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
                                   fy * ((1.0 - fx) * v10 + fx * v11);
            }
        }
    }
    return out;
}

LabelMap resize_nearest(const LabelMap& label, int oh, int ow) {
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("resize: non-positive target size");
    LabelMap out(oh, ow);
    for (int y = 0; y < oh; ++y) {
        const int sy = std::clamp(
            static_cast<int>(std::floor((y + 0.5) * static_cast<double>(label.h) / oh)), 0,
            label.h - 1);
        for (int x = 0; x < ow; ++x) {
            const int sx = std::clamp(
                static_cast<int>(std::floor((x + 0.5) * static_cast<double>(label.w) / ow)), 0,
                label.w - 1);
            out.at(y, x) = label.at(sy, sx);
        }
    }
    return out;
}

Segmenter::Segmenter(int num_classes, std::uint64_t seed) : n_(num_classes) {
    if (num_classes < 2) throw std::invalid_argument("segmenter: need at least 2 classes");
    Rng rng(seed);
    const double gain = std::sqrt(2.0);
    c1_ = make_conv(ps_, rng, "c1", {3, 16, 3, 1, 1, gain, true, false});
    c2_ = make_conv(ps_, rng, "c2", {16, 32, 3, 1, 1, gain, true, false});
    c3_ = make_conv(ps_, rng, "c3", {32, kEmbedDim, 3, 1, 1, gain, true, false});
    c4_ = make_conv(ps_, rng, "c4", {kEmbedDim, num_classes, 3, 1, 1, 1.0, true, false});
}

Segmenter::Forward Segmenter::forward(const ad::Var& images) const {
    if (images->value.rank() != 4 || images->value.dim(1) != 3)
        throw std::invalid_argument("segmenter: input must be [B,3,H,W]");
    auto h1 = ad::leaky_relu(c1_(images), kLeakySlope);
    auto h2 = ad::leaky_relu(c2_(h1), kLeakySlope);
    auto features = ad::leaky_relu(c3_(h2), kLeakySlope);
    auto logits = c4_(features);
    return {logits, features};
}

std::vector<LabelMap> Segmenter::predict(std::span<const Tensor> images, int batch) const {
    if (batch < 1) throw std::invalid_argument("segmenter: batch must be positive");
    std::vector<LabelMap> out;
    out.reserve(images.size());
    ad::NoGrad ng;
    for (std::size_t first = 0; first < images.size(); first += static_cast<std::size_t>(batch)) {
        const int b = static_cast<int>(
            std::min<std::size_t>(static_cast<std::size_t>(batch), images.size() - first));
        const Tensor logits = forward(ad::constant(pack_batch(images, first, b))).logits->value;
        const int H = logits.dim(2), W = logits.dim(3);
        for (int i = 0; i < b; ++i) {
            LabelMap m(H, W);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    int best = 0;
                    double best_v = logits.at4(i, 0, y, x);
                    for (int c = 1; c < n_; ++c) {
                        const double v = logits.at4(i, c, y, x);
                        if (v > best_v) {
                            best_v = v;
                            best = c;
                        }
                    }
                    m.at(y, x) = static_cast<std::uint8_t>(best);
                }
            out.push_back(std::move(m));
        }
    }
    return out;
}

std::vector<std::vector<double>> Segmenter::embed(std::span<const Tensor> images,
                                                  int batch) const {
    if (batch < 1) throw std::invalid_argument("segmenter: batch must be positive");
    std::vector<std::vector<double>> out;
    out.reserve(images.size());
    ad::NoGrad ng;
    for (std::size_t first = 0; first < images.size(); first += static_cast<std::size_t>(batch)) {
        const int b = static_cast<int>(
            std::min<std::size_t>(static_cast<std::size_t>(batch), images.size() - first));
        const Tensor f = forward(ad::constant(pack_batch(images, first, b))).features->value;
        const int H = f.dim(2), W = f.dim(3);
        const double inv = 1.0 / (static_cast<double>(H) * W);
        for (int i = 0; i < b; ++i) {
            std::vector<double> e(kEmbedDim, 0.0);
            for (int c = 0; c < kEmbedDim; ++c) {
                const double* p = f.data() + f.idx4(i, c, 0, 0);
                double s = 0.0;
                for (int k = 0; k < H * W; ++k) s += p[k];
                e[static_cast<std::size_t>(c)] = s * inv;
            }
            out.push_back(std::move(e));
        }
    }
    return out;
}

void Segmenter::save(const std::string& path) const {
    TensorList out;
    out.emplace_back("meta/num_classes", Tensor::scalar(static_cast<double>(n_)));
    for (const auto& e : ps_.entries())
        out.emplace_back("seg/" + e.name, e.trainable ? e.var->value : e.buffer);
    save_tensors(path, out);
}

std::unique_ptr<Segmenter> Segmenter::load(const std::string& path) {
    const TensorList in = load_tensors(path);
    const auto find = [&in](const std::string& name) -> const Tensor* {
        for (const auto& [n, t] : in)
            if (n == name) return &t;
        return nullptr;
    };
    const Tensor* nc = find("meta/num_classes");
    if (!nc) throw std::runtime_error("segmenter checkpoint: missing tensor meta/num_classes");
    auto seg = std::make_unique<Segmenter>(static_cast<int>((*nc)[0]), 0);
    for (auto& e : seg->ps_.entries()) {
        const std::string name = "seg/" + e.name;
        const Tensor* t = find(name);
        if (!t) throw std::runtime_error("segmenter checkpoint: missing tensor " + name);
        Tensor& dst = e.trainable ? e.var->value : e.buffer;
        if (!dst.same_shape(*t))
            throw std::runtime_error("segmenter checkpoint: tensor " + name + " has shape " +
                                     t->shape_str() + ", expected " + dst.shape_str());
        dst.copy_from(*t);
    }
    return seg;
}

double train_segmenter(Segmenter& seg, std::span<const Tensor> images,
                       std::span<const LabelMap> labels, int steps, int batch, double lr,
                       std::uint64_t seed) {
    if (images.size() != labels.size() || images.empty())
        throw std::invalid_argument("segmenter train: images and labels must align");
    if (steps < 1 || batch < 1 || !(lr > 0.0))
        throw std::invalid_argument("segmenter train: bad steps, batch, or learning rate");
    Adam opt(lr, 0.9, 0.999, 1e-8);
    std::vector<ad::Var> vars;
    for (const auto& e : seg.params().entries())
        if (e.trainable) vars.push_back(e.var);
    opt.attach(vars);
    Rng rng(seed);
    const int n = static_cast<int>(images.size());
    double running = 0.0;
    for (int step = 0; step < steps; ++step) {
        std::vector<Tensor> bi(static_cast<std::size_t>(batch));
        std::vector<LabelMap> bl(static_cast<std::size_t>(batch));
        for (int j = 0; j < batch; ++j) {
            const int k = rng.uniform_int(n);
            bi[static_cast<std::size_t>(j)] = images[static_cast<std::size_t>(k)];
            bl[static_cast<std::size_t>(j)] = labels[static_cast<std::size_t>(k)];
        }
        const Tensor target = one_hot(bl, seg.num_classes());
        auto loss = pixel_ce(seg.forward(ad::constant(pack_batch(bi, 0, batch))).logits, target);
        opt.zero_grads();
        ad::backward(loss);
        opt.step();
        const double v = loss->value[0];
        if (!std::isfinite(v))
            throw std::runtime_error("segmenter train: non-finite loss at step " +
                                     std::to_string(step));
        running = step == 0 ? v : 0.9 * running + 0.1 * v;
    }
    return running;
}

double toy_fid(std::span<const Tensor> real, std::span<const Tensor> fake, const Segmenter& seg) {
    if (real.size() < 16 || fake.size() < 16)
        throw std::invalid_argument("fid: need at least 16 images per side");
    return frechet_distance(fit_gaussian(seg.embed(real)), fit_gaussian(seg.embed(fake)));
}

IouReport miou(std::span<const LabelMap> pred, std::span<const LabelMap> gt, int num_classes,
               std::span<const int> object_classes) {
    if (pred.size() != gt.size() || pred.empty())
        throw std::invalid_argument("miou: prediction and ground-truth counts differ");
    if (num_classes < 1) throw std::invalid_argument("miou: need at least 1 class");
    const std::size_t N = static_cast<std::size_t>(num_classes);
    std::vector<std::size_t> inter(N, 0), pc(N, 0), gc(N, 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const LabelMap& p = pred[i];
        const LabelMap& g = gt[i];
        if (p.h != g.h || p.w != g.w)
            throw std::invalid_argument("miou: map sizes differ at index " + std::to_string(i));
        for (std::size_t k = 0; k < p.v.size(); ++k) {
            const int pv = p.v[k], gv = g.v[k];
            if (pv >= num_classes || gv >= num_classes)
                throw std::invalid_argument("miou: class id out of range");
            ++pc[static_cast<std::size_t>(pv)];
            ++gc[static_cast<std::size_t>(gv)];
            if (pv == gv) ++inter[static_cast<std::size_t>(pv)];
        }
    }
    IouReport r;
    r.per_class.assign(N, 0.0);
    r.present.assign(N, false);
    double sum = 0.0;
    int present_n = 0;
    for (std::size_t c = 0; c < N; ++c) {
        const std::size_t uni = pc[c] + gc[c] - inter[c];
        if (uni == 0) continue;
        r.present[c] = true;
        r.per_class[c] = static_cast<double>(inter[c]) / static_cast<double>(uni);
        sum += r.per_class[c];
        ++present_n;
    }
    r.miou = present_n ? sum / present_n : 0.0;

    std::vector<int> objs(object_classes.begin(), object_classes.end());
    if (objs.empty())
        for (int c = 1; c < num_classes; ++c) objs.push_back(c);
    double osum = 0.0;
    int on = 0;
    for (int c : objs) {
        if (c < 0 || c >= num_classes)
            throw std::invalid_argument("miou: object class out of range");
        if (!r.present[static_cast<std::size_t>(c)]) continue;
        osum += r.per_class[static_cast<std::size_t>(c)];
        ++on;
    }
    r.obj_miou = on ? osum / on : 0.0;
    return r;
}

ObjectCrops crop_objects(std::span<const Tensor> images, std::span<const LabelMap> labels,
                         const SceneSpec& meta, int crop, std::span<const int> object_classes) {
    if (images.size() != labels.size())
        throw std::invalid_argument("crops: image and label counts differ");
    if (crop < 1) throw std::invalid_argument("crops: non-positive crop size");
    ObjectCrops out;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Tensor& img = images[i];
        const LabelMap& lab = labels[i];
        if (img.rank() != 3 || img.dim(1) != lab.h || img.dim(2) != lab.w)
            throw std::invalid_argument("crops: image and label sizes differ at index " +
                                        std::to_string(i));
        for (const Component& comp : connected_components(lab)) {
            if (!object_classes.empty() &&
                std::find(object_classes.begin(), object_classes.end(), comp.cls) ==
                    object_classes.end())
                continue;
            const int h = comp.y1 - comp.y0 + 1, w = comp.x1 - comp.x0 + 1;
            Tensor sub({img.dim(0), h, w});
            for (int c = 0; c < img.dim(0); ++c)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        sub.at3(c, y, x) = img.at3(c, comp.y0 + y, comp.x0 + x);
            LabelMap lsub(h, w);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) lsub.at(y, x) = lab.at(comp.y0 + y, comp.x0 + x);
            Tensor ci = resize_bilinear(sub, crop, crop);
            LabelMap cl = resize_nearest(lsub, crop, crop);
            CropSet& bucket = comp.pixels < meta.small_max  ? out.small
                              : comp.pixels > meta.large_min ? out.large
                                                             : out.medium;
            bucket.images.push_back(ci);
            bucket.labels.push_back(cl);
            out.all.images.push_back(ci);
            out.all.labels.push_back(cl);
        }
    }
    return out;
}

std::vector<Tensor> synthesize(const Generator& gen, std::span<const LabelMap> labels,
                               std::uint64_t seed, int batch) {
    if (labels.empty()) throw std::invalid_argument("synthesize: no label maps");
    if (batch < 1) throw std::invalid_argument("synthesize: batch must be positive");
    const int R = gen.config().resolution;
    for (const auto& l : labels)
        if (l.h != R || l.w != R)
            throw std::invalid_argument("synthesize: label size does not match the generator");
    Rng rng(seed);
    std::vector<Tensor> out;
    out.reserve(labels.size());
    ad::NoGrad ng;
    for (std::size_t first = 0; first < labels.size(); first += static_cast<std::size_t>(batch)) {
        const int b = static_cast<int>(
            std::min<std::size_t>(static_cast<std::size_t>(batch), labels.size() - first));
        const Tensor onehot =
            one_hot(labels.subspan(first, static_cast<std::size_t>(b)), gen.config().num_classes);
        const Tensor z = gen.sample_noise(b, rng);
        const Tensor image = gen.forward(ad::constant(z), ad::constant(onehot)).image->value;
        for (int j = 0; j < b; ++j) out.push_back(slice_image(image, j));
    }
    return out;
}

FidSpread multimodal_fid(const Generator& gen, std::span<const LabelMap> labels,
                         std::span<const Tensor> real, const Segmenter& seg,
                         std::span<const std::uint64_t> seeds, int batch) {
    if (seeds.size() < 2) throw std::invalid_argument("fid spread: need at least 2 seeds");
    FidSpread s;
    s.per_seed.reserve(seeds.size());
    for (const std::uint64_t seed : seeds)
        s.per_seed.push_back(toy_fid(real, synthesize(gen, labels, seed, batch), seg));
    // Shifted accumulation keeps identical runs at exactly zero variance.
    const double base = s.per_seed[0];
    double shift = 0.0;
    for (double v : s.per_seed) shift += v - base;
    s.mean = base + shift / static_cast<double>(s.per_seed.size());
    for (double v : s.per_seed) s.var += (v - s.mean) * (v - s.mean);
    s.var /= static_cast<double>(s.per_seed.size() - 1);
    return s;
}

std::vector<double> multires_fid(std::span<const Tensor> real, std::span<const Tensor> fake,
                                 const Segmenter& seg, std::span<const double> scales) {
    if (real.empty() || fake.empty()) throw std::invalid_argument("fid: empty image set");
    const int H = real[0].dim(1), W = real[0].dim(2);
    std::vector<double> out;
    out.reserve(scales.size());
    for (const double s : scales) {
        const int oh = static_cast<int>(std::lround(H * s));
        const int ow = static_cast<int>(std::lround(W * s));
        if (oh < 16 || ow < 16)
            throw std::invalid_argument("fid: scaled resolution below 16");
        std::vector<Tensor> r, f;
        r.reserve(real.size());
        f.reserve(fake.size());
        for (const auto& img : real) r.push_back(resize_bilinear(img, oh, ow));
        for (const auto& img : fake) f.push_back(resize_bilinear(img, oh, ow));
        out.push_back(toy_fid(r, f, seg));
    }
    return out;
}

MetricReport evaluate(const Generator& gen, std::span<const Tensor> real,
                      std::span<const LabelMap> labels, const SceneSpec& meta,
                      const Segmenter& seg, const EvalOptions& opt) {
    if (real.size() != labels.size() || real.empty())
        throw std::invalid_argument("evaluate: images and labels must align");
    if (opt.k_seeds != 0 && opt.k_seeds < 2)
        throw std::invalid_argument("evaluate: k_seeds must be 0 or at least 2");

    MetricReport r;
    const std::vector<Tensor> fake = synthesize(gen, labels, opt.seed, opt.batch);
    r.toy_fid = toy_fid(real, fake, seg);

    const std::vector<LabelMap> pred = seg.predict(fake);
    const IouReport iou = miou(pred, labels, seg.num_classes(), opt.object_classes);
    r.miou = iou.miou;
    r.obj_miou = iou.obj_miou;
    r.per_class_iou = iou.per_class;
    r.class_present = iou.present;

    const ObjectCrops cr = crop_objects(real, labels, meta, opt.crop, opt.object_classes);
    const ObjectCrops cf = crop_objects(fake, labels, meta, opt.crop, opt.object_classes);
    r.crops_small = static_cast<int>(cf.small.size());
    r.crops_medium = static_cast<int>(cf.medium.size());
    r.crops_large = static_cast<int>(cf.large.size());
    r.obj_fid_all = bucket_fid(cr.all, cf.all, seg, opt.min_bucket);
    r.obj_fid_small = bucket_fid(cr.small, cf.small, seg, opt.min_bucket);
    r.obj_fid_medium = bucket_fid(cr.medium, cf.medium, seg, opt.min_bucket);
    r.obj_fid_large = bucket_fid(cr.large, cf.large, seg, opt.min_bucket);

    if (opt.k_seeds == 0) {
        r.fid_mean = std::numeric_limits<double>::quiet_NaN();
        r.fid_var = std::numeric_limits<double>::quiet_NaN();
    } else {
        Rng sr = Rng(opt.seed).derive(11);
        std::vector<std::uint64_t> seeds(static_cast<std::size_t>(opt.k_seeds));
        for (auto& v : seeds) v = sr.next_u64();
        const FidSpread spread = multimodal_fid(gen, labels, real, seg, seeds, opt.batch);
        r.fid_mean = spread.mean;
        r.fid_var = spread.var;
    }
    return r;
}

std::string report_to_text(const MetricReport& r, std::span<const std::string> class_names) {
    if (class_names.size() != r.per_class_iou.size())
        throw std::invalid_argument("report: class name count does not match");
    std::string s;
    s += "toy_fid=" + fmt(r.toy_fid) + "\n";
    s += "miou=" + fmt(r.miou) + "\n";
    s += "obj_miou=" + fmt(r.obj_miou) + "\n";
    for (std::size_t c = 0; c < class_names.size(); ++c) {
        const double v = r.class_present[c] ? r.per_class_iou[c]
                                            : std::numeric_limits<double>::quiet_NaN();
        s += "iou_" + class_names[c] + "=" + fmt(v) + "\n";
    }
    s += "obj_fid_all=" + fmt(r.obj_fid_all) + "\n";
    s += "obj_fid_small=" + fmt(r.obj_fid_small) + "\n";
    s += "obj_fid_medium=" + fmt(r.obj_fid_medium) + "\n";
    s += "obj_fid_large=" + fmt(r.obj_fid_large) + "\n";
    s += "crops_small=" + std::to_string(r.crops_small) + "\n";
    s += "crops_medium=" + std::to_string(r.crops_medium) + "\n";
    s += "crops_large=" + std::to_string(r.crops_large) + "\n";
    s += "fid_mean=" + fmt(r.fid_mean) + "\n";
    s += "fid_var=" + fmt(r.fid_var) + "\n";
    return s;
}

std::string report_to_csv(const MetricReport& r, std::span<const std::string> class_names) {
    if (class_names.size() != r.per_class_iou.size())
        throw std::invalid_argument("report: class name count does not match");
    std::string head = "toy_fid,miou,obj_miou";
    std::string row = fmt(r.toy_fid) + "," + fmt(r.miou) + "," + fmt(r.obj_miou);
    for (std::size_t c = 0; c < class_names.size(); ++c) {
        head += ",iou_" + class_names[c];
        const double v = r.class_present[c] ? r.per_class_iou[c]
                                            : std::numeric_limits<double>::quiet_NaN();
        row += "," + fmt(v);
    }
    head += ",obj_fid_all,obj_fid_small,obj_fid_medium,obj_fid_large";
    row += "," + fmt(r.obj_fid_all) + "," + fmt(r.obj_fid_small) + "," + fmt(r.obj_fid_medium) +
           "," + fmt(r.obj_fid_large);
    head += ",crops_small,crops_medium,crops_large,fid_mean,fid_var";
    row += "," + std::to_string(r.crops_small) + "," + std::to_string(r.crops_medium) + "," +
           std::to_string(r.crops_large) + "," + fmt(r.fid_mean) + "," + fmt(r.fid_var);
    return head + "\n" + row + "\n";
}

}  // namespace dpgan
