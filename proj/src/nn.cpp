#include "dpgan/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dpgan {

ad::Var ParamStore::param(const std::string& name, Tensor init) {
    if (index_.count(name)) throw std::invalid_argument("param store: duplicate name " + name);
    Entry e;
    e.name = name;
    e.var = ad::leaf(std::move(init));
    e.trainable = true;
    index_[name] = entries_.size();
    entries_.push_back(e);
    return entries_.back().var;
}

Tensor ParamStore::buffer(const std::string& name, Tensor init) {
    if (index_.count(name)) throw std::invalid_argument("param store: duplicate name " + name);
    Entry e;
    e.name = name;
    e.buffer = std::move(init);
    e.trainable = false;
    index_[name] = entries_.size();
    entries_.push_back(e);
    return entries_.back().buffer;
}

const ParamStore::Entry* ParamStore::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second];
}

std::size_t ParamStore::trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
        if (e.trainable) n += e.var->value.size();
    return n;
}

namespace {

// Modified Gram-Schmidt on `count` vectors of length `len`, stored with the
// given stride between vectors and 1 between elements (or the reverse).
void orthonormalize(double* base, int count, int len, std::size_t vec_stride,
                    std::size_t el_stride) {
    auto at = [&](int vi, int ei) -> double& {
        return base[static_cast<std::size_t>(vi) * vec_stride +
                    static_cast<std::size_t>(ei) * el_stride];
    };
    for (int i = 0; i < count; ++i) {
        for (int j = 0; j < i; ++j) {
            double d = 0.0;
            for (int e = 0; e < len; ++e) d += at(i, e) * at(j, e);
            for (int e = 0; e < len; ++e) at(i, e) -= d * at(j, e);
        }
        double n2 = 0.0;
        for (int e = 0; e < len; ++e) n2 += at(i, e) * at(i, e);
        const double inv = 1.0 / std::sqrt(n2);
        for (int e = 0; e < len; ++e) at(i, e) *= inv;
    }
}

}  // namespace

void init_orthogonal(Tensor& w, double gain, Rng& rng) {
    const int rows = w.dim(0);
    const int cols = static_cast<int>(w.size()) / rows;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.gaussian();
    if (rows <= cols)
        orthonormalize(w.data(), rows, cols, static_cast<std::size_t>(cols), 1);
    else
        orthonormalize(w.data(), cols, rows, 1, static_cast<std::size_t>(cols));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] *= gain;
}

ad::Var Conv2d::operator()(const ad::Var& x, bool update_sn) const {
    ad::Var weight = w;
    if (sn) {
        Tensor uu = u, vv = v;  // shared storage; updates persist in the store
        weight = ad::spectral_scale(w, uu, vv, update_sn, 1);
    }
    return ad::conv2d(x, weight, b, stride, pad);
}

Conv2d make_conv(ParamStore& ps, Rng& rng, const std::string& name, const ConvSpec& spec) {
    Conv2d c;
    Tensor w({spec.cout, spec.cin, spec.k, spec.k});
    init_orthogonal(w, spec.gain, rng);
    c.w = ps.param(name + "/w", std::move(w));
    if (spec.bias) c.b = ps.param(name + "/b", Tensor::zeros({spec.cout}));
    c.stride = spec.stride;
    c.pad = spec.pad;
    c.sn = spec.sn;
    if (spec.sn) {
        Tensor u({spec.cout});
        Tensor v({spec.cin * spec.k * spec.k});
        for (std::size_t i = 0; i < u.size(); ++i) u[i] = rng.gaussian();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.gaussian();
        ad::spectral_sigma(c.w->value, u, v, true, 5);
        c.u = ps.buffer(name + "/u", u);
        c.v = ps.buffer(name + "/v", v);
    }
    return c;
}

ad::Var ConvBlock::operator()(const ad::Var& x) const {
    auto h = conv(x, false);
    h = ad::batch_standardize(h, kNormEps);
    h = ad::channel_affine(h, g, b);
    return ad::relu(h);
}

ConvBlock make_conv_block(ParamStore& ps, Rng& rng, const std::string& name, int cin, int cout,
                          int k, int stride, int pad, bool sn) {
    ConvBlock blk;
    blk.conv = make_conv(ps, rng, name + "/conv",
                         {cin, cout, k, stride, pad, 1.0, true, sn});
    blk.g = ps.param(name + "/bn_g", Tensor::full({cout}, 1.0));
    blk.b = ps.param(name + "/bn_b", Tensor::zeros({cout}));
    return blk;
}

ad::Var spade_modulate(const ad::Var& x, const SpadeParams& p) {
    auto h = ad::batch_standardize(x, kNormEps);
    return ad::add(ad::mul(h, p.gamma), p.beta);
}

ad::Var SpadeResBlock::forward(const ad::Var& x, const SpadeRungCond& cond, bool update_sn) const {
    auto h = spade_modulate(x, cond.pre1);
    h = ad::leaky_relu(h, kLeakySlope);
    h = conv1(h, update_sn);
    h = spade_modulate(h, cond.pre2);
    h = ad::leaky_relu(h, kLeakySlope);
    h = conv2(h, update_sn);
    ad::Var s = x;
    if (has_skip) s = skip(spade_modulate(x, cond.skip), update_sn);
    return ad::add(s, h);
}

SpadeResBlock make_spade_resblock(ParamStore& ps, Rng& rng, const std::string& name, int cin,
                                  int cout, bool sn) {
    SpadeResBlock blk;
    blk.cin = cin;
    blk.cout = cout;
    blk.cmid = std::min(cin, cout);
    blk.conv1 = make_conv(ps, rng, name + "/conv1", {cin, blk.cmid, 3, 1, 1, 1.0, true, sn});
    blk.conv2 = make_conv(ps, rng, name + "/conv2", {blk.cmid, cout, 3, 1, 1, 1.0, true, sn});
    blk.has_skip = cin != cout;
    if (blk.has_skip)
        blk.skip = make_conv(ps, rng, name + "/skip", {cin, cout, 1, 1, 0, 1.0, false, sn});
    return blk;
}

ad::Var ResBlockDown::forward(const ad::Var& x, bool update_sn) const {
    auto h = ad::leaky_relu(x, kLeakySlope);
    h = conv1(h, update_sn);
    h = ad::leaky_relu(h, kLeakySlope);
    h = conv2(h, update_sn);
    h = ad::downsample_nearest(h, 2);
    auto s = ad::downsample_nearest(x, 2);
    if (has_skip) s = skip(s, update_sn);
    return ad::add(s, h);
}

ResBlockDown make_resblock_down(ParamStore& ps, Rng& rng, const std::string& name, int cin,
                                int cout, bool sn) {
    ResBlockDown blk;
    blk.conv1 = make_conv(ps, rng, name + "/conv1", {cin, cout, 3, 1, 1, 1.0, true, sn});
    blk.conv2 = make_conv(ps, rng, name + "/conv2", {cout, cout, 3, 1, 1, 1.0, true, sn});
    blk.has_skip = cin != cout;
    if (blk.has_skip)
        blk.skip = make_conv(ps, rng, name + "/skip", {cin, cout, 1, 1, 0, 1.0, false, sn});
    return blk;
}

ad::Var ResBlockUp::forward(const ad::Var& x, bool update_sn) const {
    auto x2 = ad::upsample_nearest(x, 2);
    auto h = ad::leaky_relu(x2, kLeakySlope);
    h = conv1(h, update_sn);
    h = ad::leaky_relu(h, kLeakySlope);
    h = conv2(h, update_sn);
    ad::Var s = x2;
    if (has_skip) s = skip(x2, update_sn);
    return ad::add(s, h);
}

ResBlockUp make_resblock_up(ParamStore& ps, Rng& rng, const std::string& name, int cin, int cout,
                            bool sn) {
    ResBlockUp blk;
    blk.conv1 = make_conv(ps, rng, name + "/conv1", {cin, cout, 3, 1, 1, 1.0, true, sn});
    blk.conv2 = make_conv(ps, rng, name + "/conv2", {cout, cout, 3, 1, 1, 1.0, true, sn});
    blk.has_skip = cin != cout;
    if (blk.has_skip)
        blk.skip = make_conv(ps, rng, name + "/skip", {cin, cout, 1, 1, 0, 1.0, false, sn});
    return blk;
}

ad::Var PatchHead::forward(const ad::Var& x, bool update_sn) const {
    auto h = c1(x, update_sn);
    h = ad::relu(h);
    h = ad::channel_affine(ad::batch_standardize(h, kNormEps), g1, b1);
    h = c2(h, update_sn);
    h = ad::relu(h);
    h = ad::channel_affine(ad::batch_standardize(h, kNormEps), g2, b2);
    return out(h, update_sn);
}

PatchHead make_patch_head(ParamStore& ps, Rng& rng, const std::string& name, int cin, bool sn) {
    PatchHead head;
    const int mid = std::max(1, cin / 2);
    head.c1 = make_conv(ps, rng, name + "/c1", {cin, mid, 3, 1, 1, 1.0, true, sn});
    head.g1 = ps.param(name + "/bn1_g", Tensor::full({mid}, 1.0));
    head.b1 = ps.param(name + "/bn1_b", Tensor::zeros({mid}));
    head.c2 = make_conv(ps, rng, name + "/c2", {mid, mid, 3, 1, 1, 1.0, true, sn});
    head.g2 = ps.param(name + "/bn2_g", Tensor::full({mid}, 1.0));
    head.b2 = ps.param(name + "/bn2_b", Tensor::zeros({mid}));
    head.out = make_conv(ps, rng, name + "/out", {mid, 1, 1, 1, 0, 1.0, !sn, sn});
    return head;
}

}  // namespace dpgan
