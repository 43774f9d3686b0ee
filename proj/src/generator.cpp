#include "dpgan/generator.hpp"

#include <algorithm>
#include <stdexcept>

namespace dpgan {

namespace {

bool power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int log2i(int v) {
    int k = 0;
    while ((1 << k) < v) ++k;
    return k;
}

}  // namespace

void GenConfig::validate() const {
    if (!power_of_two(resolution) || resolution < 16)
        throw std::invalid_argument("generator: resolution must be a power of two >= 16");
    if (num_classes < 2) throw std::invalid_argument("generator: needs at least two classes");
    if (width_divisor < 1) throw std::invalid_argument("generator: width divisor must be >= 1");
    if (z_dim < 0) throw std::invalid_argument("generator: negative z_dim");
}

int GenConfig::levels() const { return log2i(resolution) - 3; }

int GenConfig::isp_channels(int res) const {
    const int full = std::min(1024, 64 * (resolution / res));
    return std::max(1, full / width_divisor);
}

int GenConfig::cond_channels() const {
    if (legacy_onehot) return num_classes;
    return no_cat ? alpha_channels() : 2 * alpha_channels();
}

GenPlan plan_generator(const GenConfig& cfg) {
    cfg.validate();
    GenPlan plan;
    const int K = cfg.levels();
    const int R = cfg.resolution;
    if (!cfg.legacy_onehot) {
        plan.sap.push_back({"z_y", cfg.zdim() + cfg.num_classes, R});
        plan.sap.push_back({"s", cfg.sap_mid_channels(), R});
        for (int i = K; i >= 0; --i)
            plan.sap.push_back({"s_" + std::to_string(i), cfg.alpha_channels(), 8 << i});
    }
    for (int i = 0; i <= K; ++i)
        plan.isp.push_back({"up_" + std::to_string(i), cfg.isp_channels(8 << i), 8 << i});
    plan.isp.push_back({"x", 3, R});
    return plan;
}

Generator::Generator(const GenConfig& cfg, ParamStore& ps, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int N = cfg_.num_classes;
    const int A = cfg_.alpha_channels();
    const int K = cfg_.levels();
    const int zc = cfg_.zdim();

    if (!cfg_.legacy_onehot) {
        sap_in_ = make_conv_block(ps, rng, "sap/in", zc + N, cfg_.sap_mid_channels(), 3, 1, 1,
                                  cfg_.sn);
        sap_full_ =
            make_conv_block(ps, rng, "sap/full", cfg_.sap_mid_channels(), A, 3, 1, 1, cfg_.sn);
        for (int j = 0; j < K; ++j)
            sap_down_.push_back(
                make_conv_block(ps, rng, "sap/down" + std::to_string(j), A, A, 3, 2, 1, cfg_.sn));
    }

    isp_in_ = make_conv(ps, rng, "isp/in",
                        {zc + N, cfg_.isp_channels(8), 3, 1, 1, 1.0, true, cfg_.sn});

    const int ci = cfg_.cond_channels();
    for (int i = 0; i < K; ++i) {
        const int cin = cfg_.isp_channels(8 << i);
        const int cout = cfg_.isp_channels(8 << (i + 1));
        rungs_.push_back(
            make_spade_resblock(ps, rng, "isp/rung" + std::to_string(i), cin, cout, cfg_.sn));
        const std::string base = "cond/rung" + std::to_string(i);
        RungCond rc;
        rc.pre1 = {make_conv(ps, rng, base + "/g1", {ci, cin, 3, 1, 1, 0.1, true, cfg_.sn}),
                   make_conv(ps, rng, base + "/b1", {ci, cin, 3, 1, 1, 0.1, true, cfg_.sn})};
        const int cmid = rungs_.back().cmid;
        rc.pre2 = {make_conv(ps, rng, base + "/g2", {ci, cmid, 3, 1, 1, 0.1, true, cfg_.sn}),
                   make_conv(ps, rng, base + "/b2", {ci, cmid, 3, 1, 1, 0.1, true, cfg_.sn})};
        rc.has_skip = rungs_.back().has_skip;
        if (rc.has_skip) {
            rc.skip = {make_conv(ps, rng, base + "/gs", {ci, cin, 3, 1, 1, 0.1, true, cfg_.sn}),
                       make_conv(ps, rng, base + "/bs", {ci, cin, 3, 1, 1, 0.1, true, cfg_.sn})};
        }
        cond_.push_back(rc);
    }

    int final_in = cfg_.isp_channels(cfg_.resolution);
    if (cfg_.route_top_alpha && !cfg_.legacy_onehot) final_in += A;
    final_ = make_conv(ps, rng, "isp/out", {final_in, 3, 3, 1, 1, 1.0, true, cfg_.sn});
}

SpadeParams Generator::site_params(const SiteConvs& convs, const ad::Var& inp,
                                   bool update_sn) const {
    SpadeParams p;
    p.gamma = ad::add_scalar(convs.gamma(inp, update_sn), 1.0);
    p.beta = convs.beta(inp, update_sn);
    return p;
}

Generator::Forward Generator::forward(const ad::Var& z, const ad::Var& onehot,
                                      bool update_sn) const {
    const int R = cfg_.resolution;
    const int K = cfg_.levels();
    if (z->value.rank() != 4 || z->value.dim(1) != cfg_.zdim() || z->value.dim(2) != R ||
        z->value.dim(3) != R)
        throw std::invalid_argument("generator: z must be [B," + std::to_string(cfg_.zdim()) +
                                    "," + std::to_string(R) + "," + std::to_string(R) + "]");
    if (onehot->value.rank() != 4 || onehot->value.dim(1) != cfg_.num_classes ||
        onehot->value.dim(2) != R || onehot->value.dim(3) != R)
        throw std::invalid_argument("generator: label map shape mismatch");
    if (onehot->value.dim(0) != z->value.dim(0))
        throw std::invalid_argument("generator: z and label batch mismatch");

    Forward out;
    auto zy = ad::concat_channels({z, onehot});

    if (!cfg_.legacy_onehot) {
        auto s = sap_in_(zy);
        auto a = sap_full_(s);
        out.alphas.assign(static_cast<std::size_t>(K) + 1, nullptr);
        out.alphas[static_cast<std::size_t>(K)] = a;
        for (int j = 0; j < K; ++j) {
            a = sap_down_[static_cast<std::size_t>(j)](a);
            out.alphas[static_cast<std::size_t>(K - 1 - j)] = a;
        }
    }

    auto h = isp_in_(ad::resample_to(zy, 8), update_sn);
    for (int i = 0; i < K; ++i) {
        ad::Var inp;
        if (cfg_.legacy_onehot) {
            inp = ad::resample_to(onehot, 8 << i);
        } else if (cfg_.no_cat) {
            inp = out.alphas[static_cast<std::size_t>(i)];
        } else {
            const auto& a0 = out.alphas[0];
            auto up0 = i == 0 ? a0 : ad::upsample_nearest(a0, 1 << i);
            inp = ad::concat_channels({out.alphas[static_cast<std::size_t>(i)], up0});
        }
        const auto& rc = cond_[static_cast<std::size_t>(i)];
        SpadeRungCond site;
        site.pre1 = site_params(rc.pre1, inp, update_sn);
        site.pre2 = site_params(rc.pre2, inp, update_sn);
        if (rc.has_skip) site.skip = site_params(rc.skip, inp, update_sn);
        h = rungs_[static_cast<std::size_t>(i)].forward(h, site, update_sn);
        h = ad::upsample_nearest(h, 2);
    }

    if (cfg_.route_top_alpha && !cfg_.legacy_onehot)
        h = ad::concat_channels({h, out.alphas[static_cast<std::size_t>(K)]});
    h = final_(h, update_sn);
    h = ad::leaky_relu(h, kLeakySlope);
    out.image = ad::tanh_act(h);
    return out;
}

Tensor Generator::sample_noise(int batch, Rng& rng) const {
    const int R = cfg_.resolution;
    const int zc = cfg_.zdim();
    Tensor z({batch, zc, R, R});
    if (cfg_.per_pixel_noise) {
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.gaussian();
        return z;
    }
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < zc; ++c) {
            const double v = rng.gaussian();
            double* p = z.data() + z.idx4(b, c, 0, 0);
            for (int i = 0; i < R * R; ++i) p[i] = v;
        }
    return z;
}

}  // namespace dpgan
