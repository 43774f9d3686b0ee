#include "dpgan/losses.hpp"

#include <stdexcept>

namespace dpgan {

namespace {

void check_labels(std::span<const LabelMap> labels, int num_classes) {
    if (labels.empty()) throw std::invalid_argument("loss: empty label batch");
    for (const auto& l : labels) {
        if (l.h != labels[0].h || l.w != labels[0].w)
            throw std::invalid_argument("loss: label sizes differ within the batch");
        for (auto c : l.v)
            if (c >= num_classes) throw std::invalid_argument("loss: label class out of range");
    }
}

}  // namespace

Tensor ce_target_true(std::span<const LabelMap> labels, int num_classes,
                      std::span<const double> weights) {
    check_labels(labels, num_classes);
    if (static_cast<int>(weights.size()) != num_classes)
        throw std::invalid_argument("loss: weight count does not match class count");
    const int B = static_cast<int>(labels.size());
    const int H = labels[0].h, W = labels[0].w;
    Tensor t({B, num_classes + 1, H, W});
    for (int b = 0; b < B; ++b)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int cls = labels[static_cast<std::size_t>(b)].at(y, x);
                t.at4(b, cls, y, x) = weights[static_cast<std::size_t>(cls)];
            }
    return t;
}

Tensor ce_target_fake(int batch, int num_classes, int h, int w) {
    Tensor t({batch, num_classes + 1, h, w});
    for (int b = 0; b < batch; ++b)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) t.at4(b, num_classes, y, x) = 1.0;
    return t;
}

ad::Var pixel_ce(const ad::Var& logits, const Tensor& target) {
    if (logits->value.shape != target.shape)
        throw std::invalid_argument("loss: target shape " + target.shape_str() +
                                    " does not match logits " + logits->value.shape_str());
    const double pixels = static_cast<double>(logits->value.dim(0)) * logits->value.dim(2) *
                          logits->value.dim(3);
    auto logp = ad::log_softmax_channels(logits);
    return ad::scale(ad::sum_all(ad::mul(logp, ad::constant(target))), -1.0 / pixels);
}

namespace {

ad::Var hinge_real(const ad::Var& s) {
    return ad::mean_all(ad::relu(ad::add_scalar(ad::scale(s, -1.0), 1.0)));
}

ad::Var hinge_fake(const ad::Var& s) {
    return ad::mean_all(ad::relu(ad::add_scalar(s, 1.0)));
}

}  // namespace

ad::Var ms_patch_loss_d(const std::vector<ad::Var>& real_scores,
                        const std::vector<ad::Var>& fake_scores) {
    if (real_scores.empty() || real_scores.size() != fake_scores.size())
        throw std::invalid_argument("loss: patch tap lists empty or mismatched");
    ad::Var total;
    for (std::size_t i = 0; i < real_scores.size(); ++i) {
        auto term = ad::add(hinge_real(real_scores[i]), hinge_fake(fake_scores[i]));
        total = total ? ad::add(total, term) : term;
    }
    return ad::scale(total, 1.0 / static_cast<double>(real_scores.size()));
}

ad::Var ms_patch_loss_g(const std::vector<ad::Var>& fake_scores, bool nonsat) {
    if (fake_scores.empty()) throw std::invalid_argument("loss: empty patch tap list");
    ad::Var total;
    for (const auto& s : fake_scores) {
        auto term = nonsat ? ad::scale(ad::mean_all(s), -1.0) : hinge_real(s);
        total = total ? ad::add(total, term) : term;
    }
    return ad::scale(total, 1.0 / static_cast<double>(fake_scores.size()));
}

ad::Var feature_match_loss(const std::vector<ad::Var>& real_taps,
                           const std::vector<ad::Var>& fake_taps) {
    if (real_taps.empty() || real_taps.size() != fake_taps.size())
        throw std::invalid_argument("loss: matching tap lists empty or mismatched");
    ad::Var total;
    for (std::size_t i = 0; i < real_taps.size(); ++i) {
        if (!real_taps[i]->value.same_shape(fake_taps[i]->value))
            throw std::invalid_argument("loss: matching tap shapes differ");
        auto d = ad::sub(ad::detach(real_taps[i]), fake_taps[i]);
        auto term = ad::scale(ad::sum_all(ad::mul(d, d)),
                              1.0 / static_cast<double>(d->value.size()));
        total = total ? ad::add(total, term) : term;
    }
    return ad::scale(total, 1.0 / static_cast<double>(real_taps.size()));
}

Tensor labelmix_masks(std::span<const LabelMap> labels, Rng& rng, bool whole_class) {
    if (labels.empty()) throw std::invalid_argument("loss: empty label batch");
    const int B = static_cast<int>(labels.size());
    const int H = labels[0].h, W = labels[0].w;
    Tensor m({B, 1, H, W});
    for (int b = 0; b < B; ++b) {
        const LabelMap& l = labels[static_cast<std::size_t>(b)];
        if (l.h != H || l.w != W)
            throw std::invalid_argument("loss: label sizes differ within the batch");
        double* out = m.data() + m.idx4(b, 0, 0, 0);
        if (whole_class) {
            double bit[256];
            for (int c = 0; c < 256; ++c) bit[c] = rng.uniform() < 0.5 ? 1.0 : 0.0;
            for (std::size_t i = 0; i < l.v.size(); ++i) out[i] = bit[l.v[i]];
        } else {
            RegionMap rm = region_map(l, true);
            std::vector<double> bit(static_cast<std::size_t>(rm.regions));
            for (auto& v : bit) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
            for (std::size_t i = 0; i < l.v.size(); ++i)
                out[i] = bit[static_cast<std::size_t>(rm.id[i])];
        }
    }
    return m;
}

ad::Var labelmix(const ad::Var& x, const ad::Var& xhat, const Tensor& mask) {
    if (!x->value.same_shape(xhat->value))
        throw std::invalid_argument("loss: mix operands differ in shape");
    Tensor inv(mask.shape);
    for (std::size_t i = 0; i < mask.size(); ++i) inv[i] = 1.0 - mask[i];
    return ad::add(ad::broadcast_mul(x, ad::constant(mask)),
                   ad::broadcast_mul(xhat, ad::constant(inv)));
}

ad::Var labelmix_consistency(const ad::Var& mix_logits, const ad::Var& real_logits,
                             const ad::Var& fake_logits, const Tensor& mask) {
    auto target = labelmix(real_logits, fake_logits, mask);
    auto d = ad::sub(mix_logits, target);
    return ad::scale(ad::sum_all(ad::mul(d, d)), 1.0 / mix_logits->value.dim(0));
}

}  // namespace dpgan
