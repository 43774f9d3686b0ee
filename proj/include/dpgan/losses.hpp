#pragma once

#include <span>
#include <vector>

#include "dpgan/autodiff.hpp"
#include "dpgan/rng.hpp"
#include "dpgan/scene.hpp"

namespace dpgan {

/// Per-step loss terms, recorded after each update for logging and tests.
struct LossReport {
    double l_pixel_real = 0.0;
    double l_pixel_fake = 0.0;
    double l_pixel_g = 0.0;
    double l_ms_d = 0.0;
    double l_ms_g = 0.0;
    double l_fm = 0.0;
    double l_lm = 0.0;
    double l_d_total = 0.0;
    double l_g_total = 0.0;
};

/// Weighted target for true-class cross entropy: channel t(y,x) carries
/// weights[t] at each pixel, the extra fake channel stays 0. [B,N+1,H,W].
Tensor ce_target_true(std::span<const LabelMap> labels, int num_classes,
                      std::span<const double> weights);

/// Target selecting the fake channel (index num_classes) everywhere, weight 1.
Tensor ce_target_fake(int batch, int num_classes, int h, int w);

/// -sum(target * log_softmax(logits)) / (B*H*W). With an inverse-frequency
/// target this is the weighted pixel cross entropy; with a fake-channel
/// target it is the fake-pixel term.
ad::Var pixel_ce(const ad::Var& logits, const Tensor& target);

/// Per tap mean of relu(1 - real) + relu(1 + fake), averaged over taps.
ad::Var ms_patch_loss_d(const std::vector<ad::Var>& real_scores,
                        const std::vector<ad::Var>& fake_scores);

/// Saturated generator hinge: per tap mean of relu(1 - fake), averaged over
/// taps. nonsat switches to -mean(fake) for regimes where the saturated form
/// has no gradient.
ad::Var ms_patch_loss_g(const std::vector<ad::Var>& fake_scores, bool nonsat = false);

/// Mean over taps of sum((real - fake)^2) / (B*C*H*W); real taps are treated
/// as constants so this trains only the generator side.
ad::Var feature_match_loss(const std::vector<ad::Var>& real_taps,
                           const std::vector<ad::Var>& fake_taps);

/// Binary masks [B,1,H,W]: every connected region of each label map
/// (background regions included) flips a fair coin; whole_class assigns one
/// bit per class instead.
Tensor labelmix_masks(std::span<const LabelMap> labels, Rng& rng, bool whole_class = false);

/// mask*x + (1-mask)*xhat, mask broadcast over channels.
ad::Var labelmix(const ad::Var& x, const ad::Var& xhat, const Tensor& mask);

/// ||mix_logits - labelmix(real_logits, fake_logits)||^2, mean over batch.
ad::Var labelmix_consistency(const ad::Var& mix_logits, const ad::Var& real_logits,
                             const ad::Var& fake_logits, const Tensor& mask);

}  // namespace dpgan
