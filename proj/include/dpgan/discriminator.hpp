#pragma once

#include <string>
#include <vector>

#include "dpgan/generator.hpp"
#include "dpgan/nn.hpp"

namespace dpgan {

enum class TapPlacement { Off, Enc, Dec, Both };

TapPlacement tap_placement_from_string(const std::string& s);
std::string to_string(TapPlacement p);

struct DiscConfig {
    int resolution = 64;
    int num_classes = 8;    // real classes; the pixel head adds a fake channel
    int width_divisor = 8;
    TapPlacement ms = TapPlacement::Enc;  // patch-score heads
    TapPlacement fm = TapPlacement::Dec;  // feature-matching taps
    bool sn = true;

    void validate() const;
    int enc_blocks() const;  // down to 4x4
    int enc_channels(int k) const;  // 1-based block index
    int dec_channels(int k) const;  // 1-based block index
};

struct DiscPlan {
    std::vector<LadderRow> enc;       // down_1..down_K
    std::vector<LadderRow> dec;       // up_1..up_K
    LadderRow logits;
    std::vector<int> patch_enc;       // encoder block indices with patch heads
    std::vector<int> patch_dec;       // decoder block indices with patch heads
    std::vector<int> fm_enc;          // encoder block indices tapped for L_fm
    std::vector<int> fm_dec;          // decoder block indices tapped for L_fm
};

DiscPlan plan_discriminator(const DiscConfig& cfg);

struct DiscOutput {
    ad::Var logits;                    // [B, num_classes+1, R, R]
    std::vector<ad::Var> patch_scores; // one [B,1,h,w] map per head
    std::vector<ad::Var> fm_taps;      // feature maps for the matching loss
};

class Discriminator {
public:
    Discriminator(const DiscConfig& cfg, ParamStore& ps, Rng& rng);

    DiscOutput forward(const ad::Var& image, bool update_sn = false) const;

    const DiscConfig& config() const { return cfg_; }
    const DiscPlan& plan() const { return plan_; }

private:
    DiscConfig cfg_;
    DiscPlan plan_;
    std::vector<ResBlockDown> enc_;
    std::vector<ResBlockUp> dec_;
    Conv2d pixel_head_;
    std::vector<PatchHead> heads_;  // encoder heads first, then decoder heads
};

}  // namespace dpgan
