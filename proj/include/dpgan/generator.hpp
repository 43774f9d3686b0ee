#pragma once

#include <string>
#include <vector>

#include "dpgan/nn.hpp"

namespace dpgan {

/// Width ladder shared by the planner and the constructed network. Channel
/// counts follow the full-scale architecture divided by width_divisor.
struct GenConfig {
    int resolution = 64;    // power of two, >= 16
    int num_classes = 8;    // label classes including background
    int width_divisor = 8;  // 1 reproduces the full-scale table widths
    int z_dim = 0;          // 0 means the ladder default (64 / width_divisor)
    bool legacy_onehot = false;   // condition on resampled labels instead of the
                                  // adaptation pyramid
    bool no_cat = false;          // drop the Up(alpha_0) half of the conditioning input
    bool route_top_alpha = false; // concatenate the full-res alpha into the final conv
    bool per_pixel_noise = false; // independent noise per location instead of a
                                  // broadcast vector
    bool sn = false;

    void validate() const;
    int levels() const;           // pyramid rungs between 8x8 and the output
    int zdim() const { return z_dim > 0 ? z_dim : std::max(1, 64 / width_divisor); }
    int alpha_channels() const { return std::max(1, 64 / width_divisor); }
    int sap_mid_channels() const { return std::max(1, 32 / width_divisor); }
    int isp_channels(int res) const;  // synthesis-trunk width at a resolution
    int cond_channels() const;        // conditioning input channels per rung
};

struct LadderRow {
    std::string name;
    int channels = 0;
    int res = 0;
};

struct GenPlan {
    std::vector<LadderRow> sap;
    std::vector<LadderRow> isp;
};

GenPlan plan_generator(const GenConfig& cfg);

class Generator {
public:
    Generator(const GenConfig& cfg, ParamStore& ps, Rng& rng);

    struct Forward {
        ad::Var image;                // [B,3,R,R]
        std::vector<ad::Var> alphas;  // index i at resolution 8*2^i; empty in
                                      // legacy mode
    };

    /// z: [B,zdim,R,R], onehot: [B,num_classes,R,R].
    Forward forward(const ad::Var& z, const ad::Var& onehot, bool update_sn = false) const;

    Tensor sample_noise(int batch, Rng& rng) const;

    const GenConfig& config() const { return cfg_; }

private:
    struct SiteConvs {
        Conv2d gamma, beta;
    };
    struct RungCond {
        SiteConvs pre1, pre2, skip;
        bool has_skip = false;
    };

    SpadeParams site_params(const SiteConvs& convs, const ad::Var& inp, bool update_sn) const;

    GenConfig cfg_;
    ConvBlock sap_in_, sap_full_;
    std::vector<ConvBlock> sap_down_;
    std::vector<RungCond> cond_;
    Conv2d isp_in_;
    std::vector<SpadeResBlock> rungs_;
    Conv2d final_;
};

}  // namespace dpgan
