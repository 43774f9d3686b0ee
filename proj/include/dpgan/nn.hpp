#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "dpgan/autodiff.hpp"
#include "dpgan/rng.hpp"
#include "dpgan/tensor.hpp"

namespace dpgan {

inline constexpr double kNormEps = 1e-5;
inline constexpr double kLeakySlope = 0.2;

/// Named parameters and buffers of one network, in registration order.
/// Values share storage with the Vars handed out, so optimizer writes and
/// checkpoint loads are visible to the graph.
class ParamStore {
public:
    struct Entry {
        std::string name;
        ad::Var var;    // trainable parameters
        Tensor buffer;  // non-trainable state (power-iteration vectors)
        bool trainable = false;
    };

    ad::Var param(const std::string& name, Tensor init);
    Tensor buffer(const std::string& name, Tensor init);

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }
    const Entry* find(const std::string& name) const;
    std::size_t trainable_scalars() const;

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Orthogonal init on the (out_channels x rest) flattening, scaled by gain.
void init_orthogonal(Tensor& w, double gain, Rng& rng);

struct Conv2d {
    ad::Var w;
    ad::Var b;  // null when bias-free
    Tensor u, v;
    bool sn = false;
    int stride = 1;
    int pad = 0;

    ad::Var operator()(const ad::Var& x, bool update_sn = false) const;
    int out_channels() const { return w->value.dim(0); }
};

struct ConvSpec {
    int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;
    double gain = 1.0;
    bool bias = true;
    bool sn = false;
};

Conv2d make_conv(ParamStore& ps, Rng& rng, const std::string& name, const ConvSpec& spec);

/// Conv -> batch norm (standardize + learned channel affine) -> ReLU.
struct ConvBlock {
    Conv2d conv;
    ad::Var g, b;

    ad::Var operator()(const ad::Var& x) const;
};

ConvBlock make_conv_block(ParamStore& ps, Rng& rng, const std::string& name, int cin, int cout,
                          int k, int stride, int pad, bool sn = false);

/// Spatially varying modulation maps for one normalization site.
struct SpadeParams {
    ad::Var gamma, beta;  // [B,C,H,W] matching the site's activations
};

/// Parameter-free standardization followed by spatial modulation.
ad::Var spade_modulate(const ad::Var& x, const SpadeParams& p);

struct SpadeRungCond {
    SpadeParams pre1, pre2, skip;
};

/// Pre-activation residual block with conditional normalization at every
/// norm site. Output keeps the input resolution; the caller upsamples.
struct SpadeResBlock {
    Conv2d conv1, conv2, skip;
    bool has_skip = false;
    int cin = 0, cmid = 0, cout = 0;

    ad::Var forward(const ad::Var& x, const SpadeRungCond& cond, bool update_sn = false) const;
};

SpadeResBlock make_spade_resblock(ParamStore& ps, Rng& rng, const std::string& name, int cin,
                                  int cout, bool sn = false);

/// LReLU-conv-LReLU-conv then x2 nearest downsample, with a projection skip
/// when the channel count changes.
struct ResBlockDown {
    Conv2d conv1, conv2, skip;
    bool has_skip = false;

    ad::Var forward(const ad::Var& x, bool update_sn) const;
};

ResBlockDown make_resblock_down(ParamStore& ps, Rng& rng, const std::string& name, int cin,
                                int cout, bool sn);

/// x2 nearest upsample then LReLU-conv-LReLU-conv with projection skip.
struct ResBlockUp {
    Conv2d conv1, conv2, skip;
    bool has_skip = false;

    ad::Var forward(const ad::Var& x, bool update_sn) const;
};

ResBlockUp make_resblock_up(ParamStore& ps, Rng& rng, const std::string& name, int cin, int cout,
                            bool sn);

/// Two conv-ReLU-norm blocks followed by a 1x1 conv to a single score map.
struct PatchHead {
    Conv2d c1, c2, out;
    ad::Var g1, b1, g2, b2;

    ad::Var forward(const ad::Var& x, bool update_sn) const;
};

PatchHead make_patch_head(ParamStore& ps, Rng& rng, const std::string& name, int cin, bool sn);

}  // namespace dpgan
