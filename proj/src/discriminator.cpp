#include "dpgan/discriminator.hpp"

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

TapPlacement tap_placement_from_string(const std::string& s) {
    if (s == "off") return TapPlacement::Off;
    if (s == "enc") return TapPlacement::Enc;
    if (s == "dec") return TapPlacement::Dec;
    if (s == "both") return TapPlacement::Both;
    throw std::invalid_argument("unknown placement '" + s + "' (use off|enc|dec|both)");
}

std::string to_string(TapPlacement p) {
    switch (p) {
        case TapPlacement::Off: return "off";
        case TapPlacement::Enc: return "enc";
        case TapPlacement::Dec: return "dec";
        case TapPlacement::Both: return "both";
    }
    return "off";
}

void DiscConfig::validate() const {
    if (!power_of_two(resolution) || resolution < 16)
        throw std::invalid_argument("discriminator: resolution must be a power of two >= 16");
    if (num_classes < 2) throw std::invalid_argument("discriminator: needs at least two classes");
    if (width_divisor < 1) throw std::invalid_argument("discriminator: width divisor must be >= 1");
}

int DiscConfig::enc_blocks() const { return log2i(resolution) - 2; }

int DiscConfig::enc_channels(int k) const {
    const int full = std::min(512, 128 << ((k - 1) / 2));
    return std::max(1, full / width_divisor);
}

int DiscConfig::dec_channels(int k) const {
    const int K = enc_blocks();
    if (k < K) return enc_channels(K - k);
    return std::max(1, 64 / width_divisor);
}

DiscPlan plan_discriminator(const DiscConfig& cfg) {
    cfg.validate();
    DiscPlan plan;
    const int K = cfg.enc_blocks();
    const int R = cfg.resolution;
    for (int k = 1; k <= K; ++k)
        plan.enc.push_back({"down_" + std::to_string(k), cfg.enc_channels(k), R >> k});
    for (int k = 1; k <= K; ++k)
        plan.dec.push_back({"up_" + std::to_string(k), cfg.dec_channels(k), (R >> K) << k});
    plan.logits = {"logits", cfg.num_classes + 1, R};

    // Patch heads follow the fixed full-scale taps (blocks K-2 and K); on
    // shallow encoders the two deepest blocks stand in.
    const std::vector<int> enc_taps =
        K >= 6 ? std::vector<int>{K - 2, K} : std::vector<int>{K - 1, K};
    const std::vector<int> dec_taps{1, 2};
    if (cfg.ms == TapPlacement::Enc || cfg.ms == TapPlacement::Both) plan.patch_enc = enc_taps;
    if (cfg.ms == TapPlacement::Dec || cfg.ms == TapPlacement::Both) plan.patch_dec = dec_taps;

    // Matching taps cover every block except the first when the ladder is
    // deep enough to spare it.
    std::vector<int> fm_all;
    for (int k = K > 4 ? 2 : 1; k <= K; ++k) fm_all.push_back(k);
    if (cfg.fm == TapPlacement::Enc || cfg.fm == TapPlacement::Both) plan.fm_enc = fm_all;
    if (cfg.fm == TapPlacement::Dec || cfg.fm == TapPlacement::Both) plan.fm_dec = fm_all;
    return plan;
}

Discriminator::Discriminator(const DiscConfig& cfg, ParamStore& ps, Rng& rng)
    : cfg_(cfg), plan_(plan_discriminator(cfg)) {
    const int K = cfg_.enc_blocks();
    int cin = 3;
    for (int k = 1; k <= K; ++k) {
        enc_.push_back(make_resblock_down(ps, rng, "enc/down" + std::to_string(k), cin,
                                          cfg_.enc_channels(k), cfg_.sn));
        cin = cfg_.enc_channels(k);
    }
    for (int k = 1; k <= K; ++k) {
        const int in_ch =
            k == 1 ? cfg_.enc_channels(K) : cfg_.dec_channels(k - 1) + cfg_.enc_channels(K - k + 1);
        dec_.push_back(make_resblock_up(ps, rng, "dec/up" + std::to_string(k), in_ch,
                                        cfg_.dec_channels(k), cfg_.sn));
    }
    pixel_head_ = make_conv(ps, rng, "pixel_head",
                            {cfg_.dec_channels(K), cfg_.num_classes + 1, 1, 1, 0, 1.0, true,
                             cfg_.sn});
    for (int k : plan_.patch_enc)
        heads_.push_back(make_patch_head(ps, rng, "patch/enc" + std::to_string(k),
                                         cfg_.enc_channels(k), cfg_.sn));
    for (int k : plan_.patch_dec)
        heads_.push_back(make_patch_head(ps, rng, "patch/dec" + std::to_string(k),
                                         cfg_.dec_channels(k), cfg_.sn));
}

DiscOutput Discriminator::forward(const ad::Var& image, bool update_sn) const {
    const int R = cfg_.resolution;
    if (image->value.rank() != 4 || image->value.dim(1) != 3 || image->value.dim(2) != R ||
        image->value.dim(3) != R)
        throw std::invalid_argument("discriminator: image must be [B,3," + std::to_string(R) +
                                    "," + std::to_string(R) + "]");
    const int K = cfg_.enc_blocks();
    std::vector<ad::Var> enc_out(static_cast<std::size_t>(K) + 1);
    std::vector<ad::Var> dec_out(static_cast<std::size_t>(K) + 1);

    ad::Var h = image;
    for (int k = 1; k <= K; ++k) {
        h = enc_[static_cast<std::size_t>(k - 1)].forward(h, update_sn);
        enc_out[static_cast<std::size_t>(k)] = h;
    }
    for (int k = 1; k <= K; ++k) {
        ad::Var in = k == 1 ? enc_out[static_cast<std::size_t>(K)]
                            : ad::concat_channels({dec_out[static_cast<std::size_t>(k - 1)],
                                                   enc_out[static_cast<std::size_t>(K - k + 1)]});
        dec_out[static_cast<std::size_t>(k)] =
            dec_[static_cast<std::size_t>(k - 1)].forward(in, update_sn);
    }

    DiscOutput out;
    out.logits = pixel_head_(dec_out[static_cast<std::size_t>(K)], update_sn);

    std::size_t head = 0;
    for (int k : plan_.patch_enc)
        out.patch_scores.push_back(
            heads_[head++].forward(enc_out[static_cast<std::size_t>(k)], update_sn));
    for (int k : plan_.patch_dec)
        out.patch_scores.push_back(
            heads_[head++].forward(dec_out[static_cast<std::size_t>(k)], update_sn));

    for (int k : plan_.fm_enc) out.fm_taps.push_back(enc_out[static_cast<std::size_t>(k)]);
    for (int k : plan_.fm_dec) out.fm_taps.push_back(dec_out[static_cast<std::size_t>(k)]);
    return out;
}

}  // namespace dpgan
