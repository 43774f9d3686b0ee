#include <doctest.h>

#include <cmath>

#include "dpgan/discriminator.hpp"
#include "test_util.hpp"

using namespace dpgan;
using testutil::random_tensor;

namespace {

void check_row(const LadderRow& row, const char* name, int channels, int res) {
    CHECK(row.name == name);
    CHECK(row.channels == channels);
    CHECK(row.res == res);
}

}  // namespace

TEST_CASE("placement names round-trip and reject junk") {
    for (auto p : {TapPlacement::Off, TapPlacement::Enc, TapPlacement::Dec, TapPlacement::Both})
        CHECK(tap_placement_from_string(to_string(p)) == p);
    CHECK_THROWS_AS(tap_placement_from_string("sideways"), std::invalid_argument);
}

TEST_CASE("full-width plan matches the 256-resolution reference ladder") {
    DiscConfig cfg;
    cfg.resolution = 256;
    cfg.num_classes = 35;
    cfg.width_divisor = 1;
    DiscPlan plan = plan_discriminator(cfg);

    REQUIRE(plan.enc.size() == 6);
    check_row(plan.enc[0], "down_1", 128, 128);
    check_row(plan.enc[1], "down_2", 128, 64);
    check_row(plan.enc[2], "down_3", 256, 32);
    check_row(plan.enc[3], "down_4", 256, 16);
    check_row(plan.enc[4], "down_5", 512, 8);
    check_row(plan.enc[5], "down_6", 512, 4);

    REQUIRE(plan.dec.size() == 6);
    check_row(plan.dec[0], "up_1", 512, 8);
    check_row(plan.dec[1], "up_2", 256, 16);
    check_row(plan.dec[2], "up_3", 256, 32);
    check_row(plan.dec[3], "up_4", 128, 64);
    check_row(plan.dec[4], "up_5", 128, 128);
    check_row(plan.dec[5], "up_6", 64, 256);

    check_row(plan.logits, "logits", 36, 256);

    // Patch heads sit after the fourth and sixth encoder blocks: feature
    // sizes (256,16,16) and (512,4,4).
    REQUIRE(plan.patch_enc == std::vector<int>{4, 6});
    CHECK(plan.patch_dec.empty());
    CHECK(plan.enc[3].channels == 256);
    CHECK(plan.enc[3].res == 16);
    CHECK(plan.enc[5].channels == 512);
    CHECK(plan.enc[5].res == 4);

    // Matching taps cover every decoder block except the first.
    CHECK(plan.fm_dec == std::vector<int>{2, 3, 4, 5, 6});
    CHECK(plan.fm_enc.empty());

    // Skip concatenation widths along the decoder.
    CHECK(cfg.enc_channels(6) == 512);                      // up_1 input
    CHECK(cfg.dec_channels(1) + cfg.enc_channels(5) == 1024);  // up_2 input
    CHECK(cfg.dec_channels(2) + cfg.enc_channels(4) == 512);
    CHECK(cfg.dec_channels(3) + cfg.enc_channels(3) == 512);
    CHECK(cfg.dec_channels(4) + cfg.enc_channels(2) == 256);
    CHECK(cfg.dec_channels(5) + cfg.enc_channels(1) == 256);
}

TEST_CASE("desk-scale plan puts taps on the two deepest encoder and all decoder blocks") {
    DiscConfig cfg;  // resolution 64, divisor 8, 8 classes
    DiscPlan plan = plan_discriminator(cfg);

    REQUIRE(plan.enc.size() == 4);
    check_row(plan.enc[0], "down_1", 16, 32);
    check_row(plan.enc[1], "down_2", 16, 16);
    check_row(plan.enc[2], "down_3", 32, 8);
    check_row(plan.enc[3], "down_4", 32, 4);
    REQUIRE(plan.dec.size() == 4);
    check_row(plan.dec[0], "up_1", 32, 8);
    check_row(plan.dec[1], "up_2", 16, 16);
    check_row(plan.dec[2], "up_3", 16, 32);
    check_row(plan.dec[3], "up_4", 8, 64);
    check_row(plan.logits, "logits", 9, 64);

    // Two deepest encoder outputs: 8x8 and 4x4.
    CHECK(plan.patch_enc == std::vector<int>{3, 4});
    CHECK(plan.enc[2].res == 8);
    CHECK(plan.enc[3].res == 4);
    // Shallow ladder: matching taps keep every decoder block, 8 through 64.
    CHECK(plan.fm_dec == std::vector<int>{1, 2, 3, 4});
}

TEST_CASE("tap placement switches move heads and taps between halves") {
    DiscConfig cfg;
    cfg.ms = TapPlacement::Both;
    cfg.fm = TapPlacement::Both;
    DiscPlan plan = plan_discriminator(cfg);
    CHECK(plan.patch_enc.size() == 2);
    CHECK(plan.patch_dec == std::vector<int>{1, 2});
    CHECK(plan.fm_enc == plan.fm_dec);

    cfg.ms = TapPlacement::Off;
    cfg.fm = TapPlacement::Off;
    plan = plan_discriminator(cfg);
    CHECK(plan.patch_enc.empty());
    CHECK(plan.patch_dec.empty());
    CHECK(plan.fm_enc.empty());
    CHECK(plan.fm_dec.empty());

    cfg.ms = TapPlacement::Dec;
    cfg.fm = TapPlacement::Enc;
    plan = plan_discriminator(cfg);
    CHECK(plan.patch_enc.empty());
    CHECK(plan.patch_dec == std::vector<int>{1, 2});
    CHECK(plan.fm_enc == std::vector<int>{1, 2, 3, 4});
    CHECK(plan.fm_dec.empty());
}

TEST_CASE("forward produces logits, patch maps and matching taps at planned sizes") {
    DiscConfig cfg;
    cfg.resolution = 32;
    cfg.num_classes = 5;
    cfg.width_divisor = 8;
    ParamStore ps;
    Rng rng(31);
    Discriminator disc(cfg, ps, rng);

    Rng data(32);
    auto img = ad::constant(random_tensor({2, 3, 32, 32}, data));
    auto out = disc.forward(img);

    CHECK(out.logits->value.shape == std::vector<int>{2, 6, 32, 32});
    REQUIRE(out.patch_scores.size() == 2);  // encoder taps at blocks 2 and 3
    CHECK(out.patch_scores[0]->value.shape == std::vector<int>{2, 1, 8, 8});
    CHECK(out.patch_scores[1]->value.shape == std::vector<int>{2, 1, 4, 4});
    REQUIRE(out.fm_taps.size() == 3);  // decoder blocks 1..3
    CHECK(out.fm_taps[0]->value.dim(2) == 8);
    CHECK(out.fm_taps[1]->value.dim(2) == 16);
    CHECK(out.fm_taps[2]->value.dim(2) == 32);
    CHECK(out.fm_taps[2]->value.dim(1) == cfg.dec_channels(3));

    auto bad = ad::constant(random_tensor({2, 3, 16, 16}, data));
    CHECK_THROWS_AS(disc.forward(bad), std::invalid_argument);
}

TEST_CASE("decoder convs consume the concatenated skip widths") {
    DiscConfig cfg;  // 64 / div 8
    ParamStore ps;
    Rng rng(33);
    Discriminator disc(cfg, ps, rng);
    const int K = cfg.enc_blocks();
    CHECK(ps.find("dec/up1/conv1/w")->var->value.dim(1) == cfg.enc_channels(K));
    for (int k = 2; k <= K; ++k) {
        const auto* e = ps.find("dec/up" + std::to_string(k) + "/conv1/w");
        REQUIRE(e != nullptr);
        CHECK(e->var->value.dim(1) == cfg.dec_channels(k - 1) + cfg.enc_channels(K - k + 1));
    }
    CHECK(ps.find("pixel_head/w")->var->value.shape ==
          std::vector<int>{cfg.num_classes + 1, cfg.dec_channels(K), 1, 1});
    CHECK(ps.find("patch/enc3/c1/w") != nullptr);
    CHECK(ps.find("patch/enc4/c1/w") != nullptr);
    CHECK(ps.find("patch/dec1/c1/w") == nullptr);
}

TEST_CASE("parameter report is invariant to parameter values") {
    DiscConfig cfg;
    cfg.resolution = 16;
    cfg.num_classes = 3;
    cfg.width_divisor = 16;
    ParamStore ps;
    Rng rng(34);
    Discriminator disc(cfg, ps, rng);
    const std::size_t before = ps.trainable_scalars();
    for (auto& e : ps.entries())
        if (e.trainable) e.var->value.fill(0.25);
    CHECK(ps.trainable_scalars() == before);
    CHECK(before > 0);
}
