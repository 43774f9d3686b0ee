#include <doctest.h>

#include <cmath>

#include "dpgan/generator.hpp"
#include "test_util.hpp"

using namespace dpgan;
using testutil::check_gradients;
using testutil::random_tensor;

namespace {

void check_row(const LadderRow& row, const char* name, int channels, int res) {
    CHECK(row.name == name);
    CHECK(row.channels == channels);
    CHECK(row.res == res);
}

}  // namespace

TEST_CASE("config validation rejects bad ladders") {
    GenConfig cfg;
    cfg.resolution = 48;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.resolution = 8;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = GenConfig{};
    cfg.num_classes = 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = GenConfig{};
    cfg.width_divisor = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("full-width plan matches the 256-resolution reference ladder") {
    GenConfig cfg;
    cfg.resolution = 256;
    cfg.width_divisor = 1;
    cfg.num_classes = 35;
    GenPlan plan = plan_generator(cfg);

    REQUIRE(plan.sap.size() == 8);
    check_row(plan.sap[0], "z_y", 64 + 35, 256);
    check_row(plan.sap[1], "s", 32, 256);
    check_row(plan.sap[2], "s_5", 64, 256);
    check_row(plan.sap[3], "s_4", 64, 128);
    check_row(plan.sap[4], "s_3", 64, 64);
    check_row(plan.sap[5], "s_2", 64, 32);
    check_row(plan.sap[6], "s_1", 64, 16);
    check_row(plan.sap[7], "s_0", 64, 8);

    REQUIRE(plan.isp.size() == 7);
    check_row(plan.isp[0], "up_0", 1024, 8);
    check_row(plan.isp[1], "up_1", 1024, 16);
    check_row(plan.isp[2], "up_2", 512, 32);
    check_row(plan.isp[3], "up_3", 256, 64);
    check_row(plan.isp[4], "up_4", 128, 128);
    check_row(plan.isp[5], "up_5", 64, 256);
    check_row(plan.isp[6], "x", 3, 256);
}

TEST_CASE("desk-scale plan divides the reference widths by eight") {
    GenConfig cfg;  // defaults: resolution 64, divisor 8, 8 classes
    GenPlan plan = plan_generator(cfg);

    REQUIRE(plan.sap.size() == 6);
    check_row(plan.sap[0], "z_y", 8 + 8, 64);
    check_row(plan.sap[1], "s", 4, 64);
    check_row(plan.sap[2], "s_3", 8, 64);
    check_row(plan.sap[3], "s_2", 8, 32);
    check_row(plan.sap[4], "s_1", 8, 16);
    check_row(plan.sap[5], "s_0", 8, 8);

    REQUIRE(plan.isp.size() == 5);
    check_row(plan.isp[0], "up_0", 64, 8);
    check_row(plan.isp[1], "up_1", 32, 16);
    check_row(plan.isp[2], "up_2", 16, 32);
    check_row(plan.isp[3], "up_3", 8, 64);
    check_row(plan.isp[4], "x", 3, 64);

    GenConfig legacy = cfg;
    legacy.legacy_onehot = true;
    CHECK(plan_generator(legacy).sap.empty());
    CHECK(legacy.cond_channels() == 8);
    GenConfig nc = cfg;
    nc.no_cat = true;
    CHECK(nc.cond_channels() == 8);
    CHECK(cfg.cond_channels() == 16);
}

TEST_CASE("forward emits aligned pyramids and a bounded image") {
    for (int R : {16, 32, 64}) {
        GenConfig cfg;
        cfg.resolution = R;
        cfg.num_classes = 5;
        cfg.width_divisor = 16;
        ParamStore ps;
        Rng rng(11);
        Generator gen(cfg, ps, rng);

        Rng data(12);
        auto z = ad::constant(gen.sample_noise(2, data));
        auto y = ad::constant(random_tensor({2, 5, R, R}, data));
        auto out = gen.forward(z, y);

        CHECK(out.image->value.shape == std::vector<int>{2, 3, R, R});
        for (std::size_t i = 0; i < out.image->value.size(); ++i) {
            CHECK(out.image->value[i] > -1.0);
            CHECK(out.image->value[i] < 1.0);
        }
        REQUIRE(static_cast<int>(out.alphas.size()) == cfg.levels() + 1);
        for (int i = 0; i <= cfg.levels(); ++i) {
            CHECK(out.alphas[static_cast<std::size_t>(i)]->value.dim(2) == 8 << i);
            CHECK(out.alphas[static_cast<std::size_t>(i)]->value.dim(1) ==
                  cfg.alpha_channels());
        }
    }
}

TEST_CASE("forward validates input shapes") {
    GenConfig cfg;
    cfg.resolution = 16;
    cfg.num_classes = 3;
    cfg.width_divisor = 16;
    ParamStore ps;
    Rng rng(13);
    Generator gen(cfg, ps, rng);
    Rng data(14);
    auto z = ad::constant(random_tensor({1, cfg.zdim(), 16, 16}, data));
    auto y = ad::constant(random_tensor({1, 3, 16, 16}, data));
    CHECK_NOTHROW(gen.forward(z, y));
    auto bad_z = ad::constant(random_tensor({1, cfg.zdim() + 1, 16, 16}, data));
    CHECK_THROWS_AS(gen.forward(bad_z, y), std::invalid_argument);
    auto bad_y = ad::constant(random_tensor({1, 4, 16, 16}, data));
    CHECK_THROWS_AS(gen.forward(z, bad_y), std::invalid_argument);
    auto bad_batch = ad::constant(random_tensor({2, 3, 16, 16}, data));
    CHECK_THROWS_AS(gen.forward(z, bad_batch), std::invalid_argument);
}

TEST_CASE("same inputs reproduce the image; fresh noise changes it") {
    GenConfig cfg;
    cfg.resolution = 16;
    cfg.num_classes = 3;
    cfg.width_divisor = 16;
    ParamStore ps;
    Rng rng(15);
    Generator gen(cfg, ps, rng);
    Rng data(16);
    auto z1 = ad::constant(gen.sample_noise(1, data));
    auto z2 = ad::constant(gen.sample_noise(1, data));
    auto y = ad::constant(random_tensor({1, 3, 16, 16}, data));

    auto a = gen.forward(z1, y).image;
    auto b = gen.forward(z1, y).image;
    auto c = gen.forward(z2, y).image;
    double same = 0.0, diff = 0.0;
    for (std::size_t i = 0; i < a->value.size(); ++i) {
        same = std::max(same, std::abs(a->value[i] - b->value[i]));
        diff = std::max(diff, std::abs(a->value[i] - c->value[i]));
    }
    CHECK(same == 0.0);
    CHECK(diff > 1e-6);
}

TEST_CASE("conditioning variants rewire the expected inputs") {
    Rng data(17);
    const int R = 16;

    GenConfig legacy;
    legacy.resolution = R;
    legacy.num_classes = 3;
    legacy.width_divisor = 16;
    legacy.legacy_onehot = true;
    ParamStore ps1;
    Rng rng1(18);
    Generator gl(legacy, ps1, rng1);
    auto z = ad::constant(gl.sample_noise(1, data));
    auto y = ad::constant(random_tensor({1, 3, R, R}, data));
    auto out = gl.forward(z, y);
    CHECK(out.alphas.empty());
    CHECK(out.image->value.shape == std::vector<int>{1, 3, R, R});
    CHECK(ps1.find("sap/in/conv/w") == nullptr);
    CHECK(ps1.find("cond/rung0/g1/w")->var->value.dim(1) == 3);

    GenConfig nc = legacy;
    nc.legacy_onehot = false;
    nc.no_cat = true;
    ParamStore ps2;
    Rng rng2(19);
    Generator gn(nc, ps2, rng2);
    CHECK(ps2.find("cond/rung0/g1/w")->var->value.dim(1) == nc.alpha_channels());
    CHECK_NOTHROW(gn.forward(z, y));

    GenConfig top = nc;
    top.no_cat = false;
    top.route_top_alpha = true;
    ParamStore ps3;
    Rng rng3(20);
    Generator gt(top, ps3, rng3);
    CHECK(ps3.find("isp/out/w")->var->value.dim(1) ==
          top.isp_channels(R) + top.alpha_channels());
    CHECK(gt.forward(z, y).image->value.shape == std::vector<int>{1, 3, R, R});
}

TEST_CASE("noise sampling: broadcast by default, independent per pixel on request") {
    GenConfig cfg;
    cfg.resolution = 16;
    cfg.width_divisor = 16;
    ParamStore ps;
    Rng rng(21);
    Generator gen(cfg, ps, rng);

    Rng d1(22);
    Tensor tiled = gen.sample_noise(2, d1);
    bool constant_planes = true;
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < cfg.zdim(); ++c) {
            const double v = tiled.at4(b, c, 0, 0);
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 16; ++x)
                    if (tiled.at4(b, c, y, x) != v) constant_planes = false;
        }
    CHECK(constant_planes);

    GenConfig pp = cfg;
    pp.per_pixel_noise = true;
    ParamStore ps2;
    Rng rng2(23);
    Generator gpp(pp, ps2, rng2);
    Rng d2(24);
    Tensor dense = gpp.sample_noise(2, d2);
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < dense.size(); ++i) mean += dense[i];
    mean /= static_cast<double>(dense.size());
    for (std::size_t i = 0; i < dense.size(); ++i) {
        const double d = dense[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(dense.size());
    const double n = static_cast<double>(dense.size());
    CHECK(std::abs(mean) < 3.0 / std::sqrt(n));          // std error of the mean
    CHECK(std::abs(var - 1.0) < 3.0 * std::sqrt(2.0 / n));
    CHECK(dense.at4(0, 0, 0, 0) != dense.at4(0, 0, 0, 1));
}

TEST_CASE("gradients flow into both pyramids") {
    GenConfig cfg;
    cfg.resolution = 16;
    cfg.num_classes = 2;
    cfg.width_divisor = 32;
    ParamStore ps;
    Rng rng(25);
    Generator gen(cfg, ps, rng);
    Rng data(26);
    auto z = ad::leaf(random_tensor({1, cfg.zdim(), 16, 16}, data));
    auto y = ad::constant(random_tensor({1, 2, 16, 16}, data, 0.5));
    auto probe = ad::constant(random_tensor({1, 3, 16, 16}, data));

    std::vector<ad::Var> leaves{z, ps.find("sap/full/conv/w")->var,
                                ps.find("cond/rung0/g1/w")->var,
                                ps.find("isp/rung0/conv1/w")->var,
                                ps.find("isp/out/w")->var};
    auto r = check_gradients(
        [&] { return ad::sum_all(ad::mul(gen.forward(z, y).image, probe)); }, leaves, rng, 5);
    CHECK(r.max_rel < 1e-4);
    CHECK(r.checked == 5 * 5);
}
