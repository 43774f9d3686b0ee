#include <doctest.h>

#include <cmath>

#include "dpgan/losses.hpp"
#include "test_util.hpp"

using namespace dpgan;
using testutil::check_gradients;
using testutil::random_tensor;

namespace {

ad::Var score(double v) { return ad::constant(Tensor({1, 1, 1, 1}, {v})); }

LabelMap halves_map(int h, int w, std::uint8_t left, std::uint8_t right) {
    LabelMap l(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) l.at(y, x) = x < w / 2 ? left : right;
    return l;
}

}  // namespace

TEST_CASE("pixel cross entropy closed forms") {
    // Uniform probabilities on one pixel, one real class: ln 2 each way.
    auto logits = ad::constant(Tensor::zeros({1, 2, 1, 1}));
    std::vector<LabelMap> lab{LabelMap(1, 1)};
    std::vector<double> w{1.0};
    auto real = pixel_ce(logits, ce_target_true(lab, 1, w));
    CHECK(real->value[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    auto fake = pixel_ce(logits, ce_target_fake(1, 1, 1, 1));
    CHECK(fake->value[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // Confident correct predictions drive the loss to zero.
    Tensor sharp({1, 2, 1, 1}, {50.0, 0.0});
    auto zero = pixel_ce(ad::constant(sharp), ce_target_true(lab, 1, w));
    CHECK(zero->value[0] < 1e-9);
}

TEST_CASE("doubling a class weight doubles only that class's contribution") {
    Rng rng(41);
    auto logits = ad::constant(random_tensor({1, 3, 4, 4}, rng));
    std::vector<LabelMap> lab{halves_map(4, 4, 0, 1)};
    std::vector<double> w1{1.0, 1.0}, w2{1.0, 2.0};
    const double a = pixel_ce(logits, ce_target_true(lab, 2, w1))->value[0];
    const double b = pixel_ce(logits, ce_target_true(lab, 2, w2))->value[0];

    // Isolate the class-1 share by zeroing the class-0 weight.
    std::vector<double> only1{0.0, 1.0};
    const double c1 = pixel_ce(logits, ce_target_true(lab, 2, only1))->value[0];
    CHECK(b - a == doctest::Approx(c1).epsilon(1e-12));
}

TEST_CASE("pixel loss is invariant to relabeling pixel positions consistently") {
    Rng rng(42);
    Tensor raw = random_tensor({1, 3, 2, 2}, rng);
    std::vector<LabelMap> lab{halves_map(2, 2, 1, 0)};
    std::vector<double> w{0.7, 1.3};
    const double base = pixel_ce(ad::constant(raw), ce_target_true(lab, 2, w))->value[0];

    // Swap two pixels in both the logits and the label map.
    Tensor moved = raw.clone();
    for (int c = 0; c < 3; ++c) {
        std::swap(moved[moved.idx4(0, c, 0, 0)], moved[moved.idx4(0, c, 1, 1)]);
    }
    std::vector<LabelMap> lab2 = lab;
    std::swap(lab2[0].at(0, 0), lab2[0].at(1, 1));
    const double perm = pixel_ce(ad::constant(moved), ce_target_true(lab2, 2, w))->value[0];
    CHECK(perm == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("pixel cross entropy rejects bad inputs") {
    std::vector<LabelMap> lab{LabelMap(2, 2)};
    lab[0].at(0, 0) = 5;
    std::vector<double> w{1.0, 1.0};
    CHECK_THROWS_AS(ce_target_true(lab, 2, w), std::invalid_argument);
    std::vector<LabelMap> ok{LabelMap(2, 2)};
    CHECK_THROWS_AS(ce_target_true(ok, 2, std::vector<double>{1.0}), std::invalid_argument);
    auto logits = ad::constant(Tensor::zeros({1, 3, 2, 2}));
    CHECK_THROWS_AS(pixel_ce(logits, Tensor::zeros({1, 3, 4, 4})), std::invalid_argument);
}

TEST_CASE("patch hinge hand values") {
    CHECK(ms_patch_loss_d({score(2)}, {score(-2)})->value[0] == doctest::Approx(0.0));
    CHECK(ms_patch_loss_d({score(0)}, {score(0)})->value[0] == doctest::Approx(2.0));
    CHECK(ms_patch_loss_d({score(-1)}, {score(1)})->value[0] == doctest::Approx(4.0));
    // Average over taps: (2 + 4) / 2.
    CHECK(ms_patch_loss_d({score(0), score(-1)}, {score(0), score(1)})->value[0] ==
          doctest::Approx(3.0));

    CHECK(ms_patch_loss_g({score(1)})->value[0] == doctest::Approx(0.0));
    CHECK(ms_patch_loss_g({score(0)})->value[0] == doctest::Approx(1.0));
    CHECK(ms_patch_loss_g({score(-3)})->value[0] == doctest::Approx(4.0));
    CHECK(ms_patch_loss_g({score(3)}, true)->value[0] == doctest::Approx(-3.0));

    CHECK_THROWS_AS(ms_patch_loss_d({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(ms_patch_loss_g({}), std::invalid_argument);
}

TEST_CASE("patch hinge is nonnegative and zero exactly at satisfied margins") {
    Rng rng(43);
    for (int t = 0; t < 20; ++t) {
        auto r = ad::constant(random_tensor({2, 1, 3, 3}, rng, 2.0));
        auto f = ad::constant(random_tensor({2, 1, 3, 3}, rng, 2.0));
        const double v = ms_patch_loss_d({r}, {f})->value[0];
        CHECK(v >= 0.0);
        bool satisfied = true;
        for (std::size_t i = 0; i < r->value.size(); ++i) {
            if (r->value[i] < 1.0 || f->value[i] > -1.0) satisfied = false;
        }
        CHECK((v == 0.0) == satisfied);
    }
}

TEST_CASE("feature matching closed forms and symmetry") {
    auto t = [](double v) { return ad::constant(Tensor({1, 1, 1, 1}, {v})); };
    CHECK(feature_match_loss({t(2)}, {t(2)})->value[0] == doctest::Approx(0.0));
    CHECK(feature_match_loss({t(1)}, {t(3)})->value[0] == doctest::Approx(4.0));
    CHECK(feature_match_loss({t(0), t(0)}, {t(0), t(2)})->value[0] == doctest::Approx(2.0));
    CHECK(feature_match_loss({t(1)}, {t(3)})->value[0] ==
          feature_match_loss({t(3)}, {t(1)})->value[0]);

    // Normalized by batch * channels * area.
    auto r = ad::constant(Tensor::zeros({2, 3, 2, 2}));
    auto f = ad::constant(Tensor::full({2, 3, 2, 2}, 1.0));
    CHECK(feature_match_loss({r}, {f})->value[0] == doctest::Approx(1.0));

    CHECK_THROWS_AS(feature_match_loss({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(feature_match_loss({r}, {t(1)}), std::invalid_argument);
}

TEST_CASE("feature matching trains only the fake side") {
    Rng rng(44);
    auto real = ad::leaf(random_tensor({1, 2, 2, 2}, rng));
    auto fake = ad::leaf(random_tensor({1, 2, 2, 2}, rng));
    auto loss = feature_match_loss({real}, {fake});
    ad::backward(loss);
    CHECK_FALSE(real->grad.defined());
    REQUIRE(fake->grad.defined());
    double g = 0.0;
    for (std::size_t i = 0; i < fake->grad.size(); ++i) g += std::abs(fake->grad[i]);
    CHECK(g > 0.0);

    auto r = check_gradients([&] { return feature_match_loss({real}, {fake}); }, {fake}, rng, 8);
    CHECK(r.max_rel < 1e-6);
}

TEST_CASE("hinge and cross-entropy gradients match finite differences") {
    Rng rng(45);
    auto rs = ad::leaf(random_tensor({2, 1, 2, 2}, rng));
    auto fs = ad::leaf(random_tensor({2, 1, 2, 2}, rng));
    // Keep every score away from the hinge kink at |1|.
    for (std::size_t i = 0; i < rs->value.size(); ++i) {
        if (std::abs(std::abs(rs->value[i]) - 1.0) < 0.2) rs->value[i] += 0.4;
        if (std::abs(std::abs(fs->value[i]) - 1.0) < 0.2) fs->value[i] += 0.4;
    }
    auto rd = check_gradients([&] { return ms_patch_loss_d({rs}, {fs}); }, {rs, fs}, rng, 8);
    CHECK(rd.max_rel < 1e-6);
    auto rg = check_gradients([&] { return ms_patch_loss_g({fs}); }, {fs}, rng, 8);
    CHECK(rg.max_rel < 1e-6);

    auto logits = ad::leaf(random_tensor({2, 4, 2, 2}, rng));
    std::vector<LabelMap> lab{halves_map(2, 2, 0, 1), halves_map(2, 2, 2, 0)};
    std::vector<double> w{1.0, 2.0, 0.5};
    Tensor target = ce_target_true(lab, 3, w);
    auto rc = check_gradients([&] { return pixel_ce(logits, target); }, {logits}, rng, 8);
    CHECK(rc.max_rel < 1e-6);
}

TEST_CASE("mix masks are binary and constant on every connected region") {
    SceneSpec spec;
    spec.height = 24;
    spec.width = 24;
    for (int t = 0; t < 10; ++t) {
        Scene sc = generate_scene(spec, 900, static_cast<std::uint64_t>(t));
        std::vector<LabelMap> lab{sc.label};
        Rng rng(1000 + static_cast<std::uint64_t>(t));
        Tensor m = labelmix_masks(lab, rng);
        RegionMap rm = region_map(sc.label, true);
        std::vector<double> first(static_cast<std::size_t>(rm.regions), -1.0);
        for (std::size_t i = 0; i < sc.label.v.size(); ++i) {
            const double v = m[i];
            CHECK((v == 0.0 || v == 1.0));
            auto& f = first[static_cast<std::size_t>(rm.id[i])];
            if (f < 0) f = v;
            else CHECK(f == v);
        }
    }
}

TEST_CASE("single-region map gets a constant mask and both values occur") {
    std::vector<LabelMap> lab{LabelMap(4, 4)};  // all background: one region
    bool saw0 = false, saw1 = false;
    for (std::uint64_t s = 0; s < 64; ++s) {
        Rng rng(s);
        Tensor m = labelmix_masks(lab, rng);
        const double v = m[0];
        for (std::size_t i = 0; i < m.size(); ++i) CHECK(m[i] == v);
        (v == 0.0 ? saw0 : saw1) = true;
    }
    CHECK(saw0);
    CHECK(saw1);
}

TEST_CASE("two-region assignments are close to uniform over seeds") {
    std::vector<LabelMap> lab{halves_map(4, 4, 1, 2)};
    int counts[4] = {0, 0, 0, 0};
    const int trials = 10000;
    for (int s = 0; s < trials; ++s) {
        Rng rng(static_cast<std::uint64_t>(s) + 7);
        Tensor m = labelmix_masks(lab, rng);
        const int left = m[0] > 0.5 ? 1 : 0;
        const int right = m[3] > 0.5 ? 1 : 0;
        ++counts[left * 2 + right];
    }
    for (int k = 0; k < 4; ++k)
        CHECK(std::abs(counts[k] / static_cast<double>(trials) - 0.25) < 0.02);
}

TEST_CASE("whole-class masks tie all components of a class together") {
    // Two separate squares of class 1 on background.
    LabelMap l(8, 8);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
            l.at(y, x) = 1;
            l.at(y + 6, x + 6) = 1;
        }
    std::vector<LabelMap> lab{l};
    bool split_seen = false;
    for (std::uint64_t s = 0; s < 200; ++s) {
        Rng rng(s);
        Tensor whole = labelmix_masks(lab, rng, true);
        CHECK(whole[whole.idx4(0, 0, 0, 0)] == whole[whole.idx4(0, 0, 7, 7)]);
        Rng rng2(s);
        Tensor comp = labelmix_masks(lab, rng2, false);
        if (comp[comp.idx4(0, 0, 0, 0)] != comp[comp.idx4(0, 0, 7, 7)]) split_seen = true;
    }
    CHECK(split_seen);  // component masks can separate what class masks cannot
}

TEST_CASE("mixing blends the two images under the mask") {
    auto x = ad::constant(Tensor({1, 1, 1, 2}, {2, 2}));
    auto xh = ad::constant(Tensor({1, 1, 1, 2}, {5, 5}));
    Tensor m({1, 1, 1, 2}, {1, 0});
    auto mix = labelmix(x, xh, m);
    CHECK(mix->value[0] == doctest::Approx(2.0));
    CHECK(mix->value[1] == doctest::Approx(5.0));

    Tensor ones = Tensor::full({1, 1, 1, 2}, 1.0);
    auto keep = labelmix(x, xh, ones);
    CHECK(keep->value[0] == doctest::Approx(2.0));
    CHECK(keep->value[1] == doctest::Approx(2.0));
    Tensor zeros = Tensor::zeros({1, 1, 1, 2});
    auto drop = labelmix(x, xh, zeros);
    CHECK(drop->value[0] == doctest::Approx(5.0));
    CHECK(drop->value[1] == doctest::Approx(5.0));
}

TEST_CASE("consistency vanishes for elementwise-affine discriminators") {
    Rng rng(46);
    for (int trial = 0; trial < 20; ++trial) {
        auto xr = ad::constant(random_tensor({2, 3, 4, 4}, rng));
        auto xf = ad::constant(random_tensor({2, 3, 4, 4}, rng));
        Tensor m({2, 1, 4, 4});
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;

        auto a = ad::constant(random_tensor({2, 3, 4, 4}, rng));
        auto b = ad::constant(random_tensor({2, 3, 4, 4}, rng));
        auto affine = [&](const ad::Var& v) { return ad::add(ad::mul(v, a), b); };

        auto mix_logits = affine(labelmix(xr, xf, m));
        auto loss = labelmix_consistency(mix_logits, affine(xr), affine(xf), m);
        CHECK(loss->value[0] < 1e-10);
    }
}

TEST_CASE("consistency is zero when real and fake agree, positive otherwise") {
    Rng rng(47);
    auto xr = ad::constant(random_tensor({1, 2, 2, 2}, rng));
    Tensor m({1, 1, 2, 2}, {1, 0, 0, 1});
    CHECK(labelmix_consistency(xr, xr, xr, m)->value[0] == doctest::Approx(0.0));

    // A squaring discriminator does not commute with mixing in general.
    auto xf = ad::constant(random_tensor({1, 2, 2, 2}, rng));
    auto sq = [](const ad::Var& v) { return ad::mul(v, v); };
    auto mix_logits = sq(labelmix(xr, xf, m));
    // Shift the fake so real and fake differ at masked positions.
    auto loss = labelmix_consistency(mix_logits, sq(xr), sq(ad::add_scalar(xf, 1.0)), m);
    CHECK(loss->value[0] > 0.0);
}

TEST_CASE("consistency gradients reach all three logit tensors") {
    Rng rng(48);
    auto mixl = ad::leaf(random_tensor({2, 2, 2, 2}, rng));
    auto rl = ad::leaf(random_tensor({2, 2, 2, 2}, rng));
    auto fl = ad::leaf(random_tensor({2, 2, 2, 2}, rng));
    Tensor m({2, 1, 2, 2});
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    auto r = check_gradients([&] { return labelmix_consistency(mixl, rl, fl, m); },
                             {mixl, rl, fl}, rng, 8);
    CHECK(r.max_rel < 1e-6);
}
