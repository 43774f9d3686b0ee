#include <doctest.h>

#include <cmath>

#include "dpgan/nn.hpp"
#include "test_util.hpp"

using namespace dpgan;
using testutil::check_gradients;
using testutil::random_tensor;

TEST_CASE("param store registers, finds and counts") {
    ParamStore ps;
    auto w = ps.param("a/w", Tensor::zeros({2, 3}));
    ps.buffer("a/u", Tensor::zeros({2}));
    CHECK(ps.trainable_scalars() == 6);
    CHECK(ps.find("a/w") != nullptr);
    CHECK(ps.find("a/u") != nullptr);
    CHECK_FALSE(ps.find("a/u")->trainable);
    CHECK(ps.find("missing") == nullptr);
    CHECK_THROWS_AS(ps.param("a/w", Tensor::zeros({1})), std::invalid_argument);
    CHECK(w->requires_grad);
}

TEST_CASE("orthogonal init produces orthonormal rows") {
    Rng rng(5);
    Tensor w({4, 2, 3, 3});
    init_orthogonal(w, 1.0, rng);
    const int rows = 4, cols = 18;
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j <= i; ++j) {
            double d = 0.0;
            for (int e = 0; e < cols; ++e)
                d += w[static_cast<std::size_t>(i * cols + e)] *
                     w[static_cast<std::size_t>(j * cols + e)];
            CHECK(d == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-10));
        }
}

TEST_CASE("a lone 3x3 conv from 4 to 8 channels with bias has 296 parameters") {
    ParamStore ps;
    Rng rng(1);
    make_conv(ps, rng, "conv", {4, 8, 3, 1, 1, 1.0, true, false});
    CHECK(ps.trainable_scalars() == 296);
}

TEST_CASE("spectral norm keeps the effective weight's leading singular value near one") {
    ParamStore ps;
    Rng rng(2);
    Conv2d conv = make_conv(ps, rng, "conv", {3, 5, 3, 1, 1, 1.0, false, true});
    // Scale and perturb the raw weight so its spectrum is spread out and the
    // normalization has work to do.
    for (std::size_t i = 0; i < conv.w->value.size(); ++i)
        conv.w->value[i] = conv.w->value[i] * 7.5 + 1.5 * rng.gaussian();
    auto x = ad::constant(random_tensor({2, 3, 8, 8}, rng));
    for (int i = 0; i < 50; ++i) (void)conv(x, true);  // converge the power iteration

    Tensor uu = conv.u, vv = conv.v;
    const double sigma_hat = ad::spectral_sigma(conv.w->value, uu, vv, false, 0);
    Tensor u2 = random_tensor({5}, rng), v2 = random_tensor({27}, rng);
    const double sigma_true = ad::spectral_sigma(conv.w->value, u2, v2, true, 500);
    CHECK(sigma_true / sigma_hat <= 1.0 + 1e-2);
    CHECK(sigma_true / sigma_hat >= 1.0 - 1e-2);
}

TEST_CASE("conv block shape and gradient") {
    ParamStore ps;
    Rng rng(3);
    ConvBlock blk = make_conv_block(ps, rng, "blk", 3, 5, 3, 2, 1);
    auto x = ad::leaf(random_tensor({2, 3, 8, 8}, rng));
    auto y = blk(x);
    CHECK(y->value.shape == std::vector<int>{2, 5, 4, 4});
    for (std::size_t i = 0; i < y->value.size(); ++i) CHECK(y->value[i] >= 0.0);  // ReLU output

    std::vector<ad::Var> leaves{x, blk.conv.w, blk.conv.b, blk.g, blk.b};
    auto probe = ad::constant(random_tensor({2, 5, 4, 4}, rng));
    auto r = check_gradients([&] { return ad::sum_all(ad::mul(blk(x), probe)); }, leaves, rng, 6);
    CHECK(r.max_rel < 1e-6);
}

TEST_CASE("modulated standardization applies gamma and beta") {
    // Values {1,3}: standardized to about -1,+1; gamma 2, beta 1 -> about -1, 3.
    auto x = ad::constant(Tensor({1, 1, 1, 2}, {1, 3}));
    SpadeParams p;
    p.gamma = ad::constant(Tensor::full({1, 1, 1, 2}, 2.0));
    p.beta = ad::constant(Tensor::full({1, 1, 1, 2}, 1.0));
    auto y = spade_modulate(x, p);
    CHECK(y->value[0] == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(y->value[1] == doctest::Approx(3.0).epsilon(1e-4));
}

TEST_CASE("spade residual block: projection skip only on channel change") {
    ParamStore ps;
    Rng rng(4);
    SpadeResBlock same = make_spade_resblock(ps, rng, "same", 6, 6);
    CHECK_FALSE(same.has_skip);
    SpadeResBlock proj = make_spade_resblock(ps, rng, "proj", 6, 4);
    CHECK(proj.has_skip);
    CHECK(proj.cmid == 4);

    auto make_cond = [&](int c) {
        SpadeParams p;
        p.gamma = ad::constant(random_tensor({2, c, 4, 4}, rng, 0.1));
        p.beta = ad::constant(random_tensor({2, c, 4, 4}, rng, 0.1));
        for (std::size_t i = 0; i < p.gamma->value.size(); ++i) p.gamma->value[i] += 1.0;
        return p;
    };
    SpadeRungCond cond{make_cond(6), make_cond(4), make_cond(6)};
    auto x = ad::leaf(random_tensor({2, 6, 4, 4}, rng));
    auto y = proj.forward(x, cond);
    CHECK(y->value.shape == std::vector<int>{2, 4, 4, 4});

    auto probe = ad::constant(random_tensor({2, 4, 4, 4}, rng));
    std::vector<ad::Var> leaves{x, proj.conv1.w, proj.conv2.w, proj.skip.w};
    auto r = check_gradients(
        [&] { return ad::sum_all(ad::mul(proj.forward(x, cond), probe)); }, leaves, rng, 6);
    CHECK(r.max_rel < 1e-6);
}

TEST_CASE("down and up residual blocks change resolution by two") {
    ParamStore ps;
    Rng rng(6);
    ResBlockDown down = make_resblock_down(ps, rng, "down", 3, 8, true);
    ResBlockUp up = make_resblock_up(ps, rng, "up", 8, 4, true);
    auto x = ad::leaf(random_tensor({2, 3, 8, 8}, rng));
    auto mid = down.forward(x, false);
    CHECK(mid->value.shape == std::vector<int>{2, 8, 4, 4});
    auto y = up.forward(mid, false);
    CHECK(y->value.shape == std::vector<int>{2, 4, 8, 8});

    // Gradients flow through the whole sandwich with spectral norm frozen.
    auto probe = ad::constant(random_tensor({2, 4, 8, 8}, rng));
    std::vector<ad::Var> leaves{x, down.conv1.w, down.skip.w, up.conv2.w, up.skip.w};
    auto r = check_gradients(
        [&] { return ad::sum_all(ad::mul(up.forward(down.forward(x, false), false), probe)); },
        leaves, rng, 6);
    CHECK(r.max_rel < 1e-6);
}

TEST_CASE("patch head emits a single-channel score map") {
    ParamStore ps;
    Rng rng(7);
    PatchHead head = make_patch_head(ps, rng, "head", 6, true);
    auto x = ad::constant(random_tensor({3, 6, 4, 4}, rng));
    auto y = head.forward(x, false);
    CHECK(y->value.shape == std::vector<int>{3, 1, 4, 4});
}
