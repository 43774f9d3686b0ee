// Times the tuned convolution kernels against the serial reference over the
// layer shapes that dominate training, and cross-checks their outputs.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "dpgan/kernels.hpp"
#include "dpgan/rng.hpp"
#include "dpgan/tensor.hpp"

using namespace dpgan;
using clk = std::chrono::steady_clock;

namespace {

struct Shape {
    const char* tag;
    int b, ci, h, w, co, k, stride, pad;
};

// Activations seen by the default 64x64 training run (generator rungs,
// discriminator ladder at batch 12 = 3 x batch_size) plus one wide layer.
const Shape kShapes[] = {
    {"gen rung 8x8", 4, 16, 8, 8, 16, 3, 1, 1},
    {"gen rung 16x16", 4, 16, 16, 16, 16, 3, 1, 1},
    {"gen rung 32x32", 4, 8, 32, 32, 8, 3, 1, 1},
    {"gen rung 64x64", 4, 8, 64, 64, 8, 3, 1, 1},
    {"gen cond 64x64", 4, 16, 64, 64, 8, 3, 1, 1},
    {"disc in 64x64", 12, 3, 64, 64, 16, 3, 1, 1},
    {"disc down 32x32", 12, 16, 32, 32, 16, 3, 2, 1},
    {"disc up 64x64", 12, 24, 64, 64, 8, 3, 1, 1},
    {"wide 32x32", 4, 64, 32, 32, 64, 3, 1, 1},
    {"pointwise 64x64", 12, 16, 64, 64, 16, 1, 1, 0},
};

Tensor filled(std::vector<int> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.gaussian();
    return t;
}

double max_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

template <typename F>
double time_ms(F&& f, int reps) {
    f();  // warm-up
    const auto t0 = clk::now();
    for (int i = 0; i < reps; ++i) f();
    const auto t1 = clk::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void bench_shape(const Shape& s) {
    Rng rng(17);
    Tensor x = filled({s.b, s.ci, s.h, s.w}, rng);
    Tensor w = filled({s.co, s.ci, s.k, s.k}, rng);
    Tensor bias = filled({s.co}, rng);
    const int ho = kernels::conv_out_dim(s.h, s.k, s.stride, s.pad);
    const int wo = kernels::conv_out_dim(s.w, s.k, s.stride, s.pad);
    Tensor out_ref({s.b, s.co, ho, wo}), out_fast({s.b, s.co, ho, wo});
    Tensor gy = filled({s.b, s.co, ho, wo}, rng);
    Tensor gx_ref({s.b, s.ci, s.h, s.w}), gx_fast({s.b, s.ci, s.h, s.w});
    Tensor gw_ref({s.co, s.ci, s.k, s.k}), gw_fast({s.co, s.ci, s.k, s.k});

    const double macs = static_cast<double>(s.b) * s.co * ho * wo * s.ci * s.k * s.k;
    const double gflop = 2.0 * macs * 1e-9;
    const int reps = std::max(2, static_cast<int>(2e8 / macs));

    const double fwd_ref = time_ms([&] { kernels::conv2d_forward_serial(x, w, &bias, s.stride, s.pad, out_ref); }, reps);
    const double fwd = time_ms([&] { kernels::conv2d_forward(x, w, &bias, s.stride, s.pad, out_fast); }, reps);
    const double gx_refms = time_ms([&] { gx_ref.fill(0.0); kernels::conv2d_grad_input_serial(gy, w, s.stride, s.pad, gx_ref); }, reps);
    const double gxms = time_ms([&] { gx_fast.fill(0.0); kernels::conv2d_grad_input(gy, w, s.stride, s.pad, gx_fast); }, reps);
    const double gw_refms = time_ms([&] { gw_ref.fill(0.0); kernels::conv2d_grad_weight_serial(gy, x, s.stride, s.pad, gw_ref); }, reps);
    const double gwms = time_ms([&] { gw_fast.fill(0.0); kernels::conv2d_grad_weight(gy, x, s.stride, s.pad, gw_fast); }, reps);

    const double diff = std::max({max_diff(out_ref, out_fast), max_diff(gx_ref, gx_fast),
                                  max_diff(gw_ref, gw_fast)});
    std::printf("%-17s %6.2f | %7.2f %7.2f %5.1fx | %7.2f %7.2f %5.1fx | %7.2f %7.2f %5.1fx | %.1e\n",
                s.tag, gflop * 1e3,
                gflop / fwd_ref * 1e3, gflop / fwd * 1e3, fwd_ref / fwd,
                gflop / gx_refms * 1e3, gflop / gxms * 1e3, gx_refms / gxms,
                gflop / gw_refms * 1e3, gflop / gwms * 1e3, gw_refms / gwms, diff);
}

}  // namespace

int main(int argc, char** argv) {
    const bool serial_mode = argc > 1 && std::string(argv[1]) == "--serial";
    kernels::set_parallel(!serial_mode);
    std::printf("convolution kernels: reference vs tuned (%s), GFLOP/s\n",
                serial_mode ? "tuned run serially" : "tuned run with OpenMP");
    std::printf("%-17s %6s | %23s | %23s | %23s | %s\n", "layer", "MFLOP",
                "forward ref/tuned/spd", "grad-in ref/tuned/spd", "grad-w  ref/tuned/spd",
                "max|diff|");
    for (const auto& s : kShapes) bench_shape(s);
    return 0;
}
