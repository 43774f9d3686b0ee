#pragma once

#include <cstddef>
#include <vector>

#include "dpgan/tensor.hpp"

namespace dpgan::kernels {

/// Runtime switch between the OpenMP kernels and the serial reference path.
void set_parallel(bool on);
bool parallel();

/// When true (default), every reduction accumulates in a fixed serial order so
/// results are bit-identical for any thread count. When false, whole-tensor
/// reductions may use OpenMP reductions (order depends on the schedule).
void set_deterministic_reductions(bool on);
bool deterministic_reductions();

int conv_out_dim(int in, int k, int stride, int pad);

// x [B,Ci,H,W], w [Co,Ci,k,k], b [Co] or null, out [B,Co,Ho,Wo]. Overwrites out.
void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad,
                    Tensor& out);
void conv2d_forward_serial(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad,
                           Tensor& out);

// All gradient kernels accumulate into their output argument.
void conv2d_grad_input(const Tensor& gy, const Tensor& w, int stride, int pad, Tensor& gx);
void conv2d_grad_input_serial(const Tensor& gy, const Tensor& w, int stride, int pad, Tensor& gx);

void conv2d_grad_weight(const Tensor& gy, const Tensor& x, int stride, int pad, Tensor& gw);
void conv2d_grad_weight_serial(const Tensor& gy, const Tensor& x, int stride, int pad, Tensor& gw);

void conv2d_grad_bias(const Tensor& gy, Tensor& gb);
void conv2d_grad_bias_serial(const Tensor& gy, Tensor& gb);

// Nearest-neighbour resampling by an integer factor. Downsampling picks the
// top-left element of each block, so off-grid detail is dropped, not averaged.
void upsample_nearest(const Tensor& x, int f, Tensor& out);
void upsample_nearest_serial(const Tensor& x, int f, Tensor& out);
void upsample_nearest_grad(const Tensor& gy, int f, Tensor& gx);
void upsample_nearest_grad_serial(const Tensor& gy, int f, Tensor& gx);

void downsample_nearest(const Tensor& x, int f, Tensor& out);
void downsample_nearest_serial(const Tensor& x, int f, Tensor& out);
void downsample_nearest_grad(const Tensor& gy, int f, Tensor& gx);
void downsample_nearest_grad_serial(const Tensor& gy, int f, Tensor& gx);

// Per-channel mean and biased variance over (batch, row, col) of x [B,C,H,W].
void channel_mean_var(const Tensor& x, std::vector<double>& mu, std::vector<double>& var);
void channel_mean_var_serial(const Tensor& x, std::vector<double>& mu, std::vector<double>& var);

/// Sum of n doubles. Serial left-to-right when deterministic_reductions() is
/// set, OpenMP reduction otherwise.
double sum_array(const double* p, std::size_t n);

/// y[i] += a * x[i]
void axpy(double a, const double* x, double* y, std::size_t n);

}  // namespace dpgan::kernels
