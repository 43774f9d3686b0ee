#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dpgan/tensor.hpp"

namespace dpgan::ad {

struct Node;
using Var = std::shared_ptr<Node>;

/// One value in the computation graph. Forward evaluation is eager; backward
/// functions accumulate into parent gradients in reverse topological order.
struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward;

    Tensor& ensure_grad() {
        if (!grad.defined()) grad = Tensor::zeros(value.shape);
        return grad;
    }
};

bool grad_enabled();

/// Disables graph construction for its scope; ops built inside return
/// constants. Used for evaluation and for generator runs inside the
/// discriminator update.
class NoGrad {
public:
    NoGrad();
    ~NoGrad();
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

private:
    bool prev_;
};

Var constant(Tensor v);
Var leaf(Tensor v);  // trainable; value shares storage with the caller's tensor
Var detach(const Var& x);

/// Backpropagates from a scalar root. Gradients accumulate, so clear leaf
/// grads between steps.
void backward(const Var& root);

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);

/// Per-channel standardization over (batch, row, col): (x - mu) / sqrt(var + eps),
/// biased variance. Carries no learned parameters.
Var batch_standardize(const Var& x, double eps);

/// out[n,c,y,x] = x[n,c,y,x] * gain[c] + bias[c]
Var channel_affine(const Var& x, const Var& gain, const Var& bias);

Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var tanh_act(const Var& x);

Var upsample_nearest(const Var& x, int factor);
Var downsample_nearest(const Var& x, int factor);
/// Nearest resample to a square target resolution (integer ratio required).
Var resample_to(const Var& x, int target);

Var concat_channels(const std::vector<Var>& parts);
Var concat_batch(const std::vector<Var>& parts);
Var slice_batch(const Var& x, int begin, int end);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// x [B,C,H,W] * m [B,1,H,W], mask broadcast across channels.
Var broadcast_mul(const Var& x, const Var& m);
Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);

Var log_softmax_channels(const Var& x);

Var sum_all(const Var& x);
Var mean_all(const Var& x);

/// Weight divided by its leading singular value, estimated by power iteration
/// on the (out_channels x rest) flattening. When update is true the u/v
/// buffers advance in place before sigma is read; u and v are treated as
/// constants by the gradient.
Var spectral_scale(const Var& w, Tensor& u, Tensor& v, bool update, int iters);

/// Power-iteration estimate of the leading singular value with u/v buffers
/// left untouched unless update is set.
double spectral_sigma(const Tensor& w, Tensor& u, Tensor& v, bool update, int iters);

}  // namespace dpgan::ad
