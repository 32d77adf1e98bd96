#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "acunet/errors.h"
#include "acunet/rng.h"

namespace acunet {

// Dense n-dimensional row-major tensor of 64-bit floats with an optional
// same-shape gradient buffer. A Tensor is a shared handle: copies alias the
// same storage, clone() makes a deep copy. All layer math in this library
// runs in double precision.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from_vector(std::vector<int> shape, std::vector<double> values,
                              bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    // Gradient buffer; empty until ensure_grad() or a backward pass touches it.
    bool has_grad() const { return !node_->grad.empty(); }
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void ensure_grad();
    void zero_grad();
    void free_grad() { node_->grad.clear(); node_->grad.shrink_to_fit(); }

    Tensor clone() const;

    // Identity of the underlying storage (used to detect aliasing).
    const void* node_id() const { return node_.get(); }

  private:
    struct Node {
        std::vector<int> shape;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Node> node_;

    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
    static Tensor make(std::vector<int> shape, bool requires_grad);
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Raises glibc's malloc thresholds so large tensor buffers get reused
// between passes instead of being unmapped on every free. Idempotent;
// called at the entry of the heavy compute paths.
void tune_allocator();

// Reverse-mode gradient tape. Ops record a backward closure per produced
// output; backward() seeds the scalar loss with 1 and replays the closures
// in reverse recording order. The tape is cleared afterwards: one tape per
// forward/backward pass.
class GradTape {
  public:
    void record(Tensor output, std::function<void()> backward_fn);
    void backward(Tensor loss);
    size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    void clear();

  private:
    struct Entry {
        Tensor output;
        std::function<void()> backward_fn;
    };
    std::vector<Entry> entries_;
};

// Batch-norm state for one channel axis. scale/shift learn, running stats
// are buffers updated only in training mode.
struct BatchNormParams {
    Tensor scale;
    Tensor shift;
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.9;
    double epsilon = 1e-5;
};

BatchNormParams make_batch_norm(int channels, double momentum = 0.9, double epsilon = 1e-5);

// ---- layer operations -------------------------------------------------
// Every op computes its forward result and, when `tape` is non-null and an
// input requires grad, records the matching backward rule. Pass nullptr for
// pure inference.

// input [B,C,H,W], weight [K,C,kh,kw], bias [K] -> [B,K,H',W'],
// H' = (H + 2*padding - kh)/stride + 1 (floor), likewise W'.
Tensor conv2d(GradTape* tape, const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);

// input [B,C,H,W], weight [C,K,2,2], bias [K] -> [B,K,2H,2W]; stride fixed
// at 2, the adjoint of a stride-2 2x2 conv2d with the same kernel buffer.
Tensor conv_transpose2d(GradTape* tape, const Tensor& input, const Tensor& weight,
                        const Tensor& bias);

// 2x2 disjoint windows, H and W must be even. Gradient routes to the first
// (row-major) argmax of each window.
Tensor max_pool2d(GradTape* tape, const Tensor& input);

// input [B,K,H,W] or [B,K]. Training mode normalizes with batch statistics
// and updates running stats; eval mode normalizes with the running stats.
Tensor batch_norm(GradTape* tape, const Tensor& input, BatchNormParams& params, bool training);

Tensor elu(GradTape* tape, const Tensor& input);
Tensor sigmoid(GradTape* tape, const Tensor& input);

// input [B,N], weight [M,N], bias [M] -> input * weight^T + bias.
Tensor linear(GradTape* tape, const Tensor& input, const Tensor& weight, const Tensor& bias);

// Per-sample per-channel affine: out[b,k,...] = gamma[b,k]*x[b,k,...] + beta[b,k].
Tensor film(GradTape* tape, const Tensor& input, const Tensor& gamma, const Tensor& beta);

Tensor add(GradTape* tape, const Tensor& a, const Tensor& b);
Tensor mul(GradTape* tape, const Tensor& a, const Tensor& b);
Tensor sum(GradTape* tape, const Tensor& x);
Tensor reshape(GradTape* tape, const Tensor& x, std::vector<int> new_shape);

// Zero-pad [B,C,H,W] at the bottom/right up to (out_h, out_w), and its
// inverse crop keeping the top-left corner.
Tensor pad2d(GradTape* tape, const Tensor& x, int out_h, int out_w);
Tensor crop2d(GradTape* tape, const Tensor& x, int out_h, int out_w);

// Orthogonal initialization: the tensor is flattened to (shape[0], rest);
// whichever axis is shorter comes out orthonormal. Deterministic in the rng
// stream / seed.
Tensor orthogonal_init(const std::vector<int>& shape, Rng& rng);
Tensor orthogonal_init(const std::vector<int>& shape, uint64_t seed);

}  // namespace acunet
