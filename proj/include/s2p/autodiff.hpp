#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "s2p/rng.hpp"
#include "s2p/tensor.hpp"

namespace s2p::ad {

// Eager reverse-mode autodiff. Each op computes its value at construction and
// stores a closure that pulls the node's gradient into its parents. Graphs
// are rebuilt per evaluation; nodes are freed when the last NodePtr drops.

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backprop;

  Tensor& grad_buffer() {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
    return grad;
  }
};

NodePtr constant(Tensor v);
NodePtr leaf(Tensor v);  // participates in gradients

// Accumulates gradients of `root` (a scalar) into every reachable leaf.
void backward(const NodePtr& root);

// --- elementwise / scalar ---
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr add_scalar(const NodePtr& a, double s);
NodePtr mul_scalar(const NodePtr& a, double s);
NodePtr square(const NodePtr& a);
NodePtr sqrt_safe(const NodePtr& a);  // d/dx at 0 propagated as 0
NodePtr tanh_op(const NodePtr& a);
NodePtr relu(const NodePtr& a);
NodePtr leaky_relu(const NodePtr& a, double slope);

// --- reductions ---
NodePtr sum_all(const NodePtr& a);
NodePtr mean_all(const NodePtr& a);

// --- shape ---
NodePtr reshape(const NodePtr& a, std::vector<int> shape);
NodePtr select_row(const NodePtr& a, int row);               // [R,W] -> [W]
NodePtr broadcast_rows(const NodePtr& v, int rows);          // [W] -> [R,W]
NodePtr group_mean_rows(const NodePtr& a,
                        const std::vector<std::pair<int, int>>& groups);  // [R,W] -> [G,W]
NodePtr replicate_channels(const NodePtr& a, int count);     // [1,H,W] -> [count,H,W]

// --- linear algebra ---
NodePtr matmul(const NodePtr& a, const NodePtr& b);          // [M,K]x[K,N]
NodePtr add_rowvec(const NodePtr& a, const NodePtr& b);      // [M,N] + [N]

// --- image / conv ops (NCHW) ---
NodePtr conv2d(const NodePtr& x, const NodePtr& kernel, const NodePtr& bias,
               int pad);                                     // stride 1
NodePtr maxpool2(const NodePtr& x);                          // 2x2, stride 2
NodePtr upsample2_nearest(const NodePtr& x);
NodePtr resize_bilinear(const NodePtr& x, int out_h, int out_w);  // half-pixel centers
NodePtr scale_shift_channels(const NodePtr& x, const NodePtr& scale,
                             const NodePtr& shift);          // x*(1+s_c)+t_c

// --- normalization / regularization ---
NodePtr batchnorm2d_train(const NodePtr& x, const NodePtr& gamma,
                          const NodePtr& beta, Tensor& running_mean,
                          Tensor& running_var, double momentum, double eps);
NodePtr batchnorm2d_infer(const NodePtr& x, const NodePtr& gamma,
                          const NodePtr& beta, const Tensor& running_mean,
                          const Tensor& running_var, double eps);
NodePtr batchnorm1d_train(const NodePtr& x, const NodePtr& gamma,
                          const NodePtr& beta, Tensor& running_mean,
                          Tensor& running_var, double momentum, double eps);
NodePtr batchnorm1d_infer(const NodePtr& x, const NodePtr& gamma,
                          const NodePtr& beta, const Tensor& running_mean,
                          const Tensor& running_var, double eps);
NodePtr dropout(const NodePtr& x, double p, Rng& rng);

// --- composites ---
NodePtr div_by_scalar(const NodePtr& a, const NodePtr& s);   // s is a scalar node
NodePtr l2_norm(const NodePtr& a);                           // sqrt(sum(a^2))
NodePtr mse(const NodePtr& a, const NodePtr& b);             // mean((a-b)^2)

}  // namespace s2p::ad
