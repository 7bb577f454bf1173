#pragma once

#include <vector>

#include "dots/tensor.hpp"

namespace dots {

// Differentiable primitives. All tensors are 64-bit float, row-major
// contiguous; spatial ops use NCHW layout with stride 1 and padding chosen to
// preserve the spatial size. Every op validates shapes and rejects non-finite
// inputs up front.

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// a: [m,k], b: [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

// x: [N,F], w: [F,C], bias: [C] -> [N,C]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor relu(const Tensor& x);

Tensor sigmoid(const Tensor& x);

// x: [N,Ci,H,W], w: [Co,Ci,kh,kw], odd kernel, output spatial size preserved.
Tensor conv2d(const Tensor& x, const Tensor& w, int dilation = 1);

// x: [N,C,H,W], w: [C,kh,kw]
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, int dilation = 1);

// x: [N,Ci,H,W], w: [Co,Ci]
Tensor pointwise_conv2d(const Tensor& x, const Tensor& w);

// conv2d with dilation >= 2
Tensor dilated_conv2d(const Tensor& x, const Tensor& w, int dilation = 2);

// 3x3 window, stride 1, padding 1; average over valid taps only.
Tensor avg_pool3x3(const Tensor& x);
Tensor max_pool3x3(const Tensor& x);

// Per-channel standardization over batch and spatial dims with learnable
// scale/shift; batch statistics only. x: [N,C,H,W], scale/shift: [C].
Tensor batch_stat_norm(const Tensor& x, const Tensor& scale, const Tensor& shift,
                       double eps = 1e-5);

// x: [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& x);

// logits: 1-D [k], temperature > 0. Max-subtracted for stability.
Tensor softmax_t(const Tensor& logits, double temperature);

// Non-graph helper on raw values (same math as softmax_t).
Eigen::ArrayXd softmax_t_values(const Eigen::ArrayXd& logits, double temperature);

// logits: [N,C], labels in [0,C). Mean negative log-likelihood -> scalar.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// out = sum_k weights[k] * features[k]; weights: any tensor with numel ==
// features.size(). Gradients flow to features and weights.
Tensor weighted_sum(const std::vector<Tensor>& features, const Tensor& weights);

// xs: [N,Ci,H,W] each, same N/H/W -> [N, sum(Ci), H, W]
Tensor concat_channels(const std::vector<Tensor>& xs);

// -> scalar [1]
Tensor reduce_mean(const Tensor& x);

inline Tensor zeros_like(const Tensor& x) { return Tensor::zeros(x.shape()); }

}  // namespace dots
