#pragma once

#include <optional>
#include <vector>

#include "dots/tensor.hpp"

namespace dots {

// SGD with momentum (v <- mu*v + g), optional decoupled-from-nothing L2 term
// folded into the gradient, and optional global-norm gradient clipping applied
// before the weight-decay/momentum update. Momentum buffers persist per
// parameter across steps.
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, double momentum, double weight_decay,
      std::optional<double> grad_clip = std::nullopt);

  // All parameters must have populated gradients.
  void step(double lr);
  void zero_grad();

  const std::vector<Tensor>& params() const { return params_; }
  std::vector<Eigen::ArrayXd>& momentum_buffers() { return velocity_; }
  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }
  std::optional<double> grad_clip() const { return grad_clip_; }

 private:
  std::vector<Tensor> params_;
  std::vector<Eigen::ArrayXd> velocity_;
  double momentum_;
  double weight_decay_;
  std::optional<double> grad_clip_;
};

// Cosine schedule from lr0 at step 0 to 0 at total_steps.
double cosine_lr(int step, int total_steps, double lr0);

}  // namespace dots
