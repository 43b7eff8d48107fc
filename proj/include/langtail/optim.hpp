#pragma once

#include "langtail/backbone.hpp"
#include "langtail/matrix.hpp"

#include <vector>

namespace langtail::train {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Adaptive-moment optimizer with decoupled weight decay over a fixed list
/// of tensors.
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  /// One update of every tensor in `params` with the matching gradient.
  /// The first call fixes the tensor shapes.
  void step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads, double lr);
  void reset() {
    m_.clear();
    v_.clear();
    t_ = 0;
  }
  long steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long t_ = 0;
};

/// max(lr_min, lr0 * (1 - step / total)^power). total = 0 yields lr0.
double poly_lr(long step, long total_steps, double lr0, double lr_min, double power);

/// Pointers to every backbone tensor in layer order (weight, bias).
std::vector<Matrix*> backbone_tensors(Backbone& b);
std::vector<const Matrix*> backbone_tensors(const Backbone& b);

}  // namespace langtail::train
