#include "langtail/optim.hpp"

#include "langtail/errors.hpp"

#include <algorithm>
#include <cmath>

namespace langtail::train {

void AdamW::step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads, double lr) {
  if (params.size() != grads.size()) throw ShapeError("AdamW: parameter and gradient lists differ in length");
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (m_.size() != params.size()) throw ShapeError("AdamW: tensor count changed between steps");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = *grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols() || m_[i].rows() != p.rows() || m_[i].cols() != p.cols()) {
      throw ShapeError("AdamW: gradient shape mismatch");
    }
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    p *= (1.0 - lr * cfg_.weight_decay);
    p.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

double poly_lr(long step, long total_steps, double lr0, double lr_min, double power) {
  if (total_steps <= 0) return lr0;
  const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
  return std::max(lr_min, lr0 * std::pow(1.0 - frac, power));
}

std::vector<Matrix*> backbone_tensors(Backbone& b) {
  std::vector<Matrix*> out;
  for (auto& l : b.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Matrix*> backbone_tensors(const Backbone& b) {
  std::vector<const Matrix*> out;
  for (const auto& l : b.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

}  // namespace langtail::train
