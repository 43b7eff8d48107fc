#pragma once

#include "langtail/matrix.hpp"

#include <cstdint>
#include <vector>

namespace langtail::train {

struct DenseLayer {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
};

/// MLP feature extractor: affine layers with rectifiers between them and an
/// L2-normalized output.
struct Backbone {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return static_cast<std::size_t>(layers.front().weight.rows()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(layers.back().weight.cols()); }

  /// He-normal weights, zero biases. `hidden` may be empty (single affine layer).
  static Backbone init(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t output_dim,
                       std::uint64_t seed);
  /// Same shapes, all zeros.
  Backbone zeros_like() const;

  std::size_t parameter_count() const;
  bool all_finite() const;
};

/// Activations kept for the backward pass.
struct ForwardCache {
  std::vector<Matrix> inputs;  // input to each layer (post-rectifier for hidden layers)
  Matrix raw;                  // final affine output before normalization
  Vector norms;                // row norms of raw
  Matrix output;               // normalized rows
};

/// Throws ShapeError on a width mismatch and NormalizationError when an
/// output row has zero norm.
Matrix backbone_forward(const Backbone& b, const Matrix& x, ForwardCache* cache = nullptr);

struct BackboneGradients {
  Backbone params;  // gradient for every weight and bias
  Matrix input;     // gradient with respect to x
};

/// Reverse-mode gradients of sum(grad_out .* output), including the
/// Jacobian of the row normalization.
BackboneGradients backbone_backward(const Backbone& b, const ForwardCache& cache, const Matrix& grad_out);

/// a += scale * b, parameter-wise.
void accumulate(Backbone& a, const Backbone& b, double scale = 1.0);

}  // namespace langtail::train
