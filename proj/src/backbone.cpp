#include "langtail/backbone.hpp"

#include "langtail/errors.hpp"
#include "langtail/rng.hpp"

#include <cmath>
#include <string>

namespace langtail::train {

Backbone Backbone::init(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t output_dim,
                        std::uint64_t seed) {
  if (input_dim < 1 || output_dim < 1) throw ConfigError("backbone dimensions must be >= 1");
  std::vector<std::size_t> widths{input_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(output_dim);
  Backbone b;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    if (widths[l + 1] < 1) throw ConfigError("hidden widths must be >= 1");
    CounterRng rng(seed, l, Stream::backbone_init);
    const double std = std::sqrt(2.0 / static_cast<double>(widths[l]));
    DenseLayer layer;
    layer.weight.resize(static_cast<Eigen::Index>(widths[l]), static_cast<Eigen::Index>(widths[l + 1]));
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = rng.normal(0.0, std);
    }
    layer.bias = Matrix::Zero(1, layer.weight.cols());
    b.layers.push_back(std::move(layer));
  }
  return b;
}

Backbone Backbone::zeros_like() const {
  Backbone z;
  for (const auto& l : layers) {
    z.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Matrix::Zero(1, l.bias.cols())});
  }
  return z;
}

std::size_t Backbone::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

bool Backbone::all_finite() const {
  for (const auto& l : layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

Matrix backbone_forward(const Backbone& b, const Matrix& x, ForwardCache* cache) {
  if (b.layers.empty()) throw ConfigError("backbone has no layers");
  if (static_cast<std::size_t>(x.cols()) != b.input_dim()) {
    throw ShapeError("backbone expects " + std::to_string(b.input_dim()) + " input columns, got " +
                     std::to_string(x.cols()));
  }
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.inputs.clear();
  Matrix h = x;
  for (std::size_t l = 0; l < b.layers.size(); ++l) {
    const auto& layer = b.layers[l];
    Matrix z = h * layer.weight;
    z.rowwise() += layer.bias.row(0);
    c.inputs.push_back(std::move(h));
    if (l + 1 < b.layers.size()) {
      h = z.cwiseMax(0.0);
    } else {
      c.raw = std::move(z);
    }
  }
  c.norms = c.raw.rowwise().norm();
  c.output.resize(c.raw.rows(), c.raw.cols());
  for (Eigen::Index i = 0; i < c.raw.rows(); ++i) {
    if (!(c.norms(i) > 0.0) || !std::isfinite(c.norms(i))) {
      throw NormalizationError("backbone output row " + std::to_string(i) + " has zero or non-finite norm");
    }
    c.output.row(i) = c.raw.row(i) / c.norms(i);
  }
  return c.output;
}

BackboneGradients backbone_backward(const Backbone& b, const ForwardCache& cache, const Matrix& grad_out) {
  if (grad_out.rows() != cache.output.rows() || grad_out.cols() != cache.output.cols()) {
    throw ShapeError("backbone_backward: gradient shape does not match the cached output");
  }
  BackboneGradients g;
  g.params = b.zeros_like();
  // y = z / |z|  =>  dz = (dy - y (dy . y)) / |z|
  const Vector dots = (grad_out.cwiseProduct(cache.output)).rowwise().sum();
  Matrix dz = grad_out - cache.output.cwiseProduct(dots.replicate(1, cache.output.cols()));
  dz.array().colwise() /= cache.norms.array();

  for (std::size_t li = b.layers.size(); li-- > 0;) {
    const auto& in = cache.inputs[li];
    g.params.layers[li].weight.noalias() = in.transpose() * dz;
    g.params.layers[li].bias = dz.colwise().sum();
    Matrix dh = dz * b.layers[li].weight.transpose();
    if (li > 0) {
      // `in` is the rectified output of the previous layer; zero entries
      // had non-positive pre-activations.
      dh = (in.array() > 0.0).select(dh, 0.0);
      dz = std::move(dh);
    } else {
      g.input = std::move(dh);
    }
  }
  return g;
}

void accumulate(Backbone& a, const Backbone& b, double scale) {
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    a.layers[l].weight += scale * b.layers[l].weight;
    a.layers[l].bias += scale * b.layers[l].bias;
  }
}

}  // namespace langtail::train
