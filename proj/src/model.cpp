#include "protofed/model.hpp"

#include <cstring>
#include <string>

namespace protofed {

namespace {

template <typename Fn>
void for_each_layer(ModelParams& p, Fn&& fn) {
  for (auto& layer : p.extractor) fn(layer);
  fn(p.classifier);
}

template <typename Fn>
void for_each_layer(const ModelParams& p, Fn&& fn) {
  for (const auto& layer : p.extractor) fn(layer);
  fn(p.classifier);
}

template <typename Fn>
void for_each_layer_pair(ModelParams& a, const ModelParams& b, Fn&& fn) {
  for (std::size_t l = 0; l < a.extractor.size(); ++l) fn(a.extractor[l], b.extractor[l]);
  fn(a.classifier, b.classifier);
}

DenseLayer glorot_layer(Rng& rng, int fan_in, int fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  DenseLayer layer{Mat(fan_out, fan_in), Vec::Zero(fan_out)};
  // Row-major fill order keeps the draw sequence independent of storage order.
  for (int r = 0; r < fan_out; ++r) {
    for (int c = 0; c < fan_in; ++c) layer.weights(r, c) = (2.0 * rng.uniform() - 1.0) * limit;
  }
  return layer;
}

}  // namespace

std::size_t ModelParams::param_count() const {
  std::size_t n = 0;
  for_each_layer(*this, [&](const DenseLayer& l) {
    n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
  });
  return n;
}

std::vector<int> ModelParams::architecture() const {
  std::vector<int> arch;
  arch.push_back(static_cast<int>(input_dim()));
  for (const auto& l : extractor) arch.push_back(static_cast<int>(l.weights.rows()));
  return arch;
}

bool same_shape(const ModelParams& a, const ModelParams& b) {
  if (a.extractor.size() != b.extractor.size()) return false;
  auto layer_eq = [](const DenseLayer& x, const DenseLayer& y) {
    return x.weights.rows() == y.weights.rows() && x.weights.cols() == y.weights.cols() &&
           x.bias.size() == y.bias.size();
  };
  for (std::size_t l = 0; l < a.extractor.size(); ++l) {
    if (!layer_eq(a.extractor[l], b.extractor[l])) return false;
  }
  return layer_eq(a.classifier, b.classifier);
}

bool bitwise_equal(const ModelParams& a, const ModelParams& b) {
  if (!same_shape(a, b)) return false;
  const auto fa = flatten(a);
  const auto fb = flatten(b);
  return std::memcmp(fa.data(), fb.data(), fa.size() * sizeof(double)) == 0;
}

void check_shapes(const ModelParams& params) {
  if (params.extractor.empty()) throw UsageError("model: extractor has no layers");
  Eigen::Index width = params.extractor.front().weights.cols();
  auto check = [&](const DenseLayer& l, const std::string& name) {
    if (l.weights.cols() != width || l.bias.size() != l.weights.rows() || l.weights.rows() == 0) {
      throw UsageError("model: layer " + name + " does not chain");
    }
    width = l.weights.rows();
  };
  for (std::size_t i = 0; i < params.extractor.size(); ++i) {
    check(params.extractor[i], std::to_string(i));
  }
  check(params.classifier, "classifier");
}

ModelParams init_params(Rng& rng, std::span<const int> arch, int num_classes) {
  if (arch.size() < 2) throw UsageError("init_params: architecture needs input and feature widths");
  for (int w : arch) {
    if (w <= 0) throw UsageError("init_params: widths must be positive");
  }
  if (num_classes < 2) throw UsageError("init_params: need at least two classes");
  ModelParams p;
  for (std::size_t l = 1; l < arch.size(); ++l) {
    p.extractor.push_back(glorot_layer(rng, arch[l - 1], arch[l]));
  }
  p.classifier = glorot_layer(rng, arch.back(), num_classes);
  return p;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z = params;
  for_each_layer(z, [](DenseLayer& l) {
    l.weights.setZero();
    l.bias.setZero();
  });
  return z;
}

ForwardTrace forward(const ModelParams& params, const Mat& inputs) {
  if (inputs.rows() != params.input_dim()) {
    throw UsageError("forward: input has dimension " + std::to_string(inputs.rows()) +
                     ", model expects " + std::to_string(params.input_dim()));
  }
  ForwardTrace t;
  const std::size_t n_layers = params.extractor.size();
  t.layer_inputs.reserve(n_layers);
  t.pre_activations.reserve(n_layers);
  Mat act = inputs;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& layer = params.extractor[l];
    Mat pre = layer.weights * act;
    pre.colwise() += layer.bias;
    t.layer_inputs.push_back(std::move(act));
    act = (l + 1 < n_layers) ? Mat(pre.cwiseMax(0.0)) : pre;
    t.pre_activations.push_back(std::move(pre));
  }
  t.features = std::move(act);
  t.logits = params.classifier.weights * t.features;
  t.logits.colwise() += params.classifier.bias;
  return t;
}

ForwardTrace forward(const ModelParams& params, const Vec& input) {
  return forward(params, Mat(input));
}

ModelGrads backward(const ModelParams& params, const ForwardTrace& trace,
                    const Mat& dloss_dlogits, const Mat& dloss_dfeatures) {
  const Eigen::Index batch = trace.batch_size();
  if (dloss_dlogits.rows() != params.num_classes() || dloss_dlogits.cols() != batch ||
      dloss_dfeatures.rows() != params.feature_dim() || dloss_dfeatures.cols() != batch) {
    throw UsageError("backward: gradient shapes do not match the trace");
  }
  ModelGrads g;
  g.extractor.resize(params.extractor.size());
  g.classifier.weights = dloss_dlogits * trace.features.transpose();
  g.classifier.bias = dloss_dlogits.rowwise().sum();

  Mat delta = params.classifier.weights.transpose() * dloss_dlogits + dloss_dfeatures;
  for (std::size_t i = params.extractor.size(); i-- > 0;) {
    if (i + 1 < params.extractor.size()) {
      delta = delta.cwiseProduct((trace.pre_activations[i].array() > 0.0).cast<double>().matrix());
    }
    g.extractor[i].weights = delta * trace.layer_inputs[i].transpose();
    g.extractor[i].bias = delta.rowwise().sum();
    if (i > 0) delta = params.extractor[i].weights.transpose() * delta;
  }
  return g;
}

ModelParams sgd_step(const ModelParams& params, const ModelGrads& grads, double lr,
                     double weight_decay) {
  if (!same_shape(params, grads)) throw UsageError("sgd_step: gradient shape mismatch");
  ModelParams out = params;
  for_each_layer_pair(out, grads, [&](DenseLayer& p, const DenseLayer& g) {
    p.weights -= lr * (g.weights + weight_decay * p.weights);
    p.bias -= lr * (g.bias + weight_decay * p.bias);
  });
  return out;
}

void accumulate_scaled(ModelParams& acc, const ModelParams& x, double weight) {
  if (!same_shape(acc, x)) throw UsageError("accumulate_scaled: shape mismatch");
  for_each_layer_pair(acc, x, [&](DenseLayer& a, const DenseLayer& b) {
    a.weights += weight * b.weights;
    a.bias += weight * b.bias;
  });
}

std::vector<double> flatten(const ModelParams& params) {
  std::vector<double> out;
  out.reserve(params.param_count());
  for_each_layer(params, [&](const DenseLayer& l) {
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) out.push_back(l.weights(r, c));
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) out.push_back(l.bias(r));
  });
  return out;
}

ModelParams unflatten(std::span<const double> values, const ModelParams& shape_like) {
  if (values.size() != shape_like.param_count()) {
    throw UsageError("unflatten: expected " + std::to_string(shape_like.param_count()) +
                     " values, got " + std::to_string(values.size()));
  }
  ModelParams out = shape_like;
  std::size_t k = 0;
  for_each_layer(out, [&](DenseLayer& l) {
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) l.weights(r, c) = values[k++];
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = values[k++];
  });
  return out;
}

}  // namespace protofed
