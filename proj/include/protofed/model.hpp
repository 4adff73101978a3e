#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "protofed/numerics.hpp"

namespace protofed {

struct DenseLayer {
  Mat weights;  // out x in
  Vec bias;     // out
};

/// MLP feature extractor f (ReLU between layers, linear output h) followed by a
/// linear classifier g.
struct ModelParams {
  std::vector<DenseLayer> extractor;
  DenseLayer classifier;

  Eigen::Index input_dim() const { return extractor.front().weights.cols(); }
  Eigen::Index feature_dim() const { return extractor.back().weights.rows(); }
  Eigen::Index num_classes() const { return classifier.weights.rows(); }
  std::size_t param_count() const;

  // Layer widths starting with the input dimension; the last entry is d.
  std::vector<int> architecture() const;
};

// Gradients share the parameter layout.
using ModelGrads = ModelParams;

/// Cached activations for a batch; columns are samples.
struct ForwardTrace {
  std::vector<Mat> layer_inputs;  // input to extractor layer l (layer_inputs[0] = x)
  std::vector<Mat> pre_activations;
  Mat features;  // d x B, equal to the last pre-activation
  Mat logits;    // K x B

  Eigen::Index batch_size() const { return features.cols(); }
};

bool same_shape(const ModelParams& a, const ModelParams& b);
// Same shape and every entry equal bit for bit.
bool bitwise_equal(const ModelParams& a, const ModelParams& b);
void check_shapes(const ModelParams& params);

/// Glorot-uniform weights, zero biases. arch = {input_dim, hidden..., d}.
ModelParams init_params(Rng& rng, std::span<const int> arch, int num_classes);

ModelParams zeros_like(const ModelParams& params);

ForwardTrace forward(const ModelParams& params, const Mat& inputs);
ForwardTrace forward(const ModelParams& params, const Vec& input);

/// Reverse-mode gradients of a scalar loss whose partials at the logits and
/// the features of each sample are given (columns per sample).
ModelGrads backward(const ModelParams& params, const ForwardTrace& trace,
                    const Mat& dloss_dlogits, const Mat& dloss_dfeatures);

/// p <- p - lr * (g + weight_decay * p), for weights and biases alike.
ModelParams sgd_step(const ModelParams& params, const ModelGrads& grads, double lr,
                     double weight_decay);

/// acc += weight * x, elementwise over all tensors.
void accumulate_scaled(ModelParams& acc, const ModelParams& x, double weight);

std::vector<double> flatten(const ModelParams& params);
ModelParams unflatten(std::span<const double> values, const ModelParams& shape_like);

}  // namespace protofed
