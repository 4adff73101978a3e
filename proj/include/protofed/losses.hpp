#pragma once

#include <span>

#include "protofed/numerics.hpp"
#include "protofed/prototypes.hpp"

namespace protofed {

struct LossBreakdown {
  double ce = 0.0;
  double gpcl = 0.0;
  double apa = 0.0;
  double total = 0.0;
};

/// A batch loss value and its gradient with respect to the loss input
/// (logits or features), one column per sample.
struct LossValue {
  double value = 0.0;
  Mat grad;
};

enum class ApaMode {
  kPerSample,  // mean over samples of |h_i - p~^{y_i}|^2
  kClassMean,  // sum over classes of |mean_k(h) - p~^k|^2
};

/// Mean softmax cross-entropy over the batch, with max-subtraction.
LossValue cross_entropy(const Mat& logits, std::span<const int> labels);

/// Prototype-contrastive loss: InfoNCE over cosine similarities between each
/// feature and every generalized prototype at temperature tau. Prototypes are
/// constants.
LossValue gpcl_loss(const Mat& features, std::span<const int> labels,
                    const PrototypeSet& generalized, double tau);

/// Squared-L2 alignment of features to the (constant) augmented prototypes.
/// Samples whose class has no prototype contribute nothing.
LossValue apa_loss(const Mat& features, std::span<const int> labels, const PrototypeSet& augmented,
                   ApaMode mode = ApaMode::kPerSample);

LossBreakdown total_loss(double ce, double gpcl, double apa);

}  // namespace protofed
