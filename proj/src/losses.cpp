#include "protofed/losses.hpp"

#include <map>
#include <string>

namespace protofed {

namespace {

void require_batch(const Mat& m, std::span<const int> labels, const char* op) {
  if (m.cols() == 0) throw UsageError(std::string(op) + ": empty batch");
  detail::require_same_size(m.cols(), static_cast<Eigen::Index>(labels.size()), op);
}

// log(sum(exp(v))) and softmax(v), stabilised by the maximum.
double log_sum_exp(const Vec& v, Vec& softmax) {
  const double m = v.maxCoeff();
  softmax = (v.array() - m).exp().matrix();
  const double sum = softmax.sum();
  softmax /= sum;
  return m + std::log(sum);
}

}  // namespace

LossValue cross_entropy(const Mat& logits, std::span<const int> labels) {
  require_batch(logits, labels, "cross_entropy");
  const Eigen::Index batch = logits.cols();
  const Eigen::Index classes = logits.rows();
  LossValue out{0.0, Mat(classes, batch)};
  Vec p;
  for (Eigen::Index i = 0; i < batch; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= classes) {
      throw UsageError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
    const Vec z = logits.col(i);
    const double lse = log_sum_exp(z, p);
    out.value += lse - z(y);
    p(y) -= 1.0;
    out.grad.col(i) = p / static_cast<double>(batch);
  }
  out.value /= static_cast<double>(batch);
  return out;
}

LossValue gpcl_loss(const Mat& features, std::span<const int> labels,
                    const PrototypeSet& generalized, double tau) {
  require_batch(features, labels, "gpcl_loss");
  if (generalized.empty()) throw ConfigError("gpcl_loss: no generalized prototypes");
  if (!(tau > 0.0)) throw ConfigError("gpcl_loss: tau must be positive");
  if (generalized.dim() != features.rows()) {
    throw UsageError("gpcl_loss: prototype dimension does not match features");
  }

  // Unit-normalised prototypes as columns, in ascending class order.
  const auto classes = generalized.classes();
  const auto n_protos = static_cast<Eigen::Index>(classes.size());
  Mat unit(features.rows(), n_protos);
  std::map<int, Eigen::Index> column_of;
  for (Eigen::Index c = 0; c < n_protos; ++c) {
    const Vec& g = generalized.vector(classes[c]);
    unit.col(c) = g / std::max(g.norm(), kNormFloor);
    column_of[classes[c]] = c;
  }

  const Eigen::Index batch = features.cols();
  const double inv_batch = 1.0 / static_cast<double>(batch);
  LossValue out{0.0, Mat::Zero(features.rows(), batch)};
  Vec sim(n_protos);
  Vec p;
  for (Eigen::Index i = 0; i < batch; ++i) {
    auto pos = column_of.find(labels[i]);
    if (pos == column_of.end()) {
      throw ConfigError("gpcl_loss: class " + std::to_string(labels[i]) +
                        " has no generalized prototype");
    }
    const Vec h = features.col(i);
    const double h_norm = h.norm();
    const double nh = std::max(h_norm, kNormFloor);
    const Vec raw = unit.transpose() * h / nh;
    sim = raw.cwiseMax(-1.0).cwiseMin(1.0);
    const double lse = log_sum_exp(sim / tau, p);
    out.value += lse - sim(pos->second) / tau;

    // dL/ds_k = (softmax_k - [k == y]) / tau, then through s_k(h).
    p(pos->second) -= 1.0;
    const Vec dsim = p * (inv_batch / tau);
    Vec dh = unit * dsim / nh;
    if (h_norm > kNormFloor) dh -= (dsim.dot(raw) / (h_norm * h_norm)) * h;
    out.grad.col(i) = dh;
  }
  out.value *= inv_batch;
  return out;
}

LossValue apa_loss(const Mat& features, std::span<const int> labels, const PrototypeSet& augmented,
                   ApaMode mode) {
  require_batch(features, labels, "apa_loss");
  const Eigen::Index batch = features.cols();
  LossValue out{0.0, Mat::Zero(features.rows(), batch)};
  if (augmented.empty()) return out;
  if (augmented.dim() != features.rows()) {
    throw UsageError("apa_loss: prototype dimension does not match features");
  }

  if (mode == ApaMode::kPerSample) {
    const double inv_batch = 1.0 / static_cast<double>(batch);
    for (Eigen::Index i = 0; i < batch; ++i) {
      if (!augmented.contains(labels[i])) continue;
      const Vec diff = features.col(i) - augmented.vector(labels[i]);
      out.value += diff.squaredNorm();
      out.grad.col(i) = 2.0 * inv_batch * diff;
    }
    out.value *= inv_batch;
    return out;
  }

  std::map<int, std::pair<Vec, Eigen::Index>> sums;
  for (Eigen::Index i = 0; i < batch; ++i) {
    if (!augmented.contains(labels[i])) continue;
    auto [it, inserted] = sums.try_emplace(labels[i], Vec::Zero(features.rows()), 0);
    it->second.first += features.col(i);
    ++it->second.second;
  }
  std::map<int, Vec> class_grad;
  for (auto& [k, acc] : sums) {
    const double n = static_cast<double>(acc.second);
    const Vec diff = acc.first / n - augmented.vector(k);
    out.value += diff.squaredNorm();
    class_grad[k] = (2.0 / n) * diff;
  }
  for (Eigen::Index i = 0; i < batch; ++i) {
    auto it = class_grad.find(labels[i]);
    if (it != class_grad.end()) out.grad.col(i) = it->second;
  }
  return out;
}

LossBreakdown total_loss(double ce, double gpcl, double apa) {
  return LossBreakdown{ce, gpcl, apa, ce + gpcl + apa};
}

}  // namespace protofed
