#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace faithlab::detail {

// Sparse feature vector: (index, value) pairs sorted by index.
using SparseVec = std::vector<std::pair<int, double>>;

inline std::vector<double> softmax(std::vector<double> z) {
  double hi = z[0];
  for (double v : z) hi = std::max(hi, v);
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - hi);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return z;
}

// Multinomial logistic model over sparse features, trained full batch.
struct SoftmaxModel {
  int num_classes = 0;
  int dim = 0;
  std::vector<double> weights;  // num_classes x dim, row-major
  std::vector<double> bias;     // num_classes

  std::vector<double> scores(const SparseVec& x) const {
    std::vector<double> z(bias);
    for (int c = 0; c < num_classes; ++c) {
      const double* row = weights.data() + static_cast<std::size_t>(c) * dim;
      double acc = 0.0;
      for (const auto& [j, v] : x) acc += row[j] * v;
      z[c] += acc;
    }
    return z;
  }

  std::vector<double> proba(const SparseVec& x) const { return softmax(scores(x)); }
};

struct FitOptions {
  double l2 = 0.0;  // applied to weights, never to bias
  int epochs = 100;
  double learning_rate = 0.1;
  double momentum = 0.0;  // classical heavy-ball; 0 recovers plain GD
};

// Mean cross-entropy plus 0.5*l2*||W||^2.
inline double softmax_loss(const SoftmaxModel& m, const std::vector<SparseVec>& xs,
                           const std::vector<int>& ys, double l2) {
  double loss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto p = m.proba(xs[i]);
    loss -= std::log(std::max(p[ys[i]], 1e-300));
  }
  loss /= static_cast<double>(xs.size());
  double reg = 0.0;
  for (double w : m.weights) reg += w * w;
  return loss + 0.5 * l2 * reg;
}

// Analytic gradient of softmax_loss. Also reports the loss at the current
// point since it falls out of the same forward pass.
struct GradientResult {
  std::vector<double> gw;
  std::vector<double> gb;
  double loss = 0.0;
};

inline GradientResult softmax_gradient(const SoftmaxModel& m, const std::vector<SparseVec>& xs,
                                       const std::vector<int>& ys, double l2) {
  GradientResult r;
  r.gw.assign(m.weights.size(), 0.0);
  r.gb.assign(m.bias.size(), 0.0);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto p = m.proba(xs[i]);
    r.loss -= std::log(std::max(p[ys[i]], 1e-300));
    for (int c = 0; c < m.num_classes; ++c) {
      const double d = p[c] - (c == ys[i] ? 1.0 : 0.0);
      r.gb[c] += d;
      double* row = r.gw.data() + static_cast<std::size_t>(c) * m.dim;
      for (const auto& [j, v] : xs[i]) row[j] += d * v;
    }
  }
  const double inv_n = 1.0 / static_cast<double>(xs.size());
  r.loss *= inv_n;
  for (double& g : r.gw) g *= inv_n;
  for (double& g : r.gb) g *= inv_n;
  double reg = 0.0;
  for (std::size_t k = 0; k < r.gw.size(); ++k) {
    r.gw[k] += l2 * m.weights[k];
    reg += m.weights[k] * m.weights[k];
  }
  r.loss += 0.5 * l2 * reg;
  return r;
}

// Zero-initialized full-batch gradient descent. Deterministic; throws if the
// loss goes non-finite.
inline SoftmaxModel fit_softmax(const std::vector<SparseVec>& xs, const std::vector<int>& ys,
                                int num_classes, int dim, const FitOptions& opt) {
  if (xs.empty()) throw std::invalid_argument("fit_softmax: empty training set");
  if (xs.size() != ys.size()) throw std::invalid_argument("fit_softmax: xs/ys length mismatch");
  SoftmaxModel m;
  m.num_classes = num_classes;
  m.dim = dim;
  m.weights.assign(static_cast<std::size_t>(num_classes) * dim, 0.0);
  m.bias.assign(num_classes, 0.0);
  std::vector<double> vw(m.weights.size(), 0.0);
  std::vector<double> vb(m.bias.size(), 0.0);
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    auto g = softmax_gradient(m, xs, ys, opt.l2);
    if (!std::isfinite(g.loss)) {
      throw std::runtime_error("fit_softmax: non-finite loss at epoch " + std::to_string(epoch));
    }
    for (std::size_t k = 0; k < m.weights.size(); ++k) {
      vw[k] = opt.momentum * vw[k] + g.gw[k];
      m.weights[k] -= opt.learning_rate * vw[k];
    }
    for (std::size_t c = 0; c < m.bias.size(); ++c) {
      vb[c] = opt.momentum * vb[c] + g.gb[c];
      m.bias[c] -= opt.learning_rate * vb[c];
    }
  }
  if (!std::isfinite(softmax_loss(m, xs, ys, opt.l2))) {
    throw std::runtime_error("fit_softmax: non-finite loss after final epoch");
  }
  return m;
}

}  // namespace faithlab::detail
