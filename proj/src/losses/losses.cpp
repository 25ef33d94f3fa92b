#include "ccl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "ccl/error.hpp"

namespace ccl {

void LossConfig::validate() const {
  if (!(temperature > 0)) throw InvalidArgument("temperature must be positive");
  if (!(gamma >= 0 && gamma <= 1)) throw InvalidArgument("distillation weight must lie in [0, 1]");
}

std::vector<double> softmax_with_temperature(std::span<const double> logits, double temperature) {
  if (!(temperature > 0)) throw InvalidArgument("softmax temperature must be positive");
  if (logits.empty()) throw InvalidArgument("softmax of an empty vector");
  const double zmax = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    p[j] = std::exp((logits[j] - zmax) / temperature);
    sum += p[j];
  }
  for (double& v : p) v /= sum;
  return p;
}

double cross_entropy(std::span<const double> onehot, std::span<const double> probs) {
  if (onehot.size() != probs.size()) {
    throw ShapeError("cross entropy over vectors of length " + std::to_string(onehot.size()) + " and " +
                     std::to_string(probs.size()));
  }
  double loss = 0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (onehot[j] != 0) loss -= onehot[j] * std::log(std::max(probs[j], kProbabilityFloor));
  }
  return loss;
}

SoftTarget make_soft_target(std::span<const double> teacher_logits, double temperature, std::size_t width) {
  if (width < teacher_logits.size()) throw ShapeError("soft target narrower than the teacher output");
  SoftTarget t;
  t.probs = softmax_with_temperature(teacher_logits, temperature);
  t.support = t.probs.size();
  t.probs.resize(width, 0.0);
  return t;
}

double distillation_loss(std::span<const double> teacher_soft, std::span<const double> student_soft) {
  if (teacher_soft.size() != student_soft.size()) {
    throw ShapeError("distillation over vectors of length " + std::to_string(teacher_soft.size()) + " and " +
                     std::to_string(student_soft.size()));
  }
  double loss = 0;
  for (std::size_t j = 0; j < teacher_soft.size(); ++j) {
    if (teacher_soft[j] < 0) throw InvalidArgument("negative teacher probability");
    if (teacher_soft[j] == 0) continue;  // 0 * log s = 0
    loss -= teacher_soft[j] * std::log(std::max(student_soft[j], kProbabilityFloor));
  }
  return loss;
}

double distillation_loss(const SoftTarget& teacher, std::span<const double> student_soft) {
  return distillation_loss(std::span<const double>(teacher.probs), student_soft);
}

double combine_losses(double l_cat, double l_dist, double gamma) {
  if (!(gamma >= 0 && gamma <= 1)) throw InvalidArgument("distillation weight must lie in [0, 1]");
  return (1.0 - gamma) * l_cat + gamma * l_dist;
}

double combined_loss(std::span<const double> onehot, std::span<const double> probs,
                     std::span<const double> teacher_soft, std::span<const double> student_soft, double gamma) {
  if (!(gamma >= 0 && gamma <= 1)) throw InvalidArgument("distillation weight must lie in [0, 1]");
  return combine_losses(cross_entropy(onehot, probs), distillation_loss(teacher_soft, student_soft), gamma);
}

double gamma_decay_factor() { return std::exp(-1.0 / (1.0 + std::numbers::e)); }

double gamma_decay(double gamma_prev) { return gamma_prev * gamma_decay_factor(); }

double entropy(std::span<const double> probs) {
  double h = 0;
  for (double p : probs) {
    if (p > 0) h -= p * std::log(p);
  }
  return h;
}

namespace {

// Loss -sum_j t_j log max(s_j, floor) with s = softmax(z / T), and its
// gradient w.r.t. z. Terms whose probability sits on the floor are constant
// and contribute no gradient.
double soft_ce_with_grad(std::span<const double> target, std::span<const double> z, double temperature,
                         std::span<double> grad) {
  const auto s = softmax_with_temperature(z, temperature);
  double loss = 0;
  double live_mass = 0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (target[j] == 0) continue;
    if (s[j] >= kProbabilityFloor) {
      loss -= target[j] * std::log(s[j]);
      live_mass += target[j];
    } else {
      loss -= target[j] * std::log(kProbabilityFloor);
    }
  }
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double own = s[k] >= kProbabilityFloor ? target[k] : 0.0;
    grad[k] = (s[k] * live_mass - own) / temperature;
  }
  return loss;
}

}  // namespace

template <typename T>
BatchLoss<T> combined_loss_batch(const BasicTensor<T>& logits, std::span<const int> labels,
                                 const BasicTensor<T>* teacher_logits, double temperature, double gamma) {
  if (logits.rank() != 2) throw ShapeError("logits must be N x k");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("label count does not match batch size");
  if (!(gamma >= 0 && gamma <= 1)) throw InvalidArgument("distillation weight must lie in [0, 1]");
  if (!(temperature > 0)) throw InvalidArgument("temperature must be positive");
  std::size_t kt = 0;
  if (teacher_logits) {
    if (teacher_logits->rank() != 2 || teacher_logits->dim(0) != n || teacher_logits->dim(1) > k) {
      throw ShapeError("teacher logits " + shape_string(teacher_logits->shape()) + " incompatible with student " +
                       shape_string(logits.shape()));
    }
    kt = teacher_logits->dim(1);
  } else if (gamma != 0) {
    throw InvalidArgument("distillation weight is nonzero but no teacher was given");
  }

  BatchLoss<T> out;
  out.gradient = BasicTensor<T>(logits.shape());
  std::vector<double> z(k), zt(kt), onehot(k), g_ce(k), g_dist(k, 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw InvalidArgument("label out of range");
    for (std::size_t j = 0; j < k; ++j) z[j] = static_cast<double>(logits[i * k + j]);
    std::fill(onehot.begin(), onehot.end(), 0.0);
    onehot[static_cast<std::size_t>(y)] = 1.0;
    const double ce = soft_ce_with_grad(onehot, z, 1.0, g_ce);
    double dist = 0;
    if (teacher_logits) {
      for (std::size_t j = 0; j < kt; ++j) zt[j] = static_cast<double>((*teacher_logits)[i * kt + j]);
      const SoftTarget t = make_soft_target(zt, temperature, k);
      dist = soft_ce_with_grad(t.probs, z, temperature, g_dist);
    }
    out.cross_entropy += ce;
    out.distillation += dist;
    out.total += combine_losses(ce, dist, gamma);
    for (std::size_t j = 0; j < k; ++j) {
      out.gradient[i * k + j] = static_cast<T>(((1.0 - gamma) * g_ce[j] + gamma * g_dist[j]) * inv_n);
    }
  }
  out.cross_entropy *= inv_n;
  out.distillation *= inv_n;
  out.total *= inv_n;
  return out;
}

template BatchLoss<float> combined_loss_batch<float>(const Tensor&, std::span<const int>, const Tensor*, double,
                                                     double);
template BatchLoss<double> combined_loss_batch<double>(const Tensor64&, std::span<const int>, const Tensor64*,
                                                       double, double);

}  // namespace ccl
