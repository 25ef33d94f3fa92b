#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ccl/tensor.hpp"

namespace ccl {

/// Floor applied to probabilities before taking logarithms.
inline constexpr double kProbabilityFloor = 1e-12;

struct LossConfig {
  double temperature = 3.0;
  double gamma = 0.1;  // distillation weight
  bool decay = true;   // apply gamma_decay after every continual iteration

  void validate() const;
};

/// Teacher distribution softened at T and zero-padded to the student width.
struct SoftTarget {
  std::vector<double> probs;
  std::size_t support = 0;  // leading entries produced by the teacher; the rest are padding
};

std::vector<double> softmax_with_temperature(std::span<const double> logits, double temperature);

double cross_entropy(std::span<const double> onehot, std::span<const double> probs);

SoftTarget make_soft_target(std::span<const double> teacher_logits, double temperature, std::size_t width);

double distillation_loss(std::span<const double> teacher_soft, std::span<const double> student_soft);
double distillation_loss(const SoftTarget& teacher, std::span<const double> student_soft);

/// (1 - gamma) * l_cat + gamma * l_dist.
double combine_losses(double l_cat, double l_dist, double gamma);

double combined_loss(std::span<const double> onehot, std::span<const double> probs,
                     std::span<const double> teacher_soft, std::span<const double> student_soft, double gamma);

/// exp(-1 / (1 + e)), the per-iteration distillation weight multiplier.
double gamma_decay_factor();
double gamma_decay(double gamma_prev);

double entropy(std::span<const double> probs);

template <typename T>
struct BatchLoss {
  double total = 0;
  double cross_entropy = 0;
  double distillation = 0;
  BasicTensor<T> gradient;  // d(total) / d(logits), same shape as the logits
};

/// Batch-mean combined loss and its gradient w.r.t. the student logits.
/// `logits` is N x k, `teacher_logits` N x k_teacher with k_teacher <= k
/// (padded with zeros to k after softening). With no teacher, gamma must be 0.
template <typename T>
BatchLoss<T> combined_loss_batch(const BasicTensor<T>& logits, std::span<const int> labels,
                                 const BasicTensor<T>* teacher_logits, double temperature, double gamma);

}  // namespace ccl
