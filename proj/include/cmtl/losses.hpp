#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "cmtl/error.hpp"
#include "cmtl/numerics.hpp"
#include "cmtl/relatedness.hpp"

namespace cmtl {

/// Model outputs for a batch: softmax class probabilities (B×K) and sigmoid
/// attribute probabilities (B×M).
struct Predictions {
  Matrix cls_probs;
  Matrix att_probs;

  std::size_t batch_size() const noexcept { return cls_probs.rows(); }
  std::size_t num_classes() const noexcept { return cls_probs.cols(); }
  std::size_t num_attributes() const noexcept { return att_probs.cols(); }
};

/// Ground truth for a batch. `att_mask(j, i)` is the annotation indicator δ_i
/// of sample j; `att_labels` is only read where the mask is set. `cls_soft` is
/// either empty or one entry per sample; a set entry replaces the one-hot
/// class target of that sample.
struct BatchLabels {
  std::vector<std::optional<std::size_t>> cls_label;
  std::vector<std::optional<Vector>> cls_soft;
  Matrix att_labels;
  Matrix att_mask;

  std::size_t batch_size() const noexcept { return cls_label.size(); }

  double mask_sum(std::size_t row) const {
    double s = 0.0;
    for (double d : att_mask.row(row)) s += d;
    return s;
  }
};

struct LossWeights {
  double cls = 1.0;
  double att = 1.0;
  double dm = 1.0;
  double sca = 1.0;

  void validate() const {
    for (double w : {cls, att, dm, sca}) {
      if (!std::isfinite(w) || w < 0.0) throw Error(ErrorKind::Config, "loss weights must be finite and >= 0");
    }
  }

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossOptions {
  double eps = kDefaultLogEps;
  /// Adds the −(1−p)·log(1−q) complement to the distribution-matching term.
  bool symmetric_dm = false;
  /// Stops the distribution-matching gradient from reaching the class head.
  bool dm_stop_cls_grad = false;
  /// Normalizes the class indicator by the weights of annotated attributes
  /// only, instead of treating unannotated attributes as inactive.
  bool renorm_observed = false;

  friend bool operator==(const LossOptions&, const LossOptions&) = default;
};

/// Value of one loss term with its gradients w.r.t. both heads' logits.
struct LossTerm {
  double value = 0.0;
  Matrix grad_cls_logits;
  Matrix grad_att_logits;
};

struct LossReport {
  double l_cls = 0.0;
  double l_att = 0.0;
  double l_dm = 0.0;
  double l_sca = 0.0;
  double l_total = 0.0;
  Matrix grad_cls_logits;
  Matrix grad_att_logits;
};

/// Relatedness-derived matrices consumed by the coupling terms.
struct Coupling {
  MixtureMatrix mixture;
  IndicatorWeights indicator;

  static Coupling from(const RelatednessSpec& spec, const MixtureOptions& options = {}) {
    return {mixture_matrix(spec, options), indicator_weights(spec)};
  }
};

struct SoftClassLabels {
  Matrix probs;               // B×K, every row on the simplex
  std::vector<bool> eligible; // rows built from at least one annotated attribute
};

namespace detail {

inline LossTerm empty_term(const Predictions& preds) {
  return {0.0, Matrix(preds.batch_size(), preds.num_classes()),
          Matrix(preds.batch_size(), preds.num_attributes())};
}

inline void check_batch(const Predictions& preds, const BatchLabels& labels) {
  const std::size_t b = preds.batch_size();
  if (preds.att_probs.rows() != b || labels.batch_size() != b || labels.att_labels.rows() != b ||
      labels.att_mask.rows() != b) {
    throw Error(ErrorKind::Shape, "batch size mismatch between predictions and labels");
  }
  if (labels.att_labels.cols() != preds.num_attributes() || labels.att_mask.cols() != preds.num_attributes()) {
    throw Error(ErrorKind::Shape, "attribute count mismatch between predictions and labels");
  }
  if (!labels.cls_soft.empty() && labels.cls_soft.size() != b) {
    throw Error(ErrorKind::Shape, "soft class targets do not match the batch size");
  }
}

// Pulls a gradient w.r.t. softmax outputs back to the logits, row by row.
inline void softmax_backward_row(std::span<const double> probs, std::span<const double> grad_probs,
                                 std::span<double> grad_logits) {
  double dot = 0.0;
  for (std::size_t c = 0; c < probs.size(); ++c) dot += probs[c] * grad_probs[c];
  for (std::size_t c = 0; c < probs.size(); ++c) grad_logits[c] += probs[c] * (grad_probs[c] - dot);
}

}  // namespace detail

/// Cross entropy over the class-labeled samples of the batch. A sample with a
/// soft target t contributes −Σ_c t_c·log p_c instead of −log p_y.
inline LossTerm loss_cls(const Predictions& preds, const BatchLabels& labels, double eps = kDefaultLogEps) {
  detail::check_batch(preds, labels);
  validate_log_eps(eps);
  LossTerm term = detail::empty_term(preds);
  const std::size_t k = preds.num_classes();
  const auto soft = [&](std::size_t j) -> const Vector* {
    if (labels.cls_soft.empty() || !labels.cls_soft[j]) return nullptr;
    return &*labels.cls_soft[j];
  };
  std::size_t labeled = 0;
  for (std::size_t j = 0; j < preds.batch_size(); ++j) {
    if (const Vector* t = soft(j)) {
      if (t->size() != k) throw Error(ErrorKind::Shape, "soft class target width mismatch");
      ++labeled;
      continue;
    }
    const auto& y = labels.cls_label[j];
    if (!y) continue;
    if (*y >= k) throw Error(ErrorKind::Label, "class index " + std::to_string(*y) + " out of range");
    ++labeled;
  }
  if (labeled == 0) return term;
  const double scale = 1.0 / static_cast<double>(labeled);
  Vector grad_probs(k);
  for (std::size_t j = 0; j < preds.batch_size(); ++j) {
    if (const Vector* t = soft(j)) {
      const auto p = preds.cls_probs.row(j);
      for (std::size_t c = 0; c < k; ++c) {
        term.value -= (*t)[c] * clamped_log(p[c], eps) * scale;
        grad_probs[c] = -(*t)[c] * clamped_log_derivative(p[c], eps) * scale;
      }
      detail::softmax_backward_row(p, grad_probs, term.grad_cls_logits.row(j));
      continue;
    }
    const auto& y = labels.cls_label[j];
    if (!y) continue;
    term.value -= clamped_log(preds.cls_probs(j, *y), eps) * scale;
    if (preds.cls_probs(j, *y) <= eps) continue;  // clamped: the value is flat
    for (std::size_t c = 0; c < k; ++c) {
      term.grad_cls_logits(j, c) = (preds.cls_probs(j, c) - (c == *y ? 1.0 : 0.0)) * scale;
    }
  }
  return term;
}

/// Masked binary cross entropy: each sample is normalized by its number of
/// annotated attributes, then averaged over samples with any annotation.
inline LossTerm loss_att(const Predictions& preds, const BatchLabels& labels, double eps = kDefaultLogEps) {
  detail::check_batch(preds, labels);
  validate_log_eps(eps);
  LossTerm term = detail::empty_term(preds);
  std::size_t contributing = 0;
  for (std::size_t j = 0; j < preds.batch_size(); ++j) contributing += labels.mask_sum(j) > 0.0;
  if (contributing == 0) return term;
  const double batch_scale = 1.0 / static_cast<double>(contributing);
  for (std::size_t j = 0; j < preds.batch_size(); ++j) {
    const double annotated = labels.mask_sum(j);
    if (annotated == 0.0) continue;
    const double scale = batch_scale / annotated;
    for (std::size_t i = 0; i < preds.num_attributes(); ++i) {
      const double delta = labels.att_mask(j, i);
      if (delta == 0.0) continue;
      const double p = preds.att_probs(j, i);
      const double y = labels.att_labels(j, i);
      term.value -= delta * (y * clamped_log(p, eps) + (1.0 - y) * clamped_log(1.0 - p, eps)) * scale;
      // p − y away from the clamp; each log term is flat where it is clamped.
      const double on = p > eps ? 1.0 : 0.0;
      const double off = 1.0 - p > eps ? 1.0 : 0.0;
      term.grad_att_logits(j, i) = delta * ((1.0 - y) * off * p - y * on * (1.0 - p)) * scale;
    }
  }
  return term;
}

/// Attribute mixture q = cls_probs · mixture, one row per sample.
inline Matrix attribute_mixture(const Predictions& preds, const MixtureMatrix& mix) {
  if (mix.values.rows() != preds.num_classes() || mix.values.cols() != preds.num_attributes()) {
    throw Error(ErrorKind::Shape, "mixture matrix must be K×M = " + std::to_string(preds.num_classes()) + "x" +
                                      std::to_string(preds.num_attributes()));
  }
  return matmul(preds.cls_probs, mix.values);
}

/// Distribution matching: cross entropy of the attribute predictions against
/// the class-driven attribute mixture, averaged over every sample.
inline LossTerm loss_dm(const Predictions& preds, const MixtureMatrix& mix, const LossOptions& options = {}) {
  validate_log_eps(options.eps);
  if (preds.att_probs.rows() != preds.batch_size()) throw Error(ErrorKind::Shape, "prediction batch mismatch");
  const Matrix q = attribute_mixture(preds, mix);
  LossTerm term = detail::empty_term(preds);
  const std::size_t b = preds.batch_size();
  if (b == 0) return term;
  const std::size_t k = preds.num_classes();
  const std::size_t m = preds.num_attributes();
  const double scale = 1.0 / static_cast<double>(b);
  const double eps = options.eps;

  Vector grad_q(m), grad_p(k);
  for (std::size_t j = 0; j < b; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      const double a = preds.att_probs(j, i);
      const double qi = q(j, i);
      double value = -a * clamped_log(qi, eps);
      double grad_a = -clamped_log(qi, eps);
      grad_q[i] = -a * clamped_log_derivative(qi, eps);
      if (options.symmetric_dm) {
        value -= (1.0 - a) * clamped_log(1.0 - qi, eps);
        grad_a += clamped_log(1.0 - qi, eps);
        grad_q[i] += (1.0 - a) * clamped_log_derivative(1.0 - qi, eps);
      }
      term.value += value * scale;
      term.grad_att_logits(j, i) = grad_a * scale * a * (1.0 - a);
    }
    if (options.dm_stop_cls_grad) continue;
    for (std::size_t c = 0; c < k; ++c) {
      double g = 0.0;
      for (std::size_t i = 0; i < m; ++i) g += grad_q[i] * mix.values(c, i);
      grad_p[c] = g * scale;
    }
    detail::softmax_backward_row(preds.cls_probs.row(j), grad_p, term.grad_cls_logits.row(j));
  }
  return term;
}

/// Weighted indicator score per sample and class: the relatedness-weighted
/// count of active attributes divided by the class's total weight. Classes
/// with no related attribute score 0.
inline Matrix indicator_scores(const BatchLabels& labels, const IndicatorWeights& iw,
                               const LossOptions& options = {}) {
  const std::size_t b = labels.batch_size();
  const std::size_t k = iw.values.rows();
  const std::size_t m = iw.values.cols();
  if (labels.att_labels.cols() != m || labels.att_mask.cols() != m || labels.att_labels.rows() != b ||
      labels.att_mask.rows() != b) {
    throw Error(ErrorKind::Shape, "indicator weights do not match label attributes");
  }
  Matrix scores(b, k);
  for (std::size_t j = 0; j < b; ++j) {
    for (std::size_t c = 0; c < k; ++c) {
      double num = 0.0;
      double den = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double delta = labels.att_mask(j, i);
        const double w = iw.values(c, i);
        num += w * delta * labels.att_labels(j, i);
        den += options.renorm_observed ? w * delta : w;
      }
      if (!options.renorm_observed) den = iw.row_sums[c];
      scores(j, c) = den > 0.0 ? num / den : 0.0;
    }
  }
  return scores;
}

/// Soft class labels from ground-truth attributes: softmax of the indicator
/// scores. Rows without any annotated attribute are not eligible and hold the
/// uniform distribution.
inline SoftClassLabels soft_cls_label(const BatchLabels& labels, const IndicatorWeights& iw,
                                      const LossOptions& options = {}) {
  const Matrix scores = indicator_scores(labels, iw, options);
  const std::size_t b = labels.batch_size();
  const std::size_t k = iw.values.rows();
  SoftClassLabels out{Matrix(b, k, 1.0 / static_cast<double>(k)), std::vector<bool>(b, false)};
  for (std::size_t j = 0; j < b; ++j) {
    if (labels.mask_sum(j) == 0.0) continue;
    out.eligible[j] = true;
    const Vector soft = softmax(scores.row(j));
    std::copy(soft.begin(), soft.end(), out.probs.row(j).begin());
  }
  return out;
}

/// Soft co-annotation: cross entropy of the class predictions against the
/// soft class labels, averaged over eligible samples. Only the class head
/// receives gradient.
inline LossTerm loss_sca(const Predictions& preds, const Matrix& soft, const std::vector<bool>& eligible,
                         double eps = kDefaultLogEps) {
  validate_log_eps(eps);
  require_same_shape(preds.cls_probs, soft, "loss_sca soft labels");
  if (eligible.size() != preds.batch_size()) throw Error(ErrorKind::Shape, "eligibility flags size mismatch");
  LossTerm term = detail::empty_term(preds);
  std::size_t n = 0;
  for (bool e : eligible) n += e;
  if (n == 0) return term;
  const double scale = 1.0 / static_cast<double>(n);
  const std::size_t k = preds.num_classes();
  Vector grad_p(k);
  for (std::size_t j = 0; j < preds.batch_size(); ++j) {
    if (!eligible[j]) continue;
    for (std::size_t c = 0; c < k; ++c) {
      const double log_soft = clamped_log(soft(j, c), eps);
      term.value -= preds.cls_probs(j, c) * log_soft * scale;
      grad_p[c] = -log_soft * scale;
    }
    detail::softmax_backward_row(preds.cls_probs.row(j), grad_p, term.grad_cls_logits.row(j));
  }
  return term;
}

/// Weighted multi-task objective. Terms whose weight is zero are skipped and
/// report 0; the coupling terms need `coupling` only when their weight is set.
inline LossReport loss_total(const Predictions& preds, const BatchLabels& labels, const Coupling* coupling,
                             const LossWeights& weights = {}, const LossOptions& options = {}) {
  weights.validate();
  detail::check_batch(preds, labels);
  if ((weights.dm > 0.0 || weights.sca > 0.0) && coupling == nullptr) {
    throw Error(ErrorKind::Config, "coupling losses enabled without a relatedness source");
  }
  LossReport report;
  report.grad_cls_logits = Matrix(preds.batch_size(), preds.num_classes());
  report.grad_att_logits = Matrix(preds.batch_size(), preds.num_attributes());

  const auto accumulate = [&](const LossTerm& term, double weight, double& slot) {
    slot = term.value;
    report.l_total += weight * term.value;
    auto gc = report.grad_cls_logits.values();
    auto tc = term.grad_cls_logits.values();
    for (std::size_t n = 0; n < gc.size(); ++n) gc[n] += weight * tc[n];
    auto ga = report.grad_att_logits.values();
    auto ta = term.grad_att_logits.values();
    for (std::size_t n = 0; n < ga.size(); ++n) ga[n] += weight * ta[n];
  };

  if (weights.cls > 0.0) accumulate(loss_cls(preds, labels, options.eps), weights.cls, report.l_cls);
  if (weights.att > 0.0) accumulate(loss_att(preds, labels, options.eps), weights.att, report.l_att);
  if (weights.dm > 0.0) accumulate(loss_dm(preds, coupling->mixture, options), weights.dm, report.l_dm);
  if (weights.sca > 0.0) {
    const auto soft = soft_cls_label(labels, coupling->indicator, options);
    accumulate(loss_sca(preds, soft.probs, soft.eligible, options.eps), weights.sca, report.l_sca);
  }
  return report;
}

}  // namespace cmtl
