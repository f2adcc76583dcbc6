#pragma once

// Independent reference implementations and gradient-check helpers shared by
// the unit tests and the acceptance runner. Nothing here calls the library
// routine it is meant to check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "cmtl/cmtl.hpp"

namespace oracle {

using cmtl::Matrix;
using cmtl::Vector;

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  }
  return out;
}

inline Vector softmax(const Vector& z) {
  double hi = z[0];
  for (double v : z) hi = std::max(hi, v);
  Vector out(z.size());
  double total = 0.0;
  for (std::size_t c = 0; c < z.size(); ++c) {
    out[c] = std::exp(z[c] - hi);
    total += out[c];
  }
  for (double& v : out) v /= total;
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Predictions from raw logits, computed entry by entry.
inline cmtl::Predictions predictions(const Matrix& cls_logits, const Matrix& att_logits) {
  cmtl::Predictions p{Matrix(cls_logits.rows(), cls_logits.cols()), Matrix(att_logits.rows(), att_logits.cols())};
  for (std::size_t j = 0; j < cls_logits.rows(); ++j) {
    Vector z(cls_logits.row(j).begin(), cls_logits.row(j).end());
    const Vector s = softmax(z);
    for (std::size_t c = 0; c < s.size(); ++c) p.cls_probs(j, c) = s[c];
    for (std::size_t i = 0; i < att_logits.cols(); ++i) p.att_probs(j, i) = sigmoid(att_logits(j, i));
  }
  return p;
}

/// Layer-by-layer scalar forward pass of the two-headed rectifier network.
inline std::pair<Matrix, Matrix> forward_logits(const cmtl::MlpParams& params, const Matrix& x) {
  std::vector<Vector> rows;
  for (std::size_t j = 0; j < x.rows(); ++j) rows.emplace_back(x.row(j).begin(), x.row(j).end());
  const auto affine = [](const Vector& in, const cmtl::Dense& layer) {
    Vector out(layer.weight.cols());
    for (std::size_t o = 0; o < out.size(); ++o) {
      double s = layer.bias[o];
      for (std::size_t i = 0; i < in.size(); ++i) s += in[i] * layer.weight(i, o);
      out[o] = s;
    }
    return out;
  };
  Matrix cls(x.rows(), params.cls_head.weight.cols());
  Matrix att(x.rows(), params.att_head.weight.cols());
  for (std::size_t j = 0; j < rows.size(); ++j) {
    Vector h = rows[j];
    for (const auto& layer : params.trunk) {
      h = affine(h, layer);
      for (double& v : h) v = v > 0.0 ? v : 0.0;
    }
    const Vector zc = affine(h, params.cls_head);
    const Vector za = affine(h, params.att_head);
    for (std::size_t c = 0; c < zc.size(); ++c) cls(j, c) = zc[c];
    for (std::size_t i = 0; i < za.size(); ++i) att(j, i) = za[i];
  }
  return {cls, att};
}

/// Two-pass co-occurrence counting: p(att i | class c) over samples of class c
/// with attribute i annotated.
inline Matrix relatedness_counts(const cmtl::Dataset& data) {
  const std::size_t k = data.schema.num_classes();
  const std::size_t m = data.schema.num_attributes();
  Matrix eligible(k, m), active(k, m), out(k, m);
  for (const auto& s : data.samples) {
    for (std::size_t i = 0; i < m; ++i) {
      if (s.att_mask[i]) eligible(*s.cls_label, i) += 1.0;
    }
  }
  for (const auto& s : data.samples) {
    for (std::size_t i = 0; i < m; ++i) {
      if (s.att_mask[i] && s.att_labels[i]) active(*s.cls_label, i) += 1.0;
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < m; ++i) out(c, i) = active(c, i) / eligible(c, i);
  }
  return out;
}

/// Soft class label of one sample: per-class weighted indicator sum divided by
/// the class's total weight, then normalized exponentials.
inline Vector soft_label(const Matrix& weights, const std::vector<double>& y) {
  const std::size_t k = weights.rows();
  Vector score(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      num += weights(c, i) * y[i];
      den += weights(c, i);
    }
    score[c] = den > 0.0 ? num / den : 0.0;
  }
  return softmax(score);
}

/// Scalar Adam with bias correction.
struct Adam {
  double lr, b1, b2, eps;
  std::vector<double> m, v;
  int t = 0;

  void step(std::vector<double>& x, const std::vector<double>& g) {
    if (m.empty()) {
      m.assign(x.size(), 0.0);
      v.assign(x.size(), 0.0);
    }
    ++t;
    for (std::size_t n = 0; n < x.size(); ++n) {
      m[n] = b1 * m[n] + (1 - b1) * g[n];
      v[n] = b2 * v[n] + (1 - b2) * g[n] * g[n];
      const double mh = m[n] / (1 - std::pow(b1, t));
      const double vh = v[n] / (1 - std::pow(b2, t));
      x[n] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

// ---------------------------------------------------------------------------
// Finite differences.

inline constexpr double kStep = 1e-6;
inline constexpr double kRelTol = 1e-5;
/// Denominator floor of the relative error, per unit of loss magnitude. Central
/// differences carry rounding noise of about eps * |loss| / step, so entries
/// smaller than this are judged against the floor instead of themselves.
inline constexpr double kRelFloor = 1e-4;

inline double relative_error(double analytic, double numeric, double floor = kRelFloor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Largest relative error between `analytic` and central differences of
/// `loss` with respect to every entry of `x`.
template <typename Real>
double max_gradient_error(std::span<double> x, std::span<const double> analytic, const std::function<Real()>& loss) {
  const double floor = kRelFloor * std::max(1.0, static_cast<double>(std::abs(loss())));
  double worst = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    const double saved = x[n];
    x[n] = saved + kStep;
    const Real up = loss();
    x[n] = saved - kStep;
    const Real down = loss();
    x[n] = saved;
    // The perturbed values are exactly representable, so the step actually
    // taken is recovered from them rather than assumed.
    const Real step = static_cast<Real>(saved + kStep) - static_cast<Real>(saved - kStep);
    worst = std::max(worst, relative_error(analytic[n], static_cast<double>((up - down) / step), floor));
  }
  return worst;
}

inline double max_gradient_error(std::span<double> x, std::span<const double> analytic,
                                 const std::function<double()>& loss) {
  return max_gradient_error<double>(x, analytic, loss);
}

// ---------------------------------------------------------------------------
// Extended-precision objective.

using Ext = long double;

/// loss_total with unit weights and default options, evaluated through the
/// network entirely in long double. Its rounding noise is far below what a
/// step-1e-6 central difference can resolve in double.
inline Ext total_loss_ext(const cmtl::MlpParams& params, const Matrix& x, const cmtl::BatchLabels& labels,
                          const Matrix& mix, const Matrix& indicator, const Vector& indicator_row_sums) {
  const Ext eps = cmtl::kDefaultLogEps;
  const auto clog = [&](Ext v) { return std::log(std::max(v, eps)); };
  const std::size_t b = x.rows();
  const std::size_t k = params.cls_head.weight.cols();
  const std::size_t m = params.att_head.weight.cols();
  const auto affine = [](const std::vector<Ext>& in, const cmtl::Dense& layer) {
    std::vector<Ext> out(layer.weight.cols());
    for (std::size_t o = 0; o < out.size(); ++o) {
      Ext s = layer.bias[o];
      for (std::size_t i = 0; i < in.size(); ++i) s += in[i] * static_cast<Ext>(layer.weight(i, o));
      out[o] = s;
    }
    return out;
  };
  const auto ext_softmax = [](const std::vector<Ext>& z) {
    Ext hi = z[0];
    for (Ext v : z) hi = std::max(hi, v);
    std::vector<Ext> out(z.size());
    Ext total = 0;
    for (std::size_t c = 0; c < z.size(); ++c) total += (out[c] = std::exp(z[c] - hi));
    for (Ext& v : out) v /= total;
    return out;
  };

  std::vector<std::vector<Ext>> p(b), a(b);
  for (std::size_t j = 0; j < b; ++j) {
    std::vector<Ext> h(x.row(j).begin(), x.row(j).end());
    for (const auto& layer : params.trunk) {
      h = affine(h, layer);
      for (Ext& v : h) v = v > 0 ? v : 0;
    }
    p[j] = ext_softmax(affine(h, params.cls_head));
    a[j] = affine(h, params.att_head);
    for (Ext& v : a[j]) v = 1 / (1 + std::exp(-v));
  }

  Ext l_cls = 0, l_att = 0, l_dm = 0, l_sca = 0;
  std::size_t n_cls = 0, n_att = 0, n_sca = 0;
  for (std::size_t j = 0; j < b; ++j) {
    if (labels.cls_label[j]) {
      l_cls -= clog(p[j][*labels.cls_label[j]]);
      ++n_cls;
    }
    Ext annotated = 0, sample = 0;
    for (std::size_t i = 0; i < m; ++i) {
      if (labels.att_mask(j, i) == 0.0) continue;
      annotated += 1;
      const Ext y = labels.att_labels(j, i);
      sample -= y * clog(a[j][i]) + (1 - y) * clog(1 - a[j][i]);
    }
    if (annotated > 0) {
      l_att += sample / annotated;
      ++n_att;
      std::vector<Ext> score(k);
      for (std::size_t c = 0; c < k; ++c) {
        Ext num = 0;
        for (std::size_t i = 0; i < m; ++i) {
          num += static_cast<Ext>(indicator(c, i)) * labels.att_mask(j, i) * labels.att_labels(j, i);
        }
        score[c] = indicator_row_sums[c] > 0 ? num / static_cast<Ext>(indicator_row_sums[c]) : 0;
      }
      const auto soft = ext_softmax(score);
      for (std::size_t c = 0; c < k; ++c) l_sca -= p[j][c] * clog(soft[c]);
      ++n_sca;
    }
    for (std::size_t i = 0; i < m; ++i) {
      Ext q = 0;
      for (std::size_t c = 0; c < k; ++c) q += p[j][c] * static_cast<Ext>(mix(c, i));
      l_dm -= a[j][i] * clog(q);
    }
  }
  Ext total = l_dm / static_cast<Ext>(b);
  if (n_cls) total += l_cls / static_cast<Ext>(n_cls);
  if (n_att) total += l_att / static_cast<Ext>(n_att);
  if (n_sca) total += l_sca / static_cast<Ext>(n_sca);
  return total;
}

// ---------------------------------------------------------------------------
// Random inputs.

struct RandomProblem {
  Matrix cls_logits;
  Matrix att_logits;
  cmtl::BatchLabels labels;
  cmtl::MixtureMatrix mix;
  cmtl::IndicatorWeights indicator;
};

/// A batch with random logits, partially missing labels and random
/// relatedness matrices. At least one row carries a class label and one row
/// carries attributes so that every term is active.
inline RandomProblem random_problem(cmtl::SeededRng& rng, std::size_t b, std::size_t k, std::size_t m) {
  RandomProblem p;
  p.cls_logits = Matrix(b, k);
  p.att_logits = Matrix(b, m);
  for (double& v : p.cls_logits.values()) v = rng.normal(0.0, 1.5);
  for (double& v : p.att_logits.values()) v = rng.normal(0.0, 1.5);
  p.labels.cls_label.resize(b);
  p.labels.att_labels = Matrix(b, m);
  p.labels.att_mask = Matrix(b, m);
  for (std::size_t j = 0; j < b; ++j) {
    if (j == 0 || rng.bernoulli(0.6)) p.labels.cls_label[j] = rng.index(k);
    for (std::size_t i = 0; i < m; ++i) {
      if ((j == b - 1 && i == 0) || rng.bernoulli(0.6)) {
        p.labels.att_mask(j, i) = 1.0;
        p.labels.att_labels(j, i) = rng.bernoulli(0.5) ? 1.0 : 0.0;
      }
    }
  }
  p.mix.values = Matrix(k, m);
  p.indicator.values = Matrix(k, m);
  p.indicator.row_sums.assign(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < m; ++i) {
      if (rng.bernoulli(0.5)) p.mix.values(c, i) = 0.05 + 0.95 * rng.uniform();
      if (rng.bernoulli(0.5)) p.indicator.values(c, i) = 0.05 + 0.95 * rng.uniform();
      p.indicator.row_sums[c] += p.indicator.values(c, i);
    }
  }
  return p;
}

/// Fully labeled samples with randomly masked attributes. The first k samples
/// cover every class with all attributes annotated, so no count is empty.
inline cmtl::Dataset random_joint(cmtl::SeededRng& rng, std::size_t n, std::size_t k, std::size_t m, double mask_rate) {
  cmtl::Dataset d;
  for (std::size_t c = 0; c < k; ++c) d.schema.class_names.push_back("c" + std::to_string(c));
  for (std::size_t i = 0; i < m; ++i) d.schema.attribute_names.push_back("a" + std::to_string(i));
  d.schema.feature_dim = 1;
  for (std::size_t j = 0; j < n; ++j) {
    cmtl::Sample s;
    s.features = {0.0};
    s.cls_label = j < k ? j : rng.index(k);
    s.att_labels.assign(m, 0);
    s.att_mask.assign(m, 0);
    for (std::size_t i = 0; i < m; ++i) {
      if (j < k || rng.uniform() >= mask_rate) {
        s.att_mask[i] = 1;
        s.att_labels[i] = rng.bernoulli(0.4) ? 1 : 0;
      }
    }
    d.samples.push_back(s);
  }
  return d;
}


inline cmtl::MlpParams random_params(cmtl::SeededRng& rng, const cmtl::MlpConfig& cfg, double scale = 0.7) {
  cmtl::MlpParams params = cmtl::zero_params(cfg);
  for (auto t : params.tensors()) {
    for (double& v : t) v = rng.normal(0.0, scale);
  }
  return params;
}

inline Matrix random_matrix(cmtl::SeededRng& rng, std::size_t rows, std::size_t cols) {
  Matrix out(rows, cols);
  for (double& v : out.values()) v = rng.normal(0.0, 1.0);
  return out;
}

}  // namespace oracle
