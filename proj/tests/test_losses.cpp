#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "cmtl/losses.hpp"
#include "oracles.hpp"

using namespace cmtl;

namespace {

const std::string kDataDir = CMTL_DATA_DIR;

BatchLabels empty_labels(std::size_t b, std::size_t m) {
  BatchLabels l;
  l.cls_label.resize(b);
  l.att_labels = Matrix(b, m);
  l.att_mask = Matrix(b, m);
  return l;
}

Predictions preds_from(std::vector<Vector> cls, std::vector<Vector> att) {
  Predictions p{Matrix(cls.size(), cls[0].size()), Matrix(att.size(), att[0].size())};
  for (std::size_t j = 0; j < cls.size(); ++j) {
    for (std::size_t c = 0; c < cls[j].size(); ++c) p.cls_probs(j, c) = cls[j][c];
    for (std::size_t i = 0; i < att[j].size(); ++i) p.att_probs(j, i) = att[j][i];
  }
  return p;
}

enum class Term { Cls, Att, Dm, Sca };

LossTerm evaluate(Term term, const Predictions& p, const oracle::RandomProblem& prob, const LossOptions& opt) {
  switch (term) {
    case Term::Cls: return loss_cls(p, prob.labels);
    case Term::Att: return loss_att(p, prob.labels);
    case Term::Dm: return loss_dm(p, prob.mix, opt);
    case Term::Sca: {
      const auto soft = soft_cls_label(prob.labels, prob.indicator, opt);
      return loss_sca(p, soft.probs, soft.eligible);
    }
  }
  return {};
}

// Central-difference check of one term with respect to both logit matrices.
double term_gradient_error(Term term, oracle::RandomProblem& prob, const LossOptions& opt = {}) {
  const auto analytic = evaluate(term, oracle::predictions(prob.cls_logits, prob.att_logits), prob, opt);
  const auto value = [&] { return evaluate(term, oracle::predictions(prob.cls_logits, prob.att_logits), prob, opt).value; };
  return std::max(oracle::max_gradient_error(prob.cls_logits.values(), analytic.grad_cls_logits.values(), value),
                  oracle::max_gradient_error(prob.att_logits.values(), analytic.grad_att_logits.values(), value));
}

void check_term_gradients(Term term, const LossOptions& opt = {}) {
  SeededRng rng(1000 + static_cast<int>(term));
  for (int trial = 0; trial < 100; ++trial) {
    auto prob = oracle::random_problem(rng, 1 + rng.index(8), 2 + rng.index(6), 1 + rng.index(17));
    ASSERT_LT(term_gradient_error(term, prob, opt), oracle::kRelTol) << "trial " << trial;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// loss_cls

TEST(LossCls, OneHotPredictionIsZero) {
  auto l = empty_labels(1, 1);
  l.cls_label[0] = 1;
  const auto t = loss_cls(preds_from({{0, 1, 0}}, {{0.5}}), l);
  EXPECT_EQ(t.value, 0.0);
}

TEST(LossCls, UniformBinaryIsLn2) {
  auto l = empty_labels(1, 1);
  l.cls_label[0] = 0;
  EXPECT_NEAR(loss_cls(preds_from({{0.5, 0.5}}, {{0.5}}), l).value, std::numbers::ln2, 1e-15);
}

TEST(LossCls, NoLabelsGivesZero) {
  const auto t = loss_cls(preds_from({{0.3, 0.7}, {0.5, 0.5}}, {{0.5}, {0.5}}), empty_labels(2, 1));
  EXPECT_EQ(t.value, 0.0);
  for (double g : t.grad_cls_logits.values()) EXPECT_EQ(g, 0.0);
}

TEST(LossCls, OutOfRangeLabel) {
  auto l = empty_labels(1, 1);
  l.cls_label[0] = 2;
  try {
    loss_cls(preds_from({{0.5, 0.5}}, {{0.5}}), l);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Label);
  }
}

TEST(LossCls, GradientMatchesFiniteDifferences) { check_term_gradients(Term::Cls); }

TEST(LossCls, SoftTargetsMatchFiniteDifferences) {
  SeededRng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    auto prob = oracle::random_problem(rng, 1 + rng.index(8), 2 + rng.index(6), 1 + rng.index(5));
    prob.labels.cls_soft.resize(prob.labels.batch_size());
    for (std::size_t j = 0; j < prob.labels.batch_size(); ++j) {
      if (!prob.labels.cls_label[j] || rng.bernoulli(0.5)) continue;
      Vector z(prob.cls_logits.cols());
      for (double& v : z) v = rng.normal();
      prob.labels.cls_soft[j] = oracle::softmax(z);
    }
    ASSERT_LT(term_gradient_error(Term::Cls, prob), oracle::kRelTol) << trial;
  }
}

TEST(LossCls, OneHotSoftTargetEqualsHardLabel) {
  SeededRng rng(3);
  auto prob = oracle::random_problem(rng, 6, 4, 3);
  for (auto& y : prob.labels.cls_label) y = rng.index(4);
  const auto p = oracle::predictions(prob.cls_logits, prob.att_logits);
  const auto hard = loss_cls(p, prob.labels);
  auto soft = prob.labels;
  soft.cls_soft.resize(6);
  for (std::size_t j = 0; j < 6; ++j) {
    Vector t(4, 0.0);
    t[*soft.cls_label[j]] = 1.0;
    soft.cls_soft[j] = t;
  }
  const auto s = loss_cls(p, soft);
  EXPECT_NEAR(s.value, hard.value, 1e-12);
  for (std::size_t n = 0; n < s.grad_cls_logits.size(); ++n) {
    EXPECT_NEAR(s.grad_cls_logits.values()[n], hard.grad_cls_logits.values()[n], 1e-12);
  }
}

// ---------------------------------------------------------------------------
// loss_att

TEST(LossAtt, SingleCellLn2) {
  auto l = empty_labels(1, 1);
  l.att_mask(0, 0) = 1;
  l.att_labels(0, 0) = 1;
  EXPECT_NEAR(loss_att(preds_from({{0.5, 0.5}}, {{0.5}}), l).value, std::numbers::ln2, 1e-15);
}

TEST(LossAtt, FullyMaskedSampleContributesNothing) {
  auto l = empty_labels(2, 2);
  l.att_mask(0, 0) = l.att_mask(0, 1) = 1;
  l.att_labels(0, 0) = 1;
  const auto p = preds_from({{0.5, 0.5}, {0.5, 0.5}}, {{0.7, 0.2}, {0.9, 0.1}});
  const auto both = loss_att(p, l);
  const auto one = loss_att(preds_from({{0.5, 0.5}}, {{0.7, 0.2}}), [&] {
    auto s = empty_labels(1, 2);
    s.att_mask(0, 0) = s.att_mask(0, 1) = 1;
    s.att_labels(0, 0) = 1;
    return s;
  }());
  EXPECT_NEAR(both.value, one.value, 1e-15);
  EXPECT_EQ(both.grad_att_logits(1, 0), 0.0);
  EXPECT_EQ(both.grad_att_logits(1, 1), 0.0);
}

TEST(LossAtt, GradientMatchesFiniteDifferences) { check_term_gradients(Term::Att); }

// ---------------------------------------------------------------------------
// loss_dm

TEST(LossDm, OneHotHappinessMixture) {
  const auto spec = load_relatedness_file(kDataDir + "/expression_au_domain.rel");
  const auto mix = mixture_matrix(spec);
  Predictions p{Matrix(1, spec.num_classes()), Matrix(1, spec.num_attributes(), 0.5)};
  p.cls_probs(0, *spec.class_index("happiness")) = 1.0;
  const Matrix q = attribute_mixture(p, mix);
  for (std::size_t i = 0; i < spec.num_attributes(); ++i) {
    const auto& n = spec.attribute_names()[i];
    EXPECT_EQ(q(0, i), (n == "AU12" || n == "AU25" || n == "AU6") ? 1.0 : 0.0) << n;
  }
}

TEST(LossDm, SplitSurpriseFearGivesSumAtAu2) {
  const auto spec = load_relatedness_file(kDataDir + "/expression_au_domain.rel");
  const auto mix = mixture_matrix(spec);
  Predictions p{Matrix(1, spec.num_classes()), Matrix(1, spec.num_attributes(), 0.5)};
  p.cls_probs(0, *spec.class_index("surprise")) = 0.35;
  p.cls_probs(0, *spec.class_index("fear")) = 0.4;
  p.cls_probs(0, *spec.class_index("anger")) = 0.25;
  const Matrix q = attribute_mixture(p, mix);
  EXPECT_NEAR(q(0, *spec.attribute_index("AU2")), 0.75, 1e-12);
}

TEST(LossDm, ZeroAttributeProbabilitiesGiveZeroLoss) {
  SeededRng rng(2);
  auto prob = oracle::random_problem(rng, 4, 3, 5);
  auto p = oracle::predictions(prob.cls_logits, prob.att_logits);
  for (double& v : p.att_probs.values()) v = 1e-300;
  EXPECT_NEAR(loss_dm(p, prob.mix).value, 0.0, 1e-290);
}

TEST(LossDm, OneHotBinaryMixtureReduction) {
  // One-hot class, {0,1} mixture: per sample −Σ_unrelated a_i·log(eps).
  MixtureMatrix mix{Matrix(2, 3, std::vector<double>{1, 0, 1, 0, 1, 0})};
  const auto p = preds_from({{1, 0}}, {{0.9, 0.2, 0.7}});
  EXPECT_NEAR(loss_dm(p, mix).value, -0.2 * std::log(kDefaultLogEps), 1e-12);
  const auto exact = preds_from({{1, 0}}, {{1.0, 1e-300, 1.0}});
  EXPECT_NEAR(loss_dm(exact, mix).value, 0.0, 1e-200);
}

TEST(LossDm, GradientMatchesFiniteDifferences) { check_term_gradients(Term::Dm); }

TEST(LossDm, VariantGradientsMatchFiniteDifferences) {
  LossOptions sym;
  sym.symmetric_dm = true;
  check_term_gradients(Term::Dm, sym);
  LossOptions stop;
  stop.dm_stop_cls_grad = true;
  SeededRng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto prob = oracle::random_problem(rng, 1 + rng.index(8), 2 + rng.index(6), 1 + rng.index(17));
    const auto t = loss_dm(oracle::predictions(prob.cls_logits, prob.att_logits), prob.mix, stop);
    for (double g : t.grad_cls_logits.values()) ASSERT_EQ(g, 0.0);
    const auto value = [&] { return loss_dm(oracle::predictions(prob.cls_logits, prob.att_logits), prob.mix, stop).value; };
    ASSERT_LT(oracle::max_gradient_error(prob.att_logits.values(), t.grad_att_logits.values(), value), oracle::kRelTol);
  }
}

TEST(LossDm, ShapeMismatch) {
  MixtureMatrix mix{Matrix(3, 2)};
  EXPECT_THROW(loss_dm(preds_from({{0.5, 0.5}}, {{0.5, 0.5}}), mix), Error);
}

// ---------------------------------------------------------------------------
// Soft class labels and loss_sca

TEST(SoftClassLabel, HappinessIndicatorIsOne) {
  const auto spec = load_relatedness_file(kDataDir + "/expression_au_domain.rel");
  const auto iw = indicator_weights(spec);
  auto l = empty_labels(1, spec.num_attributes());
  for (std::size_t i = 0; i < spec.num_attributes(); ++i) l.att_mask(0, i) = 1;
  for (const char* n : {"AU12", "AU25", "AU6"}) l.att_labels(0, *spec.attribute_index(n)) = 1;
  const std::size_t h = *spec.class_index("happiness");
  EXPECT_EQ((1.0 + 1.0 + 0.51) / iw.row_sums[h], 1.0);
  EXPECT_EQ(indicator_scores(l, iw)(0, h), 1.0);
  const auto soft = soft_cls_label(l, iw);
  std::vector<double> y(spec.num_attributes());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = l.att_labels(0, i);
  const auto want = oracle::soft_label(iw.values, y);
  for (std::size_t c = 0; c < spec.num_classes(); ++c) EXPECT_NEAR(soft.probs(0, c), want[c], 1e-12);
  for (std::size_t c = 0; c < spec.num_classes(); ++c) {
    if (c != h) EXPECT_LT(soft.probs(0, c), soft.probs(0, h));
  }
}

TEST(SoftClassLabel, AllZeroLabelsGiveUniform) {
  const auto iw = indicator_weights(load_relatedness_file(kDataDir + "/expression_au_domain.rel"));
  auto l = empty_labels(1, 17);
  for (std::size_t i = 0; i < 17; ++i) l.att_mask(0, i) = 1;
  const auto soft = soft_cls_label(l, iw);
  EXPECT_TRUE(soft.eligible[0]);
  for (std::size_t c = 0; c < 7; ++c) EXPECT_NEAR(soft.probs(0, c), 1.0 / 7.0, 1e-12);
}

TEST(SoftClassLabel, MatchesScalarOracleOnTableWeights) {
  const auto spec = load_relatedness_file(kDataDir + "/expression_au_domain.rel");
  const auto iw = indicator_weights(spec);
  SeededRng rng(31);
  auto l = empty_labels(200, 17);
  for (std::size_t j = 0; j < 200; ++j) {
    for (std::size_t i = 0; i < 17; ++i) {
      l.att_mask(j, i) = 1;
      l.att_labels(j, i) = rng.bernoulli(0.3);
    }
  }
  const auto soft = soft_cls_label(l, iw);
  for (std::size_t j = 0; j < 200; ++j) {
    std::vector<double> y(l.att_labels.row(j).begin(), l.att_labels.row(j).end());
    const auto want = oracle::soft_label(iw.values, y);
    for (std::size_t c = 0; c < 7; ++c) ASSERT_NEAR(soft.probs(j, c), want[c], 1e-12);
  }
}

TEST(SoftClassLabel, UnannotatedSampleIsIneligible) {
  const auto iw = indicator_weights(load_relatedness_file(kDataDir + "/expression_au_domain.rel"));
  auto l = empty_labels(2, 17);
  l.att_mask(1, 3) = 1;
  const auto soft = soft_cls_label(l, iw);
  EXPECT_FALSE(soft.eligible[0]);
  EXPECT_TRUE(soft.eligible[1]);
}

TEST(SoftClassLabel, MaskedAttributesCountAsInactiveUnlessRenormalized) {
  IndicatorWeights iw{Matrix(2, 2, std::vector<double>{1, 1, 0, 1}), {2, 1}};
  auto l = empty_labels(1, 2);
  l.att_mask(0, 0) = 1;
  l.att_labels(0, 0) = 1;
  const auto plain = soft_cls_label(l, iw);
  const auto want = oracle::softmax({0.5, 0.0});
  EXPECT_NEAR(plain.probs(0, 0), want[0], 1e-15);
  LossOptions renorm;
  renorm.renorm_observed = true;
  const auto r = soft_cls_label(l, iw, renorm);
  const auto want_r = oracle::softmax({1.0, 0.0});
  EXPECT_NEAR(r.probs(0, 0), want_r[0], 1e-15);
}

TEST(LossSca, UniformEqualsLnK) {
  const std::size_t k = 5;
  Matrix soft(1, k, 1.0 / k);
  Predictions p{Matrix(1, k, 1.0 / k), Matrix(1, 1, 0.5)};
  EXPECT_NEAR(loss_sca(p, soft, {true}).value, std::log(static_cast<double>(k)), 1e-12);
}

TEST(LossSca, OneHotAgainstCertainSoftLabel) {
  Matrix soft(1, 3, std::vector<double>{1.0, 0.0, 0.0});
  const auto p = preds_from({{1, 0, 0}}, {{0.5}});
  EXPECT_NEAR(loss_sca(p, soft, {true}).value, 0.0, 1e-12);
}

TEST(LossSca, NoEligibleSamples) {
  const auto t = loss_sca(preds_from({{0.2, 0.8}}, {{0.5}}), Matrix(1, 2, 0.5), {false});
  EXPECT_EQ(t.value, 0.0);
  for (double g : t.grad_cls_logits.values()) EXPECT_EQ(g, 0.0);
}

TEST(LossSca, GradientMatchesFiniteDifferences) { check_term_gradients(Term::Sca); }

TEST(LossSca, NoAttributeGradient) {
  SeededRng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    auto prob = oracle::random_problem(rng, 1 + rng.index(8), 2 + rng.index(6), 1 + rng.index(17));
    const auto t = evaluate(Term::Sca, oracle::predictions(prob.cls_logits, prob.att_logits), prob, {});
    for (double g : t.grad_att_logits.values()) ASSERT_EQ(g, 0.0);
  }
}

// ---------------------------------------------------------------------------
// loss_total

TEST(LossTotal, SelectorWeights) {
  SeededRng rng(5);
  auto prob = oracle::random_problem(rng, 6, 4, 5);
  const auto p = oracle::predictions(prob.cls_logits, prob.att_logits);
  const Coupling coupling{prob.mix, prob.indicator};
  const auto r = loss_total(p, prob.labels, &coupling, {1, 0, 0, 0});
  const auto c = loss_cls(p, prob.labels);
  EXPECT_EQ(r.l_total, c.value);
  EXPECT_EQ(r.grad_cls_logits, c.grad_cls_logits);
  for (double g : r.grad_att_logits.values()) EXPECT_EQ(g, 0.0);
}

TEST(LossTotal, NonCoupledObjectiveIsSumOfTaskLosses) {
  SeededRng rng(6);
  auto prob = oracle::random_problem(rng, 6, 4, 5);
  for (std::size_t j = 0; j < 6; ++j) {
    prob.labels.cls_label[j] = rng.index(4);
    for (std::size_t i = 0; i < 5; ++i) prob.labels.att_mask(j, i) = 1;
  }
  const auto p = oracle::predictions(prob.cls_logits, prob.att_logits);
  const auto r = loss_total(p, prob.labels, nullptr, {1, 1, 0, 0});
  EXPECT_NEAR(r.l_total, loss_cls(p, prob.labels).value + loss_att(p, prob.labels).value, 1e-12);
  EXPECT_EQ(r.l_dm, 0.0);
  EXPECT_EQ(r.l_sca, 0.0);
}

TEST(LossTotal, GradientIsWeightedSumOfComponents) {
  SeededRng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto prob = oracle::random_problem(rng, 1 + rng.index(8), 2 + rng.index(6), 1 + rng.index(17));
    const auto p = oracle::predictions(prob.cls_logits, prob.att_logits);
    const Coupling coupling{prob.mix, prob.indicator};
    const LossWeights w{rng.uniform(0.1, 2), rng.uniform(0.1, 2), rng.uniform(0.1, 2), rng.uniform(0.1, 2)};
    const auto r = loss_total(p, prob.labels, &coupling, w);
    const Term terms[] = {Term::Cls, Term::Att, Term::Dm, Term::Sca};
    const double lambdas[] = {w.cls, w.att, w.dm, w.sca};
    Matrix gc(p.batch_size(), p.num_classes()), ga(p.batch_size(), p.num_attributes());
    double total = 0.0;
    for (int t = 0; t < 4; ++t) {
      const auto term = evaluate(terms[t], p, prob, {});
      total += lambdas[t] * term.value;
      for (std::size_t n = 0; n < gc.size(); ++n) gc.values()[n] += lambdas[t] * term.grad_cls_logits.values()[n];
      for (std::size_t n = 0; n < ga.size(); ++n) ga.values()[n] += lambdas[t] * term.grad_att_logits.values()[n];
    }
    ASSERT_NEAR(r.l_total, total, 1e-12);
    ASSERT_NEAR(r.l_total, w.cls * r.l_cls + w.att * r.l_att + w.dm * r.l_dm + w.sca * r.l_sca, 1e-12);
    for (std::size_t n = 0; n < gc.size(); ++n) ASSERT_NEAR(r.grad_cls_logits.values()[n], gc.values()[n], 1e-12);
    for (std::size_t n = 0; n < ga.size(); ++n) ASSERT_NEAR(r.grad_att_logits.values()[n], ga.values()[n], 1e-12);
    for (double v : {r.l_cls, r.l_att, r.l_dm, r.l_sca}) ASSERT_GE(v, 0.0);
  }
}

TEST(LossTotal, RejectsNegativeWeightAndMissingCoupling) {
  SeededRng rng(1);
  auto prob = oracle::random_problem(rng, 2, 2, 2);
  const auto p = oracle::predictions(prob.cls_logits, prob.att_logits);
  try {
    loss_total(p, prob.labels, nullptr, {1, -1, 0, 0});
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
  EXPECT_THROW(loss_total(p, prob.labels, nullptr, {1, 1, 1, 0}), Error);
}

TEST(LossTotal, BatchOrderPermutationInvariance) {
  SeededRng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 2 + rng.index(7);
    auto prob = oracle::random_problem(rng, b, 2 + rng.index(6), 1 + rng.index(17));
    const Coupling coupling{prob.mix, prob.indicator};
    const auto r = loss_total(oracle::predictions(prob.cls_logits, prob.att_logits), prob.labels, &coupling);
    std::vector<std::size_t> perm(b);
    for (std::size_t j = 0; j < b; ++j) perm[j] = j;
    rng.shuffle(perm);
    auto q = prob;
    for (std::size_t j = 0; j < b; ++j) {
      const auto src = perm[j];
      std::copy(prob.cls_logits.row(src).begin(), prob.cls_logits.row(src).end(), q.cls_logits.row(j).begin());
      std::copy(prob.att_logits.row(src).begin(), prob.att_logits.row(src).end(), q.att_logits.row(j).begin());
      std::copy(prob.labels.att_labels.row(src).begin(), prob.labels.att_labels.row(src).end(),
                q.labels.att_labels.row(j).begin());
      std::copy(prob.labels.att_mask.row(src).begin(), prob.labels.att_mask.row(src).end(),
                q.labels.att_mask.row(j).begin());
      q.labels.cls_label[j] = prob.labels.cls_label[src];
    }
    const auto s = loss_total(oracle::predictions(q.cls_logits, q.att_logits), q.labels, &coupling);
    EXPECT_NEAR(r.l_cls, s.l_cls, 1e-12);
    EXPECT_NEAR(r.l_att, s.l_att, 1e-12);
    EXPECT_NEAR(r.l_dm, s.l_dm, 1e-12);
    EXPECT_NEAR(r.l_sca, s.l_sca, 1e-12);
  }
}

TEST(LossTotal, MaskedRowsReceiveZeroGradient) {
  SeededRng rng(10);
  for (int trial = 0; trial < 30; ++trial) {
    auto prob = oracle::random_problem(rng, 2 + rng.index(7), 2 + rng.index(6), 1 + rng.index(17));
    const auto p = oracle::predictions(prob.cls_logits, prob.att_logits);
    const auto cls = loss_cls(p, prob.labels);
    const auto att = loss_att(p, prob.labels);
    const auto soft = soft_cls_label(prob.labels, prob.indicator);
    const auto sca = loss_sca(p, soft.probs, soft.eligible);
    for (std::size_t j = 0; j < p.batch_size(); ++j) {
      if (!prob.labels.cls_label[j]) {
        for (double g : cls.grad_cls_logits.row(j)) ASSERT_EQ(g, 0.0);
      }
      if (prob.labels.mask_sum(j) == 0.0) {
        for (double g : att.grad_att_logits.row(j)) ASSERT_EQ(g, 0.0);
        for (double g : sca.grad_cls_logits.row(j)) ASSERT_EQ(g, 0.0);
      }
      for (std::size_t i = 0; i < p.num_attributes(); ++i) {
        if (prob.labels.att_mask(j, i) == 0.0) ASSERT_EQ(att.grad_att_logits(j, i), 0.0);
      }
    }
  }
}
