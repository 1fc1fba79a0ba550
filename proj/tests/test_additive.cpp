#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "dcorsel/additive.hpp"
#include "dcorsel/metrics.hpp"
#include "oracles.hpp"

using namespace dcorsel;

namespace {

std::vector<double> normals(std::size_t n, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = z(rng);
  return v;
}

std::vector<double> uniforms(std::size_t n, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

double sd_of(const std::vector<double>& v) { return sample_sd(v); }

// YR2-style data: log(4 + sin(3 Z1) + sin(Z2) + Z3^2 + Z4 + 0.1 e).
Dataset yr2_like(std::size_t n, std::mt19937_64& rng) {
  auto z1 = normals(n, 1.0, rng), z2 = normals(n, 2.0, rng);
  auto z3 = uniforms(n, -1.5, 1.5, rng), z4 = uniforms(n, -1.0, 1.0, rng);
  auto e = normals(n, 1.0, rng);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i)
    y[i] = std::log(4.0 + std::sin(3 * z1[i]) + std::sin(z2[i]) + z3[i] * z3[i] + z4[i] + 0.1 * e[i]);
  return Dataset(Covariate::scalar("Y", y), {Covariate::scalar("Z1", z1), Covariate::scalar("Z2", z2),
                                             Covariate::scalar("Z3", z3), Covariate::scalar("Z4", z4)});
}

}  // namespace

TEST(FitAdditive, NullModelIsTheMean) {
  std::mt19937_64 rng(1);
  auto y = normals(50, 3.0, rng);
  Dataset d(Covariate::scalar("Y", y), {});
  const auto m = fit_additive(d, {});
  EXPECT_NEAR(m.intercept, mean(y), 1e-12);
  EXPECT_EQ(m.deviance_explained, 0.0);
  EXPECT_EQ(m.edf, 1.0);
}

TEST(FitAdditive, SimpleSlopeAgreesWithClosedFormOls) {
  std::mt19937_64 rng(2);
  const std::size_t n = 200;
  auto z = normals(n, 1.0, rng), e = normals(n, 1.0, rng);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = 2.0 * z[i] + e[i];
  Dataset d(Covariate::scalar("Y", y), {Covariate::scalar("Z", z)});
  const auto m = fit_additive(d, {TermSpec::linear("Z")});
  // closed form: b = Sxy/Sxx, se = sqrt(RSS/(n-2)/Sxx)
  const double zb = mean(z), yb = mean(y);
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (z[i] - zb) * (z[i] - zb);
    sxy += (z[i] - zb) * (y[i] - yb);
  }
  const double b = sxy / sxx;
  double rss = 0, tss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    rss += std::pow(y[i] - yb - b * (z[i] - zb), 2);
    tss += std::pow(y[i] - yb, 2);
  }
  const double se = std::sqrt(rss / (n - 2) / sxx);
  EXPECT_NEAR(m.terms[0].slopes[0], b, 1e-10);
  EXPECT_LT(std::abs(m.terms[0].slopes[0] - 2.0), 3 * se);
  EXPECT_NEAR(m.deviance_explained, 1.0 - rss / tss, 1e-10);
  EXPECT_NEAR(m.deviance_explained, 4.0 / 5.0, 0.08);
  EXPECT_EQ(m.edf, 2.0);
}

TEST(FitAdditive, AllLinearReproducesNormalEquations) {
  std::mt19937_64 rng(3);
  const std::size_t n = 150;
  std::vector<std::vector<double>> cols = {normals(n, 1.0, rng), uniforms(n, 0, 5, rng), normals(n, 10.0, rng)};
  for (std::size_t i = 0; i < n; ++i) cols[1][i] += 0.5 * cols[0][i];
  auto e = normals(n, 0.5, rng);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = 1.0 + cols[0][i] - 2.0 * cols[1][i] + 0.1 * cols[2][i] + e[i];
  Dataset d(Covariate::scalar("Y", y),
            {Covariate::scalar("A", cols[0]), Covariate::scalar("B", cols[1]), Covariate::scalar("C", cols[2])});
  const auto m = fit_additive(d, {TermSpec::linear("A"), TermSpec::linear("B"), TermSpec::linear("C")});
  const auto beta = oracle::ols(cols, y);
  double alpha = beta[0];
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_NEAR(m.terms[j].slopes[0], beta[j + 1], 1e-6 * std::abs(beta[j + 1]));
    alpha += beta[j + 1] * mean(cols[j]);
  }
  EXPECT_NEAR(m.intercept, alpha, 1e-6 * std::abs(alpha));
  EXPECT_NEAR(mean(m.residuals), 0.0, 1e-8);
  EXPECT_TRUE(m.converged);
}

TEST(FitAdditive, DummySetMatchesGroupMeans) {
  std::mt19937_64 rng(4);
  std::vector<std::size_t> codes(90);
  for (std::size_t i = 0; i < 90; ++i) codes[i] = i % 3;
  auto e = normals(90, 1.0, rng);
  std::vector<double> y(90);
  for (std::size_t i = 0; i < 90; ++i) y[i] = static_cast<double>(codes[i]) * 2.0 + e[i];
  Dataset d(Covariate::scalar("Y", y), {Covariate::categorical("G", codes, {"a", "b", "c"})});
  const auto m = fit_additive(d, {TermSpec::dummy_set("G")});
  EXPECT_EQ(m.edf, 3.0);
  for (std::size_t g = 0; g < 3; ++g) {
    double s = 0;
    for (std::size_t i = g; i < 90; i += 3) s += y[i];
    EXPECT_NEAR(m.fitted[g], s / 30.0, 1e-10);
  }
}

TEST(FitAdditive, SmoothTermsReachNoiseLevelOnYr2Design) {
  std::mt19937_64 rng(5);
  const auto train = yr2_like(400, rng);
  const auto test = yr2_like(1000, rng);
  std::vector<TermSpec> terms;
  for (auto name : {"Z1", "Z2", "Z3", "Z4"}) terms.push_back(TermSpec::smooth(name));
  const auto m = fit_additive(train, terms);
  EXPECT_TRUE(m.converged);
  EXPECT_LT(sd_of(m.residuals), 0.1);
  EXPECT_LT(rmspe(test.response_values(), m.predict(test)), 0.12);
  std::vector<TermSpec> lin;
  for (auto name : {"Z1", "Z2", "Z3", "Z4"}) lin.push_back(TermSpec::linear(name));
  EXPECT_GT(rmspe(test.response_values(), fit_additive(train, lin).predict(test)), 0.2);
  for (const auto& t : m.terms) EXPECT_LE(t.edf, 8.0 + 1e-6);
}

TEST(FitAdditive, BackfittingFixedPoint) {
  std::mt19937_64 rng(6);
  const auto d = yr2_like(200, rng);
  std::vector<TermSpec> terms;
  for (auto name : {"Z1", "Z2", "Z3", "Z4"}) terms.push_back(TermSpec::smooth(name));
  const auto m = fit_additive(d, terms);
  const double scale = sd_of(d.response_values());
  for (std::size_t j = 0; j < m.terms.size(); ++j) {
    const auto& c = d.candidate(m.terms[j].spec.covariate);
    const Eigen::VectorXd own = m.terms[j].contribution(c);
    std::vector<double> partial(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) partial[i] = m.residuals[i] + own[static_cast<Eigen::Index>(i)];
    const auto refit = fit_smooth(c.data(), partial, 8.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i)
      worst = std::max(worst, std::abs(refit(c.value(i)) - own[static_cast<Eigen::Index>(i)]));
    EXPECT_LT(worst, 1e-5 * scale) << m.terms[j].spec.covariate;
  }
}

TEST(FitAdditive, DevianceExplainedGrowsWithNestedTerms) {
  std::mt19937_64 rng(7);
  const auto d = yr2_like(150, rng);
  std::vector<TermSpec> terms;
  double last = 0.0;
  for (auto name : {"Z1", "Z2", "Z3", "Z4"}) {
    terms.push_back(TermSpec::linear(name));
    const double de = fit_additive(d, terms).deviance_explained;
    EXPECT_GE(de, last - 1e-12);
    EXPECT_LE(de, 1.0);
    last = de;
  }
}

TEST(FitAdditive, ConstantCovariateIsDroppedWithFlag) {
  std::mt19937_64 rng(8);
  auto z = normals(40, 1.0, rng), y = normals(40, 1.0, rng);
  Dataset d(Covariate::scalar("Y", y), {Covariate::scalar("Z", z), Covariate::scalar("K", std::vector<double>(40, 3.0)),
                                        Covariate::scalar("Zc", z)});
  const auto m = fit_additive(d, {TermSpec::linear("Z"), TermSpec::linear("K"), TermSpec::linear("Zc")});
  EXPECT_FALSE(m.terms[0].dropped);
  EXPECT_TRUE(m.terms[1].dropped);
  EXPECT_TRUE(m.terms[2].dropped);
  EXPECT_EQ(m.edf, 2.0);
  EXPECT_EQ(m.flags.size(), 2u);
}

TEST(FitAdditive, LogitFittedValuesStayInsideUnitInterval) {
  std::mt19937_64 rng(9);
  const std::size_t n = 300;
  auto x = uniforms(n, -1, 1, rng), noise = uniforms(n, -1, 1, rng);
  std::vector<std::size_t> codes(n);
  std::uniform_real_distribution<double> u;
  for (std::size_t i = 0; i < n; ++i) codes[i] = u(rng) < 1.0 / (1.0 + std::exp(-4 * x[i] * x[i] + 1)) ? 1 : 0;
  Dataset d(Covariate::categorical("G", codes, {"no", "yes"}),
            {Covariate::scalar("X", x), Covariate::scalar("N", noise)});
  const auto m = fit_additive(d, {TermSpec::smooth("X"), TermSpec::linear("N")}, Link::logit);
  for (double p : m.fitted) {
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
  EXPECT_TRUE(m.converged);
  EXPECT_GT(m.deviance_explained, 0.05);
  const auto lin = fit_additive(d, {TermSpec::linear("X"), TermSpec::linear("N")}, Link::logit);
  EXPECT_TRUE(compare_models(lin, m).accept_full);
  // residuals are response minus probability
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(m.residuals[i], m.response[i] - m.fitted[i], 1e-15);
}

TEST(FitAdditive, LogitSeparableCrownIsClassified) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> x1, x2;
  std::vector<std::size_t> codes;
  while (x1.size() < 1000) {
    const double a = u(rng), b = u(rng), r = std::hypot(a, b);
    if (r < 0.6 || r > 1.0) continue;
    x1.push_back(a);
    x2.push_back(b);
    codes.push_back(r > 0.8 ? 1 : 0);
  }
  Dataset d(Covariate::categorical("G", codes, {"inner", "outer"}),
            {Covariate::scalar("X1", x1), Covariate::scalar("X2", x2)});
  const auto m = fit_additive(d, {TermSpec::smooth("X1"), TermSpec::smooth("X2")}, Link::logit);
  EXPECT_LT(misclassification_rate(m.response, m.fitted), 0.03);
}

TEST(FitAdditive, LogitStepHalvingKeepsFrozenSmoothFromDiverging) {
  // A nearly interpolating frozen smooth plus a free one pushes the working
  // weights to their floor; without step-halving the deviance explodes.
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> x1, x2, noise;
  std::vector<std::size_t> codes;
  while (x1.size() < 1000) {
    const double a = u(rng), b = u(rng), r = std::hypot(a, b);
    if (r < 0.6 || r > 1.0) continue;
    x1.push_back(a);
    x2.push_back(b);
    noise.push_back(u(rng));
    codes.push_back(r > 0.8 ? 1 : 0);
  }
  Dataset d(Covariate::categorical("G", codes, {"inner", "outer"}),
            {Covariate::scalar("X1", x1), Covariate::scalar("X2", x2), Covariate::scalar("N", noise)});
  const auto alone = fit_additive(d, {TermSpec::smooth("X2")}, Link::logit);
  auto frozen = TermSpec::smooth("X2");
  frozen.smoothing = {alone.terms[0].smooths[0]->lambda};
  const auto m = fit_additive(d, {frozen, TermSpec::smooth("X1"), TermSpec::linear("N")}, Link::logit);
  EXPECT_LT(m.deviance, alone.deviance);
  EXPECT_LT(misclassification_rate(m.response, m.fitted), 0.03);
  // The halved components still reproduce the linear predictor.
  const auto again = m.predict_link(d);
  for (std::size_t i = 0; i < again.size(); ++i) EXPECT_NEAR(again[i], m.linear_predictor[i], 1e-9);
}

TEST(FitAdditive, RejectsInvalidTerms) {
  std::mt19937_64 rng(11);
  auto z = normals(40, 1.0, rng);
  Dataset d(Covariate::scalar("Y", z), {Covariate::scalar("Z", z)});
  EXPECT_THROW(fit_additive(d, {TermSpec::linear("Z"), TermSpec::smooth("Z")}), std::invalid_argument);
  EXPECT_THROW(fit_additive(d, {TermSpec::dummy_set("Z")}), std::invalid_argument);
  EXPECT_THROW(fit_additive(d, {TermSpec::smooth("Z", 1.0)}), std::invalid_argument);
  EXPECT_THROW(fit_additive(d, {TermSpec::smooth("Z", 11.0)}), std::invalid_argument);
  EXPECT_THROW(fit_additive(d, {}, Link::logit), std::invalid_argument);
  EXPECT_THROW(fit_additive(d, {TermSpec::linear("missing")}), StructuralError);
}

TEST(CompareModels, SameModelIsDegenerate) {
  std::mt19937_64 rng(12);
  const auto d = yr2_like(100, rng);
  const auto m = fit_additive(d, {TermSpec::linear("Z1")});
  const auto c = compare_models(m, m);
  EXPECT_FALSE(c.accept_full);
  EXPECT_TRUE(c.degenerate);
}

TEST(CompareModels, NoiseTermLevelStudy) {
  int accepted = 0;
  for (int rep = 0; rep < 200; ++rep) {
    std::mt19937_64 rng(1000 + rep);
    const std::size_t n = 100;
    auto z = normals(n, 1.0, rng), noise = normals(n, 1.0, rng), e = normals(n, 1.0, rng);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = z[i] + e[i];
    Dataset d(Covariate::scalar("Y", y), {Covariate::scalar("Z", z), Covariate::scalar("N", noise)});
    const auto r = fit_additive(d, {TermSpec::linear("Z")});
    const auto f = fit_additive(d, {TermSpec::linear("Z"), TermSpec::linear("N")});
    accepted += compare_models(r, f).accept_full;
  }
  EXPECT_GE(accepted / 200.0, 0.02);
  EXPECT_LE(accepted / 200.0, 0.09);
}

TEST(CompareModels, QuadraticTermPowerStudy) {
  int accepted = 0;
  for (int rep = 0; rep < 100; ++rep) {
    std::mt19937_64 rng(2000 + rep);
    const std::size_t n = 100;
    auto z1 = normals(n, 1.4, rng), z2 = uniforms(n, -1.7, 1.7, rng), z3 = normals(n, 0.8, rng);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = std::abs(z1[i]) + z2[i] * z2[i] + z3[i] * z3[i];
    Dataset d(Covariate::scalar("Y", y),
              {Covariate::scalar("Z1", z1), Covariate::scalar("Z2", z2), Covariate::scalar("Z3", z3)});
    const auto r = fit_additive(d, {TermSpec::smooth("Z1"), TermSpec::smooth("Z3")});
    const auto f = fit_additive(d, {TermSpec::smooth("Z1"), TermSpec::smooth("Z3"), TermSpec::smooth("Z2")});
    accepted += compare_models(r, f).accept_full;
  }
  EXPECT_GE(accepted / 100.0, 0.99);
}

TEST(CompareModels, RequiresNesting) {
  std::mt19937_64 rng(13);
  const auto d = yr2_like(60, rng);
  const auto a = fit_additive(d, {TermSpec::linear("Z1")});
  const auto b = fit_additive(d, {TermSpec::linear("Z2")});
  EXPECT_THROW(compare_models(a, b), std::invalid_argument);
}

TEST(ChooseContribution, ExactCopyIsNotAccepted) {
  std::mt19937_64 rng(14);
  auto z = normals(100, 1.0, rng), e = normals(100, 1.0, rng);
  std::vector<double> y(100);
  for (std::size_t i = 0; i < 100; ++i) y[i] = z[i] + e[i];
  Dataset d(Covariate::scalar("Y", y), {Covariate::scalar("Z", z), Covariate::scalar("Zcopy", z)});
  const auto current = fit_additive(d, {TermSpec::linear("Z")});
  const auto choice = choose_contribution(d, current, d.candidate("Zcopy"), Catalog::linear_only);
  EXPECT_FALSE(choice.accepted);
  EXPECT_THROW(choose_contribution(d, current, d.candidate("Z"), Catalog::linear_only), std::invalid_argument);
}

TEST(ChooseContribution, LinearTruthKeepsLinearForm) {
  int linear = 0;
  for (int rep = 0; rep < 200; ++rep) {
    std::mt19937_64 rng(3000 + rep);
    auto z = normals(100, 1.0, rng), e = normals(100, 1.0, rng);
    std::vector<double> y(100);
    for (std::size_t i = 0; i < 100; ++i) y[i] = z[i] + e[i];
    Dataset d(Covariate::scalar("Y", y), {Covariate::scalar("Z", z)});
    const auto choice = choose_contribution(d, fit_additive(d, {}), d.candidate("Z"), Catalog::linear_or_smooth);
    EXPECT_TRUE(choice.accepted);
    linear += choice.spec.form == TermForm::linear;
  }
  EXPECT_GE(linear / 200.0, 0.90);
}

TEST(ChooseContribution, SmoothCatalogWinsOnQuadraticCovariate) {
  std::mt19937_64 rng(15);
  const auto train = yr2_like(100, rng), test = yr2_like(500, rng);
  const auto base_lin = fit_additive(train, {TermSpec::linear("Z1"), TermSpec::linear("Z2"), TermSpec::linear("Z4")});
  const auto base_am = fit_additive(train, {TermSpec::smooth("Z1", 8), TermSpec::smooth("Z2", 8), TermSpec::linear("Z4")});
  const auto lm = choose_contribution(train, base_lin, train.candidate("Z3"), Catalog::linear_only);
  const auto am = choose_contribution(train, base_am, train.candidate("Z3"), Catalog::linear_or_smooth);
  EXPECT_EQ(am.spec.form, TermForm::smooth);
  const double r_lm = rmspe(test.response_values(), lm.best.predict(test));
  const double r_am = rmspe(test.response_values(), am.best.predict(test));
  EXPECT_LT(r_am, r_lm);
  EXPECT_LT(r_am, 0.15);
}

TEST(ChooseContribution, CategoricalAndFunctionalForms) {
  std::mt19937_64 rng(16);
  const std::size_t n = 120, t = 21;
  std::vector<double> grid(t);
  for (std::size_t k = 0; k < t; ++k) grid[k] = static_cast<double>(k) / (t - 1);
  auto curves = oracle::ou_paths(n, t, rng);
  std::vector<std::size_t> codes(n);
  auto e = normals(n, 0.3, rng);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    codes[i] = i % 3;
    y[i] = curves[i * t + t / 2] + static_cast<double>(codes[i]) + e[i];
  }
  Dataset d(Covariate::scalar("Y", y), {Covariate::functional("F", grid, curves),
                                        Covariate::categorical("G", codes, {"a", "b", "c"})});
  const auto null = fit_additive(d, {});
  const auto g = choose_contribution(d, null, d.candidate("G"), Catalog::linear_or_smooth);
  EXPECT_EQ(g.spec.form, TermForm::dummy_set);
  EXPECT_FALSE(g.form_test.has_value());
  EXPECT_TRUE(g.accepted);
  const auto f = choose_contribution(d, g.best, d.candidate("F"), Catalog::linear_or_smooth);
  EXPECT_EQ(f.spec.form, TermForm::fpca_scores);
  EXPECT_EQ(f.spec.fpca_k, 4u);
  EXPECT_TRUE(f.accepted);
  EXPECT_TRUE(f.form_test.has_value());
  // prediction on new curves goes through the training basis
  const auto pred = f.best.predict(d);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(pred[i], f.best.fitted[i], 1e-10);
}
