#include <cmath>
#include <fstream>

#include "doctest.h"
#include "minnet/evaluation.hpp"
#include "test_util.hpp"

using namespace minnet;

namespace {

PredictionSet preds(std::vector<int> p, int q = 100) { return {"m", q, std::move(p)}; }

ModelSpec tiny_min_spec(uint64_t seed) {
  ModelSpec spec;
  spec.family = Family::pyramid_resnet;
  spec.n = 1;
  spec.alpha = 3;
  spec.base_channels = 4;
  spec.min_substitution = true;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_SUITE_BEGIN("evaluation");

TEST_CASE("pocp counts changed predictions") {
  CHECK(pocp(preds({1, 2, 3}), preds({1, 2, 3})) == 0.0);
  CHECK(pocp(preds({0, 1, 2, 3}), preds({0, 2, 2, 3})) == doctest::Approx(0.25));
  CHECK(pocp(preds({1, 1}), preds({2, 2})) == 1.0);
  CHECK_THROWS_AS(pocp(preds({1}), preds({1, 2})), std::invalid_argument);
}

TEST_CASE("pocp is symmetric and matches a brute-force recount") {
  Rng rng(55);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = rng.uniform_int(1, 40);
    std::vector<int> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a[i] = rng.uniform_int(0, 9);
      b[i] = rng.uniform_int(0, 9);
    }
    int changed = 0;
    for (int i = 0; i < n; ++i) changed += a[i] != b[i] ? 1 : 0;
    const double expected = static_cast<double>(changed) / n;
    CHECK(pocp(preds(a), preds(b)) == doctest::Approx(expected));
    CHECK(pocp(preds(b), preds(a)) == doctest::Approx(expected));
  }
}

TEST_CASE("record/image conversion round trips") {
  auto recs = synthetic_dataset(3, 3, 17);
  for (const auto& rec : recs) {
    auto img = record_to_image(rec);
    CHECK(image_to_record(img, rec.label) == rec);
  }
}

TEST_CASE("build_sq basics and cache behaviour") {
  auto ds = testutil::test_corpus(1, 12);
  const auto& test = ds.test;

  SUBCASE("Q=100 returns the input set untouched") {
    auto sq = build_sq(test, 100);
    CHECK(sq == test);
  }
  SUBCASE("size and labels are preserved") {
    auto sq = build_sq(test, 30);
    REQUIRE(sq.size() == test.size());
    for (size_t i = 0; i < sq.size(); ++i) CHECK(sq[i].label == test[i].label);
    CHECK(sq != test);
  }
  SUBCASE("second call hits the cache and returns identical bytes") {
    testutil::TempDir tmp;
    bool hit = true;
    auto first = build_sq(test, 40, tmp.str(), &hit);
    CHECK_FALSE(hit);
    auto second = build_sq(test, 40, tmp.str(), &hit);
    CHECK(hit);
    CHECK(first == second);
    // uncached path agrees too
    CHECK(build_sq(test, 40) == first);
  }
}

TEST_CASE("constant-logit model changes no predictions at any quality") {
  Model m = build(tiny_min_spec(21));
  // zero the classifier head: logits become constant, argmax always class 0
  for (auto& p : m.params().items())
    if (p.name == "fc.w" || p.name == "fc.b")
      std::fill(p.tensor.values().begin(), p.tensor.values().end(), 0.0f);
  auto ds = testutil::test_corpus(32, 16);
  auto stats = compute_channel_stats(ds.train);
  const int qualities[] = {100, 90, 50, 10};
  auto rows = error_vs_q(m, ds.test, stats, qualities, 8);
  REQUIRE(rows.size() == 4);
  for (const auto& row : rows) CHECK(row.pocp == 0.0);
  CHECK(rows[0].quality == 100);
  CHECK(rows[0].pocp == 0.0);
}

TEST_CASE("hyperselectivity probe: orthogonal filter pair") {
  // v and g orthogonal unit vectors; gamma = pi/2
  std::vector<double> v = {1, 0, 0, 0, 0, 0, 0, 0, 0};
  std::vector<double> g = {0, 1, 0, 0, 0, 0, 0, 0, 0};
  const double eps[] = {0.1};
  auto rep = hyperselectivity_probe(v, g, ProbeStats{}, eps);
  CHECK_FALSE(rep.degenerate);
  CHECK(rep.angle == doctest::Approx(M_PI / 2).epsilon(1e-12));
  CHECK(rep.response_plus[0] < rep.response_at_opt);
  CHECK(rep.response_minus[0] < rep.response_at_opt);
  // the reference LN neuron is blind to the orthogonal perturbation
  CHECK(std::abs(rep.ln_response_plus[0] - rep.ln_response_at_opt) < 1e-6);
  CHECK(std::abs(rep.ln_response_minus[0] - rep.ln_response_at_opt) < 1e-6);
}

TEST_CASE("hyperselectivity probe: tied filters are degenerate") {
  std::vector<double> v = {0.3, -0.2, 0.5, 0.1, 0, 0, 0.7, 0, 0};
  const double eps[] = {0.1};
  auto rep = hyperselectivity_probe(v, v, ProbeStats{}, eps);
  CHECK(rep.degenerate);
  CHECK(rep.angle == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("probe drop matches the scalar-product oracle at 60 degrees") {
  // construct v, g at exactly 60 degrees inside a random 2-d span
  Rng rng(23);
  std::vector<double> e1(9), e2(9);
  for (auto& x : e1) x = rng.normal();
  double n1 = 0;
  for (double x : e1) n1 += x * x;
  for (auto& x : e1) x /= std::sqrt(n1);
  for (auto& x : e2) x = rng.normal();
  double d = 0;
  for (int i = 0; i < 9; ++i) d += e1[i] * e2[i];
  for (int i = 0; i < 9; ++i) e2[i] -= d * e1[i];
  double n2 = 0;
  for (double x : e2) n2 += x * x;
  for (auto& x : e2) x /= std::sqrt(n2);

  const double gamma = M_PI / 3.0;
  std::vector<double> v(9), g(9);
  for (int i = 0; i < 9; ++i) {
    v[i] = 1.7 * e1[i];  // non-unit scales; the probe normalizes directions
    g[i] = 0.4 * (std::cos(gamma) * e1[i] + std::sin(gamma) * e2[i]);
  }
  const double eps[] = {0.05};
  auto rep = hyperselectivity_probe(v, g, ProbeStats{}, eps);
  CHECK(rep.angle == doctest::Approx(gamma).epsilon(1e-9));

  // direct dot-product oracle: response cos(gamma/2), drop eps*sin(gamma/2)
  const double expected_opt = std::cos(gamma / 2);
  const double expected_drop = 0.05 * std::sin(gamma / 2);
  CHECK(rep.response_at_opt == doctest::Approx(expected_opt).epsilon(1e-9));
  CHECK(rep.response_at_opt - rep.response_plus[0] == doctest::Approx(expected_drop).epsilon(1e-6));
  CHECK(rep.response_at_opt - rep.response_minus[0] ==
        doctest::Approx(expected_drop).epsilon(1e-6));
}

TEST_CASE("probe rejects bad input") {
  std::vector<double> v = {1, 0, 0};
  std::vector<double> zero = {0, 0, 0};
  const double eps[] = {0.1};
  CHECK_THROWS_AS(hyperselectivity_probe(v, zero, ProbeStats{}, eps), std::invalid_argument);
  const double bad_eps[] = {-0.1};
  std::vector<double> g = {0, 1, 0};
  CHECK_THROWS_AS(hyperselectivity_probe(v, g, ProbeStats{}, bad_eps), std::invalid_argument);
}

TEST_CASE("probe_model on a fresh network") {
  Model m = build(tiny_min_spec(31));
  const double eps[] = {0.1};
  auto summary = probe_model(m, "", eps);
  CHECK(summary.reports.size() > 0);
  CHECK(summary.fraction_non_degenerate() >= 0.99);
  // every non-degenerate channel satisfies the strict drop
  CHECK(summary.hyperselective == summary.non_degenerate);

  SUBCASE("selector filters blocks by name prefix") {
    auto one = probe_model(m, "stack1", eps);
    CHECK(one.reports.size() < summary.reports.size());
    CHECK_THROWS_AS(probe_model(m, "stack9", eps), std::runtime_error);
  }
  SUBCASE("tied pairs are fully degenerate") {
    for (auto* blk : m.min_blocks())
      const_cast<Tensor&>(blk->filters_b()).values() = blk->filters_a().values();
    auto tied = probe_model(m, "", eps);
    CHECK(tied.non_degenerate == 0);
    CHECK(tied.fraction_non_degenerate() == 0.0);
  }
}

TEST_CASE("csv writers produce the documented layouts") {
  testutil::TempDir tmp;
  write_robustness_csv(tmp.str("rob.csv"), {{100, 0.1, 0.0}, {90, 0.15, 0.08}});
  std::ifstream rob(tmp.str("rob.csv"));
  std::string line;
  std::getline(rob, line);
  CHECK(line == "q,test_error,pocp");
  std::getline(rob, line);
  CHECK(line == "100,0.100000,0.000000");

  auto recs = synthetic_dataset(2, 2, 3);
  write_predictions_csv(tmp.str("preds.csv"), recs, {1, 0});
  std::ifstream preds_file(tmp.str("preds.csv"));
  std::getline(preds_file, line);
  CHECK(line == "index,label,prediction");
  std::getline(preds_file, line);
  CHECK(line == "0,0," + std::to_string(1));
}

TEST_SUITE_END();
