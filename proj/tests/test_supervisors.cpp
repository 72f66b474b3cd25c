#include "doctest.h"
#include "fixtures.hpp"
#include "wise/supervisors.hpp"

using namespace wise;

TEST_CASE("evaluation rows fall back to train when there is no test split") {
  const auto tri = generate_synthetic(tri_config());
  std::string split;
  CHECK(evaluation_rows(tri.manifest, &split).size() == 30);
  CHECK(split == "train");
  auto c = tri_config();
  c.test_per_class = 2;
  const auto d = generate_synthetic(c);
  CHECK(evaluation_rows(d.manifest, &split).size() == 6);
  CHECK(split == "test");
}

TEST_CASE("TRI: all weak supervisors reach 100 accuracy, DT interpretability 100") {
  const auto tri = generate_synthetic(tri_config());
  const auto probe = train_probe(tri.scores, tri.manifest).probe;
  const auto cbm = eval_cbm(probe, tri.scores, tri.manifest, &tri.annotations);
  const auto dt = eval_dt(tri.annotations, tri.manifest, &tri.annotations);
  const auto nbc = eval_nbc(tri.annotations, tri.manifest, &tri.annotations);
  CHECK(cbm.accuracy == 100.0);
  CHECK(dt.accuracy == 100.0);
  CHECK(nbc.accuracy == 100.0);
  CHECK(dt.interpretability == std::optional<double>(100.0));
  for (const auto& r : {cbm, dt, nbc}) {
    REQUIRE(r.interpretability.has_value());
    CHECK(*r.interpretability >= 0.0);
    CHECK(*r.interpretability <= 100.0);
  }
}

TEST_CASE("without ground truth interpretability is absent") {
  const auto tri = generate_synthetic(tri_config());
  CHECK_FALSE(eval_dt(tri.annotations, tri.manifest, nullptr).interpretability.has_value());
  CHECK_FALSE(eval_nbc(tri.annotations, tri.manifest, nullptr).interpretability.has_value());
}

TEST_CASE("a zero-weight probe scores the ground-truth negative rate") {
  const auto tri = generate_synthetic(tri_config());
  Probe p;
  p.weights = Matrix<double>(3, 4, 0.0);
  p.biases = {0, 0, 0};
  const auto r = eval_cbm(p, tri.scores, tri.manifest, &tri.annotations);
  // Half of the TRI entries are negative.
  CHECK(r.interpretability == std::optional<double>(50.0));
}

TEST_CASE("DT interpretability is 100 whenever annotations equal ground truth") {
  SyntheticConfig c;
  c.n_classes = 5;
  c.n_concepts = 9;
  c.noise_rate = 0.2;
  c.seed = 12;
  const auto d = generate_synthetic(c);
  CHECK(eval_dt(d.annotations, d.manifest, &d.annotations).interpretability == std::optional<double>(100.0));
  CHECK(eval_dt(d.annotations, d.manifest, &d.annotations, PathAveraging::per_instance).interpretability ==
        std::optional<double>(100.0));
}

TEST_CASE("both DT averaging modes count a wrong path concept") {
  // Classes {c0}, {c1} and {}; ground truth disagrees on c0 for one class-2 row.
  const auto m = fixture::manifest_for({0, 0, 1, 1, 2, 2}, 3);
  const auto z = fixture::matrix_from_rows({{1, 0}, {1, 0}, {0, 1}, {0, 1}, {0, 0}, {0, 0}});
  auto gt = z;
  gt(4, 0) = 1;
  const auto pooled = eval_dt(z, m, &gt, PathAveraging::pooled);
  const auto per = eval_dt(z, m, &gt, PathAveraging::per_instance);
  REQUIRE(pooled.interpretability.has_value());
  REQUIRE(per.interpretability.has_value());
  CHECK(*pooled.interpretability < 100.0);
  CHECK(*per.interpretability < 100.0);
}

TEST_CASE("NBC: identical conditionals give a zero log-ratio, counted as negative") {
  // c1 has the same rate in both classes; c0 separates them.
  const auto m = fixture::manifest_for({0, 0, 1, 1}, 2);
  const auto z = fixture::matrix_from_rows({{1, 1}, {1, 0}, {0, 1}, {0, 0}});
  auto gt = z;
  for (std::size_t i = 0; i < 4; ++i) gt(i, 1) = 0;
  const auto r = eval_nbc(z, m, &gt);
  CHECK(r.accuracy == 100.0);
  // c0 polarity follows the predicted class and matches; c1 is always negative and matches gt.
  CHECK(r.interpretability == std::optional<double>(100.0));
}

TEST_CASE("NBC accepts soft probabilities") {
  const auto tri = generate_synthetic(tri_config());
  const auto r = eval_nbc(fixture::as_real(tri.annotations), tri.manifest, nullptr);
  CHECK(r.accuracy == 100.0);
}

TEST_CASE("interpretability of extracted steps") {
  const auto gt = fixture::matrix_from_rows({{1, 0, 0}});
  const std::vector<ScoredRationale> both_right{{0, {{0, Polarity::positive, {}}, {2, Polarity::negative, {}}}, 0}};
  CHECK(interpretability(both_right, gt) == std::optional<double>(100.0));
  const std::vector<ScoredRationale> one_wrong{{0, {{0, Polarity::positive, {}}, {1, Polarity::positive, {}}}, 0}};
  CHECK(interpretability(one_wrong, gt) == std::optional<double>(50.0));
  const std::vector<ScoredRationale> unmatched{{0, {{0, Polarity::positive, {}}}, 1}};
  CHECK(interpretability(unmatched, gt) == std::optional<double>(50.0));
  CHECK_FALSE(interpretability(std::vector<ScoredRationale>{{0, {}, 0}}, gt).has_value());
}

TEST_CASE("mcot statistics") {
  const auto gt = fixture::matrix_from_rows({{1, 0, 0}, {0, 1, 0}});
  SUBCASE("single positive step") {
    const std::vector<ScoredRationale> r{{0, {{0, Polarity::positive, {}}}, 0}};
    const auto s = mcot_stats(r, &gt, 3);
    CHECK(s.pos_precision == std::optional<double>(100.0));
    CHECK_FALSE(s.neg_precision.has_value());
    CHECK(s.in_cot == 1.0);
    CHECK(s.x_cot == 1);
    CHECK(s.bank == 3);
  }
  SUBCASE("x_cot never decreases as records are appended") {
    std::vector<ScoredRationale> r;
    std::size_t last = 0;
    for (std::size_t k = 0; k < 6; ++k) {
      r.push_back({k % 2, {{k % 3, k % 2 ? Polarity::negative : Polarity::positive, {}}}, 0});
      const auto s = mcot_stats(r, &gt, 3);
      CHECK(s.x_cot >= last);
      last = s.x_cot;
    }
  }
}

TEST_CASE("TRI pipeline statistics by enumeration") {
  // Typical A -> [+c2], B -> [+c1,+c3], C -> [+c4]: 40 steps over 30 records.
  const auto tri = generate_synthetic(tri_config());
  const auto prior = compute_prior(fixture::as_real(tri.annotations), tri.manifest);
  const auto trees = build_prior_trees(prior, tri.annotations, tri.manifest);
  const GenerationContext ctx{tri.bank, tri.manifest, tri.annotations, prior, trees, {}};
  const auto g = generate_records(ctx, tri.manifest.train_indices(), Variant::wise);
  const auto s = mcot_stats(to_scored(g.records), &tri.annotations, 4);
  CHECK(s.in_cot == doctest::Approx(4.0 / 3.0));
  CHECK(s.x_cot == 4);
  CHECK(s.bank == 4);
  CHECK(s.pos_precision == std::optional<double>(100.0));
  CHECK(interpretability(to_scored(g.records), tri.annotations) == std::optional<double>(100.0));
}

TEST_CASE("percent formatting") {
  CHECK(format_percent(std::nullopt) == "-");
  CHECK(format_percent(87.794) == "87.79");
  const auto table = format_stats_table(MCoTStats{100.0, std::nullopt, 2.0, 4, 4, 30, 0}, "TRI");
  CHECK(table.find("TRI") != std::string::npos);
}
