// Acceptance suite: one PASS/FAIL/SKIP line per criterion.
// Usage: wise_acceptance [--cub <dir>]   (dir holds bank.jsonl, manifest.jsonl, gt_annotations.wmat)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <numeric>
#include <algorithm>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "wise/instance_trees.hpp"
#include "wise/pipeline.hpp"
#include "wise/prior.hpp"
#include "wise/rationale.hpp"
#include "wise/salience.hpp"
#include "wise/supervisors.hpp"

using namespace wise;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(const char* status, const std::string& name, const std::string& detail) {
  std::printf("[%s] %s: %s\n", status, name.c_str(), detail.c_str());
  std::fflush(stdout);
}

void verdict(bool ok, const std::string& name, const std::string& detail) {
  if (!ok) ++failures;
  report(ok ? "PASS" : "FAIL", name, detail);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Random synthetic config with at most 12 concepts and 200 instances.
SyntheticConfig random_config(std::uint64_t seed, double noise) {
  std::mt19937_64 gen(seed * 7919 + 1);
  SyntheticConfig c;
  c.n_classes = 2 + gen() % 7;
  c.n_concepts = std::max<std::size_t>(c.n_classes, 4 + gen() % 9);
  c.per_class = std::max<std::size_t>(1, std::min<std::size_t>(200 / c.n_classes, 5 + gen() % 25));
  c.noise_rate = noise;
  c.seed = seed;
  c.id_prefix = "s" + std::to_string(seed);
  return c;
}

// ---- 1. tree oracle equivalence -----------------------------------------------------

struct TreeTally {
  std::size_t trees = 0;
  std::size_t agree = 0;
};

void compare(const TreeSamples& s, const std::vector<ConceptId>& candidates, TreeTally& t) {
  ++t.trees;
  if (oracle::same_tree(induce_tree(s, candidates), oracle::induce(s, candidates))) ++t.agree;
}

void trees_of_dataset(const AnnotationMatrix& z, const DatasetManifest& m, TreeTally& t) {
  const std::size_t M = z.cols();
  std::vector<ConceptId> all(M);
  std::iota(all.begin(), all.end(), 0);
  const auto train = m.train_indices();

  TreeSamples multi;
  multi.num_targets = m.num_classes();
  for (auto i : train) multi.add(z.row(i), m.label(i));
  compare(multi, all, t);

  const auto prior = compute_prior(fixture::as_real(z), m);
  std::vector<DecisionPath> paths;
  for (ClassId n = 0; n < m.num_classes(); ++n) {
    TreeSamples ovr;
    for (auto i : train) ovr.add(z.row(i), m.label(i) == n ? 1 : 0);
    compare(ovr, all, t);
    const auto typical = typical_concepts(prior, n);
    if (!typical.empty()) compare(ovr, typical, t);
    paths.push_back(build_prior_tree(prior, z, m, n).path);
  }

  // Affirmation and elimination sample sets, rebuilt from their definitions.
  for (std::size_t k = 0; k < train.size(); k += 3) {
    const auto i = train[k];
    const auto y = m.label(i);
    const auto inst = z.row(i);
    const auto sub = prior_subpath(inst, paths[y]);
    TreeSamples affirm;
    affirm.add(inst, 1);
    for (auto j : retrieve_hard_negatives(z, m, sub, y)) affirm.add(z.row(j), 0);
    std::vector<ConceptId> present, absent;
    for (ConceptId c = 0; c < M; ++c) {
      if (!inst[c]) absent.push_back(c);
      else if (std::find(paths[y].concepts.begin(), paths[y].concepts.end(), c) == paths[y].concepts.end())
        present.push_back(c);
    }
    compare(affirm, present, t);
    TreeSamples elim;
    elim.add(inst, 1);
    for (auto j : train)
      if (m.label(j) != y) elim.add(z.row(j), 0);
    compare(elim, absent, t);
  }
}

void criterion_tree_oracle() {
  const auto t0 = Clock::now();
  TreeTally tally;
  const auto tri = generate_synthetic(tri_config());
  trees_of_dataset(tri.annotations, tri.manifest, tally);
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const auto d = generate_synthetic(random_config(seed, 0.05 + 0.25 * double(seed % 5) / 4.0));
    trees_of_dataset(d.annotations, d.manifest, tally);
  }
  const double elapsed = seconds_since(t0);
  std::ostringstream detail;
  detail << tally.agree << "/" << tally.trees << " trees node-identical to the brute-force inducer over TRI + 50 "
         << "seeded datasets in " << fmt("%.2f", elapsed) << " s (limit 10 s)";
  verdict(tally.agree == tally.trees && elapsed < 10.0, "tree oracle equivalence", detail.str());
}

// ---- 2. completeness and soundness ----------------------------------------------------

struct PipelineRun {
  SyntheticDataset data;
  AnnotationMatrix annotations;
  PriorMatrix prior;
  std::vector<PriorTree> trees;
  GeneratedRecords generated;
};

// Calibrate-and-refine the concept labels, then generate records for every train row.
PipelineRun run_in_memory(const SyntheticConfig& config, Variant variant = Variant::wise,
                          std::optional<std::uint64_t> seed = std::nullopt) {
  PipelineRun r{generate_synthetic(config), {}, {}, {}, {}};
  const auto calib = calibrate(r.data.scores, r.data.annotations, {}, r.data.manifest.train_indices());
  r.annotations = refine_annotations(r.data.annotations, calib);
  r.prior = compute_prior(calib.probabilities, r.data.manifest);
  r.trees = build_prior_trees(r.prior, r.annotations, r.data.manifest);
  const GenerationContext ctx{r.data.bank, r.data.manifest, r.annotations, r.prior, r.trees, {}};
  r.generated = generate_records(ctx, r.data.manifest.train_indices(), variant, seed);
  return r;
}

void criterion_completeness() {
  std::size_t datasets = 0, records = 0, complete = 0;
  bool all_sound = true;
  auto check = [&](const SyntheticConfig& c) {
    const auto r = run_in_memory(c);
    ++datasets;
    for (const auto& rec : r.generated.records) {
      ++records;
      complete += rec.complete;
    }
    const auto intp = interpretability(to_scored(r.generated.records), r.annotations);
    if (intp != std::optional<double>(100.0)) all_sound = false;
  };
  check(tri_config());
  for (std::uint64_t seed = 1; seed <= 50; ++seed) check(random_config(seed, 0.0));
  std::ostringstream detail;
  detail << complete << "/" << records << " records complete over " << datasets
         << " noiseless datasets; interpretability vs own annotations " << (all_sound ? "100" : "< 100")
         << " on every dataset";
  verdict(complete == records && all_sound, "completeness and soundness", detail.str());
}

// ---- 3. TRI golden values ------------------------------------------------------------------

void criterion_tri_golden() {
  const auto r = run_in_memory(tri_config());
  const bool pa = r.trees[0].path.concepts == std::vector<ConceptId>{1};
  const bool pb = r.trees[1].path.concepts == std::vector<ConceptId>{0, 2};

  const auto f = fixture::atypical_tri();
  const auto prior = compute_prior(fixture::as_real(f.annotations), f.manifest);
  const auto trees = build_prior_trees(prior, f.annotations, f.manifest);
  const GenerationContext ctx{f.bank, f.manifest, f.annotations, prior, trees, {}};
  const std::vector<std::size_t> rows{f.atypical_row};
  const auto atypical = generate_records(ctx, rows, Variant::wise).records.front();
  const std::vector<std::pair<ConceptId, Polarity>> expected{{0, Polarity::positive}, {2, Polarity::negative}};
  std::vector<std::pair<ConceptId, Polarity>> got;
  for (const auto& s : atypical.steps) got.emplace_back(s.concept_id, s.polarity);
  const bool atyp = got == expected;

  const auto stats = mcot_stats(to_scored(r.generated.records), &r.data.annotations, r.data.bank.size());
  const bool in_cot = std::abs(stats.in_cot - 2.0) < 1e-9;
  const bool x_cot = stats.x_cot == 4;
  const bool bank = stats.bank == 4;

  std::ostringstream detail;
  detail << "prior path A=[c2] " << (pa ? "ok" : "MISMATCH") << ", B=[c1,c3] " << (pb ? "ok" : "MISMATCH")
         << ", atypical A=[+c1,-c3] " << (atyp ? "ok" : "MISMATCH") << ", in_cot " << fmt("%.4f", stats.in_cot)
         << " (expected 2.0) " << (in_cot ? "ok" : "MISMATCH") << ", x_cot " << stats.x_cot << " "
         << (x_cot ? "ok" : "MISMATCH") << ", bank " << stats.bank << " " << (bank ? "ok" : "MISMATCH");
  verdict(pa && pb && atyp && in_cot && x_cot && bank, "TRI golden values", detail.str());
}

// ---- 4. probe numerics -------------------------------------------------------------------

void criterion_probe() {
  SyntheticConfig c;
  c.n_classes = 4;
  c.n_concepts = 7;
  c.per_class = 8;
  c.noise_rate = 0.2;
  c.seed = 42;
  const auto d = generate_synthetic(c);
  const ProbeObjective f(d.scores, d.manifest.labels(), d.manifest.train_indices(), c.n_classes, 1e-3);
  std::mt19937_64 gen(2024);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0;
  for (int point = 0; point < 8; ++point) {
    std::vector<double> params(f.num_params());
    for (auto& p : params) p = normal(gen);
    std::vector<double> grad(params.size());
    f.gradient(params, grad);
    const auto numeric = oracle::numeric_gradient(f, params);
    double diff = 0, norm = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
      diff += (grad[k] - numeric[k]) * (grad[k] - numeric[k]);
      norm += numeric[k] * numeric[k];
    }
    worst = std::max(worst, std::sqrt(diff) / std::max(std::sqrt(norm), 1e-12));
  }

  bool monotone = true;
  for (double lr : {0.5, 4.0}) {
    ProbeHyper h;
    h.learning_rate = lr;
    const auto fit = train_probe(d.scores, d.manifest, h);
    for (std::size_t k = 1; k < fit.loss_history.size(); ++k)
      if (fit.loss_history[k] > fit.loss_history[k - 1]) monotone = false;
  }

  const auto tri = generate_synthetic(tri_config());
  const auto fit = train_probe(tri.scores, tri.manifest);
  std::size_t correct = 0;
  for (auto i : tri.manifest.train_indices()) correct += fit.probe.predict(tri.scores.row(i)) == tri.manifest.label(i);
  const double acc = 100.0 * double(correct) / double(tri.manifest.train_indices().size());

  std::ostringstream detail;
  detail << "max relative gradient error " << fmt("%.2e", worst) << " at 8 points (limit 1e-4), loss "
         << (monotone ? "monotone non-increasing" : "INCREASED") << ", TRI train accuracy " << fmt("%.2f", acc);
  verdict(worst < 1e-4 && monotone && acc == 100.0, "probe numerics", detail.str());
}

// ---- 5. calibration optimality -------------------------------------------------------------

void criterion_calibration() {
  std::mt19937_64 gen(77);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t rows = 40, cols = 100;
  RealMatrix scores(rows, cols);
  AnnotationMatrix labels(rows, cols);
  for (std::size_t m = 0; m < cols; ++m) {
    const double slope = 1 + 6 * (u(gen) + 1);
    const double shift = 0.5 * u(gen);
    for (std::size_t i = 0; i < rows; ++i) {
      const double s = u(gen);
      scores(i, m) = static_cast<float>(s);
      const double p = 1 / (1 + std::exp(-(slope * (s - shift))));
      labels(i, m) = (u(gen) + 1) / 2 < p ? 1 : 0;
    }
    labels(0, m) = 1;  // keep every column two-valued
    labels(1, m) = 0;
  }
  const auto model = calibrate(scores, labels);
  std::size_t agree = 0;
  for (std::size_t m = 0; m < cols; ++m) {
    std::vector<float> p(rows);
    std::vector<std::uint8_t> y(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      p[i] = model.probabilities(i, m);
      y[i] = labels(i, m);
    }
    agree += model.concepts[m].threshold == oracle::best_threshold(p, y);
  }
  std::ostringstream detail;
  detail << agree << "/" << cols << " thresholds equal the exhaustive macro-F1 argmax";
  verdict(agree == cols, "calibration optimality", detail.str());
}

// ---- 6. weak supervisors ----------------------------------------------------------------------

void criterion_supervisors() {
  const auto tri = generate_synthetic(tri_config());
  const auto probe = train_probe(tri.scores, tri.manifest).probe;
  const auto cbm = eval_cbm(probe, tri.scores, tri.manifest, &tri.annotations);
  const auto dt = eval_dt(tri.annotations, tri.manifest, &tri.annotations);
  const auto nbc = eval_nbc(tri.annotations, tri.manifest, &tri.annotations);
  std::ostringstream detail;
  detail << "accuracy CBM " << format_percent(cbm.accuracy) << ", DT " << format_percent(dt.accuracy) << ", NBC "
         << format_percent(nbc.accuracy) << "; DT interpretability " << format_percent(dt.interpretability);
  verdict(cbm.accuracy == 100.0 && dt.accuracy == 100.0 && nbc.accuracy == 100.0 &&
              dt.interpretability == std::optional<double>(100.0),
          "weak supervisors on TRI", detail.str());
}

// ---- 7. render round-trip ----------------------------------------------------------------------

void criterion_round_trip() {
  std::size_t records = 0, recovered = 0, with_negatives = 0;
  const Variant variants[] = {Variant::wise, Variant::shuffled, Variant::captioning, Variant::instance_only,
                              Variant::category_only};
  for (std::uint64_t seed = 1; records < 1000 || seed <= 10; ++seed) {
    const auto config = random_config(seed, 0.1);
    const auto variant = variants[seed % 5];
    const auto r = run_in_memory(config, variant, seed);
    const ClauseIndex index(r.data.bank);
    for (const auto& rec : r.generated.records) {
      ++records;
      const auto e = extract_clauses(rec.rationale, index);
      recovered += e.steps == rec.steps && e.unmatched.empty() && e.answer == std::optional(rec.answer);
      with_negatives += std::any_of(rec.steps.begin(), rec.steps.end(),
                                    [](const Step& s) { return s.polarity == Polarity::negative; });
    }
  }
  std::ostringstream detail;
  detail << recovered << "/" << records << " records recovered exactly (" << with_negatives
         << " with negative sections)";
  verdict(records >= 1000 && recovered == records && with_negatives > 0, "render round-trip", detail.str());
}

// ---- 8. determinism -------------------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = fixture::read_file(e.path());
  return out;
}

void full_run(const fs::path& root, std::size_t workers) {
  SynthOptions s;
  s.config = random_config(5, 0.1);
  s.config.test_per_class = 3;
  s.out_dir = root / "synth";
  s.embeddings = true;
  run_synth(s);

  AnnotateOptions a;
  a.bank = root / "synth/bank.jsonl";
  a.manifest = root / "synth/manifest.jsonl";
  a.image_embeddings = root / "synth/image_embeddings.wmat";
  a.concept_embeddings = root / "synth/concept_embeddings.wmat";
  a.calibration.workers = workers;
  a.out_dir = root / "annotate";
  run_annotate(a);

  GenerateOptions g;
  g.bank = a.bank;
  g.manifest = a.manifest;
  g.annotations = root / "annotate/annotations.wmat";
  g.probabilities = root / "annotate/probabilities.wmat";
  g.ground_truth = root / "synth/gt_annotations.wmat";
  g.variant = Variant::shuffled;
  g.seed = 11;
  g.workers = workers;
  g.split = RecordSplit::all;
  g.out_dir = root / "generate";
  run_generate(g);

  EvaluateOptions e;
  e.bank = a.bank;
  e.manifest = a.manifest;
  e.annotations = g.annotations;
  e.scores = root / "annotate/scores.wmat";
  e.probe = root / "annotate/probe.jsonl";
  e.probabilities = g.probabilities;
  e.ground_truth = g.ground_truth;
  e.rationales = root / "generate/mcot.jsonl";
  e.out_dir = root / "evaluate";
  run_evaluate(e);
}

void criterion_determinism() {
  fixture::TempDir a("accept_a"), b("accept_b"), c("accept_c");
  full_run(a.path(), 1);
  full_run(b.path(), 1);
  full_run(c.path(), 3);
  const auto sa = snapshot(a.path()), sb = snapshot(b.path()), sc = snapshot(c.path());
  std::ostringstream detail;
  detail << sa.size() << " files from synth -> annotate -> generate -> evaluate; repeat run "
         << (sa == sb ? "byte-identical" : "DIFFERS") << ", 3-worker run " << (sa == sc ? "byte-identical" : "DIFFERS");
  verdict(!sa.empty() && sa == sb && sa == sc, "determinism", detail.str());
}

// ---- 9. optional real data -------------------------------------------------------------------------

void criterion_cub(const std::optional<fs::path>& dir) {
  const std::string name = "real-data ground-truth run";
  if (!dir) {
    report("SKIP", name, "no dataset directory given (pass --cub <dir> with bank.jsonl, manifest.jsonl, "
                         "gt_annotations.wmat)");
    return;
  }
  const auto t0 = Clock::now();
  fixture::TempDir out("accept_cub");
  GenerateOptions g;
  g.bank = *dir / "bank.jsonl";
  g.manifest = *dir / "manifest.jsonl";
  g.annotations = *dir / "gt_annotations.wmat";
  g.ground_truth = g.annotations;
  g.workers = std::max(1u, std::thread::hardware_concurrency());
  g.out_dir = out / "generate";
  const auto s = run_generate(g);
  const double minutes = seconds_since(t0) / 60.0;
  const double ratio = double(s.stats.x_cot) / double(s.stats.bank);
  std::ostringstream detail;
  detail << s.records << " records in " << fmt("%.2f", minutes) << " min (limit 30), mean steps "
         << fmt("%.2f", s.stats.in_cot) << " (target [4, 12]), x_cot/bank " << s.stats.x_cot << "/" << s.stats.bank
         << " = " << fmt("%.3f", ratio) << " (target >= 0.9)";
  verdict(minutes < 30 && s.stats.in_cot >= 4 && s.stats.in_cot <= 12 && ratio >= 0.9, name, detail.str());
}

}  // namespace

int main(int argc, char** argv) {
  std::optional<fs::path> cub;
  for (int k = 1; k < argc; ++k) {
    if (std::string(argv[k]) == "--cub" && k + 1 < argc) cub = fs::path(argv[++k]);
  }
  const std::pair<const char*, void (*)()> criteria[] = {
      {"tree oracle equivalence", criterion_tree_oracle},
      {"completeness and soundness", criterion_completeness},
      {"TRI golden values", criterion_tri_golden},
      {"probe numerics", criterion_probe},
      {"calibration optimality", criterion_calibration},
      {"weak supervisors on TRI", criterion_supervisors},
      {"render round-trip", criterion_round_trip},
      {"determinism", criterion_determinism},
  };
  for (const auto& [name, run] : criteria) {
    try {
      run();
    } catch (const std::exception& e) {
      verdict(false, name, std::string("threw: ") + e.what());
    }
  }
  try {
    criterion_cub(cub);
  } catch (const std::exception& e) {
    verdict(false, "real-data ground-truth run", std::string("threw: ") + e.what());
  }
  std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
