#include <cstdlib>
#include <map>
#include <sys/wait.h>

#include "doctest.h"
#include "fixtures.hpp"
#include "wise/errors.hpp"
#include "wise/pipeline.hpp"

using namespace wise;
using fixture::TempDir;

namespace {

// Every regular file under `root`, keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = fixture::read_file(e.path());
  }
  return out;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(WISE_CLI_PATH) + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void full_run(const fs::path& root) {
  SynthOptions s;
  s.config = tri_config();
  s.out_dir = root / "synth";
  s.embeddings = true;
  run_synth(s);

  AnnotateOptions a;
  a.bank = root / "synth/bank.jsonl";
  a.manifest = root / "synth/manifest.jsonl";
  a.image_embeddings = root / "synth/image_embeddings.wmat";
  a.concept_embeddings = root / "synth/concept_embeddings.wmat";
  a.out_dir = root / "annotate";
  run_annotate(a);

  GenerateOptions g;
  g.bank = a.bank;
  g.manifest = a.manifest;
  g.annotations = root / "annotate/annotations.wmat";
  g.probabilities = root / "annotate/probabilities.wmat";
  g.ground_truth = root / "synth/gt_annotations.wmat";
  g.variant = Variant::shuffled;
  g.seed = 3;
  g.out_dir = root / "generate";
  run_generate(g);

  EvaluateOptions e;
  e.bank = a.bank;
  e.manifest = a.manifest;
  e.annotations = g.annotations;
  e.scores = root / "annotate/scores.wmat";
  e.probe = root / "annotate/probe.jsonl";
  e.ground_truth = g.ground_truth;
  e.rationales = root / "generate/mcot.jsonl";
  e.out_dir = root / "evaluate";
  run_evaluate(e);
}

}  // namespace

TEST_CASE("synth writes the dataset files and refuses to clobber") {
  TempDir dir("synth");
  SynthOptions s;
  s.config = tri_config();
  s.out_dir = dir / "out";
  run_synth(s);
  for (const char* f : {"bank.jsonl", "manifest.jsonl", "scores.wmat", "gt_annotations.wmat"})
    CHECK(fs::exists(s.out_dir / f));
  CHECK_THROWS_AS(run_synth(s), ConfigError);
  s.overwrite = true;
  CHECK_NOTHROW(run_synth(s));
}

TEST_CASE("synth sweep writes one directory per seed") {
  TempDir dir("sweep");
  SynthOptions s;
  s.config.n_classes = 3;
  s.config.n_concepts = 6;
  s.config.seed = 100;
  s.count = 5;
  s.out_dir = dir / "out";
  const auto dirs = run_synth(s);
  CHECK(dirs.size() == 5);
  CHECK(fs::exists(s.out_dir / "seed_104" / "bank.jsonl"));
}

TEST_CASE("annotate from embeddings reproduces the TRI ground truth") {
  TempDir dir("annotate");
  SynthOptions s;
  s.config = tri_config();
  s.out_dir = dir / "synth";
  s.embeddings = true;
  run_synth(s);
  AnnotateOptions a;
  a.bank = dir / "synth/bank.jsonl";
  a.manifest = dir / "synth/manifest.jsonl";
  a.image_embeddings = dir / "synth/image_embeddings.wmat";
  a.concept_embeddings = dir / "synth/concept_embeddings.wmat";
  a.out_dir = dir / "ann";
  const auto summary = run_annotate(a);
  CHECK(summary.calibrated);
  CHECK(summary.instances == 30);
  for (const char* f : {"scores.wmat", "probe.jsonl", "raw_annotations.wmat", "calibration.jsonl",
                        "probabilities.wmat", "annotations.wmat"})
    CHECK(fs::exists(a.out_dir / f));
  CHECK(load_annotation_matrix(a.out_dir / "annotations.wmat") ==
        load_annotation_matrix(dir / "synth/gt_annotations.wmat"));
}

TEST_CASE("ground-truth mode skips the probe") {
  TempDir dir("gtmode");
  SynthOptions s;
  s.config = tri_config();
  s.out_dir = dir / "synth";
  run_synth(s);
  AnnotateOptions a;
  a.bank = dir / "synth/bank.jsonl";
  a.manifest = dir / "synth/manifest.jsonl";
  a.ground_truth = dir / "synth/gt_annotations.wmat";
  a.mode = AnnotationMode::ground_truth;
  a.out_dir = dir / "ann";
  const auto summary = run_annotate(a);
  CHECK_FALSE(summary.probe_fit.has_value());
  CHECK_FALSE(fs::exists(a.out_dir / "probe.jsonl"));
  CHECK(summary.positives_after == 60);
}

TEST_CASE("generate on TRI writes 30 complete records") {
  TempDir dir("generate");
  SynthOptions s;
  s.config = tri_config();
  s.out_dir = dir / "synth";
  run_synth(s);
  GenerateOptions g;
  g.bank = dir / "synth/bank.jsonl";
  g.manifest = dir / "synth/manifest.jsonl";
  g.annotations = dir / "synth/gt_annotations.wmat";
  g.out_dir = dir / "gen";
  const auto summary = run_generate(g);
  CHECK(summary.records == 30);
  CHECK(summary.complete == 30);
  CHECK(summary.stats.x_cot == 4);
  CHECK(summary.qa_records == 60);
  for (const char* f : {"mcot.jsonl", "concept_qa.jsonl", "audit.jsonl", "stats.json", "stats.txt",
                        "prior_paths.jsonl", "prior.wmat"})
    CHECK(fs::exists(g.out_dir / f));

  g.variant = Variant::shuffled;
  g.out_dir = dir / "gen2";
  CHECK_THROWS_AS(run_generate(g), ConfigError);
  CHECK_FALSE(fs::exists(g.out_dir));
}

TEST_CASE("full run is byte-identical when repeated") {
  TempDir a("det_a"), b("det_b");
  full_run(a.path());
  full_run(b.path());
  const auto sa = snapshot(a.path());
  const auto sb = snapshot(b.path());
  CHECK(sa.size() == sb.size());
  CHECK(sa == sb);
}

TEST_CASE("evaluate reports three supervisors and rationale interpretability") {
  TempDir dir("evaluate");
  full_run(dir.path());
  const auto report = fixture::read_file(dir / "evaluate/report.txt");
  CHECK(report.find("CBM") != std::string::npos);
  CHECK(report.find("DT") != std::string::npos);
  CHECK(report.find("NBC") != std::string::npos);
  CHECK(report.find("rationales") != std::string::npos);
}

TEST_CASE("CLI exit codes") {
  TempDir dir("cli");
  const auto out = dir / "syn";
  CHECK(run_cli("synth --preset tri --out " + out.string(), dir / "log1") == 0);
  CHECK(fs::exists(out / "effective_config.toml"));
  // Missing manifest: usage error.
  CHECK(run_cli("annotate --bank " + (out / "bank.jsonl").string() + " --out " + (dir / "a").string(),
                dir / "log2") != 0);
  CHECK(fixture::read_file(dir / "log2").find("manifest") != std::string::npos);
  // Shuffled without a seed is a configuration error.
  CHECK(run_cli("generate --bank " + (out / "bank.jsonl").string() + " --manifest " +
                    (out / "manifest.jsonl").string() + " --annotations " + (out / "gt_annotations.wmat").string() +
                    " --variant shuffled --out " + (dir / "g").string(),
                dir / "log3") == 1);
  // Infeasible synthetic config.
  CHECK(run_cli("synth --classes 5 --concepts 3 --out " + (dir / "bad").string(), dir / "log4") == 1);
  CHECK(run_cli("generate --help", dir / "log5") == 0);
  // Re-running from the written config reproduces the same files.
  const auto before = fixture::read_file(out / "scores.wmat.bin");
  CHECK(run_cli("--config " + (out / "effective_config.toml").string() + " synth --overwrite", dir / "log6") == 0);
  CHECK(fixture::read_file(out / "scores.wmat.bin") == before);
}

TEST_CASE("CLI flags override the config file") {
  TempDir dir("cli_cfg");
  fixture::write_file(dir / "cfg.toml", "[synth]\nclasses=3\nconcepts=5\nseed=4\nout=\"" +
                                            (dir / "from_file").string() + "\"\n");
  CHECK(run_cli("--config " + (dir / "cfg.toml").string() + " synth --concepts 7", dir / "log") == 0);
  const auto bank = load_concept_bank(dir / "from_file" / "bank.jsonl");
  CHECK(bank.size() == 7);
  const auto cfg = fixture::read_file(dir / "from_file" / "effective_config.toml");
  CHECK(cfg.find("concepts=7") != std::string::npos);
  CHECK(cfg.find("seed=4") != std::string::npos);
}

TEST_CASE("CLI warnings keep exit code 0") {
  TempDir dir("cli_warn");
  // Two classes sharing an annotation vector: generation must warn, not fail.
  const DatasetManifest m({"A", "B"}, {"a", "b"}, {0, 1}, {Split::train, Split::train});
  save_manifest(m, dir / "manifest.jsonl");
  save_concept_bank(synthetic_bank(2), dir / "bank.jsonl");
  save_matrix(AnnotationMatrix(2, 2, std::vector<std::uint8_t>{1, 0, 1, 0}), dir / "ann.wmat");
  CHECK(run_cli("generate --bank " + (dir / "bank.jsonl").string() + " --manifest " +
                    (dir / "manifest.jsonl").string() + " --annotations " + (dir / "ann.wmat").string() + " --out " +
                    (dir / "g").string(),
                dir / "log") == 0);
  CHECK(fixture::read_file(dir / "log").find("warning:") != std::string::npos);
}
