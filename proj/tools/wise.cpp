#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "wise/errors.hpp"
#include "wise/pipeline.hpp"

namespace {

namespace fs = std::filesystem;

void warn_all(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

std::optional<fs::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

// Global options plus the active subcommand's options, defaults included.
void write_effective_config(const CLI::App& app, const CLI::App& sub, const fs::path& dir) {
  std::ofstream out(dir / "effective_config.toml", std::ios::trunc);
  out << "threads=" << app.get_option("--threads")->as<std::size_t>() << "\n\n[" << sub.get_name() << "]\n"
      << sub.config_to_str(true, false);
}

template <class Enum>
CLI::Transformer enum_map(const std::map<std::string, Enum>& values) {
  return CLI::Transformer(values, CLI::ignore_case);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concept-grounded rationale generation: annotate, prior trees, instance trees, MCoT datasets"};
  app.set_config("--config", "", "TOML/INI file of option values; command-line flags take precedence");
  app.require_subcommand(1);
  std::size_t threads = 1;
  app.add_option("--threads", threads, "Worker threads for parallel stages")->check(CLI::PositiveNumber)
      ->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset (bank, manifest, scores, ground truth)");
  std::string synth_preset = "random";
  wise::SynthOptions synth_opts;
  std::string synth_out;
  synth->add_option("--preset", synth_preset, "'tri' for the 3-class/4-concept fixture, 'random' otherwise")
      ->check(CLI::IsMember({"tri", "random"}))
      ->capture_default_str();
  synth->add_option("--classes", synth_opts.config.n_classes, "Number of classes")->capture_default_str();
  synth->add_option("--concepts", synth_opts.config.n_concepts, "Number of concepts")->capture_default_str();
  synth->add_option("--per-class", synth_opts.config.per_class, "Train instances per class")->capture_default_str();
  synth->add_option("--test-per-class", synth_opts.config.test_per_class, "Test instances per class")
      ->capture_default_str();
  synth->add_option("--noise", synth_opts.config.noise_rate, "Per-entry pattern flip probability in [0,1)")
      ->capture_default_str();
  synth->add_option("--seed", synth_opts.config.seed, "Generator seed (first seed of a sweep)")->capture_default_str();
  synth->add_option("--count", synth_opts.count, "Datasets to write for consecutive seeds")->capture_default_str();
  synth->add_flag("--embeddings", synth_opts.embeddings, "Also write image and concept embedding matrices");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_flag("--overwrite", synth_opts.overwrite, "Reuse a non-empty output directory");

  // annotate
  auto* annot = app.add_subcommand("annotate", "Train the probe, annotate, calibrate and refine concept labels");
  wise::AnnotateOptions annot_opts;
  std::string a_bank, a_manifest, a_scores, a_images, a_concepts, a_gt, a_out;
  annot->add_option("--bank", a_bank, "Concept bank (JSONL)")->required()->check(CLI::ExistingFile);
  annot->add_option("--manifest", a_manifest, "Dataset manifest (JSONL)")->required()->check(CLI::ExistingFile);
  annot->add_option("--scores", a_scores, "Concept score matrix (WISEMAT1)")->check(CLI::ExistingFile);
  annot->add_option("--images", a_images, "Unit-norm image embeddings (WISEMAT1)")->check(CLI::ExistingFile);
  annot->add_option("--concept-embeddings", a_concepts, "Unit-norm concept embeddings (WISEMAT1)")
      ->check(CLI::ExistingFile);
  annot->add_option("--gt-annotations", a_gt, "Ground-truth binary annotations (WISEMAT1)")->check(CLI::ExistingFile);
  annot->add_option("--mode", annot_opts.mode, "scored | ground_truth_concepts")
      ->transform(enum_map<wise::AnnotationMode>({{"scored", wise::AnnotationMode::scored},
                                                  {"ground_truth_concepts", wise::AnnotationMode::ground_truth}}))
      ->capture_default_str();
  annot->add_option("--probe-l2", annot_opts.probe.l2_strength, "L2 strength on probe weights")->capture_default_str();
  annot->add_option("--probe-lr", annot_opts.probe.learning_rate, "Initial gradient step size")->capture_default_str();
  annot->add_option("--probe-epochs", annot_opts.probe.max_epochs, "Maximum full-batch epochs")->capture_default_str();
  annot->add_option("--probe-tol", annot_opts.probe.tol, "Gradient-norm stopping tolerance")->capture_default_str();
  annot->add_option("--calib-l2", annot_opts.calibration.l2_strength, "L2 strength on the logistic slope")
      ->capture_default_str();
  annot->add_option("--threshold-mode", annot_opts.calibration.mode, "per_concept | global")
      ->transform(enum_map<wise::ThresholdMode>(
          {{"per_concept", wise::ThresholdMode::per_concept}, {"global", wise::ThresholdMode::global}}))
      ->capture_default_str();
  annot->add_option("--out", a_out, "Output directory")->required();
  annot->add_flag("--overwrite", annot_opts.overwrite, "Reuse a non-empty output directory");

  // priors
  auto* priors = app.add_subcommand("priors", "Dump category priors and prior-tree paths");
  wise::PriorsOptions prior_opts;
  std::string p_bank, p_manifest, p_annotations, p_probs, p_out;
  priors->add_option("--bank", p_bank, "Concept bank (JSONL)")->required()->check(CLI::ExistingFile);
  priors->add_option("--manifest", p_manifest, "Dataset manifest (JSONL)")->required()->check(CLI::ExistingFile);
  priors->add_option("--annotations", p_annotations, "Refined annotations (WISEMAT1)")->required()
      ->check(CLI::ExistingFile);
  priors->add_option("--probabilities", p_probs, "Calibrated probabilities (WISEMAT1)")->check(CLI::ExistingFile);
  priors->add_option("--out", p_out, "Output directory")->required();
  priors->add_flag("--overwrite", prior_opts.overwrite, "Reuse a non-empty output directory");

  // generate
  auto* gen = app.add_subcommand("generate", "Build instance trees and write the MCoT instruction dataset");
  wise::GenerateOptions gen_opts;
  std::string g_bank, g_manifest, g_annotations, g_probs, g_templates, g_gt, g_out;
  std::string g_variant = "wise";
  std::optional<std::uint64_t> g_seed;
  bool g_table = false;
  gen->add_option("--bank", g_bank, "Concept bank (JSONL)")->required()->check(CLI::ExistingFile);
  gen->add_option("--manifest", g_manifest, "Dataset manifest (JSONL)")->required()->check(CLI::ExistingFile);
  gen->add_option("--annotations", g_annotations, "Refined annotations (WISEMAT1)")->required()
      ->check(CLI::ExistingFile);
  gen->add_option("--probabilities", g_probs, "Calibrated probabilities (WISEMAT1); defaults to the annotations")
      ->check(CLI::ExistingFile);
  gen->add_option("--templates", g_templates, "Dataset wording (JSON with prompt, subject, task_noun)")
      ->check(CLI::ExistingFile);
  gen->add_option("--gt-annotations", g_gt, "Ground truth for Pos/Neg precision")->check(CLI::ExistingFile);
  gen->add_option("--variant", g_variant, "wise | shuffled | captioning | instance_only | category_only")
      ->capture_default_str();
  gen->add_option("--seed", g_seed, "Seed for stochastic variants");
  gen->add_option("--split", gen_opts.split, "Rows to render: train | test | all")
      ->transform(enum_map<wise::RecordSplit>({{"train", wise::RecordSplit::train},
                                               {"test", wise::RecordSplit::test},
                                               {"all", wise::RecordSplit::all}}))
      ->capture_default_str();
  gen->add_flag("--negative-qa", gen_opts.negative_qa, "Also emit concept QA for absent concepts");
  gen->add_option("--name", gen_opts.dataset_name, "Dataset name used in the statistics table")
      ->capture_default_str();
  gen->add_flag("--table", g_table, "Print the statistics as a table row");
  gen->add_option("--out", g_out, "Output directory")->required();
  gen->add_flag("--overwrite", gen_opts.overwrite, "Reuse a non-empty output directory");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Score the CBM, decision-tree and naive-Bayes weak supervisors");
  wise::EvaluateOptions eval_opts;
  std::string e_bank, e_manifest, e_annotations, e_scores, e_probe, e_probs, e_gt, e_rationales, e_out;
  bool e_table = false;
  eval->add_option("--bank", e_bank, "Concept bank (JSONL)")->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", e_manifest, "Dataset manifest (JSONL)")->required()->check(CLI::ExistingFile);
  eval->add_option("--annotations", e_annotations, "Refined annotations (WISEMAT1)")->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--scores", e_scores, "Concept scores; enables the CBM row")->check(CLI::ExistingFile);
  eval->add_option("--probe", e_probe, "Trained probe (JSONL); trained on the scores when absent")
      ->check(CLI::ExistingFile);
  eval->add_option("--probabilities", e_probs, "Calibrated probabilities (WISEMAT1)")->check(CLI::ExistingFile);
  eval->add_option("--gt-annotations", e_gt, "Ground truth; enables interpretability columns")
      ->check(CLI::ExistingFile);
  eval->add_option("--rationales", e_rationales, "Rationale texts to extract and score (JSONL)")
      ->check(CLI::ExistingFile);
  eval->add_option("--dt-averaging", eval_opts.dt_averaging, "pooled | per_instance")
      ->transform(enum_map<wise::PathAveraging>(
          {{"pooled", wise::PathAveraging::pooled}, {"per_instance", wise::PathAveraging::per_instance}}))
      ->capture_default_str();
  eval->add_flag("--nbc-probabilities", eval_opts.nbc_on_probabilities, "Fit NBC on calibrated probabilities");
  eval->add_flag("--table", e_table, "Print the weak-supervisor table layout");
  eval->add_option("--out", e_out, "Output directory for report files");
  eval->add_flag("--overwrite", eval_opts.overwrite, "Reuse a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (synth->parsed()) {
      if (synth_preset == "tri") {
        // The preset fixes classes, concepts and prototypes; sizes, noise and seed stay overridable.
        auto tri = wise::tri_config();
        if ((synth->count("--classes") && synth_opts.config.n_classes != tri.n_classes) ||
            (synth->count("--concepts") && synth_opts.config.n_concepts != tri.n_concepts)) {
          throw wise::ConfigError("--preset tri fixes --classes and --concepts");
        }
        if (synth->count("--per-class")) tri.per_class = synth_opts.config.per_class;
        if (synth->count("--test-per-class")) tri.test_per_class = synth_opts.config.test_per_class;
        if (synth->count("--noise")) tri.noise_rate = synth_opts.config.noise_rate;
        tri.seed = synth_opts.config.seed;
        synth_opts.config = tri;
      }
      synth_opts.out_dir = synth_out;
      const auto dirs = wise::run_synth(synth_opts);
      write_effective_config(app, *synth, synth_opts.out_dir);
      std::cout << "wrote " << dirs.size() << " dataset(s) under " << synth_out << '\n';
    } else if (annot->parsed()) {
      annot_opts.bank = a_bank;
      annot_opts.manifest = a_manifest;
      annot_opts.scores = opt_path(a_scores);
      annot_opts.image_embeddings = opt_path(a_images);
      annot_opts.concept_embeddings = opt_path(a_concepts);
      annot_opts.ground_truth = opt_path(a_gt);
      annot_opts.calibration.workers = threads;
      annot_opts.out_dir = a_out;
      const auto s = wise::run_annotate(annot_opts);
      write_effective_config(app, *annot, annot_opts.out_dir);
      warn_all(s.warnings);
      std::cout << "annotated " << s.instances << " instances x " << s.concepts << " concepts; positives "
                << s.positives_before << " -> " << s.positives_after << " after refinement\n";
      if (s.probe_fit) {
        std::cout << "probe: " << s.probe_fit->epochs << " epochs, final loss "
                  << s.probe_fit->loss_history.back() << '\n';
      }
    } else if (priors->parsed()) {
      prior_opts.bank = p_bank;
      prior_opts.manifest = p_manifest;
      prior_opts.annotations = p_annotations;
      prior_opts.probabilities = opt_path(p_probs);
      prior_opts.workers = threads;
      prior_opts.out_dir = p_out;
      const auto s = wise::run_priors(prior_opts);
      write_effective_config(app, *priors, prior_opts.out_dir);
      warn_all(s.warnings);
    } else if (gen->parsed()) {
      gen_opts.bank = g_bank;
      gen_opts.manifest = g_manifest;
      gen_opts.annotations = g_annotations;
      gen_opts.probabilities = opt_path(g_probs);
      gen_opts.templates = opt_path(g_templates);
      gen_opts.ground_truth = opt_path(g_gt);
      gen_opts.variant = wise::parse_variant(g_variant);
      gen_opts.seed = g_seed;
      gen_opts.workers = threads;
      gen_opts.out_dir = g_out;
      const auto s = wise::run_generate(gen_opts);
      write_effective_config(app, *gen, gen_opts.out_dir);
      warn_all(s.warnings);
      std::cout << s.records << " records (" << s.complete << " complete, " << s.bank_insufficient
                << " bank-insufficient), " << s.qa_records << " concept QA records\n";
      if (g_table) {
        std::cout << wise::format_stats_table(s.stats, gen_opts.dataset_name);
      } else {
        std::printf("in_cot %.4f  x_cot %zu  bank %zu\n", s.stats.in_cot, s.stats.x_cot, s.stats.bank);
      }
    } else if (eval->parsed()) {
      eval_opts.bank = e_bank;
      eval_opts.manifest = e_manifest;
      eval_opts.annotations = e_annotations;
      eval_opts.scores = opt_path(e_scores);
      eval_opts.probe = opt_path(e_probe);
      eval_opts.probabilities = opt_path(e_probs);
      eval_opts.ground_truth = opt_path(e_gt);
      eval_opts.rationales = opt_path(e_rationales);
      eval_opts.out_dir = opt_path(e_out);
      const auto s = wise::run_evaluate(eval_opts);
      if (eval_opts.out_dir) write_effective_config(app, *eval, *eval_opts.out_dir);
      std::cout << (e_table ? wise::format_supervisor_table(s.reports) : wise::format_report_rows(s));
      if (e_table && s.rationale_count) {
        std::cout << "rationales: " << s.rationale_count << " records, interpretability "
                  << wise::format_percent(s.rationale_interpretability) << '\n';
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
