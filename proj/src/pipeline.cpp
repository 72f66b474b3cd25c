#include "wise/pipeline.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "wise/prior.hpp"

namespace wise {

using json = nlohmann::ordered_json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

RealMatrix to_real(const AnnotationMatrix& a) {
  RealMatrix r(a.rows(), a.cols());
  for (std::size_t k = 0; k < a.data().size(); ++k) r.data()[k] = a.data()[k];
  return r;
}

std::size_t count_ones(const AnnotationMatrix& a) {
  std::size_t n = 0;
  for (auto v : a.data()) n += v;
  return n;
}

void check_rows(const char* what, std::size_t rows, const DatasetManifest& manifest) {
  if (rows != manifest.num_instances()) {
    throw ShapeError(std::string(what) + " has " + std::to_string(rows) + " rows but the manifest lists " +
                     std::to_string(manifest.num_instances()) + " instances");
  }
}

json optional_number(std::optional<double> v) { return v ? json(*v) : json(nullptr); }

}  // namespace

void prepare_output_dir(const fs::path& dir, bool overwrite) {
  if (dir.empty()) throw ConfigError("an output directory is required");
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !overwrite) {
      throw ConfigError("output directory " + dir.string() + " is not empty; pass --overwrite to reuse it");
    }
  }
  fs::create_directories(dir);
}

// ---- synth ---------------------------------------------------------------------------

std::vector<fs::path> run_synth(const SynthOptions& options) {
  if (options.count == 0) throw ConfigError("count must be at least 1");
  prepare_output_dir(options.out_dir, options.overwrite);
  std::vector<fs::path> dirs;
  for (std::size_t k = 0; k < options.count; ++k) {
    auto config = options.config;
    config.seed = options.config.seed + k;
    const fs::path dir = options.count == 1 ? options.out_dir
                                            : options.out_dir / ("seed_" + std::to_string(config.seed));
    if (options.count > 1) prepare_output_dir(dir, options.overwrite);
    const auto data = generate_synthetic(config);
    save_concept_bank(data.bank, dir / "bank.jsonl");
    save_manifest(data.manifest, dir / "manifest.jsonl");
    save_matrix(data.scores, dir / "scores.wmat", "score");
    save_matrix(data.annotations, dir / "gt_annotations.wmat", "annotation");
    if (options.embeddings) {
      save_embedding_matrix(data.image_embeddings, dir / "image_embeddings.wmat");
      save_embedding_matrix(data.concept_embeddings, dir / "concept_embeddings.wmat");
    }
    dirs.push_back(dir);
  }
  return dirs;
}

// ---- annotate ------------------------------------------------------------------------

AnnotateSummary run_annotate(const AnnotateOptions& o) {
  const auto bank = load_concept_bank(o.bank);
  const auto manifest = load_manifest(o.manifest);
  prepare_output_dir(o.out_dir, o.overwrite);
  AnnotateSummary summary;
  summary.instances = manifest.num_instances();
  summary.concepts = bank.size();

  std::optional<ScoreMatrix> scores;
  if (o.scores) {
    scores = load_real_matrix(*o.scores, bank.size());
  } else if (o.image_embeddings || o.concept_embeddings) {
    if (!o.image_embeddings || !o.concept_embeddings) {
      throw ConfigError("scoring from embeddings needs both image and concept embeddings");
    }
    const auto images = load_embedding_matrix(*o.image_embeddings);
    const auto concepts = load_embedding_matrix(*o.concept_embeddings);
    if (concepts.rows() != bank.size()) {
      throw ShapeError("concept embeddings have " + std::to_string(concepts.rows()) + " rows for a bank of " +
                       std::to_string(bank.size()));
    }
    scores = compute_concept_scores(images, concepts);
    save_matrix(*scores, o.out_dir / "scores.wmat", "score");
  }
  if (scores) check_rows("score matrix", scores->rows(), manifest);

  AnnotationMatrix raw;
  if (o.mode == AnnotationMode::scored) {
    if (!scores) throw ConfigError("scored mode needs --scores or --images/--concepts embeddings");
    auto fit = train_probe(*scores, manifest, o.probe);
    if (!fit.converged) {
      summary.warnings.push_back("probe stopped at max_epochs before reaching the gradient tolerance");
    }
    save_probe(fit.probe, o.out_dir / "probe.jsonl");
    raw = annotate(*scores, fit.probe, manifest);
    save_matrix(raw, o.out_dir / "raw_annotations.wmat", "annotation");
    summary.probe_fit = std::move(fit);
  } else {
    if (!o.ground_truth) throw ConfigError("ground_truth_concepts mode needs --gt-annotations");
    raw = load_annotation_matrix(*o.ground_truth, bank.size());
    check_rows("ground-truth annotations", raw.rows(), manifest);
  }
  summary.positives_before = count_ones(raw);

  AnnotationMatrix refined;
  ProbabilityMatrix probabilities;
  if (scores) {
    const auto calib = calibrate(*scores, raw, o.calibration, manifest.train_indices());
    refined = refine_annotations(raw, calib);
    probabilities = calib.probabilities;
    summary.uncalibratable = calib.uncalibratable();
    summary.calibrated = true;
    save_calibration(calib, o.out_dir / "calibration.jsonl");
    for (auto m : summary.uncalibratable) {
      summary.warnings.push_back("concept " + std::to_string(m) + " ('" + bank[m].name +
                                 "') has a single label value in the train split; threshold left at 0.5");
    }
  } else {
    refined = raw;
    probabilities = to_real(raw);
    summary.warnings.push_back("no concept scores given; annotations pass through uncalibrated");
  }
  summary.positives_after = count_ones(refined);
  save_matrix(probabilities, o.out_dir / "probabilities.wmat", "probability");
  save_matrix(refined, o.out_dir / "annotations.wmat", "annotation");
  return summary;
}

// ---- priors ---------------------------------------------------------------------------

namespace {

struct PriorInputs {
  ConceptBank bank;
  DatasetManifest manifest;
  AnnotationMatrix annotations;
  ProbabilityMatrix probabilities;
};

PriorInputs load_prior_inputs(const fs::path& bank_path, const fs::path& manifest_path,
                              const fs::path& annotations_path, const std::optional<fs::path>& probabilities_path) {
  PriorInputs in;
  in.bank = load_concept_bank(bank_path);
  in.manifest = load_manifest(manifest_path);
  in.annotations = load_annotation_matrix(annotations_path, in.bank.size());
  check_rows("annotations", in.annotations.rows(), in.manifest);
  if (probabilities_path) {
    in.probabilities = load_real_matrix(*probabilities_path, in.bank.size());
    check_rows("probabilities", in.probabilities.rows(), in.manifest);
  } else {
    in.probabilities = to_real(in.annotations);
  }
  return in;
}

void collect_fallback_warnings(std::span<const PriorTree> trees, const DatasetManifest& manifest,
                               std::vector<std::string>& warnings) {
  for (const auto& t : trees) {
    if (t.used_fallback) {
      warnings.push_back("class " + std::to_string(t.class_id) + " ('" + manifest.class_names()[t.class_id] +
                         "') has no concept with prior > 0.5; used the top-ranked concepts instead");
    }
  }
}

}  // namespace

PriorsSummary run_priors(const PriorsOptions& o) {
  const auto in = load_prior_inputs(o.bank, o.manifest, o.annotations, o.probabilities);
  prepare_output_dir(o.out_dir, o.overwrite);
  const auto prior = compute_prior(in.probabilities, in.manifest);
  const auto trees = build_prior_trees(prior, in.annotations, in.manifest, o.workers);
  save_matrix(prior, o.out_dir / "prior.wmat", "prior");
  save_prior_paths(trees, in.manifest, o.out_dir / "prior_paths.jsonl");
  PriorsSummary summary;
  collect_fallback_warnings(trees, in.manifest, summary.warnings);
  return summary;
}

// ---- generate -------------------------------------------------------------------------

GenerateSummary run_generate(const GenerateOptions& o) {
  if (o.variant == Variant::shuffled && !o.seed) throw ConfigError("variant 'shuffled' requires --seed");
  const auto in = load_prior_inputs(o.bank, o.manifest, o.annotations, o.probabilities);
  const TemplateSet templates = o.templates ? load_template_set(*o.templates) : TemplateSet{};
  std::optional<AnnotationMatrix> gt;
  if (o.ground_truth) {
    gt = load_annotation_matrix(*o.ground_truth, in.bank.size());
    check_rows("ground-truth annotations", gt->rows(), in.manifest);
  }
  // Fail on template problems before any output is written.
  ClauseIndex check(in.bank);
  prepare_output_dir(o.out_dir, o.overwrite);

  GenerateSummary summary;
  const auto prior = compute_prior(in.probabilities, in.manifest);
  const auto trees = build_prior_trees(prior, in.annotations, in.manifest, o.workers);
  save_matrix(prior, o.out_dir / "prior.wmat", "prior");
  save_prior_paths(trees, in.manifest, o.out_dir / "prior_paths.jsonl");
  collect_fallback_warnings(trees, in.manifest, summary.warnings);

  std::vector<std::size_t> rows;
  switch (o.split) {
    case RecordSplit::train: rows = in.manifest.train_indices(); break;
    case RecordSplit::test: rows = in.manifest.test_indices(); break;
    case RecordSplit::all:
      rows.resize(in.manifest.num_instances());
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
      break;
  }

  const GenerationContext ctx{in.bank, in.manifest, in.annotations, prior, trees, templates};
  const auto generated = generate_records(ctx, rows, o.variant, o.seed, o.workers);
  write_instruction_dataset(generated.records, o.variant, o.out_dir / "mcot.jsonl");
  write_audit(generated.records, generated.paths, in.manifest, o.out_dir / "audit.jsonl");
  const auto qa = emit_concept_qa(in.annotations, in.bank, in.manifest, rows, o.negative_qa);
  write_concept_qa(qa, o.out_dir / "concept_qa.jsonl");

  summary.records = generated.records.size();
  summary.qa_records = qa.size();
  for (const auto& r : generated.records) {
    summary.complete += r.complete;
    summary.bank_insufficient += r.bank_insufficient;
    summary.vacuous += r.vacuous;
  }
  if (summary.bank_insufficient) {
    summary.warnings.push_back(std::to_string(summary.bank_insufficient) +
                               " record(s) kept non-zero Gini impurity; the concept bank cannot separate "
                               "their confounding classes");
  }
  if (summary.vacuous) summary.warnings.push_back(std::to_string(summary.vacuous) + " record(s) have no steps");

  const auto scored = to_scored(generated.records);
  summary.stats = mcot_stats(scored, gt ? &*gt : nullptr, in.bank.size(), summary.records - summary.complete);

  json stats;
  stats["dataset"] = o.dataset_name;
  stats["variant"] = variant_name(o.variant);
  stats["records"] = summary.records;
  stats["complete"] = summary.complete;
  stats["bank_insufficient"] = summary.bank_insufficient;
  stats["vacuous"] = summary.vacuous;
  stats["qa_records"] = summary.qa_records;
  stats["pos"] = optional_number(summary.stats.pos_precision);
  stats["neg"] = optional_number(summary.stats.neg_precision);
  stats["in_cot"] = summary.stats.in_cot;
  stats["x_cot"] = summary.stats.x_cot;
  stats["bank"] = summary.stats.bank;
  write_text(o.out_dir / "stats.json", stats.dump(2) + "\n");
  write_text(o.out_dir / "stats.txt", format_stats_table(summary.stats, o.dataset_name));
  return summary;
}

// ---- evaluate -------------------------------------------------------------------------

EvaluateSummary run_evaluate(const EvaluateOptions& o) {
  const auto bank = load_concept_bank(o.bank);
  const auto manifest = load_manifest(o.manifest);
  const auto annotations = load_annotation_matrix(o.annotations, bank.size());
  check_rows("annotations", annotations.rows(), manifest);
  std::optional<AnnotationMatrix> gt;
  if (o.ground_truth) {
    gt = load_annotation_matrix(*o.ground_truth, bank.size());
    check_rows("ground-truth annotations", gt->rows(), manifest);
  }
  const AnnotationMatrix* gt_ptr = gt ? &*gt : nullptr;
  if (o.out_dir) prepare_output_dir(*o.out_dir, o.overwrite);

  EvaluateSummary summary;
  if (o.scores) {
    const auto scores = load_real_matrix(*o.scores, bank.size());
    check_rows("score matrix", scores.rows(), manifest);
    const Probe probe = o.probe ? load_probe(*o.probe) : train_probe(scores, manifest, o.probe_hyper).probe;
    summary.reports.push_back(eval_cbm(probe, scores, manifest, gt_ptr));
  }
  summary.reports.push_back(eval_dt(annotations, manifest, gt_ptr, o.dt_averaging));
  if (o.nbc_on_probabilities) {
    if (!o.probabilities) throw ConfigError("NBC on probabilities needs --probabilities");
    const auto probs = load_real_matrix(*o.probabilities, bank.size());
    check_rows("probabilities", probs.rows(), manifest);
    summary.reports.push_back(eval_nbc(probs, manifest, gt_ptr));
  } else {
    summary.reports.push_back(eval_nbc(annotations, manifest, gt_ptr));
  }

  if (o.rationales) {
    std::map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < manifest.num_instances(); ++i) row_of[manifest.instance_ids()[i]] = i;
    const ClauseIndex index(bank);
    std::vector<ScoredRationale> scored;
    for (const auto& [id, text] : read_rationales(*o.rationales)) {
      const auto it = row_of.find(id);
      if (it == row_of.end()) throw ValidationError("rationale for unknown instance '" + id + "'");
      auto extracted = extract_clauses(text, index);
      summary.unmatched_clauses += extracted.unmatched.size();
      scored.push_back({it->second, std::move(extracted.steps), extracted.unmatched.size()});
    }
    summary.rationale_count = scored.size();
    if (gt) summary.rationale_interpretability = interpretability(scored, *gt);
    summary.rationale_stats = mcot_stats(scored, gt_ptr, bank.size());
  }

  if (o.out_dir) {
    write_text(*o.out_dir / "report.txt", format_report_rows(summary));
    std::ofstream out(*o.out_dir / "report.jsonl", std::ios::trunc);
    for (const auto& r : summary.reports) {
      json j;
      j["method"] = r.method;
      j["split"] = r.split;
      j["evaluated"] = r.evaluated;
      j["accuracy"] = r.accuracy;
      j["interpretability"] = optional_number(r.interpretability);
      out << j.dump() << '\n';
    }
    if (o.rationales) {
      json j;
      j["method"] = "rationales";
      j["records"] = summary.rationale_count;
      j["unmatched_clauses"] = summary.unmatched_clauses;
      j["interpretability"] = optional_number(summary.rationale_interpretability);
      if (summary.rationale_stats) {
        j["pos"] = optional_number(summary.rationale_stats->pos_precision);
        j["neg"] = optional_number(summary.rationale_stats->neg_precision);
        j["in_cot"] = summary.rationale_stats->in_cot;
        j["x_cot"] = summary.rationale_stats->x_cot;
        j["bank"] = summary.rationale_stats->bank;
      }
      out << j.dump() << '\n';
    }
  }
  return summary;
}

std::string format_report_rows(const EvaluateSummary& summary) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-12s%10s%10s%10s%8s\n", "method", "acc.", "intp.", "n", "split");
  out << buf;
  for (const auto& r : summary.reports) {
    std::snprintf(buf, sizeof buf, "%-12s%10s%10s%10zu%8s\n", r.method.c_str(), format_percent(r.accuracy).c_str(),
                  format_percent(r.interpretability).c_str(), r.evaluated, r.split.c_str());
    out << buf;
  }
  if (summary.rationale_count) {
    std::snprintf(buf, sizeof buf, "%-12s%10s%10s%10zu%8s\n", "rationales", "-",
                  format_percent(summary.rationale_interpretability).c_str(), summary.rationale_count, "");
    out << buf;
  }
  return out.str();
}

}  // namespace wise
