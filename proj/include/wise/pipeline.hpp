#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wise/corpus.hpp"
#include "wise/rationale.hpp"
#include "wise/salience.hpp"
#include "wise/supervisors.hpp"

namespace wise {

namespace fs = std::filesystem;

// Creates `dir`, refusing a non-empty existing directory unless `overwrite`.
void prepare_output_dir(const fs::path& dir, bool overwrite);

struct SynthOptions {
  SyntheticConfig config;
  fs::path out_dir;
  std::size_t count = 1;  // > 1 writes seed_<seed> subdirectories for consecutive seeds
  bool embeddings = false;
  bool overwrite = false;
};

// Writes bank.jsonl, manifest.jsonl, scores.wmat, gt_annotations.wmat and,
// with `embeddings`, image_embeddings.wmat / concept_embeddings.wmat.
// Returns the dataset directories written.
std::vector<fs::path> run_synth(const SynthOptions& options);

enum class AnnotationMode { scored, ground_truth };

struct AnnotateOptions {
  fs::path bank;
  fs::path manifest;
  std::optional<fs::path> scores;
  std::optional<fs::path> image_embeddings;
  std::optional<fs::path> concept_embeddings;
  std::optional<fs::path> ground_truth;
  AnnotationMode mode = AnnotationMode::scored;
  ProbeHyper probe;
  CalibrationOptions calibration;
  fs::path out_dir;
  bool overwrite = false;
};

struct AnnotateSummary {
  std::size_t instances = 0;
  std::size_t concepts = 0;
  std::size_t positives_before = 0;
  std::size_t positives_after = 0;
  std::vector<ConceptId> uncalibratable;
  bool calibrated = false;
  std::optional<ProbeFit> probe_fit;
  std::vector<std::string> warnings;
};

// Writes (scored mode) scores.wmat when computed from embeddings, probe.jsonl,
// raw_annotations.wmat; (both modes) calibration.jsonl, probabilities.wmat and
// the refined annotations.wmat.
AnnotateSummary run_annotate(const AnnotateOptions& options);

struct PriorsOptions {
  fs::path bank;
  fs::path manifest;
  fs::path annotations;
  std::optional<fs::path> probabilities;
  fs::path out_dir;
  std::size_t workers = 1;
  bool overwrite = false;
};

struct PriorsSummary {
  std::vector<std::string> warnings;
};

// Writes prior.wmat and prior_paths.jsonl.
PriorsSummary run_priors(const PriorsOptions& options);

enum class RecordSplit { train, test, all };

struct GenerateOptions {
  fs::path bank;
  fs::path manifest;
  fs::path annotations;
  std::optional<fs::path> probabilities;
  std::optional<fs::path> templates;
  std::optional<fs::path> ground_truth;  // for Pos/Neg precision in the statistics
  Variant variant = Variant::wise;
  std::optional<std::uint64_t> seed;
  RecordSplit split = RecordSplit::train;
  bool negative_qa = false;
  std::string dataset_name = "dataset";
  std::size_t workers = 1;
  fs::path out_dir;
  bool overwrite = false;
};

struct GenerateSummary {
  std::size_t records = 0;
  std::size_t complete = 0;
  std::size_t bank_insufficient = 0;
  std::size_t vacuous = 0;
  std::size_t qa_records = 0;
  MCoTStats stats;
  std::vector<std::string> warnings;
};

// Writes prior.wmat, prior_paths.jsonl, mcot.jsonl, concept_qa.jsonl,
// audit.jsonl, stats.json and stats.txt.
GenerateSummary run_generate(const GenerateOptions& options);

struct EvaluateOptions {
  fs::path bank;
  fs::path manifest;
  fs::path annotations;
  std::optional<fs::path> scores;
  std::optional<fs::path> probe;
  std::optional<fs::path> probabilities;
  std::optional<fs::path> ground_truth;
  std::optional<fs::path> rationales;
  ProbeHyper probe_hyper;
  PathAveraging dt_averaging = PathAveraging::pooled;
  bool nbc_on_probabilities = false;
  std::optional<fs::path> out_dir;
  bool overwrite = false;
};

struct EvaluateSummary {
  std::vector<SupervisorReport> reports;
  std::optional<double> rationale_interpretability;
  std::size_t rationale_count = 0;
  std::size_t unmatched_clauses = 0;
  std::optional<MCoTStats> rationale_stats;
};

// With out_dir, writes report.txt and report.jsonl.
EvaluateSummary run_evaluate(const EvaluateOptions& options);

std::string format_report_rows(const EvaluateSummary& summary);

}  // namespace wise
