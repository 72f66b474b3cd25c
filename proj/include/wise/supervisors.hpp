#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wise/corpus.hpp"
#include "wise/matrix.hpp"
#include "wise/rationale.hpp"
#include "wise/salience.hpp"

namespace wise {

struct SupervisorReport {
  std::string method;
  double accuracy = 0.0;  // percent
  std::optional<double> interpretability;  // percent; absent without ground truth
  std::size_t evaluated = 0;
  std::string split;  // "test", or "train" when the manifest has no test instances
};

// Rows supervisors are scored on: the test split, or the train split when
// there are no test instances.
std::vector<std::size_t> evaluation_rows(const DatasetManifest& manifest, std::string* split_name = nullptr);

// Linear probe over concept scores. Interpretability is the agreement between
// the sign rule applied to the predicted class's weights and ground truth,
// pooled over every (instance, concept).
SupervisorReport eval_cbm(const Probe& probe, const ScoreMatrix& scores, const DatasetManifest& manifest,
                          const AnnotationMatrix* ground_truth);

enum class PathAveraging {
  pooled,        // every path concept of every instance weighs the same
  per_instance,  // mean of per-instance path agreement
};

// Multiclass Gini tree over train annotations, all concepts as candidates.
// Interpretability checks the annotations of concepts on each traversed path
// against ground truth.
SupervisorReport eval_dt(const AnnotationMatrix& annotations, const DatasetManifest& manifest,
                         const AnnotationMatrix* ground_truth, PathAveraging averaging = PathAveraging::pooled);

// Bernoulli naive Bayes with additive smoothing. Features in [0, 1] act as
// soft counts. Concept polarity is the sign of log P(c|y_pred) / P(c|y_runner_up),
// with 0 counted as negative.
SupervisorReport eval_nbc(const RealMatrix& features, const DatasetManifest& manifest,
                          const AnnotationMatrix* ground_truth, double alpha = 1.0);
SupervisorReport eval_nbc(const AnnotationMatrix& annotations, const DatasetManifest& manifest,
                          const AnnotationMatrix* ground_truth, double alpha = 1.0);

// Steps of one rationale with unmatched clause count, for scoring.
struct ScoredRationale {
  std::size_t instance = 0;
  std::vector<Step> steps;
  std::size_t unmatched = 0;
};

std::vector<ScoredRationale> to_scored(std::span<const MCoTRecord> records);

// Percentage of step polarities agreeing with ground truth; unmatched clauses
// count as wrong. Absent when there are no steps at all.
std::optional<double> interpretability(std::span<const ScoredRationale> rationales,
                                       const AnnotationMatrix& ground_truth);

struct MCoTStats {
  std::optional<double> pos_precision;
  std::optional<double> neg_precision;
  double in_cot = 0.0;
  std::size_t x_cot = 0;
  std::size_t bank = 0;
  std::size_t records = 0;
  std::size_t incomplete = 0;
};

MCoTStats mcot_stats(std::span<const ScoredRationale> rationales, const AnnotationMatrix* ground_truth,
                     std::size_t bank_size, std::size_t incomplete = 0);

std::string format_percent(std::optional<double> v);
// Methods as columns, acc./intp. as rows.
std::string format_supervisor_table(std::span<const SupervisorReport> reports);
std::string format_stats_table(const MCoTStats& stats, const std::string& dataset);

}  // namespace wise
