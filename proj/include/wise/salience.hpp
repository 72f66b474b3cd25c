#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "wise/corpus.hpp"
#include "wise/matrix.hpp"

namespace wise {

// s(x_i, c_m) = <image_i, concept_m> for unit-norm rows.
ScoreMatrix compute_concept_scores(const EmbeddingMatrix& images, const EmbeddingMatrix& concepts);

// ---- softmax probe over the concept bottleneck ------------------------------------

struct Probe {
  Matrix<double> weights;  // classes x concepts
  std::vector<double> biases;

  std::size_t num_classes() const { return weights.rows(); }
  std::size_t num_concepts() const { return weights.cols(); }

  std::vector<double> logits(std::span<const float> scores) const;
  ClassId predict(std::span<const float> scores) const;

  bool operator==(const Probe&) const = default;
};

struct ProbeHyper {
  double l2_strength = 1e-3;
  double learning_rate = 0.5;
  std::size_t max_epochs = 5000;
  double tol = 1e-6;
};

// Mean multinomial cross-entropy over the selected rows plus
// (l2/2)·||W||^2 (biases unregularized). Parameters are laid out as the
// row-major weight matrix followed by the bias vector.
class ProbeObjective {
 public:
  ProbeObjective(const ScoreMatrix& scores, std::span<const ClassId> labels, std::vector<std::size_t> rows,
                 std::size_t num_classes, double l2_strength);

  std::size_t num_params() const { return num_classes_ * (scores_->cols() + 1); }
  double loss(std::span<const double> params) const;
  // Writes the gradient into `grad` and returns the loss at `params`.
  double gradient(std::span<const double> params, std::span<double> grad) const;

  Probe unpack(std::span<const double> params) const;

 private:
  const ScoreMatrix* scores_;
  std::span<const ClassId> labels_;
  std::vector<std::size_t> rows_;
  std::size_t num_classes_;
  double l2_;
};

struct ProbeFit {
  Probe probe;
  // Loss after every accepted step, starting with the loss at zero init.
  std::vector<double> loss_history;
  std::size_t epochs = 0;
  std::size_t rejected_steps = 0;
  bool converged = false;
};

// Full-batch gradient descent from zero over the train split. A step that
// would raise the loss is rejected and the step size halved; a non-finite
// loss raises DivergenceError.
ProbeFit train_probe(const ScoreMatrix& scores, const DatasetManifest& manifest, const ProbeHyper& hyper = {});

void save_probe(const Probe& probe, const std::filesystem::path& path);
Probe load_probe(const std::filesystem::path& path);

// Sign rule: z[i][m] = 1 iff s(x_i, c_m) · w_{y_i}[m] > 0.
AnnotationMatrix annotate(const ScoreMatrix& scores, const Probe& probe, const DatasetManifest& manifest);

// ---- per-concept calibration ----------------------------------------------------

enum class ThresholdMode {
  per_concept,  // each concept maximizes macro F1 over its {positive, negative} labels
  global,       // one shared threshold maximizing the mean positive-class F1 over concepts
};

struct CalibrationOptions {
  double l2_strength = 1e-3;  // on the logistic slope only
  std::size_t max_newton_steps = 100;
  ThresholdMode mode = ThresholdMode::per_concept;
  std::size_t workers = 1;
};

struct ConceptCalibration {
  double slope = 0.0;
  double intercept = 0.0;
  double threshold = 0.5;
  // False when the fit column held a single label value.
  bool calibrated = false;

  bool operator==(const ConceptCalibration&) const = default;
};

struct CalibrationModel {
  std::vector<ConceptCalibration> concepts;
  ProbabilityMatrix probabilities;

  std::vector<ConceptId> uncalibratable() const;
  bool operator==(const CalibrationModel&) const = default;
};

struct LogisticFit {
  double slope = 0.0;
  double intercept = 0.0;
};

// Univariate logistic regression P = sigmoid(slope·s + intercept) by damped
// Newton iterations on mean log-loss + (l2/2)·slope^2.
LogisticFit fit_logistic(std::span<const double> scores, std::span<const std::uint8_t> labels, double l2_strength,
                         std::size_t max_steps);

// Candidate thresholds: midpoints between consecutive distinct probabilities,
// plus 0.5, ascending and de-duplicated.
std::vector<double> threshold_candidates(std::span<const float> probabilities);

// Returns the candidate maximizing macro F1 (mean of positive- and
// negative-class F1, predicting positive iff p >= t); ties go to the smallest
// threshold. Scores are compared exactly as rationals.
double select_threshold(std::span<const float> probabilities, std::span<const std::uint8_t> labels);

// Fits every concept column on `fit_rows` (all rows when empty) and applies
// the fit to every row.
CalibrationModel calibrate(const ScoreMatrix& scores, const AnnotationMatrix& annotations,
                           const CalibrationOptions& options = {}, std::span<const std::size_t> fit_rows = {});

// z'[i][m] = z[i][m] && P[i][m] >= t_m. Never turns a 0 into a 1.
AnnotationMatrix refine_annotations(const AnnotationMatrix& annotations, const CalibrationModel& calib);

void save_calibration(const CalibrationModel& calib, const std::filesystem::path& path);
// Restores per-concept parameters; probabilities are not part of the record file.
std::vector<ConceptCalibration> load_calibration(const std::filesystem::path& path);

}  // namespace wise
