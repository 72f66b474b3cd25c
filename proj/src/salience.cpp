#include "wise/salience.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"

#include "wise/parallel.hpp"

namespace wise {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

void require_unit_rows(const EmbeddingMatrix& e, const char* what) {
  if (!e.normalized) {
    throw ValidationError(std::string(what) + " embeddings are not flagged normalized; cosine scoring needs unit rows");
  }
  for (std::size_t r = 0; r < e.rows(); ++r) {
    double sq = 0;
    for (float v : e.values.row(r)) sq += double(v) * v;
    if (std::abs(std::sqrt(sq) - 1.0) > kNormTolerance) {
      throw ValidationError(std::string(what) + " embedding row " + std::to_string(r) + " has norm " +
                            std::to_string(std::sqrt(sq)));
    }
  }
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

ScoreMatrix compute_concept_scores(const EmbeddingMatrix& images, const EmbeddingMatrix& concepts) {
  if (images.dim() != concepts.dim()) {
    throw ShapeError("image embeddings have dimension " + std::to_string(images.dim()) +
                     " but concept embeddings have " + std::to_string(concepts.dim()));
  }
  require_unit_rows(images, "image");
  require_unit_rows(concepts, "concept");
  ScoreMatrix scores(images.rows(), concepts.rows());
  for (std::size_t i = 0; i < images.rows(); ++i) {
    const auto x = images.values.row(i);
    for (std::size_t m = 0; m < concepts.rows(); ++m) {
      const auto c = concepts.values.row(m);
      double dot = 0;
      for (std::size_t k = 0; k < x.size(); ++k) dot += double(x[k]) * c[k];
      scores(i, m) = static_cast<float>(std::clamp(dot, -1.0, 1.0));
    }
  }
  return scores;
}

// ---- Probe ------------------------------------------------------------------------

std::vector<double> Probe::logits(std::span<const float> scores) const {
  std::vector<double> z(num_classes());
  for (std::size_t k = 0; k < z.size(); ++k) {
    double acc = biases[k];
    const auto w = weights.row(k);
    for (std::size_t m = 0; m < w.size(); ++m) acc += w[m] * scores[m];
    z[k] = acc;
  }
  return z;
}

ClassId Probe::predict(std::span<const float> scores) const {
  const auto z = logits(scores);
  return static_cast<ClassId>(std::max_element(z.begin(), z.end()) - z.begin());
}

ProbeObjective::ProbeObjective(const ScoreMatrix& scores, std::span<const ClassId> labels,
                               std::vector<std::size_t> rows, std::size_t num_classes, double l2_strength)
    : scores_(&scores), labels_(labels), rows_(std::move(rows)), num_classes_(num_classes), l2_(l2_strength) {
  if (rows_.empty()) throw ValidationError("probe objective needs at least one training row");
}

double ProbeObjective::loss(std::span<const double> params) const {
  std::vector<double> scratch(num_params());
  return gradient(params, scratch);
}

double ProbeObjective::gradient(std::span<const double> params, std::span<double> grad) const {
  const std::size_t m = scores_->cols();
  const std::size_t n = num_classes_;
  const std::size_t bias_offset = n * m;
  std::fill(grad.begin(), grad.end(), 0.0);
  std::vector<double> z(n);
  double total = 0;
  for (std::size_t i : rows_) {
    const auto s = scores_->row(i);
    for (std::size_t k = 0; k < n; ++k) {
      double acc = params[bias_offset + k];
      for (std::size_t c = 0; c < m; ++c) acc += params[k * m + c] * s[c];
      z[k] = acc;
    }
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0;
    for (double v : z) denom += std::exp(v - zmax);
    const double lse = zmax + std::log(denom);
    const ClassId y = labels_[i];
    total += lse - z[y];
    for (std::size_t k = 0; k < n; ++k) {
      const double residual = std::exp(z[k] - lse) - (k == y ? 1.0 : 0.0);
      for (std::size_t c = 0; c < m; ++c) grad[k * m + c] += residual * s[c];
      grad[bias_offset + k] += residual;
    }
  }
  const double inv = 1.0 / static_cast<double>(rows_.size());
  double penalty = 0;
  for (std::size_t j = 0; j < bias_offset; ++j) {
    grad[j] = grad[j] * inv + l2_ * params[j];
    penalty += params[j] * params[j];
  }
  for (std::size_t k = 0; k < n; ++k) grad[bias_offset + k] *= inv;
  return total * inv + 0.5 * l2_ * penalty;
}

Probe ProbeObjective::unpack(std::span<const double> params) const {
  const std::size_t m = scores_->cols();
  Probe p;
  p.weights = Matrix<double>(num_classes_, m,
                             std::vector<double>(params.begin(), params.begin() + num_classes_ * m));
  p.biases.assign(params.begin() + num_classes_ * m, params.end());
  return p;
}

ProbeFit train_probe(const ScoreMatrix& scores, const DatasetManifest& manifest, const ProbeHyper& hyper) {
  if (scores.rows() != manifest.num_instances()) {
    throw ShapeError("score matrix has " + std::to_string(scores.rows()) + " rows but the manifest lists " +
                     std::to_string(manifest.num_instances()) + " instances");
  }
  if (manifest.num_classes() < 2) throw ValidationError("probe training needs at least two classes");
  if (manifest.train_indices().empty()) throw ValidationError("probe training needs a non-empty train split");
  if (!(hyper.learning_rate > 0)) throw ConfigError("learning rate must be positive");

  ProbeObjective objective(scores, manifest.labels(), manifest.train_indices(), manifest.num_classes(),
                           hyper.l2_strength);
  std::vector<double> params(objective.num_params(), 0.0);
  std::vector<double> grad(params.size());
  std::vector<double> candidate(params.size());
  std::vector<double> candidate_grad(params.size());

  ProbeFit fit;
  double loss = objective.gradient(params, grad);
  fit.loss_history.push_back(loss);
  double step = hyper.learning_rate;
  for (std::size_t epoch = 0; epoch < hyper.max_epochs; ++epoch) {
    double worst = 0;
    for (double g : grad) worst = std::max(worst, std::abs(g));
    if (worst < hyper.tol) {
      fit.converged = true;
      break;
    }
    ++fit.epochs;
    for (std::size_t j = 0; j < params.size(); ++j) candidate[j] = params[j] - step * grad[j];
    const double next = objective.gradient(candidate, candidate_grad);
    if (!std::isfinite(next)) {
      throw DivergenceError("probe loss became non-finite at epoch " + std::to_string(epoch + 1) +
                            "; try a smaller learning rate (current " + std::to_string(step) + ")");
    }
    if (next > loss) {
      ++fit.rejected_steps;
      step *= 0.5;
      continue;
    }
    params.swap(candidate);
    grad.swap(candidate_grad);
    loss = next;
    fit.loss_history.push_back(loss);
  }
  fit.probe = objective.unpack(params);
  return fit;
}

void save_probe(const Probe& probe, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t k = 0; k < probe.num_classes(); ++k) {
    json r;
    r["class"] = k;
    r["bias"] = probe.biases[k];
    const auto w = probe.weights.row(k);
    r["weights"] = std::vector<double>(w.begin(), w.end());
    out << r.dump() << '\n';
  }
}

Probe load_probe(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::vector<double> biases;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto r = json::parse(line);
      if (r.at("class").get<std::size_t>() != rows.size()) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": probe classes must be in order");
      }
      biases.push_back(r.at("bias").get<double>());
      rows.push_back(r.at("weights").get<std::vector<double>>());
      if (rows.back().size() != rows.front().size()) {
        throw ShapeError(path.string() + ":" + std::to_string(line_no) + ": ragged probe weights");
      }
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (rows.empty()) throw ParseError(path.string() + ": empty probe file");
  Probe p;
  const std::size_t m = rows.front().size();
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  p.weights = Matrix<double>(rows.size(), m, std::move(flat));
  p.biases = std::move(biases);
  return p;
}

AnnotationMatrix annotate(const ScoreMatrix& scores, const Probe& probe, const DatasetManifest& manifest) {
  if (scores.rows() != manifest.num_instances() || scores.cols() != probe.num_concepts() ||
      probe.num_classes() != manifest.num_classes()) {
    throw ShapeError("probe, scores and manifest shapes disagree");
  }
  AnnotationMatrix z(scores.rows(), scores.cols());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const auto w = probe.weights.row(manifest.label(i));
    for (std::size_t m = 0; m < scores.cols(); ++m) {
      z(i, m) = double(scores(i, m)) * w[m] > 0.0 ? 1 : 0;
    }
  }
  return z;
}

// ---- calibration ------------------------------------------------------------------

LogisticFit fit_logistic(std::span<const double> s, std::span<const std::uint8_t> y, double l2,
                         std::size_t max_steps) {
  const double inv = 1.0 / static_cast<double>(s.size());
  auto objective = [&](double a, double b) {
    double total = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double z = a * s[i] + b;
      total += y[i] ? softplus(-z) : softplus(z);
    }
    return total * inv + 0.5 * l2 * a * a;
  };

  double a = 0, b = 0;
  double f = objective(a, b);
  for (std::size_t step = 0; step < max_steps; ++step) {
    double ga = 0, gb = 0, haa = 0, hab = 0, hbb = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double p = sigmoid(a * s[i] + b);
      const double r = p - y[i];
      const double w = p * (1 - p);
      ga += r * s[i];
      gb += r;
      haa += w * s[i] * s[i];
      hab += w * s[i];
      hbb += w;
    }
    ga = ga * inv + l2 * a;
    gb *= inv;
    haa = haa * inv + l2 + 1e-12;
    hab *= inv;
    hbb = hbb * inv + 1e-12;
    if (std::max(std::abs(ga), std::abs(gb)) < 1e-12) break;
    const double det = haa * hbb - hab * hab;
    double da, db;
    if (det > 0 && std::isfinite(det)) {
      da = (hbb * ga - hab * gb) / det;
      db = (haa * gb - hab * ga) / det;
    } else {
      da = ga;
      db = gb;
    }
    // Backtracking keeps every accepted iterate a descent step.
    double t = 1.0;
    bool moved = false;
    for (int k = 0; k < 60; ++k, t *= 0.5) {
      const double na = a - t * da, nb = b - t * db;
      const double nf = objective(na, nb);
      if (std::isfinite(nf) && nf <= f) {
        moved = nf < f || (na == a && nb == b);
        a = na;
        b = nb;
        f = nf;
        break;
      }
    }
    if (!moved) break;
  }
  return {a, b};
}

std::vector<double> threshold_candidates(std::span<const float> probabilities) {
  std::vector<double> values(probabilities.begin(), probabilities.end());
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  std::vector<double> out{0.5};
  for (std::size_t k = 1; k < values.size(); ++k) out.push_back(0.5 * (values[k - 1] + values[k]));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace {

using u128 = unsigned __int128;

// Non-negative rational; compared by cross-multiplication.
struct Ratio {
  u128 num = 0;
  u128 den = 1;
  bool operator>(const Ratio& o) const { return num * o.den > o.num * den; }
};

// Macro F1 = (F1_pos + F1_neg) / 2, kept as the exact sum F1_pos + F1_neg.
Ratio macro_f1_sum(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, std::uint64_t tn) {
  const u128 dp = 2 * u128(tp) + fp + fn;
  const u128 dn = 2 * u128(tn) + fn + fp;
  const u128 np = 2 * u128(tp);
  const u128 nn = 2 * u128(tn);
  if (dp == 0 && dn == 0) return {0, 1};
  if (dp == 0) return {nn, dn};
  if (dn == 0) return {np, dp};
  return {np * dn + nn * dp, dp * dn};
}

}  // namespace

double select_threshold(std::span<const float> probabilities, std::span<const std::uint8_t> labels) {
  const auto candidates = threshold_candidates(probabilities);
  std::vector<std::size_t> order(probabilities.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probabilities[a] < probabilities[b]; });
  std::uint64_t positives = 0;
  for (auto l : labels) positives += l;
  const std::uint64_t negatives = labels.size() - positives;

  // Sweep candidates upward; `below_*` count rows with p < t (predicted negative).
  std::uint64_t below_pos = 0, below_neg = 0;
  std::size_t cursor = 0;
  double best_t = candidates.front();
  Ratio best{0, 1};
  bool have_best = false;
  for (double t : candidates) {
    while (cursor < order.size() && double(probabilities[order[cursor]]) < t) {
      (labels[order[cursor]] ? below_pos : below_neg) += 1;
      ++cursor;
    }
    const std::uint64_t tp = positives - below_pos;
    const std::uint64_t fn = below_pos;
    const std::uint64_t fp = negatives - below_neg;
    const std::uint64_t tn = below_neg;
    const Ratio score = macro_f1_sum(tp, fp, fn, tn);
    if (!have_best || score > best) {
      best = score;
      best_t = t;
      have_best = true;
    }
  }
  return best_t;
}

namespace {

// Mean positive-class F1 over calibrated concepts, swept over one shared
// threshold. Ties go to the smallest threshold.
double select_global_threshold(const ProbabilityMatrix& probs, const AnnotationMatrix& labels,
                               std::span<const std::size_t> rows, const std::vector<ConceptCalibration>& fits) {
  struct Entry {
    double p;
    std::size_t concept_id;
    std::uint8_t label;
  };
  std::vector<Entry> entries;
  std::vector<std::uint64_t> pos(probs.cols(), 0), count(probs.cols(), 0);
  std::vector<std::size_t> active;
  for (std::size_t m = 0; m < probs.cols(); ++m) {
    if (fits[m].calibrated) active.push_back(m);
  }
  if (active.empty()) return 0.5;
  std::vector<float> all;
  for (std::size_t m : active) {
    for (std::size_t i : rows) {
      entries.push_back({probs(i, m), m, labels(i, m)});
      all.push_back(probs(i, m));
      pos[m] += labels(i, m);
      ++count[m];
    }
  }
  const auto candidates = threshold_candidates(all);
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.p < b.p; });
  std::vector<std::uint64_t> below_pos(probs.cols(), 0), below_neg(probs.cols(), 0);
  auto f1 = [&](std::size_t m) {
    const double tp = double(pos[m] - below_pos[m]);
    const double fp = double((count[m] - pos[m]) - below_neg[m]);
    const double fn = double(below_pos[m]);
    const double d = 2 * tp + fp + fn;
    return d > 0 ? 2 * tp / d : 0.0;
  };
  std::size_t cursor = 0;
  double best_t = candidates.front(), best = -1;
  for (double t : candidates) {
    while (cursor < entries.size() && entries[cursor].p < t) {
      const auto& e = entries[cursor++];
      (e.label ? below_pos : below_neg)[e.concept_id] += 1;
    }
    double exact = 0;
    for (std::size_t m : active) exact += f1(m);
    if (exact > best + 1e-12) {
      best = exact;
      best_t = t;
    }
  }
  return best_t;
}

}  // namespace

CalibrationModel calibrate(const ScoreMatrix& scores, const AnnotationMatrix& annotations,
                           const CalibrationOptions& options, std::span<const std::size_t> fit_rows) {
  if (scores.rows() != annotations.rows() || scores.cols() != annotations.cols()) {
    throw ShapeError("scores and annotations differ in shape");
  }
  std::vector<std::size_t> rows(fit_rows.begin(), fit_rows.end());
  if (rows.empty()) {
    rows.resize(scores.rows());
    std::iota(rows.begin(), rows.end(), 0);
  }
  const std::size_t m_count = scores.cols();
  CalibrationModel model;
  model.concepts.resize(m_count);
  model.probabilities = ProbabilityMatrix(scores.rows(), m_count);

  parallel_for(m_count, options.workers, [&](std::size_t m) {
    std::vector<double> s(rows.size());
    std::vector<std::uint8_t> y(rows.size());
    std::size_t positives = 0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      s[k] = scores(rows[k], m);
      y[k] = annotations(rows[k], m);
      positives += y[k];
    }
    ConceptCalibration& cal = model.concepts[m];
    if (positives == 0 || positives == rows.size()) {
      // Single-label column: constant probability from the smoothed label rate.
      const double rate = (double(positives) + 0.5) / (double(rows.size()) + 1.0);
      cal = {0.0, std::log(rate / (1.0 - rate)), 0.5, false};
    } else {
      const auto fit = fit_logistic(s, y, options.l2_strength, options.max_newton_steps);
      cal.slope = fit.slope;
      cal.intercept = fit.intercept;
      cal.calibrated = true;
    }
    for (std::size_t i = 0; i < scores.rows(); ++i) {
      model.probabilities(i, m) = static_cast<float>(sigmoid(cal.slope * scores(i, m) + cal.intercept));
    }
    if (cal.calibrated && options.mode == ThresholdMode::per_concept) {
      std::vector<float> p(rows.size());
      for (std::size_t k = 0; k < rows.size(); ++k) p[k] = model.probabilities(rows[k], m);
      cal.threshold = select_threshold(p, y);
    }
  });

  if (options.mode == ThresholdMode::global) {
    const double t = select_global_threshold(model.probabilities, annotations, rows, model.concepts);
    for (auto& c : model.concepts) {
      if (c.calibrated) c.threshold = t;
    }
  }
  return model;
}

std::vector<ConceptId> CalibrationModel::uncalibratable() const {
  std::vector<ConceptId> out;
  for (std::size_t m = 0; m < concepts.size(); ++m) {
    if (!concepts[m].calibrated) out.push_back(m);
  }
  return out;
}

AnnotationMatrix refine_annotations(const AnnotationMatrix& annotations, const CalibrationModel& calib) {
  if (annotations.rows() != calib.probabilities.rows() || annotations.cols() != calib.concepts.size()) {
    throw ShapeError("annotations and calibration model differ in shape");
  }
  AnnotationMatrix out(annotations.rows(), annotations.cols());
  for (std::size_t i = 0; i < annotations.rows(); ++i) {
    for (std::size_t m = 0; m < annotations.cols(); ++m) {
      out(i, m) = annotations(i, m) && double(calib.probabilities(i, m)) >= calib.concepts[m].threshold ? 1 : 0;
    }
  }
  return out;
}

void save_calibration(const CalibrationModel& calib, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t m = 0; m < calib.concepts.size(); ++m) {
    const auto& c = calib.concepts[m];
    json r;
    r["concept"] = m;
    r["slope"] = c.slope;
    r["intercept"] = c.intercept;
    r["threshold"] = c.threshold;
    r["calibrated"] = c.calibrated;
    out << r.dump() << '\n';
  }
}

std::vector<ConceptCalibration> load_calibration(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<ConceptCalibration> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto r = json::parse(line);
      if (r.at("concept").get<std::size_t>() != out.size()) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": concepts must be dense and ordered");
      }
      out.push_back({r.at("slope").get<double>(), r.at("intercept").get<double>(), r.at("threshold").get<double>(),
                     r.at("calibrated").get<bool>()});
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace wise
