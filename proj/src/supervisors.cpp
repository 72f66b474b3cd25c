#include "wise/supervisors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "wise/tree.hpp"

namespace wise {

namespace {

double percent(std::size_t hit, std::size_t total) { return total ? 100.0 * double(hit) / double(total) : 0.0; }

void check_gt(const AnnotationMatrix* gt, std::size_t rows, std::size_t cols) {
  if (gt && (gt->rows() != rows || gt->cols() != cols)) {
    throw ShapeError("ground-truth annotations have shape " + std::to_string(gt->rows()) + "x" +
                     std::to_string(gt->cols()) + ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

// Index of the largest value; ties to the lowest index.
std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k) {
    if (v[k] > v[best]) best = k;
  }
  return best;
}

}  // namespace

std::vector<std::size_t> evaluation_rows(const DatasetManifest& manifest, std::string* split_name) {
  const bool has_test = !manifest.test_indices().empty();
  if (split_name) *split_name = has_test ? "test" : "train";
  return has_test ? manifest.test_indices() : manifest.train_indices();
}

SupervisorReport eval_cbm(const Probe& probe, const ScoreMatrix& scores, const DatasetManifest& manifest,
                          const AnnotationMatrix* gt) {
  if (scores.rows() != manifest.num_instances() || scores.cols() != probe.num_concepts()) {
    throw ShapeError("probe and score shapes disagree");
  }
  check_gt(gt, scores.rows(), scores.cols());
  SupervisorReport r;
  r.method = "CBM";
  const auto rows = evaluation_rows(manifest, &r.split);
  std::size_t correct = 0, agree = 0, total = 0;
  for (auto i : rows) {
    const auto s = scores.row(i);
    const auto pred = probe.predict(s);
    if (pred == manifest.label(i)) ++correct;
    if (gt) {
      const auto w = probe.weights.row(pred);
      for (std::size_t m = 0; m < s.size(); ++m) {
        const std::uint8_t polarity = double(s[m]) * w[m] > 0.0 ? 1 : 0;
        agree += polarity == (*gt)(i, m);
        ++total;
      }
    }
  }
  r.evaluated = rows.size();
  r.accuracy = percent(correct, rows.size());
  if (gt && total) r.interpretability = percent(agree, total);
  return r;
}

SupervisorReport eval_dt(const AnnotationMatrix& annotations, const DatasetManifest& manifest,
                         const AnnotationMatrix* gt, PathAveraging averaging) {
  if (annotations.rows() != manifest.num_instances()) throw ShapeError("annotation rows differ from manifest");
  check_gt(gt, annotations.rows(), annotations.cols());
  TreeSamples samples;
  samples.num_targets = manifest.num_classes();
  for (auto i : manifest.train_indices()) samples.add(annotations.row(i), manifest.label(i));
  std::vector<ConceptId> all(annotations.cols());
  for (std::size_t m = 0; m < all.size(); ++m) all[m] = m;
  const auto tree = induce_tree(samples, all);

  SupervisorReport r;
  r.method = "DT";
  const auto rows = evaluation_rows(manifest, &r.split);
  std::size_t correct = 0, agree = 0, total = 0, scored_instances = 0;
  double per_instance_sum = 0;
  for (auto i : rows) {
    const auto x = annotations.row(i);
    const auto trace = tree.trace(x);
    const auto& leaf = tree.node(trace.back());
    const auto pred = static_cast<ClassId>(
        std::max_element(leaf.histogram.begin(), leaf.histogram.end()) - leaf.histogram.begin());
    if (pred == manifest.label(i)) ++correct;
    if (!gt) continue;
    std::size_t a = 0, t = 0;
    for (auto k : trace) {
      const auto& nd = tree.node(k);
      if (!nd.split) continue;
      a += x[*nd.split] == (*gt)(i, *nd.split);
      ++t;
    }
    agree += a;
    total += t;
    if (t) {
      per_instance_sum += double(a) / double(t);
      ++scored_instances;
    }
  }
  r.evaluated = rows.size();
  r.accuracy = percent(correct, rows.size());
  if (gt) {
    if (averaging == PathAveraging::pooled && total) r.interpretability = percent(agree, total);
    if (averaging == PathAveraging::per_instance && scored_instances) {
      r.interpretability = 100.0 * per_instance_sum / double(scored_instances);
    }
  }
  return r;
}

SupervisorReport eval_nbc(const RealMatrix& x, const DatasetManifest& manifest, const AnnotationMatrix* gt,
                          double alpha) {
  if (x.rows() != manifest.num_instances()) throw ShapeError("feature rows differ from manifest");
  check_gt(gt, x.rows(), x.cols());
  if (!(alpha > 0)) throw ConfigError("naive Bayes smoothing must be positive");
  const std::size_t n_classes = manifest.num_classes();
  const std::size_t m_count = x.cols();
  const double n_train = double(manifest.train_indices().size());

  std::vector<double> log_prior(n_classes);
  Matrix<double> log_on(n_classes, m_count), log_off(n_classes, m_count), theta(n_classes, m_count);
  for (ClassId n = 0; n < n_classes; ++n) {
    const auto& members = manifest.train_members(n);
    log_prior[n] = std::log(double(members.size()) / n_train);
    for (std::size_t m = 0; m < m_count; ++m) {
      double sum = 0;
      for (auto i : members) sum += x(i, m);
      const double t = (sum + alpha) / (double(members.size()) + 2 * alpha);
      theta(n, m) = t;
      log_on(n, m) = std::log(t);
      log_off(n, m) = std::log1p(-t);
    }
  }

  SupervisorReport r;
  r.method = "NBC";
  const auto rows = evaluation_rows(manifest, &r.split);
  std::size_t correct = 0, agree = 0, total = 0;
  std::vector<double> post(n_classes);
  for (auto i : rows) {
    for (ClassId n = 0; n < n_classes; ++n) {
      double lp = log_prior[n];
      for (std::size_t m = 0; m < m_count; ++m) {
        const double v = x(i, m);
        lp += v * log_on(n, m) + (1 - v) * log_off(n, m);
      }
      post[n] = lp;
    }
    const auto pred = argmax(post);
    if (pred == manifest.label(i)) ++correct;
    if (!gt || n_classes < 2) continue;
    std::size_t contrast = pred == 0 ? 1 : 0;
    for (std::size_t n = 0; n < n_classes; ++n) {
      if (n != pred && post[n] > post[contrast]) contrast = n;
    }
    for (std::size_t m = 0; m < m_count; ++m) {
      const std::uint8_t polarity = std::log(theta(pred, m) / theta(contrast, m)) > 0.0 ? 1 : 0;
      agree += polarity == (*gt)(i, m);
      ++total;
    }
  }
  r.evaluated = rows.size();
  r.accuracy = percent(correct, rows.size());
  if (gt && total) r.interpretability = percent(agree, total);
  return r;
}

SupervisorReport eval_nbc(const AnnotationMatrix& annotations, const DatasetManifest& manifest,
                          const AnnotationMatrix* gt, double alpha) {
  RealMatrix x(annotations.rows(), annotations.cols());
  for (std::size_t k = 0; k < annotations.data().size(); ++k) x.data()[k] = annotations.data()[k];
  return eval_nbc(x, manifest, gt, alpha);
}

std::vector<ScoredRationale> to_scored(std::span<const MCoTRecord> records) {
  std::vector<ScoredRationale> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.instance, r.steps, 0});
  return out;
}

namespace {

bool step_correct(const Step& s, std::size_t instance, const AnnotationMatrix& gt) {
  const auto truth = gt(instance, s.concept_id);
  return s.polarity == Polarity::positive ? truth == 1 : truth == 0;
}

}  // namespace

std::optional<double> interpretability(std::span<const ScoredRationale> rationales, const AnnotationMatrix& gt) {
  std::size_t correct = 0, total = 0;
  for (const auto& r : rationales) {
    for (const auto& s : r.steps) {
      if (s.concept_id >= gt.cols() || r.instance >= gt.rows()) throw ShapeError("step outside ground-truth matrix");
      correct += step_correct(s, r.instance, gt);
      ++total;
    }
    total += r.unmatched;
  }
  if (total == 0) return std::nullopt;
  return percent(correct, total);
}

MCoTStats mcot_stats(std::span<const ScoredRationale> rationales, const AnnotationMatrix* gt, std::size_t bank_size,
                     std::size_t incomplete) {
  MCoTStats st;
  st.bank = bank_size;
  st.records = rationales.size();
  st.incomplete = incomplete;
  std::set<ConceptId> used;
  std::size_t steps = 0, pos = 0, pos_ok = 0, neg = 0, neg_ok = 0;
  for (const auto& r : rationales) {
    for (const auto& s : r.steps) {
      used.insert(s.concept_id);
      ++steps;
      const bool ok = gt && step_correct(s, r.instance, *gt);
      if (s.polarity == Polarity::positive) {
        ++pos;
        pos_ok += ok;
      } else {
        ++neg;
        neg_ok += ok;
      }
    }
  }
  st.in_cot = rationales.empty() ? 0.0 : double(steps) / double(rationales.size());
  st.x_cot = used.size();
  if (gt && pos) st.pos_precision = percent(pos_ok, pos);
  if (gt && neg) st.neg_precision = percent(neg_ok, neg);
  return st;
}

std::string format_percent(std::optional<double> v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *v);
  return buf;
}

std::string format_supervisor_table(std::span<const SupervisorReport> reports) {
  std::ostringstream out;
  char buf[64];
  out << "      ";
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%10s", r.method.c_str());
    out << buf;
  }
  out << "\nacc.  ";
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%10s", format_percent(r.accuracy).c_str());
    out << buf;
  }
  out << "\nintp. ";
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%10s", format_percent(r.interpretability).c_str());
    out << buf;
  }
  out << '\n';
  return out.str();
}

std::string format_stats_table(const MCoTStats& s, const std::string& dataset) {
  char buf[256];
  std::ostringstream out;
  std::snprintf(buf, sizeof buf, "%-12s%10s%10s%10s%10s%10s\n", "", "Pos", "Neg", "InCoT", "XCoT", "Bank");
  out << buf;
  std::snprintf(buf, sizeof buf, "%-12s%10s%10s%10.2f%10zu%10zu\n", dataset.c_str(),
                format_percent(s.pos_precision).c_str(), format_percent(s.neg_precision).c_str(), s.in_cot, s.x_cot,
                s.bank);
  out << buf;
  return out.str();
}

}  // namespace wise
