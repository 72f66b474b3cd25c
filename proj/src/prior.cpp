#include "wise/prior.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"

#include "wise/parallel.hpp"

namespace wise {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

PriorMatrix compute_prior(const ProbabilityMatrix& probabilities, const DatasetManifest& manifest) {
  if (probabilities.rows() != manifest.num_instances()) {
    throw ShapeError("probability matrix rows differ from manifest instance count");
  }
  PriorMatrix prior(manifest.num_classes(), probabilities.cols());
  for (ClassId n = 0; n < manifest.num_classes(); ++n) {
    const auto& members = manifest.train_members(n);
    if (members.empty()) throw ValidationError("class " + std::to_string(n) + " has no train instance");
    for (std::size_t m = 0; m < probabilities.cols(); ++m) {
      double sum = 0;
      for (auto i : members) sum += probabilities(i, m);
      prior(n, m) = static_cast<float>(sum / double(members.size()));
    }
  }
  return prior;
}

std::vector<ConceptId> typical_concepts(const PriorMatrix& prior, ClassId class_id) {
  std::vector<ConceptId> out;
  for (std::size_t m = 0; m < prior.cols(); ++m) {
    if (prior(class_id, m) > 0.5f) out.push_back(m);
  }
  return out;
}

PriorTree build_prior_tree(const PriorMatrix& prior, const AnnotationMatrix& annotations,
                           const DatasetManifest& manifest, ClassId class_id) {
  if (class_id >= manifest.num_classes()) throw ValidationError("unknown class " + std::to_string(class_id));
  if (annotations.rows() != manifest.num_instances() || prior.cols() != annotations.cols()) {
    throw ShapeError("prior, annotations and manifest shapes disagree");
  }
  PriorTree out;
  out.class_id = class_id;

  const auto& train = manifest.train_indices();
  TreeSamples samples;
  samples.num_targets = 2;
  std::vector<std::size_t> instance_of;
  for (auto i : train) {
    samples.add(annotations.row(i), manifest.label(i) == class_id ? 1 : 0);
    instance_of.push_back(i);
  }

  out.candidates = typical_concepts(prior, class_id);
  const bool root_pure = std::all_of(samples.targets.begin(), samples.targets.end(),
                                     [&](auto t) { return t == samples.targets.front(); });
  if (out.candidates.empty() && !root_pure) {
    const std::size_t m = prior.cols();
    const std::size_t take = std::min<std::size_t>(m, (m + 9) / 10);
    std::vector<ConceptId> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](ConceptId a, ConceptId b) { return prior(class_id, a) > prior(class_id, b); });
    out.candidates.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(out.candidates.begin(), out.candidates.end());
    out.used_fallback = true;
  }

  out.tree = induce_tree(samples, out.candidates);

  std::size_t k = 0;
  while (!out.tree.node(k).is_leaf()) {
    const auto& nd = out.tree.node(k);
    std::size_t with = 0, without = 0;
    for (auto s : nd.members) {
      if (samples.targets[s] != 1) continue;
      (samples.features[s][*nd.split] ? with : without) += 1;
    }
    const std::uint8_t value = with >= without ? 1 : 0;
    out.path.concepts.push_back(*nd.split);
    out.path.branch_values.push_back(value);
    k = static_cast<std::size_t>(nd.children[value]);
  }
  const auto& leaf = out.tree.node(k);
  out.path.terminal_gini = leaf.gini;
  std::set<ClassId> classes;
  for (auto s : leaf.members) classes.insert(manifest.label(instance_of[s]));
  out.path.terminal_classes.assign(classes.begin(), classes.end());
  return out;
}

std::vector<PriorTree> build_prior_trees(const PriorMatrix& prior, const AnnotationMatrix& annotations,
                                         const DatasetManifest& manifest, std::size_t workers) {
  std::vector<PriorTree> out(manifest.num_classes());
  parallel_for(out.size(), workers,
               [&](std::size_t n) { out[n] = build_prior_tree(prior, annotations, manifest, n); });
  return out;
}

void save_prior_paths(std::span<const PriorTree> trees, const DatasetManifest& manifest, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& t : trees) {
    json r;
    r["class"] = t.class_id;
    r["name"] = manifest.class_names()[t.class_id];
    r["candidates"] = t.candidates;
    r["fallback"] = t.used_fallback;
    r["path"] = t.path.concepts;
    r["branch_values"] = t.path.branch_values;
    r["terminal_gini"] = t.path.terminal_gini;
    r["terminal_classes"] = t.path.terminal_classes;
    out << r.dump() << '\n';
  }
}

}  // namespace wise
