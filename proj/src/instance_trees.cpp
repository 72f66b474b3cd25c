#include "wise/instance_trees.hpp"

#include <algorithm>
#include <set>

#include "wise/tree.hpp"

namespace wise {

std::vector<ConceptId> prior_subpath(std::span<const std::uint8_t> instance, const DecisionPath& prior_path) {
  std::vector<ConceptId> out;
  for (auto c : prior_path.concepts) {
    if (instance[c]) out.push_back(c);
  }
  return out;
}

std::vector<std::size_t> retrieve_hard_negatives(const AnnotationMatrix& annotations, const DatasetManifest& manifest,
                                                 std::span<const ConceptId> subpath, ClassId target) {
  std::vector<std::size_t> out;
  for (auto i : manifest.train_indices()) {
    if (manifest.label(i) == target) continue;
    const auto row = annotations.row(i);
    if (std::all_of(subpath.begin(), subpath.end(), [&](ConceptId c) { return row[c] == 1; })) out.push_back(i);
  }
  return out;
}

namespace {

std::vector<ClassId> classes_at(const TreeNode& leaf, std::span<const std::size_t> instance_of,
                                const DatasetManifest& manifest) {
  std::set<ClassId> classes;
  for (auto s : leaf.members) {
    if (s == 0) continue;  // sample 0 is the instance itself
    classes.insert(manifest.label(instance_of[s]));
  }
  return {classes.begin(), classes.end()};
}

}  // namespace

AffirmationResult build_affirmation_tree(std::span<const std::uint8_t> instance, ClassId target,
                                         const DecisionPath& prior_path,
                                         std::span<const std::size_t> hard_negatives,
                                         const AnnotationMatrix& annotations, const DatasetManifest& manifest,
                                         const PriorMatrix& prior) {
  if (instance.size() != annotations.cols()) throw ShapeError("instance vector length differs from bank size");
  TreeSamples samples;
  std::vector<std::size_t> instance_of{0};
  samples.add(instance, 1);
  for (auto i : hard_negatives) {
    samples.add(annotations.row(i), 0);
    instance_of.push_back(i);
  }

  std::vector<ConceptId> candidates;
  for (ConceptId c = 0; c < instance.size(); ++c) {
    if (!instance[c]) continue;
    if (std::find(prior_path.concepts.begin(), prior_path.concepts.end(), c) != prior_path.concepts.end()) continue;
    candidates.push_back(c);
  }

  const auto tree = induce_tree(samples, candidates);
  const auto trace = tree.trace(instance);
  AffirmationResult out;
  for (auto k : trace) {
    if (tree.node(k).split) out.extra.push_back(*tree.node(k).split);
  }
  const auto& leaf = tree.node(trace.back());
  out.gini = leaf.gini;
  out.confounders = classes_at(leaf, instance_of, manifest);

  out.affirmation = prior_subpath(instance, prior_path);
  out.affirmation.insert(out.affirmation.end(), out.extra.begin(), out.extra.end());
  std::stable_sort(out.affirmation.begin(), out.affirmation.end(), [&](ConceptId a, ConceptId b) {
    const float pa = prior(target, a), pb = prior(target, b);
    if (pa != pb) return pa > pb;
    return a < b;
  });
  return out;
}

EliminationResult build_elimination_tree(std::span<const std::uint8_t> instance,
                                         std::span<const ClassId> confounders,
                                         const AnnotationMatrix& annotations, const DatasetManifest& manifest) {
  if (confounders.empty()) throw ValidationError("elimination needs at least one confounding class");
  if (instance.size() != annotations.cols()) throw ShapeError("instance vector length differs from bank size");
  TreeSamples samples;
  std::vector<std::size_t> instance_of{0};
  samples.add(instance, 1);
  for (auto i : manifest.train_indices()) {
    if (std::find(confounders.begin(), confounders.end(), manifest.label(i)) == confounders.end()) continue;
    samples.add(annotations.row(i), 0);
    instance_of.push_back(i);
  }

  std::vector<ConceptId> candidates;
  for (ConceptId c = 0; c < instance.size(); ++c) {
    if (!instance[c]) candidates.push_back(c);
  }

  const auto tree = induce_tree(samples, candidates);
  const auto trace = tree.trace(instance);
  EliminationResult out;
  for (auto k : trace) {
    if (tree.node(k).split) out.path.push_back(*tree.node(k).split);
  }
  const auto& leaf = tree.node(trace.back());
  out.residual_gini = leaf.gini;
  out.surviving_classes = classes_at(leaf, instance_of, manifest);
  out.bank_insufficient = leaf.gini > 0.0;
  return out;
}

InstancePaths build_instance_paths(std::span<const std::uint8_t> instance, ClassId target,
                                   const DecisionPath& prior_path, const AnnotationMatrix& annotations,
                                   const DatasetManifest& manifest, const PriorMatrix& prior) {
  InstancePaths out;
  out.prior_subpath = prior_subpath(instance, prior_path);
  const auto negatives = retrieve_hard_negatives(annotations, manifest, out.prior_subpath, target);
  auto affirm = build_affirmation_tree(instance, target, prior_path, negatives, annotations, manifest, prior);
  out.affirm_extra = std::move(affirm.extra);
  out.affirmation = std::move(affirm.affirmation);
  out.confounders = std::move(affirm.confounders);
  out.residual_gini = affirm.gini;
  std::vector<ClassId> survivors = out.confounders;
  if (affirm.gini > 0.0) {
    auto elim = build_elimination_tree(instance, out.confounders, annotations, manifest);
    out.elimination = std::move(elim.path);
    out.residual_gini = elim.residual_gini;
    out.bank_insufficient = elim.bank_insufficient;
    survivors = std::move(elim.surviving_classes);
  }
  out.complete = out.residual_gini == 0.0;
  survivors.push_back(target);
  std::sort(survivors.begin(), survivors.end());
  survivors.erase(std::unique(survivors.begin(), survivors.end()), survivors.end());
  out.terminal_classes = std::move(survivors);
  return out;
}

}  // namespace wise
