#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "wise/corpus.hpp"
#include "wise/matrix.hpp"
#include "wise/tree.hpp"

namespace wise {

// [P]_{n,m} = mean of P_{i,m} over the train instances of class n.
PriorMatrix compute_prior(const ProbabilityMatrix& probabilities, const DatasetManifest& manifest);

struct DecisionPath {
  std::vector<ConceptId> concepts;  // root first
  std::vector<std::uint8_t> branch_values;  // value taken at each split
  double terminal_gini = 0.0;
  std::vector<ClassId> terminal_classes;  // classes present at the reached leaf

  std::size_t size() const { return concepts.size(); }
};

struct PriorTree {
  ClassId class_id = 0;
  std::vector<ConceptId> candidates;
  // Set when no concept passed the prior filter and the top-ranked
  // concepts were used instead.
  bool used_fallback = false;
  DecisionTree tree;
  DecisionPath path;
};

// Concepts with [P]_{n,m} > 0.5, ascending id.
std::vector<ConceptId> typical_concepts(const PriorMatrix& prior, ClassId class_id);

// One-vs-rest tree over the train split using the class's typical concepts;
// the returned path follows the class's majority annotation at every split
// (ties take value 1).
PriorTree build_prior_tree(const PriorMatrix& prior, const AnnotationMatrix& annotations,
                           const DatasetManifest& manifest, ClassId class_id);

std::vector<PriorTree> build_prior_trees(const PriorMatrix& prior, const AnnotationMatrix& annotations,
                                         const DatasetManifest& manifest, std::size_t workers = 1);

void save_prior_paths(std::span<const PriorTree> trees, const DatasetManifest& manifest,
                      const std::filesystem::path& path);

}  // namespace wise
