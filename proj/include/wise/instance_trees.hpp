#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "wise/corpus.hpp"
#include "wise/matrix.hpp"
#include "wise/prior.hpp"

namespace wise {

struct AffirmationResult {
  std::vector<ConceptId> extra;        // instance-specific concepts, tree order
  std::vector<ConceptId> affirmation;  // prior subpath ++ extra, re-sorted by prior
  std::vector<ClassId> confounders;    // classes of negatives sharing the instance's leaf
  double gini = 0.0;                   // impurity of the instance's leaf
};

struct EliminationResult {
  std::vector<ConceptId> path;  // absent concepts, tree order
  double residual_gini = 0.0;
  std::vector<ClassId> surviving_classes;  // confounding classes still at the instance's leaf
  bool bank_insufficient = false;
};

struct InstancePaths {
  std::vector<ConceptId> prior_subpath;
  std::vector<ConceptId> affirm_extra;
  std::vector<ConceptId> affirmation;
  std::vector<ClassId> confounders;
  std::vector<ConceptId> elimination;
  double residual_gini = 0.0;
  bool complete = true;
  bool bank_insufficient = false;
  // Target class plus every class that could not be ruled out.
  std::vector<ClassId> terminal_classes;
};

// Concepts of the prior path present in the instance, in path order.
std::vector<ConceptId> prior_subpath(std::span<const std::uint8_t> instance, const DecisionPath& prior_path);

// Train instances not labeled `target` whose annotations contain every
// concept of `subpath`.
std::vector<std::size_t> retrieve_hard_negatives(const AnnotationMatrix& annotations, const DatasetManifest& manifest,
                                                 std::span<const ConceptId> subpath, ClassId target);

// Tree over {instance} ∪ hard negatives using the instance's present
// concepts that are not on the prior path.
AffirmationResult build_affirmation_tree(std::span<const std::uint8_t> instance, ClassId target,
                                         const DecisionPath& prior_path,
                                         std::span<const std::size_t> hard_negatives,
                                         const AnnotationMatrix& annotations, const DatasetManifest& manifest,
                                         const PriorMatrix& prior);

// Tree over {instance} ∪ train instances of the confounding classes using the
// instance's absent concepts. Requires a non-empty confounder set.
EliminationResult build_elimination_tree(std::span<const std::uint8_t> instance,
                                         std::span<const ClassId> confounders,
                                         const AnnotationMatrix& annotations, const DatasetManifest& manifest);

// Full per-instance construction: subpath, hard negatives, affirmation and,
// when the affirmation leaf is impure, elimination.
InstancePaths build_instance_paths(std::span<const std::uint8_t> instance, ClassId target,
                                   const DecisionPath& prior_path, const AnnotationMatrix& annotations,
                                   const DatasetManifest& manifest, const PriorMatrix& prior);

}  // namespace wise
