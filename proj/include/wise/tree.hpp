#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "wise/corpus.hpp"

namespace wise {

// Samples for tree induction. Each sample is a binary concept vector indexed
// by concept id plus a target class in [0, num_targets).
struct TreeSamples {
  std::vector<std::span<const std::uint8_t>> features;
  std::vector<std::size_t> targets;
  std::size_t num_targets = 2;

  std::size_t size() const { return targets.size(); }
  void add(std::span<const std::uint8_t> f, std::size_t target) {
    features.push_back(f);
    targets.push_back(target);
  }
};

struct TreeNode {
  std::optional<ConceptId> split;  // empty for a leaf
  std::array<int, 2> children{-1, -1};  // indexed by the split concept's value
  std::vector<std::size_t> histogram;  // target counts at this node
  std::vector<std::size_t> members;  // sample indices reaching this node
  double gini = 0.0;

  bool is_leaf() const { return !split.has_value(); }
  std::size_t count() const { return members.size(); }
};

// Binary-split tree; nodes stored in pre-order (value-0 child before value-1
// child), root at index 0.
class DecisionTree {
 public:
  std::vector<TreeNode> nodes;

  const TreeNode& root() const { return nodes.front(); }
  const TreeNode& node(std::size_t k) const { return nodes[k]; }

  // Node indices visited by a feature vector, root first, ending at a leaf.
  std::vector<std::size_t> trace(std::span<const std::uint8_t> features) const;
  std::size_t leaf_for(std::span<const std::uint8_t> features) const { return trace(features).back(); }
  // Split concepts along the traced path, root first.
  std::vector<ConceptId> path_concepts(std::span<const std::uint8_t> features) const;
};

double gini_impurity(std::span<const std::size_t> histogram);

// Greedy CART-style induction. Each node splits on the candidate with the
// largest Gini decrease (ties: lowest concept id); a split must decrease the
// weighted impurity strictly. Recursion stops at a pure node, when no
// candidates remain, or when no split helps. A concept used at a node is not
// offered again inside its subtree. Gains are compared exactly.
DecisionTree induce_tree(const TreeSamples& samples, std::span<const ConceptId> candidates);

}  // namespace wise
