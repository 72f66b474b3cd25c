#include "wise/tree.hpp"

#include <algorithm>

namespace wise {

namespace {

using u128 = unsigned __int128;

// Sum of squared counts; Gini = 1 - S / n^2.
u128 square_sum(std::span<const std::size_t> h) {
  u128 s = 0;
  for (auto c : h) s += u128(c) * c;
  return s;
}

class Inducer {
 public:
  explicit Inducer(const TreeSamples& samples) : samples_(samples) {}

  DecisionTree run(std::vector<ConceptId> candidates) {
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    std::vector<std::size_t> all(samples_.size());
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
    build(std::move(all), candidates);
    return std::move(tree_);
  }

 private:
  std::vector<std::size_t> histogram(const std::vector<std::size_t>& members) const {
    std::vector<std::size_t> h(samples_.num_targets, 0);
    for (auto s : members) ++h[samples_.targets[s]];
    return h;
  }

  int build(std::vector<std::size_t> members, const std::vector<ConceptId>& candidates) {
    const int index = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    {
      TreeNode& node = tree_.nodes.back();
      node.histogram = histogram(members);
      node.gini = gini_impurity(node.histogram);
      node.members = members;
    }
    const auto& h = tree_.nodes[index].histogram;
    const std::size_t n = members.size();
    const bool pure = std::count_if(h.begin(), h.end(), [](auto c) { return c > 0; }) <= 1;
    if (pure || candidates.empty()) return index;

    // Maximize S0/n0 + S1/n1, which is the same as minimizing the weighted
    // child impurity. The parent value S/n is the bar to beat.
    u128 best_num = square_sum(h);
    u128 best_den = n;
    std::optional<ConceptId> best;
    std::vector<std::size_t> h0(samples_.num_targets), h1(samples_.num_targets);
    for (ConceptId c : candidates) {
      std::fill(h0.begin(), h0.end(), 0);
      std::fill(h1.begin(), h1.end(), 0);
      std::size_t n1 = 0;
      for (auto s : members) {
        if (samples_.features[s][c]) {
          ++h1[samples_.targets[s]];
          ++n1;
        } else {
          ++h0[samples_.targets[s]];
        }
      }
      const std::size_t n0 = n - n1;
      if (n0 == 0 || n1 == 0) continue;
      const u128 num = square_sum(h0) * n1 + square_sum(h1) * n0;
      const u128 den = u128(n0) * n1;
      if (num * best_den > best_num * den) {
        best_num = num;
        best_den = den;
        best = c;
      }
    }
    if (!best) return index;

    std::vector<std::size_t> left, right;
    for (auto s : members) (samples_.features[s][*best] ? right : left).push_back(s);
    std::vector<ConceptId> rest;
    rest.reserve(candidates.size() - 1);
    for (auto c : candidates) {
      if (c != *best) rest.push_back(c);
    }
    tree_.nodes[index].split = *best;
    const int child0 = build(std::move(left), rest);
    const int child1 = build(std::move(right), rest);
    tree_.nodes[index].children = {child0, child1};
    return index;
  }

  const TreeSamples& samples_;
  DecisionTree tree_;
};

}  // namespace

double gini_impurity(std::span<const std::size_t> histogram) {
  std::size_t n = 0;
  for (auto c : histogram) n += c;
  if (n == 0) return 0.0;
  const double s = static_cast<double>(square_sum(histogram));
  return 1.0 - s / (double(n) * double(n));
}

std::vector<std::size_t> DecisionTree::trace(std::span<const std::uint8_t> features) const {
  std::vector<std::size_t> out;
  std::size_t k = 0;
  while (true) {
    out.push_back(k);
    const auto& nd = nodes[k];
    if (nd.is_leaf()) break;
    k = static_cast<std::size_t>(nd.children[features[*nd.split] ? 1 : 0]);
  }
  return out;
}

std::vector<ConceptId> DecisionTree::path_concepts(std::span<const std::uint8_t> features) const {
  std::vector<ConceptId> out;
  for (auto k : trace(features)) {
    if (nodes[k].split) out.push_back(*nodes[k].split);
  }
  return out;
}

DecisionTree induce_tree(const TreeSamples& samples, std::span<const ConceptId> candidates) {
  if (samples.size() == 0) throw ValidationError("tree induction needs at least one sample");
  if (samples.features.size() != samples.targets.size()) throw ShapeError("tree samples are ragged");
  for (auto t : samples.targets) {
    if (t >= samples.num_targets) throw ValidationError("tree target out of range");
  }
  for (auto c : candidates) {
    for (const auto& f : samples.features) {
      if (c >= f.size()) throw ShapeError("candidate concept " + std::to_string(c) + " out of feature range");
    }
  }
  Inducer inducer(samples);
  return inducer.run({candidates.begin(), candidates.end()});
}

}  // namespace wise
