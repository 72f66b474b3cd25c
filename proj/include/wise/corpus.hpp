#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wise/matrix.hpp"

namespace wise {

using ConceptId = std::size_t;
using ClassId = std::size_t;

struct Concept {
  ConceptId id = 0;
  std::string name;
  // Templates may reference the concept name through the `{name}` slot.
  std::string positive_template;
  std::string negative_template;
  std::string question_template;
  std::string answer_text;

  bool operator==(const Concept&) const = default;
};

class ConceptBank {
 public:
  ConceptBank() = default;
  // Validates dense unique ids and non-empty templates; concepts are stored
  // in id order regardless of input order.
  explicit ConceptBank(std::vector<Concept> concepts);

  std::size_t size() const { return concepts_.size(); }
  const Concept& operator[](ConceptId id) const { return concepts_.at(id); }
  std::span<const Concept> concepts() const { return concepts_; }

  bool operator==(const ConceptBank&) const = default;

 private:
  std::vector<Concept> concepts_;
};

enum class Split : std::uint8_t { train, test };

class DatasetManifest {
 public:
  DatasetManifest() = default;
  DatasetManifest(std::vector<std::string> class_names, std::vector<std::string> instance_ids,
                  std::vector<ClassId> labels, std::vector<Split> splits);

  std::size_t num_classes() const { return class_names_.size(); }
  std::size_t num_instances() const { return instance_ids_.size(); }

  const std::vector<std::string>& class_names() const { return class_names_; }
  const std::vector<std::string>& instance_ids() const { return instance_ids_; }
  const std::vector<ClassId>& labels() const { return labels_; }
  const std::vector<Split>& splits() const { return splits_; }

  ClassId label(std::size_t i) const { return labels_[i]; }
  bool is_train(std::size_t i) const { return splits_[i] == Split::train; }

  // All instances of a class, in manifest order.
  const std::vector<std::size_t>& members(ClassId c) const { return members_.at(c); }
  // Train instances of a class (the set averaged over by the prior).
  const std::vector<std::size_t>& train_members(ClassId c) const { return train_members_.at(c); }
  const std::vector<std::size_t>& train_indices() const { return train_; }
  const std::vector<std::size_t>& test_indices() const { return test_; }

  bool operator==(const DatasetManifest& o) const {
    return class_names_ == o.class_names_ && instance_ids_ == o.instance_ids_ &&
           labels_ == o.labels_ && splits_ == o.splits_;
  }

 private:
  std::vector<std::string> class_names_;
  std::vector<std::string> instance_ids_;
  std::vector<ClassId> labels_;
  std::vector<Split> splits_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::vector<std::size_t>> train_members_;
  std::vector<std::size_t> train_;
  std::vector<std::size_t> test_;
};

// ---- line-delimited record files -------------------------------------------

ConceptBank load_concept_bank(const std::filesystem::path& path);
void save_concept_bank(const ConceptBank& bank, const std::filesystem::path& path);

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// ---- WISEMAT1 matrix container ---------------------------------------------
//
// A matrix lives in two files: a text header at `path` and a raw payload next
// to it. Header lines, in order:
//
//   WISEMAT1
//   rows <count>
//   cols <count>
//   dtype f32|u8
//   normalized 0|1
//   kind <image|concept|score|annotation|probability|prior|unspecified>   (optional)
//   payload <file name relative to the header>                            (optional)
//
// The payload is little-endian row-major with no padding. Without a payload
// line it defaults to "<header file name>.bin".

enum class DType { f32, u8 };

struct MatrixHeader {
  std::size_t rows = 0;
  std::size_t cols = 0;
  DType dtype = DType::f32;
  bool normalized = false;
  std::string kind = "unspecified";
  std::filesystem::path payload;
};

MatrixHeader read_matrix_header(const std::filesystem::path& path);
std::filesystem::path payload_path(const std::filesystem::path& header_path);

RealMatrix load_real_matrix(const std::filesystem::path& path,
                            std::optional<std::size_t> expected_cols = std::nullopt);
AnnotationMatrix load_annotation_matrix(const std::filesystem::path& path,
                                        std::optional<std::size_t> expected_cols = std::nullopt);
EmbeddingMatrix load_embedding_matrix(const std::filesystem::path& path);

void save_matrix(const RealMatrix& m, const std::filesystem::path& path,
                 const std::string& kind = "unspecified", bool normalized = false);
void save_matrix(const AnnotationMatrix& m, const std::filesystem::path& path,
                 const std::string& kind = "annotation");
void save_embedding_matrix(const EmbeddingMatrix& m, const std::filesystem::path& path);

// Row L2 norms within this tolerance of 1 count as normalized.
inline constexpr double kNormTolerance = 1e-5;

// ---- synthetic fixtures ----------------------------------------------------

struct SyntheticConfig {
  std::size_t n_classes = 3;
  std::size_t n_concepts = 4;
  std::size_t per_class = 10;
  std::size_t test_per_class = 0;
  double noise_rate = 0.0;
  std::uint64_t seed = 0;
  // Optional explicit prototypes, one pattern per class.
  std::vector<std::vector<std::uint8_t>> prototypes;
  std::vector<std::string> class_names;
  std::string id_prefix = "syn";
};

struct SyntheticDataset {
  ConceptBank bank;
  DatasetManifest manifest;
  ScoreMatrix scores;
  AnnotationMatrix annotations;
  std::vector<std::vector<std::uint8_t>> prototypes;
  // Unit-norm image/concept embeddings whose dot products are positively
  // scaled copies of `scores` (same signs, same per-row ordering).
  EmbeddingMatrix image_embeddings;
  EmbeddingMatrix concept_embeddings;
};

// The canonical three-class fixture: prototypes A=1100, B=1010, C=0011,
// ten train instances per class, no noise.
SyntheticConfig tri_config();

SyntheticDataset generate_synthetic(const SyntheticConfig& config);

// Concept bank used by synthetic fixtures: names c1..cM with generic templates.
ConceptBank synthetic_bank(std::size_t n_concepts);

}  // namespace wise
