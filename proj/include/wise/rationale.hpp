#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wise/corpus.hpp"
#include "wise/instance_trees.hpp"
#include "wise/matrix.hpp"
#include "wise/prior.hpp"

namespace wise {

enum class Polarity : std::uint8_t { positive, negative };

struct Step {
  ConceptId concept_id = 0;
  Polarity polarity = Polarity::positive;
  std::string clause;

  bool operator==(const Step&) const = default;
};

struct MCoTRecord {
  std::size_t instance = 0;  // row in the manifest
  std::string instance_id;
  std::string prompt;
  std::vector<Step> steps;  // affirmation steps, then elimination steps
  std::string rationale;    // rendered paragraph, ends with the answer sentence
  std::string answer;
  bool complete = true;
  bool bank_insufficient = false;
  bool vacuous = false;  // no steps at all

  std::size_t step_count() const { return steps.size(); }
};

// Dataset-level wording. `subject` names the thing that "lacks the following
// features"; `task_noun` names what is being identified in the answer.
struct TemplateSet {
  std::string prompt = "Identify the object in the image.";
  std::string subject = "object";
  std::string task_noun = "object";
};

// JSON object with optional keys "prompt", "subject", "task_noun".
TemplateSet load_template_set(const std::filesystem::path& path);

MCoTRecord compose_mcot(const InstancePaths& paths, std::size_t instance, std::string instance_id,
                        std::string answer);

// Substitutes `{name}` in a concept template; any other slot is an error.
std::string render_template(const Concept& entry, std::string_view tmpl);
std::string render_clause(const Concept& entry, Polarity polarity);

// Fills clause texts and the rationale paragraph.
MCoTRecord verbalize(MCoTRecord record, const ConceptBank& bank, const TemplateSet& templates);

std::string render_rationale(std::span<const Step> steps, const std::string& answer, const TemplateSet& templates);

// Exact clause text -> (concept, polarity). Construction fails if two
// concepts render to the same clause, since extraction could not tell them apart.
class ClauseIndex {
 public:
  explicit ClauseIndex(const ConceptBank& bank);
  std::optional<Step> lookup(std::string_view clause) const;

 private:
  std::map<std::string, Step, std::less<>> clauses_;
};

struct ExtractedRationale {
  std::vector<Step> steps;
  std::vector<std::string> unmatched;
  std::optional<std::string> answer;

  std::size_t total_clauses() const { return steps.size() + unmatched.size(); }
};

ExtractedRationale extract_clauses(std::string_view text, const ClauseIndex& index);

// ---- stage-1 concept QA ----------------------------------------------------------

struct QARecord {
  std::size_t instance = 0;
  std::string instance_id;
  ConceptId concept_id = 0;
  Polarity polarity = Polarity::positive;
  std::string question;
  std::string answer;
};

// One record per (instance, present concept) over `rows` (all rows when
// empty). With `include_negative`, absent concepts also yield a record whose
// answer is the concept's negative clause.
std::vector<QARecord> emit_concept_qa(const AnnotationMatrix& annotations, const ConceptBank& bank,
                                      const DatasetManifest& manifest, std::span<const std::size_t> rows = {},
                                      bool include_negative = false);

// ---- stage-2 instruction datasets --------------------------------------------------

enum class Variant { wise, shuffled, captioning, instance_only, category_only };

Variant parse_variant(std::string_view name);
std::string_view variant_name(Variant v);

struct GenerationContext {
  const ConceptBank& bank;
  const DatasetManifest& manifest;
  const AnnotationMatrix& annotations;
  const PriorMatrix& prior;
  std::span<const PriorTree> prior_trees;
  TemplateSet templates;
};

struct GeneratedRecords {
  std::vector<MCoTRecord> records;
  std::vector<InstancePaths> paths;  // parallel to records; empty paths for category_only
};

// Builds and renders one record per row for the requested variant. The
// shuffled variant needs a seed and permutes steps within each polarity
// section using a per-record stream derived from (seed, row).
GeneratedRecords generate_records(const GenerationContext& ctx, std::span<const std::size_t> rows, Variant variant,
                                  std::optional<std::uint64_t> seed = std::nullopt, std::size_t workers = 1);

void write_instruction_dataset(std::span<const MCoTRecord> records, Variant variant,
                               const std::filesystem::path& path);
void write_concept_qa(std::span<const QARecord> records, const std::filesystem::path& path);
void write_audit(std::span<const MCoTRecord> records, std::span<const InstancePaths> paths,
                 const DatasetManifest& manifest, const std::filesystem::path& path);

// Reads rationale texts keyed by instance id from either the instruction
// dataset layout (last "conversations" turn) or flat {"id"/"image", "rationale"} records.
std::vector<std::pair<std::string, std::string>> read_rationales(const std::filesystem::path& path);

}  // namespace wise
