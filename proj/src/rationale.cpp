#include "wise/rationale.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"

#include "wise/parallel.hpp"
#include "wise/rng.hpp"

namespace wise {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr std::string_view kPositiveLead = "The image shows that ";
constexpr std::string_view kNegativeLead = "It can be observed that the ";
constexpr std::string_view kNegativeList = " lacks the following features: ";
constexpr std::string_view kAnswerLead = "Therefore, the ";
constexpr std::string_view kAnswerMid = " in the image is ";
constexpr std::string_view kSeparator = "; ";

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string_view strip_period(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.back() == '.') s.remove_suffix(1);
  return trim(s);
}

std::string concept_label(const Concept& c) { return "concept " + std::to_string(c.id) + " ('" + c.name + "')"; }

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

}  // namespace

TemplateSet load_template_set(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  TemplateSet t;
  try {
    const auto j = json::parse(in);
    t.prompt = j.value("prompt", t.prompt);
    t.subject = j.value("subject", t.subject);
    t.task_noun = j.value("task_noun", t.task_noun);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return t;
}

MCoTRecord compose_mcot(const InstancePaths& paths, std::size_t instance, std::string instance_id,
                        std::string answer) {
  MCoTRecord r;
  r.instance = instance;
  r.instance_id = std::move(instance_id);
  r.answer = std::move(answer);
  for (auto c : paths.affirmation) r.steps.push_back({c, Polarity::positive, {}});
  for (auto c : paths.elimination) r.steps.push_back({c, Polarity::negative, {}});
  r.complete = paths.complete;
  r.bank_insufficient = paths.bank_insufficient;
  r.vacuous = r.steps.empty();
  return r;
}

std::string render_template(const Concept& entry, std::string_view tmpl) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    const auto stray = tmpl.find('}', pos);
    if (stray != std::string_view::npos && (open == std::string_view::npos || stray < open)) {
      throw RenderError(concept_label(entry) + ": unbalanced '}' in template \"" + std::string(tmpl) + "\"");
    }
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    out.append(tmpl.substr(pos, open - pos));
    const auto close = tmpl.find('}', open);
    if (close == std::string_view::npos) {
      throw RenderError(concept_label(entry) + ": unterminated slot in template \"" + std::string(tmpl) + "\"");
    }
    const auto slot = tmpl.substr(open + 1, close - open - 1);
    if (slot != "name") {
      throw RenderError(concept_label(entry) + ": template slot {" + std::string(slot) + "} has no value");
    }
    out.append(entry.name);
    pos = close + 1;
  }
  return out;
}

std::string render_clause(const Concept& entry, Polarity polarity) {
  auto clause = render_template(entry, polarity == Polarity::positive ? entry.positive_template
                                                                         : entry.negative_template);
  if (trim(clause).empty()) throw RenderError(concept_label(entry) + ": clause renders empty");
  if (trim(clause) != clause) throw RenderError(concept_label(entry) + ": clause has surrounding whitespace");
  if (clause.find(';') != std::string::npos) {
    throw RenderError(concept_label(entry) + ": clause contains ';', which separates clauses");
  }
  if (clause.back() == '.') throw RenderError(concept_label(entry) + ": clause ends with a period");
  return clause;
}

std::string render_rationale(std::span<const Step> steps, const std::string& answer, const TemplateSet& templates) {
  std::string positives, negatives;
  for (const auto& s : steps) {
    auto& section = s.polarity == Polarity::positive ? positives : negatives;
    if (!section.empty()) section += kSeparator;
    section += s.clause;
  }
  std::string text;
  if (!positives.empty()) {
    text += kPositiveLead;
    text += positives;
    text += ". ";
  }
  if (!negatives.empty()) {
    text += kNegativeLead;
    text += templates.subject;
    text += kNegativeList;
    text += negatives;
    text += ". ";
  }
  text += kAnswerLead;
  text += templates.task_noun;
  text += kAnswerMid;
  text += answer;
  text += '.';
  return text;
}

MCoTRecord verbalize(MCoTRecord record, const ConceptBank& bank, const TemplateSet& templates) {
  for (auto& s : record.steps) {
    if (s.concept_id >= bank.size()) {
      throw RenderError("step refers to concept " + std::to_string(s.concept_id) + " outside a bank of " +
                        std::to_string(bank.size()));
    }
    s.clause = render_clause(bank[s.concept_id], s.polarity);
  }
  // Positive steps precede negative ones, so grouping by section keeps order.
  record.prompt = templates.prompt;
  record.rationale = render_rationale(record.steps, record.answer, templates);
  return record;
}

ClauseIndex::ClauseIndex(const ConceptBank& bank) {
  for (const auto& c : bank.concepts()) {
    for (auto polarity : {Polarity::positive, Polarity::negative}) {
      auto clause = render_clause(c, polarity);
      const auto [it, inserted] = clauses_.emplace(clause, Step{c.id, polarity, clause});
      if (!inserted) {
        throw RenderError(concept_label(c) + " renders the clause \"" + clause + "\" already used by concept " +
                          std::to_string(it->second.concept_id));
      }
    }
  }
}

std::optional<Step> ClauseIndex::lookup(std::string_view clause) const {
  const auto it = clauses_.find(trim(clause));
  if (it == clauses_.end()) return std::nullopt;
  return it->second;
}

ExtractedRationale extract_clauses(std::string_view text, const ClauseIndex& index) {
  ExtractedRationale out;
  text = trim(text);
  if (text.empty()) return out;

  std::string_view body = text;
  const auto answer_at = text.rfind(kAnswerLead);
  if (answer_at != std::string_view::npos) {
    const auto tail = text.substr(answer_at + kAnswerLead.size());
    const auto mid = tail.find(kAnswerMid);
    if (mid != std::string_view::npos) {
      out.answer = std::string(strip_period(tail.substr(mid + kAnswerMid.size())));
      body = text.substr(0, answer_at);
    }
  }

  std::string_view positive = body, negative;
  const auto neg_at = body.find(kNegativeLead);
  if (neg_at != std::string_view::npos) {
    positive = body.substr(0, neg_at);
    const auto rest = body.substr(neg_at + kNegativeLead.size());
    const auto list = rest.find(kNegativeList);
    if (list != std::string_view::npos) {
      negative = rest.substr(list + kNegativeList.size());
    } else {
      out.unmatched.emplace_back(strip_period(body.substr(neg_at)));
    }
  }
  positive = trim(positive);
  if (positive.starts_with(kPositiveLead)) positive.remove_prefix(kPositiveLead.size());

  auto split_section = [&](std::string_view section) {
    section = strip_period(section);
    while (!section.empty()) {
      const auto cut = section.find(';');
      const auto clause = trim(section.substr(0, cut));
      if (!clause.empty()) {
        if (auto step = index.lookup(clause)) {
          out.steps.push_back(*step);
        } else {
          out.unmatched.emplace_back(clause);
        }
      }
      if (cut == std::string_view::npos) break;
      section.remove_prefix(cut + 1);
    }
  };
  split_section(positive);
  split_section(negative);
  return out;
}

// ---- QA -------------------------------------------------------------------------

std::vector<QARecord> emit_concept_qa(const AnnotationMatrix& annotations, const ConceptBank& bank,
                                      const DatasetManifest& manifest, std::span<const std::size_t> rows,
                                      bool include_negative) {
  if (annotations.cols() != bank.size() || annotations.rows() != manifest.num_instances()) {
    throw ShapeError("annotations, bank and manifest shapes disagree");
  }
  std::vector<std::size_t> all;
  if (rows.empty()) {
    all.resize(annotations.rows());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    rows = all;
  }
  std::vector<QARecord> out;
  for (auto i : rows) {
    for (ConceptId m = 0; m < bank.size(); ++m) {
      const bool present = annotations(i, m) == 1;
      if (!present && !include_negative) continue;
      const auto& c = bank[m];
      QARecord r;
      r.instance = i;
      r.instance_id = manifest.instance_ids()[i];
      r.concept_id = m;
      r.polarity = present ? Polarity::positive : Polarity::negative;
      r.question = render_template(c, c.question_template);
      r.answer = present ? render_template(c, c.answer_text) : render_clause(c, Polarity::negative);
      out.push_back(std::move(r));
    }
  }
  return out;
}

// ---- variants -------------------------------------------------------------------------

Variant parse_variant(std::string_view name) {
  if (name == "wise") return Variant::wise;
  if (name == "shuffled") return Variant::shuffled;
  if (name == "captioning") return Variant::captioning;
  if (name == "instance_only") return Variant::instance_only;
  if (name == "category_only") return Variant::category_only;
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected wise, shuffled, captioning, instance_only or category_only)");
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::wise: return "wise";
    case Variant::shuffled: return "shuffled";
    case Variant::captioning: return "captioning";
    case Variant::instance_only: return "instance_only";
    case Variant::category_only: return "category_only";
  }
  return "wise";
}

GeneratedRecords generate_records(const GenerationContext& ctx, std::span<const std::size_t> rows, Variant variant,
                                  std::optional<std::uint64_t> seed, std::size_t workers) {
  if (variant == Variant::shuffled && !seed) throw ConfigError("the shuffled variant requires a seed");
  if (ctx.prior_trees.size() != ctx.manifest.num_classes()) {
    throw ShapeError("expected one prior tree per class");
  }
  GeneratedRecords out;
  out.records.resize(rows.size());
  out.paths.resize(rows.size());
  const DecisionPath no_prior_path;

  parallel_for(rows.size(), workers, [&](std::size_t k) {
    const std::size_t i = rows[k];
    const ClassId label = ctx.manifest.label(i);
    const auto instance = ctx.annotations.row(i);
    const auto& id = ctx.manifest.instance_ids()[i];
    const auto& answer = ctx.manifest.class_names()[label];
    MCoTRecord record;

    if (variant == Variant::category_only) {
      const auto& path = ctx.prior_trees[label].path;
      record.instance = i;
      record.instance_id = id;
      record.answer = answer;
      for (std::size_t s = 0; s < path.concepts.size(); ++s) {
        record.steps.push_back(
            {path.concepts[s], path.branch_values[s] ? Polarity::positive : Polarity::negative, {}});
      }
      record.complete = path.terminal_gini == 0.0;
      record.vacuous = record.steps.empty();
    } else {
      const auto& prior_path = variant == Variant::instance_only ? no_prior_path : ctx.prior_trees[label].path;
      out.paths[k] = build_instance_paths(instance, label, prior_path, ctx.annotations, ctx.manifest, ctx.prior);
      record = compose_mcot(out.paths[k], i, id, answer);
      if (variant == Variant::captioning) {
        record.steps.clear();
        for (ConceptId m = 0; m < instance.size(); ++m) {
          if (instance[m]) record.steps.push_back({m, Polarity::positive, {}});
        }
        record.vacuous = record.steps.empty();
      } else if (variant == Variant::shuffled) {
        Rng rng(mix_seed(*seed, i));
        auto split = std::stable_partition(record.steps.begin(), record.steps.end(),
                                           [](const Step& s) { return s.polarity == Polarity::positive; });
        rng.shuffle(std::span<Step>(record.steps.begin(), split));
        rng.shuffle(std::span<Step>(split, record.steps.end()));
      }
    }
    out.records[k] = verbalize(std::move(record), ctx.bank, ctx.templates);
  });
  return out;
}

// ---- writers ----------------------------------------------------------------------------

void write_instruction_dataset(std::span<const MCoTRecord> records, Variant variant, const fs::path& path) {
  auto out = open_out(path);
  for (const auto& r : records) {
    json j;
    j["id"] = r.instance_id;
    j["image"] = r.instance_id;
    j["variant"] = variant_name(variant);
    j["conversations"] = json::array({
        json{{"from", "human"}, {"value", "<image>\n" + r.prompt}},
        json{{"from", "gpt"}, {"value", r.rationale}},
    });
    j["answer"] = r.answer;
    j["steps"] = r.step_count();
    j["complete"] = r.complete;
    if (r.vacuous) j["vacuous"] = true;
    out << j.dump() << '\n';
  }
}

void write_concept_qa(std::span<const QARecord> records, const fs::path& path) {
  auto out = open_out(path);
  for (const auto& r : records) {
    json j;
    j["id"] = r.instance_id + "#c" + std::to_string(r.concept_id);
    j["image"] = r.instance_id;
    j["concept"] = r.concept_id;
    j["polarity"] = r.polarity == Polarity::positive ? "+" : "-";
    j["conversations"] = json::array({
        json{{"from", "human"}, {"value", "<image>\n" + r.question}},
        json{{"from", "gpt"}, {"value", r.answer}},
    });
    out << j.dump() << '\n';
  }
}

void write_audit(std::span<const MCoTRecord> records, std::span<const InstancePaths> paths,
                 const DatasetManifest& manifest, const fs::path& path) {
  auto out = open_out(path);
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& r = records[k];
    json j;
    j["instance"] = r.instance_id;
    j["class"] = manifest.label(r.instance);
    if (k < paths.size()) {
      const auto& p = paths[k];
      j["prior_subpath"] = p.prior_subpath;
      j["affirm_extra"] = p.affirm_extra;
      j["affirmation"] = p.affirmation;
      j["confounders"] = p.confounders;
      j["elimination"] = p.elimination;
      j["residual_gini"] = p.residual_gini;
    }
    json steps = json::array();
    for (const auto& s : r.steps) {
      steps.push_back((s.polarity == Polarity::positive ? "+" : "-") + std::to_string(s.concept_id));
    }
    j["steps"] = steps;
    j["complete"] = r.complete;
    j["bank_insufficient"] = r.bank_insufficient;
    j["vacuous"] = r.vacuous;
    out << j.dump() << '\n';
  }
}

std::vector<std::pair<std::string, std::string>> read_rationales(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      std::string id = j.contains("image") ? j.at("image").get<std::string>() : j.at("id").get<std::string>();
      std::string text;
      if (j.contains("rationale")) {
        text = j.at("rationale").get<std::string>();
      } else {
        text = j.at("conversations").back().at("value").get<std::string>();
      }
      out.emplace_back(std::move(id), std::move(text));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace wise
