#include "wise/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "wise/rng.hpp"

namespace wise {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string where(const fs::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw ParseError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

struct FieldError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Calls fn(record, line_number) for every non-blank line of a JSONL file.
template <typename Fn>
void for_each_record(const fs::path& path, Fn&& fn) {
  auto in = open_in(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where(path, line_no) + ": " + e.what());
    }
    if (!record.is_object()) throw ParseError(where(path, line_no) + ": expected an object");
    try {
      fn(record, line_no);
    } catch (const json::exception& e) {
      throw ParseError(where(path, line_no) + ": " + e.what());
    } catch (const FieldError& e) {
      throw ParseError(where(path, line_no) + ": " + e.what());
    }
  }
}

template <typename T>
T required(const json& record, const char* key) {
  if (!record.contains(key)) throw FieldError(std::string("missing field '") + key + "'");
  return record.at(key).get<T>();
}

std::size_t required_index(const json& record, const char* key) {
  const auto& v = record.contains(key) ? record.at(key) : json();
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw FieldError(std::string("field '") + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

// ---- ConceptBank --------------------------------------------------------------

ConceptBank::ConceptBank(std::vector<Concept> concepts) {
  const std::size_t m = concepts.size();
  std::vector<bool> seen(m, false);
  for (const auto& c : concepts) {
    if (c.id >= m) {
      throw ValidationError("concept id " + std::to_string(c.id) + " out of range for a bank of " +
                            std::to_string(m) + " (ids must be dense 0..M-1)");
    }
    if (seen[c.id]) throw ValidationError("duplicate concept id " + std::to_string(c.id));
    seen[c.id] = true;
    if (c.positive_template.empty() || c.negative_template.empty() || c.question_template.empty() ||
        c.answer_text.empty()) {
      throw ValidationError("concept " + std::to_string(c.id) + " ('" + c.name + "') has an empty template");
    }
  }
  std::sort(concepts.begin(), concepts.end(), [](const Concept& a, const Concept& b) { return a.id < b.id; });
  concepts_ = std::move(concepts);
}

ConceptBank load_concept_bank(const fs::path& path) {
  std::vector<Concept> concepts;
  std::set<ConceptId> ids;
  for_each_record(path, [&](const json& r, std::size_t line_no) {
    Concept c;
    c.id = required_index(r, "id");
    c.name = required<std::string>(r, "name");
    c.positive_template = required<std::string>(r, "positive");
    c.negative_template = required<std::string>(r, "negative");
    c.question_template = required<std::string>(r, "question");
    c.answer_text = required<std::string>(r, "answer");
    if (!ids.insert(c.id).second) {
      throw ValidationError(where(path, line_no) + ": duplicate concept id " + std::to_string(c.id));
    }
    concepts.push_back(std::move(c));
  });
  try {
    return ConceptBank(std::move(concepts));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void save_concept_bank(const ConceptBank& bank, const fs::path& path) {
  auto out = open_out(path);
  for (const auto& c : bank.concepts()) {
    json r;
    r["id"] = c.id;
    r["name"] = c.name;
    r["positive"] = c.positive_template;
    r["negative"] = c.negative_template;
    r["question"] = c.question_template;
    r["answer"] = c.answer_text;
    out << r.dump() << '\n';
  }
}

// ---- DatasetManifest -----------------------------------------------------------

DatasetManifest::DatasetManifest(std::vector<std::string> class_names, std::vector<std::string> instance_ids,
                                 std::vector<ClassId> labels, std::vector<Split> splits)
    : class_names_(std::move(class_names)),
      instance_ids_(std::move(instance_ids)),
      labels_(std::move(labels)),
      splits_(std::move(splits)) {
  const std::size_t n = class_names_.size();
  if (n == 0) throw ValidationError("manifest declares no classes");
  if (labels_.size() != instance_ids_.size() || splits_.size() != instance_ids_.size()) {
    throw ValidationError("manifest label/split/id lists differ in length");
  }
  members_.assign(n, {});
  train_members_.assign(n, {});
  std::set<std::string> unique_ids;
  for (std::size_t i = 0; i < instance_ids_.size(); ++i) {
    if (!unique_ids.insert(instance_ids_[i]).second) {
      throw ValidationError("duplicate instance id '" + instance_ids_[i] + "'");
    }
    if (labels_[i] >= n) {
      throw ValidationError("instance '" + instance_ids_[i] + "' has label " + std::to_string(labels_[i]) +
                            " but only " + std::to_string(n) + " classes exist");
    }
    members_[labels_[i]].push_back(i);
    if (splits_[i] == Split::train) {
      train_members_[labels_[i]].push_back(i);
      train_.push_back(i);
    } else {
      test_.push_back(i);
    }
  }
  for (std::size_t c = 0; c < n; ++c) {
    if (train_members_[c].empty()) {
      throw ValidationError("class " + std::to_string(c) + " ('" + class_names_[c] + "') has no train instance");
    }
  }
}

DatasetManifest load_manifest(const fs::path& path) {
  std::vector<std::pair<ClassId, std::string>> classes;
  std::vector<std::string> ids;
  std::vector<ClassId> labels;
  std::vector<Split> splits;
  for_each_record(path, [&](const json& r, std::size_t line_no) {
    if (r.contains("class")) {
      classes.emplace_back(required_index(r, "class"), required<std::string>(r, "name"));
    } else if (r.contains("instance")) {
      ids.push_back(required<std::string>(r, "instance"));
      labels.push_back(required_index(r, "label"));
      const auto split = r.value("split", std::string("train"));
      if (split == "train") {
        splits.push_back(Split::train);
      } else if (split == "test") {
        splits.push_back(Split::test);
      } else {
        throw ParseError(where(path, line_no) + ": unknown split '" + split + "'");
      }
    } else {
      throw ParseError(where(path, line_no) + ": record is neither a class nor an instance");
    }
  });
  std::sort(classes.begin(), classes.end());
  std::vector<std::string> names;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    if (classes[k].first != k) {
      throw ValidationError(path.string() + ": class indices must be dense and unique (0..N-1)");
    }
    names.push_back(classes[k].second);
  }
  try {
    return DatasetManifest(std::move(names), std::move(ids), std::move(labels), std::move(splits));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  auto out = open_out(path);
  for (std::size_t c = 0; c < manifest.num_classes(); ++c) {
    json r;
    r["class"] = c;
    r["name"] = manifest.class_names()[c];
    out << r.dump() << '\n';
  }
  for (std::size_t i = 0; i < manifest.num_instances(); ++i) {
    json r;
    r["instance"] = manifest.instance_ids()[i];
    r["label"] = manifest.label(i);
    r["split"] = manifest.is_train(i) ? "train" : "test";
    out << r.dump() << '\n';
  }
}

// ---- WISEMAT1 ------------------------------------------------------------------

namespace {

constexpr const char* kMagic = "WISEMAT1";

std::size_t element_size(DType d) { return d == DType::f32 ? 4 : 1; }

void write_header(const fs::path& path, const MatrixHeader& h) {
  auto out = open_out(path);
  out << kMagic << '\n'
      << "rows " << h.rows << '\n'
      << "cols " << h.cols << '\n'
      << "dtype " << (h.dtype == DType::f32 ? "f32" : "u8") << '\n'
      << "normalized " << (h.normalized ? 1 : 0) << '\n'
      << "kind " << h.kind << '\n'
      << "payload " << h.payload.filename().string() << '\n';
}

std::vector<unsigned char> read_payload(const fs::path& header_path, const MatrixHeader& h) {
  const auto bytes = h.rows * h.cols * element_size(h.dtype);
  auto in = open_in(h.payload, std::ios::binary);
  std::vector<unsigned char> buf(bytes);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) {
    throw ShapeError(header_path.string() + ": payload holds " + std::to_string(in.gcount()) +
                     " bytes but the header declares " + std::to_string(h.rows) + "x" + std::to_string(h.cols) +
                     " (" + std::to_string(bytes) + " bytes)");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ShapeError(header_path.string() + ": payload is longer than the declared shape");
  }
  return buf;
}

void check_cols(const fs::path& path, const MatrixHeader& h, std::optional<std::size_t> expected) {
  if (expected && h.cols != *expected) {
    throw ShapeError(path.string() + ": expected " + std::to_string(*expected) + " columns, header declares " +
                     std::to_string(h.cols));
  }
}

float decode_f32(const unsigned char* p) {
  std::uint32_t bits = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
                       std::uint32_t(p[3]) << 24;
  return std::bit_cast<float>(bits);
}

}  // namespace

fs::path payload_path(const fs::path& header_path) {
  auto p = header_path;
  p += ".bin";
  return p;
}

MatrixHeader read_matrix_header(const fs::path& path) {
  auto in = open_in(path);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line) || line != kMagic) {
    throw ParseError(where(path, 1) + ": missing WISEMAT1 magic");
  }
  ++line_no;
  MatrixHeader h;
  bool have_rows = false, have_cols = false, have_dtype = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string key, value;
    fields >> key >> value;
    if (value.empty()) throw ParseError(where(path, line_no) + ": expected '<key> <value>'");
    try {
      if (key == "rows") {
        h.rows = std::stoull(value);
        have_rows = true;
      } else if (key == "cols") {
        h.cols = std::stoull(value);
        have_cols = true;
      } else if (key == "dtype") {
        if (value == "f32") {
          h.dtype = DType::f32;
        } else if (value == "u8") {
          h.dtype = DType::u8;
        } else {
          throw ParseError(where(path, line_no) + ": unsupported dtype '" + value + "'");
        }
        have_dtype = true;
      } else if (key == "normalized") {
        if (value != "0" && value != "1") throw ParseError(where(path, line_no) + ": normalized must be 0 or 1");
        h.normalized = value == "1";
      } else if (key == "kind") {
        h.kind = value;
      } else if (key == "payload") {
        h.payload = path.parent_path() / value;
      } else {
        throw ParseError(where(path, line_no) + ": unknown header key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw ParseError(where(path, line_no) + ": bad number '" + value + "'");
    }
  }
  if (!have_rows || !have_cols || !have_dtype) {
    throw ParseError(path.string() + ": header must declare rows, cols and dtype");
  }
  if (h.payload.empty()) h.payload = payload_path(path);
  return h;
}

RealMatrix load_real_matrix(const fs::path& path, std::optional<std::size_t> expected_cols) {
  const auto h = read_matrix_header(path);
  if (h.dtype != DType::f32) throw ParseError(path.string() + ": expected dtype f32");
  check_cols(path, h, expected_cols);
  const auto buf = read_payload(path, h);
  std::vector<float> data(h.rows * h.cols);
  for (std::size_t k = 0; k < data.size(); ++k) {
    data[k] = decode_f32(buf.data() + 4 * k);
    if (!std::isfinite(data[k])) {
      throw ValidationError(path.string() + ": non-finite value at row " + std::to_string(k / h.cols) +
                            ", col " + std::to_string(k % h.cols));
    }
  }
  RealMatrix m(h.rows, h.cols, std::move(data));
  if (h.normalized) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
      double sq = 0;
      for (float v : m.row(r)) sq += double(v) * v;
      if (std::abs(std::sqrt(sq) - 1.0) > kNormTolerance) {
        throw ValidationError(path.string() + ": flagged normalized but row " + std::to_string(r) +
                              " has norm " + std::to_string(std::sqrt(sq)));
      }
    }
  }
  return m;
}

AnnotationMatrix load_annotation_matrix(const fs::path& path, std::optional<std::size_t> expected_cols) {
  const auto h = read_matrix_header(path);
  if (h.dtype != DType::u8) throw ParseError(path.string() + ": annotation matrices must use dtype u8");
  check_cols(path, h, expected_cols);
  auto buf = read_payload(path, h);
  for (std::size_t k = 0; k < buf.size(); ++k) {
    if (buf[k] > 1) {
      throw ValidationError(path.string() + ": non-binary entry " + std::to_string(buf[k]) + " at row " +
                            std::to_string(k / h.cols) + ", col " + std::to_string(k % h.cols));
    }
  }
  return AnnotationMatrix(h.rows, h.cols, std::vector<std::uint8_t>(buf.begin(), buf.end()));
}

EmbeddingMatrix load_embedding_matrix(const fs::path& path) {
  const auto h = read_matrix_header(path);
  EmbeddingMatrix e;
  e.values = load_real_matrix(path);
  e.normalized = h.normalized;
  e.kind = h.kind == "image" ? EmbeddingKind::image
           : h.kind == "concept" ? EmbeddingKind::concept_text
                                 : EmbeddingKind::unspecified;
  return e;
}

void save_matrix(const RealMatrix& m, const fs::path& path, const std::string& kind, bool normalized) {
  MatrixHeader h{m.rows(), m.cols(), DType::f32, normalized, kind, payload_path(path)};
  write_header(path, h);
  auto out = open_out(h.payload, std::ios::binary);
  std::vector<unsigned char> buf(4 * m.data().size());
  for (std::size_t k = 0; k < m.data().size(); ++k) {
    const auto bits = std::bit_cast<std::uint32_t>(m.data()[k]);
    for (int b = 0; b < 4; ++b) buf[4 * k + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void save_matrix(const AnnotationMatrix& m, const fs::path& path, const std::string& kind) {
  MatrixHeader h{m.rows(), m.cols(), DType::u8, false, kind, payload_path(path)};
  write_header(path, h);
  auto out = open_out(h.payload, std::ios::binary);
  out.write(reinterpret_cast<const char*>(m.data().data()), static_cast<std::streamsize>(m.data().size()));
}

void save_embedding_matrix(const EmbeddingMatrix& m, const fs::path& path) {
  const char* kind = m.kind == EmbeddingKind::image     ? "image"
                     : m.kind == EmbeddingKind::concept_text ? "concept"
                                                        : "unspecified";
  save_matrix(m.values, path, kind, m.normalized);
}

// ---- synthetic fixtures --------------------------------------------------------

SyntheticConfig tri_config() {
  SyntheticConfig c;
  c.n_classes = 3;
  c.n_concepts = 4;
  c.per_class = 10;
  c.noise_rate = 0.0;
  c.seed = 0;
  c.prototypes = {{1, 1, 0, 0}, {1, 0, 1, 0}, {0, 0, 1, 1}};
  c.class_names = {"A", "B", "C"};
  c.id_prefix = "tri";
  return c;
}

ConceptBank synthetic_bank(std::size_t n_concepts) {
  std::vector<Concept> concepts;
  for (std::size_t m = 0; m < n_concepts; ++m) {
    Concept c;
    c.id = m;
    c.name = "c" + std::to_string(m + 1);
    c.positive_template = "the object has the {name} feature";
    c.negative_template = "the object does not have the {name} feature";
    c.question_template = "Does the object have the {name} feature?";
    c.answer_text = "Yes, it has the {name} feature";
    concepts.push_back(std::move(c));
  }
  return ConceptBank(std::move(concepts));
}

namespace {

std::string default_class_name(std::size_t k, std::size_t n) {
  if (n <= 26) return std::string(1, static_cast<char>('A' + k));
  return "class_" + std::to_string(k);
}

std::string padded(std::size_t v, std::size_t width) {
  auto s = std::to_string(v);
  return s.size() >= width ? s : std::string(width - s.size(), '0') + s;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticConfig& config) {
  const auto n = config.n_classes;
  const auto m = config.n_concepts;
  if (n < 2) throw ConfigError("synthetic config needs at least 2 classes");
  if (m < n) {
    throw ConfigError("synthetic config needs n_concepts >= n_classes (got " + std::to_string(m) + " < " +
                      std::to_string(n) + ")");
  }
  if (!(config.noise_rate >= 0.0 && config.noise_rate < 1.0)) {
    throw ConfigError("noise rate must lie in [0, 1)");
  }
  if (config.per_class == 0) throw ConfigError("per_class must be at least 1");
  if (!config.class_names.empty() && config.class_names.size() != n) {
    throw ConfigError("class_names must list one name per class");
  }

  Rng rng(config.seed);
  std::vector<std::vector<std::uint8_t>> prototypes = config.prototypes;
  if (prototypes.empty()) {
    // Distinct, non-empty patterns; feasible because 2^M - 1 >= M >= N.
    std::set<std::vector<std::uint8_t>> used;
    while (prototypes.size() < n) {
      std::vector<std::uint8_t> p(m);
      for (auto& bit : p) bit = rng.bernoulli(0.5) ? 1 : 0;
      if (std::all_of(p.begin(), p.end(), [](auto b) { return b == 0; })) continue;
      if (used.insert(p).second) prototypes.push_back(std::move(p));
    }
  } else {
    if (prototypes.size() != n) throw ConfigError("expected one prototype per class");
    std::set<std::vector<std::uint8_t>> used;
    for (const auto& p : prototypes) {
      if (p.size() != m) throw ConfigError("prototype length differs from n_concepts");
      if (std::any_of(p.begin(), p.end(), [](auto b) { return b > 1; })) {
        throw ConfigError("prototypes must be binary");
      }
      if (!used.insert(p).second) throw ConfigError("class prototypes are not distinct");
    }
  }

  std::vector<std::string> names = config.class_names;
  if (names.empty()) {
    for (std::size_t k = 0; k < n; ++k) names.push_back(default_class_name(k, n));
  }

  const std::size_t per_class_total = config.per_class + config.test_per_class;
  const std::size_t total = n * per_class_total;
  const std::size_t width = std::max<std::size_t>(3, std::to_string(total).size());
  std::vector<std::string> ids;
  std::vector<ClassId> labels;
  std::vector<Split> splits;
  AnnotationMatrix annotations(total, m);
  ScoreMatrix scores(total, m);

  std::size_t i = 0;
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t j = 0; j < per_class_total; ++j, ++i) {
      ids.push_back(config.id_prefix + "_" + padded(i, width));
      labels.push_back(k);
      splits.push_back(j < config.per_class ? Split::train : Split::test);
      for (std::size_t c = 0; c < m; ++c) {
        std::uint8_t z = prototypes[k][c];
        if (config.noise_rate > 0.0 && rng.bernoulli(config.noise_rate)) z ^= 1;
        annotations(i, c) = z;
      }
      for (std::size_t c = 0; c < m; ++c) {
        double u = rng.uniform();
        while (u == 0.0) u = rng.uniform();
        scores(i, c) = static_cast<float>(annotations(i, c) + (-0.1 + 0.2 * u));
      }
    }
  }

  SyntheticDataset out;
  out.bank = synthetic_bank(m);
  out.manifest = DatasetManifest(std::move(names), std::move(ids), std::move(labels), std::move(splits));
  out.prototypes = std::move(prototypes);

  // Image rows (s, 1) / ||(s, 1)|| against the standard basis of R^{M+1}.
  out.image_embeddings.values = RealMatrix(total, m + 1);
  out.image_embeddings.normalized = true;
  out.image_embeddings.kind = EmbeddingKind::image;
  for (std::size_t r = 0; r < total; ++r) {
    double sq = 1.0;
    for (std::size_t c = 0; c < m; ++c) sq += double(scores(r, c)) * scores(r, c);
    const double norm = std::sqrt(sq);
    for (std::size_t c = 0; c < m; ++c) out.image_embeddings.values(r, c) = static_cast<float>(scores(r, c) / norm);
    out.image_embeddings.values(r, m) = static_cast<float>(1.0 / norm);
  }
  out.concept_embeddings.values = RealMatrix(m, m + 1);
  out.concept_embeddings.normalized = true;
  out.concept_embeddings.kind = EmbeddingKind::concept_text;
  for (std::size_t c = 0; c < m; ++c) out.concept_embeddings.values(c, c) = 1.0f;

  out.scores = std::move(scores);
  out.annotations = std::move(annotations);
  return out;
}

}  // namespace wise
