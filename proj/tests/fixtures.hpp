#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <unistd.h>
#include <string>
#include <vector>

#include "wise/corpus.hpp"
#include "wise/matrix.hpp"
#include "wise/tree.hpp"

namespace fixture {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("wise_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

// All-train manifest with ids r000.. and classes K0..
inline wise::DatasetManifest manifest_for(const std::vector<wise::ClassId>& labels, std::size_t num_classes) {
  std::vector<std::string> names, ids;
  for (std::size_t c = 0; c < num_classes; ++c) names.push_back("K" + std::to_string(c));
  for (std::size_t i = 0; i < labels.size(); ++i) ids.push_back("r" + std::to_string(1000 + i));
  return {names, ids, labels, std::vector<wise::Split>(labels.size(), wise::Split::train)};
}

inline wise::AnnotationMatrix matrix_from_rows(const std::vector<std::vector<std::uint8_t>>& rows) {
  wise::AnnotationMatrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

// TRI ground truth plus one atypical class-A instance with pattern 1000,
// stored as the last row.
struct AtypicalTri {
  wise::ConceptBank bank;
  wise::DatasetManifest manifest;
  wise::AnnotationMatrix annotations;
  std::size_t atypical_row = 0;
};

inline AtypicalTri atypical_tri() {
  const auto tri = wise::generate_synthetic(wise::tri_config());
  AtypicalTri out;
  out.bank = tri.bank;
  const std::size_t n = tri.annotations.rows();
  out.annotations = wise::AnnotationMatrix(n + 1, 4);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t m = 0; m < 4; ++m) out.annotations(i, m) = tri.annotations(i, m);
  out.annotations(n, 0) = 1;
  auto ids = tri.manifest.instance_ids();
  ids.push_back("tri_atypical");
  auto labels = tri.manifest.labels();
  labels.push_back(0);
  auto splits = tri.manifest.splits();
  splits.push_back(wise::Split::train);
  out.manifest = wise::DatasetManifest(tri.manifest.class_names(), ids, labels, splits);
  out.atypical_row = n;
  return out;
}

inline wise::RealMatrix as_real(const wise::AnnotationMatrix& a) {
  wise::RealMatrix r(a.rows(), a.cols());
  for (std::size_t k = 0; k < a.data().size(); ++k) r.data()[k] = a.data()[k];
  return r;
}

// Random TreeSamples backing store.
struct RandomSamples {
  std::vector<std::vector<std::uint8_t>> rows;
  wise::TreeSamples samples;
};

inline RandomSamples random_samples(std::mt19937_64& gen, std::size_t n, std::size_t m, std::size_t targets,
                                    double density = 0.5) {
  RandomSamples r;
  std::bernoulli_distribution bit(density);
  std::uniform_int_distribution<std::size_t> target(0, targets - 1);
  r.rows.resize(n, std::vector<std::uint8_t>(m));
  for (auto& row : r.rows)
    for (auto& v : row) v = bit(gen);
  r.samples.num_targets = targets;
  for (auto& row : r.rows) r.samples.add(row, target(gen));
  return r;
}

}  // namespace fixture
