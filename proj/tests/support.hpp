#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "evidex/schema.hpp"

namespace evidex::testing {

inline std::filesystem::path source_dir() { return EVIDEX_SOURCE_DIR; }
inline std::filesystem::path data_dir() { return EVIDEX_TEST_DATA; }
inline std::filesystem::path schema_file() { return source_dir() / "schemas" / "doac.v1.json"; }
inline std::filesystem::path keywords_file() { return source_dir() / "schemas" / "doac.v1.keywords.tsv"; }

inline const SchemaSet& bundled_schema() {
  static const SchemaSet schema = load_schema_set(schema_file());
  return schema;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("evidex-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace evidex::testing
