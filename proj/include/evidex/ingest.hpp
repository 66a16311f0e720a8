#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace evidex {

// Lowercase hex SHA-1 of a canonical identifier.
class SourceKey {
 public:
  SourceKey() = default;
  // Throws InvalidArgument unless `hex` is 40 lowercase hex characters.
  explicit SourceKey(std::string hex);

  const std::string& hex() const noexcept { return hex_; }
  bool empty() const noexcept { return hex_.empty(); }

  friend auto operator<=>(const SourceKey&, const SourceKey&) = default;

 private:
  std::string hex_;
};

struct DocumentDescriptor {
  std::filesystem::path path;
  std::string canonical_id;
  SourceKey key;
  int page_count = 0;
  std::string data_url;
};

inline constexpr std::string_view kDataUrlPrefix = "data:application/pdf;base64,";

// NFC, full case folding, '\' -> '/', whitespace collapsed and stripped.
std::string canonical_id(std::string_view path);

SourceKey source_key(std::string_view canonical);

std::string base64_encode(std::span<const std::byte> bytes);
std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

std::string encode_data_url(std::string_view pdf_bytes);
std::string decode_data_url(std::string_view data_url);

// Throws ExcludedDocument when the bytes do not parse or report zero pages.
int page_count(std::string_view pdf_bytes);

std::string read_file(const std::filesystem::path& path);

// All *.pdf files under `root` (recursive, extension case-insensitive),
// ordered by the canonical id of their root-relative path.
std::vector<std::filesystem::path> discover(const std::filesystem::path& root);

// Canonical id of `path` relative to `root`, with generic '/' separators.
std::string relative_canonical_id(const std::filesystem::path& root, const std::filesystem::path& path);

// Reads, hashes, encodes and page-counts one corpus file.
DocumentDescriptor describe(const std::filesystem::path& root, const std::filesystem::path& path);

struct IndexEntry {
  std::string completed_at;
  std::string schema_version;
  int64_t unit_count = 0;
};

// Append-only record of completed documents, persisted as JSON lines. One
// writer per file; lookups see the snapshot loaded at open plus this
// process's own appends.
class ProcessedIndex {
 public:
  ProcessedIndex() = default;
  explicit ProcessedIndex(std::filesystem::path file);

  bool is_processed(const SourceKey& key) const;
  std::optional<IndexEntry> find(const SourceKey& key) const;

  // No-op if the key is already present: entries are never rewritten.
  void mark_processed(const SourceKey& key, const IndexEntry& entry);

  std::size_t size() const;

 private:
  std::filesystem::path file_;
  mutable std::mutex mutex_;
  std::map<SourceKey, IndexEntry> entries_;
};

// Tab-separated audit trail of documents dropped before annotation.
class ExclusionLog {
 public:
  explicit ExclusionLog(std::filesystem::path file) : file_(std::move(file)) {}
  void record(std::string_view canonical_id, std::string_view reason);

 private:
  std::filesystem::path file_;
  std::mutex mutex_;
};

}  // namespace evidex
