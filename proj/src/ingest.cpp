#include "evidex/ingest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <nlohmann/json.hpp>

#include "evidex/error.hpp"
#include "evidex/pdf.hpp"
#include "evidex/text.hpp"

namespace fs = std::filesystem;

namespace evidex {

SourceKey::SourceKey(std::string hex) : hex_(std::move(hex)) {
  const bool ok = hex_.size() == 40 && std::all_of(hex_.begin(), hex_.end(), [](char c) {
                    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
                  });
  if (!ok) throw InvalidArgument("source key must be 40 lowercase hex characters: '" + hex_ + "'");
}

std::string canonical_id(std::string_view path) {
  if (path.empty()) throw InvalidPath("empty path");
  std::string s = text::case_fold(text::nfc(path));
  std::replace(s.begin(), s.end(), '\\', '/');
  return text::collapse_whitespace(s);
}

SourceKey source_key(std::string_view canonical) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(canonical.data(), canonical.size(), digest, &length, EVP_sha1(), nullptr) != 1)
    throw Error("SHA-1 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(length * 2);
  for (unsigned int i = 0; i < length; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xF]);
  }
  return SourceKey(std::move(hex));
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<size_t>(n));
  return out;
}

std::string base64_encode(std::span<const std::byte> bytes) {
  return base64_encode(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw InvalidArgument("base64 length is not a multiple of 4");
  std::string out(3 * text.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw InvalidArgument("invalid base64");
  size_t padding = 0;
  if (!text.empty() && text.back() == '=') ++padding;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++padding;
  out.resize(static_cast<size_t>(n) - padding);
  return out;
}

std::string encode_data_url(std::string_view pdf_bytes) {
  if (pdf_bytes.empty()) throw EmptyDocument("cannot encode an empty document");
  return std::string(kDataUrlPrefix) + base64_encode(pdf_bytes);
}

std::string decode_data_url(std::string_view data_url) {
  if (!data_url.starts_with(kDataUrlPrefix)) throw InvalidArgument("not a PDF data URL");
  return base64_decode(data_url.substr(kDataUrlPrefix.size()));
}

int page_count(std::string_view pdf_bytes) {
  std::size_t n = 0;
  try {
    n = pdf::Document::parse(pdf_bytes).page_count();
  } catch (const Error& e) {
    throw ExcludedDocument(std::string("unparseable PDF: ") + e.what());
  }
  if (n == 0) throw ExcludedDocument("zero pages");
  return static_cast<int>(n);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidPath("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string relative_canonical_id(const fs::path& root, const fs::path& path) {
  return canonical_id(path.lexically_relative(root).generic_string());
}

std::vector<fs::path> discover(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw ConfigError("corpus root is not a directory: " + root.string());
  std::vector<std::pair<std::string, fs::path>> found;
  for (auto it = fs::recursive_directory_iterator(root, fs::directory_options::skip_permission_denied);
       it != fs::recursive_directory_iterator(); ++it) {
    if (!it->is_regular_file()) continue;
    if (text::to_lower_ascii(it->path().extension().string()) != ".pdf") continue;
    found.emplace_back(relative_canonical_id(root, it->path()), it->path());
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> paths;
  paths.reserve(found.size());
  for (auto& [id, p] : found) paths.push_back(std::move(p));
  return paths;
}

DocumentDescriptor describe(const fs::path& root, const fs::path& path) {
  DocumentDescriptor d;
  d.path = path;
  d.canonical_id = relative_canonical_id(root, path);
  d.key = source_key(d.canonical_id);
  const std::string bytes = read_file(path);
  if (bytes.empty()) throw ExcludedDocument("empty file");
  d.data_url = encode_data_url(bytes);
  d.page_count = page_count(bytes);
  return d;
}

ProcessedIndex::ProcessedIndex(fs::path file) : file_(std::move(file)) {
  std::ifstream in(file_);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      // A torn final line from a crash mid-append is ignored; its document
      // simply gets processed again.
      continue;
    }
    IndexEntry e;
    e.completed_at = j.value("completed_at", "");
    e.schema_version = j.value("schema_version", "");
    e.unit_count = j.value("unit_count", int64_t{0});
    entries_.emplace(SourceKey(j.at("key").get<std::string>()), std::move(e));
  }
}

bool ProcessedIndex::is_processed(const SourceKey& key) const {
  std::lock_guard lock(mutex_);
  return entries_.contains(key);
}

std::optional<IndexEntry> ProcessedIndex::find(const SourceKey& key) const {
  std::lock_guard lock(mutex_);
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ProcessedIndex::mark_processed(const SourceKey& key, const IndexEntry& entry) {
  std::lock_guard lock(mutex_);
  if (!entries_.emplace(key, entry).second) return;
  if (file_.empty()) return;
  if (file_.has_parent_path()) fs::create_directories(file_.parent_path());
  std::ofstream out(file_, std::ios::app);
  nlohmann::ordered_json j;
  j["key"] = key.hex();
  j["completed_at"] = entry.completed_at;
  j["schema_version"] = entry.schema_version;
  j["unit_count"] = entry.unit_count;
  out << j.dump() << '\n';
  out.flush();
  if (!out) throw Error("failed to append to " + file_.string());
}

std::size_t ProcessedIndex::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

void ExclusionLog::record(std::string_view canonical_id, std::string_view reason) {
  std::string clean(reason);
  std::replace_if(clean.begin(), clean.end(), [](char c) { return c == '\t' || c == '\n' || c == '\r'; }, ' ');
  std::lock_guard lock(mutex_);
  if (file_.has_parent_path()) fs::create_directories(file_.parent_path());
  std::ofstream out(file_, std::ios::app);
  out << canonical_id << '\t' << clean << '\n';
}

}  // namespace evidex
