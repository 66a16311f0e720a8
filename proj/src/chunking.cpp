#include "evidex/chunking.hpp"

#include <regex>

#include <fmt/format.h>

#include "evidex/error.hpp"
#include "evidex/text.hpp"

namespace evidex {

DocumentUnit DocumentUnit::chunk(const SourceKey& parent, PageRange range) {
  DocumentUnit u;
  u.parent = parent;
  u.kind = UnitKind::page_chunk;
  u.pages = range;
  u.unit_id = fmt::format("{}:p{}-{}", parent.hex(), range.start, range.end);
  return u;
}

DocumentUnit DocumentUnit::caption(const SourceKey& parent, CaptionOrigin origin, std::string text) {
  if (text.empty()) throw InvalidArgument("caption text must be non-empty");
  DocumentUnit u;
  u.parent = parent;
  u.kind = UnitKind::caption_unit;
  u.caption_text = std::move(text);
  u.caption_origin = origin;
  u.unit_id = fmt::format("{}:c{}.{}", parent.hex(), origin.page, origin.ordinal);
  return u;
}

std::vector<PageRange> plan_page_chunks(int n, int k) {
  if (n <= 0) throw InvalidArgument(fmt::format("page count must be positive, got {}", n));
  if (k <= 0) throw InvalidArgument(fmt::format("pages per chunk must be positive, got {}", k));
  std::vector<PageRange> ranges;
  ranges.reserve(static_cast<size_t>((n + k - 1) / k));
  for (int start = 0; start < n; start += k) ranges.push_back({start, std::min(start + k, n)});
  return ranges;
}

std::vector<DocumentUnit> build_chunk_units(const SourceKey& parent, int n, int k) {
  std::vector<DocumentUnit> units;
  for (const auto& r : plan_page_chunks(n, k)) units.push_back(DocumentUnit::chunk(parent, r));
  return units;
}

bool is_caption(std::string_view paragraph) {
  static const std::regex kCaption(
      R"(^\s*(supplementary\s+(figure|table)|figure|fig\.|table)(\s+|(?=[0-9]))([a-z]?[0-9]+[a-z]?|[a-z]|[ivx]+)\s*[.:|])",
      std::regex::icase | std::regex::ECMAScript);
  return std::regex_search(paragraph.begin(), paragraph.end(), kCaption);
}

CaptionGrammar::CaptionGrammar(const std::string& pattern) {
  if (pattern.empty()) return;
  try {
    custom_.emplace(pattern, std::regex::icase | std::regex::ECMAScript);
  } catch (const std::regex_error& e) {
    throw ConfigError(fmt::format("caption pattern does not compile: {}", e.what()));
  }
}

bool CaptionGrammar::matches(std::string_view paragraph) const {
  if (!custom_) return is_caption(paragraph);
  return std::regex_search(paragraph.begin(), paragraph.end(), *custom_);
}

std::vector<DocumentUnit> extract_caption_units(const std::vector<std::string>& page_markdowns, const SourceKey& parent,
                                                int first_page, const CaptionGrammar& grammar) {
  std::vector<DocumentUnit> units;
  for (size_t p = 0; p < page_markdowns.size(); ++p) {
    const int page = first_page + static_cast<int>(p);
    int ordinal = 0;
    std::vector<std::string> paragraph;
    const auto close = [&] {
      if (paragraph.empty()) return;
      std::string block = text::trim(text::join(paragraph, "\n"));
      paragraph.clear();
      if (!block.empty() && grammar.matches(block))
        units.push_back(DocumentUnit::caption(parent, {page, ordinal++}, std::move(block)));
    };
    for (const auto& line : text::split_lines(page_markdowns[p])) {
      if (text::trim(line).empty()) {
        close();
      } else {
        paragraph.push_back(line);
      }
    }
    close();
  }
  return units;
}

}  // namespace evidex
