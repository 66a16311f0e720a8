#pragma once

#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "evidex/ingest.hpp"

namespace evidex {

// Half-open 0-based page interval.
struct PageRange {
  int start = 0;
  int end = 0;
  int size() const { return end - start; }
  friend bool operator==(const PageRange&, const PageRange&) = default;
};

struct CaptionOrigin {
  int page = 0;
  int ordinal = 0;
  friend bool operator==(const CaptionOrigin&, const CaptionOrigin&) = default;
};

enum class UnitKind { page_chunk, caption_unit };

struct DocumentUnit {
  SourceKey parent;
  UnitKind kind = UnitKind::page_chunk;
  std::optional<PageRange> pages;          // page_chunk only
  std::string caption_text;                // caption_unit only
  std::optional<CaptionOrigin> caption_origin;
  std::string unit_id;

  static DocumentUnit chunk(const SourceKey& parent, PageRange range);
  static DocumentUnit caption(const SourceKey& parent, CaptionOrigin origin, std::string text);
};

inline constexpr int kDefaultMaxPages = 8;

// ceil(n/k) consecutive ranges covering [0, n); only the last may be short.
std::vector<PageRange> plan_page_chunks(int n, int k);

std::vector<DocumentUnit> build_chunk_units(const SourceKey& parent, int n, int k);

// True when the paragraph opens with a figure/table caption label, e.g.
// "Figure 2.", "Fig. 3:", "Table S1 |", "Supplementary Table 4.".
bool is_caption(std::string_view paragraph);

class CaptionGrammar {
 public:
  CaptionGrammar() = default;
  // Case-insensitive ECMAScript regex searched against each paragraph; an
  // empty pattern selects the built-in grammar. Throws ConfigError if the
  // pattern does not compile.
  explicit CaptionGrammar(const std::string& pattern);

  bool matches(std::string_view paragraph) const;

 private:
  std::optional<std::regex> custom_;
};

// Paragraphs are runs of non-blank lines. Each caption paragraph on each page
// becomes one unit, ordered by (page, position). `first_page` is the page
// index of page_markdowns[0]. A caption split by a page break yields two
// units, one per page.
std::vector<DocumentUnit> extract_caption_units(const std::vector<std::string>& page_markdowns, const SourceKey& parent,
                                                int first_page = 0, const CaptionGrammar& grammar = {});

}  // namespace evidex
