#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace evidex::text {

std::string nfc(std::string_view utf8);

// Full Unicode case folding (not ASCII lowering).
std::string case_fold(std::string_view utf8);

// Collapses runs of Unicode white space to one ASCII space and strips both ends.
std::string collapse_whitespace(std::string_view utf8);

std::string trim(std::string_view s);

// Trim + NFC; the canonical form used when comparing labels and text scalars.
std::string canonical(std::string_view utf8);

std::string to_lower_ascii(std::string_view s);

std::vector<std::string> split_lines(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

bool contains_ci(std::string_view haystack, std::string_view needle);

}  // namespace evidex::text
