#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace evidex::csv {

// RFC 4180: fields holding a comma, quote, CR or LF are quoted, quotes are
// doubled, records end with CRLF.
std::string escape(std::string_view field);
void write_row(std::ostream& out, const std::vector<std::string>& fields);
std::string format_row(const std::vector<std::string>& fields);

// Accepts CRLF or LF record ends. A trailing record end does not produce an
// empty record. Throws InvalidArgument on an unterminated quoted field.
std::vector<std::vector<std::string>> parse(std::string_view text);
std::vector<std::vector<std::string>> read_file(const std::filesystem::path& file);

}  // namespace evidex::csv
