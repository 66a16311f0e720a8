#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace evidex::parquet {

// A table of optional UTF-8 strings. Enough Parquet for study tables: one row
// group, one uncompressed PLAIN data page per column, nulls as definition
// levels.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::optional<std::string>>> rows;
};

std::string serialize(const Table& table);
void write_file(const std::filesystem::path& file, const Table& table);

// Reads files in the layout written above. Throws InvalidArgument otherwise.
Table parse(std::string_view bytes);
Table read_file(const std::filesystem::path& file);

}  // namespace evidex::parquet
