#include "evidex/parquet.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <variant>

#include <fmt/format.h>

#include "evidex/error.hpp"
#include "evidex/ingest.hpp"

namespace evidex::parquet {

namespace {

// Thrift compact protocol type ids.
enum : uint8_t {
  kBoolTrue = 1,
  kBoolFalse = 2,
  kByte = 3,
  kI16 = 4,
  kI32 = 5,
  kI64 = 6,
  kDouble = 7,
  kBinary = 8,
  kList = 9,
  kSet = 10,
  kMap = 11,
  kStruct = 12,
};

// Parquet enum values used below.
constexpr int32_t kTypeByteArray = 6;
constexpr int32_t kRepetitionOptional = 1;
constexpr int32_t kConvertedUtf8 = 0;
constexpr int32_t kEncodingPlain = 0;
constexpr int32_t kEncodingRle = 3;
constexpr int32_t kCodecUncompressed = 0;
constexpr int32_t kPageData = 0;

class Writer {
 public:
  std::string out;

  void varint(uint64_t v) {
    while (v >= 0x80) {
      out += static_cast<char>((v & 0x7f) | 0x80);
      v >>= 7;
    }
    out += static_cast<char>(v);
  }
  static uint64_t zigzag(int64_t v) { return (static_cast<uint64_t>(v) << 1) ^ static_cast<uint64_t>(v >> 63); }

  void field(int16_t id, uint8_t type) {
    const int16_t delta = static_cast<int16_t>(id - last_.back());
    if (delta > 0 && delta <= 15) {
      out += static_cast<char>((delta << 4) | type);
    } else {
      out += static_cast<char>(type);
      varint(zigzag(id));
    }
    last_.back() = id;
  }
  void i32(int16_t id, int32_t v) {
    field(id, kI32);
    varint(zigzag(v));
  }
  void i64(int16_t id, int64_t v) {
    field(id, kI64);
    varint(zigzag(v));
  }
  void binary(int16_t id, std::string_view s) {
    field(id, kBinary);
    raw_binary(s);
  }
  void raw_binary(std::string_view s) {
    varint(s.size());
    out += s;
  }
  void list_header(int16_t id, uint8_t elem, std::size_t n) {
    field(id, kList);
    if (n < 15) {
      out += static_cast<char>((n << 4) | elem);
    } else {
      out += static_cast<char>(0xf0 | elem);
      varint(n);
    }
  }
  void begin_struct(int16_t id) {
    field(id, kStruct);
    begin_nested();
  }
  // Struct that is a list element: no field header.
  void begin_nested() { last_.push_back(0); }
  void end_struct() {
    out += '\0';
    last_.pop_back();
  }

 private:
  std::vector<int16_t> last_{0};
};

void le32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

// RLE runs of definition levels (bit width 1), length-prefixed.
std::string definition_levels(const std::vector<bool>& present) {
  Writer w;
  std::size_t i = 0;
  while (i < present.size()) {
    std::size_t j = i;
    while (j < present.size() && present[j] == present[i]) ++j;
    w.varint(static_cast<uint64_t>(j - i) << 1);
    w.out += static_cast<char>(present[i] ? 1 : 0);
    i = j;
  }
  std::string framed;
  le32(framed, static_cast<uint32_t>(w.out.size()));
  return framed + w.out;
}

}  // namespace

std::string serialize(const Table& table) {
  for (const auto& row : table.rows)
    if (row.size() != table.columns.size())
      throw InvalidArgument(fmt::format("row has {} cells, table has {} columns", row.size(), table.columns.size()));

  std::string file = "PAR1";
  struct ChunkInfo {
    int64_t offset;
    int64_t size;
  };
  std::vector<ChunkInfo> chunks;
  if (!table.rows.empty()) {
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      std::vector<bool> present;
      std::string values;
      for (const auto& row : table.rows) {
        present.push_back(row[c].has_value());
        if (row[c]) {
          le32(values, static_cast<uint32_t>(row[c]->size()));
          values += *row[c];
        }
      }
      const std::string body = definition_levels(present) + values;
      Writer h;
      h.i32(1, kPageData);
      h.i32(2, static_cast<int32_t>(body.size()));
      h.i32(3, static_cast<int32_t>(body.size()));
      h.begin_struct(5);
      h.i32(1, static_cast<int32_t>(table.rows.size()));
      h.i32(2, kEncodingPlain);
      h.i32(3, kEncodingRle);
      h.i32(4, kEncodingRle);
      h.end_struct();
      h.out += '\0';
      chunks.push_back({static_cast<int64_t>(file.size()), static_cast<int64_t>(h.out.size() + body.size())});
      file += h.out;
      file += body;
    }
  }

  Writer m;
  m.i32(1, 1);
  m.list_header(2, kStruct, table.columns.size() + 1);
  m.begin_nested();
  m.binary(4, "schema");
  m.i32(5, static_cast<int32_t>(table.columns.size()));
  m.end_struct();
  for (const auto& name : table.columns) {
    m.begin_nested();
    m.i32(1, kTypeByteArray);
    m.i32(3, kRepetitionOptional);
    m.binary(4, name);
    m.i32(6, kConvertedUtf8);
    m.begin_struct(10);  // LogicalType
    m.begin_struct(1);   // STRING
    m.end_struct();
    m.end_struct();
    m.end_struct();
  }
  m.i64(3, static_cast<int64_t>(table.rows.size()));
  m.list_header(4, kStruct, chunks.empty() ? 0 : 1);
  if (!chunks.empty()) {
    m.begin_nested();
    m.list_header(1, kStruct, chunks.size());
    int64_t total = 0;
    for (std::size_t c = 0; c < chunks.size(); ++c) {
      total += chunks[c].size;
      m.begin_nested();
      m.i64(2, chunks[c].offset);
      m.begin_struct(3);
      m.i32(1, kTypeByteArray);
      m.list_header(2, kI32, 2);
      m.varint(Writer::zigzag(kEncodingPlain));
      m.varint(Writer::zigzag(kEncodingRle));
      m.list_header(3, kBinary, 1);
      m.raw_binary(table.columns[c]);
      m.i32(4, kCodecUncompressed);
      m.i64(5, static_cast<int64_t>(table.rows.size()));
      m.i64(6, chunks[c].size);
      m.i64(7, chunks[c].size);
      m.i64(9, chunks[c].offset);
      m.end_struct();
      m.end_struct();
    }
    m.i64(2, total);
    m.i64(3, static_cast<int64_t>(table.rows.size()));
    m.end_struct();
  }
  m.binary(6, "evidex");
  m.out += '\0';

  file += m.out;
  le32(file, static_cast<uint32_t>(m.out.size()));
  file += "PAR1";
  return file;
}

void write_file(const std::filesystem::path& file, const Table& table) {
  const std::string bytes = serialize(table);
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + file.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

namespace {

// Generic compact-protocol value, enough to walk Parquet metadata.
struct Value;
using Struct = std::map<int16_t, Value>;
using List = std::vector<Value>;
struct Value {
  std::variant<int64_t, std::string, std::shared_ptr<List>, std::shared_ptr<Struct>, bool, double> v;

  int64_t integer() const {
    if (const auto* i = std::get_if<int64_t>(&v)) return *i;
    throw InvalidArgument("parquet metadata: expected integer");
  }
  const std::string& bytes() const {
    if (const auto* s = std::get_if<std::string>(&v)) return *s;
    throw InvalidArgument("parquet metadata: expected binary");
  }
  const List& list() const {
    if (const auto* l = std::get_if<std::shared_ptr<List>>(&v)) return **l;
    throw InvalidArgument("parquet metadata: expected list");
  }
  const Struct& fields() const {
    if (const auto* s = std::get_if<std::shared_ptr<Struct>>(&v)) return **s;
    throw InvalidArgument("parquet metadata: expected struct");
  }
};

const Value& member(const Struct& s, int16_t id) {
  const auto it = s.find(id);
  if (it == s.end()) throw InvalidArgument(fmt::format("parquet metadata: missing field {}", id));
  return it->second;
}

class Reader {
 public:
  Reader(std::string_view data, std::size_t pos) : data_(data), pos_(pos) {}

  std::size_t pos() const { return pos_; }

  uint8_t byte() {
    if (pos_ >= data_.size()) throw InvalidArgument("parquet: truncated metadata");
    return static_cast<uint8_t>(data_[pos_++]);
  }
  uint64_t varint() {
    uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      const uint8_t b = byte();
      v |= static_cast<uint64_t>(b & 0x7f) << shift;
      if (!(b & 0x80)) return v;
    }
    throw InvalidArgument("parquet: varint too long");
  }
  int64_t zigzag() {
    const uint64_t u = varint();
    return static_cast<int64_t>(u >> 1) ^ -static_cast<int64_t>(u & 1);
  }
  std::string binary() {
    const uint64_t n = varint();
    if (n > data_.size() - pos_) throw InvalidArgument("parquet: truncated binary");
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  Value read(uint8_t type) {
    switch (type) {
      case kBoolTrue: return {true};
      case kBoolFalse: return {false};
      case kByte: return {static_cast<int64_t>(static_cast<int8_t>(byte()))};
      case kI16:
      case kI32:
      case kI64: return {zigzag()};
      case kDouble: {
        if (data_.size() - pos_ < 8) throw InvalidArgument("parquet: truncated double");
        double d;
        std::memcpy(&d, data_.data() + pos_, 8);
        pos_ += 8;
        return {d};
      }
      case kBinary: return {binary()};
      case kList:
      case kSet: {
        const uint8_t h = byte();
        uint64_t n = h >> 4;
        if (n == 15) n = varint();
        const uint8_t elem = h & 0x0f;
        auto list = std::make_shared<List>();
        for (uint64_t i = 0; i < n; ++i) {
          // Booleans inside lists are one byte each.
          if (elem == kBoolTrue || elem == kBoolFalse) {
            list->push_back({byte() == 1});
          } else {
            list->push_back(read(elem));
          }
        }
        return {list};
      }
      case kStruct: return {read_struct()};
      default: throw InvalidArgument(fmt::format("parquet: unsupported thrift type {}", type));
    }
  }

  std::shared_ptr<Struct> read_struct() {
    auto s = std::make_shared<Struct>();
    int16_t last = 0;
    for (;;) {
      const uint8_t h = byte();
      if (h == 0) return s;
      const uint8_t type = h & 0x0f;
      const int delta = h >> 4;
      const int16_t id = delta ? static_cast<int16_t>(last + delta) : static_cast<int16_t>(zigzag());
      last = id;
      (*s)[id] = read(type);
    }
  }

 private:
  std::string_view data_;
  std::size_t pos_;
};

uint32_t read_le32(std::string_view data, std::size_t pos) {
  if (pos + 4 > data.size()) throw InvalidArgument("parquet: truncated");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(data[pos + i])) << (8 * i);
  return v;
}

}  // namespace

Table parse(std::string_view bytes) {
  if (bytes.size() < 12 || bytes.substr(0, 4) != "PAR1" || bytes.substr(bytes.size() - 4) != "PAR1")
    throw InvalidArgument("not a parquet file");
  const uint32_t meta_len = read_le32(bytes, bytes.size() - 8);
  if (meta_len > bytes.size() - 12) throw InvalidArgument("parquet: bad footer length");
  Reader meta(bytes, bytes.size() - 8 - meta_len);
  const auto file_meta = meta.read_struct();

  Table table;
  const List& schema = member(*file_meta, 2).list();
  for (std::size_t i = 1; i < schema.size(); ++i) table.columns.push_back(member(schema[i].fields(), 4).bytes());
  const int64_t num_rows = member(*file_meta, 3).integer();
  table.rows.assign(static_cast<std::size_t>(num_rows), std::vector<std::optional<std::string>>(table.columns.size()));

  const List& groups = member(*file_meta, 4).list();
  int64_t row_base = 0;
  for (const auto& group : groups) {
    const List& columns = member(group.fields(), 1).list();
    const int64_t group_rows = member(group.fields(), 3).integer();
    if (columns.size() != table.columns.size()) throw InvalidArgument("parquet: row group column count mismatch");
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const Struct& cmeta = member(columns[c].fields(), 3).fields();
      if (member(cmeta, 4).integer() != kCodecUncompressed) throw InvalidArgument("parquet: compressed column");
      Reader page(bytes, static_cast<std::size_t>(member(cmeta, 9).integer()));
      const auto header = page.read_struct();
      if (member(*header, 1).integer() != kPageData) throw InvalidArgument("parquet: expected a data page");
      const int64_t size = member(*header, 3).integer();
      const int64_t values = member(member(*header, 5).fields(), 1).integer();
      if (values != group_rows) throw InvalidArgument("parquet: multi-page columns are not supported");
      std::size_t pos = page.pos();
      const std::size_t end = pos + static_cast<std::size_t>(size);
      if (end > bytes.size()) throw InvalidArgument("parquet: truncated page");
      const uint32_t levels_len = read_le32(bytes, pos);
      pos += 4;
      std::vector<bool> present;
      Reader levels(bytes.substr(0, pos + levels_len), pos);
      while (levels.pos() < pos + levels_len && static_cast<int64_t>(present.size()) < values) {
        const uint64_t h = levels.varint();
        if (h & 1) {
          const uint64_t groups8 = h >> 1;
          for (uint64_t g = 0; g < groups8; ++g) {
            const uint8_t b = levels.byte();
            for (int bit = 0; bit < 8; ++bit) present.push_back((b >> bit) & 1);
          }
        } else {
          const bool v = levels.byte() != 0;
          present.insert(present.end(), h >> 1, v);
        }
      }
      present.resize(static_cast<std::size_t>(values));
      pos += levels_len;
      for (int64_t r = 0; r < values; ++r) {
        if (!present[static_cast<std::size_t>(r)]) continue;
        const uint32_t n = read_le32(bytes, pos);
        pos += 4;
        if (pos + n > end) throw InvalidArgument("parquet: value overruns page");
        table.rows[static_cast<std::size_t>(row_base + r)][c] = std::string(bytes.substr(pos, n));
        pos += n;
      }
    }
    row_base += group_rows;
  }
  return table;
}

Table read_file(const std::filesystem::path& file) { return parse(evidex::read_file(file)); }

}  // namespace evidex::parquet
