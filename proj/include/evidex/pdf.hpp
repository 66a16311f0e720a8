#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "evidex/error.hpp"

namespace evidex::pdf {

class ParseError : public Error {
 public:
  using Error::Error;
};

// Minimal structural PDF reader: cross-reference tables and streams, object
// streams, the page tree, and text-showing operators in content streams. It
// does not render anything.

struct Ref {
  int64_t num = 0;
  int64_t gen = 0;
  friend auto operator<=>(const Ref&, const Ref&) = default;
};

struct Name {
  std::string value;
};

struct Object;
using Array = std::vector<Object>;
using Dict = std::map<std::string, Object, std::less<>>;

struct Stream {
  std::shared_ptr<Dict> dict;
  std::string raw;
};

struct Object {
  std::variant<std::monostate, bool, int64_t, double, std::string, Name, std::shared_ptr<Array>, std::shared_ptr<Dict>,
               Ref, std::shared_ptr<Stream>>
      value;

  bool is_null() const { return std::holds_alternative<std::monostate>(value); }
  const Dict* dict() const;
  const Array* array() const;
  const Stream* stream() const;
  const Ref* ref() const;
  const Name* name() const;
  const int64_t* integer() const;
  const std::string* string() const;
};

class Document {
 public:
  // Throws ParseError (an evidex::Error) when the bytes are not a readable PDF.
  static Document parse(std::span<const std::byte> bytes);
  static Document parse(std::string_view bytes);

  std::size_t page_count() const { return pages_.size(); }

  // Text lines recovered from the page's content stream(s), in drawing order.
  // Each line break operator (T*, ', ", Td/TD with vertical motion) ends a line.
  std::vector<std::string> page_lines(std::size_t page) const;

 private:
  Document() = default;

  Object resolve(const Object& obj) const;
  Object load(Ref ref) const;
  void build_xref();
  std::shared_ptr<Dict> read_xref_stream(size_t offset);
  void scan_objects();
  void collect_pages();

  struct XrefEntry {
    enum class Kind { offset, compressed } kind = Kind::offset;
    int64_t offset = 0;     // byte offset, or containing object stream number
    int64_t index = 0;      // index inside the object stream
  };

  std::string data_;
  std::map<int64_t, XrefEntry> xref_;
  std::shared_ptr<Dict> trailer_;
  std::vector<Object> pages_;
  mutable std::map<int64_t, Object> cache_;
};

std::string decode_stream(const Stream& stream, const std::function<Object(const Object&)>& resolver);

// Writes a simple text-only PDF: one content stream per page, one line of
// text per entry, Helvetica. An empty line is written as an empty text run.
struct WriteOptions {
  bool compress = false;
};
std::string write_text_document(const std::vector<std::vector<std::string>>& pages, const WriteOptions& options = {});

}  // namespace evidex::pdf
