#include "evidex/pdf.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cstring>
#include <set>

#include <fmt/format.h>

namespace evidex::pdf {

const Dict* Object::dict() const {
  if (const auto* d = std::get_if<std::shared_ptr<Dict>>(&value)) return d->get();
  if (const auto* s = std::get_if<std::shared_ptr<Stream>>(&value)) return (*s)->dict.get();
  return nullptr;
}
const Array* Object::array() const {
  const auto* a = std::get_if<std::shared_ptr<Array>>(&value);
  return a ? a->get() : nullptr;
}
const Stream* Object::stream() const {
  const auto* s = std::get_if<std::shared_ptr<Stream>>(&value);
  return s ? s->get() : nullptr;
}
const Ref* Object::ref() const { return std::get_if<Ref>(&value); }
const Name* Object::name() const { return std::get_if<Name>(&value); }
const int64_t* Object::integer() const { return std::get_if<int64_t>(&value); }
const std::string* Object::string() const { return std::get_if<std::string>(&value); }

namespace {

constexpr int kMaxDepth = 64;

bool is_ws(char c) { return c == ' ' || c == '\n' || c == '\r' || c == '\t' || c == '\f' || c == '\0'; }
bool is_delim(char c) {
  return c == '(' || c == ')' || c == '<' || c == '>' || c == '[' || c == ']' || c == '{' || c == '}' || c == '/' ||
         c == '%';
}
bool is_regular(char c) { return !is_ws(c) && !is_delim(c); }

const Object* find(const Dict& d, std::string_view key) {
  const auto it = d.find(key);
  return it == d.end() ? nullptr : &it->second;
}

std::string utf16be_to_utf8(std::string_view s) {
  std::string out;
  for (size_t i = 0; i + 1 < s.size(); i += 2) {
    uint32_t cp = (static_cast<uint8_t>(s[i]) << 8) | static_cast<uint8_t>(s[i + 1]);
    if (cp >= 0xD800 && cp <= 0xDBFF && i + 3 < s.size()) {
      const uint32_t lo = (static_cast<uint8_t>(s[i + 2]) << 8) | static_cast<uint8_t>(s[i + 3]);
      if (lo >= 0xDC00 && lo <= 0xDFFF) {
        cp = 0x10000 + ((cp - 0xD800) << 10) + (lo - 0xDC00);
        i += 2;
      }
    }
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

std::string text_of(const std::string& raw) {
  if (raw.size() >= 2 && static_cast<uint8_t>(raw[0]) == 0xFE && static_cast<uint8_t>(raw[1]) == 0xFF)
    return utf16be_to_utf8(std::string_view(raw).substr(2));
  return raw;
}

class Lexer {
 public:
  explicit Lexer(std::string_view data, size_t pos = 0) : data_(data), pos_(pos) {}

  size_t pos() const { return pos_; }
  void seek(size_t pos) { pos_ = pos; }
  bool at_end() { skip_ws(); return pos_ >= data_.size(); }

  void skip_ws() {
    while (pos_ < data_.size()) {
      const char c = data_[pos_];
      if (is_ws(c)) {
        ++pos_;
      } else if (c == '%') {
        while (pos_ < data_.size() && data_[pos_] != '\n' && data_[pos_] != '\r') ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view keyword() {
    skip_ws();
    const size_t start = pos_;
    while (pos_ < data_.size() && is_regular(data_[pos_])) ++pos_;
    return data_.substr(start, pos_ - start);
  }

  bool try_keyword(std::string_view kw) {
    const size_t saved = pos_;
    if (keyword() == kw) return true;
    pos_ = saved;
    return false;
  }

  int64_t integer() {
    const auto tok = keyword();
    int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) throw ParseError(fmt::format("expected integer at {}", pos_));
    return v;
  }

  // Parses one object. Bare keywords other than true/false/null are returned
  // through `op` (content-stream operators); `op` stays empty otherwise.
  Object object(std::string* op = nullptr, int depth = 0) {
    if (depth > kMaxDepth) throw ParseError("object nesting too deep");
    skip_ws();
    if (pos_ >= data_.size()) throw ParseError("unexpected end of data");
    const char c = data_[pos_];
    if (c == '/') return Object{Name{name()}};
    if (c == '(') return Object{literal_string()};
    if (c == '<') {
      if (pos_ + 1 < data_.size() && data_[pos_ + 1] == '<') return Object{dictionary(depth)};
      return Object{hex_string()};
    }
    if (c == '[') {
      ++pos_;
      auto arr = std::make_shared<Array>();
      while (true) {
        skip_ws();
        if (pos_ >= data_.size()) throw ParseError("unterminated array");
        if (data_[pos_] == ']') {
          ++pos_;
          break;
        }
        std::string inner_op;
        Object item = object(&inner_op, depth + 1);
        if (!inner_op.empty()) continue;  // stray operator inside an array
        arr->push_back(std::move(item));
      }
      return Object{arr};
    }
    if (c == '+' || c == '-' || c == '.' || (c >= '0' && c <= '9')) return number();
    if (c == ')' || c == '>' || c == ']' || c == '}' || c == '{') {
      ++pos_;
      if (op) return Object{};
      throw ParseError(fmt::format("unexpected delimiter at {}", pos_));
    }
    const auto kw = keyword();
    if (kw == "true") return Object{true};
    if (kw == "false") return Object{false};
    if (kw == "null") return Object{};
    if (op) {
      *op = std::string(kw);
      return Object{};
    }
    throw ParseError(fmt::format("unexpected keyword '{}' at {}", kw, pos_));
  }

  std::shared_ptr<Dict> dictionary(int depth) {
    pos_ += 2;
    auto dict = std::make_shared<Dict>();
    while (true) {
      skip_ws();
      if (pos_ + 1 < data_.size() && data_[pos_] == '>' && data_[pos_ + 1] == '>') {
        pos_ += 2;
        return dict;
      }
      if (pos_ >= data_.size()) throw ParseError("unterminated dictionary");
      if (data_[pos_] != '/') throw ParseError(fmt::format("dictionary key expected at {}", pos_));
      std::string key = name();
      (*dict)[key] = object(nullptr, depth + 1);
    }
  }

  std::string_view data() const { return data_; }

 private:
  std::string name() {
    ++pos_;
    std::string out;
    while (pos_ < data_.size() && is_regular(data_[pos_])) {
      const char c = data_[pos_++];
      if (c == '#' && pos_ + 1 < data_.size()) {
        unsigned v = 0;
        const auto [ptr, ec] = std::from_chars(data_.data() + pos_, data_.data() + pos_ + 2, v, 16);
        if (ec == std::errc() && ptr == data_.data() + pos_ + 2) {
          out.push_back(static_cast<char>(v));
          pos_ += 2;
          continue;
        }
      }
      out.push_back(c);
    }
    return out;
  }

  std::string literal_string() {
    ++pos_;
    std::string out;
    int depth = 1;
    while (pos_ < data_.size()) {
      const char c = data_[pos_++];
      if (c == '\\') {
        if (pos_ >= data_.size()) break;
        const char e = data_[pos_++];
        switch (e) {
          case 'n': out.push_back('\n'); break;
          case 'r': out.push_back('\r'); break;
          case 't': out.push_back('\t'); break;
          case 'b': out.push_back('\b'); break;
          case 'f': out.push_back('\f'); break;
          case '\r':
            if (pos_ < data_.size() && data_[pos_] == '\n') ++pos_;
            break;
          case '\n': break;
          default:
            if (e >= '0' && e <= '7') {
              int v = e - '0';
              for (int k = 0; k < 2 && pos_ < data_.size() && data_[pos_] >= '0' && data_[pos_] <= '7'; ++k)
                v = v * 8 + (data_[pos_++] - '0');
              out.push_back(static_cast<char>(v & 0xFF));
            } else {
              out.push_back(e);
            }
        }
        continue;
      }
      if (c == '(') ++depth;
      if (c == ')' && --depth == 0) return out;
      out.push_back(c);
    }
    throw ParseError("unterminated string");
  }

  std::string hex_string() {
    ++pos_;
    std::string digits;
    while (pos_ < data_.size() && data_[pos_] != '>') {
      if (std::isxdigit(static_cast<unsigned char>(data_[pos_]))) digits.push_back(data_[pos_]);
      ++pos_;
    }
    if (pos_ >= data_.size()) throw ParseError("unterminated hex string");
    ++pos_;
    if (digits.size() % 2) digits.push_back('0');
    std::string out;
    for (size_t i = 0; i < digits.size(); i += 2) {
      unsigned v = 0;
      std::from_chars(digits.data() + i, digits.data() + i + 2, v, 16);
      out.push_back(static_cast<char>(v));
    }
    return out;
  }

  Object number() {
    const size_t start = pos_;
    while (pos_ < data_.size() && is_regular(data_[pos_])) ++pos_;
    const std::string_view tok = data_.substr(start, pos_ - start);
    if (tok.find('.') != std::string_view::npos) {
      std::string copy(tok);
      try {
        return Object{std::stod(copy)};
      } catch (const std::exception&) {
        return Object{0.0};
      }
    }
    int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data() + (tok.starts_with('+') ? 1 : 0), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) return Object{0.0};
    // "num gen R" indirect reference lookahead.
    const size_t saved = pos_;
    skip_ws();
    const size_t gen_start = pos_;
    while (pos_ < data_.size() && data_[pos_] >= '0' && data_[pos_] <= '9') ++pos_;
    if (pos_ > gen_start && (pos_ >= data_.size() || !is_regular(data_[pos_]))) {
      int64_t gen = 0;
      std::from_chars(data_.data() + gen_start, data_.data() + pos_, gen);
      skip_ws();
      if (pos_ < data_.size() && data_[pos_] == 'R' && (pos_ + 1 >= data_.size() || !is_regular(data_[pos_ + 1]))) {
        ++pos_;
        return Object{Ref{v, gen}};
      }
    }
    pos_ = saved;
    return Object{v};
  }

  std::string_view data_;
  size_t pos_;
};

std::string inflate_bytes(std::string_view in) {
  if (in.empty()) return {};  // writers emit zero-length Flate streams for blank pages
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw ParseError("zlib init failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  std::string out;
  char buffer[16384];
  int rc = Z_OK;
  do {
    zs.next_out = reinterpret_cast<Bytef*>(buffer);
    zs.avail_out = sizeof(buffer);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) break;
    out.append(buffer, sizeof(buffer) - zs.avail_out);
  } while (rc != Z_STREAM_END && (zs.avail_in > 0 || zs.avail_out == 0));
  if (rc != Z_STREAM_END && rc != Z_OK) out.append(buffer, sizeof(buffer) - zs.avail_out);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END && out.empty()) throw ParseError("corrupt Flate stream");
  return out;
}

std::string deflate_bytes(std::string_view in) {
  uLongf size = compressBound(static_cast<uLong>(in.size()));
  std::string out(size, '\0');
  if (compress2(reinterpret_cast<Bytef*>(out.data()), &size, reinterpret_cast<const Bytef*>(in.data()),
                static_cast<uLong>(in.size()), Z_BEST_COMPRESSION) != Z_OK)
    throw Error("zlib compression failed");
  out.resize(size);
  return out;
}

int64_t param(const Dict* parms, std::string_view key, int64_t fallback) {
  if (!parms) return fallback;
  const Object* o = find(*parms, key);
  return (o && o->integer()) ? *o->integer() : fallback;
}

std::string unpredict(std::string data, const Dict* parms) {
  const int64_t predictor = param(parms, "Predictor", 1);
  if (predictor < 10) {
    if (predictor == 1) return data;
    throw ParseError("unsupported TIFF predictor");
  }
  const int64_t colors = param(parms, "Colors", 1);
  const int64_t bpc = param(parms, "BitsPerComponent", 8);
  const int64_t columns = param(parms, "Columns", 1);
  const size_t bpp = static_cast<size_t>(std::max<int64_t>(1, colors * bpc / 8));
  const size_t row_len = static_cast<size_t>((colors * bpc * columns + 7) / 8);
  std::string out;
  std::string prev(row_len, '\0');
  for (size_t pos = 0; pos + row_len + 1 <= data.size(); pos += row_len + 1) {
    const auto filter = static_cast<uint8_t>(data[pos]);
    std::string row = data.substr(pos + 1, row_len);
    for (size_t i = 0; i < row_len; ++i) {
      const int a = i >= bpp ? static_cast<uint8_t>(row[i - bpp]) : 0;
      const int b = static_cast<uint8_t>(prev[i]);
      const int c = i >= bpp ? static_cast<uint8_t>(prev[i - bpp]) : 0;
      int add = 0;
      switch (filter) {
        case 0: break;
        case 1: add = a; break;
        case 2: add = b; break;
        case 3: add = (a + b) / 2; break;
        case 4: {
          const int p = a + b - c;
          const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
          add = (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
          break;
        }
        default: throw ParseError("bad PNG predictor row filter");
      }
      row[i] = static_cast<char>((static_cast<uint8_t>(row[i]) + add) & 0xFF);
    }
    out += row;
    prev = std::move(row);
  }
  return out;
}

std::string ascii_hex_decode(std::string_view in) {
  std::string digits;
  for (char c : in) {
    if (c == '>') break;
    if (std::isxdigit(static_cast<unsigned char>(c))) digits.push_back(c);
  }
  if (digits.size() % 2) digits.push_back('0');
  std::string out;
  for (size_t i = 0; i < digits.size(); i += 2) {
    unsigned v = 0;
    std::from_chars(digits.data() + i, digits.data() + i + 2, v, 16);
    out.push_back(static_cast<char>(v));
  }
  return out;
}

std::string ascii85_decode(std::string_view in) {
  std::string out;
  uint32_t tuple = 0;
  int count = 0;
  for (size_t i = 0; i < in.size(); ++i) {
    const char c = in[i];
    if (c == '~') break;
    if (is_ws(c)) continue;
    if (c == 'z' && count == 0) {
      out.append(4, '\0');
      continue;
    }
    if (c < '!' || c > 'u') throw ParseError("bad ASCII85 character");
    tuple = tuple * 85 + static_cast<uint32_t>(c - '!');
    if (++count == 5) {
      for (int k = 3; k >= 0; --k) out.push_back(static_cast<char>((tuple >> (8 * k)) & 0xFF));
      tuple = 0;
      count = 0;
    }
  }
  if (count > 1) {
    for (int k = count; k < 5; ++k) tuple = tuple * 85 + 84;
    for (int k = 0; k < count - 1; ++k) out.push_back(static_cast<char>((tuple >> (8 * (3 - k))) & 0xFF));
  }
  return out;
}

}  // namespace

std::string decode_stream(const Stream& stream, const std::function<Object(const Object&)>& resolver) {
  std::vector<std::string> filters;
  std::vector<const Dict*> parms;
  const Dict& d = *stream.dict;
  if (const Object* f = find(d, "Filter")) {
    const Object rf = resolver(*f);
    if (rf.name()) {
      filters.push_back(rf.name()->value);
    } else if (rf.array()) {
      for (const auto& item : *rf.array())
        if (item.name()) filters.push_back(item.name()->value);
    }
  }
  Object parms_holder;
  if (const Object* p = find(d, "DecodeParms")) {
    parms_holder = resolver(*p);
    if (parms_holder.dict()) {
      parms.push_back(parms_holder.dict());
    } else if (parms_holder.array()) {
      for (const auto& item : *parms_holder.array()) parms.push_back(item.dict());
    }
  }
  std::string data = stream.raw;
  for (size_t i = 0; i < filters.size(); ++i) {
    const Dict* parm = i < parms.size() ? parms[i] : nullptr;
    const auto& f = filters[i];
    if (f == "FlateDecode" || f == "Fl") {
      data = unpredict(inflate_bytes(data), parm);
    } else if (f == "ASCIIHexDecode" || f == "AHx") {
      data = ascii_hex_decode(data);
    } else if (f == "ASCII85Decode" || f == "A85") {
      data = ascii85_decode(data);
    } else {
      throw ParseError("unsupported stream filter " + f);
    }
  }
  return data;
}

Document Document::parse(std::span<const std::byte> bytes) {
  return parse(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Document Document::parse(std::string_view bytes) {
  const size_t header = bytes.substr(0, std::min<size_t>(bytes.size(), 1024)).find("%PDF-");
  if (header == std::string_view::npos) throw ParseError("missing %PDF- header");
  Document doc;
  doc.data_.assign(bytes);
  try {
    doc.build_xref();
    doc.collect_pages();
  } catch (const ParseError&) {
    doc.xref_.clear();
    doc.cache_.clear();
    doc.trailer_.reset();
    doc.pages_.clear();
    doc.scan_objects();
    doc.collect_pages();
  }
  return doc;
}

void Document::build_xref() {
  const size_t sx = data_.rfind("startxref");
  if (sx == std::string::npos) throw ParseError("no startxref");
  Lexer lex(data_, sx + 9);
  int64_t offset = lex.integer();
  std::set<int64_t> seen;
  while (offset >= 0 && static_cast<size_t>(offset) < data_.size() && seen.insert(offset).second) {
    Lexer x(data_, static_cast<size_t>(offset));
    std::shared_ptr<Dict> section_trailer;
    if (x.try_keyword("xref")) {
      while (!x.try_keyword("trailer")) {
        const int64_t start = x.integer();
        const int64_t count = x.integer();
        for (int64_t i = 0; i < count; ++i) {
          const int64_t off = x.integer();
          x.integer();
          const auto type = x.keyword();
          if (type == "n" && !xref_.contains(start + i) && off > 0) xref_[start + i] = {XrefEntry::Kind::offset, off, 0};
        }
      }
      x.skip_ws();
      Object t = x.object();
      if (!t.dict()) throw ParseError("bad trailer");
      section_trailer = std::get<std::shared_ptr<Dict>>(t.value);
      if (const Object* stm = find(*section_trailer, "XRefStm"); stm && stm->integer()) {
        // Hybrid file: compressed objects are listed in a companion stream.
        read_xref_stream(static_cast<size_t>(*stm->integer()));
      }
    } else {
      section_trailer = read_xref_stream(static_cast<size_t>(offset));
    }
    if (!trailer_) trailer_ = section_trailer;
    const Object* prev = find(*section_trailer, "Prev");
    offset = (prev && prev->integer()) ? *prev->integer() : -1;
  }
  if (!trailer_ || !find(*trailer_, "Root")) throw ParseError("trailer without /Root");
}

std::shared_ptr<Dict> Document::read_xref_stream(size_t offset) {
  Lexer x(data_, offset);
  x.integer();
  x.integer();
  if (!x.try_keyword("obj")) throw ParseError("xref offset does not point at xref data");
  x.skip_ws();
  Object head = x.object();
  if (!head.dict()) throw ParseError("xref stream without dictionary");
  auto dict = std::get<std::shared_ptr<Dict>>(head.value);
  if (!x.try_keyword("stream")) throw ParseError("xref stream missing data");
  size_t p = x.pos();
  if (p < data_.size() && data_[p] == '\r') ++p;
  if (p < data_.size() && data_[p] == '\n') ++p;
  const Object* len = find(*dict, "Length");
  if (!len || !len->integer()) throw ParseError("xref stream without direct /Length");
  Stream s{dict, data_.substr(p, static_cast<size_t>(*len->integer()))};
  const std::string decoded = decode_stream(s, [](const Object& o) { return o; });
  const Object* w = find(*dict, "W");
  if (!w || !w->array() || w->array()->size() != 3) throw ParseError("xref stream /W malformed");
  int widths[3];
  for (int i = 0; i < 3; ++i) {
    const auto* v = (*w->array())[static_cast<size_t>(i)].integer();
    if (!v || *v < 0 || *v > 8) throw ParseError("xref stream /W malformed");
    widths[i] = static_cast<int>(*v);
  }
  std::vector<int64_t> index;
  if (const Object* idx = find(*dict, "Index"); idx && idx->array()) {
    for (const auto& v : *idx->array())
      if (v.integer()) index.push_back(*v.integer());
  } else {
    const Object* size = find(*dict, "Size");
    index = {0, size && size->integer() ? *size->integer() : 0};
  }
  const size_t row = static_cast<size_t>(widths[0] + widths[1] + widths[2]);
  size_t pos = 0;
  const auto field = [&](int width, int64_t fallback) {
    if (width == 0) return fallback;
    int64_t v = 0;
    for (int k = 0; k < width; ++k) v = (v << 8) | static_cast<uint8_t>(decoded[pos++]);
    return v;
  };
  for (size_t s2 = 0; s2 + 1 < index.size(); s2 += 2) {
    for (int64_t i = 0; i < index[s2 + 1]; ++i) {
      if (pos + row > decoded.size()) throw ParseError("xref stream truncated");
      const int64_t type = field(widths[0], 1);
      const int64_t f2 = field(widths[1], 0);
      const int64_t f3 = field(widths[2], 0);
      const int64_t num = index[s2] + i;
      if (xref_.contains(num)) continue;
      if (type == 1) xref_[num] = {XrefEntry::Kind::offset, f2, 0};
      if (type == 2) xref_[num] = {XrefEntry::Kind::compressed, f2, f3};
    }
  }
  return dict;
}

void Document::scan_objects() {
  // Recovery path: locate "N G obj" headers directly.
  size_t pos = 0;
  while ((pos = data_.find("obj", pos)) != std::string::npos) {
    const size_t kw = pos;
    pos += 3;
    if (pos < data_.size() && is_regular(data_[pos])) continue;
    size_t p = kw;
    while (p > 0 && is_ws(data_[p - 1])) --p;
    size_t gen_end = p;
    while (p > 0 && std::isdigit(static_cast<unsigned char>(data_[p - 1]))) --p;
    if (p == gen_end || p == 0) continue;
    size_t q = p;
    while (q > 0 && is_ws(data_[q - 1])) --q;
    if (q == p) continue;
    const size_t num_end = q;
    while (q > 0 && std::isdigit(static_cast<unsigned char>(data_[q - 1]))) --q;
    if (q == num_end) continue;
    if (q > 0 && is_regular(data_[q - 1])) continue;
    int64_t num = 0;
    std::from_chars(data_.data() + q, data_.data() + num_end, num);
    xref_[num] = {XrefEntry::Kind::offset, static_cast<int64_t>(q), 0};
  }
  // Objects living inside object streams.
  std::vector<std::pair<int64_t, XrefEntry>> extra;
  for (const auto& [num, entry] : xref_) {
    Object o;
    try {
      o = load(Ref{num, 0});
    } catch (const Error&) {
      continue;
    }
    const Stream* s = o.stream();
    if (!s) continue;
    const Object* type = find(*s->dict, "Type");
    if (!type || !type->name() || type->name()->value != "ObjStm") continue;
    try {
      const std::string body = decode_stream(*s, [this](const Object& x) { return resolve(x); });
      const Object* n = find(*s->dict, "N");
      Lexer l(body);
      for (int64_t i = 0; n && n->integer() && i < *n->integer(); ++i) {
        const int64_t inner = l.integer();
        l.integer();
        extra.emplace_back(inner, XrefEntry{XrefEntry::Kind::compressed, num, i});
      }
    } catch (const Error&) {
    }
  }
  for (const auto& [num, entry] : extra)
    if (!xref_.contains(num)) xref_[num] = entry;
  cache_.clear();

  const size_t t = data_.rfind("trailer");
  if (t != std::string::npos) {
    try {
      Lexer l(data_, t + 7);
      Object d = l.object();
      if (d.dict() && find(*d.dict(), "Root")) trailer_ = std::get<std::shared_ptr<Dict>>(d.value);
    } catch (const Error&) {
    }
  }
  if (!trailer_) {
    for (const auto& [num, entry] : xref_) {
      Object o;
      try {
        o = load(Ref{num, 0});
      } catch (const Error&) {
        continue;
      }
      const Dict* d = o.dict();
      if (!d) continue;
      const Object* type = find(*d, "Type");
      if (type && type->name() && type->name()->value == "Catalog") {
        trailer_ = std::make_shared<Dict>();
        (*trailer_)["Root"] = Object{Ref{num, 0}};
        break;
      }
    }
  }
  if (!trailer_) throw ParseError("no document catalog found");
}

Object Document::resolve(const Object& obj) const {
  Object current = obj;
  for (int hops = 0; hops < kMaxDepth; ++hops) {
    const Ref* r = current.ref();
    if (!r) return current;
    current = load(*r);
  }
  throw ParseError("reference chain too long");
}

Object Document::load(Ref ref) const {
  if (const auto it = cache_.find(ref.num); it != cache_.end()) return it->second;
  const auto it = xref_.find(ref.num);
  if (it == xref_.end()) return Object{};
  const XrefEntry& entry = it->second;
  Object result;
  if (entry.kind == XrefEntry::Kind::compressed) {
    const Object container = load(Ref{entry.offset, 0});
    const Stream* s = container.stream();
    if (!s) throw ParseError("object stream missing");
    const std::string body = decode_stream(*s, [this](const Object& o) { return resolve(o); });
    const Object* n = find(*s->dict, "N");
    const Object* first = find(*s->dict, "First");
    if (!n || !n->integer() || !first || !first->integer()) throw ParseError("object stream header malformed");
    Lexer header(body);
    int64_t offset = -1;
    for (int64_t i = 0; i < *n->integer(); ++i) {
      const int64_t num = header.integer();
      const int64_t off = header.integer();
      if (num == ref.num && (i == entry.index || offset < 0)) offset = off;
    }
    if (offset < 0) throw ParseError("object not in object stream");
    Lexer l(body, static_cast<size_t>(*first->integer() + offset));
    result = l.object();
  } else {
    if (entry.offset < 0 || static_cast<size_t>(entry.offset) >= data_.size()) throw ParseError("xref offset out of range");
    Lexer l(data_, static_cast<size_t>(entry.offset));
    l.integer();
    l.integer();
    if (!l.try_keyword("obj")) throw ParseError(fmt::format("object {} header not found", ref.num));
    result = l.object();
    const size_t after_obj = l.pos();
    if (result.dict() && l.try_keyword("stream")) {
      auto dict = std::get<std::shared_ptr<Dict>>(result.value);
      size_t p = l.pos();
      if (p < data_.size() && data_[p] == '\r') ++p;
      if (p < data_.size() && data_[p] == '\n') ++p;
      int64_t length = -1;
      if (const Object* len = find(*dict, "Length")) {
        cache_[ref.num] = Object{};  // guards against self-referencing /Length
        const Object rl = resolve(*len);
        if (rl.integer()) length = *rl.integer();
        cache_.erase(ref.num);
      }
      std::string raw;
      const bool length_ok = length >= 0 && static_cast<size_t>(p) + static_cast<size_t>(length) <= data_.size() &&
                             Lexer(data_, p + static_cast<size_t>(length)).try_keyword("endstream");
      if (length_ok) {
        raw = data_.substr(p, static_cast<size_t>(length));
      } else {
        const size_t end = data_.find("endstream", p);
        if (end == std::string::npos) throw ParseError("unterminated stream");
        size_t e = end;
        if (e > p && data_[e - 1] == '\n') --e;
        if (e > p && data_[e - 1] == '\r') --e;
        raw = data_.substr(p, e - p);
      }
      result = Object{std::make_shared<Stream>(Stream{dict, std::move(raw)})};
    } else {
      l.seek(after_obj);
    }
  }
  cache_[ref.num] = result;
  return result;
}

void Document::collect_pages() {
  const Object* root_ref = find(*trailer_, "Root");
  const Object root = resolve(*root_ref);
  if (!root.dict()) throw ParseError("catalog is not a dictionary");
  const Object* pages_ref = find(*root.dict(), "Pages");
  if (!pages_ref) throw ParseError("catalog without /Pages");
  std::set<int64_t> visited;
  std::function<void(const Object&, int)> walk = [&](const Object& node_ref, int depth) {
    if (depth > kMaxDepth) throw ParseError("page tree too deep");
    if (const Ref* r = node_ref.ref(); r && !visited.insert(r->num).second) return;
    const Object node = resolve(node_ref);
    const Dict* d = node.dict();
    if (!d) return;
    const Object* kids = find(*d, "Kids");
    const Object* type = find(*d, "Type");
    const bool is_tree = (type && type->name() && type->name()->value == "Pages") || kids;
    if (!is_tree) {
      pages_.push_back(node);
      return;
    }
    if (!kids) return;
    const Object kid_list = resolve(*kids);
    if (!kid_list.array()) return;
    for (const auto& kid : *kid_list.array()) walk(kid, depth + 1);
  };
  walk(*pages_ref, 0);
}

std::vector<std::string> Document::page_lines(std::size_t page) const {
  if (page >= pages_.size()) throw InvalidArgument(fmt::format("page {} out of range", page));
  const Dict* d = pages_[page].dict();
  std::string content;
  if (const Object* c = find(*d, "Contents")) {
    const Object contents = resolve(*c);
    const auto append = [&](const Object& o) {
      const Object s = resolve(o);
      if (const Stream* st = s.stream()) {
        content += decode_stream(*st, [this](const Object& x) { return resolve(x); });
        content.push_back('\n');
      }
    };
    if (contents.array()) {
      for (const auto& part : *contents.array()) append(part);
    } else {
      append(contents);
    }
  }

  std::vector<std::string> lines;
  std::string current;
  std::vector<Object> operands;
  Lexer lex(content);
  const auto flush = [&](bool keep_empty) {
    if (!current.empty() || keep_empty) lines.push_back(current);
    current.clear();
  };
  while (!lex.at_end()) {
    std::string op;
    Object obj;
    try {
      obj = lex.object(&op);
    } catch (const ParseError&) {
      break;
    }
    if (op.empty()) {
      operands.push_back(std::move(obj));
      continue;
    }
    if (op == "Tj" && !operands.empty() && operands.back().string()) {
      current += text_of(*operands.back().string());
    } else if (op == "TJ" && !operands.empty() && operands.back().array()) {
      for (const auto& item : *operands.back().array()) {
        if (item.string()) {
          current += text_of(*item.string());
        } else if (const auto* n = item.integer(); n && *n < -200 && !current.empty() && current.back() != ' ') {
          current.push_back(' ');
        } else if (const auto* f = std::get_if<double>(&item.value); f && *f < -200 && !current.empty() &&
                                                                     current.back() != ' ') {
          current.push_back(' ');
        }
      }
    } else if ((op == "'" || op == "\"") && !operands.empty() && operands.back().string()) {
      flush(true);
      current += text_of(*operands.back().string());
    } else if (op == "T*") {
      flush(true);
    } else if (op == "Td" || op == "TD" || op == "Tm" || op == "ET") {
      flush(false);
    } else if (op == "BI") {
      const size_t id = content.find("ID", lex.pos());
      const size_t ei = id == std::string::npos ? std::string::npos : content.find("EI", id + 2);
      if (ei == std::string::npos) break;
      lex.seek(ei + 2);
    }
    operands.clear();
  }
  flush(false);
  return lines;
}

namespace {

std::string escape_literal(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '(': out += "\\("; break;
      case ')': out += "\\)"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace

std::string write_text_document(const std::vector<std::vector<std::string>>& pages, const WriteOptions& options) {
  std::string out = "%PDF-1.4\n%\xE2\xE3\xCF\xD3\n";
  std::vector<size_t> offsets;
  const auto begin_object = [&](size_t num) {
    if (offsets.size() < num) offsets.resize(num);
    offsets[num - 1] = out.size();
    out += fmt::format("{} 0 obj\n", num);
  };

  begin_object(1);
  out += "<< /Type /Catalog /Pages 2 0 R >>\nendobj\n";
  begin_object(2);
  out += "<< /Type /Pages /Kids [";
  for (size_t i = 0; i < pages.size(); ++i) out += fmt::format("{}{} 0 R", i ? " " : "", 4 + 2 * i);
  out += fmt::format("] /Count {} >>\nendobj\n", pages.size());
  begin_object(3);
  out += "<< /Type /Font /Subtype /Type1 /BaseFont /Helvetica >>\nendobj\n";

  for (size_t i = 0; i < pages.size(); ++i) {
    begin_object(4 + 2 * i);
    out += fmt::format(
        "<< /Type /Page /Parent 2 0 R /MediaBox [0 0 612 792] /Resources << /Font << /F1 3 0 R >> >> /Contents {} 0 R "
        ">>\nendobj\n",
        5 + 2 * i);
    std::string content = "BT\n/F1 10 Tf\n12 TL\n72 760 Td\n";
    for (const auto& line : pages[i]) content += "(" + escape_literal(line) + ") Tj T*\n";
    content += "ET\n";
    std::string dict_extra;
    if (options.compress) {
      content = deflate_bytes(content);
      dict_extra = " /Filter /FlateDecode";
    }
    begin_object(5 + 2 * i);
    out += fmt::format("<< /Length {}{} >>\nstream\n", content.size(), dict_extra);
    out += content;
    out += "\nendstream\nendobj\n";
  }

  const size_t xref_at = out.size();
  out += fmt::format("xref\n0 {}\n0000000000 65535 f \n", offsets.size() + 1);
  for (size_t off : offsets) out += fmt::format("{:010d} 00000 n \n", off);
  out += fmt::format("trailer\n<< /Size {} /Root 1 0 R >>\nstartxref\n{}\n%%EOF\n", offsets.size() + 1, xref_at);
  return out;
}

}  // namespace evidex::pdf
