#include "evidex/mock_backend.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <zlib.h>

#include "evidex/error.hpp"
#include "evidex/pdf.hpp"
#include "evidex/text.hpp"

namespace evidex {

uint64_t fnv1a64(std::string_view s, uint64_t basis) {
  uint64_t h = basis;
  for (const char c : s) {
    h ^= static_cast<uint8_t>(c);
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string build_pattern(std::string_view phrase, int& slots) {
  static const std::string kSpecial = R"(\^$.|?*+()[]{}/)";
  std::string out;
  slots = 0;
  bool ends_with_slot = false;
  size_t i = 0;
  while (i < phrase.size()) {
    ends_with_slot = false;
    if (phrase[i] == '{') {
      const size_t close = phrase.find('}', i);
      const auto token = close == std::string_view::npos ? std::string_view{} : phrase.substr(i, close - i + 1);
      if (token == "{int}") {
        out += "([0-9]{1,3}(?:,[0-9]{3})+|[0-9]+)";
      } else if (token == "{real}") {
        out += "([0-9]+(?:\\.[0-9]+)?)";
      } else if (token == "{text}") {
        out += close + 1 == phrase.size() ? "(.+?)\\s*\\.?\\s*$" : "(.+?)";
      } else {
        throw ConfigError(fmt::format("unknown capture slot in phrase '{}'", phrase));
      }
      ++slots;
      ends_with_slot = true;
      i = close + 1;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(phrase[i]))) {
      while (i < phrase.size() && std::isspace(static_cast<unsigned char>(phrase[i]))) ++i;
      out += "\\s+";
      continue;
    }
    if (kSpecial.find(phrase[i]) != std::string::npos) out += '\\';
    out += phrase[i++];
  }
  if (!phrase.empty() && is_word_char(phrase.front())) out = "\\b" + out;
  if (!ends_with_slot && !phrase.empty() && is_word_char(phrase.back())) out += "\\b";
  return out;
}

nlohmann::json typed_value(const FieldSpec& spec, const std::string& value) {
  if (spec.kind == FieldKind::integer) {
    std::string digits;
    for (const char c : value)
      if (c != ',') digits += c;
    int64_t v = 0;
    const auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
    if (ec == std::errc() && p == digits.data() + digits.size()) return v;
  } else if (spec.kind == FieldKind::real) {
    double v = 0;
    const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec == std::errc() && p == value.data() + value.size()) return v;
  }
  return value;
}

void append_distinct(nlohmann::json& arr, const std::string& s) {
  if (!arr.is_array()) arr = nlohmann::json::array();
  for (const auto& e : arr)
    if (e == s) return;
  arr.push_back(s);
}

std::string longest_word(std::string_view phrase) {
  std::string best, cur;
  bool in_slot = false;
  for (const char c : phrase) {
    if (c == '{') in_slot = true;
    if (!in_slot && is_word_char(c)) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      continue;
    }
    if (c == '}') in_slot = false;
    if (cur.size() > best.size()) best = cur;
    cur.clear();
  }
  return cur.size() > best.size() ? cur : best;
}

}  // namespace

KeywordTable KeywordTable::parse(std::istream& in, const SchemaSet& schema) {
  KeywordTable table;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty() || text::trim(line).front() == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string col; std::getline(ss, col, '\t');) cols.push_back(col);
    if (cols.size() != 4) throw ConfigError(fmt::format("keyword table line {}: expected 4 tab-separated columns", lineno));
    KeywordRule rule;
    rule.phrase = cols[0];
    const auto payload = parse_payload_id(text::trim(cols[1]));
    if (!payload) throw ConfigError(fmt::format("keyword table line {}: unknown payload '{}'", lineno, cols[1]));
    rule.payload = *payload;
    rule.field = text::trim(cols[2]);
    if (!schema.payload(*payload).field(rule.field))
      throw ConfigError(fmt::format("keyword table line {}: unknown field {}.{}", lineno, cols[1], rule.field));
    rule.value = cols[3];
    int slots = 0;
    rule.pattern = std::regex(build_pattern(rule.phrase, slots), std::regex::icase | std::regex::ECMAScript);
    rule.anchor = longest_word(rule.phrase);
    if (slots > 1) throw ConfigError(fmt::format("keyword table line {}: at most one capture slot", lineno));
    if (slots == 0 && rule.value.find("$1") != std::string::npos)
      throw ConfigError(fmt::format("keyword table line {}: $1 without a capture slot", lineno));
    table.rules_.push_back(std::move(rule));
  }
  return table;
}

KeywordTable KeywordTable::load(const std::filesystem::path& file, const SchemaSet& schema) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open keyword table " + file.string());
  return parse(in, schema);
}

nlohmann::json KeywordTable::annotate(const PayloadSchema& payload, const std::vector<std::string>& lines) const {
  nlohmann::json raw = nlohmann::json::object();
  for (const auto& line : lines) {
    const std::string trimmed = text::trim(line);
    if (trimmed.empty()) continue;
    const std::string lowered = text::to_lower_ascii(trimmed);
    for (const auto& rule : rules_) {
      if (rule.payload != payload.id) continue;
      if (lowered.find(rule.anchor) == std::string::npos) continue;
      std::smatch m;
      if (!std::regex_search(trimmed, m, rule.pattern)) continue;
      const FieldSpec* spec = payload.field(rule.field);
      if (spec->kind == FieldKind::evidence_text) {
        append_distinct(raw[spec->name], trimmed);
        continue;
      }
      std::string value = rule.value;
      if (m.size() > 1) {
        const std::string cap = text::trim(m[1].str());
        for (size_t at = value.find("$1"); at != std::string::npos; at = value.find("$1", at + cap.size()))
          value.replace(at, 2, cap);
      }
      if (spec->is_list()) {
        if (!raw.contains(spec->name)) raw[spec->name] = nlohmann::json::array();
        raw[spec->name].push_back(value);
      } else if (!raw.contains(spec->name)) {
        raw[spec->name] = typed_value(*spec, value);
      }
      if (spec->evidence_partner) append_distinct(raw[*spec->evidence_partner], trimmed);
    }
  }
  return raw;
}

FaultSchedule FaultSchedule::parse(std::istream& in) {
  FaultSchedule schedule;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string trimmed = text::trim(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    std::istringstream ss(trimmed);
    std::string unit, payload_name;
    int attempt = 0, status = 0;
    if (!(ss >> unit >> payload_name >> attempt >> status) || attempt < 1)
      throw ConfigError(fmt::format("fault schedule line {}: expected <unit_id> <payload> <attempt> <status>", lineno));
    const auto payload = parse_payload_id(payload_name);
    if (!payload) throw ConfigError(fmt::format("fault schedule line {}: unknown payload '{}'", lineno, payload_name));
    std::string message;
    std::getline(ss, message);
    schedule.add(unit, *payload, attempt, {status, text::trim(message)});
  }
  return schedule;
}

FaultSchedule FaultSchedule::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open fault schedule " + file.string());
  return parse(in);
}

void FaultSchedule::add(const std::string& unit_id, PayloadId payload, int attempt, Fault fault) {
  if (fault.message.empty()) {
    if (fault.status == 429) {
      fault.message = "rate limit exceeded";
    } else if (fault.status >= 500) {
      fault.message = "upstream service error";
    } else {
      fault.message = "request rejected";
    }
  }
  faults_[{unit_id, payload, attempt}] = std::move(fault);
}

std::optional<FaultSchedule::Fault> FaultSchedule::find(const std::string& unit_id, PayloadId payload,
                                                        int attempt) const {
  const auto it = faults_.find({unit_id, payload, attempt});
  if (it == faults_.end()) return std::nullopt;
  return it->second;
}

std::string make_png(int width, int height, uint64_t seed) {
  const auto be32 = [](std::string& out, uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out += static_cast<char>((v >> s) & 0xff);
  };
  const auto chunk = [&](std::string& out, const char* type, const std::string& data) {
    be32(out, static_cast<uint32_t>(data.size()));
    std::string body = std::string(type, 4) + data;
    out += body;
    be32(out, static_cast<uint32_t>(crc32(0, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
  };
  std::string raw;
  for (int y = 0; y < height; ++y) {
    raw += '\0';
    for (int x = 0; x < width; ++x) {
      raw += static_cast<char>(seed & 0xff);
      raw += static_cast<char>((seed >> 8) & 0xff);
      raw += static_cast<char>((seed >> 16) & 0xff);
    }
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::string packed(packed_size, '\0');
  compress(reinterpret_cast<Bytef*>(packed.data()), &packed_size, reinterpret_cast<const Bytef*>(raw.data()),
           static_cast<uLong>(raw.size()));
  packed.resize(packed_size);

  std::string png = "\x89PNG\r\n\x1a\n";
  std::string ihdr;
  be32(ihdr, static_cast<uint32_t>(width));
  be32(ihdr, static_cast<uint32_t>(height));
  ihdr += std::string("\x08\x02\x00\x00\x00", 5);  // 8-bit RGB
  chunk(png, "IHDR", ihdr);
  chunk(png, "IDAT", packed);
  chunk(png, "IEND", "");
  return png;
}

MockBackend::MockBackend(KeywordTable table, FaultSchedule faults, uint64_t seed)
    : table_(std::move(table)), faults_(std::move(faults)), seed_(seed) {}

AnnotateResult MockBackend::annotate(const AnnotationRequest& request) {
  ++calls_;
  int attempt = 0;
  {
    std::lock_guard lock(attempts_mutex_);
    attempt = ++attempts_[{request.unit_id, request.payload->id}];
  }
  if (auto fault = faults_.find(request.unit_id, request.payload->id, attempt))
    return TransportError{fault->status, fault->message};

  static const std::regex kImageLine(R"(^\s*\[\[image:\s*([^|\]]*?)\s*\|\s*(.*?)\s*\]\]\s*$)", std::regex::icase);

  std::vector<std::string> lines;
  std::vector<std::string> markdowns;
  std::vector<ImageObject> images;
  if (request.pages) {
    if (!request.data_url) return TransportError{400, "request carries no document"};
    try {
      const auto doc = pdf::Document::parse(decode_data_url(*request.data_url));
      if (request.pages->end > static_cast<int>(doc.page_count()))
        return TransportError{400, fmt::format("page range {}-{} exceeds document length {}", request.pages->start,
                                               request.pages->end, doc.page_count())};
      for (int page = request.pages->start; page < request.pages->end; ++page) {
        std::vector<std::string> md;
        int ordinal = 0;
        for (auto& line : doc.page_lines(static_cast<size_t>(page))) {
          std::smatch m;
          if (!std::regex_match(line, m, kImageLine)) {
            lines.push_back(line);
            md.push_back(std::move(line));
            continue;
          }
          const std::string id = fmt::format("img-{}-{}.png", page, ordinal++);
          md.push_back(fmt::format("![{}]({})", id, id));
          if (!request.include_images) continue;
          const uint64_t h = fnv1a64(request.parent.hex() + "/" + id, seed_ ^ 14695981039346656037ull);
          ImageObject img;
          img.id = id;
          img.page = page;
          const int x = static_cast<int>(h % 300), y = static_cast<int>((h >> 16) % 500);
          img.bbox = {x, y, x + 200 + static_cast<int>((h >> 32) % 100), y + 150 + static_cast<int>((h >> 40) % 100)};
          img.image_base64 = base64_encode(make_png(8, 8, h));
          img.description = m[2].str();
          img.region_type = parse_region_type(m[1].str()).value_or(RegionType::other);
          images.push_back(std::move(img));
        }
        markdowns.push_back(text::join(md, "\n"));
      }
    } catch (const Error& e) {
      return TransportError{422, e.what()};
    }
  } else if (request.caption_text) {
    lines = text::split_lines(*request.caption_text);
  } else {
    return TransportError{400, "request names neither pages nor a caption"};
  }
  return make_annotation(request, table_.annotate(*request.payload, lines), std::move(markdowns), std::move(images));
}

}  // namespace evidex
