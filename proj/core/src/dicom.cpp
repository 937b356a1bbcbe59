#include "echoslice/dicom.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "echoslice/error.hpp"

namespace echoslice {
namespace {

constexpr std::size_t kPreambleBytes = 128;
constexpr std::uint32_t kUndefinedLength = 0xFFFFFFFF;
constexpr int kMaxSequenceDepth = 16;

constexpr DicomTag kItem{0xFFFE, 0xE000};
constexpr DicomTag kItemDelimiter{0xFFFE, 0xE00D};
constexpr DicomTag kSequenceDelimiter{0xFFFE, 0xE0DD};

bool has_long_length(std::array<char, 2> vr) {
  static constexpr std::string_view kLong[] = {"OB", "OD", "OF", "OL", "OV", "OW", "SQ",
                                               "SV", "UC", "UN", "UR", "UT", "UV"};
  const std::string_view v(vr.data(), 2);
  return std::find(std::begin(kLong), std::end(kLong), v) != std::end(kLong);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes, std::size_t pos = 0)
      : bytes_(bytes), pos_(pos) {}

  bool done() const { return pos_ >= bytes_.size(); }
  std::size_t pos() const { return pos_; }

  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(bytes_[pos_ + b]) << (8 * b);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  DicomTag tag() {
    const auto g = u16();
    const auto e = u16();
    return {g, e};
  }

 private:
  void need(std::size_t n) const {
    if (n > bytes_.size() - std::min(pos_, bytes_.size())) {
      throw input_error("truncated DICOM element");
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
};

std::array<char, 2> read_vr(Reader& r) {
  const auto raw = r.take(2);
  std::array<char, 2> vr{static_cast<char>(raw[0]), static_cast<char>(raw[1])};
  for (char c : vr) {
    if (c < 'A' || c > 'Z') {
      throw input_error("unsupported transfer syntax: expected explicit VR little endian");
    }
  }
  return vr;
}

void skip_undefined_sequence(Reader& r, int depth);

// Parses elements inside an undefined-length item until its delimiter.
void skip_undefined_item(Reader& r, int depth) {
  while (true) {
    const DicomTag t = r.tag();
    if (t == kItemDelimiter) {
      r.u32();
      return;
    }
    const auto vr = read_vr(r);
    std::uint32_t len = 0;
    if (has_long_length(vr)) {
      r.u16();
      len = r.u32();
    } else {
      len = r.u16();
    }
    if (len == kUndefinedLength) {
      skip_undefined_sequence(r, depth + 1);
    } else {
      r.take(len);
    }
  }
}

void skip_undefined_sequence(Reader& r, int depth) {
  if (depth > kMaxSequenceDepth) throw input_error("DICOM sequence nesting too deep");
  while (true) {
    const DicomTag t = r.tag();
    const std::uint32_t len = r.u32();
    if (t == kSequenceDelimiter) return;
    if (t != kItem) throw input_error("malformed DICOM sequence item");
    if (len == kUndefinedLength) {
      skip_undefined_item(r, depth);
    } else {
      r.take(len);
    }
  }
}

std::vector<double> parse_text_numbers(std::span<const std::uint8_t> value) {
  std::string text(value.begin(), value.end());
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, '\\')) {
    const std::string blank(" \t\0", 3);
    const auto first = item.find_first_not_of(blank);
    if (first == std::string::npos) continue;
    const auto last = item.find_last_not_of(blank);
    const std::string token = item.substr(first, last - first + 1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc{} || ptr != token.data() + token.size()) {
      throw input_error("malformed numeric DICOM value '" + token + "'");
    }
    out.push_back(v);
  }
  return out;
}

template <typename T>
std::vector<double> parse_binary_numbers(std::span<const std::uint8_t> value) {
  if (value.size() % sizeof(T) != 0) throw input_error("truncated DICOM element");
  std::vector<double> out(value.size() / sizeof(T));
  for (std::size_t n = 0; n < out.size(); ++n) {
    T v;
    std::memcpy(&v, value.data() + n * sizeof(T), sizeof(T));
    out[n] = static_cast<double>(v);
  }
  return out;
}

std::vector<double> element_numbers(const DicomElement& e) {
  const std::string_view vr(e.vr.data(), 2);
  if (vr == "US") return parse_binary_numbers<std::uint16_t>(e.value);
  if (vr == "SS") return parse_binary_numbers<std::int16_t>(e.value);
  if (vr == "UL") return parse_binary_numbers<std::uint32_t>(e.value);
  if (vr == "SL") return parse_binary_numbers<std::int32_t>(e.value);
  if (vr == "FL" || vr == "OF") return parse_binary_numbers<float>(e.value);
  if (vr == "FD" || vr == "OD") return parse_binary_numbers<double>(e.value);
  if (vr == "IS" || vr == "DS") return parse_text_numbers(e.value);
  throw input_error("unsupported VR " + std::string(vr) + " for numeric tag " + e.tag.str());
}

const DicomElement& require(const std::map<DicomTag, DicomElement>& by_tag, DicomTag tag) {
  const auto it = by_tag.find(tag);
  if (it == by_tag.end()) throw input_error("required private tag absent " + tag.str());
  return it->second;
}

void append_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xFF));
}

void append_element(std::vector<std::uint8_t>& out, DicomTag tag, std::string_view vr,
                    std::vector<std::uint8_t> value, std::uint8_t pad) {
  if (value.size() % 2 != 0) value.push_back(pad);
  append_u16(out, tag.group);
  append_u16(out, tag.element);
  out.push_back(static_cast<std::uint8_t>(vr[0]));
  out.push_back(static_cast<std::uint8_t>(vr[1]));
  if (has_long_length({vr[0], vr[1]})) {
    append_u16(out, 0);
    append_u32(out, static_cast<std::uint32_t>(value.size()));
  } else {
    append_u16(out, static_cast<std::uint16_t>(value.size()));
  }
  out.insert(out.end(), value.begin(), value.end());
}

template <typename T>
std::vector<std::uint8_t> pack(std::initializer_list<T> values) {
  std::vector<std::uint8_t> out(values.size() * sizeof(T));
  std::size_t n = 0;
  for (T v : values) std::memcpy(out.data() + sizeof(T) * n++, &v, sizeof(T));
  return out;
}

std::vector<std::uint8_t> text(std::string_view s) {
  return std::vector<std::uint8_t>(s.begin(), s.end());
}

double angle_scale(AngleUnit unit) {
  return unit == AngleUnit::radians ? 180.0 / std::numbers::pi : 1.0;
}

}  // namespace

DicomTag DicomTag::parse(std::string_view text) {
  std::string s;
  for (char c : text) {
    if (c != '(' && c != ')' && c != ' ') s.push_back(c);
  }
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw input_error("invalid DICOM tag '" + std::string(text) + "'");
  auto parse_hex = [&](std::string part) -> std::uint16_t {
    if (part.rfind("0x", 0) == 0 || part.rfind("0X", 0) == 0) part = part.substr(2);
    unsigned v = 0;
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v, 16);
    if (part.empty() || ec != std::errc{} || ptr != part.data() + part.size() || v > 0xFFFF) {
      throw input_error("invalid DICOM tag '" + std::string(text) + "'");
    }
    return static_cast<std::uint16_t>(v);
  };
  return {parse_hex(s.substr(0, comma)), parse_hex(s.substr(comma + 1))};
}

std::string DicomTag::str() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "(%04X,%04X)", group, element);
  return buf;
}

void to_json(nlohmann::json& j, const TagConfig& c) {
  j = nlohmann::json{{"dims", c.dims.str()},
                     {"bounds", c.bounds.str()},
                     {"stream", c.stream.str()},
                     {"rho_to_cm", c.rho_to_cm},
                     {"angle_unit", c.angle_unit == AngleUnit::radians ? "radians" : "degrees"},
                     {"payload_axis_order", c.payload_axis_order}};
  j["frame_interval"] = c.frame_interval ? nlohmann::json(c.frame_interval->str()) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, TagConfig& c) {
  c = TagConfig{};
  if (j.contains("dims")) c.dims = DicomTag::parse(j["dims"].get<std::string>());
  if (j.contains("bounds")) c.bounds = DicomTag::parse(j["bounds"].get<std::string>());
  if (j.contains("stream")) c.stream = DicomTag::parse(j["stream"].get<std::string>());
  if (j.contains("frame_interval")) {
    if (j["frame_interval"].is_null()) {
      c.frame_interval.reset();
    } else {
      c.frame_interval = DicomTag::parse(j["frame_interval"].get<std::string>());
    }
  }
  if (j.contains("rho_to_cm")) c.rho_to_cm = j["rho_to_cm"].get<double>();
  if (j.contains("angle_unit")) {
    const auto unit = j["angle_unit"].get<std::string>();
    if (unit == "radians") {
      c.angle_unit = AngleUnit::radians;
    } else if (unit == "degrees") {
      c.angle_unit = AngleUnit::degrees;
    } else {
      throw input_error("angle_unit must be 'radians' or 'degrees'");
    }
  }
  if (j.contains("payload_axis_order")) {
    c.payload_axis_order = j["payload_axis_order"].get<std::array<int, 3>>();
  }
}

bool looks_like_dicom(std::span<const std::uint8_t> bytes) noexcept {
  return bytes.size() >= kPreambleBytes + 4 &&
         std::memcmp(bytes.data() + kPreambleBytes, "DICM", 4) == 0;
}

std::vector<DicomElement> walk_dicom(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, looks_like_dicom(bytes) ? kPreambleBytes + 4 : 0);
  std::vector<DicomElement> elements;
  while (!r.done()) {
    DicomElement e;
    e.tag = r.tag();
    e.vr = read_vr(r);
    std::uint32_t len = 0;
    if (has_long_length(e.vr)) {
      r.u16();
      len = r.u32();
    } else {
      len = r.u16();
    }
    if (len == kUndefinedLength) {
      skip_undefined_sequence(r, 0);
      continue;
    }
    e.value = r.take(len);
    elements.push_back(e);
  }
  return elements;
}

DicomPayload parse_dicom_private_payload(std::span<const std::uint8_t> bytes,
                                         const TagConfig& config) {
  std::map<DicomTag, DicomElement> by_tag;
  for (const auto& e : walk_dicom(bytes)) by_tag.emplace(e.tag, e);

  const auto dims = element_numbers(require(by_tag, config.dims));
  const auto bounds = element_numbers(require(by_tag, config.bounds));
  const auto& stream = require(by_tag, config.stream);

  if (dims.size() != 4) throw input_error("dims tag must hold 4 values (I, J, K, T)");
  if (bounds.size() != 6) throw input_error("bounds tag must hold 6 values");
  for (double d : dims) {
    if (d < 0 || d != std::floor(d) || d > 1e9) throw input_error("dims must be non-negative integers");
  }

  DicomPayload out;
  out.meta.dims = VolumeDims{static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]),
                             static_cast<std::size_t>(dims[2]), static_cast<std::size_t>(dims[3])};
  const double a = angle_scale(config.angle_unit);
  out.meta.bounds = BoundsMatrix{bounds[0] * config.rho_to_cm, bounds[1] * config.rho_to_cm,
                                 bounds[2] * a, bounds[3] * a, bounds[4] * a, bounds[5] * a};
  if (config.frame_interval) {
    if (const auto it = by_tag.find(*config.frame_interval); it != by_tag.end()) {
      const auto v = element_numbers(it->second);
      if (!v.empty()) out.meta.frame_interval_ms = v.front();
    }
  }
  out.meta.validate();
  out.stream.source = StreamSource::dicom_private_tag;
  out.stream.bytes.assign(stream.value.begin(), stream.value.end());
  return out;
}

std::vector<std::uint8_t> write_dicom_fixture(const VolumeMeta& meta, const RawStream& stream,
                                              const TagConfig& config) {
  std::vector<std::uint8_t> out(kPreambleBytes, 0);
  out.insert(out.end(), {'D', 'I', 'C', 'M'});

  std::vector<std::uint8_t> group2;
  append_element(group2, {0x0002, 0x0010}, "UI", text("1.2.840.10008.1.2.1"), 0);
  append_element(out, {0x0002, 0x0000}, "UL", pack<std::uint32_t>({static_cast<std::uint32_t>(group2.size())}), 0);
  out.insert(out.end(), group2.begin(), group2.end());

  const double a = angle_scale(config.angle_unit);
  const auto& b = meta.bounds;
  std::map<DicomTag, std::pair<std::string, std::vector<std::uint8_t>>> elements;
  elements[{0x0008, 0x0060}] = {"CS", text("US")};
  elements[config.dims] = {
      "UL", pack<std::uint32_t>({static_cast<std::uint32_t>(meta.dims.i), static_cast<std::uint32_t>(meta.dims.j),
                                 static_cast<std::uint32_t>(meta.dims.k), static_cast<std::uint32_t>(meta.dims.t)})};
  elements[config.bounds] = {
      "FD", pack<double>({b.rho_min / config.rho_to_cm, b.rho_max / config.rho_to_cm, b.phi_min / a,
                          b.phi_max / a, b.theta_min / a, b.theta_max / a})};
  elements[config.stream] = {"OB", stream.bytes};
  if (config.frame_interval && meta.frame_interval_ms) {
    elements[*config.frame_interval] = {"FD", pack<double>({*meta.frame_interval_ms})};
  }
  for (auto& [tag, entry] : elements) {
    const bool is_text = entry.first == "CS";
    append_element(out, tag, entry.first, std::move(entry.second), is_text ? ' ' : 0);
  }
  return out;
}

}  // namespace echoslice
