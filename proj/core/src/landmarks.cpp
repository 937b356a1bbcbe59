#include "echoslice/landmarks.hpp"

#include <algorithm>
#include <cmath>
#include <string_view>

#include <nlohmann/json.hpp>

#include "echoslice/error.hpp"
#include "echoslice/image_io.hpp"
#include "echoslice/transport.hpp"

namespace echoslice {
namespace {

constexpr std::string_view kUnavailable = "landmarks unavailable";

Error unavailable(const std::string& reason) {
  return adapter_error(std::string(kUnavailable) + " (" + reason + ")");
}

bool inside(const Pixel& p, const Image8& image) {
  return p.row >= 0 && p.col >= 0 && static_cast<std::size_t>(p.row) < image.height &&
         static_cast<std::size_t>(p.col) < image.width;
}

Pixel parse_pixel(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw unavailable(std::string("schema error: missing '") + key + "'");
  const auto& v = j[key];
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    throw unavailable(std::string("schema error: '") + key + "' must be [row, col]");
  }
  return {static_cast<std::ptrdiff_t>(std::llround(v[0].get<double>())),
          static_cast<std::ptrdiff_t>(std::llround(v[1].get<double>()))};
}

class ExternalLandmarkProvider final : public LandmarkProvider {
 public:
  explicit ExternalLandmarkProvider(std::unique_ptr<Transport> transport)
      : transport_(std::move(transport)) {}

  LandmarkProviderResult locate(const SliceImage& a4c) override {
    std::string body;
    try {
      body = transport_->exchange(provider_request(a4c));
    } catch (const TransportError& e) {
      throw unavailable(e.timed_out() ? "timeout" : e.what());
    }
    return parse_provider_response(body, a4c);
  }

 private:
  std::unique_ptr<Transport> transport_;
};

class FixedFractionProvider final : public LandmarkProvider {
 public:
  FixedFractionProvider(double ar, double ac, double br, double bc)
      : ar_(ar), ac_(ac), br_(br), bc_(bc) {}

  LandmarkProviderResult locate(const SliceImage& a4c) override {
    auto at = [&](double r, double c) {
      const auto h = static_cast<double>(a4c.image.height - 1);
      const auto w = static_cast<double>(a4c.image.width - 1);
      return Pixel{static_cast<std::ptrdiff_t>(std::lround(r * h)),
                   static_cast<std::ptrdiff_t>(std::lround(c * w))};
    };
    return {at(ar_, ac_), at(br_, bc_), std::nullopt};
  }

 private:
  double ar_, ac_, br_, bc_;
};

}  // namespace

void to_json(nlohmann::json& j, const LandmarkSet& lm) {
  j = nlohmann::json{{"plane_a4c", lm.plane_a4c}, {"plane_sax", lm.plane_sax},
                     {"plane_la", lm.plane_la},   {"p_apex", lm.p_apex},
                     {"v_apex", lm.v_apex},       {"l_lv", lm.l_lv}};
}

void from_json(const nlohmann::json& j, LandmarkSet& lm) {
  lm.plane_a4c = j.at("plane_a4c").get<PlaneAD>();
  lm.plane_sax = j.at("plane_sax").get<PlaneAD>();
  lm.plane_la = j.at("plane_la").get<PlaneAD>();
  lm.p_apex = j.at("p_apex").get<Vec3>();
  lm.v_apex = j.at("v_apex").get<Vec3>();
  lm.l_lv = j.at("l_lv").get<double>();
}

PlaneAD a4c_plane() { return {0.0, 0.0, 90.0}; }

LandmarkSet landmarks_from_points(const CartesianPoint& apex, const CartesianPoint& base) {
  const Vec3 axis = base - apex;
  const double length = norm(axis);
  if (!(length >= kMinLvLengthCm)) {
    throw adapter_error("implausible LV length (" + std::to_string(length) + " cm)");
  }
  LandmarkSet lm;
  lm.plane_a4c = a4c_plane();
  lm.p_apex = apex;
  lm.v_apex = axis / length;
  lm.l_lv = length;
  lm.plane_sax = plane_pn_to_ad(PlanePN(apex, lm.v_apex));

  const Vec3 n_a4c = plane_ad_to_pn(lm.plane_a4c).normal();
  const Vec3 la_normal = cross(lm.v_apex, n_a4c);
  if (norm(la_normal) < 1e-9) {
    throw adapter_error("degenerate landmarks: LV axis parallel to the A4C normal");
  }
  lm.plane_la = plane_pn_to_ad(PlanePN(apex, la_normal));
  return lm;
}

void validate_provider_result(const LandmarkProviderResult& result, const SliceImage& image) {
  if (!inside(result.apex, image.image) || !inside(result.base, image.image)) {
    throw unavailable("out-of-bounds pixel");
  }
  if (result.lv_mask && (result.lv_mask->width != image.image.width ||
                         result.lv_mask->height != image.image.height)) {
    throw unavailable("mask size does not match image");
  }
}

LandmarkSet locate_landmarks(const VolumeSequence& volume, LandmarkProvider& provider,
                             std::size_t ed_frame, const ViewRenderConfig& render_config,
                             const RenderOptions& options) {
  const SliceImage a4c = render_slice(volume, a4c_plane(), ed_frame, render_config, options);
  LandmarkProviderResult result;
  try {
    result = provider.locate(a4c);
  } catch (const Error& e) {
    if (std::string_view(e.what()).starts_with(kUnavailable)) throw;
    throw unavailable(e.what());
  } catch (const std::exception& e) {
    throw unavailable(e.what());
  }
  validate_provider_result(result, a4c);
  if (result.apex == result.base) throw adapter_error("implausible LV length (apex equals base)");
  const Vec3 apex = pixel_to_world(a4c.grid, a4c.config, result.apex);
  const Vec3 base = pixel_to_world(a4c.grid, a4c.config, result.base);
  return landmarks_from_points(apex, base);
}

std::string provider_request(const SliceImage& image) {
  const auto png = encode_png(image.image);
  return nlohmann::json{{"image_png_base64", base64_encode(png)}, {"cm_per_pix", image.cm_per_pix}}
      .dump();
}

LandmarkProviderResult parse_provider_response(const std::string& body, const SliceImage& image) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error&) {
    throw unavailable("malformed JSON");
  }
  if (!j.is_object()) throw unavailable("schema error: response must be an object");
  LandmarkProviderResult result;
  result.apex = parse_pixel(j, "apex");
  result.base = parse_pixel(j, "base");
  if (j.contains("mask") && !j["mask"].is_null()) {
    try {
      result.lv_mask = decode_mask_rle(j["mask"]);
    } catch (const std::exception& e) {
      throw unavailable(std::string("schema error: bad mask: ") + e.what());
    }
  }
  validate_provider_result(result, image);
  return result;
}

std::unique_ptr<LandmarkProvider> external_provider(const std::string& command_or_url,
                                                    std::chrono::milliseconds timeout) {
  return std::make_unique<ExternalLandmarkProvider>(make_transport(command_or_url, timeout));
}

std::unique_ptr<LandmarkProvider> fixed_fraction_provider(double apex_row, double apex_col,
                                                          double base_row, double base_col) {
  for (double f : {apex_row, apex_col, base_row, base_col}) {
    if (!(f >= 0.0 && f <= 1.0)) throw input_error("landmark fractions must be in [0, 1]");
  }
  return std::make_unique<FixedFractionProvider>(apex_row, apex_col, base_row, base_col);
}

nlohmann::json encode_mask_rle(const Image8& mask) {
  std::vector<std::size_t> counts;
  bool current = false;
  std::size_t run = 0;
  for (std::uint8_t px : mask.pixels) {
    const bool on = px != 0;
    if (on != current) {
      counts.push_back(run);
      run = 0;
      current = on;
    }
    ++run;
  }
  counts.push_back(run);
  return nlohmann::json{{"size", {mask.height, mask.width}}, {"counts", counts}};
}

Image8 decode_mask_rle(const nlohmann::json& rle) {
  const auto height = rle.at("size").at(0).get<std::size_t>();
  const auto width = rle.at("size").at(1).get<std::size_t>();
  if (width == 0 || height == 0 || width > 1u << 15 || height > 1u << 15) {
    throw input_error("mask size out of range");
  }
  Image8 mask(width, height);
  std::size_t pos = 0;
  bool on = false;
  for (const auto& c : rle.at("counts")) {
    const auto run = c.get<std::size_t>();
    if (run > mask.pixels.size() - pos) throw input_error("mask runs exceed image size");
    if (on) std::fill_n(mask.pixels.begin() + static_cast<std::ptrdiff_t>(pos), run, 1);
    pos += run;
    on = !on;
  }
  if (pos != mask.pixels.size()) throw input_error("mask runs do not cover the image");
  return mask;
}

}  // namespace echoslice
