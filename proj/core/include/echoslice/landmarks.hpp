#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "echoslice/geometry.hpp"
#include "echoslice/resampler.hpp"
#include "echoslice/volume.hpp"

namespace echoslice {

/// Shortest apex-to-base distance accepted from a provider.
inline constexpr double kMinLvLengthCm = 2.0;

struct LandmarkProviderResult {
  Pixel apex;
  Pixel base;
  std::optional<Image8> lv_mask;  ///< same size as the input image when present
};

/// Finds the LV apex and base in a rendered apical four-chamber image.
class LandmarkProvider {
 public:
  virtual ~LandmarkProvider() = default;
  virtual LandmarkProviderResult locate(const SliceImage& a4c) = 0;
};

struct LandmarkSet {
  PlaneAD plane_a4c;
  PlaneAD plane_sax;
  PlaneAD plane_la;
  CartesianPoint p_apex;
  Vec3 v_apex;  ///< unit, apex -> base
  double l_lv = 0.0;
};

void to_json(nlohmann::json& j, const LandmarkSet& lm);
void from_json(const nlohmann::json& j, LandmarkSet& lm);

/// Looking straight down the probe axis: (d, phi, theta) = (0, 0, 90).
PlaneAD a4c_plane();

/// Short-axis plane through the apex with normal apex->base; long-axis plane
/// through the apex with normal n_sax x n_a4c. Throws "implausible LV length"
/// below kMinLvLengthCm.
LandmarkSet landmarks_from_points(const CartesianPoint& apex, const CartesianPoint& base);

/// Renders the A4C plane at `ed_frame`, asks the provider for apex/base
/// pixels and lifts them into 3D.
LandmarkSet locate_landmarks(const VolumeSequence& volume, LandmarkProvider& provider,
                             std::size_t ed_frame, const ViewRenderConfig& render_config = {},
                             const RenderOptions& options = {});

/// Checks a provider answer against the image it was computed on.
void validate_provider_result(const LandmarkProviderResult& result, const SliceImage& image);

/// Parses the provider wire response {apex: [r,c], base: [r,c], mask?: {size, counts}}.
/// Each failure mode has its own message under "landmarks unavailable (...)".
LandmarkProviderResult parse_provider_response(const std::string& body, const SliceImage& image);

/// Request body {image_png_base64, cm_per_pix}.
std::string provider_request(const SliceImage& image);

/// Adapter for an out-of-process model: shell command or http:// URL.
std::unique_ptr<LandmarkProvider> external_provider(const std::string& command_or_url,
                                                    std::chrono::milliseconds timeout);

/// Stub that always answers the same relative positions in the image
/// (row and column as fractions of height and width).
std::unique_ptr<LandmarkProvider> fixed_fraction_provider(double apex_row, double apex_col,
                                                          double base_row, double base_col);

/// Run-length mask {size: [h, w], counts: [...]}: alternating background and
/// foreground run lengths over row-major pixel order, background first.
nlohmann::json encode_mask_rle(const Image8& mask);
Image8 decode_mask_rle(const nlohmann::json& rle);

}  // namespace echoslice
