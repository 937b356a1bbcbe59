#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "echoslice/error.hpp"
#include "echoslice/geometry.hpp"
#include "echoslice/landmarks.hpp"
#include "echoslice/resampler.hpp"
#include "echoslice/volume.hpp"

namespace echoslice {

enum class View { A2C, A3C, A4C, A5C, PLAX, SAX_apex, SAX_PAP, SAX_MV };

inline constexpr std::array<View, 8> kAllViews = {View::A2C,  View::A3C,      View::A4C,
                                                  View::A5C,  View::PLAX,     View::SAX_apex,
                                                  View::SAX_PAP, View::SAX_MV};

std::string_view view_name(View view);
/// Throws input_error for unknown names.
View parse_view(std::string_view name);

struct Interval {
  double min = 0.0;
  double max = 0.0;
  double span() const noexcept { return max - min; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

struct ParamRange {
  Interval d;      ///< cm
  Interval phi;    ///< degrees
  Interval theta;  ///< degrees

  static ParamRange point(const PlaneAD& p) {
    return {{p.d, p.d}, {p.phi_n, p.phi_n}, {p.theta_n, p.theta_n}};
  }
  /// Inclusive on both ends with a small absolute slack.
  bool contains(const PlaneAD& p, double slack = 1e-9) const;
  friend bool operator==(const ParamRange&, const ParamRange&) = default;
};

void to_json(nlohmann::json& j, const ParamRange& r);

struct StepConfig {
  double d_cm = 0.1;
  double angle_deg = 1.0;
  void validate() const;
};

struct RangeOptions {
  /// Direction of the A2C sweep away from the long-axis plane: +1 or -1.
  int a2c_rotation_sign = 1;
};

/// Views whose range reads another view's selected plane.
std::optional<View> range_dependency(View view);

/// One row of the search table. Throws "sequential dependency unmet" when
/// the row needs a selection that `selected` does not hold.
ParamRange build_search_range(const LandmarkSet& lm, View view,
                              const std::map<View, PlaneAD>& selected,
                              const RangeOptions& options = {});
/// Every row whose dependencies are satisfied by `selected`.
std::map<View, ParamRange> build_search_ranges(const LandmarkSet& lm,
                                               const std::map<View, PlaneAD>& selected,
                                               const RangeOptions& options = {});

/// Number of inclusive samples from min to max at `step`.
std::size_t sweep_count(const Interval& interval, double step);
/// Cartesian product of inclusive sweeps, ordered lexicographically in (d, phi, theta).
std::vector<PlaneAD> enumerate_candidates(const ParamRange& range, const StepConfig& steps = {});
/// Lexicographic (d, phi, theta).
bool plane_less(const PlaneAD& a, const PlaneAD& b);

/// Probability that each image shows `view`, one value per image, in order.
class ViewScorer {
 public:
  virtual ~ViewScorer() = default;
  virtual std::vector<double> score(std::span<const SliceImage* const> images, View view) = 0;
  /// Preferred number of images per score() call.
  virtual std::size_t batch_size() const { return 32; }
};

/// Adapter for an out-of-process classifier (shell command or http:// URL).
/// Request {images: [png_base64], target_view}; response {probabilities: [p]}.
std::unique_ptr<ViewScorer> external_scorer(const std::string& command_or_url,
                                            std::chrono::milliseconds timeout,
                                            std::size_t batch_size = 32);
/// Same score for every image.
std::unique_ptr<ViewScorer> constant_scorer(double value);

/// Scores memoized by (view, plane, frame). Safe to share across threads.
class ScoreCache {
 public:
  std::optional<double> find(View view, const PlaneAD& plane, std::size_t frame) const;
  void insert(View view, const PlaneAD& plane, std::size_t frame, double score);
  std::size_t size() const;

 private:
  struct Key {
    View view;
    double d, phi, theta;
    std::size_t frame;
    auto operator<=>(const Key&) const = default;
  };
  mutable std::mutex mutex_;
  std::map<Key, double> scores_;
};

struct SelectedView {
  View view = View::A4C;
  PlaneAD plane;
  double score = 0.0;
  ViewRenderConfig render_config;
  ParamRange range;
};

void to_json(nlohmann::json& j, const SelectedView& s);

struct SelectionStats {
  std::size_t candidates = 0;
  std::size_t viable = 0;
  std::size_t scored = 0;  ///< scorer evaluations, cache hits excluded
  double elapsed_ms = 0.0;
};

struct SelectOptions {
  StepConfig steps;
  unsigned parallelism = 1;
  ScoreCache* cache = nullptr;
  std::span<const CartesianPoint> shell;  ///< computed on demand when empty
};

/// Renders every candidate of `range` at `frame`, scores them and keeps the
/// argmax; ties go to the lexicographically smallest plane.
SelectedView select_view(const VolumeSequence& volume, View view, const ParamRange& range,
                         ViewScorer& scorer, std::size_t frame,
                         const ViewRenderConfig& render_config, const SelectOptions& options = {},
                         SelectionStats* stats = nullptr);

struct EdStrategy {
  enum class Kind { first, fixed, largest_lv_area };
  Kind kind = Kind::first;
  std::size_t frame = 0;  ///< for fixed

  static EdStrategy first_frame() { return {}; }
  static EdStrategy fixed(std::size_t k) { return {Kind::fixed, k}; }
  static EdStrategy largest_lv_area() { return {Kind::largest_lv_area, 0}; }
};

void to_json(nlohmann::json& j, const EdStrategy& s);
void from_json(const nlohmann::json& j, EdStrategy& s);

/// largest_lv_area renders the A4C plane in every frame and takes the frame
/// whose provider mask has the most pixels (earliest on ties).
std::size_t end_diastole_frame(const VolumeSequence& volume, const EdStrategy& strategy,
                               LandmarkProvider* provider = nullptr,
                               const ViewRenderConfig& render_config = {},
                               const RenderOptions& options = {});

/// Disk summation: sum over i of (lv_length / N) * areas[i].
double edv_disk_summation(double lv_length_cm, std::span<const double> areas_cm2);

struct ExtractionConfig {
  std::map<View, ViewRenderConfig> render;  ///< missing views use the defaults
  ViewRenderConfig landmark_render;
  StepConfig steps;
  RangeOptions ranges;
  EdStrategy ed;
  unsigned parallelism = 1;
  bool render_videos = true;

  /// Defaults with PLAX rotated by 70 degrees.
  static ExtractionConfig defaults();
  const ViewRenderConfig& render_for(View view) const;
};

void to_json(nlohmann::json& j, const ExtractionConfig& c);
/// Missing keys keep the defaults.
void from_json(const nlohmann::json& j, ExtractionConfig& c);

struct ExtractionProvenance {
  std::map<View, SelectionStats> per_view;
  std::vector<View> order;  ///< views in the order they were searched
  double landmarks_ms = 0.0;
  double render_ms = 0.0;
  double total_ms = 0.0;
};

struct ExtractionResult {
  std::map<View, SelectedView> views;
  std::optional<LandmarkSet> landmarks;
  std::size_t ed_frame = 0;
  ExtractionProvenance provenance;
  std::map<View, std::vector<Image8>> videos;  ///< one image per frame
};

/// JSON without the videos.
void to_json(nlohmann::json& j, const ExtractionResult& r);

/// Carries the stage that failed plus whatever was finished before it.
class ExtractionError : public Error {
 public:
  ExtractionError(const Error& cause, std::string stage, ExtractionResult partial)
      : Error(cause.kind(), stage + ": " + cause.what(), stage), partial_(std::move(partial)) {}
  const ExtractionResult& partial() const noexcept { return partial_; }

 private:
  ExtractionResult partial_;
};

/// Called after each stage with its name and the fraction of work done.
using ProgressFn = std::function<void(std::string_view stage, double fraction)>;

/// ED frame, landmarks, A4C, A2C, A3C, PLAX, A5C, then the three SAX levels.
ExtractionResult extract_standard_views(const VolumeSequence& volume, LandmarkProvider& provider,
                                        ViewScorer& scorer, const ExtractionConfig& config = ExtractionConfig::defaults(),
                                        const ProgressFn& progress = {});

/// Search order used by extract_standard_views.
std::span<const View> extraction_order();

}  // namespace echoslice
