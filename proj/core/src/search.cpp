#include "echoslice/search.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include <nlohmann/json.hpp>

#include "echoslice/image_io.hpp"
#include "echoslice/transport.hpp"

namespace echoslice {
namespace {

using Clock = std::chrono::steady_clock;

constexpr std::array<std::string_view, 8> kViewNames = {"A2C",  "A3C",      "A4C",     "A5C",
                                                        "PLAX", "SAX_apex", "SAX_PAP", "SAX_MV"};

constexpr std::array<View, 8> kExtractionOrder = {View::A4C,      View::A2C,     View::A3C,
                                                  View::PLAX,     View::A5C,     View::SAX_apex,
                                                  View::SAX_PAP,  View::SAX_MV};

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

const PlaneAD& dependency(const std::map<View, PlaneAD>& selected, View view) {
  auto it = selected.find(view);
  if (it == selected.end()) {
    throw input_error("sequential dependency unmet: " + std::string(view_name(view)) +
                      " not selected");
  }
  return it->second;
}

// Runs body(i) for i in [0, n) on up to `threads` workers and rethrows the
// failure with the lowest index.
template <class Body>
void parallel_for(std::size_t n, unsigned threads, Body body) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    const auto count = std::min<std::size_t>(threads, n);
    for (std::size_t w = 0; w < count; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            body(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Error scorer_unavailable(const std::string& reason) {
  return adapter_error("scorer unavailable (" + reason + ")");
}

class ExternalScorer final : public ViewScorer {
 public:
  ExternalScorer(std::unique_ptr<Transport> transport, std::size_t batch)
      : transport_(std::move(transport)), batch_(std::max<std::size_t>(1, batch)) {}

  std::vector<double> score(std::span<const SliceImage* const> images, View view) override {
    nlohmann::json request{{"target_view", view_name(view)}, {"images", nlohmann::json::array()}};
    for (const auto* image : images) {
      request["images"].push_back(base64_encode(encode_png(image->image)));
    }
    std::string body;
    try {
      body = transport_->exchange(request.dump());
    } catch (const TransportError& e) {
      throw scorer_unavailable(e.timed_out() ? "timeout" : e.what());
    }
    nlohmann::json response;
    try {
      response = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error&) {
      throw scorer_unavailable("malformed JSON");
    }
    if (!response.is_object() || !response.contains("probabilities") ||
        !response["probabilities"].is_array()) {
      throw scorer_unavailable("schema error: missing 'probabilities'");
    }
    std::vector<double> out;
    for (const auto& p : response["probabilities"]) {
      if (!p.is_number()) throw scorer_unavailable("schema error: non-numeric probability");
      out.push_back(p.get<double>());
    }
    return out;
  }

  std::size_t batch_size() const override { return batch_; }

 private:
  std::unique_ptr<Transport> transport_;
  std::size_t batch_;
};

class ConstantScorer final : public ViewScorer {
 public:
  explicit ConstantScorer(double value) : value_(value) {}
  std::vector<double> score(std::span<const SliceImage* const> images, View) override {
    return std::vector<double>(images.size(), value_);
  }

 private:
  double value_;
};

const char* ed_kind_name(EdStrategy::Kind kind) {
  switch (kind) {
    case EdStrategy::Kind::fixed: return "fixed";
    case EdStrategy::Kind::largest_lv_area: return "largest_lv_area";
    case EdStrategy::Kind::first: break;
  }
  return "first";
}

}  // namespace

std::string_view view_name(View view) { return kViewNames[static_cast<std::size_t>(view)]; }

View parse_view(std::string_view name) {
  for (std::size_t i = 0; i < kViewNames.size(); ++i) {
    if (kViewNames[i] == name) return static_cast<View>(i);
  }
  throw input_error("unknown view '" + std::string(name) + "'");
}

std::span<const View> extraction_order() { return kExtractionOrder; }

bool ParamRange::contains(const PlaneAD& p, double slack) const {
  auto in = [slack](const Interval& iv, double v) {
    return v >= iv.min - slack && v <= iv.max + slack;
  };
  return in(d, p.d) && in(phi, p.phi_n) && in(theta, p.theta_n);
}

void to_json(nlohmann::json& j, const ParamRange& r) {
  j = nlohmann::json{{"d", {r.d.min, r.d.max}},
                     {"phi", {r.phi.min, r.phi.max}},
                     {"theta", {r.theta.min, r.theta.max}}};
}

void StepConfig::validate() const {
  if (!(d_cm > 0.0) || !(angle_deg > 0.0) || !std::isfinite(d_cm) || !std::isfinite(angle_deg)) {
    throw input_error("search steps must be positive");
  }
}

std::optional<View> range_dependency(View view) {
  switch (view) {
    case View::A3C: return View::A2C;
    case View::PLAX: return View::A3C;
    default: return std::nullopt;
  }
}

ParamRange build_search_range(const LandmarkSet& lm, View view,
                              const std::map<View, PlaneAD>& selected,
                              const RangeOptions& options) {
  if (options.a2c_rotation_sign != 1 && options.a2c_rotation_sign != -1) {
    throw input_error("a2c_rotation_sign must be +1 or -1");
  }
  const PlaneAD& la = lm.plane_la;
  const PlaneAD& a4c = lm.plane_a4c;
  const PlaneAD& sax = lm.plane_sax;
  const double l = lm.l_lv;
  auto sax_level = [&](double lo, double hi) {
    return ParamRange{{sax.d + lo * l, sax.d + hi * l}, {sax.phi_n, sax.phi_n},
                      {sax.theta_n, sax.theta_n}};
  };

  switch (view) {
    case View::A2C: {
      const double end = la.theta_n + options.a2c_rotation_sign * 30.0;
      return {{la.d, la.d}, {la.phi_n, la.phi_n}, {std::min(la.theta_n, end), std::max(la.theta_n, end)}};
    }
    case View::A3C: {
      const PlaneAD& a2c = dependency(selected, View::A2C);
      return {{la.d, la.d}, {la.phi_n, la.phi_n}, {a2c.theta_n - 60.0, a2c.theta_n - 15.0}};
    }
    case View::A4C:
      return ParamRange::point(a4c);
    case View::A5C:
      return {{a4c.d, a4c.d}, {a4c.phi_n, a4c.phi_n}, {a4c.theta_n + 10.0, a4c.theta_n + 35.0}};
    case View::SAX_apex:
      return sax_level(0.10, 0.20);
    case View::SAX_PAP:
      return sax_level(0.40, 0.50);
    case View::SAX_MV:
      return sax_level(0.75, 0.80);
    case View::PLAX: {
      const PlaneAD& a3c = dependency(selected, View::A3C);
      return {{la.d, la.d}, {a3c.phi_n, a3c.phi_n}, {a3c.theta_n, a3c.theta_n}};
    }
  }
  throw Error(ErrorKind::internal, "unhandled view");
}

std::map<View, ParamRange> build_search_ranges(const LandmarkSet& lm,
                                               const std::map<View, PlaneAD>& selected,
                                               const RangeOptions& options) {
  std::map<View, ParamRange> out;
  for (View v : kAllViews) {
    const auto dep = range_dependency(v);
    if (dep && !selected.contains(*dep)) continue;
    out.emplace(v, build_search_range(lm, v, selected, options));
  }
  return out;
}

std::size_t sweep_count(const Interval& interval, double step) {
  if (!(interval.max >= interval.min)) throw input_error("range minimum exceeds maximum");
  if (interval.span() == 0.0) return 1;
  return static_cast<std::size_t>(std::floor(interval.span() / step + 1e-9)) + 1;
}

bool plane_less(const PlaneAD& a, const PlaneAD& b) {
  if (a.d != b.d) return a.d < b.d;
  if (a.phi_n != b.phi_n) return a.phi_n < b.phi_n;
  return a.theta_n < b.theta_n;
}

std::vector<PlaneAD> enumerate_candidates(const ParamRange& range, const StepConfig& steps) {
  steps.validate();
  const std::size_t nd = sweep_count(range.d, steps.d_cm);
  const std::size_t np = sweep_count(range.phi, steps.angle_deg);
  const std::size_t nt = sweep_count(range.theta, steps.angle_deg);
  std::vector<PlaneAD> out;
  out.reserve(nd * np * nt);
  for (std::size_t a = 0; a < nd; ++a) {
    const double d = range.d.min + static_cast<double>(a) * steps.d_cm;
    for (std::size_t b = 0; b < np; ++b) {
      const double phi = range.phi.min + static_cast<double>(b) * steps.angle_deg;
      for (std::size_t c = 0; c < nt; ++c) {
        out.push_back({d, phi, range.theta.min + static_cast<double>(c) * steps.angle_deg});
      }
    }
  }
  return out;
}

std::unique_ptr<ViewScorer> external_scorer(const std::string& command_or_url,
                                            std::chrono::milliseconds timeout,
                                            std::size_t batch_size) {
  return std::make_unique<ExternalScorer>(make_transport(command_or_url, timeout), batch_size);
}

std::unique_ptr<ViewScorer> constant_scorer(double value) {
  return std::make_unique<ConstantScorer>(value);
}

std::optional<double> ScoreCache::find(View view, const PlaneAD& plane, std::size_t frame) const {
  std::lock_guard lock(mutex_);
  auto it = scores_.find({view, plane.d, plane.phi_n, plane.theta_n, frame});
  if (it == scores_.end()) return std::nullopt;
  return it->second;
}

void ScoreCache::insert(View view, const PlaneAD& plane, std::size_t frame, double score) {
  std::lock_guard lock(mutex_);
  scores_[{view, plane.d, plane.phi_n, plane.theta_n, frame}] = score;
}

std::size_t ScoreCache::size() const {
  std::lock_guard lock(mutex_);
  return scores_.size();
}

void to_json(nlohmann::json& j, const SelectedView& s) {
  j = nlohmann::json{{"view", view_name(s.view)},
                     {"plane", plane_all_forms_json(s.plane)},
                     {"score", s.score},
                     {"render_config", s.render_config},
                     {"range", s.range}};
}

SelectedView select_view(const VolumeSequence& volume, View view, const ParamRange& range,
                         ViewScorer& scorer, std::size_t frame,
                         const ViewRenderConfig& render_config, const SelectOptions& options,
                         SelectionStats* stats) {
  const auto start = Clock::now();
  std::vector<CartesianPoint> own_shell;
  std::span<const CartesianPoint> shell = options.shell;
  if (shell.empty()) {
    own_shell = boundary_shell(volume.meta());
    shell = own_shell;
  }

  const auto candidates = enumerate_candidates(range, options.steps);
  std::vector<PlaneAD> viable;
  for (const auto& c : candidates) {
    if (plane_hits_volume(shell, c)) viable.push_back(c);
  }
  SelectionStats local;
  local.candidates = candidates.size();
  local.viable = viable.size();
  if (viable.empty()) {
    throw input_error("no viable candidate for " + std::string(view_name(view)));
  }

  std::vector<double> scores(viable.size(), 0.0);
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < viable.size(); ++i) {
    if (options.cache) {
      if (auto hit = options.cache->find(view, viable[i], frame)) {
        scores[i] = *hit;
        continue;
      }
    }
    pending.push_back(i);
  }

  RenderOptions render_options;
  render_options.shell = shell;
  const std::size_t batch = std::max<std::size_t>(1, scorer.batch_size());
  for (std::size_t first = 0; first < pending.size(); first += batch) {
    const std::size_t n = std::min(batch, pending.size() - first);
    std::vector<SliceImage> images(n);
    parallel_for(n, options.parallelism, [&](std::size_t b) {
      images[b] = render_slice(volume, viable[pending[first + b]], frame, render_config,
                               render_options);
    });
    std::vector<const SliceImage*> ptrs;
    for (const auto& im : images) ptrs.push_back(&im);

    std::vector<double> got;
    try {
      got = scorer.score(ptrs, view);
    } catch (const Error& e) {
      throw Error(e.kind(), std::string(e.what()) + " while scoring " + std::to_string(n) +
                                " " + std::string(view_name(view)) + " candidates from (" +
                                nlohmann::json(viable[pending[first]]).dump() + ")");
    } catch (const std::exception& e) {
      throw adapter_error(std::string("scorer failed: ") + e.what());
    }
    if (got.size() != n) {
      throw adapter_error("scorer returned " + std::to_string(got.size()) + " probabilities for " +
                          std::to_string(n) + " images");
    }
    for (std::size_t b = 0; b < n; ++b) {
      if (!std::isfinite(got[b]) || got[b] < 0.0 || got[b] > 1.0) {
        throw adapter_error("scorer returned probability outside [0, 1]");
      }
      scores[pending[first + b]] = got[b];
      if (options.cache) options.cache->insert(view, viable[pending[first + b]], frame, got[b]);
    }
    local.scored += n;
  }

  // viable is in lexicographic order, so keeping the first maximum breaks ties.
  std::size_t best = 0;
  for (std::size_t i = 1; i < viable.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  local.elapsed_ms = ms_since(start);
  if (stats) *stats = local;
  return {view, viable[best], scores[best], render_config, range};
}

void to_json(nlohmann::json& j, const EdStrategy& s) {
  j = nlohmann::json{{"kind", ed_kind_name(s.kind)}};
  if (s.kind == EdStrategy::Kind::fixed) j["frame"] = s.frame;
}

void from_json(const nlohmann::json& j, EdStrategy& s) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "first") {
    s = EdStrategy::first_frame();
  } else if (kind == "fixed") {
    s = EdStrategy::fixed(j.at("frame").get<std::size_t>());
  } else if (kind == "largest_lv_area") {
    s = EdStrategy::largest_lv_area();
  } else {
    throw input_error("unknown ED strategy '" + kind + "'");
  }
}

std::size_t end_diastole_frame(const VolumeSequence& volume, const EdStrategy& strategy,
                               LandmarkProvider* provider, const ViewRenderConfig& render_config,
                               const RenderOptions& options) {
  const std::size_t frames = volume.dims().t;
  switch (strategy.kind) {
    case EdStrategy::Kind::first:
      return 0;
    case EdStrategy::Kind::fixed:
      if (strategy.frame >= frames) {
        throw input_error("ED frame " + std::to_string(strategy.frame) + " out of range (T=" +
                          std::to_string(frames) + ")");
      }
      return strategy.frame;
    case EdStrategy::Kind::largest_lv_area:
      break;
  }
  if (!provider) throw input_error("largest_lv_area needs a landmark provider");
  std::size_t best = 0;
  std::size_t best_area = 0;
  for (std::size_t t = 0; t < frames; ++t) {
    const SliceImage a4c = render_slice(volume, a4c_plane(), t, render_config, options);
    LandmarkProviderResult r;
    try {
      r = provider->locate(a4c);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw adapter_error(std::string("landmarks unavailable (") + e.what() + ")");
    }
    if (!r.lv_mask) throw adapter_error("landmarks unavailable (provider returned no LV mask)");
    const auto area = static_cast<std::size_t>(
        std::count_if(r.lv_mask->pixels.begin(), r.lv_mask->pixels.end(),
                      [](std::uint8_t p) { return p != 0; }));
    if (t == 0 || area > best_area) {
      best = t;
      best_area = area;
    }
  }
  return best;
}

double edv_disk_summation(double lv_length_cm, std::span<const double> areas_cm2) {
  if (areas_cm2.empty()) throw input_error("disk summation needs at least one area");
  if (!(lv_length_cm > 0.0)) throw input_error("LV length must be positive");
  const double h = lv_length_cm / static_cast<double>(areas_cm2.size());
  double sum = 0.0;
  for (double a : areas_cm2) {
    if (!(a >= 0.0)) throw input_error("areas must be non-negative");
    sum += h * a;
  }
  return sum;
}

ExtractionConfig ExtractionConfig::defaults() {
  ExtractionConfig c;
  c.render[View::PLAX].rotation_deg = 70.0;
  return c;
}

const ViewRenderConfig& ExtractionConfig::render_for(View view) const {
  static const ViewRenderConfig fallback{};
  auto it = render.find(view);
  return it == render.end() ? fallback : it->second;
}

void to_json(nlohmann::json& j, const ExtractionConfig& c) {
  nlohmann::json render = nlohmann::json::object();
  for (View v : kAllViews) render[std::string(view_name(v))] = c.render_for(v);
  j = nlohmann::json{{"render", render},
                     {"landmark_render", c.landmark_render},
                     {"steps", {{"d_cm", c.steps.d_cm}, {"angle_deg", c.steps.angle_deg}}},
                     {"a2c_rotation_sign", c.ranges.a2c_rotation_sign},
                     {"ed_strategy", c.ed},
                     {"parallelism", c.parallelism},
                     {"render_videos", c.render_videos}};
}

void from_json(const nlohmann::json& j, ExtractionConfig& c) {
  c = ExtractionConfig::defaults();
  if (j.contains("render")) {
    for (const auto& [name, cfg] : j.at("render").items()) {
      c.render[parse_view(name)] = cfg.get<ViewRenderConfig>();
    }
  }
  if (j.contains("landmark_render")) c.landmark_render = j.at("landmark_render").get<ViewRenderConfig>();
  if (j.contains("steps")) {
    c.steps.d_cm = j.at("steps").value("d_cm", c.steps.d_cm);
    c.steps.angle_deg = j.at("steps").value("angle_deg", c.steps.angle_deg);
  }
  c.ranges.a2c_rotation_sign = j.value("a2c_rotation_sign", c.ranges.a2c_rotation_sign);
  if (j.contains("ed_strategy")) c.ed = j.at("ed_strategy").get<EdStrategy>();
  c.parallelism = j.value("parallelism", c.parallelism);
  c.render_videos = j.value("render_videos", c.render_videos);
  c.steps.validate();
  for (const auto& [view, cfg] : c.render) cfg.validate();
  c.landmark_render.validate();
}

void to_json(nlohmann::json& j, const ExtractionResult& r) {
  nlohmann::json views = nlohmann::json::object();
  for (const auto& [v, s] : r.views) views[std::string(view_name(v))] = s;
  nlohmann::json per_view = nlohmann::json::object();
  for (const auto& [v, s] : r.provenance.per_view) {
    per_view[std::string(view_name(v))] = {{"candidates", s.candidates},
                                           {"viable", s.viable},
                                           {"scored", s.scored},
                                           {"elapsed_ms", s.elapsed_ms}};
  }
  nlohmann::json order = nlohmann::json::array();
  for (View v : r.provenance.order) order.push_back(view_name(v));
  j = nlohmann::json{{"ed_frame", r.ed_frame},
                     {"views", views},
                     {"provenance",
                      {{"per_view", per_view},
                       {"order", order},
                       {"landmarks_ms", r.provenance.landmarks_ms},
                       {"render_ms", r.provenance.render_ms},
                       {"total_ms", r.provenance.total_ms}}}};
  j["landmarks"] = r.landmarks ? nlohmann::json(*r.landmarks) : nlohmann::json(nullptr);
}

ExtractionResult extract_standard_views(const VolumeSequence& volume, LandmarkProvider& provider,
                                        ViewScorer& scorer, const ExtractionConfig& config,
                                        const ProgressFn& progress) {
  const auto start = Clock::now();
  ExtractionResult result;
  std::string stage;
  const double total_steps = 2.0 + 2.0 * static_cast<double>(kExtractionOrder.size());
  double done = 0.0;
  auto report = [&](std::string_view name) {
    done += 1.0;
    if (progress) progress(name, done / total_steps);
  };

  try {
    config.steps.validate();
    const auto shell = boundary_shell(volume.meta());
    RenderOptions render_options;
    render_options.shell = shell;
    render_options.threads = std::max(1u, config.parallelism);

    stage = "ed_frame";
    result.ed_frame = end_diastole_frame(volume, config.ed, &provider, config.landmark_render,
                                         render_options);
    report(stage);

    stage = "landmarks";
    const auto lm_start = Clock::now();
    result.landmarks =
        locate_landmarks(volume, provider, result.ed_frame, config.landmark_render, render_options);
    result.provenance.landmarks_ms = ms_since(lm_start);
    report(stage);

    SelectOptions select_options;
    select_options.steps = config.steps;
    select_options.parallelism = std::max(1u, config.parallelism);
    select_options.shell = shell;
    std::map<View, PlaneAD> selected;
    for (View v : kExtractionOrder) {
      stage = "search:" + std::string(view_name(v));
      const ParamRange range = build_search_range(*result.landmarks, v, selected, config.ranges);
      SelectionStats stats;
      result.views[v] = select_view(volume, v, range, scorer, result.ed_frame,
                                    config.render_for(v), select_options, &stats);
      selected[v] = result.views[v].plane;
      result.provenance.per_view[v] = stats;
      result.provenance.order.push_back(v);
      report(stage);
    }

    const auto render_start = Clock::now();
    for (View v : kExtractionOrder) {
      stage = "render:" + std::string(view_name(v));
      if (config.render_videos) {
        auto& video = result.videos[v];
        video.clear();
        for (std::size_t t = 0; t < volume.dims().t; ++t) {
          video.push_back(
              render_slice(volume, result.views[v].plane, t, config.render_for(v), render_options)
                  .image);
        }
      }
      report(stage);
    }
    result.provenance.render_ms = ms_since(render_start);
  } catch (const ExtractionError&) {
    throw;
  } catch (const Error& e) {
    result.provenance.total_ms = ms_since(start);
    throw ExtractionError(e, stage, std::move(result));
  } catch (const std::exception& e) {
    result.provenance.total_ms = ms_since(start);
    throw ExtractionError(Error(ErrorKind::internal, e.what()), stage, std::move(result));
  }
  result.provenance.total_ms = ms_since(start);
  return result;
}

}  // namespace echoslice
