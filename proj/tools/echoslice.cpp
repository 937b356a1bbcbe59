// echoslice command-line tool: decode, slice, extract, phantom, bench, serve.

#include <algorithm>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <thread>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "echoslice/container.hpp"
#include "echoslice/error.hpp"
#include "echoslice/image_io.hpp"
#include "echoslice/phantom.hpp"
#include "echoslice/resampler.hpp"
#include "echoslice/search.hpp"
#include "echoslice/service.hpp"
#include "echoslice/store.hpp"

namespace fs = std::filesystem;
using namespace echoslice;

namespace {

using Clock = std::chrono::steady_clock;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::input: return 2;
    case ErrorKind::adapter: return 3;
    case ErrorKind::internal: break;
  }
  return 4;
}

nlohmann::json read_json_file(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw input_error("invalid JSON in " + path.string() + ": " + e.what());
  }
}

ChecksumPolicy parse_policy(const std::string& s) {
  if (s == "ignore") return ChecksumPolicy::ignore;
  if (s == "warn") return ChecksumPolicy::warn;
  if (s == "strict") return ChecksumPolicy::strict;
  throw input_error("unknown checksum policy '" + s + "'");
}

NormalizedVolume load_any(const fs::path& path, const TagConfig& tags, const std::string& policy) {
  DecodeOptions options;
  options.policy = parse_policy(policy);
  options.on_warning = [](std::string_view w) { std::cerr << "warning: " << w << "\n"; };
  return normalize_volume(read_file(path), tags, options);
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct CommonOptions {
  std::string tags_path;
  std::string checksum = "ignore";

  TagConfig tags() const {
    return tags_path.empty() ? TagConfig{} : read_json_file(tags_path).get<TagConfig>();
  }
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--tags", o.tags_path, "JSON tag configuration for DICOM input");
  cmd->add_option("--checksum", o.checksum, "Checksum policy: ignore, warn or strict");
}

int cmd_decode(const std::string& in, const std::string& out, const CommonOptions& common) {
  const auto nv = load_any(in, common.tags(), common.checksum);
  write_file_atomic(out, nv.container);
  std::cout << nlohmann::json(nv.volume->meta()).dump(2) << "\n";
  return 0;
}

struct SliceArgs {
  double d = 0.0, phi = 0.0, theta = 90.0;
  std::size_t frame = 0;
  double cmpp = kDefaultCmPerPixel;
  bool flip_h = false, flip_v = false;
  double rot = 0.0;
  std::string out;
};

int cmd_slice(const std::string& in, const SliceArgs& a, const CommonOptions& common) {
  const auto nv = load_any(in, common.tags(), common.checksum);
  ViewRenderConfig cfg{a.cmpp, a.flip_h, a.flip_v, a.rot};
  const SliceImage s = render_slice(*nv.volume, {a.d, a.phi, a.theta}, a.frame, cfg);
  write_file_atomic(a.out, encode_png(s.image));
  std::cout << nlohmann::json{{"width", s.image.width}, {"height", s.image.height},
                              {"plane", plane_all_forms_json(s.plane)}}.dump(2)
            << "\n";
  return 0;
}

struct ExtractArgs {
  std::string scorer, landmarks, out, config;
  std::optional<unsigned> parallelism;
  std::optional<long> timeout_ms;
};

int cmd_extract(const std::string& in, const ExtractArgs& a, const CommonOptions& common) {
  ServiceConfig cfg = a.config.empty() ? ServiceConfig{} : load_service_config(a.config);
  if (!common.tags_path.empty()) cfg.tags = common.tags();
  if (!a.scorer.empty()) cfg.scorer = a.scorer;
  if (!a.landmarks.empty()) cfg.landmarks = a.landmarks;
  if (a.parallelism) cfg.extraction.parallelism = *a.parallelism;
  if (a.timeout_ms) cfg.adapter_timeout = std::chrono::milliseconds(*a.timeout_ms);

  const auto nv = load_any(in, cfg.tags, common.checksum);
  const std::string id = sha256_hex(nv.container);
  auto provider = make_landmark_provider(cfg.landmarks, cfg.adapter_timeout);
  auto scorer = make_view_scorer(cfg.scorer, cfg.adapter_timeout, cfg.scorer_batch_size);

  const fs::path out(a.out);
  fs::create_directories(out);
  try {
    const auto result = extract_standard_views(
        *nv.volume, *provider, *scorer, cfg.extraction,
        [](std::string_view stage, double f) {
          std::cerr << "[" << static_cast<int>(f * 100) << "%] " << stage << "\n";
        });
    const auto frames = write_study_videos(out, result, nv.volume->meta());
    const StudyManifest m = manifest_from_result(id, id, result, frames);
    write_manifest(out, m);
    nlohmann::json summary = nlohmann::json::object();
    for (const auto& [v, rec] : m.views) {
      summary[std::string(view_name(v))] = {{"plane", rec.plane}, {"score", rec.score}};
    }
    std::cout << summary.dump(2) << "\n";
  } catch (const ExtractionError& e) {
    StudyManifest m;
    m.study_id = m.volume_id = id;
    m.state = JobState::failed;
    m.stage = e.stage();
    m.error = nlohmann::json{{"message", e.what()}, {"stage", e.stage()}};
    m.ed_frame = e.partial().ed_frame;
    m.landmarks = e.partial().landmarks;
    for (const auto& [v, sel] : e.partial().views) {
      m.views[v] = ViewRecord{sel.plane, sel.score, sel.render_config, ViewStatus::automatic, {}, {}};
    }
    m.created_at = m.updated_at = utc_timestamp();
    write_manifest(out, m);
    throw;
  }
  return 0;
}

struct PhantomArgs {
  std::string spec, out, truth;
  std::optional<std::uint64_t> seed;
};

int cmd_phantom(const PhantomArgs& a) {
  PhantomSpec spec = PhantomSpec::defaults();
  if (!a.spec.empty()) {
    spec = read_json_file(a.spec).get<PhantomSpec>();
  } else if (a.seed) {
    spec = random_phantom_spec(*a.seed);
  }
  const Phantom p = generate_phantom(spec, std::max(1u, std::thread::hardware_concurrency()));
  write_file_atomic(a.out, encode_container(p.volume));
  if (!a.truth.empty()) write_text(a.truth, nlohmann::json(p.truth).dump(2) + "\n");
  std::cout << nlohmann::json(p.volume.meta()).dump(2) << "\n";
  return 0;
}

int cmd_bench(const std::string& in, std::size_t repeats, std::size_t pixels,
              const CommonOptions& common) {
  const auto nv = load_any(in, common.tags(), common.checksum);
  const VolumeSequence& volume = *nv.volume;
  const auto shell = boundary_shell(volume.meta());
  RenderOptions opts;
  opts.shell = shell;

  const PlaneAD plane = a4c_plane();
  const SliceExtent e = slice_extent(shell, plane_basis(plane_ad_to_pn(plane)));
  ViewRenderConfig cfg;
  cfg.cm_per_pix = std::max(e.s_max - e.s_min, e.t_max - e.t_min) / static_cast<double>(pixels);

  std::vector<double> ms;
  SliceImage s;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = Clock::now();
    s = render_slice(volume, plane, 0, cfg, opts);
    ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
  }
  const double med = median(ms);

  auto scorer = constant_scorer(0.5);
  auto provider = fixed_fraction_provider(0.2, 0.5, 0.8, 0.5);
  ExtractionConfig ex = ExtractionConfig::defaults();
  ex.render_videos = false;
  const auto t0 = Clock::now();
  const auto result = extract_standard_views(volume, *provider, *scorer, ex);
  const double extract_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  std::size_t candidates = 0;
  for (const auto& [v, st] : result.provenance.per_view) candidates += st.candidates;

  std::cout << nlohmann::json{{"slice_width", s.image.width},
                              {"slice_height", s.image.height},
                              {"slice_median_ms", med},
                              {"slices_per_second", 1000.0 / med},
                              {"extraction_ms", extract_ms},
                              {"extraction_candidates", candidates}}
                   .dump(2)
            << "\n";
  return 0;
}

Service* g_service = nullptr;

int cmd_serve(const std::string& config_path, const std::string& host, int port,
              const std::string& data_dir) {
  ServiceConfig cfg = config_path.empty() ? ServiceConfig{} : load_service_config(config_path);
  if (!data_dir.empty()) cfg.data_dir = data_dir;
  Service service(cfg, adapters_from_config(cfg));
  g_service = &service;
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_service) g_service->stop();
  });
  std::cerr << "listening on " << host << ":" << port << "\n";
  service.run(host, port);
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric echo slicing and standard-view extraction"};
  app.require_subcommand(1);

  CommonOptions common;
  std::string input, out;

  auto* decode = app.add_subcommand("decode", "DICOM or E3DC to normalized E3DC");
  decode->add_option("input", input, "Input file")->required();
  decode->add_option("--out", out, "Output .e3dc")->required();
  add_common(decode, common);

  SliceArgs slice_args;
  auto* slice = app.add_subcommand("slice", "Render one plane as PNG");
  slice->add_option("input", input, "Input volume")->required();
  slice->add_option("--d", slice_args.d, "Plane offset (cm)");
  slice->add_option("--phi", slice_args.phi, "Normal azimuth (degrees)");
  slice->add_option("--theta", slice_args.theta, "Normal elevation (degrees)");
  slice->add_option("--frame", slice_args.frame, "Frame index");
  slice->add_option("--cmpp", slice_args.cmpp, "Centimeters per pixel");
  slice->add_flag("--flip-h", slice_args.flip_h, "Mirror columns");
  slice->add_flag("--flip-v", slice_args.flip_v, "Mirror rows");
  slice->add_option("--rot", slice_args.rot, "Counter-clockwise rotation (degrees)");
  slice->add_option("--out", slice_args.out, "Output PNG")->required();
  add_common(slice, common);

  ExtractArgs ex_args;
  auto* extract = app.add_subcommand("extract", "Find the eight standard views");
  extract->add_option("input", input, "Input volume")->required();
  extract->add_option("--scorer", ex_args.scorer, "Scorer command, http:// URL or phantom:<truth.json>");
  extract->add_option("--landmarks", ex_args.landmarks,
                      "Landmark command, http:// URL or phantom:<truth.json>");
  extract->add_option("--out", ex_args.out, "Output study directory")->required();
  extract->add_option("--config", ex_args.config, "Service/extraction config JSON");
  extract->add_option("--parallelism", ex_args.parallelism, "Render threads");
  extract->add_option("--timeout-ms", ex_args.timeout_ms, "Adapter timeout");
  add_common(extract, common);

  PhantomArgs ph_args;
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic volume");
  phantom->add_option("--spec", ph_args.spec, "Phantom spec JSON (defaults when absent)");
  phantom->add_option("--seed", ph_args.seed, "Random spec seed when --spec is absent");
  phantom->add_option("--out", ph_args.out, "Output .e3dc")->required();
  phantom->add_option("--truth", ph_args.truth, "Ground-truth JSON output");

  std::size_t repeats = 20;
  std::size_t pixels = 512;
  auto* bench = app.add_subcommand("bench", "Render and extraction timings");
  bench->add_option("input", input, "Input volume")->required();
  bench->add_option("--repeats", repeats, "Slice renders to time")->check(CLI::PositiveNumber);
  bench->add_option("--pixels", pixels, "Slice edge length")->check(CLI::Range(2, 8192));
  add_common(bench, common);

  std::string config_path, host = "127.0.0.1", data_dir;
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  serve->add_option("--config", config_path, "Service config JSON");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");
  serve->add_option("--data-dir", data_dir, "Storage directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*decode) return cmd_decode(input, out, common);
    if (*slice) return cmd_slice(input, slice_args, common);
    if (*extract) return cmd_extract(input, ex_args, common);
    if (*phantom) return cmd_phantom(ph_args);
    if (*bench) return cmd_bench(input, repeats, pixels, common);
    if (*serve) return cmd_serve(config_path, host, port, data_dir);
  } catch (const Error& e) {
    std::cerr << "error";
    if (!e.stage().empty()) std::cerr << " [" << e.stage() << "]";
    std::cerr << ": " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 4;
}
