#include "echoslice/store.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>

#include <openssl/evp.h>

#include "echoslice/container.hpp"
#include "echoslice/error.hpp"
#include "echoslice/image_io.hpp"

namespace echoslice {
namespace {

constexpr std::size_t kVolumeCacheSize = 4;

const char* state_name(JobState s) {
  switch (s) {
    case JobState::complete: return "complete";
    case JobState::failed: return "failed";
    case JobState::running: break;
  }
  return "running";
}

JobState parse_state(const std::string& s) {
  if (s == "complete") return JobState::complete;
  if (s == "failed") return JobState::failed;
  if (s == "running") return JobState::running;
  throw input_error("unknown job state '" + s + "'");
}

ViewStatus parse_status(const std::string& s) {
  if (s == "auto") return ViewStatus::automatic;
  if (s == "accepted") return ViewStatus::accepted;
  if (s == "overridden") return ViewStatus::overridden;
  throw input_error("unknown view status '" + s + "'");
}

std::string frame_name(std::size_t t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04zu.png", t);
  return buf;
}

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::internal, "SHA-256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

NormalizedVolume normalize_volume(std::span<const std::uint8_t> bytes, const TagConfig& tags,
                                  const DecodeOptions& options) {
  NormalizedVolume out;
  if (has_container_magic(bytes)) {
    const Container c = read_container(bytes);
    auto volume = std::make_shared<VolumeSequence>(decode_volume(c.stream, c.meta, options));
    out.container = write_container(volume->meta(), c.stream);
    out.volume = std::move(volume);
    return out;
  }
  if (!looks_like_dicom(bytes)) throw input_error("input is neither E3DC nor DICOM");
  DicomPayload payload = parse_dicom_private_payload(bytes, tags);
  DecodeOptions opts = options;
  opts.payload_axis_order = tags.payload_axis_order;
  auto volume = std::make_shared<VolumeSequence>(decode_volume(payload.stream, payload.meta, opts));
  if (tags.payload_axis_order == std::array<int, 3>{0, 1, 2}) {
    out.container = write_container(payload.meta, payload.stream);
  } else {
    out.container = encode_container(*volume);
  }
  out.volume = std::move(volume);
  return out;
}

std::string_view status_name(ViewStatus s) {
  switch (s) {
    case ViewStatus::accepted: return "accepted";
    case ViewStatus::overridden: return "overridden";
    case ViewStatus::automatic: break;
  }
  return "auto";
}

void to_json(nlohmann::json& j, const StudyManifest& m) {
  nlohmann::json views = nlohmann::json::object();
  for (const auto& [v, r] : m.views) {
    nlohmann::json rec{{"plane", plane_all_forms_json(r.plane)},
                       {"score", r.score},
                       {"render_config", r.render_config},
                       {"status", status_name(r.status)},
                       {"frames", r.frames}};
    if (r.auto_plane) rec["auto_plane"] = *r.auto_plane;
    views[std::string(view_name(v))] = std::move(rec);
  }
  j = nlohmann::json{{"study_id", m.study_id},
                     {"volume_id", m.volume_id},
                     {"state", state_name(m.state)},
                     {"stage", m.stage},
                     {"progress", m.progress},
                     {"views", views},
                     {"provenance", m.provenance},
                     {"created_at", m.created_at},
                     {"updated_at", m.updated_at}};
  j["error"] = m.error ? *m.error : nlohmann::json(nullptr);
  j["ed_frame"] = m.ed_frame ? nlohmann::json(*m.ed_frame) : nlohmann::json(nullptr);
  j["landmarks"] = m.landmarks ? nlohmann::json(*m.landmarks) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, StudyManifest& m) {
  m = StudyManifest{};
  m.study_id = j.at("study_id").get<std::string>();
  m.volume_id = j.at("volume_id").get<std::string>();
  m.state = parse_state(j.at("state").get<std::string>());
  m.stage = j.value("stage", "");
  m.progress = j.value("progress", 0.0);
  if (j.contains("error") && !j["error"].is_null()) m.error = j["error"];
  if (j.contains("ed_frame") && !j["ed_frame"].is_null()) m.ed_frame = j["ed_frame"].get<std::size_t>();
  if (j.contains("landmarks") && !j["landmarks"].is_null()) {
    m.landmarks = j["landmarks"].get<LandmarkSet>();
  }
  for (const auto& [name, rec] : j.at("views").items()) {
    ViewRecord r;
    r.plane = rec.at("plane").at("ad").get<PlaneAD>();
    r.score = rec.at("score").get<double>();
    r.render_config = rec.at("render_config").get<ViewRenderConfig>();
    r.status = parse_status(rec.at("status").get<std::string>());
    r.frames = rec.at("frames").get<std::vector<std::string>>();
    if (rec.contains("auto_plane")) r.auto_plane = rec["auto_plane"].get<PlaneAD>();
    m.views[parse_view(name)] = std::move(r);
  }
  m.provenance = j.value("provenance", nlohmann::json::object());
  m.created_at = j.value("created_at", "");
  m.updated_at = j.value("updated_at", "");
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<std::string> write_view_video(const std::filesystem::path& study_dir, View view,
                                          const std::vector<Image8>& frames, const PlaneAD& plane,
                                          const ViewRenderConfig& config,
                                          std::optional<double> frame_interval_ms) {
  const std::string name(view_name(view));
  std::filesystem::remove_all(study_dir / name);
  std::filesystem::create_directories(study_dir / name);
  std::vector<std::string> out;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const std::string rel = name + "/" + frame_name(t);
    write_file_atomic(study_dir / rel, encode_png(frames[t]));
    out.push_back(rel);
  }
  nlohmann::json sidecar{{"view", name},
                         {"plane", plane_all_forms_json(plane)},
                         {"cm_per_pix", config.cm_per_pix},
                         {"flip_h", config.flip_h},
                         {"flip_v", config.flip_v},
                         {"rotation_deg", config.rotation_deg},
                         {"frames", out.size()}};
  sidecar["frame_interval_ms"] = frame_interval_ms ? nlohmann::json(*frame_interval_ms) : nlohmann::json(nullptr);
  const std::string text = sidecar.dump(2) + "\n";
  write_file_atomic(study_dir / name / "sidecar.json",
                    std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return out;
}

std::map<View, std::vector<std::string>> write_study_videos(const std::filesystem::path& study_dir,
                                                            const ExtractionResult& result,
                                                            const VolumeMeta& meta) {
  std::map<View, std::vector<std::string>> out;
  for (const auto& [v, frames] : result.videos) {
    const auto& sel = result.views.at(v);
    out[v] = write_view_video(study_dir, v, frames, sel.plane, sel.render_config,
                              meta.frame_interval_ms);
  }
  return out;
}

StudyManifest manifest_from_result(const std::string& study_id, const std::string& volume_id,
                                   const ExtractionResult& result,
                                   const std::map<View, std::vector<std::string>>& frames) {
  StudyManifest m;
  m.study_id = study_id;
  m.volume_id = volume_id;
  m.state = JobState::complete;
  m.stage = "done";
  m.progress = 1.0;
  m.ed_frame = result.ed_frame;
  m.landmarks = result.landmarks;
  for (const auto& [v, sel] : result.views) {
    ViewRecord r;
    r.plane = sel.plane;
    r.score = sel.score;
    r.render_config = sel.render_config;
    if (auto it = frames.find(v); it != frames.end()) r.frames = it->second;
    m.views[v] = std::move(r);
  }
  m.provenance = nlohmann::json(result).at("provenance");
  m.created_at = m.updated_at = utc_timestamp();
  return m;
}

void write_manifest(const std::filesystem::path& study_dir, const StudyManifest& manifest) {
  const std::string text = nlohmann::json(manifest).dump(2) + "\n";
  write_file_atomic(study_dir / "manifest.json",
                    std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

StudyManifest read_manifest(const std::filesystem::path& study_dir) {
  const auto bytes = read_file(study_dir / "manifest.json");
  return nlohmann::json::parse(bytes.begin(), bytes.end()).get<StudyManifest>();
}

bool valid_id(const std::string& id) {
  return !id.empty() && id.size() <= 128 &&
         std::all_of(id.begin(), id.end(), [](char c) {
           return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
         });
}

Store::Store(std::filesystem::path data_dir) : data_dir_(std::move(data_dir)) {
  std::filesystem::create_directories(data_dir_ / "volumes");
  std::filesystem::create_directories(data_dir_ / "studies");
}

std::filesystem::path Store::volume_path(const std::string& id) const {
  if (!valid_id(id)) throw input_error("malformed volume id");
  return data_dir_ / "volumes" / (id + ".e3dc");
}

std::string Store::put_volume(std::span<const std::uint8_t> bytes, const TagConfig& tags) {
  NormalizedVolume nv = normalize_volume(bytes, tags);
  const std::string id = sha256_hex(nv.container);
  const auto path = volume_path(id);
  if (!std::filesystem::exists(path)) write_file_atomic(path, nv.container);
  remember(id, nv.volume);
  return id;
}

bool Store::has_volume(const std::string& id) const {
  return valid_id(id) && std::filesystem::exists(volume_path(id));
}

std::shared_ptr<const VolumeSequence> Store::load_volume(const std::string& id) {
  if (!valid_id(id)) return nullptr;
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(id); it != cache_.end()) return it->second;
  }
  const auto path = volume_path(id);
  if (!std::filesystem::exists(path)) return nullptr;
  return remember(id, std::make_shared<const VolumeSequence>(decode_container(read_file(path))));
}

std::shared_ptr<const VolumeSequence> Store::remember(
    const std::string& id, std::shared_ptr<const VolumeSequence> volume) {
  std::lock_guard lock(mutex_);
  if (auto it = cache_.find(id); it != cache_.end()) return it->second;
  cache_[id] = volume;
  cache_order_.push_back(id);
  if (cache_order_.size() > kVolumeCacheSize) {
    cache_.erase(cache_order_.front());
    cache_order_.erase(cache_order_.begin());
  }
  return volume;
}

std::filesystem::path Store::study_dir(const std::string& id) const {
  if (!valid_id(id)) throw input_error("malformed study id");
  return data_dir_ / "studies" / id;
}

bool Store::has_study(const std::string& id) const {
  return valid_id(id) && std::filesystem::exists(study_dir(id) / "manifest.json");
}

std::optional<StudyManifest> Store::load_study(const std::string& id) const {
  if (!has_study(id)) return std::nullopt;
  return read_manifest(study_dir(id));
}

void Store::save_study(const StudyManifest& manifest) const {
  write_manifest(study_dir(manifest.study_id), manifest);
}

}  // namespace echoslice
