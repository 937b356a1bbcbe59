#pragma once

// Filesystem persistence: content-addressed volumes and study manifests.
//
//   <data_dir>/volumes/<sha256>.e3dc
//   <data_dir>/studies/<id>/manifest.json
//   <data_dir>/studies/<id>/<VIEW>/frame_0000.png ...

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "echoslice/codec.hpp"
#include "echoslice/dicom.hpp"
#include "echoslice/search.hpp"
#include "echoslice/volume.hpp"

namespace echoslice {

std::string sha256_hex(std::span<const std::uint8_t> bytes);

/// A DICOM or E3DC upload decoded and re-expressed as a canonical E3DC container.
struct NormalizedVolume {
  std::vector<std::uint8_t> container;
  std::shared_ptr<const VolumeSequence> volume;
};

NormalizedVolume normalize_volume(std::span<const std::uint8_t> bytes, const TagConfig& tags,
                                  const DecodeOptions& options = {});

enum class ViewStatus { automatic, accepted, overridden };
std::string_view status_name(ViewStatus s);

struct ViewRecord {
  PlaneAD plane;
  double score = 0.0;
  ViewRenderConfig render_config;
  ViewStatus status = ViewStatus::automatic;
  std::vector<std::string> frames;  ///< relative to the study directory
  std::optional<PlaneAD> auto_plane;  ///< the search result, kept after an override
};

enum class JobState { running, complete, failed };

struct StudyManifest {
  std::string study_id;
  std::string volume_id;
  JobState state = JobState::running;
  std::string stage;
  double progress = 0.0;
  std::optional<nlohmann::json> error;  ///< {message, kind, stage}
  std::optional<std::size_t> ed_frame;
  std::optional<LandmarkSet> landmarks;
  std::map<View, ViewRecord> views;
  nlohmann::json provenance = nlohmann::json::object();
  std::string created_at;
  std::string updated_at;
};

void to_json(nlohmann::json& j, const StudyManifest& m);
void from_json(const nlohmann::json& j, StudyManifest& m);

std::string utc_timestamp();

/// Writes one view's frames as <VIEW>/frame_NNNN.png plus <VIEW>/sidecar.json
/// {plane (all forms), cm_per_pix, flip_h, flip_v, rotation_deg, frame_interval_ms},
/// replacing previous output. Returns the frame paths relative to `study_dir`.
std::vector<std::string> write_view_video(const std::filesystem::path& study_dir, View view,
                                          const std::vector<Image8>& frames, const PlaneAD& plane,
                                          const ViewRenderConfig& config,
                                          std::optional<double> frame_interval_ms);
/// write_view_video for every rendered view of an extraction.
std::map<View, std::vector<std::string>> write_study_videos(const std::filesystem::path& study_dir,
                                                            const ExtractionResult& result,
                                                            const VolumeMeta& meta);

/// Completed manifest for an extraction; frames are filled from `frames`.
StudyManifest manifest_from_result(const std::string& study_id, const std::string& volume_id,
                                   const ExtractionResult& result,
                                   const std::map<View, std::vector<std::string>>& frames);

/// Atomic manifest.json write.
void write_manifest(const std::filesystem::path& study_dir, const StudyManifest& manifest);
StudyManifest read_manifest(const std::filesystem::path& study_dir);

class Store {
 public:
  explicit Store(std::filesystem::path data_dir);

  const std::filesystem::path& data_dir() const noexcept { return data_dir_; }

  /// Normalizes and stores an upload; returns the content hash of the container.
  std::string put_volume(std::span<const std::uint8_t> bytes, const TagConfig& tags);
  bool has_volume(const std::string& id) const;
  /// Throws input_error for malformed ids; returns null when absent.
  std::shared_ptr<const VolumeSequence> load_volume(const std::string& id);
  std::filesystem::path volume_path(const std::string& id) const;

  std::filesystem::path study_dir(const std::string& id) const;
  bool has_study(const std::string& id) const;
  std::optional<StudyManifest> load_study(const std::string& id) const;
  void save_study(const StudyManifest& manifest) const;

 private:
  std::shared_ptr<const VolumeSequence> remember(const std::string& id,
                                                 std::shared_ptr<const VolumeSequence> volume);

  std::filesystem::path data_dir_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const VolumeSequence>> cache_;
  std::vector<std::string> cache_order_;
};

/// Ids are lowercase hex; anything else could escape the data directory.
bool valid_id(const std::string& id);

}  // namespace echoslice
