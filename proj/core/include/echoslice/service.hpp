#pragma once

// HTTP API over the store:
//   POST /volumes                          upload DICOM or E3DC, returns {id, meta}
//   GET  /volumes/{id}/meta
//   GET  /volumes/{id}/slice?d&phi&theta&frame&cmpp&flip_h&flip_v&rot   image/png
//   GET  /volumes/{id}/landmarks
//   POST /volumes/{id}/extract[?wait=1]    background job; study id = volume id
//   GET  /studies/{id}
//   GET  /studies/{id}/views/{view}/frames/{n}                           image/png
//   POST /studies/{id}/views/{view}        {"accept": true} | {"override": {d, phi, theta}}

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "echoslice/dicom.hpp"
#include "echoslice/landmarks.hpp"
#include "echoslice/search.hpp"
#include "echoslice/store.hpp"

namespace echoslice {

struct ServiceConfig {
  std::filesystem::path data_dir = "echoslice-data";
  TagConfig tags;
  ExtractionConfig extraction = ExtractionConfig::defaults();
  /// Shell command, http:// URL, or "phantom:<truth.json>".
  std::string landmarks;
  std::string scorer;
  std::chrono::milliseconds adapter_timeout{30000};
  std::size_t scorer_batch_size = 32;
};

void to_json(nlohmann::json& j, const ServiceConfig& c);
/// Missing keys keep the defaults.
void from_json(const nlohmann::json& j, ServiceConfig& c);
ServiceConfig load_service_config(const std::filesystem::path& path);

std::unique_ptr<LandmarkProvider> make_landmark_provider(const std::string& endpoint,
                                                         std::chrono::milliseconds timeout);
std::unique_ptr<ViewScorer> make_view_scorer(const std::string& endpoint,
                                             std::chrono::milliseconds timeout,
                                             std::size_t batch_size = 32);

/// Fresh adapter instances per request or job.
struct Adapters {
  std::function<std::unique_ptr<LandmarkProvider>()> landmarks;
  std::function<std::unique_ptr<ViewScorer>()> scorer;
};

Adapters adapters_from_config(const ServiceConfig& config);

class Service {
 public:
  Service(ServiceConfig config, Adapters adapters);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves on a background thread; port 0 picks a free port.
  /// Returns the bound port.
  int start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  /// Stops the listener and waits for running extraction jobs.
  void stop();

  Store& store();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// HTTP status for a library error.
int http_status(const Error& e);

}  // namespace echoslice
