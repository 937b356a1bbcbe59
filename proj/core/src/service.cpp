#include "echoslice/service.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "echoslice/container.hpp"
#include "echoslice/error.hpp"
#include "echoslice/image_io.hpp"
#include "echoslice/phantom.hpp"
#include "echoslice/resampler.hpp"

namespace echoslice {
namespace {

constexpr std::string_view kPhantomPrefix = "phantom:";
constexpr std::size_t kMaxUploadBytes = std::size_t{2} << 30;

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::input: return "input";
    case ErrorKind::adapter: return "adapter";
    case ErrorKind::internal: break;
  }
  return "internal";
}

PhantomTruth load_truth(const std::string& path) {
  const auto bytes = read_file(path);
  return nlohmann::json::parse(bytes.begin(), bytes.end()).get<PhantomTruth>();
}

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message,
                const std::string& kind, const std::string& stage = {}) {
  nlohmann::json body{{"error", message}, {"kind", kind}};
  if (!stage.empty()) body["stage"] = stage;
  send_json(res, status, body);
}

void send_error(httplib::Response& res, const Error& e) {
  send_error(res, http_status(e), e.what(), kind_name(e.kind()), e.stage());
}

void send_not_found(httplib::Response& res, const std::string& what) {
  send_error(res, 404, what + " not found", "not_found");
}

double query_double(const httplib::Request& req, const char* name, std::optional<double> fallback) {
  if (!req.has_param(name)) {
    if (fallback) return *fallback;
    throw input_error(std::string("missing parameter '") + name + "'");
  }
  const std::string text = req.get_param_value(name);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw input_error(std::string("invalid parameter '") + name + "'");
  }
  return v;
}

std::size_t query_index(const httplib::Request& req, const char* name, std::size_t fallback) {
  if (!req.has_param(name)) return fallback;
  const std::string text = req.get_param_value(name);
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw input_error(std::string("invalid parameter '") + name + "'");
  }
  return v;
}

bool query_flag(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return false;
  const std::string v = req.get_param_value(name);
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false" || v.empty()) return false;
  throw input_error(std::string("invalid parameter '") + name + "'");
}

PlaneAD plane_from_body(const nlohmann::json& j) {
  PlaneAD p;
  const char* keys[] = {"d", "phi", "theta"};
  double* slots[] = {&p.d, &p.phi_n, &p.theta_n};
  for (int n = 0; n < 3; ++n) {
    if (!j.contains(keys[n]) || !j[keys[n]].is_number()) {
      throw input_error(std::string("override needs numeric '") + keys[n] + "'");
    }
    *slots[n] = j[keys[n]].get<double>();
    if (!std::isfinite(*slots[n])) throw input_error("override plane must be finite");
  }
  return p;
}

}  // namespace

int http_status(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::input: return 422;
    case ErrorKind::adapter: return 502;
    case ErrorKind::internal: break;
  }
  return 500;
}

void to_json(nlohmann::json& j, const ServiceConfig& c) {
  j = nlohmann::json{{"data_dir", c.data_dir.string()},
                     {"tag_config", c.tags},
                     {"extraction", c.extraction},
                     {"landmarks", c.landmarks},
                     {"scorer", c.scorer},
                     {"adapter_timeout_ms", c.adapter_timeout.count()},
                     {"scorer_batch_size", c.scorer_batch_size}};
}

void from_json(const nlohmann::json& j, ServiceConfig& c) {
  c = ServiceConfig{};
  if (j.contains("data_dir")) c.data_dir = j.at("data_dir").get<std::string>();
  if (j.contains("tag_config")) c.tags = j.at("tag_config").get<TagConfig>();
  if (j.contains("extraction")) c.extraction = j.at("extraction").get<ExtractionConfig>();
  c.landmarks = j.value("landmarks", c.landmarks);
  c.scorer = j.value("scorer", c.scorer);
  c.adapter_timeout = std::chrono::milliseconds(
      j.value("adapter_timeout_ms", static_cast<std::int64_t>(c.adapter_timeout.count())));
  c.scorer_batch_size = j.value("scorer_batch_size", c.scorer_batch_size);
}

ServiceConfig load_service_config(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end()).get<ServiceConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw input_error("invalid config " + path.string() + ": " + e.what());
  }
}

std::unique_ptr<LandmarkProvider> make_landmark_provider(const std::string& endpoint,
                                                         std::chrono::milliseconds timeout) {
  if (endpoint.empty()) throw adapter_error("landmarks unavailable (no provider configured)");
  if (endpoint.starts_with(kPhantomPrefix)) {
    return phantom_landmark_provider(load_truth(endpoint.substr(kPhantomPrefix.size())));
  }
  return external_provider(endpoint, timeout);
}

std::unique_ptr<ViewScorer> make_view_scorer(const std::string& endpoint,
                                             std::chrono::milliseconds timeout,
                                             std::size_t batch_size) {
  if (endpoint.empty()) throw adapter_error("scorer unavailable (no scorer configured)");
  if (endpoint.starts_with(kPhantomPrefix)) {
    return phantom_scorer(load_truth(endpoint.substr(kPhantomPrefix.size())));
  }
  return external_scorer(endpoint, timeout, batch_size);
}

Adapters adapters_from_config(const ServiceConfig& config) {
  Adapters a;
  a.landmarks = [endpoint = config.landmarks, timeout = config.adapter_timeout] {
    return make_landmark_provider(endpoint, timeout);
  };
  a.scorer = [endpoint = config.scorer, timeout = config.adapter_timeout,
              batch = config.scorer_batch_size] { return make_view_scorer(endpoint, timeout, batch); };
  return a;
}

struct Service::Impl {
  ServiceConfig config;
  Adapters adapters;
  Store store;
  httplib::Server server;
  std::thread listener;

  std::mutex jobs_mutex;
  std::set<std::string> running;
  std::map<std::string, std::jthread> jobs;
  std::map<std::string, std::shared_ptr<std::mutex>> study_locks;

  Impl(ServiceConfig c, Adapters a)
      : config(std::move(c)), adapters(std::move(a)), store(config.data_dir) {
    routes();
  }

  std::shared_ptr<std::mutex> study_lock(const std::string& id) {
    std::lock_guard lock(jobs_mutex);
    auto& m = study_locks[id];
    if (!m) m = std::make_shared<std::mutex>();
    return m;
  }

  std::shared_ptr<const VolumeSequence> volume_or_404(const std::string& id,
                                                      httplib::Response& res) {
    auto v = store.load_volume(id);
    if (!v) send_not_found(res, "volume");
    return v;
  }

  // Runs one extraction to completion and persists the outcome. Never throws.
  StudyManifest run_extraction(const std::string& id, std::shared_ptr<const VolumeSequence> volume) {
    const auto lock = study_lock(id);
    const auto dir = store.study_dir(id);
    StudyManifest m;
    m.study_id = id;
    m.volume_id = id;
    m.state = JobState::running;
    m.stage = "queued";
    m.created_at = m.updated_at = utc_timestamp();
    {
      std::lock_guard guard(*lock);
      store.save_study(m);
    }
    auto progress = [&](std::string_view stage, double fraction) {
      std::lock_guard guard(*lock);
      m.stage = std::string(stage);
      m.progress = fraction;
      m.updated_at = utc_timestamp();
      store.save_study(m);
    };
    try {
      auto provider = adapters.landmarks();
      auto scorer = adapters.scorer();
      const ExtractionResult result =
          extract_standard_views(*volume, *provider, *scorer, config.extraction, progress);
      const auto frames = write_study_videos(dir, result, volume->meta());
      StudyManifest done = manifest_from_result(id, id, result, frames);
      done.created_at = m.created_at;
      std::lock_guard guard(*lock);
      store.save_study(done);
      return done;
    } catch (const ExtractionError& e) {
      m.error = nlohmann::json{{"message", e.what()}, {"kind", kind_name(e.kind())}, {"stage", e.stage()}};
      m.ed_frame = e.partial().ed_frame;
      m.landmarks = e.partial().landmarks;
      for (const auto& [v, sel] : e.partial().views) {
        m.views[v] = ViewRecord{sel.plane, sel.score, sel.render_config, ViewStatus::automatic, {}, {}};
      }
      m.stage = e.stage();
    } catch (const Error& e) {
      m.error = nlohmann::json{{"message", e.what()}, {"kind", kind_name(e.kind())}, {"stage", "setup"}};
      m.stage = "setup";
    } catch (const std::exception& e) {
      m.error = nlohmann::json{{"message", e.what()}, {"kind", "internal"}, {"stage", "setup"}};
      m.stage = "setup";
    }
    m.state = JobState::failed;
    m.updated_at = utc_timestamp();
    std::lock_guard guard(*lock);
    store.save_study(m);
    return m;
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server.set_payload_max_length(kMaxUploadBytes);
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res,
                                    std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const Error& e) {
        send_error(res, e);
      } catch (const nlohmann::json::exception& e) {
        send_error(res, 422, std::string("invalid JSON: ") + e.what(), "input");
      } catch (const std::exception& e) {
        send_error(res, 500, e.what(), "internal");
      }
    });

    server.Post("/volumes", [this](const httplib::Request& req, httplib::Response& res) {
      const std::span bytes(reinterpret_cast<const std::uint8_t*>(req.body.data()), req.body.size());
      const std::string id = store.put_volume(bytes, config.tags);
      send_json(res, 201, {{"id", id}, {"meta", store.load_volume(id)->meta()}});
    });

    server.Get(R"(/volumes/([^/]+)/meta)", [this](const httplib::Request& req, httplib::Response& res) {
      auto v = volume_or_404(req.matches[1], res);
      if (v) send_json(res, 200, v->meta());
    });

    server.Get(R"(/volumes/([^/]+)/slice)", [this](const httplib::Request& req, httplib::Response& res) {
      auto v = volume_or_404(req.matches[1], res);
      if (!v) return;
      const PlaneAD plane{query_double(req, "d", std::nullopt), query_double(req, "phi", std::nullopt),
                          query_double(req, "theta", std::nullopt)};
      ViewRenderConfig cfg;
      cfg.cm_per_pix = query_double(req, "cmpp", kDefaultCmPerPixel);
      cfg.flip_h = query_flag(req, "flip_h");
      cfg.flip_v = query_flag(req, "flip_v");
      cfg.rotation_deg = query_double(req, "rot", 0.0);
      const SliceImage slice = render_slice(*v, plane, query_index(req, "frame", 0), cfg);
      const auto png = encode_png(slice.image);
      res.set_header("Cache-Control", "public, max-age=31536000, immutable");
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    });

    server.Get(R"(/volumes/([^/]+)/landmarks)", [this](const httplib::Request& req, httplib::Response& res) {
      auto v = volume_or_404(req.matches[1], res);
      if (!v) return;
      auto provider = adapters.landmarks();
      const auto& ex = config.extraction;
      const std::size_t ed = end_diastole_frame(*v, ex.ed, provider.get(), ex.landmark_render);
      const LandmarkSet lm = locate_landmarks(*v, *provider, ed, ex.landmark_render);
      send_json(res, 200,
                {{"ed_frame", ed},
                 {"landmarks", lm},
                 {"planes",
                  {{"a4c", plane_all_forms_json(lm.plane_a4c)},
                   {"sax", plane_all_forms_json(lm.plane_sax)},
                   {"la", plane_all_forms_json(lm.plane_la)}}}});
    });

    server.Post(R"(/volumes/([^/]+)/extract)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      auto v = volume_or_404(id, res);
      if (!v) return;
      const bool wait = query_flag(req, "wait");
      {
        std::lock_guard lock(jobs_mutex);
        if (running.contains(id)) {
          send_error(res, 409, "extraction already running", "conflict");
          return;
        }
        running.insert(id);
        if (auto it = jobs.find(id); it != jobs.end() && it->second.joinable()) it->second.join();
        jobs.erase(id);
      }
      if (wait) {
        const StudyManifest m = run_extraction(id, v);
        {
          std::lock_guard lock(jobs_mutex);
          running.erase(id);
        }
        if (m.state == JobState::failed) {
          const auto& err = *m.error;
          const std::string kind = err.at("kind").get<std::string>();
          const int status = kind == "adapter" ? 502 : kind == "input" ? 422 : 500;
          send_json(res, status,
                    {{"error", err.at("message")}, {"kind", kind}, {"stage", err.at("stage")},
                     {"manifest", m}});
        } else {
          send_json(res, 200, m);
        }
        return;
      }
      std::lock_guard lock(jobs_mutex);
      jobs[id] = std::jthread([this, id, v] {
        run_extraction(id, v);
        std::lock_guard inner(jobs_mutex);
        running.erase(id);
      });
      send_json(res, 202, {{"study_id", id}, {"state", "running"}});
    });

    server.Get(R"(/studies/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      if (!valid_id(id)) return send_not_found(res, "study");
      const auto lock = study_lock(id);
      std::lock_guard guard(*lock);
      auto m = store.load_study(id);
      if (!m) return send_not_found(res, "study");
      send_json(res, 200, *m);
    });

    server.Get(R"(/studies/([^/]+)/views/([^/]+)/frames/(\d+))",
               [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      if (!valid_id(id)) return send_not_found(res, "study");
      auto m = store.load_study(id);
      if (!m) return send_not_found(res, "study");
      View view;
      try {
        view = parse_view(std::string(req.matches[2]));
      } catch (const Error&) {
        return send_not_found(res, "view");
      }
      auto it = m->views.find(view);
      const std::size_t n = std::stoul(req.matches[3]);
      if (it == m->views.end() || n >= it->second.frames.size()) return send_not_found(res, "frame");
      const auto bytes = read_file(store.study_dir(id) / it->second.frames[n]);
      res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
    });

    server.Post(R"(/studies/([^/]+)/views/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      if (!valid_id(id) || !store.has_study(id)) return send_not_found(res, "study");
      View view;
      try {
        view = parse_view(std::string(req.matches[2]));
      } catch (const Error&) {
        return send_not_found(res, "view");
      }
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::parse_error&) {
        return send_error(res, 422, "request body is not valid JSON", "input");
      }
      const bool accept = body.is_object() && body.value("accept", false);
      const bool override_plane = body.is_object() && body.contains("override");
      if (accept == override_plane) {
        return send_error(res, 422, "body must hold exactly one of 'accept' or 'override'", "input");
      }

      const auto lock = study_lock(id);
      std::lock_guard guard(*lock);
      auto m = store.load_study(id);
      if (!m) return send_not_found(res, "study");
      if (m->state != JobState::complete) {
        return send_error(res, 409, "study is not complete", "conflict");
      }
      auto it = m->views.find(view);
      if (it == m->views.end()) return send_not_found(res, "view");
      ViewRecord& rec = it->second;
      if (rec.status != ViewStatus::automatic) {
        return send_error(res, 409,
                          std::string("view already ") + std::string(status_name(rec.status)),
                          "conflict");
      }
      if (accept) {
        rec.status = ViewStatus::accepted;
      } else {
        const PlaneAD plane = plane_from_body(body.at("override"));
        auto v = store.load_volume(m->volume_id);
        if (!v) return send_not_found(res, "volume");
        const auto shell = boundary_shell(v->meta());
        if (!plane_hits_volume(shell, plane)) throw input_error("plane outside volume");
        RenderOptions opts;
        opts.shell = shell;
        std::vector<Image8> frames;
        for (std::size_t t = 0; t < v->dims().t; ++t) {
          frames.push_back(render_slice(*v, plane, t, rec.render_config, opts).image);
        }
        rec.frames = write_view_video(store.study_dir(id), view, frames, plane, rec.render_config,
                                      v->meta().frame_interval_ms);
        rec.auto_plane = rec.plane;
        rec.plane = plane;
        rec.status = ViewStatus::overridden;
      }
      m->updated_at = utc_timestamp();
      store.save_study(*m);
      send_json(res, 200, *m);
    });
  }

  void join_jobs() {
    std::map<std::string, std::jthread> pending;
    {
      std::lock_guard lock(jobs_mutex);
      pending.swap(jobs);
    }
    pending.clear();
  }
};

Service::Service(ServiceConfig config, Adapters adapters)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(adapters))) {}

Service::~Service() { stop(); }

int Service::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error(ErrorKind::internal, "cannot bind " + host + ":" + std::to_string(port));
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void Service::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) {
    throw Error(ErrorKind::internal, "cannot listen on " + host + ":" + std::to_string(port));
  }
}

void Service::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->listener.joinable()) impl_->listener.join();
  impl_->join_jobs();
}

Store& Service::store() { return impl_->store; }

}  // namespace echoslice
