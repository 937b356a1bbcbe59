#include <atomic>
#include <chrono>
#include <condition_variable>
#include <mutex>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "echoslice/container.hpp"
#include "echoslice/dicom.hpp"
#include "echoslice/codec.hpp"
#include "echoslice/image_io.hpp"
#include "echoslice/phantom.hpp"
#include "echoslice/service.hpp"
#include "support.hpp"

namespace echoslice {
namespace {

using nlohmann::json;
using testing::TempDir;

const Phantom& phantom() {
  static const Phantom p = [] {
    PhantomSpec s = PhantomSpec::defaults();
    s.meta.dims = {40, 40, 40, 2};
    s.meta.frame_interval_ms = 50.0;
    return generate_phantom(s);
  }();
  return p;
}

ExtractionConfig fast_extraction() {
  ExtractionConfig cfg = ExtractionConfig::defaults();
  cfg.landmark_render.cm_per_pix = 0.1;
  for (View v : extraction_order()) cfg.render[v].cm_per_pix = 0.2;
  cfg.steps = {0.25, 2.0};
  return cfg;
}

std::string body_of(const std::vector<std::uint8_t>& bytes) { return {bytes.begin(), bytes.end()}; }

// Blocks every score() call until released, so a job stays running.
class GateScorer final : public ViewScorer {
 public:
  struct Gate {
    std::mutex m;
    std::condition_variable cv;
    bool open = false;
  };
  explicit GateScorer(std::shared_ptr<Gate> g) : gate_(std::move(g)) {}
  std::vector<double> score(std::span<const SliceImage* const> images, View) override {
    std::unique_lock lock(gate_->m);
    gate_->cv.wait(lock, [&] { return gate_->open; });
    return std::vector<double>(images.size(), 0.5);
  }

 private:
  std::shared_ptr<Gate> gate_;
};

class HttpTest : public ::testing::Test {
 protected:
  void start(Adapters adapters, std::string landmarks = {}, std::string scorer = {}) {
    ServiceConfig cfg;
    cfg.data_dir = dir_.path() / "data";
    cfg.extraction = fast_extraction();
    cfg.landmarks = std::move(landmarks);
    cfg.scorer = std::move(scorer);
    if (!adapters.landmarks) adapters = adapters_from_config(cfg);
    service_ = std::make_unique<Service>(cfg, std::move(adapters));
    port_ = service_->start("127.0.0.1", 0);
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(120, 0);
  }

  void start_phantom() {
    const std::string truth = (dir_.path() / "truth.json").string();
    testing::write_text(truth, json(phantom().truth).dump());
    start({}, "phantom:" + truth, "phantom:" + truth);
  }

  std::string upload(const std::vector<std::uint8_t>& bytes) {
    auto r = client_->Post("/volumes", body_of(bytes), "application/octet-stream");
    EXPECT_TRUE(r);
    EXPECT_EQ(r->status, 201) << r->body;
    return json::parse(r->body).at("id").get<std::string>();
  }

  void TearDown() override {
    client_.reset();
    if (service_) service_->stop();
  }

  TempDir dir_;
  std::unique_ptr<Service> service_;
  std::unique_ptr<httplib::Client> client_;
  int port_ = 0;
};

TEST_F(HttpTest, UploadAndMeta) {
  start_phantom();
  const auto container = encode_container(phantom().volume);
  const std::string id = upload(container);
  EXPECT_EQ(id, sha256_hex(container));
  auto r = client_->Get("/volumes/" + id + "/meta");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(json::parse(r->body).get<VolumeMeta>(), phantom().volume.meta());

  // DICOM upload of the same volume is deduplicated.
  const auto dicom = write_dicom_fixture(phantom().volume.meta(), encode_volume(phantom().volume), TagConfig{});
  EXPECT_EQ(upload(dicom), id);

  auto bad = client_->Post("/volumes", "garbage", "application/octet-stream");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 422);
  EXPECT_EQ(json::parse(bad->body).at("kind"), "input");
}

TEST_F(HttpTest, SliceMatchesLibraryRender) {
  start_phantom();
  const std::string id = upload(encode_container(phantom().volume));
  auto r = client_->Get("/volumes/" + id + "/slice?d=0.5&phi=3&theta=80&frame=1&cmpp=0.2&flip_h=1&rot=90");
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200) << r->body;
  EXPECT_EQ(r->get_header_value("Content-Type"), "image/png");
  const ViewRenderConfig cfg{0.2, true, false, 90.0};
  const auto expected = encode_png(render_slice(phantom().volume, {0.5, 3, 80}, 1, cfg).image);
  EXPECT_EQ(r->body, body_of(expected));
}

TEST_F(HttpTest, StatusCodes) {
  start_phantom();
  const std::string id = upload(encode_container(phantom().volume));
  const std::string missing(64, '0');
  auto status = [&](const std::string& path) {
    auto r = client_->Get(path);
    return r ? r->status : -1;
  };
  EXPECT_EQ(status("/volumes/" + missing + "/meta"), 404);
  EXPECT_EQ(status("/volumes/NOT-HEX/meta"), 404);
  EXPECT_EQ(status("/studies/" + id), 404);
  EXPECT_EQ(status("/volumes/" + id + "/slice?phi=0&theta=90"), 422);
  EXPECT_EQ(status("/volumes/" + id + "/slice?d=x&phi=0&theta=90"), 422);
  EXPECT_EQ(status("/volumes/" + id + "/slice?d=0&phi=0&theta=90&frame=9"), 422);
  EXPECT_EQ(status("/volumes/" + id + "/slice?d=40&phi=0&theta=0"), 422);
  EXPECT_EQ(status("/volumes/" + id + "/slice?d=0&phi=0&theta=90&cmpp=0"), 422);
  EXPECT_EQ(status("/volumes/" + id + "/slice?d=0&phi=0&theta=90&flip_h=maybe"), 422);
}

TEST_F(HttpTest, MissingAdaptersAre502) {
  start({});
  const std::string id = upload(encode_container(phantom().volume));
  auto lm = client_->Get("/volumes/" + id + "/landmarks");
  ASSERT_TRUE(lm);
  EXPECT_EQ(lm->status, 502);
  auto r = client_->Post("/volumes/" + id + "/extract?wait=1", "", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 502);
  const json body = json::parse(r->body);
  EXPECT_EQ(body.at("kind"), "adapter");
  auto study = client_->Get("/studies/" + id);
  ASSERT_TRUE(study);
  EXPECT_EQ(json::parse(study->body).at("state"), "failed");
}

TEST_F(HttpTest, BrokenScorerFailsAtItsStage) {
  const std::string truth = (dir_.path() / "truth.json").string();
  testing::write_text(truth, json(phantom().truth).dump());
  start({}, "phantom:" + truth, "cat >/dev/null; printf 'not json'");
  const std::string id = upload(encode_container(phantom().volume));
  auto r = client_->Post("/volumes/" + id + "/extract?wait=1", "", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 502);
  const json body = json::parse(r->body);
  EXPECT_EQ(body.at("stage"), "search:A4C");
  EXPECT_NE(body.at("error").get<std::string>().find("scorer unavailable (malformed JSON)"),
            std::string::npos);
  EXPECT_FALSE(body.at("manifest").at("landmarks").is_null());
}

TEST_F(HttpTest, LandmarksEndpoint) {
  start_phantom();
  const std::string id = upload(encode_container(phantom().volume));
  auto r = client_->Get("/volumes/" + id + "/landmarks");
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200) << r->body;
  const json j = json::parse(r->body);
  EXPECT_EQ(j.at("ed_frame"), 0);
  EXPECT_NEAR(j.at("landmarks").at("l_lv").get<double>(), 8.0, 0.2);
  EXPECT_TRUE(j.at("planes").at("sax").contains("pn"));
}

void expect_near_truth(const json& views, const PhantomTruth& truth, const StepConfig& steps) {
  for (View v : extraction_order()) {
    const PlaneAD got = views.at(std::string(view_name(v))).at("plane").at("ad").get<PlaneAD>();
    const PlaneAD want = truth.views.at(v);
    EXPECT_LE(std::abs(got.d - want.d), steps.d_cm + 1e-9) << view_name(v);
    EXPECT_LE(std::abs(got.phi_n - want.phi_n), steps.angle_deg + 1e-9) << view_name(v);
    EXPECT_LE(std::abs(got.theta_n - want.theta_n), steps.angle_deg + 1e-9) << view_name(v);
  }
}

TEST_F(HttpTest, ExtractAcceptOverride) {
  start_phantom();
  const std::string id = upload(encode_container(phantom().volume));
  auto r = client_->Post("/volumes/" + id + "/extract?wait=1", "", "application/json");
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200) << r->body;
  const json m = json::parse(r->body);
  EXPECT_EQ(m.at("state"), "complete");
  expect_near_truth(m.at("views"), phantom().truth, fast_extraction().steps);

  auto frame = client_->Get("/studies/" + id + "/views/A2C/frames/1");
  ASSERT_TRUE(frame);
  ASSERT_EQ(frame->status, 200);
  const PlaneAD a2c = m.at("views").at("A2C").at("plane").at("ad").get<PlaneAD>();
  const auto cfg = m.at("views").at("A2C").at("render_config").get<ViewRenderConfig>();
  EXPECT_EQ(frame->body, body_of(encode_png(render_slice(phantom().volume, a2c, 1, cfg).image)));
  EXPECT_EQ(client_->Get("/studies/" + id + "/views/A2C/frames/2")->status, 404);
  EXPECT_EQ(client_->Get("/studies/" + id + "/views/A6C/frames/0")->status, 404);

  auto post = [&](const std::string& view, const json& body) {
    auto res = client_->Post("/studies/" + id + "/views/" + view, body.dump(), "application/json");
    return std::make_pair(res->status, res->body);
  };
  EXPECT_EQ(post("A4C", {{"accept", true}}).first, 200);
  EXPECT_EQ(post("A4C", {{"accept", true}}).first, 409);
  EXPECT_EQ(post("A2C", json::object()).first, 422);
  EXPECT_EQ(post("A2C", {{"override", {{"d", 0}, {"phi", 0}}}}).first, 422);
  EXPECT_EQ(post("A2C", {{"override", {{"d", 40}, {"phi", 0}, {"theta", 0}}}}).first, 422);

  const PlaneAD manual{0.2, 4, 70};
  const auto [status, text] = post("A2C", {{"override", {{"d", manual.d}, {"phi", manual.phi_n}, {"theta", manual.theta_n}}}});
  ASSERT_EQ(status, 200) << text;

  // The decisions survive a service restart.
  client_.reset();
  service_->stop();
  service_.reset();
  start_phantom();
  const json after = json::parse(client_->Get("/studies/" + id)->body);
  EXPECT_EQ(after.at("views").at("A4C").at("status"), "accepted");
  EXPECT_EQ(after.at("views").at("A2C").at("status"), "overridden");
  EXPECT_EQ(after.at("views").at("A2C").at("plane").at("ad").get<PlaneAD>(), manual);
  EXPECT_EQ(after.at("views").at("A2C").at("auto_plane").get<PlaneAD>(), a2c);
  auto f0 = client_->Get("/studies/" + id + "/views/A2C/frames/0");
  EXPECT_EQ(f0->body, body_of(encode_png(render_slice(phantom().volume, manual, 0, cfg).image)));
}

TEST_F(HttpTest, BackgroundJobConflicts) {
  auto gate = std::make_shared<GateScorer::Gate>();
  const std::string truth = (dir_.path() / "truth.json").string();
  testing::write_text(truth, json(phantom().truth).dump());
  Adapters adapters;
  adapters.landmarks = [truth] { return make_landmark_provider("phantom:" + truth, std::chrono::seconds(5)); };
  adapters.scorer = [gate] { return std::make_unique<GateScorer>(gate); };
  start(std::move(adapters));
  const std::string id = upload(encode_container(phantom().volume));

  auto r = client_->Post("/volumes/" + id + "/extract", "", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 202);
  EXPECT_EQ(client_->Post("/volumes/" + id + "/extract", "", "application/json")->status, 409);

  // Wait until the job has published its running manifest.
  json m;
  for (int n = 0; n < 200; ++n) {
    auto s = client_->Get("/studies/" + id);
    if (s && s->status == 200) {
      m = json::parse(s->body);
      if (m.at("stage") == "search:A4C") break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  EXPECT_EQ(m.at("state"), "running");
  EXPECT_EQ(client_->Post("/studies/" + id + "/views/A4C", R"({"accept":true})", "application/json")->status, 409);

  {
    std::lock_guard lock(gate->m);
    gate->open = true;
  }
  gate->cv.notify_all();
  for (int n = 0; n < 3000; ++n) {
    m = json::parse(client_->Get("/studies/" + id)->body);
    if (m.at("state") != "running") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  EXPECT_EQ(m.at("state"), "complete");
  EXPECT_EQ(m.at("progress"), 1.0);
}

}  // namespace
}  // namespace echoslice
