#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include "prescribe/http_api.h"
#include "prescribe/policy.h"
#include "prescribe/rng.h"
#include "service_fixture.h"
// After Eigen: the resolver header defines a `_res` macro.
#include "httplib.h"
#include "json.hpp"

namespace prescribe::http {
namespace {

using nlohmann::json;
using testing::trained_fixture;

// Curves over a synthetic effect ranking; independent of the served model.
std::filesystem::path write_curves() {
  const auto dir = std::filesystem::temp_directory_path() / "prescribe_http_curves";
  std::filesystem::remove_all(dir);
  Rng rng(5);
  policy::QiniInput in;
  for (int i = 0; i < 200; ++i) {
    const double theta = -8 + 10 * rng.uniform();
    const int t = rng.bernoulli(0.5);
    in.case_ids.push_back("c" + std::to_string(i));
    in.theta.push_back(theta);
    in.t.push_back(t);
    in.y.push_back(20 + t * theta + rng.normal());
  }
  const auto rep = policy::evaluate(in, {1.0});
  std::vector<double> lo(in.size(), -1), hi(in.size(), 1);
  policy::write_report(rep, in, lo, hi, dir);
  return dir / "curves.json";
}

class Api : public ::testing::Test {
 protected:
  void SetUp() override {
    engine = std::make_unique<service::Engine>(trained_fixture().model);
    ApiOptions opt;
    opt.curves = write_curves();
    opt.stream_heartbeat = std::chrono::milliseconds(50);
    server = std::make_unique<ApiServer>(*engine, opt);
    port = server->bind("127.0.0.1", 0);
    thread = std::thread([this] { server->run(); });
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    client->set_read_timeout(10, 0);
    for (int i = 0; i < 100 && !client->Get("/health"); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  void TearDown() override {
    server->stop();
    thread.join();
  }

  json get(const std::string& path, int want = 200) {
    auto res = client->Get(path);
    EXPECT_TRUE(res) << path;
    if (!res) return json();
    EXPECT_EQ(res->status, want) << path << " " << res->body;
    return json::parse(res->body);
  }
  json post(const std::string& path, const std::string& body, int want = 200) {
    auto res = client->Post(path, body, "application/json");
    EXPECT_TRUE(res) << path;
    if (!res) return json();
    EXPECT_EQ(res->status, want) << path << " " << res->body;
    return json::parse(res->body);
  }

  // Posts the first `n` events of a fixture trace.
  json send_events(const eventlog::Trace& t, std::size_t n) {
    json evs = json::array();
    for (std::size_t i = 0; i < n; ++i) evs.push_back(service::event_to_json(t.events[i]));
    const json body = {{"events", evs}, {"case_attributes", service::attributes_to_json(t.case_attributes)}};
    return post("/cases/" + t.case_id + "/events", body.dump());
  }

  std::unique_ptr<service::Engine> engine;
  std::unique_ptr<ApiServer> server;
  std::unique_ptr<httplib::Client> client;
  std::thread thread;
  int port = 0;
};

const eventlog::Trace& untreated_trace(std::size_t skip = 0) {
  const auto& f = trained_fixture();
  for (const auto& t : f.data.log.traces)
    if (features::first_occurrence(t, f.spec.treatment_activity) < 0 && t.events.size() >= 3 && skip-- == 0) return t;
  throw std::runtime_error("fixture has no untreated trace");
}

TEST_F(Api, Health) {
  const auto h = get("/health");
  EXPECT_EQ(h.at("status"), "ok");
  EXPECT_TRUE(h.at("model_loaded").get<bool>());
  EXPECT_TRUE(h.at("curves_loaded").get<bool>());
  EXPECT_TRUE(h.at("policy_version").is_null());
  EXPECT_EQ(h.at("cases"), 0);
  EXPECT_EQ(h.at("dictionary_hash").get<std::string>().size(), 16u);
}

TEST_F(Api, EventsThenRecommendation) {
  post("/policy", policy::to_json(testing::open_policy()).dump(), 201);
  const auto& t = untreated_trace();
  const auto state = send_events(t, 2);
  EXPECT_EQ(state.at("case_id"), t.case_id);
  EXPECT_EQ(state.at("k"), 2);
  ASSERT_FALSE(state.at("recommendation").is_null());
  const auto rec = get("/cases/" + t.case_id + "/recommendation");
  EXPECT_EQ(rec.at("case_id"), t.case_id);
  EXPECT_EQ(rec, state.at("recommendation"));
  EXPECT_EQ(rec.at("policy_version"), 1);
  const std::string decision = rec.at("decision");
  // A treat recommendation ends scoring, so it may come from the first prefix.
  EXPECT_EQ(rec.at("k"), decision == "treat" ? rec.at("k").get<int>() : 2);
  EXPECT_EQ(state.at("status"), decision == "treat" ? "recommended-treat" : "recommended-skip");

  const auto full = get("/cases/" + t.case_id);
  ASSERT_EQ(full.at("events").size(), 2u);
  EXPECT_EQ(full.at("events")[0].at("activity"), t.events[0].activity);

  const auto closed = post("/cases/" + t.case_id + "/close", "{}");
  EXPECT_EQ(closed.at("status"), "closed");
  EXPECT_EQ(get("/cases?status=closed").size(), 1u);
  EXPECT_EQ(get("/cases?status=awaiting-applicability").size(), 0u);
  EXPECT_GE(get("/audit").size(), 1u);
  EXPECT_EQ(get("/audit?after=" + std::to_string(rec.at("sequence").get<int>())).size(), 0u);
}

TEST_F(Api, PolicyRoundTripKeepsProvenance) {
  EXPECT_EQ(get("/policy", 409).at("error"), "PolicyMissing");
  auto p = testing::open_policy(2, 3);
  p.theta_threshold = -1.5;
  p.selected_by = "user";
  const auto committed = post("/policy", policy::to_json(p).dump(), 201);
  EXPECT_EQ(committed.at("version"), 1);
  EXPECT_EQ(committed.at("theta_threshold"), -1.5);
  EXPECT_EQ(committed.at("provenance").at("selected_by"), "user");
  const auto curves = get("/curves");
  EXPECT_EQ(committed.at("provenance").at("curve_hash"), curves.at("curve_hash"));

  const auto current = get("/policy");
  EXPECT_EQ(current, committed);

  const auto auto_sel = post("/policy", R"({"select": "auto", "cost": {"v": 1, "c": 1}})", 201);
  EXPECT_EQ(auto_sel.at("version"), 2);
  EXPECT_EQ(auto_sel.at("cost").at("c"), 1.0);
  EXPECT_EQ(auto_sel.at("provenance").at("curve_hash"), curves.at("curve_hash"));

  const auto history = get("/policy/history");
  ASSERT_EQ(history.size(), 2u);
  EXPECT_EQ(history[0].at("version"), 1);
  EXPECT_EQ(history[1].at("version"), 2);

  auto stale = p;
  stale.curve_hash = "0000000000000000";
  EXPECT_EQ(post("/policy", policy::to_json(stale).dump(), 400).at("error"), "ConfigError");
  EXPECT_EQ(post("/policy", R"({"select": "target", "cost": {"v": 1, "c": 1}, "target_gain": 1e9})", 422)
                .at("error"),
            "TargetUnreachable");
}

TEST_F(Api, ErrorsAreJson) {
  const auto unknown = get("/cases/nobody/recommendation", 404);
  EXPECT_EQ(unknown.at("error"), "UnknownCase");
  EXPECT_FALSE(unknown.at("message").get<std::string>().empty());
  EXPECT_EQ(post("/cases/x/events", "{not json", 400).at("error"), "ConfigError");
  EXPECT_EQ(post("/cases/x/events", R"({"activity": "A"})", 400).at("error"), "ConfigError");
  EXPECT_EQ(get("/audit?after=-3", 400).at("error"), "ConfigError");
  EXPECT_EQ(get("/cases?status=pending", 400).at("error"), "ConfigError");

  const auto& t = untreated_trace();
  send_events(t, 2);
  // Scoring without a committed policy.
  EXPECT_EQ(get("/cases/" + t.case_id + "/recommendation", 409).at("error"), "PolicyMissing");
  const json early = {{"activity", t.events[0].activity}, {"timestamp", "2000-01-01T00:00:00Z"}};
  EXPECT_EQ(post("/cases/" + t.case_id + "/events", early.dump(), 409).at("error"), "OutOfOrderEvent");
}

TEST(ApiStatus, KindsMapToCodes) {
  EXPECT_EQ(status_for("UnknownCase"), 404);
  EXPECT_EQ(status_for("PolicyMissing"), 409);
  EXPECT_EQ(status_for("UnknownModel"), 503);
  EXPECT_EQ(status_for("GainMismatch"), 422);
  EXPECT_EQ(status_for("ConfigError"), 400);
}

// Reads SSE frames until `want` ids arrive; returns them in order.
std::vector<std::uint64_t> stream_ids(int port, const httplib::Headers& headers, std::size_t want) {
  httplib::Client c("127.0.0.1", port);
  c.set_read_timeout(10, 0);
  std::vector<std::uint64_t> ids;
  std::string buffer;
  c.Get("/stream", headers, [&](const char* data, std::size_t len) {
    buffer.append(data, len);
    std::size_t pos;
    while ((pos = buffer.find("\n\n")) != std::string::npos) {
      const auto frame = buffer.substr(0, pos);
      buffer.erase(0, pos + 2);
      if (frame.rfind("id: ", 0) == 0) {
        ids.push_back(std::stoull(frame.substr(4, frame.find('\n') - 4)));
        EXPECT_NE(frame.find("event: recommendation\ndata: {"), std::string::npos);
      }
    }
    return ids.size() < want;
  });
  return ids;
}

TEST_F(Api, StreamResumesFromLastEventId) {
  post("/policy", policy::to_json(testing::open_policy()).dump(), 201);
  for (std::size_t i = 0; i < 3; ++i) send_events(untreated_trace(i), 1);
  const auto seq = engine->last_sequence();
  ASSERT_GE(seq, 3u);

  const auto all = stream_ids(port, {}, seq);
  ASSERT_EQ(all.size(), seq);
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i + 1);

  const auto resumed = stream_ids(port, {{"Last-Event-ID", std::to_string(seq - 1)}}, 1);
  ASSERT_EQ(resumed.size(), 1u);
  EXPECT_EQ(resumed[0], seq);

  // A live recommendation reaches a waiting subscriber.
  std::vector<std::uint64_t> live;
  std::thread reader([&] { live = stream_ids(port, {{"Last-Event-ID", std::to_string(seq)}}, 1); });
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  send_events(untreated_trace(3), 1);
  reader.join();
  ASSERT_EQ(live.size(), 1u);
  EXPECT_EQ(live[0], seq + 1);
}

TEST_F(Api, StreamSendsKeepAlive) {
  httplib::Client c("127.0.0.1", port);
  c.set_read_timeout(10, 0);
  std::string seen;
  c.Get("/stream", [&](const char* data, std::size_t len) {
    seen.append(data, len);
    return seen.find(": keep-alive\n\n") == std::string::npos;
  });
  EXPECT_NE(seen.find(": keep-alive"), std::string::npos);
}

}  // namespace
}  // namespace prescribe::http
