#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "sdd/service.hpp"
#include "support/fixtures.hpp"

using namespace sdd;

namespace {

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() / ("sdd_service_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir_);
    // 3 columns; one dominant pattern so the first rule is predictable.
    std::ofstream out(dir_ / "shop.csv");
    out << "Store,Product,Region,Sales\n";
    std::mt19937_64 rng(5);
    for (int i = 0; i < 400; ++i) {
      if (i < 120) {
        out << "Walmart,cookies,CA," << (i % 7) << "\n";
      } else {
        out << (rng() % 2 ? "Target" : "Costco") << "," << (rng() % 3 ? "bikes" : "comforters") << ","
            << (rng() % 2 ? "WA" : "MA") << "," << (i % 5) << "\n";
      }
    }
    out.close();
    ServiceConfig c;
    c.port = 0;
    c.dataset_dir = dir_.string();
    c.memory = 1000;
    c.min_ss = 500;
    service_ = std::make_unique<Service>(c);
    port_ = service_->bind();
    thread_ = std::thread([this] { service_->listen(); });
    service_->server().wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }

  void TearDown() override {
    service_->stop();
    thread_.join();
    std::filesystem::remove_all(dir_);
  }

  std::pair<int, Json> call(const std::string& method, const std::string& path, const Json& body = nullptr) {
    httplib::Result r;
    const std::string text = body.is_null() ? std::string() : body.dump();
    if (method == "GET") r = client_->Get(path);
    else if (method == "POST") r = client_->Post(path, text, "application/json");
    else if (method == "PUT") r = client_->Put(path, text, "application/json");
    else if (method == "DELETE") r = client_->Delete(path);
    if (!r) return {0, nullptr};
    Json j = r->body.empty() ? Json(nullptr) : Json::parse(r->body);
    return {r->status, j};
  }

  std::string new_session(const Json& config = Json::object()) {
    auto [st, ds] = call("POST", "/datasets", {{"path", "shop.csv"}, {"measures", {"Sales"}}, {"id", "shop"}});
    EXPECT_TRUE(st == 201 || st == 400);
    auto [status, body] = call("POST", "/sessions", {{"dataset_id", "shop"}, {"config", config}});
    EXPECT_EQ(status, 201) << body.dump();
    return body["session_id"].get<std::string>();
  }

  std::filesystem::path dir_;
  std::unique_ptr<Service> service_;
  int port_ = 0;
  std::thread thread_;
  std::unique_ptr<httplib::Client> client_;
};

Json base_config() { return {{"k", 3}, {"m_w", 3}, {"auto_prefetch", false}}; }

}  // namespace

TEST_F(ServiceTest, Health) {
  auto [status, body] = call("GET", "/health");
  EXPECT_EQ(status, 200);
  EXPECT_EQ(body, (Json{{"status", "ok"}}));
}

TEST_F(ServiceTest, RegistersAndListsDatasets) {
  auto [status, body] = call("POST", "/datasets", {{"path", "shop.csv"}, {"measures", {"Sales"}}});
  ASSERT_EQ(status, 201) << body.dump();
  EXPECT_EQ(body["rows"], 400);
  EXPECT_EQ(body["columns"].size(), 3u);
  EXPECT_EQ(body["columns"][0]["name"], "Store");
  EXPECT_EQ(body["measures"], (Json{"Sales"}));
  auto [s2, list] = call("GET", "/datasets");
  EXPECT_EQ(s2, 200);
  ASSERT_EQ(list.size(), 1u);
  EXPECT_EQ(list[0]["id"], body["id"]);
}

TEST_F(ServiceTest, MissingDatasetFileIsAnError) {
  auto [status, body] = call("POST", "/datasets", {{"path", "nope.csv"}});
  EXPECT_EQ(status, 400);
  EXPECT_EQ(body["code"], "io_error");
  EXPECT_TRUE(body.contains("message"));
}

TEST_F(ServiceTest, UnknownIdsAre404) {
  auto [s1, b1] = call("POST", "/sessions", {{"dataset_id", "missing"}});
  EXPECT_EQ(s1, 404);
  EXPECT_EQ(b1["code"], "not_found");
  auto [s2, b2] = call("GET", "/sessions/nope/tree");
  EXPECT_EQ(s2, 404);
  EXPECT_EQ(b2["code"], "not_found");
  auto [s3, b3] = call("POST", "/sessions/nope/expand", {{"path", Json::array()}});
  EXPECT_EQ(s3, 404);
  auto [s4, b4] = call("GET", "/no/such/route");
  EXPECT_EQ(s4, 404);
  EXPECT_EQ(b4["code"], "not_found");
}

TEST_F(ServiceTest, NewSessionShowsRoot) {
  auto [st, ds] = call("POST", "/datasets", {{"path", "shop.csv"}, {"measures", {"Sales"}}});
  auto [status, body] = call("POST", "/sessions", {{"dataset_id", ds["id"]}, {"config", base_config()}});
  ASSERT_EQ(status, 201) << body.dump();
  const auto& root = body["tree"]["root"];
  EXPECT_EQ(root["rule"], "*,*,*");
  EXPECT_EQ(root["count"], 400);
  EXPECT_EQ(root["count_is_exact"], true);
  EXPECT_EQ(root["weight"], 0);
  EXPECT_EQ(root["children"], Json::array());
  EXPECT_EQ(body["tree"]["columns"], (Json{"Store", "Product", "Region"}));
  EXPECT_EQ(body["config"]["k"], 3);
}

TEST_F(ServiceTest, ExpandReturnsFullTreeAndRules) {
  auto sid = new_session(base_config());
  auto [status, body] = call("POST", "/sessions/" + sid + "/expand", {{"path", Json::array()}});
  ASSERT_EQ(status, 200) << body.dump();
  const auto& children = body["tree"]["root"]["children"];
  ASSERT_FALSE(children.empty());
  EXPECT_EQ(body["rules"]["rules"].size(), children.size());
  EXPECT_EQ(children[0]["rule"], "Walmart,cookies,CA");
  EXPECT_EQ(children[0]["count"], 120);
  EXPECT_EQ(children[0]["path"], (Json{0}));
  EXPECT_EQ(body["tree"]["root"]["expanded"], true);
  // Weights non-increasing.
  for (std::size_t i = 1; i < children.size(); ++i) EXPECT_GE(children[i - 1]["weight"], children[i]["weight"]);
  // GET /tree returns the same tree.
  auto [s2, tree] = call("GET", "/sessions/" + sid + "/tree");
  EXPECT_EQ(tree["tree"], body["tree"]);
}

TEST_F(ServiceTest, ExpandByRuleText) {
  auto sid = new_session(base_config());
  call("POST", "/sessions/" + sid + "/expand", {{"path", "root"}});
  auto [status, body] = call("POST", "/sessions/" + sid + "/expand", {{"path", "Walmart,cookies,CA"}});
  ASSERT_EQ(status, 200) << body.dump();
  EXPECT_EQ(body["tree"]["root"]["children"][0]["expanded"], true);
}

TEST_F(ServiceTest, InvalidPathsAndColumnsAre400) {
  auto sid = new_session(base_config());
  auto [s1, b1] = call("POST", "/sessions/" + sid + "/expand", {{"path", {5}}});
  EXPECT_EQ(s1, 400);
  EXPECT_EQ(b1["code"], "unknown_node");
  auto [s2, b2] = call("POST", "/sessions/" + sid + "/expand", {{"path", "Nowhere"}});
  EXPECT_EQ(s2, 400);
  EXPECT_EQ(b2["code"], "unknown_node");
  auto [s3, b3] = call("POST", "/sessions/" + sid + "/star", {{"path", Json::array()}, {"column", "Color"}});
  EXPECT_EQ(s3, 400);
  EXPECT_EQ(b3["code"], "unknown_column");
  auto [s4, b4] = call("POST", "/sessions/" + sid + "/collapse", {{"path", Json::array()}});
  EXPECT_EQ(s4, 400);
  EXPECT_EQ(b4["code"], "node_not_expanded");
  auto [s5, b5] = call("POST", "/sessions/" + sid + "/expand", {{"path", {-1}}});
  EXPECT_EQ(s5, 400);
  EXPECT_EQ(b5["code"], "unknown_node");
}

TEST_F(ServiceTest, MalformedJsonIs400) {
  auto sid = new_session(base_config());
  auto r = client_->Post("/sessions/" + sid + "/expand", "{not json", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 400);
  EXPECT_EQ(Json::parse(r->body)["code"], "bad_request");
}

TEST_F(ServiceTest, StarAndCollapse) {
  auto sid = new_session(base_config());
  auto [s0, initial] = call("GET", "/sessions/" + sid + "/tree");
  auto [s1, b1] = call("POST", "/sessions/" + sid + "/star", {{"path", Json::array()}, {"column", "Region"}});
  ASSERT_EQ(s1, 200) << b1.dump();
  EXPECT_EQ(b1["tree"]["root"]["star_column"], "Region");
  for (const auto& c : b1["tree"]["root"]["children"]) EXPECT_NE(c["cells"][2], "*");
  auto [s2, b2] = call("POST", "/sessions/" + sid + "/star", {{"path", {0}}, {"column", "Region"}});
  EXPECT_EQ(s2, 400);
  EXPECT_EQ(b2["code"], "column_instantiated");
  auto [s3, b3] = call("POST", "/sessions/" + sid + "/collapse", {{"path", Json::array()}});
  ASSERT_EQ(s3, 200);
  EXPECT_EQ(b3["tree"].dump(), initial["tree"].dump());
}

TEST_F(ServiceTest, RegularDrillDown) {
  auto sid = new_session(base_config());
  auto [status, body] = call("POST", "/sessions/" + sid + "/regular", {{"path", Json::array()}, {"column", "Store"}});
  ASSERT_EQ(status, 200) << body.dump();
  EXPECT_EQ(body["tree"]["root"]["children"].size(), 3u);
  double total = 0;
  for (const auto& c : body["tree"]["root"]["children"]) total += c["count"].get<double>();
  EXPECT_EQ(total, 400);
}

TEST_F(ServiceTest, ConcurrentMutationIs409) {
  auto sid = new_session(base_config());
  {
    auto held = service_->hold(sid);
    auto [status, body] = call("POST", "/sessions/" + sid + "/expand", {{"path", Json::array()}});
    EXPECT_EQ(status, 409);
    EXPECT_EQ(body["code"], "busy");
    auto [s2, b2] = call("PUT", "/sessions/" + sid + "/config", {{"k", 2}});
    EXPECT_EQ(s2, 409);
    // Reads still work.
    auto [s3, b3] = call("GET", "/sessions/" + sid + "/tree");
    EXPECT_EQ(s3, 200);
  }
  auto [status, body] = call("POST", "/sessions/" + sid + "/expand", {{"path", Json::array()}});
  EXPECT_EQ(status, 200);
}

TEST_F(ServiceTest, GetEndpointsDoNotMutate) {
  auto sid = new_session(base_config());
  call("POST", "/sessions/" + sid + "/expand", {{"path", Json::array()}});
  auto hash = [&] { return std::hash<std::string>{}(call("GET", "/sessions/" + sid + "/tree").second.dump()); };
  auto before = hash();
  for (const char* p : {"/tree", "/stats", "/config"}) call("GET", "/sessions/" + sid + p);
  call("GET", "/datasets");
  call("GET", "/health");
  EXPECT_EQ(hash(), before);
}

TEST_F(ServiceTest, ConfigUpdate) {
  auto sid = new_session(base_config());
  call("POST", "/sessions/" + sid + "/expand", {{"path", Json::array()}});
  Json cfg{{"k", 2}, {"weight", {{"kind", "bits"}, {"ignored", {"Region"}}}}};
  auto [status, body] = call("PUT", "/sessions/" + sid + "/config", cfg);
  ASSERT_EQ(status, 200) << body.dump();
  EXPECT_EQ(body["config"]["k"], 2);
  EXPECT_EQ(body["config"]["weight"]["kind"], "bits");
  EXPECT_EQ(body["config"]["weight"]["ignored"], (Json{"Region"}));
  EXPECT_EQ(body["tree"]["root"]["children"], Json::array());
  auto [s2, b2] = call("POST", "/sessions/" + sid + "/expand", {{"path", Json::array()}});
  ASSERT_EQ(s2, 200);
  EXPECT_LE(b2["tree"]["root"]["children"].size(), 2u);
  for (const auto& c : b2["tree"]["root"]["children"]) EXPECT_EQ(c["cells"][2], "*");
  auto [s3, b3] = call("PUT", "/sessions/" + sid + "/config", {{"weight", {{"kind", "fancy"}}}});
  EXPECT_EQ(s3, 400);
  auto [s4, b4] = call("PUT", "/sessions/" + sid + "/config", {{"weight", {{"favored", {"Nope"}}}}});
  EXPECT_EQ(s4, 400);
  EXPECT_EQ(b4["code"], "unknown_column");
}

TEST_F(ServiceTest, SumAggregate) {
  auto cfg = base_config();
  cfg["aggregate"] = {{"sum", "Sales"}};
  auto sid = new_session(cfg);
  auto [status, body] = call("POST", "/sessions/" + sid + "/expand", {{"path", Json::array()}});
  ASSERT_EQ(status, 200);
  EXPECT_EQ(body["tree"]["aggregate"], (Json{{"kind", "sum"}, {"measure", "Sales"}}));
  const auto& root = body["tree"]["root"];
  EXPECT_EQ(root["value"], root["sum"]);
}

TEST_F(ServiceTest, Stats) {
  auto sid = new_session(base_config());
  call("POST", "/sessions/" + sid + "/expand", {{"path", Json::array()}});
  auto [status, body] = call("GET", "/sessions/" + sid + "/stats");
  ASSERT_EQ(status, 200);
  EXPECT_EQ(body["expansions"], 1);
  EXPECT_EQ(body["finds"].get<int>() + body["combines"].get<int>() + body["creates"].get<int>(), 1);
  EXPECT_TRUE(body["pool"].contains("rows"));
  EXPECT_EQ(body["pool"]["capacity"], 1000);
  EXPECT_TRUE(body.contains("last_expand_ms"));
}

TEST_F(ServiceTest, StreamingExpandSendsRulesThenTree) {
  auto sid = new_session(base_config());
  auto r = client_->Post("/sessions/" + sid + "/expand?stream=1", Json{{"path", Json::array()}}.dump(),
                         "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  std::istringstream lines(r->body);
  std::string line;
  std::vector<Json> msgs;
  while (std::getline(lines, line)) {
    if (!line.empty()) msgs.push_back(Json::parse(line));
  }
  ASSERT_GE(msgs.size(), 2u);
  EXPECT_EQ(msgs.back()["type"], "tree");
  const auto& children = msgs.back()["tree"]["root"]["children"];
  ASSERT_EQ(children.size() + 1, msgs.size());
  for (std::size_t i = 0; i + 1 < msgs.size(); ++i) EXPECT_EQ(msgs[i]["type"], "rule");
  // Rules arrive in discovery order; the tree shows them weight-sorted.
  std::multiset<std::string> streamed, shown;
  for (std::size_t i = 0; i + 1 < msgs.size(); ++i) streamed.insert(msgs[i]["rule"].get<std::string>());
  for (const auto& c : children) shown.insert(c["rule"].get<std::string>());
  EXPECT_EQ(streamed, shown);
  for (std::size_t i = 0; i + 1 < msgs.size(); ++i) {
    for (const auto& c : children) {
      if (c["rule"] == msgs[i]["rule"]) EXPECT_EQ(msgs[i]["value"], c["value"]);
    }
  }
  // The lock was released.
  auto [s2, b2] = call("POST", "/sessions/" + sid + "/collapse", {{"path", Json::array()}});
  EXPECT_EQ(s2, 200);
}

TEST_F(ServiceTest, StreamingUnderSumReportsSums) {
  auto cfg = base_config();
  cfg["aggregate"] = {{"sum", "Sales"}};
  auto sid = new_session(cfg);
  auto r = client_->Post("/sessions/" + sid + "/expand?stream=1", Json{{"path", Json::array()}}.dump(),
                         "application/json");
  ASSERT_TRUE(r);
  std::istringstream lines(r->body);
  std::vector<Json> msgs;
  for (std::string line; std::getline(lines, line);) {
    if (!line.empty()) msgs.push_back(Json::parse(line));
  }
  ASSERT_GE(msgs.size(), 2u);
  const auto& children = msgs.back()["tree"]["root"]["children"];
  std::size_t matched = 0;
  for (std::size_t i = 0; i + 1 < msgs.size(); ++i) {
    for (const auto& c : children) {
      if (c["rule"] != msgs[i]["rule"]) continue;
      EXPECT_EQ(msgs[i]["value"], c["sum"]);
      ++matched;
    }
  }
  EXPECT_EQ(matched, children.size());
}

TEST_F(ServiceTest, StreamingErrorsBeforeStartKeepStatus) {
  auto sid = new_session(base_config());
  auto r = client_->Post("/sessions/" + sid + "/expand?stream=1", Json{{"path", {9}}}.dump(), "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 400);
  EXPECT_EQ(Json::parse(r->body)["code"], "unknown_node");
}

TEST_F(ServiceTest, SessionsExpireAfterTtl) {
  auto sid = new_session(base_config());
  EXPECT_EQ(service_->session_count(), 1u);
  service_->expire_sessions(std::chrono::steady_clock::now() + std::chrono::minutes(29));
  EXPECT_EQ(service_->session_count(), 1u);
  service_->expire_sessions(std::chrono::steady_clock::now() + std::chrono::minutes(31));
  EXPECT_EQ(service_->session_count(), 0u);
  auto [status, body] = call("GET", "/sessions/" + sid + "/tree");
  EXPECT_EQ(status, 404);
}

TEST_F(ServiceTest, DeleteSession) {
  auto sid = new_session(base_config());
  auto [status, body] = call("DELETE", "/sessions/" + sid);
  EXPECT_EQ(status, 204);
  auto [s2, b2] = call("DELETE", "/sessions/" + sid);
  EXPECT_EQ(s2, 404);
}

TEST(ServiceConfigTest, FileAndEnvironment) {
  auto path = std::filesystem::temp_directory_path() / "sdd_service_config.json";
  {
    std::ofstream out(path);
    out << R"({"listen": "0.0.0.0:9001", "dataset_dir": "/data", "memory": 20000, "min_ss": 2000,
               "session_ttl_minutes": 5})";
  }
  ::unsetenv("SDD_LISTEN");
  ::unsetenv("SDD_DATASET_DIR");
  auto c = load_service_config(path.string());
  EXPECT_EQ(c.host, "0.0.0.0");
  EXPECT_EQ(c.port, 9001);
  EXPECT_EQ(c.dataset_dir, "/data");
  EXPECT_EQ(c.memory, 20000u);
  EXPECT_EQ(c.min_ss, 2000u);
  EXPECT_EQ(c.session_ttl, std::chrono::minutes(5));
  ::setenv("SDD_LISTEN", "127.0.0.1:7000", 1);
  ::setenv("SDD_DATASET_DIR", "/elsewhere", 1);
  c = load_service_config(path.string());
  EXPECT_EQ(c.host, "127.0.0.1");
  EXPECT_EQ(c.port, 7000);
  EXPECT_EQ(c.dataset_dir, "/elsewhere");
  ::unsetenv("SDD_LISTEN");
  ::unsetenv("SDD_DATASET_DIR");
  auto defaults = load_service_config(std::nullopt);
  EXPECT_EQ(defaults.port, 8080);
  EXPECT_EQ(defaults.session_ttl, std::chrono::minutes(30));
  EXPECT_THROW(load_service_config(std::string("/no/such/file.json")), Error);
  ServiceConfig bad;
  EXPECT_THROW(apply_listen(bad, "host:notaport"), Error);
  std::filesystem::remove(path);
}
