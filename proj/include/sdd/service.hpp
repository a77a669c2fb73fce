#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "sdd/dataset.hpp"
#include "sdd/error.hpp"
#include "sdd/session.hpp"
#include "sdd/tree_json.hpp"

namespace sdd {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0: any free port
  std::string dataset_dir = ".";
  std::size_t memory = 50000;
  std::size_t min_ss = 5000;
  std::chrono::seconds session_ttl = std::chrono::minutes(30);
};

/// Parses `host:port` or a bare port.
inline void apply_listen(ServiceConfig& c, const std::string& listen) {
  auto colon = listen.rfind(':');
  std::string port = colon == std::string::npos ? listen : listen.substr(colon + 1);
  if (colon != std::string::npos && colon > 0) c.host = listen.substr(0, colon);
  try {
    std::size_t used = 0;
    int p = std::stoi(port, &used);
    if (used != port.size() || p < 0 || p > 65535) throw std::invalid_argument("port");
    c.port = p;
  } catch (const std::exception&) {
    throw Error(ErrorCode::invalid_argument, "bad listen address '" + listen + "'");
  }
}

/// Reads a JSON config file with the optional keys listen, dataset_dir,
/// memory, min_ss and session_ttl_minutes; then applies the SDD_LISTEN and
/// SDD_DATASET_DIR environment overrides.
inline ServiceConfig load_service_config(const std::optional<std::string>& path) {
  ServiceConfig c;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw Error(ErrorCode::io, "cannot open config '" + *path + "'");
    Json j;
    try {
      j = Json::parse(in);
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::parse, std::string("config: ") + e.what());
    }
    if (j.contains("listen")) apply_listen(c, j["listen"].get<std::string>());
    if (j.contains("dataset_dir")) c.dataset_dir = j["dataset_dir"].get<std::string>();
    if (j.contains("memory")) c.memory = j["memory"].get<std::size_t>();
    if (j.contains("min_ss")) c.min_ss = j["min_ss"].get<std::size_t>();
    if (j.contains("session_ttl_minutes")) c.session_ttl = std::chrono::minutes(j["session_ttl_minutes"].get<long>());
  }
  if (const char* listen = std::getenv("SDD_LISTEN"); listen && *listen) apply_listen(c, listen);
  if (const char* dir = std::getenv("SDD_DATASET_DIR"); dir && *dir) c.dataset_dir = dir;
  return c;
}

struct DatasetRecord {
  std::string id;
  std::string path;
  std::optional<std::string> schema;
  std::shared_ptr<const Table> table;
  Json options;
};

inline Json dataset_json(const DatasetRecord& d) {
  Json j;
  j["id"] = d.id;
  j["path"] = d.path;
  j["schema"] = d.schema ? Json(*d.schema) : Json(nullptr);
  j["rows"] = d.table->num_rows();
  j["columns"] = Json::array();
  for (const auto& c : d.table->columns()) {
    Json col{{"name", c.name()}, {"distinct", c.distinct_count()}, {"values", c.values()}};
    col["kind"] = c.kind() == ColumnKind::bucketized_numeric ? "bucketized-numeric" : "categorical";
    if (!c.bucket_edges().empty()) col["bucket_edges"] = c.bucket_edges();
    j["columns"].push_back(std::move(col));
  }
  j["measures"] = Json::array();
  for (const auto& m : d.table->measures()) j["measures"].push_back(m.name);
  j["options"] = d.options;
  return j;
}

/// Session configuration from its JSON form, on top of `base`:
///   {"k": 4, "m_w": 5 | "auto", "min_ss": 5000, "memory": 50000,
///    "weight": {"kind": "size", "exponent": 1, "column_weights": {...},
///               "favored": [...], "ignored": [...], "favor_multiplier": 2},
///    "aggregate": "count" | {"sum": "<measure>"}, "time_limit_ms": 5000,
///    "seed": 1, "auto_prefetch": true}
inline SessionConfig session_config_from_json(const Json& j, const Table& table, SessionConfig base) {
  if (j.is_null()) return base;
  if (!j.is_object()) throw Error(ErrorCode::invalid_argument, "config must be an object");
  try {
    if (j.contains("k")) base.k = j["k"].get<std::size_t>();
    if (j.contains("m_w")) {
      if (j["m_w"].is_string() && j["m_w"] == "auto") base.m_w.reset();
      else base.m_w = j["m_w"].get<double>();
    }
    if (j.contains("min_ss")) base.min_ss = j["min_ss"].get<std::size_t>();
    if (j.contains("memory")) base.memory = j["memory"].get<std::size_t>();
    if (j.contains("seed")) base.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("auto_prefetch")) base.auto_prefetch = j["auto_prefetch"].get<bool>();
    if (j.contains("time_limit_ms")) {
      if (j["time_limit_ms"].is_null()) base.time_limit.reset();
      else base.time_limit = std::chrono::milliseconds(j["time_limit_ms"].get<long>());
    }
    if (j.contains("aggregate")) {
      const auto& a = j["aggregate"];
      if (a.is_string() && a == "count") {
        base.aggregate = Aggregate::count();
      } else if (a.is_object() && a.contains("sum")) {
        auto name = a["sum"].get<std::string>();
        auto m = table.measure_index(name);
        if (!m) throw Error(ErrorCode::unknown_column, "unknown measure '" + name + "'");
        base.aggregate = Aggregate::sum(*m);
      } else {
        throw Error(ErrorCode::invalid_argument, "aggregate must be \"count\" or {\"sum\": measure}");
      }
    }
    if (j.contains("weight")) {
      const auto& w = j["weight"];
      WeightConfig wc;
      if (w.contains("kind")) wc.kind = parse_weight_kind(w["kind"].get<std::string>());
      if (w.contains("exponent")) wc.exponent = w["exponent"].get<double>();
      if (w.contains("column_weights")) {
        wc.column_weights.assign(table.num_columns(), 1.0);
        for (const auto& [name, value] : w["column_weights"].items()) {
          wc.column_weights[table.require_column(name)] = value.get<double>();
        }
      }
      const double multiplier = w.value("favor_multiplier", 2.0);
      auto mark = [&](const char* key, ColumnMode mode) {
        if (!w.contains(key)) return;
        if (wc.preferences.empty()) wc.preferences.assign(table.num_columns(), {});
        for (const auto& name : w[key]) {
          auto& pref = wc.preferences[table.require_column(name.get<std::string>())];
          pref.mode = mode;
          pref.multiplier = multiplier;
        }
      };
      mark("favored", ColumnMode::favored);
      mark("ignored", ColumnMode::ignored);
      base.weight = std::move(wc);
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::invalid_argument, std::string("config: ") + e.what());
  }
  base.validate(table.num_columns());
  // Surface weight errors (bad exponent, multiplier) now rather than on expand.
  WeightFunction check(base.weight, table.columns());
  (void)check;
  return base;
}

inline Json session_config_json(const SessionConfig& c, const Table& table) {
  Json j;
  j["k"] = c.k;
  j["m_w"] = c.m_w ? Json(*c.m_w) : Json("auto");
  j["min_ss"] = c.min_ss;
  j["memory"] = c.memory;
  j["seed"] = c.seed;
  j["auto_prefetch"] = c.auto_prefetch;
  j["time_limit_ms"] = c.time_limit ? Json(c.time_limit->count()) : Json(nullptr);
  if (c.aggregate.is_sum()) j["aggregate"] = {{"sum", table.measures().at(c.aggregate.measure).name}};
  else j["aggregate"] = "count";
  Json w;
  w["kind"] = to_string(c.weight.kind);
  w["exponent"] = c.weight.exponent;
  w["favored"] = Json::array();
  w["ignored"] = Json::array();
  for (std::size_t i = 0; i < c.weight.preferences.size(); ++i) {
    if (c.weight.preferences[i].mode == ColumnMode::favored) w["favored"].push_back(table.column(i).name());
    if (c.weight.preferences[i].mode == ColumnMode::ignored) w["ignored"].push_back(table.column(i).name());
  }
  if (!c.weight.column_weights.empty()) {
    w["column_weights"] = Json::object();
    for (std::size_t i = 0; i < c.weight.column_weights.size(); ++i) {
      w["column_weights"][table.column(i).name()] = c.weight.column_weights[i];
    }
  }
  j["weight"] = std::move(w);
  return j;
}

inline Json stats_json(const SessionStats& s) {
  const auto& c = s.counters;
  return {
      {"finds", c.finds},
      {"combines", c.combines},
      {"creates", c.creates},
      {"prefetch_scans", c.prefetch_scans},
      {"expansions", c.expansions},
      {"last_source", std::string(to_string(c.last_source))},
      {"last_expand_ms", c.last_expand_ms},
      {"last_prefetch_ms", c.last_prefetch_ms},
      {"last_plan_objective", c.last_plan_objective},
      {"pool", {{"samples", s.pool_samples}, {"rows", s.pool_rows}, {"capacity", s.pool_capacity},
                {"evictions", s.evictions}}},
      {"m_w", s.m_w},
      {"prefetch_running", s.prefetch_running},
  };
}

/// HTTP/JSON facade over datasets and drill sessions.
class Service {
 public:
  explicit Service(ServiceConfig config) : config_(std::move(config)) { routes(); }

  ~Service() { stop(); }

  httplib::Server& server() { return server_; }
  const ServiceConfig& config() const { return config_; }

  /// Binds the configured address; returns the bound port.
  int bind() {
    if (config_.port == 0) {
      port_ = server_.bind_to_any_port(config_.host);
    } else {
      port_ = server_.bind_to_port(config_.host, config_.port) ? config_.port : -1;
    }
    if (port_ < 0) throw Error(ErrorCode::io, "cannot bind " + config_.host + ":" + std::to_string(config_.port));
    return port_;
  }

  /// Serves until stop(). Call bind() first.
  void listen() { server_.listen_after_bind(); }

  void stop() {
    if (server_.is_running()) server_.stop();
  }

  int port() const { return port_; }

  /// Registers a dataset directly (also used by POST /datasets).
  DatasetRecord register_dataset(const Json& body) {
    if (!body.is_object() || !body.contains("path")) throw Error(ErrorCode::invalid_argument, "dataset needs a path");
    DatasetRecord d;
    d.path = resolve_path(body["path"].get<std::string>());
    if (body.contains("schema") && !body["schema"].is_null()) d.schema = resolve_path(body["schema"].get<std::string>());
    if (!d.schema) d.schema = find_schema_sidecar(d.path);
    LoadOptions options;
    if (d.schema) options = load_schema(*d.schema, options);
    try {
      if (body.contains("header")) options.header = body["header"].get<bool>();
      if (body.contains("measures")) options.measure_columns = body["measures"].get<std::vector<std::string>>();
      if (body.contains("use_columns")) options.use_columns = body["use_columns"].get<std::size_t>();
      if (body.contains("delimiter")) {
        auto del = body["delimiter"].get<std::string>();
        options.delimiter = del == "whitespace" ? '\0' : del == "tab" ? '\t' : del.empty() ? ',' : del[0];
      }
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::invalid_argument, std::string("dataset: ") + e.what());
    }
    d.table = std::make_shared<const Table>(load_csv(d.path, options));
    d.options = Json::object();
    for (const char* key : {"header", "measures", "use_columns", "delimiter"}) {
      if (body.contains(key)) d.options[key] = body[key];
    }
    std::unique_lock lock(datasets_mu_);
    d.id = body.contains("id") ? body["id"].get<std::string>() : "ds" + std::to_string(datasets_.size() + 1);
    for (const auto& existing : datasets_) {
      if (existing.id == d.id) throw Error(ErrorCode::invalid_argument, "dataset id '" + d.id + "' is taken");
    }
    datasets_.push_back(d);
    return d;
  }

  /// Registers an in-memory table.
  DatasetRecord register_table(std::string id, std::shared_ptr<const Table> table) {
    DatasetRecord d;
    d.id = std::move(id);
    d.path = "<memory>";
    d.table = std::move(table);
    d.options = Json::object();
    std::unique_lock lock(datasets_mu_);
    datasets_.push_back(d);
    return d;
  }

  /// Blocks mutations of a session (they get 409) until the lock is released.
  std::unique_lock<std::mutex> hold(const std::string& session_id) {
    auto e = entry(session_id);
    return std::unique_lock<std::mutex>(e->busy);
  }

  std::size_t session_count() {
    std::lock_guard lock(sessions_mu_);
    return sessions_.size();
  }

  /// Drops sessions idle for longer than the TTL.
  void expire_sessions(std::chrono::steady_clock::time_point now = std::chrono::steady_clock::now()) {
    std::lock_guard lock(sessions_mu_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if (now - it->second->last_access.load() > config_.session_ttl) it = sessions_.erase(it);
      else ++it;
    }
  }

 private:
  struct Entry {
    std::string dataset_id;
    std::shared_ptr<Session> session;
    std::mutex busy;
    std::atomic<std::chrono::steady_clock::time_point> last_access{std::chrono::steady_clock::now()};
  };

  struct HttpError {
    int status;
    std::string code;
    std::string message;
  };

  std::string resolve_path(const std::string& p) const {
    std::filesystem::path path(p);
    if (path.is_relative()) path = std::filesystem::path(config_.dataset_dir) / path;
    return path.string();
  }

  std::optional<DatasetRecord> dataset(const std::string& id) {
    std::shared_lock lock(datasets_mu_);
    for (const auto& d : datasets_) {
      if (d.id == id) return d;
    }
    return std::nullopt;
  }

  std::shared_ptr<Entry> entry(const std::string& id) {
    expire_sessions();
    std::lock_guard lock(sessions_mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw HttpError{404, "not_found", "unknown session '" + id + "'"};
    it->second->last_access = std::chrono::steady_clock::now();
    return it->second;
  }

  static void send_json(httplib::Response& res, const Json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    send_json(res, {{"code", code}, {"message", message}}, status);
  }

  static Json body_of(const httplib::Request& req) {
    if (req.body.empty()) return Json::object();
    try {
      return Json::parse(req.body);
    } catch (const Json::exception& e) {
      throw HttpError{400, "bad_request", std::string("malformed JSON: ") + e.what()};
    }
  }

  static NodePath path_of(const Json& body, const Session& session) {
    if (!body.contains("path") || body["path"].is_null()) return {};
    const auto& p = body["path"];
    if (p.is_string()) return session.resolve(p.get<std::string>());
    if (!p.is_array()) throw Error(ErrorCode::unknown_node, "path must be an index array or rule text");
    NodePath path;
    for (const auto& i : p) {
      if (!i.is_number_unsigned() && !(i.is_number_integer() && i.get<long>() >= 0)) {
        throw Error(ErrorCode::unknown_node, "path entries must be non-negative integers");
      }
      path.push_back(i.get<std::size_t>());
    }
    return path;
  }

  static std::size_t column_of(const Json& body, const Table& table) {
    if (!body.contains("column")) throw Error(ErrorCode::unknown_column, "missing column");
    const auto& c = body["column"];
    if (c.is_number_unsigned()) {
      auto i = c.get<std::size_t>();
      if (i >= table.num_columns()) throw Error(ErrorCode::unknown_column, "column out of range");
      return i;
    }
    if (!c.is_string()) throw Error(ErrorCode::unknown_column, "column must be a name or index");
    return table.require_column(c.get<std::string>());
  }

  template <typename F>
  httplib::Server::Handler guarded(F f) {
    return [f = std::move(f)](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const HttpError& e) {
        send_error(res, e.status, e.code, e.message);
      } catch (const Error& e) {
        send_error(res, 400, std::string(to_string(e.code())), e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  }

  // Runs a mutation while holding the session's busy flag; 409 if taken.
  template <typename F>
  void mutate(const httplib::Request& req, F f) {
    auto e = entry(req.matches[1]);
    std::unique_lock lock(e->busy, std::try_to_lock);
    if (!lock.owns_lock()) throw HttpError{409, "busy", "another change to this session is in flight"};
    f(*e);
  }

  Json tree_response(Session& s, const std::optional<ScoredRuleList>& rules = std::nullopt) const {
    Json j;
    j["tree"] = tree_json(s);
    if (rules) {
      j["rules"] = rule_list_json(*rules, s.table());
      j["source"] = std::string(to_string(s.stats().counters.last_source));
    }
    return j;
  }

  enum class Gesture { expand, star, regular };

  void drill(const httplib::Request& req, httplib::Response& res, Gesture g) {
    auto e = entry(req.matches[1]);
    auto lock = std::make_shared<std::unique_lock<std::mutex>>(e->busy, std::try_to_lock);
    if (!lock->owns_lock()) throw HttpError{409, "busy", "another change to this session is in flight"};
    auto body = body_of(req);
    auto session = e->session;
    NodePath path = path_of(body, *session);
    std::optional<std::size_t> column;
    if (g != Gesture::expand) column = column_of(body, session->table());
    {
      // Validate before any streaming starts so errors keep their status.
      auto tree = session->tree();
      const DrillNode* n = &tree;
      for (auto i : path) {
        if (i >= n->children.size()) throw Error(ErrorCode::unknown_node, "no node at the given path");
        n = &n->children[i];
      }
      if (n->expanded) throw Error(ErrorCode::node_expanded, "node is already expanded");
      if (column && !n->rule.is_star(*column)) {
        throw Error(ErrorCode::column_instantiated,
                    "column '" + session->table().column(*column).name() + "' is already instantiated");
      }
    }
    const bool stream = req.has_param("stream") && req.get_param_value("stream") != "0";
    if (!stream || g == Gesture::regular) {
      ScoredRuleList list;
      if (g == Gesture::expand) list = session->expand(path);
      else if (g == Gesture::star) list = session->expand_star(path, *column);
      else list = session->emulate_regular_drilldown(path, *column);
      send_json(res, tree_response(*session, list));
      return;
    }
    // Newline-delimited JSON: one {"type":"rule"} line per rule as found,
    // then {"type":"tree"} with the full response.
    res.set_chunked_content_provider(
        "application/x-ndjson", [this, lock, session, path, column](std::size_t, httplib::DataSink& sink) {
          const Table& table = session->table();
          try {
            auto list = session->expand_streaming(path, column, [&](const CandidateEntry& c) {
              Json line{{"type", "rule"},
                        {"rule", format_rule(c.rule, table.columns())},
                        {"cells", rule_cells(c.rule, table.columns())},
                        {"weight", number_json(c.weight)},
                        {"value", number_json(c.count)},
                        {"marginal_value", number_json(c.marginal_value)}};
              auto text = line.dump() + "\n";
              sink.write(text.data(), text.size());
            });
            Json last = tree_response(*session, list);
            last["type"] = "tree";
            auto text = last.dump() + "\n";
            sink.write(text.data(), text.size());
          } catch (const Error& err) {
            Json line{{"type", "error"}, {"code", std::string(to_string(err.code()))}, {"message", err.what()}};
            auto text = line.dump() + "\n";
            sink.write(text.data(), text.size());
          }
          lock->unlock();
          sink.done();
          return true;
        });
  }

  void routes() {
    server_.Get("/health", guarded([](const httplib::Request&, httplib::Response& res) {
      send_json(res, {{"status", "ok"}});
    }));

    server_.Get("/datasets", guarded([this](const httplib::Request&, httplib::Response& res) {
      Json out = Json::array();
      std::shared_lock lock(datasets_mu_);
      for (const auto& d : datasets_) out.push_back(dataset_json(d));
      send_json(res, out);
    }));

    server_.Post("/datasets", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto d = register_dataset(body_of(req));
      send_json(res, dataset_json(d), 201);
    }));

    server_.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto body = body_of(req);
      if (!body.contains("dataset_id")) throw Error(ErrorCode::invalid_argument, "missing dataset_id");
      auto id = body["dataset_id"].get<std::string>();
      auto d = dataset(id);
      if (!d) throw HttpError{404, "not_found", "unknown dataset '" + id + "'"};
      SessionConfig base;
      base.memory = config_.memory;
      base.min_ss = std::min(config_.min_ss, config_.memory);
      auto sc = session_config_from_json(body.value("config", Json()), *d->table, base);
      auto e = std::make_shared<Entry>();
      e->dataset_id = id;
      e->session = std::make_shared<Session>(d->table, sc);
      std::string sid;
      {
        std::lock_guard lock(sessions_mu_);
        sid = "s" + std::to_string(++next_session_) + "-" + std::to_string(id_rng_() % 1000000);
        sessions_[sid] = e;
      }
      Json out = tree_response(*e->session);
      out["session_id"] = sid;
      out["dataset_id"] = id;
      out["config"] = session_config_json(sc, *d->table);
      send_json(res, out, 201);
    }));

    server_.Get(R"(/sessions/([^/]+)/tree)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto e = entry(req.matches[1]);
      send_json(res, tree_response(*e->session));
    }));

    server_.Post(R"(/sessions/([^/]+)/expand)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      drill(req, res, Gesture::expand);
    }));

    server_.Post(R"(/sessions/([^/]+)/star)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      drill(req, res, Gesture::star);
    }));

    server_.Post(R"(/sessions/([^/]+)/regular)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      drill(req, res, Gesture::regular);
    }));

    server_.Post(R"(/sessions/([^/]+)/collapse)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      mutate(req, [&](Entry& e) {
        auto body = body_of(req);
        e.session->collapse(path_of(body, *e.session));
        send_json(res, tree_response(*e.session));
      });
    }));

    server_.Put(R"(/sessions/([^/]+)/config)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      mutate(req, [&](Entry& e) {
        auto body = body_of(req);
        auto sc = session_config_from_json(body, e.session->table(), e.session->config());
        e.session->set_config(sc);
        auto out = tree_response(*e.session);
        out["config"] = session_config_json(sc, e.session->table());
        send_json(res, out);
      });
    }));

    server_.Get(R"(/sessions/([^/]+)/config)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto e = entry(req.matches[1]);
      send_json(res, session_config_json(e->session->config(), e->session->table()));
    }));

    server_.Get(R"(/sessions/([^/]+)/stats)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto e = entry(req.matches[1]);
      send_json(res, stats_json(e->session->stats()));
    }));

    server_.Delete(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(sessions_mu_);
      if (sessions_.erase(req.matches[1]) == 0) {
        throw HttpError{404, "not_found", "unknown session '" + std::string(req.matches[1]) + "'"};
      }
      res.status = 204;
    }));

    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) {
        send_error(res, res.status, res.status == 404 ? "not_found" : "http_error", httplib::status_message(res.status));
      }
    });
  }

  ServiceConfig config_;
  httplib::Server server_;
  int port_ = -1;

  std::shared_mutex datasets_mu_;
  std::vector<DatasetRecord> datasets_;

  std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::uint64_t next_session_ = 0;
  std::mt19937_64 id_rng_{std::random_device{}()};
};

}  // namespace sdd
