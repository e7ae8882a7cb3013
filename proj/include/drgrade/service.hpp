// Copyright 2026 The drgrade Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/**
 * @file
 * @brief HTTP grading service: prediction with IG overlay, model registry
 * administration and clinician feedback capture.
 *
 * Endpoints (all bodies JSON; every response carries "request_id" and an
 * X-Request-Id header; errors are {"error": {"code", "message"}, "request_id"}):
 *
 *     POST /api/predict            multipart "image"; query ig_steps, include_overlay
 *     POST /api/feedback           {"request_id", "clinician_grade"} -> 201 {"record_id"}
 *     GET  /api/feedback           query since_id -> {"records": [...]}
 *     GET  /api/models             admin
 *     POST /api/models             admin; multipart "checkpoint" + field "model_id"
 *     POST /api/models/{id}/activate  admin
 *     GET  /api/health
 *
 * Admin endpoints require "Authorization: Bearer <admin_token>". With no
 * token configured they answer 403.
 *
 * Storage: the registry directory holds <model_id>.ckpt files and a text
 * file "active" naming the active id. Feedback is newline-delimited JSON,
 * fsync'ed before the 201 response.
 */
#pragma once

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "drgrade/attribution.hpp"
#include "drgrade/checkpoint.hpp"
#include "drgrade/image.hpp"
#include "drgrade/model.hpp"
#include "drgrade/util.hpp"
#include "httplib.h"
#include "json.hpp"

namespace drgrade {

namespace fs = std::filesystem;

inline constexpr std::size_t kMaxImageBytes = 20u * 1024u * 1024u;
inline constexpr std::size_t kMaxIgSteps = 2000;

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  ///< 0 picks a free port
  fs::path model_dir;
  fs::path feedback_path;
  std::string admin_token;
  std::size_t ig_steps = 50;
  bool retain_images = false;
  fs::path image_dir;  ///< where retained uploads go; defaults next to the feedback file
  std::size_t request_memory = 10000;
  std::size_t threads = 16;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/**
 * Parses a serve configuration file:
 *
 *     {"listen": "127.0.0.1:8080", "model_dir": "models",
 *      "feedback_path": "feedback.ndjson", "admin_token": "...",
 *      "ig_steps": 50, "retain_images": false, "image_dir": "images"}
 *
 * Relative paths resolve against the file's directory. model_dir and
 * feedback_path are required.
 */
inline ServiceConfig parse_service_config(const nlohmann::json& j, const fs::path& base) {
  ServiceConfig c;
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::vector<std::string> kKnown = {"listen", "model_dir", "feedback_path",
                                                    "admin_token", "ig_steps", "retain_images",
                                                    "image_dir", "threads"};
    for (const auto& [key, _] : j.items())
      if (std::find(kKnown.begin(), kKnown.end(), key) == kKnown.end())
        throw ConfigError("unknown config key '" + key + "'");
    auto resolve = [&](const std::string& p) {
      fs::path path(p);
      return path.is_absolute() ? path : base / path;
    };
    if (!j.contains("model_dir")) throw ConfigError("config is missing 'model_dir'");
    if (!j.contains("feedback_path")) throw ConfigError("config is missing 'feedback_path'");
    c.model_dir = resolve(j.at("model_dir").get<std::string>());
    c.feedback_path = resolve(j.at("feedback_path").get<std::string>());
    if (j.contains("listen")) {
      const auto listen = j.at("listen").get<std::string>();
      const auto colon = listen.rfind(':');
      if (colon == std::string::npos) throw ConfigError("listen must be host:port");
      c.host = listen.substr(0, colon);
      const auto port = std::stoi(listen.substr(colon + 1));
      if (port < 0 || port > 65535) throw ConfigError("listen port out of range");
      c.port = port;
    }
    c.admin_token = j.value("admin_token", std::string());
    c.ig_steps = j.value("ig_steps", c.ig_steps);
    if (c.ig_steps == 0 || c.ig_steps > kMaxIgSteps) throw ConfigError("ig_steps out of range");
    c.retain_images = j.value("retain_images", false);
    c.image_dir = j.contains("image_dir") ? resolve(j.at("image_dir").get<std::string>())
                                          : c.feedback_path.parent_path() / "images";
    c.threads = j.value("threads", c.threads);
    if (c.threads == 0) throw ConfigError("threads must be positive");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  return c;
}

inline ServiceConfig load_service_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config '" + file.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("config '" + file.string() + "' is not valid JSON: " + e.what());
  }
  return parse_service_config(j, file.parent_path());
}

/**
 * Overrides from the environment: DRGRADE_LISTEN, DRGRADE_MODEL_DIR,
 * DRGRADE_FEEDBACK_PATH, DRGRADE_ADMIN_TOKEN, DRGRADE_IG_STEPS.
 */
inline ServiceConfig apply_env_overrides(ServiceConfig c,
                                         const std::function<const char*(const char*)>& getenv_fn =
                                             [](const char* k) { return std::getenv(k); }) {
  nlohmann::json j = {{"model_dir", c.model_dir.string()},
                      {"feedback_path", c.feedback_path.string()},
                      {"listen", c.host + ":" + std::to_string(c.port)},
                      {"admin_token", c.admin_token},
                      {"ig_steps", c.ig_steps},
                      {"retain_images", c.retain_images},
                      {"image_dir", c.image_dir.string()},
                      {"threads", c.threads}};
  bool changed = false;
  auto take = [&](const char* var, const char* key) {
    if (const char* v = getenv_fn(var)) {
      j[key] = std::string(v);
      changed = true;
    }
  };
  take("DRGRADE_LISTEN", "listen");
  take("DRGRADE_MODEL_DIR", "model_dir");
  take("DRGRADE_FEEDBACK_PATH", "feedback_path");
  take("DRGRADE_ADMIN_TOKEN", "admin_token");
  if (const char* v = getenv_fn("DRGRADE_IG_STEPS")) {
    try {
      j["ig_steps"] = std::stoull(v);
    } catch (const std::exception&) {
      throw ConfigError("DRGRADE_IG_STEPS must be a positive integer");
    }
    changed = true;
  }
  if (!changed) return c;
  const auto request_memory = c.request_memory;
  auto out = parse_service_config(j, fs::current_path());
  out.request_memory = request_memory;
  return out;
}

// -- durable file helpers --------------------------------------------------------

namespace detail {

inline void fsync_dir(const fs::path& dir) {
  const int fd = ::open(dir.empty() ? "." : dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

/// Writes `bytes` to `path` via a synced temporary file and rename.
inline void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  const fs::path tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw std::runtime_error("cannot write '" + tmp.string() + "': " + std::strerror(errno));
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw std::runtime_error("write failed for '" + tmp.string() + "'");
    }
    done += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
  fs::rename(tmp, path);
  fsync_dir(path.parent_path());
}

inline void write_file_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace detail

// -- feedback store ---------------------------------------------------------------

struct FeedbackRecord {
  std::uint64_t record_id = 0;
  std::string timestamp;
  std::string image_sha256;
  std::string model_id;
  GradeLabel predicted_grade;
  std::array<double, GradeLabel::kCount> probabilities{};
  GradeLabel clinician_grade;
  std::string request_id;

  bool operator==(const FeedbackRecord&) const = default;
};

inline void to_json(nlohmann::json& j, const FeedbackRecord& r) {
  j = {{"record_id", r.record_id},
       {"timestamp", r.timestamp},
       {"image_sha256", r.image_sha256},
       {"model_id", r.model_id},
       {"predicted_grade", r.predicted_grade.value()},
       {"probabilities", r.probabilities},
       {"clinician_grade", r.clinician_grade.value()},
       {"request_id", r.request_id}};
}

inline void from_json(const nlohmann::json& j, FeedbackRecord& r) {
  r.record_id = j.at("record_id").get<std::uint64_t>();
  r.timestamp = j.at("timestamp").get<std::string>();
  r.image_sha256 = j.at("image_sha256").get<std::string>();
  r.model_id = j.at("model_id").get<std::string>();
  r.predicted_grade = GradeLabel(j.at("predicted_grade").get<int>());
  r.probabilities = j.at("probabilities").get<std::array<double, GradeLabel::kCount>>();
  r.clinician_grade = GradeLabel(j.at("clinician_grade").get<int>());
  r.request_id = j.at("request_id").get<std::string>();
}

/// Append-only feedback persistence.
class FeedbackStore {
 public:
  virtual ~FeedbackStore() = default;
  /// Assigns record_id, persists durably, returns the stored record.
  virtual FeedbackRecord append(FeedbackRecord record) = 0;
  /// Records with record_id > since_id in id order.
  virtual std::vector<FeedbackRecord> since(std::uint64_t since_id) const = 0;
  virtual std::size_t count() const = 0;
};

/// One JSON object per line; every append is fsync'ed before returning.
class NdjsonFeedbackStore final : public FeedbackStore {
 public:
  explicit NdjsonFeedbackStore(fs::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    std::ifstream in(path_);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        records_.push_back(nlohmann::json::parse(line).get<FeedbackRecord>());
      } catch (const std::exception& e) {
        throw std::runtime_error("feedback file '" + path_.string() + "' line " +
                                 std::to_string(lineno) + ": " + e.what());
      }
      if (records_.size() > 1 && records_.back().record_id <= records_[records_.size() - 2].record_id)
        throw std::runtime_error("feedback file '" + path_.string() +
                                 "': record ids not increasing at line " + std::to_string(lineno));
    }
    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) {
      throw std::runtime_error("cannot open feedback file '" + path_.string() +
                               "': " + std::strerror(errno));
    }
    detail::fsync_dir(path_.parent_path());
  }

  ~NdjsonFeedbackStore() override {
    if (fd_ >= 0) {
      ::fsync(fd_);
      ::close(fd_);
    }
  }

  NdjsonFeedbackStore(const NdjsonFeedbackStore&) = delete;
  NdjsonFeedbackStore& operator=(const NdjsonFeedbackStore&) = delete;

  FeedbackRecord append(FeedbackRecord record) override {
    std::unique_lock lock(mutex_);
    record.record_id = records_.empty() ? 1 : records_.back().record_id + 1;
    const std::string line = nlohmann::json(record).dump() + "\n";
    std::size_t done = 0;
    while (done < line.size()) {
      const auto n = ::write(fd_, line.data() + done, line.size() - done);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw std::runtime_error("feedback append failed: " + std::string(std::strerror(errno)));
      }
      done += static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0) throw std::runtime_error("feedback fsync failed");
    records_.push_back(record);
    return record;
  }

  std::vector<FeedbackRecord> since(std::uint64_t since_id) const override {
    std::shared_lock lock(mutex_);
    auto it = std::upper_bound(records_.begin(), records_.end(), since_id,
                               [](std::uint64_t id, const FeedbackRecord& r) { return id < r.record_id; });
    return {it, records_.end()};
  }

  std::size_t count() const override {
    std::shared_lock lock(mutex_);
    return records_.size();
  }

  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  int fd_ = -1;
  mutable std::shared_mutex mutex_;
  std::vector<FeedbackRecord> records_;
};

// -- prediction log ---------------------------------------------------------------

struct PredictionLogEntry {
  std::string image_sha256;
  std::string model_id;
  GradeLabel grade;
  std::array<double, GradeLabel::kCount> probabilities{};
};

/// The most recent `capacity` predictions by request id.
class PredictionLog {
 public:
  explicit PredictionLog(std::size_t capacity) : capacity_(capacity) {}

  void put(const std::string& request_id, PredictionLogEntry entry) {
    std::lock_guard lock(mutex_);
    if (capacity_ == 0) return;
    if (entries_.emplace(request_id, std::move(entry)).second) order_.push_back(request_id);
    while (order_.size() > capacity_) {
      entries_.erase(order_.front());
      order_.pop_front();
    }
  }

  std::optional<PredictionLogEntry> get(const std::string& request_id) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(request_id);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

 private:
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, PredictionLogEntry> entries_;
  std::deque<std::string> order_;
};

// -- model registry ---------------------------------------------------------------

struct LoadedModel {
  std::string id;
  fs::path path;
  std::shared_ptr<const Model> model;
  TrainingMetadata training;
};

class RegistryError : public std::runtime_error {
 public:
  enum class Kind { invalid_id, duplicate, not_found, invalid_checkpoint, io };
  RegistryError(Kind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline bool valid_model_id(const std::string& id) {
  static const std::regex re("^[A-Za-z0-9][A-Za-z0-9._-]{0,63}$");
  return std::regex_match(id, re);
}

/**
 * Checkpoints in a directory plus the active marker. Mutations are
 * serialized; the active model is published as an immutable snapshot.
 */
class ModelRegistry {
 public:
  /// Loads every <id>.ckpt in `dir`. Unreadable checkpoints are reported
  /// through `warn` and skipped.
  explicit ModelRegistry(fs::path dir,
                         const std::function<void(const std::string&)>& warn = {})
      : dir_(std::move(dir)) {
    if (!fs::is_directory(dir_)) {
      throw std::runtime_error("model directory '" + dir_.string() + "' does not exist");
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir_))
      if (e.is_regular_file() && e.path().extension() == ".ckpt") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto id = f.stem().string();
      try {
        if (!valid_model_id(id)) throw std::runtime_error("invalid model id");
        auto ckpt = load_checkpoint(f);
        models_[id] = std::make_shared<const LoadedModel>(LoadedModel{
            id, f, std::make_shared<const Model>(std::move(ckpt.model)), ckpt.training});
      } catch (const std::exception& e) {
        if (warn) warn("skipping checkpoint '" + f.string() + "': " + e.what());
      }
    }
    std::ifstream marker(dir_ / "active");
    std::string id;
    if (marker && std::getline(marker, id)) {
      auto it = models_.find(id);
      if (it != models_.end()) {
        active_ = it->second;
      } else if (warn) {
        warn("active marker names unknown model '" + id + "'");
      }
    }
  }

  std::shared_ptr<const LoadedModel> active() const {
    std::lock_guard lock(active_mutex_);
    return active_;
  }

  std::vector<std::shared_ptr<const LoadedModel>> list() const {
    std::lock_guard lock(write_mutex_);
    std::vector<std::shared_ptr<const LoadedModel>> out;
    for (const auto& [_, m] : models_) out.push_back(m);
    return out;
  }

  std::size_t size() const {
    std::lock_guard lock(write_mutex_);
    return models_.size();
  }

  /// Validates and stores a checkpoint without activating it.
  std::shared_ptr<const LoadedModel> add(const std::string& id,
                                         std::span<const std::uint8_t> bytes) {
    if (!valid_model_id(id)) {
      throw RegistryError(RegistryError::Kind::invalid_id,
                          "model_id must match [A-Za-z0-9][A-Za-z0-9._-]{0,63}");
    }
    Checkpoint ckpt;
    try {
      ckpt = decode_checkpoint(bytes);
    } catch (const CheckpointError& e) {
      throw RegistryError(RegistryError::Kind::invalid_checkpoint,
                          std::string(e.code()) + ": " + e.what());
    }
    std::lock_guard lock(write_mutex_);
    if (models_.count(id)) {
      throw RegistryError(RegistryError::Kind::duplicate, "model '" + id + "' already exists");
    }
    const auto path = dir_ / (id + ".ckpt");
    detail::write_file_atomic(path, bytes);
    auto entry = std::make_shared<const LoadedModel>(LoadedModel{
        id, path, std::make_shared<const Model>(std::move(ckpt.model)), ckpt.training});
    models_[id] = entry;
    return entry;
  }

  /// Makes `id` active; requests that already hold the old snapshot finish on it.
  std::shared_ptr<const LoadedModel> activate(const std::string& id) {
    std::lock_guard lock(write_mutex_);
    auto it = models_.find(id);
    if (it == models_.end()) {
      throw RegistryError(RegistryError::Kind::not_found, "unknown model '" + id + "'");
    }
    detail::write_file_atomic(dir_ / "active", id + "\n");
    std::lock_guard swap(active_mutex_);
    active_ = it->second;
    return active_;
  }

  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  mutable std::mutex write_mutex_;
  mutable std::mutex active_mutex_;
  std::map<std::string, std::shared_ptr<const LoadedModel>> models_;
  std::shared_ptr<const LoadedModel> active_;
};

// -- HTTP service -----------------------------------------------------------------

using LogSink = std::function<void(const nlohmann::json&)>;

/// JSON-lines sink on standard output.
inline LogSink stdout_log_sink() {
  auto mutex = std::make_shared<std::mutex>();
  return [mutex](const nlohmann::json& j) {
    std::lock_guard lock(*mutex);
    std::cout << j.dump() << std::endl;
  };
}

class Service {
 public:
  explicit Service(ServiceConfig config, LogSink log = stdout_log_sink())
      : config_(std::move(config)),
        log_(std::move(log)),
        registry_(config_.model_dir,
                  [this](const std::string& msg) { emit("warning", {{"message", msg}}); }),
        feedback_(std::make_unique<NdjsonFeedbackStore>(config_.feedback_path)),
        predictions_(config_.request_memory),
        started_(std::chrono::steady_clock::now()) {
    routes();
  }

  ~Service() { stop(); }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds the configured address; returns the bound port or -1.
  int bind() {
    port_ = config_.port == 0 ? server_.bind_to_any_port(config_.host)
                              : (server_.bind_to_port(config_.host, config_.port) ? config_.port : -1);
    return port_;
  }

  /// Serves until stop(); requires a successful bind().
  bool run() {
    emit("listening", {{"host", config_.host}, {"port", port_}});
    return server_.listen_after_bind();
  }

  void stop() {
    if (server_.is_running()) server_.stop();
  }

  void wait_until_ready() const { server_.wait_until_ready(); }
  int port() const { return port_; }
  ModelRegistry& registry() { return registry_; }
  FeedbackStore& feedback() { return *feedback_; }

 private:
  using Req = httplib::Request;
  using Res = httplib::Response;

  struct HttpError {
    int status;
    std::string code;
    std::string message;
  };

  void emit(const std::string& event, nlohmann::json fields) {
    if (!log_) return;
    fields["event"] = event;
    fields["time"] = iso8601_utc_now();
    log_(fields);
  }

  static void send_json(Res& res, int status, nlohmann::json body, const std::string& request_id) {
    body["request_id"] = request_id;
    res.status = status;
    res.set_header("X-Request-Id", request_id);
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(Res& res, const HttpError& e, const std::string& request_id) {
    send_json(res, e.status, {{"error", {{"code", e.code}, {"message", e.message}}}}, request_id);
  }

  /// Runs `body` with a fresh request id, mapping HttpError and unexpected
  /// exceptions to JSON error responses.
  template <typename F>
  auto handler(F body) {
    return [this, body](const Req& req, Res& res) {
      const std::string request_id = uuid_v4();
      try {
        body(req, res, request_id);
      } catch (const HttpError& e) {
        send_error(res, e, request_id);
      } catch (const std::exception& e) {
        emit("internal_error", {{"path", req.path}, {"message", e.what()}, {"request_id", request_id}});
        send_error(res, {500, "internal", e.what()}, request_id);
      }
    };
  }

  void require_admin(const Req& req) const {
    if (config_.admin_token.empty())
      throw HttpError{403, "admin_disabled", "no admin token is configured"};
    if (req.get_header_value("Authorization") != "Bearer " + config_.admin_token)
      throw HttpError{401, "unauthorized", "missing or invalid bearer token"};
  }

  static std::optional<long long> parse_integer(const std::string& s) {
    if (s.empty() || s.size() > 18) return std::nullopt;
    std::size_t i = s[0] == '-' ? 1 : 0;
    if (i == s.size()) return std::nullopt;
    for (std::size_t k = i; k < s.size(); ++k)
      if (s[k] < '0' || s[k] > '9') return std::nullopt;
    return std::stoll(s);
  }

  void routes() {
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    const auto threads = config_.threads;
    server_.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    server_.set_payload_max_length(kMaxImageBytes * 3);
    server_.set_error_handler([](const Req& req, Res& res) {
      if (!res.body.empty()) return;
      const std::string id = uuid_v4();
      const std::string code = res.status == 404 ? "not_found"
                                : res.status == 413 ? "payload_too_large"
                                                    : "http_" + std::to_string(res.status);
      send_json(res, res.status,
                {{"error", {{"code", code}, {"message", req.method + " " + req.path}}}}, id);
    });

    server_.Post("/api/predict", handler([this](const Req& req, Res& res, const std::string& id) {
      predict(req, res, id);
    }));
    server_.Post("/api/feedback", handler([this](const Req& req, Res& res, const std::string& id) {
      post_feedback(req, res, id);
    }));
    server_.Get("/api/feedback", handler([this](const Req& req, Res& res, const std::string& id) {
      std::uint64_t since = 0;
      if (req.has_param("since_id")) {
        const auto v = parse_integer(req.get_param_value("since_id"));
        if (!v || *v < 0) throw HttpError{422, "invalid_parameter", "since_id must be a nonnegative integer"};
        since = static_cast<std::uint64_t>(*v);
      }
      send_json(res, 200, {{"records", feedback_->since(since)}}, id);
    }));
    server_.Get("/api/models", handler([this](const Req& req, Res& res, const std::string& id) {
      require_admin(req);
      const auto active = registry_.active();
      nlohmann::json models = nlohmann::json::array();
      for (const auto& m : registry_.list()) models.push_back(describe(*m, active && active->id == m->id));
      send_json(res, 200, {{"models", models}, {"active_model_id", active ? nlohmann::json(active->id) : nlohmann::json(nullptr)}}, id);
    }));
    server_.Post("/api/models", handler([this](const Req& req, Res& res, const std::string& id) {
      require_admin(req);
      upload_model(req, res, id);
    }));
    server_.Post("/api/models/:id/activate",
                 handler([this](const Req& req, Res& res, const std::string& id) {
                   require_admin(req);
                   const auto model_id = req.path_params.at("id");
                   try {
                     const auto m = registry_.activate(model_id);
                     emit("model_activated", {{"model_id", model_id}, {"request_id", id}});
                     send_json(res, 200, {{"active_model_id", m->id}}, id);
                   } catch (const RegistryError& e) {
                     throw HttpError{404, "unknown_model", e.what()};
                   }
                 }));
    server_.Get("/api/health", handler([this](const Req&, Res& res, const std::string& id) {
      const auto active = registry_.active();
      const double uptime =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
      send_json(res, 200,
                {{"status", active ? "ok" : "degraded"},
                 {"active_model_id", active ? nlohmann::json(active->id) : nlohmann::json(nullptr)},
                 {"uptime_seconds", uptime},
                 {"feedback_count", feedback_->count()},
                 {"model_count", registry_.size()}},
                id);
    }));
  }

  static nlohmann::json describe(const LoadedModel& m, bool active) {
    return {{"model_id", m.id},
            {"active", active},
            {"config", m.model->config()},
            {"parameters", m.model->parameter_count()},
            {"training",
             {{"epochs", m.training.epochs},
              {"final_loss", m.training.final_loss ? nlohmann::json(*m.training.final_loss)
                                                   : nlohmann::json(nullptr)}}}};
  }

  void predict(const Req& req, Res& res, const std::string& request_id) {
    std::size_t steps = config_.ig_steps;
    if (req.has_param("ig_steps")) {
      const auto v = parse_integer(req.get_param_value("ig_steps"));
      if (!v || *v < 1 || *v > static_cast<long long>(kMaxIgSteps))
        throw HttpError{422, "invalid_parameter",
                        "ig_steps must be an integer in [1, " + std::to_string(kMaxIgSteps) + "]"};
      steps = static_cast<std::size_t>(*v);
    }
    bool overlay = true;
    if (req.has_param("include_overlay")) {
      const auto v = req.get_param_value("include_overlay");
      if (v == "true" || v == "1") overlay = true;
      else if (v == "false" || v == "0") overlay = false;
      else throw HttpError{422, "invalid_parameter", "include_overlay must be true or false"};
    }
    if (!req.has_file("image"))
      throw HttpError{400, "bad_image", "multipart field 'image' is required"};
    const auto& content = req.get_file_value("image").content;
    if (content.size() > kMaxImageBytes)
      throw HttpError{400, "image_too_large",
                      "image exceeds " + std::to_string(kMaxImageBytes) + " bytes"};
    const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(content.data()),
                                              content.size());
    FundusImage img;
    try {
      img = decode_image(bytes, "upload");
    } catch (const ImageError& e) {
      throw HttpError{400, "bad_image", e.what()};
    }
    const auto active = registry_.active();
    if (!active) throw HttpError{503, "no_active_model", "no model is active"};

    const auto hash = sha256_hex(bytes);
    const auto& model = *active->model;
    const auto x = preprocess(img, static_cast<int>(model.config().input_size));
    auto result = predict_tensor(model, x, active->id);
    nlohmann::json body = {{"model_id", active->id},
                           {"grade", result.grade.value()},
                           {"grade_name", std::string(result.grade.name())},
                           {"probabilities", result.probabilities},
                           {"image_sha256", hash},
                           {"ig_steps", nullptr},
                           {"completeness_gap", nullptr},
                           {"overlay_png_base64", nullptr}};
    if (overlay) {
      IGConfig ig;
      ig.steps = steps;
      const auto mask = integrated_gradients_tensor(model, x, ig);
      const auto png = encode_png(render_overlay(mask, tensor_to_image(x)));
      body["ig_steps"] = steps;
      body["completeness_gap"] = mask.completeness_gap;
      body["overlay_png_base64"] = base64_encode(png);
    }
    if (config_.retain_images) {
      fs::create_directories(config_.image_dir);
      const auto ext = detail::is_png(bytes) ? ".png" : ".jpg";
      const auto path = config_.image_dir / (hash + ext);
      if (!fs::exists(path)) detail::write_file_atomic(path, bytes);
    }
    predictions_.put(request_id, {hash, active->id, result.grade, result.probabilities});
    emit("predict", {{"request_id", request_id},
                     {"image_sha256", hash},
                     {"model_id", active->id},
                     {"grade", result.grade.value()}});
    send_json(res, 200, std::move(body), request_id);
  }

  void post_feedback(const Req& req, Res& res, const std::string& request_id) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(req.body);
    } catch (const std::exception&) {
      throw HttpError{400, "bad_request", "body must be JSON"};
    }
    if (!j.is_object() || !j.contains("request_id") || !j["request_id"].is_string() ||
        !j.contains("clinician_grade"))
      throw HttpError{400, "bad_request", "body needs string request_id and clinician_grade"};
    const auto& g = j["clinician_grade"];
    if (!g.is_number_integer() || g.get<long long>() < 0 || g.get<long long>() >= GradeLabel::kCount)
      throw HttpError{422, "invalid_grade", "clinician_grade must be an integer in [0, 4]"};
    const auto ref = j["request_id"].get<std::string>();
    const auto prediction = predictions_.get(ref);
    if (!prediction)
      throw HttpError{404, "unknown_request", "no recent prediction has request_id '" + ref + "'"};
    FeedbackRecord r;
    r.timestamp = iso8601_utc_now();
    r.image_sha256 = prediction->image_sha256;
    r.model_id = prediction->model_id;
    r.predicted_grade = prediction->grade;
    r.probabilities = prediction->probabilities;
    r.clinician_grade = GradeLabel(static_cast<int>(g.get<long long>()));
    r.request_id = ref;
    const auto stored = feedback_->append(r);
    emit("feedback", {{"request_id", request_id}, {"record_id", stored.record_id},
                      {"prediction_request_id", ref}});
    send_json(res, 201, {{"record_id", stored.record_id}, {"record", stored}}, request_id);
  }

  void upload_model(const Req& req, Res& res, const std::string& request_id) {
    std::string model_id;
    if (req.has_file("model_id")) model_id = req.get_file_value("model_id").content;
    else if (req.has_param("model_id")) model_id = req.get_param_value("model_id");
    if (model_id.empty()) throw HttpError{422, "invalid_parameter", "model_id is required"};
    if (!req.has_file("checkpoint"))
      throw HttpError{400, "invalid_checkpoint", "multipart field 'checkpoint' is required"};
    const auto& content = req.get_file_value("checkpoint").content;
    try {
      const auto entry = registry_.add(
          model_id, {reinterpret_cast<const std::uint8_t*>(content.data()), content.size()});
      emit("model_added", {{"model_id", model_id}, {"request_id", request_id}});
      send_json(res, 201, {{"model", describe(*entry, false)}}, request_id);
    } catch (const RegistryError& e) {
      switch (e.kind()) {
        case RegistryError::Kind::duplicate: throw HttpError{409, "duplicate_model", e.what()};
        case RegistryError::Kind::invalid_id: throw HttpError{422, "invalid_parameter", e.what()};
        case RegistryError::Kind::invalid_checkpoint:
          throw HttpError{400, "invalid_checkpoint", e.what()};
        default: throw;
      }
    }
  }

  ServiceConfig config_;
  LogSink log_;
  ModelRegistry registry_;
  std::unique_ptr<FeedbackStore> feedback_;
  PredictionLog predictions_;
  std::chrono::steady_clock::time_point started_;
  httplib::Server server_;
  int port_ = -1;
};

}  // namespace drgrade
