#pragma once

// HTTP/WebSocket service backing the trajectory editor. Routing lives in
// Api (transport-free); Server puts it behind Boost.Beast.

#include "op2/robot_model.hpp"
#include "op2/sim.hpp"

#include <json.hpp>

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <shared_mutex>
#include <string>
#include <vector>

namespace op2::service {

struct ServiceConfig {
  std::string address = "127.0.0.1";
  int port = 8080;
  std::string motions_dir;
  std::string model_path;
  std::vector<std::string> cors_allowlist;

  /// Throws Error for a port outside [1, 65535] or empty paths.
  void validate() const;
};

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Field-level diagnostic body: {"error": msg, "field": f}.
Response error_response(int status, const std::string& message, const std::string& field = "");

/// Everything before the first ": " when it looks like a field path.
std::string field_of(const std::string& message);

nlohmann::json model_summary(const RobotModel& model);
nlohmann::json tick_to_json(const TickRecord& r);

class Api {
 public:
  Api(RobotModel model, ServiceConfig config);

  const RobotModel& model() const { return model_; }
  const ServiceConfig& config() const { return config_; }

  Response handle(const std::string& method, const std::string& target, const std::string& body);

  /// Runs a scenario request ({"scenario": {...}}) while holding the
  /// single-run slot. Returns 409 when another run is active.
  Response run_sim(const std::string& body,
                   const std::function<bool(const TickRecord&)>& on_tick = {});

  bool sim_active() const { return sim_active_.load(); }

 private:
  Response get_model() const;
  Response list_motions() const;
  Response get_motion(const std::string& name) const;
  Response put_motion(const std::string& name, const std::string& body);
  Response interpolate(const std::string& body) const;
  Response fk(const std::string& body) const;

  RobotModel model_;
  ServiceConfig config_;
  mutable std::shared_mutex motions_mutex_;
  std::atomic<bool> sim_active_{false};
};

/// Blocking Beast server, one thread per connection.
class Server {
 public:
  Server(std::shared_ptr<Api> api);
  ~Server();

  /// Binds and starts accepting in a background thread. Port 0 picks an
  /// ephemeral port.
  void start(const std::string& address, int port);
  int port() const { return port_; }
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace op2::service
