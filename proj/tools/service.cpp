#include "service.hpp"

#include "op2/canonical_json.hpp"
#include "op2/dynamics.hpp"
#include "op2/motion.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <sys/socket.h>

#include <cmath>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

namespace op2::service {

using json = nlohmann::json;
namespace fs = std::filesystem;

void ServiceConfig::validate() const {
  if (port < 1 || port > 65535) throw Error("port: must be in [1, 65535]");
  if (motions_dir.empty()) throw Error("motions_dir: must not be empty");
  if (model_path.empty()) throw Error("model_path: must not be empty");
}

namespace {

std::string dump(const json& doc) { return canonical_dump(doc, FloatFormat::roundtrip); }

json vec_json(const Eigen::Ref<const Vec>& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json pose_json(const Pose& p) {
  const Vec3 t = p.translation();
  const Quat q(p.rotation());
  return {{"position", {t.x(), t.y(), t.z()}}, {"quaternion", {q.w(), q.x(), q.y(), q.z()}}};
}

json fused_json(const FusedAngles& f) {
  return {{"yaw", f.yaw}, {"pitch", f.pitch}, {"roll", f.roll}, {"hemisphere", f.hemisphere}};
}

bool valid_motion_name(const std::string& name) {
  static const std::regex re("[A-Za-z0-9_-]{1,64}");
  return std::regex_match(name, re);
}

std::optional<json> parse_body(const std::string& body, Response& error) {
  try {
    return json::parse(body);
  } catch (const json::exception& e) {
    error = error_response(400, std::string("invalid JSON: ") + e.what(), "body");
    return std::nullopt;
  }
}

Response ok(const json& doc) { return {200, dump(doc)}; }

Response bad(const std::string& prefix, const Error& e) {
  const std::string f = field_of(e.what());
  return error_response(400, e.what(), f.empty() ? prefix : prefix.empty() ? f : prefix + "." + f);
}

}  // namespace

std::string field_of(const std::string& message) {
  static const std::regex re(R"(^([A-Za-z_][A-Za-z0-9_.\[\]]*): )");
  std::smatch m;
  return std::regex_search(message, m, re) ? m[1].str() : std::string();
}

Response error_response(int status, const std::string& message, const std::string& field) {
  json doc = {{"error", message}};
  if (!field.empty()) doc["field"] = field;
  return {status, dump(doc)};
}

json model_summary(const RobotModel& model) {
  json joints = json::array();
  for (const auto& j : model.joints()) {
    joints.push_back({{"name", j.name}, {"link", j.link}, {"min", j.min}, {"max", j.max},
                      {"chain", std::string(to_string(j.chain))},
                      {"axis", {j.axis.x(), j.axis.y(), j.axis.z()}}});
  }
  json acts = json::array();
  for (const auto& a : model.actuators()) acts.push_back({{"id", a.id}, {"name", a.name}});
  json links = json::array();
  for (const auto& l : model.links()) links.push_back({{"name", l.name}, {"parent", l.parent}});
  return {{"name", model.name()},
          {"dof", model.dof()},
          {"actuator_count", model.actuator_count()},
          {"total_mass", model.total_mass()},
          {"joints", joints},
          {"actuators", acts},
          {"links", links}};
}

json tick_to_json(const TickRecord& r) {
  return {{"type", "tick"},
          {"tick", r.tick},
          {"t", r.t},
          {"state", to_string(r.state)},
          {"torque_on", r.torque_on},
          {"voltage", r.voltage},
          {"q_des", vec_json(r.q_des)},
          {"error", vec_json(r.error)},
          {"estimate", fused_json(r.estimate)},
          {"truth", fused_json(r.truth)},
          {"position", {r.position.x(), r.position.y()}},
          {"heading", r.heading}};
}

// ---------------------------------------------------------------------------
// Api

Api::Api(RobotModel model, ServiceConfig config)
    : model_(std::move(model)), config_(std::move(config)) {}

Response Api::handle(const std::string& method, const std::string& target, const std::string& body) {
  const std::string path = target.substr(0, target.find('?'));
  static const std::string motions = "/api/motions/";
  try {
    if (path == "/api/model") {
      return method == "GET" ? get_model() : error_response(405, "use GET");
    }
    if (path == "/api/motions") {
      return method == "GET" ? list_motions() : error_response(405, "use GET");
    }
    if (path.rfind(motions, 0) == 0) {
      const std::string name = path.substr(motions.size());
      if (!valid_motion_name(name)) {
        return error_response(400, "motion names use [A-Za-z0-9_-], at most 64 characters", "name");
      }
      if (method == "GET") return get_motion(name);
      if (method == "PUT") return put_motion(name, body);
      return error_response(405, "use GET or PUT");
    }
    if (path == "/api/interpolate") {
      return method == "POST" ? interpolate(body) : error_response(405, "use POST");
    }
    if (path == "/api/fk") return method == "POST" ? fk(body) : error_response(405, "use POST");
    if (path == "/api/sim/run") return method == "POST" ? run_sim(body) : error_response(405, "use POST");
    return error_response(404, "no such endpoint: " + path);
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

Response Api::get_model() const { return ok(model_summary(model_)); }

Response Api::list_motions() const {
  std::shared_lock lock(motions_mutex_);
  std::vector<std::string> names;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(config_.motions_dir, ec)) {
    if (entry.path().extension() == ".motion") names.push_back(entry.path().stem().string());
  }
  std::sort(names.begin(), names.end());
  return ok({{"motions", names}});
}

Response Api::get_motion(const std::string& name) const {
  std::shared_lock lock(motions_mutex_);
  const fs::path file = fs::path(config_.motions_dir) / (name + ".motion");
  if (!fs::exists(file)) return error_response(404, "unknown motion " + name, "name");
  return {200, serialize_motion(load_motion_file(file.string()))};
}

Response Api::put_motion(const std::string& name, const std::string& body) {
  Response err;
  const auto doc = parse_body(body, err);
  if (!doc) return err;
  Motion m;
  try {
    m = motion_from_json(*doc);
  } catch (const MotionError& e) {
    return bad("", e);
  }
  if (m.name != name) return error_response(400, "name: must match the URL (" + name + ")", "name");
  const std::string text = serialize_motion(m);
  std::unique_lock lock(motions_mutex_);
  fs::create_directories(config_.motions_dir);
  const fs::path file = fs::path(config_.motions_dir) / (name + ".motion");
  const fs::path tmp = fs::path(config_.motions_dir) / ("." + name + ".motion.tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    if (!out) return error_response(500, "cannot write " + tmp.string());
  }
  fs::rename(tmp, file);
  return {200, text};
}

Response Api::interpolate(const std::string& body) const {
  Response err;
  const auto doc = parse_body(body, err);
  if (!doc) return err;
  if (!doc->is_object() || !doc->contains("motion")) {
    return error_response(400, "motion: required", "motion");
  }
  Motion m;
  const json& mj = doc->at("motion");
  if (mj.is_string()) {
    const std::string name = mj.get<std::string>();
    if (!valid_motion_name(name)) return error_response(400, "motion: invalid name", "motion");
    const Response r = get_motion(name);
    if (r.status != 200) return error_response(404, "unknown motion " + name, "motion");
    m = load_motion(r.body);
  } else {
    try {
      m = motion_from_json(mj);
    } catch (const MotionError& e) {
      return bad("motion", e);
    }
  }
  double rate = 100.0;
  if (doc->contains("rate")) {
    if (!doc->at("rate").is_number()) return error_response(400, "rate: expected a number", "rate");
    rate = doc->at("rate").get<double>();
  }
  if (!(rate > 0.0) || !std::isfinite(rate)) return error_response(400, "rate: must be > 0", "rate");
  const double steps = m.duration() * rate;
  if (steps > 1e6) return error_response(400, "rate: more than 1e6 samples", "rate");
  const auto n = static_cast<std::size_t>(std::llround(steps)) + 1;

  const auto nj = m.joints.size();
  std::vector<double> t(n);
  std::vector<std::vector<double>> pos(nj, std::vector<double>(n)), vel = pos, eff = pos;
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = i + 1 == n ? m.duration() : std::min(static_cast<double>(i) / rate, m.duration());
    const MotionSample s = op2::interpolate(m, t[i]);
    for (std::size_t j = 0; j < nj; ++j) {
      pos[j][i] = s.pos[j];
      vel[j][i] = s.vel[j];
      eff[j][i] = s.eff[j];
    }
  }
  json p = json::object(), v = json::object(), e = json::object();
  for (std::size_t j = 0; j < nj; ++j) {
    p[m.joints[j]] = pos[j];
    v[m.joints[j]] = vel[j];
    e[m.joints[j]] = eff[j];
  }
  return ok({{"name", m.name}, {"rate", rate}, {"duration", m.duration()}, {"joints", m.joints},
             {"t", t}, {"pos", p}, {"vel", v}, {"eff", e}});
}

Response Api::fk(const std::string& body) const {
  Response err;
  const auto doc = parse_body(body, err);
  if (!doc) return err;
  Vec q = Vec::Zero(model_.dof());
  const json* qj = doc->is_object() && doc->contains("q") ? &doc->at("q") : nullptr;
  if (!qj) return error_response(400, "q: required", "q");
  if (qj->is_array()) {
    if (static_cast<int>(qj->size()) != model_.dof()) {
      return error_response(400, "q: expected " + std::to_string(model_.dof()) + " values", "q");
    }
    for (int i = 0; i < model_.dof(); ++i) {
      if (!(*qj)[i].is_number()) return error_response(400, "q: expected numbers", "q[" + std::to_string(i) + "]");
      q[i] = (*qj)[i].get<double>();
    }
  } else if (qj->is_object()) {
    for (const auto& [name, value] : qj->items()) {
      const int j = model_.joint_index(name);
      if (j < 0) return error_response(400, "q." + name + ": unknown joint", "q." + name);
      if (!value.is_number()) return error_response(400, "q." + name + ": expected a number", "q." + name);
      q[j] = value.get<double>();
    }
  } else {
    return error_response(400, "q: expected an array or an object", "q");
  }
  const PoseTable poses = forward_kinematics(model_, q);
  json links = json::array();
  for (std::size_t i = 0; i < poses.size(); ++i) {
    json l = pose_json(poses[i]);
    l["name"] = model_.links()[i].name;
    links.push_back(l);
  }
  const Vec3 com = center_of_mass(model_, poses);
  return ok({{"links", links},
             {"soles", {{"left", pose_json(sole_pose(model_, poses, Leg::left))},
                        {"right", pose_json(sole_pose(model_, poses, Leg::right))}}},
             {"com", {com.x(), com.y(), com.z()}}});
}

Response Api::run_sim(const std::string& body, const std::function<bool(const TickRecord&)>& on_tick) {
  Response err;
  const auto doc = parse_body(body, err);
  if (!doc) return err;
  if (!doc->is_object() || !doc->contains("scenario")) {
    return error_response(400, "scenario: required", "scenario");
  }
  Scenario sc;
  try {
    sc = scenario_from_json(doc->at("scenario"));
    if (doc->contains("seed")) sc.seed = doc->at("seed").get<std::uint64_t>();
    SimConfig probe;
    probe.apply(sc.config);
  } catch (const Error& e) {
    return bad("scenario", e);
  } catch (const json::exception& e) {
    return error_response(400, std::string("seed: ") + e.what(), "seed");
  }
  if (!sc.motion.empty()) {
    if (!valid_motion_name(sc.motion) ||
        !fs::exists(fs::path(config_.motions_dir) / (sc.motion + ".motion"))) {
      return error_response(404, "unknown motion " + sc.motion, "scenario.motion");
    }
  }
  bool expected = false;
  if (!sim_active_.compare_exchange_strong(expected, true)) {
    return error_response(409, "a simulation is already running");
  }
  struct Release {
    std::atomic<bool>& flag;
    ~Release() { flag = false; }
  } release{sim_active_};
  RunOptions opt;
  opt.motions_dir = config_.motions_dir;
  opt.keep_log = false;
  opt.on_tick = on_tick;
  try {
    const RunResult r = run_scenario(model_, sc, opt);
    return ok({{"name", sc.name}, {"seed", sc.seed}, {"metrics", r.metrics.to_json()}});
  } catch (const Error& e) {
    return bad("scenario", e);
  }
}

// ---------------------------------------------------------------------------
// Server

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

struct Server::Impl {
  std::shared_ptr<Api> api;
  net::io_context ioc;
  std::optional<tcp::acceptor> acceptor;
  std::thread accept_thread;
  std::atomic<bool> stopping{false};
  std::mutex mu;
  std::condition_variable idle;
  std::set<int> open_fds;
  int active = 0;

  void accept_loop();
  void session(tcp::socket sock);
  void stream(tcp::socket& sock, http::request<http::string_body>& req);
  void add_cors(const http::request<http::string_body>& req, http::response<http::string_body>& res) const;
};

Server::Server(std::shared_ptr<Api> api) : impl_(std::make_unique<Impl>()) { impl_->api = std::move(api); }

Server::~Server() { stop(); }

void Server::start(const std::string& address, int port) {
  if (port < 0 || port > 65535) throw Error("port: must be in [1, 65535]");
  auto& im = *impl_;
  im.acceptor.emplace(im.ioc);
  const tcp::endpoint ep(net::ip::make_address(address), static_cast<unsigned short>(port));
  im.acceptor->open(ep.protocol());
  im.acceptor->set_option(net::socket_base::reuse_address(true));
  im.acceptor->bind(ep);
  im.acceptor->listen();
  port_ = im.acceptor->local_endpoint().port();
  im.accept_thread = std::thread([&im] { im.accept_loop(); });
}

void Server::stop() {
  auto& im = *impl_;
  if (!im.accept_thread.joinable()) return;
  im.stopping = true;
  ::shutdown(im.acceptor->native_handle(), SHUT_RDWR);
  im.accept_thread.join();
  std::unique_lock lock(im.mu);
  for (int fd : im.open_fds) ::shutdown(fd, SHUT_RDWR);
  im.idle.wait(lock, [&] { return im.active == 0; });
  im.acceptor->close();
}

void Server::Impl::accept_loop() {
  while (!stopping) {
    tcp::socket sock(ioc);
    beast::error_code ec;
    acceptor->accept(sock, ec);
    if (ec) {
      if (stopping) break;
      continue;
    }
    std::lock_guard lock(mu);
    if (stopping) break;
    open_fds.insert(sock.native_handle());
    ++active;
    std::thread([this, s = std::move(sock)]() mutable {
      const int fd = s.native_handle();
      try {
        session(std::move(s));
      } catch (const std::exception&) {
      }
      std::lock_guard l(mu);
      open_fds.erase(fd);
      if (--active == 0) idle.notify_all();
    }).detach();
  }
}

void Server::Impl::add_cors(const http::request<http::string_body>& req,
                            http::response<http::string_body>& res) const {
  const auto origin = req[http::field::origin];
  if (origin.empty()) return;
  const auto& allow = api->config().cors_allowlist;
  const std::string o(origin);
  if (std::find(allow.begin(), allow.end(), o) != allow.end() ||
      std::find(allow.begin(), allow.end(), "*") != allow.end()) {
    res.set(http::field::access_control_allow_origin, o);
    res.set(http::field::vary, "Origin");
  }
}

void Server::Impl::session(tcp::socket sock) {
  beast::flat_buffer buf;
  for (;;) {
    http::request_parser<http::string_body> parser;
    parser.body_limit(16 * 1024 * 1024);
    beast::error_code ec;
    http::read(sock, buf, parser, ec);
    if (ec) break;
    auto req = parser.release();
    if (websocket::is_upgrade(req)) {
      if (std::string(req.target()).substr(0, req.target().find('?')) == "/api/sim/stream") {
        stream(sock, req);
        return;
      }
    }
    http::response<http::string_body> res;
    res.version(req.version());
    res.keep_alive(req.keep_alive());
    if (req.method() == http::verb::options) {
      res.result(http::status::no_content);
      res.set(http::field::access_control_allow_methods, "GET, PUT, POST, OPTIONS");
      res.set(http::field::access_control_allow_headers, "Content-Type");
    } else {
      const Response r = api->handle(std::string(req.method_string()), std::string(req.target()), req.body());
      res.result(static_cast<http::status>(r.status));
      res.set(http::field::content_type, r.content_type);
      res.body() = r.body;
    }
    res.set(http::field::server, "op2");
    add_cors(req, res);
    res.prepare_payload();
    http::write(sock, res, ec);
    if (ec || !req.keep_alive()) break;
  }
  beast::error_code ec;
  sock.shutdown(tcp::socket::shutdown_send, ec);
}

// One run per connection: the client sends {"scenario": ..., "stride": n},
// the server answers with tick records and a final done/error record.
void Server::Impl::stream(tcp::socket& sock, http::request<http::string_body>& req) {
  websocket::stream<tcp::socket&> ws(sock);
  ws.accept(req);
  ws.text(true);
  beast::flat_buffer buf;
  ws.read(buf);
  const std::string body = beast::buffers_to_string(buf.data());
  int stride = 1;
  try {
    const json doc = json::parse(body);
    if (doc.is_object() && doc.contains("stride")) stride = std::max(1, doc.at("stride").get<int>());
  } catch (const json::exception&) {
  }
  bool open = true;
  const Response r = api->run_sim(body, [&](const TickRecord& rec) {
    if (rec.tick % stride != 0) return true;
    beast::error_code ec;
    ws.write(net::buffer(dump(tick_to_json(rec))), ec);
    open = !ec;
    return open;
  });
  if (!open) return;
  json last = json::parse(r.body);
  last["type"] = r.status == 200 ? "done" : "error";
  last["status"] = r.status;
  beast::error_code ec;
  ws.write(net::buffer(dump(last)), ec);
  ws.close(websocket::close_code::normal, ec);
}

}  // namespace op2::service
