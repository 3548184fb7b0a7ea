#include "cli.hpp"
#include "service.hpp"
#include "test_util.hpp"

#include "op2/motion.hpp"

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <doctest.h>
#include <httplib.h>

#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>

using namespace op2;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("op2_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

service::ServiceConfig config_for(const fs::path& motions) {
  service::ServiceConfig c;
  c.motions_dir = motions.string();
  c.model_path = test::data_path("nimbro_op2.model");
  c.cors_allowlist = {"http://localhost:5173"};
  return c;
}

json two_frame_motion(const std::string& name) {
  return json::parse(R"({
    "name": ")" + name + R"(",
    "joints": ["left_knee_pitch", "right_elbow_pitch"],
    "keyframes": [
      {"t": 0.0, "pos": {"left_knee_pitch": 0.1, "right_elbow_pitch": -0.2}},
      {"t": 1.25, "pos": {"left_knee_pitch": 0.9, "right_elbow_pitch": -1.1},
       "vel": {"left_knee_pitch": 0.3}, "eff": {"left_knee_pitch": 0.5}}
    ]
  })");
}

struct Fixture {
  TempDir dir;
  std::shared_ptr<service::Api> api;
  service::Server server;
  httplib::Client client;

  Fixture()
      : api(std::make_shared<service::Api>(test::shipped_model(), config_for(dir.path))),
        server(api),
        client(start()) {
    client.set_read_timeout(30, 0);
  }

  std::string start() {
    server.start("127.0.0.1", 0);
    return "http://127.0.0.1:" + std::to_string(server.port());
  }
};

json body_of(const httplib::Result& r) { return json::parse(r->body); }

const char* kHoldScenario = R"({"scenario": {"name": "hold", "duration": 0.5,
  "hold": {"pose": {"left_knee_pitch": 0.4}}}})";

}  // namespace

TEST_CASE("field diagnostics") {
  CHECK(service::field_of("duration: must be > 0") == "duration");
  CHECK(service::field_of("events[0].event: unknown event 'x'") == "events[0].event");
  CHECK(service::field_of("cannot open file: x") == "");
}

TEST_CASE("service config") {
  service::ServiceConfig c = config_for("/tmp");
  CHECK_NOTHROW(c.validate());
  c.port = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c.port = 65536;
  CHECK_THROWS_AS(c.validate(), Error);
  c.port = 65535;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("http api") {
  Fixture f;
  auto& cl = f.client;

  SUBCASE("model summary") {
    const auto r = cl.Get("/api/model");
    REQUIRE(r);
    CHECK(r->status == 200);
    const json doc = body_of(r);
    CHECK(doc["dof"] == 20);
    CHECK(doc["actuator_count"] == 34);
    CHECK(doc["joints"].size() == 20);
    CHECK(doc["joints"][0]["name"] == "neck_yaw");
  }

  SUBCASE("PUT then GET is byte-identical canonical JSON") {
    const std::string sent = two_frame_motion("wave").dump();
    const auto put = cl.Put("/api/motions/wave", sent, "application/json");
    REQUIRE(put);
    CHECK(put->status == 200);
    const auto get = cl.Get("/api/motions/wave");
    REQUIRE(get);
    CHECK(get->status == 200);
    CHECK(get->body == put->body);
    CHECK(get->body == serialize_motion(motion_from_json(two_frame_motion("wave"))));
    // A second save of the loaded text changes nothing.
    const auto again = cl.Put("/api/motions/wave", get->body, "application/json");
    CHECK(again->body == get->body);
    CHECK(body_of(cl.Get("/api/motions"))["motions"] == json::array({"wave"}));
  }

  SUBCASE("motion errors") {
    CHECK(cl.Get("/api/motions/nothing")->status == 404);
    CHECK(cl.Get("/api/motions/..%2Fetc")->status == 400);
    json m = two_frame_motion("bad");
    m["keyframes"][1]["t"] = 0.0;
    const auto r = cl.Put("/api/motions/bad", m.dump(), "application/json");
    CHECK(r->status == 400);
    CHECK(body_of(r)["field"] == "keyframes[1].t");
    CHECK(cl.Put("/api/motions/other", two_frame_motion("bad").dump(), "application/json")->status == 400);
    const auto junk = cl.Put("/api/motions/bad", "{not json", "application/json");
    CHECK(junk->status == 400);
    CHECK(body_of(junk)["field"] == "body");
    CHECK_FALSE(fs::exists(f.dir.path / "bad.motion"));
  }

  SUBCASE("interpolate matches the player sampling") {
    const json m = two_frame_motion("wave");
    const auto r = cl.Post("/api/interpolate", json{{"motion", m}, {"rate", 100}}.dump(), "application/json");
    REQUIRE(r);
    REQUIRE(r->status == 200);
    const json doc = body_of(r);
    const Motion motion = motion_from_json(m);
    const std::size_t n = 126;  // 1.25 s * 100 Hz + 1
    CHECK(doc["t"].size() == n);
    for (const auto& j : motion.joints) {
      CHECK(doc["pos"][j].size() == n);
      CHECK(doc["vel"][j].size() == n);
      CHECK(doc["eff"][j].size() == n);
    }
    CHECK(doc["pos"]["left_knee_pitch"][0].get<double>() == 0.1);
    CHECK(doc["pos"]["left_knee_pitch"][n - 1].get<double>() == 0.9);
    CHECK(doc["pos"]["right_elbow_pitch"][n - 1].get<double>() == -1.1);
    CHECK(doc["vel"]["left_knee_pitch"][n - 1].get<double>() == 0.3);
    for (std::size_t i = 0; i < n; i += 7) {
      const MotionSample s = interpolate(motion, doc["t"][i].get<double>());
      CHECK(doc["pos"]["left_knee_pitch"][i].get<double>() == s.pos[0]);
      CHECK(doc["vel"]["right_elbow_pitch"][i].get<double>() == s.vel[1]);
      CHECK(doc["eff"]["left_knee_pitch"][i].get<double>() == s.eff[0]);
    }

    cl.Put("/api/motions/wave", m.dump(), "application/json");
    const auto by_name = cl.Post("/api/interpolate", R"({"motion": "wave"})", "application/json");
    CHECK(by_name->status == 200);
    CHECK(body_of(by_name)["t"].size() == n);
    CHECK(cl.Post("/api/interpolate", R"({"motion": "nope"})", "application/json")->status == 404);
    const auto bad_rate = cl.Post("/api/interpolate", json{{"motion", m}, {"rate", -1}}.dump(), "application/json");
    CHECK(bad_rate->status == 400);
    CHECK(body_of(bad_rate)["field"] == "rate");
  }

  SUBCASE("fk at the zero pose") {
    const auto r = cl.Post("/api/fk", json{{"q", std::vector<double>(20, 0.0)}}.dump(), "application/json");
    REQUIRE(r);
    REQUIRE(r->status == 200);
    const json doc = body_of(r);
    const LegGeometry& g = test::shipped_model().leg_geometry();
    // Fully extended leg hangs straight below the hip.
    const double drop = g.thigh + g.shank + g.foot_offset;
    for (const auto& [side, sign] : {std::pair{"left", 1.0}, std::pair{"right", -1.0}}) {
      const auto& p = doc["soles"][side]["position"];
      CHECK(p[0].get<double>() == doctest::Approx(g.hip_offset_x).epsilon(1e-12));
      CHECK(p[1].get<double>() == doctest::Approx(sign * g.hip_offset_y).epsilon(1e-12));
      CHECK(p[2].get<double>() == doctest::Approx(-drop).epsilon(1e-12));
    }
    CHECK(doc["links"].size() == test::shipped_model().links().size());

    const auto named = cl.Post("/api/fk", R"({"q": {"left_knee_pitch": 0.5}})", "application/json");
    CHECK(named->status == 200);
    CHECK(body_of(named)["soles"]["left"]["position"][2].get<double>() > -drop);
    const auto unknown = cl.Post("/api/fk", R"({"q": {"tail": 1}})", "application/json");
    CHECK(unknown->status == 400);
    CHECK(body_of(unknown)["field"] == "q.tail");
    CHECK(cl.Post("/api/fk", R"({"q": [1, 2]})", "application/json")->status == 400);
  }

  SUBCASE("sim run") {
    const auto r = cl.Post("/api/sim/run", kHoldScenario, "application/json");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(body_of(r)["metrics"]["ticks"] == 50);
    const auto bad = cl.Post("/api/sim/run", R"({"scenario": {"duration": -1, "motion": "kick"}})",
                             "application/json");
    CHECK(bad->status == 400);
    CHECK(body_of(bad)["field"] == "scenario.duration");
    CHECK(cl.Post("/api/sim/run", R"({"scenario": {"motion": "absent"}})", "application/json")->status == 404);
  }

  SUBCASE("routing and cors") {
    CHECK(cl.Get("/api/nothing")->status == 404);
    CHECK(cl.Delete("/api/model")->status == 405);
    const auto allowed = cl.Get("/api/model", {{"Origin", "http://localhost:5173"}});
    CHECK(allowed->get_header_value("Access-Control-Allow-Origin") == "http://localhost:5173");
    const auto denied = cl.Get("/api/model", {{"Origin", "http://evil.example"}});
    CHECK_FALSE(denied->has_header("Access-Control-Allow-Origin"));
    CHECK(cl.Options("/api/motions/x")->status == 204);
  }
}

TEST_CASE("concurrent sim runs are rejected") {
  Fixture f;
  std::promise<void> started, release;
  auto gate = release.get_future().share();
  bool first_tick = true;
  auto run = std::async(std::launch::async, [&] {
    return f.api->run_sim(kHoldScenario, [&](const TickRecord&) {
      if (first_tick) {
        first_tick = false;
        started.set_value();
        gate.wait();
      }
      return true;
    });
  });
  started.get_future().wait();
  const auto busy = f.client.Post("/api/sim/run", kHoldScenario, "application/json");
  CHECK(busy->status == 409);
  CHECK(f.client.Get("/api/model")->status == 200);  // reads still served
  release.set_value();
  CHECK(run.get().status == 200);
  CHECK(f.client.Post("/api/sim/run", kHoldScenario, "application/json")->status == 200);
}

TEST_CASE("websocket stream") {
  Fixture f;
  namespace beast = boost::beast;
  namespace ws = beast::websocket;
  boost::asio::io_context ioc;
  boost::asio::ip::tcp::resolver resolver(ioc);
  ws::stream<boost::asio::ip::tcp::socket> stream(ioc);
  boost::asio::connect(stream.next_layer(), resolver.resolve("127.0.0.1", std::to_string(f.server.port())));
  stream.handshake("127.0.0.1", "/api/sim/stream");
  json req = json::parse(kHoldScenario);
  req["stride"] = 5;
  stream.write(boost::asio::buffer(req.dump()));

  std::vector<json> msgs;
  for (;;) {
    beast::flat_buffer buf;
    beast::error_code ec;
    stream.read(buf, ec);
    if (ec) break;
    msgs.push_back(json::parse(beast::buffers_to_string(buf.data())));
    if (msgs.back()["type"] != "tick") break;
  }
  REQUIRE(msgs.size() == 11);
  for (int i = 0; i < 10; ++i) {
    CHECK(msgs[i]["type"] == "tick");
    CHECK(msgs[i]["tick"] == 5 * i);
    CHECK(msgs[i]["q_des"].size() == 20);
  }
  CHECK(msgs.back()["type"] == "done");
  CHECK(msgs.back()["metrics"]["ticks"] == 50);
}

TEST_CASE("cli") {
  const auto run = [](std::vector<std::string> args, std::string* out_text = nullptr) {
    args.insert(args.begin(), "op2");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
    if (out_text) *out_text = out.str() + err.str();
    return code;
  };
  std::string text;

  CHECK(run({"model", "check", test::data_path("nimbro_op2.model")}, &text) == 0);
  CHECK(text == "OK, 20 DOF / 34 actuators\n");
  CHECK(run({}, &text) == 1);
  CHECK(text.find("Usage") != std::string::npos);
  CHECK(run({"frobnicate"}) == 1);
  CHECK(run({"sim", "run", "missing.json"}, &text) == 2);
  CHECK(text.find("missing.json") != std::string::npos);
  CHECK(run({"model", "check", test::data_path("camera.json")}) == 2);

  TempDir dir;
  const std::string log_a = (dir.path / "a.csv").string(), log_b = (dir.path / "b.csv").string();
  const std::string sc = test::data_path("scenarios/kick.json");
  CHECK(run({"sim", "run", sc, "--out", log_a, "--seed", "5"}) == 0);
  CHECK(run({"sim", "run", sc, "--out", log_b, "--seed", "5"}) == 0);
  const auto slurp = [](const std::string& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(log_a).size() > 1000);
  CHECK(slurp(log_a) == slurp(log_b));

  const std::string hex = (dir.path / "log.hex").string();
  std::ofstream(hex) << "FF FF 01 02 01 FB\n# comment\nFF FF FE 04 03 18 01 E1\nFF FF 01 02 01 00\n";
  CHECK(run({"bus", "decode", hex}, &text) == 0);
  CHECK(text.find("1: id=1 PING params=[]") != std::string::npos);
  CHECK(text.find("3: id=254 WRITE params=[18 01]") != std::string::npos);
  CHECK(text.find("2 packets, 1 checksum errors") != std::string::npos);

  CHECK(run({"motion", "fmt", test::data_path("motions/kick.motion")}, &text) == 0);
  CHECK(text == slurp(test::data_path("motions/kick.motion")));
  CHECK(run({"motion", "play", test::data_path("motions/kick.motion"), "--csv"}, &text) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 321);
}
