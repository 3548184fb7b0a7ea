#include "cli.hpp"

#include "service.hpp"

#include "op2/canonical_json.hpp"
#include "op2/motion.hpp"
#include "op2/servo_bus.hpp"
#include "op2/sim.hpp"
#include "op2/vision.hpp"

#include <CLI11.hpp>
#include <boost/asio/io_context.hpp>
#include <boost/asio/signal_set.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#ifndef OP2_DATA_DIR
#define OP2_DATA_DIR "data"
#endif

namespace op2 {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string default_model() { return std::string(OP2_DATA_DIR) + "/nimbro_op2.model"; }
std::string default_motions() { return std::string(OP2_DATA_DIR) + "/motions"; }
std::string default_camera() { return std::string(OP2_DATA_DIR) + "/camera.json"; }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path);
}

json read_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(path + ": " + e.what());
  }
}

const char* instruction_name(std::uint8_t ins) {
  switch (ins) {
    case bus::instr::ping: return "PING";
    case bus::instr::read: return "READ";
    case bus::instr::write: return "WRITE";
    case bus::instr::reg_write: return "REG_WRITE";
    case bus::instr::action: return "ACTION";
    case bus::instr::reset: return "RESET";
    case bus::instr::sync_write: return "SYNC_WRITE";
    case bus::instr::bulk_read: return "BULK_READ";
    default: return nullptr;
  }
}

struct Context {
  std::ostream& out;
  std::ostream& err;
};

int sim_run(Context& c, const std::string& scenario_path, const std::string& out_csv,
            std::optional<std::uint64_t> seed, const std::string& model_path,
            const std::string& motions, const std::string& config_path) {
  const RobotModel model = load_model_file(model_path);
  Scenario sc = load_scenario_file(scenario_path);
  if (seed) sc.seed = *seed;
  RunOptions opt;
  opt.motions_dir = motions;
  if (!config_path.empty()) opt.base_config.apply(read_json(config_path));
  opt.keep_log = !out_csv.empty();
  const RunResult r = run_scenario(model, sc, opt);
  if (!out_csv.empty()) write_file(out_csv, log_to_csv(model, r.log));
  c.out << canonical_dump(r.metrics.to_json(), FloatFormat::roundtrip);
  return 0;
}

int motion_play(Context& c, const std::string& file, bool csv, double rate,
                const std::string& model_path) {
  const RobotModel model = load_model_file(model_path);
  PlayerOptions opt;
  opt.rate = rate;
  MotionPlayer player(model, load_motion_file(file), opt);
  if (csv) {
    c.out << "t";
    for (const auto& j : model.joints()) c.out << ',' << j.name;
    c.out << '\n';
  }
  int ticks = 0;
  Vec lo = Vec::Constant(model.dof(), 1e9), hi = -lo;
  char buf[32];
  while (!player.finished()) {
    const MotionCommand cmd = player.step(Eigen::Vector2d::Zero());
    ++ticks;
    lo = lo.cwiseMin(cmd.q);
    hi = hi.cwiseMax(cmd.q);
    if (csv) {
      std::snprintf(buf, sizeof buf, "%.6f", cmd.t);
      c.out << buf;
      for (Eigen::Index j = 0; j < cmd.q.size(); ++j) {
        std::snprintf(buf, sizeof buf, ",%.9f", cmd.q[j]);
        c.out << buf;
      }
      c.out << '\n';
    }
  }
  if (!csv) {
    c.out << player.motion().name << ": " << ticks << " ticks, " << player.motion().duration()
          << " s at " << rate << " Hz\n";
    for (int j = 0; j < model.dof(); ++j) {
      if (hi[j] - lo[j] <= 0.0) continue;
      std::snprintf(buf, sizeof buf, "[%+.3f, %+.3f]", lo[j], hi[j]);
      c.out << "  " << model.joints()[j].name << ' ' << buf << '\n';
    }
  }
  return 0;
}

int motion_fmt(Context& c, const std::string& file, bool in_place) {
  const std::string text = serialize_motion(load_motion_file(file));
  if (in_place) {
    write_file(file, text);
  } else {
    c.out << text;
  }
  return 0;
}

int vision_maps(Context& c, const std::string& camera_path, const std::string& out_dir) {
  const vision::Camera cam = vision::Camera::load(camera_path);
  const auto t0 = std::chrono::steady_clock::now();
  const vision::UndistortMaps maps = vision::build_undistort_maps(cam.intrinsics, cam.distortion);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  c.out << "maps " << maps.width << "x" << maps.height << ", " << maps.invalid
        << " invalid point-lookup entries, built in " << static_cast<int>(ms) << " ms\n";
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    const auto as_float = [](const std::vector<double>& v) {
      return std::vector<float>(v.begin(), v.end());
    };
    vision::write_pfm(out_dir + "/source_x.pfm", maps.source_x, maps.width, maps.height);
    vision::write_pfm(out_dir + "/source_y.pfm", maps.source_y, maps.width, maps.height);
    vision::write_pfm(out_dir + "/undist_x.pfm", as_float(maps.undist_x), maps.width, maps.height);
    vision::write_pfm(out_dir + "/undist_y.pfm", as_float(maps.undist_y), maps.width, maps.height);
    c.out << "wrote " << out_dir << "/{source,undist}_{x,y}.pfm\n";
  }
  return 0;
}

int vision_synth(Context& c, const std::string& camera_path, int count, std::uint64_t seed,
                 double noise, const std::string& out, const std::string& model_path) {
  const RobotModel model = load_model_file(model_path);
  const vision::Camera cam = vision::Camera::load(camera_path);
  const auto obs = vision::synthetic_landmarks(model, cam, count, seed, noise);
  const std::string text = canonical_dump(vision::observations_to_json(model, obs), FloatFormat::roundtrip);
  if (out.empty()) {
    c.out << text;
  } else {
    write_file(out, text);
  }
  return 0;
}

int vision_calib(Context& c, const std::string& camera_path, const std::string& obs_path,
                 const std::string& out, const std::string& model_path) {
  const RobotModel model = load_model_file(model_path);
  vision::Camera cam = vision::Camera::load(camera_path);
  const auto obs = vision::observations_from_json(model, read_json(obs_path));
  const vision::CalibrationResult r = vision::calibrate_extrinsics(obs, model, cam);
  cam.mount = r.mount;
  c.out << "observations " << obs.size() << ", rms " << r.rms_before << " m -> " << r.rms_after
        << " m, " << r.optimizer.evals << " evaluations (" << to_string(r.optimizer.reason) << ")\n";
  const std::string text = canonical_dump(cam.to_json(), FloatFormat::roundtrip);
  if (out.empty()) {
    c.out << text;
  } else {
    write_file(out, text);
  }
  return r.optimizer.converged() ? 0 : 2;
}

int model_check(Context& c, const std::string& file) {
  const RobotModel m = load_model_file(file);
  c.out << "OK, " << m.dof() << " DOF / " << m.actuator_count() << " actuators\n";
  return 0;
}

int bus_decode(Context& c, const std::string& file) {
  std::istringstream in(read_file(file));
  std::string line;
  int lineno = 0;
  std::size_t packets = 0, bad = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    bus::Bytes bytes;
    try {
      bytes = bus::from_hex(line);
    } catch (const bus::PacketError& e) {
      throw Error("line " + std::to_string(lineno) + ": " + e.what());
    }
    const bus::StreamResult r = bus::decode_stream(bytes);
    for (const auto& p : r.packets) {
      ++packets;
      c.out << lineno << ": id=" << static_cast<int>(p.id) << ' ';
      if (const char* name = instruction_name(p.instruction)) {
        c.out << name;
      } else {
        c.out << "STATUS err=0x" << bus::to_hex(std::span(&p.instruction, 1));
      }
      c.out << " params=[" << bus::to_hex(p.params) << "]\n";
    }
    for (std::size_t i = 0; i < r.checksum_errors; ++i) c.out << lineno << ": checksum error\n";
    if (r.trailing) c.out << lineno << ": " << r.trailing << " trailing bytes\n";
    bad += r.checksum_errors;
  }
  c.out << packets << " packets, " << bad << " checksum errors\n";
  return 0;
}

int serve(Context& c, service::ServiceConfig cfg) {
  cfg.validate();
  auto api = std::make_shared<service::Api>(load_model_file(cfg.model_path), cfg);
  service::Server server(api);
  server.start(cfg.address, cfg.port);
  c.out << "listening on http://" << cfg.address << ':' << server.port() << std::endl;
  boost::asio::io_context ioc;
  boost::asio::signal_set signals(ioc, SIGINT, SIGTERM);
  signals.async_wait([](const boost::system::error_code&, int) {});
  ioc.run();
  server.stop();
  return 0;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"NimbRo-OP2 control stack tools", "op2"};
  app.require_subcommand(1);
  Context ctx{out, err};
  std::function<int()> action;

  std::string model_path = default_model();
  std::string motions = default_motions();

  auto* sim = app.add_subcommand("sim", "Scenario simulation")->require_subcommand(1);
  auto* sim_run_cmd = sim->add_subcommand("run", "Run a scenario, print metrics JSON");
  std::string scenario, out_csv, config_path;
  std::optional<std::uint64_t> seed;
  sim_run_cmd->add_option("scenario", scenario, "Scenario JSON file")->required();
  sim_run_cmd->add_option("--out", out_csv, "Write the per-tick log CSV");
  sim_run_cmd->add_option("--seed", seed, "Override the scenario seed");
  sim_run_cmd->add_option("--config", config_path, "Base config JSON");
  sim_run_cmd->add_option("--model", model_path, "Robot model file");
  sim_run_cmd->add_option("--motions", motions, "Motions directory");
  sim_run_cmd->callback([&] {
    action = [&] { return sim_run(ctx, scenario, out_csv, seed, model_path, motions, config_path); };
  });

  auto* motion = app.add_subcommand("motion", "Keyframe motions")->require_subcommand(1);
  auto* play = motion->add_subcommand("play", "Play a motion open loop");
  std::string motion_file;
  bool csv = false, in_place = false;
  double rate = 100.0;
  play->add_option("file", motion_file, "Motion file")->required();
  play->add_flag("--csv", csv, "Print one CSV row of joint targets per tick");
  play->add_option("--rate", rate, "Control rate, Hz")->check(CLI::PositiveNumber);
  play->add_option("--model", model_path, "Robot model file");
  play->callback([&] { action = [&] { return motion_play(ctx, motion_file, csv, rate, model_path); }; });
  auto* fmt = motion->add_subcommand("fmt", "Print the canonical form of a motion");
  fmt->add_option("file", motion_file, "Motion file")->required();
  fmt->add_flag("-i,--in-place", in_place, "Rewrite the file");
  fmt->callback([&] { action = [&] { return motion_fmt(ctx, motion_file, in_place); }; });

  auto* vis = app.add_subcommand("vision", "Camera tools")->require_subcommand(1);
  std::string camera = default_camera(), vis_out, obs_path;
  int count = 20;
  std::uint64_t vis_seed = 1;
  double noise = 0.0;
  auto* maps = vis->add_subcommand("maps", "Build the undistortion tables");
  maps->add_option("--camera", camera, "Camera JSON");
  maps->add_option("--out", vis_out, "Directory for PFM tables");
  maps->callback([&] { action = [&] { return vision_maps(ctx, camera, vis_out); }; });
  auto* synth = vis->add_subcommand("synth", "Render synthetic landmark observations");
  synth->add_option("--camera", camera, "Camera JSON");
  synth->add_option("--count", count, "Observations")->check(CLI::PositiveNumber);
  synth->add_option("--seed", vis_seed, "RNG seed");
  synth->add_option("--noise", noise, "Pixel noise sigma")->check(CLI::NonNegativeNumber);
  synth->add_option("--out", vis_out, "Output JSON (default stdout)");
  synth->add_option("--model", model_path, "Robot model file");
  synth->callback([&] {
    action = [&] { return vision_synth(ctx, camera, count, vis_seed, noise, vis_out, model_path); };
  });
  auto* calib = vis->add_subcommand("calib", "Calibrate the camera mount from observations");
  calib->add_option("--camera", camera, "Initial camera JSON");
  calib->add_option("obs", obs_path, "Observation JSON")->required();
  calib->add_option("--out", vis_out, "Calibrated camera JSON (default stdout)");
  calib->add_option("--model", model_path, "Robot model file");
  calib->callback([&] {
    action = [&] { return vision_calib(ctx, camera, obs_path, vis_out, model_path); };
  });

  auto* model = app.add_subcommand("model", "Robot model")->require_subcommand(1);
  auto* check = model->add_subcommand("check", "Parse and validate a model file");
  std::string model_file;
  check->add_option("file", model_file, "Model file")->required();
  check->callback([&] { action = [&] { return model_check(ctx, model_file); }; });

  auto* busc = app.add_subcommand("bus", "Servo bus")->require_subcommand(1);
  auto* decode = busc->add_subcommand("decode", "Decode a hex packet log (one packet per line)");
  std::string hex_file;
  decode->add_option("hexfile", hex_file, "Hex log")->required();
  decode->callback([&] { action = [&] { return bus_decode(ctx, hex_file); }; });

  auto* srv = app.add_subcommand("serve", "HTTP/WebSocket service for the editor");
  service::ServiceConfig cfg;
  srv->add_option("--port", cfg.port, "Listen port")->check(CLI::Range(1, 65535));
  srv->add_option("--address", cfg.address, "Listen address");
  srv->add_option("--motions", motions, "Motions directory");
  srv->add_option("--model", model_path, "Robot model file");
  srv->add_option("--cors", cfg.cors_allowlist, "Allowed origins");
  srv->callback([&] {
    action = [&] {
      cfg.motions_dir = motions;
      cfg.model_path = model_path;
      return serve(ctx, cfg);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (app.exit(e, out, err) == 0) return 0;
    err << '\n' << app.help();
    return 1;
  }
  try {
    return action();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace op2
