#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "op2/canonical_json.hpp"
#include "op2/dynamics.hpp"
#include "op2/ff_control.hpp"
#include "op2/motion.hpp"
#include "op2/orientation.hpp"
#include "op2/pk_map.hpp"
#include "op2/robot_model.hpp"
#include "op2/servo_bus.hpp"
#include "op2/sim.hpp"

namespace py = pybind11;
using namespace op2;
using namespace op2::bus;

namespace {

// Quaternions cross the boundary as [w, x, y, z].
Eigen::Vector4d quat_out(const Quat& q) { return {q.w(), q.x(), q.y(), q.z()}; }
Quat quat_in(const Eigen::Vector4d& v) { return Quat(v[0], v[1], v[2], v[3]).normalized(); }

py::dict pose_out(const Pose& p) {
  py::dict d;
  d["position"] = Vec3(p.translation());
  d["quaternion"] = quat_out(Quat(p.rotation()));
  return d;
}

py::bytes to_pybytes(const Bytes& b) {
  return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
}

Bytes from_pybytes(const py::bytes& b) {
  const std::string s = b;
  return Bytes(s.begin(), s.end());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "NimbRo-OP2 control stack";
  m.attr("DATA_DIR") = OP2_DATA_DIR;

  py::register_exception<Error>(m, "Error", PyExc_ValueError);

  py::class_<RobotModel>(m, "RobotModel")
      .def_property_readonly("name", &RobotModel::name)
      .def_property_readonly("dof", &RobotModel::dof)
      .def_property_readonly("actuator_count", &RobotModel::actuator_count)
      .def_property_readonly("total_mass", &RobotModel::total_mass)
      .def_property_readonly("joint_names",
                             [](const RobotModel& r) {
                               std::vector<std::string> out;
                               for (const auto& j : r.joints()) out.push_back(j.name);
                               return out;
                             })
      .def_property_readonly("actuator_names",
                             [](const RobotModel& r) {
                               std::vector<std::string> out;
                               for (const auto& a : r.actuators()) out.push_back(a.name);
                               return out;
                             })
      .def("joint_index", [](const RobotModel& r, const std::string& n) { return r.joint_index(n); })
      .def("actuator_index", [](const RobotModel& r, const std::string& n) { return r.actuator_index(n); })
      .def("serialize", &serialize_model);

  m.def("load_model", [](const std::string& text) { return load_model(text); });
  m.def("load_model_file", &load_model_file);

  m.def("forward_kinematics", [](const RobotModel& r, const Vec& q) {
    const PoseTable poses = forward_kinematics(r, q);
    py::dict out;
    for (std::size_t i = 0; i < poses.size(); ++i) out[py::str(r.links()[i].name)] = pose_out(poses[i]);
    return out;
  });
  m.def("sole_pose", [](const RobotModel& r, const Vec& q, const std::string& leg) {
    if (leg != "left" && leg != "right") throw Error("leg: expected left or right");
    return pose_out(sole_pose(r, forward_kinematics(r, q), leg == "left" ? Leg::left : Leg::right));
  });
  m.def("center_of_mass", [](const RobotModel& r, const Vec& q) {
    return Vec3(center_of_mass(r, forward_kinematics(r, q)));
  });

  m.def(
      "inverse_dynamics",
      [](const RobotModel& r, const Vec& q, std::optional<Vec> qd, std::optional<Vec> qdd, const Vec3& g) {
        DynamicsState s = DynamicsState::at_rest(q, g);
        if (qd) s.qd = *qd;
        if (qdd) s.qdd = *qdd;
        return inverse_dynamics(r, s);
      },
      py::arg("model"), py::arg("q"), py::arg("qd") = py::none(), py::arg("qdd") = py::none(),
      py::arg("gravity") = kStandardGravity);
  m.def("mass_matrix", &mass_matrix);

  m.def("serial_to_actuators",
        [](const RobotModel& r, const Vec& q) { return serial_to_actuators(r.coupling(), q); });
  m.def("actuators_to_serial", [](const RobotModel& r, const Vec& a) {
    const SerialEstimate e = actuators_to_serial(r.coupling(), a);
    return py::make_tuple(e.q, e.residual);
  });
  m.def("actuator_torques_to_serial",
        [](const RobotModel& r, const Vec& t) { return actuator_torques_to_serial(r.coupling(), t); });
  m.def("serial_torques_to_actuators",
        [](const RobotModel& r, const Vec& t) { return serial_torques_to_actuators(r.coupling(), t); });

  m.def("quat_to_fused", [](const Eigen::Vector4d& q) {
    const FusedAngles f = quat_to_fused(quat_in(q));
    return py::make_tuple(f.yaw, f.pitch, f.roll, f.hemisphere);
  });
  m.def(
      "fused_to_quat",
      [](double yaw, double pitch, double roll, int hemisphere) {
        return quat_out(fused_to_quat(FusedAngles{yaw, pitch, roll, hemisphere}));
      },
      py::arg("yaw"), py::arg("pitch"), py::arg("roll"), py::arg("hemisphere") = 1);

  py::class_<FilterState>(m, "OrientationFilter")
      .def(py::init([](double kp, double ki) {
             FilterState s;
             s.gains = {kp, ki};
             return s;
           }),
           py::arg("kp") = FilterGains{}.kp, py::arg("ki") = FilterGains{}.ki)
      .def(
          "update",
          [](FilterState& s, const Vec3& gyro, const Vec3& accel, double dt) {
            s = filter_update(s, ImuSample{gyro, accel, dt});
            return quat_out(s.q);
          },
          py::arg("gyro"), py::arg("accel"), py::arg("dt") = 0.01)
      .def_property_readonly("quaternion", [](const FilterState& s) { return quat_out(s.q); })
      .def_property_readonly("gyro_bias", [](const FilterState& s) { return s.gyro_bias; });

  m.def("encode_packet", [](int id, int instruction, const py::bytes& params) {
    if (id < 0 || id > 255 || instruction < 0 || instruction > 255) throw Error("packet: byte out of range");
    return to_pybytes(encode_packet(Packet{static_cast<std::uint8_t>(id),
                                           static_cast<std::uint8_t>(instruction), from_pybytes(params)}));
  });
  m.def("decode_stream", [](const py::bytes& data) {
    const Bytes b = from_pybytes(data);
    const StreamResult r = decode_stream(b);
    py::list packets;
    for (const auto& p : r.packets) packets.append(py::make_tuple(p.id, p.instruction, to_pybytes(p.params)));
    return py::make_tuple(packets, r.checksum_errors, r.trailing);
  });
  m.def("ticks_to_rad", &ticks_to_rad, py::arg("ticks"), py::arg("resolution") = 4096);
  m.def("rad_to_ticks", &rad_to_ticks, py::arg("rad"), py::arg("resolution") = 4096);

  m.def("effort_to_pgain", [](double effort) { return effort_to_pgain(effort, FFParams{}); });

  m.def("format_motion", [](const std::string& text) { return serialize_motion(load_motion(text)); });
  m.def(
      "sample_motion",
      [](const std::string& text, double t) {
        const MotionSample s = interpolate(load_motion(text), t);
        return py::make_tuple(s.pos, s.vel, s.eff);
      },
      py::arg("text"), py::arg("t"));

  // Scenario documents and metrics travel as JSON text.
  m.def(
      "run_scenario",
      [](const RobotModel& r, const std::string& scenario_json, std::optional<std::uint64_t> seed,
         const std::string& motions_dir) {
        Scenario s = scenario_from_json(nlohmann::json::parse(scenario_json));
        if (seed) s.seed = *seed;
        RunOptions opts;
        opts.motions_dir = motions_dir;
        opts.keep_log = false;
        RunResult res;
        {
          py::gil_scoped_release nogil;
          res = run_scenario(r, s, opts);
        }
        return canonical_dump(res.metrics.to_json());
      },
      py::arg("model"), py::arg("scenario"), py::arg("seed") = py::none(),
      py::arg("motions_dir") = std::string(OP2_DATA_DIR) + "/motions");
}
