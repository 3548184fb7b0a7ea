#pragma once

// Camera model and image utilities.
//
// Normalized image coordinates (x, y) = ((u - cx) / fx, (v - cy) / fy).
// Distortion (radial-tangential):
//   r2 = x^2 + y^2,  s = 1 + k1 r2 + k2 r2^2 + k3 r2^3
//   x' = s x + 2 p1 x y + p2 (r2 + 2 x^2)
//   y' = s y + p1 (r2 + 2 y^2) + 2 p2 x y
// Camera frame: z along the optical axis, x right, y down.

#include "op2/common.hpp"
#include "op2/orientation.hpp"
#include "op2/robot_model.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace op2::vision {

using Vec2 = Eigen::Vector2d;

struct CameraIntrinsics {
  double fx = 300.0, fy = 300.0;
  double cx = 320.0, cy = 240.0;
  int width = 640, height = 480;
  double fov_diag = 150.0;  // deg, informational

  void validate() const;
  Vec2 to_normalized(const Vec2& px) const { return {(px.x() - cx) / fx, (px.y() - cy) / fy}; }
  Vec2 to_pixel(const Vec2& n) const { return {fx * n.x() + cx, fy * n.y() + cy}; }
};

struct DistortionCoeffs {
  double k1 = 0.0, k2 = 0.0, k3 = 0.0;
  double p1 = 0.0, p2 = 0.0;
};

class VisionError : public Error {
 public:
  using Error::Error;
};

Vec2 distort_point(const Vec2& p, const DistortionCoeffs& c);
/// d(distorted) / d(p).
Eigen::Matrix2d distort_jacobian(const Vec2& p, const DistortionCoeffs& c);

class NonConvergence : public VisionError {
 public:
  NonConvergence(const std::string& what, double residual)
      : VisionError(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

struct UndistortResult {
  Vec2 point;
  int iterations = 0;  // residual evaluations
  double residual = 0.0;
};

/// Newton-Raphson inverse of distort_point starting from the distorted
/// point; the step is halved while the residual grows. Stops when both the
/// residual and the next Newton step are within tol.
UndistortResult undistort_point(const Vec2& distorted, const DistortionCoeffs& c,
                                double tol = 1e-10, int max_iter = 20);

/// Lookup tables, w x h, row-major. NaN marks invalid entries.
struct UndistortMaps {
  int width = 0, height = 0;
  /// Image remap: undistorted output pixel -> source pixel in the distorted image.
  std::vector<float> source_x, source_y;
  /// Point lookup: distorted pixel -> undistorted pixel (Newton-Raphson).
  std::vector<double> undist_x, undist_y;
  std::size_t invalid = 0;  // point-lookup entries without a solution

  /// Bilinear lookup of the undistorted position of a distorted pixel.
  /// Returns false outside the table or next to invalid entries.
  bool lookup(const Vec2& distorted_px, Vec2& undistorted_px) const;
};

UndistortMaps build_undistort_maps(const CameraIntrinsics& intr, const DistortionCoeffs& c);

// ---------------------------------------------------------------------------
// Images

/// Interleaved float channels in [0, 1].
struct Image {
  int width = 0, height = 0, channels = 1;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int ch, float fill = 0.0f);
  float& at(int x, int y, int c = 0) { return data[idx(x, y, c)]; }
  float at(int x, int y, int c = 0) const { return data[idx(x, y, c)]; }

 private:
  std::size_t idx(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
};

/// Bilinear remap through source_x/source_y; pixels outside become 0.
Image remap(const Image& src, const UndistortMaps& maps);

/// Area-averaging downscale by `ratio` (>= 1); output size must be integral.
Image downscale(const Image& src, double ratio = 2.5);

struct Hsv {
  double h = 0.0;  // deg [0, 360)
  double s = 0.0;
  double v = 0.0;
};
Hsv rgb_to_hsv(double r, double g, double b);
Image rgb_to_hsv(const Image& rgb);  // h scaled to [0, 1)

/// Binary PNM (P5 / P6, maxval <= 65535) and PFM.
Image read_pnm(const std::string& path);
void write_pnm(const std::string& path, const Image& img);
void write_pfm(const std::string& path, const std::vector<float>& data, int w, int h);

// ---------------------------------------------------------------------------
// Ground projection

class NoGroundIntersection : public VisionError {
 public:
  using VisionError::VisionError;
};

struct TrunkState {
  FusedAngles orientation;  // only pitch and roll are used
  double height = 0.0;      // trunk origin above the ground, m
};

/// Pixel -> ground point (x, y) in the egocentric frame (yaw-free, origin
/// below the trunk). `camera` is the camera pose in the trunk frame.
Vec2 project_to_ground(const Vec2& pixel, const CameraIntrinsics& intr,
                       const DistortionCoeffs& c, const Pose& camera,
                       const TrunkState& trunk);

/// Inverse: egocentric ground point -> pixel. Throws VisionError for points
/// behind the camera.
Vec2 ground_to_pixel(const Vec2& ground, const CameraIntrinsics& intr,
                     const DistortionCoeffs& c, const Pose& camera,
                     const TrunkState& trunk);

// ---------------------------------------------------------------------------
// Nelder-Mead

struct NelderMeadOptions {
  double alpha = 1.0;   // reflection
  double gamma = 2.0;   // expansion
  double rho = 0.5;     // contraction
  double sigma = 0.5;   // shrink
  double initial_step = 0.1;
  Vec steps;            // per-coordinate initial step, overrides initial_step
  double x_tol = 1e-10; // max vertex distance from the best vertex
  double f_tol = 1e-14; // f spread across the simplex
  int max_evals = 20000;
};

enum class Termination { simplex_size, f_spread, max_evals };
const char* to_string(Termination t);

struct NelderMeadResult {
  Vec x;
  double f = 0.0;
  int evals = 0;
  int iterations = 0;
  Termination reason = Termination::max_evals;
  bool converged() const { return reason != Termination::max_evals; }
};

NelderMeadResult nelder_mead(const std::function<double(const Vec&)>& f, const Vec& x0,
                             const NelderMeadOptions& options = {});

// ---------------------------------------------------------------------------
// Extrinsic calibration

struct Camera {
  CameraIntrinsics intrinsics;
  DistortionCoeffs distortion;
  Pose mount = Pose::Identity();   // camera in the head link frame
  std::string link = "head";

  static Camera from_json(const nlohmann::json& doc);
  static Camera load(const std::string& path);
  nlohmann::json to_json() const;
};

/// Camera pose in the trunk frame for joint state q.
Pose camera_pose(const RobotModel& model, const Camera& cam, const Vec& q);

struct LandmarkObservation {
  Vec2 pixel;
  Vec2 ground;  // egocentric m
  Vec q;        // joint state at capture
  TrunkState trunk;
};

std::vector<LandmarkObservation> observations_from_json(const RobotModel& model,
                                                        const nlohmann::json& doc);
nlohmann::json observations_to_json(const RobotModel& model,
                                    const std::vector<LandmarkObservation>& obs);

/// Ground landmarks rendered through the forward model of `truth` from
/// random head poses and slight trunk tilts; optional Gaussian pixel noise.
std::vector<LandmarkObservation> synthetic_landmarks(const RobotModel& model,
                                                     const Camera& truth, int count,
                                                     std::uint64_t seed,
                                                     double pixel_noise = 0.0);

/// Mount perturbation: translate by t, then rotate by the rotation vector r,
/// both in the mount frame. x = (tx, ty, tz, rx, ry, rz).
Pose perturb_mount(const Pose& mount, const Vec& x);

struct CalibrationResult {
  Pose mount;
  Vec params;  // perturbation of the initial mount
  double rms_before = 0.0;
  double rms_after = 0.0;
  NelderMeadResult optimizer;
};

/// RMS ground error (m) of all observations for a mount.
double ground_rms(const RobotModel& model, const Camera& cam,
                  const std::vector<LandmarkObservation>& obs);

/// Needs >= 6 observations (VisionError otherwise).
CalibrationResult calibrate_extrinsics(const std::vector<LandmarkObservation>& obs,
                                       const RobotModel& model, const Camera& initial,
                                       NelderMeadOptions options = {});

}  // namespace op2::vision
