#include "op2/vision.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace op2::vision {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Mat3 tilt_rotation(const FusedAngles& f) {
  FusedAngles tilt = f;
  tilt.yaw = 0.0;
  return fused_to_quat(tilt).toRotationMatrix();
}

}  // namespace

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0 && fy > 0.0)) throw VisionError("intrinsics: fx and fy must be positive");
  if (width <= 0 || height <= 0) throw VisionError("intrinsics: resolution must be positive");
  if (!(cx > 0.0 && cx < width && cy > 0.0 && cy < height)) {
    throw VisionError("intrinsics: principal point must lie inside the image");
  }
}

Vec2 distort_point(const Vec2& p, const DistortionCoeffs& c) {
  const double x = p.x(), y = p.y();
  const double r2 = x * x + y * y;
  const double s = 1.0 + r2 * (c.k1 + r2 * (c.k2 + r2 * c.k3));
  return {s * x + 2.0 * c.p1 * x * y + c.p2 * (r2 + 2.0 * x * x),
          s * y + c.p1 * (r2 + 2.0 * y * y) + 2.0 * c.p2 * x * y};
}

Eigen::Matrix2d distort_jacobian(const Vec2& p, const DistortionCoeffs& c) {
  const double x = p.x(), y = p.y();
  const double r2 = x * x + y * y;
  const double s = 1.0 + r2 * (c.k1 + r2 * (c.k2 + r2 * c.k3));
  const double ds = c.k1 + r2 * (2.0 * c.k2 + 3.0 * c.k3 * r2);  // ds/d(r2)
  Eigen::Matrix2d j;
  j(0, 0) = s + 2.0 * x * x * ds + 2.0 * c.p1 * y + 6.0 * c.p2 * x;
  j(0, 1) = 2.0 * x * y * ds + 2.0 * c.p1 * x + 2.0 * c.p2 * y;
  j(1, 0) = 2.0 * x * y * ds + 2.0 * c.p1 * x + 2.0 * c.p2 * y;
  j(1, 1) = s + 2.0 * y * y * ds + 6.0 * c.p1 * y + 2.0 * c.p2 * x;
  return j;
}

UndistortResult undistort_point(const Vec2& distorted, const DistortionCoeffs& c, double tol,
                                int max_iter) {
  if (!(tol > 0.0)) throw VisionError("undistort_point: tol must be positive");
  Vec2 p = distorted;
  double res = kNaN;
  for (int it = 1; it <= max_iter; ++it) {
    const Vec2 r = distort_point(p, c) - distorted;
    res = r.norm();
    if (!std::isfinite(res)) break;
    const Eigen::Matrix2d j = distort_jacobian(p, c);
    if (std::abs(j.determinant()) < 1e-300) break;
    const Vec2 step = j.partialPivLu().solve(r);
    // Converged when both the residual and the remaining step are below tol.
    if (res <= tol && step.norm() <= tol) return {p, it, res};
    double lambda = 1.0;
    Vec2 next = p - step;
    while ((distort_point(next, c) - distorted).norm() > res && lambda > 1.0 / 64) {
      lambda *= 0.5;
      next = p - lambda * step;
    }
    p = next;
  }
  std::ostringstream msg;
  msg << "undistort_point did not converge in " << max_iter << " iterations (residual " << res
      << ")";
  throw NonConvergence(msg.str(), res);
}

bool UndistortMaps::lookup(const Vec2& px, Vec2& out) const {
  if (!(px.x() >= 0.0 && px.y() >= 0.0)) return false;
  const int x0 = static_cast<int>(px.x());
  const int y0 = static_cast<int>(px.y());
  if (x0 >= width - 1 || y0 >= height - 1) return false;
  const double fx = px.x() - x0, fy = px.y() - y0;
  const auto i = [&](int x, int y) { return static_cast<std::size_t>(y) * width + x; };
  const std::size_t a = i(x0, y0), b = i(x0 + 1, y0), c = i(x0, y0 + 1), d = i(x0 + 1, y0 + 1);
  const double ux = (1 - fy) * ((1 - fx) * undist_x[a] + fx * undist_x[b]) +
                    fy * ((1 - fx) * undist_x[c] + fx * undist_x[d]);
  const double uy = (1 - fy) * ((1 - fx) * undist_y[a] + fx * undist_y[b]) +
                    fy * ((1 - fx) * undist_y[c] + fx * undist_y[d]);
  if (!std::isfinite(ux) || !std::isfinite(uy)) return false;
  out = {ux, uy};
  return true;
}

UndistortMaps build_undistort_maps(const CameraIntrinsics& intr, const DistortionCoeffs& c) {
  intr.validate();
  UndistortMaps m;
  m.width = intr.width;
  m.height = intr.height;
  const std::size_t n = static_cast<std::size_t>(intr.width) * intr.height;
  m.source_x.resize(n);
  m.source_y.resize(n);
  m.undist_x.resize(n);
  m.undist_y.resize(n);
  for (int v = 0; v < intr.height; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * intr.width + u;
      const Vec2 src = intr.to_pixel(distort_point(intr.to_normalized({u, v}), c));
      m.source_x[i] = static_cast<float>(src.x());
      m.source_y[i] = static_cast<float>(src.y());
      try {
        const Vec2 und = intr.to_pixel(undistort_point(intr.to_normalized({u, v}), c).point);
        m.undist_x[i] = und.x();
        m.undist_y[i] = und.y();
      } catch (const NonConvergence&) {
        m.undist_x[i] = m.undist_y[i] = kNaN;
        ++m.invalid;
      }
    }
  }
  return m;
}

// ---------------------------------------------------------------------------

Image::Image(int w, int h, int ch, float fill)
    : width(w), height(h), channels(ch),
      data(static_cast<std::size_t>(w) * h * ch, fill) {}

Image remap(const Image& src, const UndistortMaps& maps) {
  Image out(maps.width, maps.height, src.channels);
  const float xmax = static_cast<float>(src.width - 1);
  const float ymax = static_cast<float>(src.height - 1);
  for (int v = 0; v < maps.height; ++v) {
    for (int u = 0; u < maps.width; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * maps.width + u;
      const float sx = maps.source_x[i], sy = maps.source_y[i];
      if (!(sx >= 0.0f && sy >= 0.0f && sx <= xmax && sy <= ymax)) continue;
      const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
      const int x1 = std::min(x0 + 1, src.width - 1), y1 = std::min(y0 + 1, src.height - 1);
      const float fx = sx - x0, fy = sy - y0;
      for (int ch = 0; ch < src.channels; ++ch) {
        out.at(u, v, ch) = (1 - fy) * ((1 - fx) * src.at(x0, y0, ch) + fx * src.at(x1, y0, ch)) +
                           fy * ((1 - fx) * src.at(x0, y1, ch) + fx * src.at(x1, y1, ch));
      }
    }
  }
  return out;
}

namespace {

// Source index/weight pairs covering each output cell [i r, (i + 1) r).
std::vector<std::vector<std::pair<int, double>>> area_weights(int n_out, double ratio, int n_in) {
  std::vector<std::vector<std::pair<int, double>>> w(n_out);
  for (int i = 0; i < n_out; ++i) {
    const double a = i * ratio, b = (i + 1) * ratio;
    for (int s = static_cast<int>(std::floor(a)); s < b && s < n_in; ++s) {
      const double overlap = std::min<double>(b, s + 1) - std::max<double>(a, s);
      if (overlap > 1e-12) w[i].push_back({s, overlap / ratio});
    }
  }
  return w;
}

}  // namespace

Image downscale(const Image& src, double ratio) {
  if (!(ratio >= 1.0)) throw VisionError("downscale: ratio must be >= 1");
  const double ow = src.width / ratio, oh = src.height / ratio;
  const int w = static_cast<int>(std::lround(ow)), h = static_cast<int>(std::lround(oh));
  if (std::abs(ow - w) > 1e-9 || std::abs(oh - h) > 1e-9 || w == 0 || h == 0) {
    std::ostringstream msg;
    msg << "downscale: " << src.width << "x" << src.height << " is not divisible by ratio "
        << ratio;
    throw VisionError(msg.str());
  }
  const auto wx = area_weights(w, ratio, src.width);
  const auto wy = area_weights(h, ratio, src.height);
  // Horizontal pass in double, then vertical.
  std::vector<double> tmp(static_cast<std::size_t>(w) * src.height * src.channels, 0.0);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < w; ++x) {
      for (const auto& [s, k] : wx[x]) {
        for (int ch = 0; ch < src.channels; ++ch) {
          tmp[(static_cast<std::size_t>(y) * w + x) * src.channels + ch] += k * src.at(s, y, ch);
        }
      }
    }
  }
  Image out(w, h, src.channels);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < src.channels; ++ch) {
        double acc = 0.0;
        for (const auto& [s, k] : wy[y]) {
          acc += k * tmp[(static_cast<std::size_t>(s) * w + x) * src.channels + ch];
        }
        out.at(x, y, ch) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Hsv rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  Hsv out;
  out.v = mx;
  out.s = mx > 0.0 ? delta / mx : 0.0;
  if (delta > 0.0) {
    if (mx == r) {
      out.h = 60.0 * std::fmod((g - b) / delta, 6.0);
    } else if (mx == g) {
      out.h = 60.0 * ((b - r) / delta + 2.0);
    } else {
      out.h = 60.0 * ((r - g) / delta + 4.0);
    }
    if (out.h < 0.0) out.h += 360.0;
  }
  return out;
}

Image rgb_to_hsv(const Image& rgb) {
  if (rgb.channels != 3) throw VisionError("rgb_to_hsv: expected 3 channels");
  Image out(rgb.width, rgb.height, 3);
  for (int y = 0; y < rgb.height; ++y) {
    for (int x = 0; x < rgb.width; ++x) {
      const Hsv h = rgb_to_hsv(rgb.at(x, y, 0), rgb.at(x, y, 1), rgb.at(x, y, 2));
      out.at(x, y, 0) = static_cast<float>(h.h / 360.0);
      out.at(x, y, 1) = static_cast<float>(h.s);
      out.at(x, y, 2) = static_cast<float>(h.v);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string pnm_token(std::istream& in) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
    } else {
      tok += ch;
    }
  }
  return tok;
}

}  // namespace

Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VisionError("cannot open image " + path);
  const std::string magic = pnm_token(in);
  if (magic != "P5" && magic != "P6") throw VisionError(path + ": only binary P5/P6 supported");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(pnm_token(in));
    h = std::stoi(pnm_token(in));
    maxval = std::stoi(pnm_token(in));
  } catch (const std::exception&) {
    throw VisionError(path + ": malformed PNM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    throw VisionError(path + ": malformed PNM header");
  }
  Image img(w, h, magic == "P6" ? 3 : 1);
  const int bytes = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(img.data.size() * bytes);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw VisionError(path + ": truncated pixel data");
  }
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const unsigned v = bytes == 2 ? (raw[2 * i] << 8) | raw[2 * i + 1] : raw[i];
    img.data[i] = static_cast<float>(v) / static_cast<float>(maxval);
  }
  return img;
}

void write_pnm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw VisionError("write_pnm: 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw VisionError("cannot write image " + path);
  out << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.data.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i] = static_cast<unsigned char>(std::lround(std::clamp(img.data[i], 0.0f, 1.0f) * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

void write_pfm(const std::string& path, const std::vector<float>& data, int w, int h) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw VisionError("cannot write " + path);
  out << "Pf\n" << w << " " << h << "\n-1.0\n";
  // PFM rows run bottom to top, little endian.
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) {
      const float v = data[static_cast<std::size_t>(y) * w + x];
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      const char b[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                         static_cast<char>((bits >> 16) & 0xFF),
                         static_cast<char>((bits >> 24) & 0xFF)};
      out.write(b, 4);
    }
  }
}

// ---------------------------------------------------------------------------

Vec2 project_to_ground(const Vec2& pixel, const CameraIntrinsics& intr,
                       const DistortionCoeffs& c, const Pose& camera,
                       const TrunkState& trunk) {
  const Vec2 n = undistort_point(intr.to_normalized(pixel), c).point;
  const Mat3 tilt = tilt_rotation(trunk.orientation);
  const Vec3 origin = Vec3(0, 0, trunk.height) + tilt * camera.translation();
  const Vec3 dir = tilt * camera.linear() * Vec3(n.x(), n.y(), 1.0);
  if (origin.z() <= 0.0) throw NoGroundIntersection("camera is not above the ground");
  if (dir.z() >= -1e-12) {
    throw NoGroundIntersection("pixel ray does not meet the ground (at or above the horizon)");
  }
  const double lambda = -origin.z() / dir.z();
  return (origin + lambda * dir).head<2>();
}

Vec2 ground_to_pixel(const Vec2& ground, const CameraIntrinsics& intr,
                     const DistortionCoeffs& c, const Pose& camera,
                     const TrunkState& trunk) {
  const Mat3 tilt = tilt_rotation(trunk.orientation);
  const Vec3 origin = Vec3(0, 0, trunk.height) + tilt * camera.translation();
  const Vec3 pc = (tilt * camera.linear()).transpose() * (Vec3(ground.x(), ground.y(), 0) - origin);
  if (pc.z() <= 1e-9) throw VisionError("ground point is behind the camera");
  return intr.to_pixel(distort_point({pc.x() / pc.z(), pc.y() / pc.z()}, c));
}

// ---------------------------------------------------------------------------

const char* to_string(Termination t) {
  switch (t) {
    case Termination::simplex_size: return "simplex_size";
    case Termination::f_spread: return "f_spread";
    default: return "max_evals";
  }
}

NelderMeadResult nelder_mead(const std::function<double(const Vec&)>& f, const Vec& x0,
                             const NelderMeadOptions& o) {
  const auto n = x0.size();
  if (n == 0) throw VisionError("nelder_mead: empty start point");
  if (o.steps.size() != 0) require_size(o.steps.size(), n, "nelder_mead steps");
  NelderMeadResult res;
  const auto eval = [&](const Vec& x) {
    ++res.evals;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  std::vector<Vec> xs(n + 1, x0);
  std::vector<double> fs(n + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    xs[i + 1][i] += o.steps.size() ? o.steps[i] : o.initial_step;
  }
  for (std::size_t i = 0; i <= static_cast<std::size_t>(n); ++i) fs[i] = eval(xs[i]);
  std::vector<std::size_t> order(n + 1);

  while (true) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return fs[a] < fs[b]; });
    std::vector<Vec> sx;
    std::vector<double> sf;
    for (auto i : order) {
      sx.push_back(xs[i]);
      sf.push_back(fs[i]);
    }
    xs = std::move(sx);
    fs = std::move(sf);

    double size = 0.0;
    for (std::size_t i = 1; i < xs.size(); ++i) {
      size = std::max(size, (xs[i] - xs[0]).cwiseAbs().maxCoeff());
    }
    if (fs.back() - fs.front() <= o.f_tol) {
      // Equal values can also straddle a minimum; probe the centroid first.
      Vec mid = Vec::Zero(n);
      for (const Vec& x : xs) mid += x;
      mid /= static_cast<double>(n + 1);
      const double fm = eval(mid);
      if (!(fm < fs[0] - o.f_tol)) {
        res.reason = Termination::f_spread;
        break;
      }
      xs[n] = mid;
      fs[n] = fm;
      continue;
    }
    if (size <= o.x_tol) {
      res.reason = Termination::simplex_size;
      break;
    }
    if (res.evals >= o.max_evals) {
      res.reason = Termination::max_evals;
      break;
    }
    ++res.iterations;

    Vec centroid = Vec::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) centroid += xs[i];
    centroid /= static_cast<double>(n);
    const Vec& worst = xs[n];
    const Vec xr = centroid + o.alpha * (centroid - worst);
    const double fr = eval(xr);
    if (fr < fs[0]) {
      const Vec xe = centroid + o.gamma * (xr - centroid);
      const double fe = eval(xe);
      if (fe < fr) {
        xs[n] = xe;
        fs[n] = fe;
      } else {
        xs[n] = xr;
        fs[n] = fr;
      }
      continue;
    }
    if (fr < fs[n - 1]) {
      xs[n] = xr;
      fs[n] = fr;
      continue;
    }
    const bool outside = fr < fs[n];
    const Vec xc = outside ? Vec(centroid + o.rho * (xr - centroid))
                           : Vec(centroid + o.rho * (worst - centroid));
    const double fc = eval(xc);
    if (outside ? fc <= fr : fc < fs[n]) {
      xs[n] = xc;
      fs[n] = fc;
      continue;
    }
    for (Eigen::Index i = 1; i <= n; ++i) {
      xs[i] = xs[0] + o.sigma * (xs[i] - xs[0]);
      fs[i] = eval(xs[i]);
    }
  }
  res.x = xs[0];
  res.f = fs[0];
  return res;
}

// ---------------------------------------------------------------------------

namespace {

Pose pose_from_json(const nlohmann::json& j) {
  Pose p = Pose::Identity();
  const auto xyz = j.at("xyz").get<std::vector<double>>();
  const auto q = j.at("quat").get<std::vector<double>>();
  if (xyz.size() != 3 || q.size() != 4) throw VisionError("mount: xyz[3] and quat[4] required");
  p.translation() = Vec3(xyz[0], xyz[1], xyz[2]);
  Quat quat(q[0], q[1], q[2], q[3]);
  if (std::abs(quat.norm() - 1.0) > 1e-6) throw VisionError("mount.quat must be a unit quaternion");
  p.linear() = quat.normalized().toRotationMatrix();
  return p;
}

}  // namespace

Camera Camera::from_json(const nlohmann::json& doc) {
  Camera cam;
  try {
    const auto& in = doc.at("intrinsics");
    cam.intrinsics.fx = in.at("fx");
    cam.intrinsics.fy = in.at("fy");
    cam.intrinsics.cx = in.at("cx");
    cam.intrinsics.cy = in.at("cy");
    cam.intrinsics.width = in.at("width");
    cam.intrinsics.height = in.at("height");
    cam.intrinsics.fov_diag = in.value("fov_diag", 150.0);
    const auto& d = doc.at("distortion");
    cam.distortion = {d.value("k1", 0.0), d.value("k2", 0.0), d.value("k3", 0.0),
                      d.value("p1", 0.0), d.value("p2", 0.0)};
    cam.mount = pose_from_json(doc.at("mount"));
    cam.link = doc.value("link", std::string("head"));
  } catch (const nlohmann::json::exception& e) {
    throw VisionError(std::string("camera: ") + e.what());
  }
  cam.intrinsics.validate();
  return cam;
}

Camera Camera::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw VisionError("cannot open camera file " + path);
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw VisionError(path + ": " + e.what());
  }
}

nlohmann::json Camera::to_json() const {
  const Quat q(mount.linear());
  const Vec3 t = mount.translation();
  return {{"intrinsics", {{"fx", intrinsics.fx}, {"fy", intrinsics.fy}, {"cx", intrinsics.cx},
                          {"cy", intrinsics.cy}, {"width", intrinsics.width},
                          {"height", intrinsics.height}, {"fov_diag", intrinsics.fov_diag}}},
          {"distortion", {{"k1", distortion.k1}, {"k2", distortion.k2}, {"k3", distortion.k3},
                          {"p1", distortion.p1}, {"p2", distortion.p2}}},
          {"mount", {{"xyz", {t.x(), t.y(), t.z()}}, {"quat", {q.w(), q.x(), q.y(), q.z()}}}},
          {"link", link}};
}

Pose camera_pose(const RobotModel& model, const Camera& cam, const Vec& q) {
  const int link = model.link_index(cam.link);
  if (link < 0) throw VisionError("camera link " + cam.link + " not in the model");
  return forward_kinematics(model, q)[link] * cam.mount;
}

std::vector<LandmarkObservation> observations_from_json(const RobotModel& model,
                                                        const nlohmann::json& doc) {
  if (!doc.is_array()) throw VisionError("observations: expected an array");
  std::vector<LandmarkObservation> out;
  for (std::size_t k = 0; k < doc.size(); ++k) {
    const auto& o = doc[k];
    const std::string at = "observations[" + std::to_string(k) + "]";
    try {
      LandmarkObservation obs;
      const auto px = o.at("pixel").get<std::vector<double>>();
      const auto g = o.at("ground").get<std::vector<double>>();
      if (px.size() != 2 || g.size() != 2) throw VisionError(at + ": pixel and ground need 2 values");
      obs.pixel = {px[0], px[1]};
      obs.ground = {g[0], g[1]};
      obs.q = Vec::Zero(model.dof());
      if (o.contains("q")) {
        for (auto it = o["q"].begin(); it != o["q"].end(); ++it) {
          const int j = model.joint_index(it.key());
          if (j < 0) throw VisionError(at + ".q." + it.key() + ": unknown joint");
          obs.q[j] = it.value().get<double>();
        }
      }
      const auto& t = o.at("trunk");
      obs.trunk.orientation.pitch = t.value("pitch", 0.0);
      obs.trunk.orientation.roll = t.value("roll", 0.0);
      obs.trunk.height = t.at("height").get<double>();
      out.push_back(obs);
    } catch (const nlohmann::json::exception& e) {
      throw VisionError(at + ": " + e.what());
    }
  }
  return out;
}

nlohmann::json observations_to_json(const RobotModel& model,
                                    const std::vector<LandmarkObservation>& obs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& o : obs) {
    nlohmann::json q = nlohmann::json::object();
    for (int j = 0; j < model.dof(); ++j) {
      if (o.q[j] != 0.0) q[model.joints()[j].name] = o.q[j];
    }
    arr.push_back({{"pixel", {o.pixel.x(), o.pixel.y()}},
                   {"ground", {o.ground.x(), o.ground.y()}},
                   {"q", q},
                   {"trunk", {{"pitch", o.trunk.orientation.pitch},
                              {"roll", o.trunk.orientation.roll},
                              {"height", o.trunk.height}}}});
  }
  return arr;
}

std::vector<LandmarkObservation> synthetic_landmarks(const RobotModel& model,
                                                     const Camera& truth, int count,
                                                     std::uint64_t seed, double pixel_noise) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> yaw(-0.8, 0.8), pitch(0.2, 0.9), tilt(-0.05, 0.05),
      height(0.55, 0.62), range(0.4, 3.0), spread(-0.6, 0.6);
  std::normal_distribution<double> noise(0.0, pixel_noise > 0.0 ? pixel_noise : 1.0);
  const int neck = model.joint_index("neck_yaw");
  const int head = model.joint_index("head_pitch");
  if (neck < 0 || head < 0) throw VisionError("synthetic_landmarks: model has no neck joints");
  const auto& in = truth.intrinsics;
  std::vector<LandmarkObservation> out;
  for (int attempt = 0; static_cast<int>(out.size()) < count; ++attempt) {
    if (attempt > 1000 * count) throw VisionError("synthetic_landmarks: camera never sees the ground");
    LandmarkObservation o;
    o.q = Vec::Zero(model.dof());
    o.q[neck] = yaw(rng);
    o.q[head] = pitch(rng);
    o.trunk.orientation.pitch = tilt(rng);
    o.trunk.orientation.roll = tilt(rng);
    o.trunk.height = height(rng);
    const double r = range(rng), az = o.q[neck] + spread(rng);
    o.ground = {r * std::cos(az), r * std::sin(az)};
    try {
      o.pixel = ground_to_pixel(o.ground, in, truth.distortion,
                                camera_pose(model, truth, o.q), o.trunk);
    } catch (const VisionError&) {
      continue;
    }
    if (pixel_noise > 0.0) o.pixel += Vec2(noise(rng), noise(rng));
    if (o.pixel.x() < 5 || o.pixel.y() < 5 || o.pixel.x() > in.width - 6 ||
        o.pixel.y() > in.height - 6) {
      continue;
    }
    out.push_back(o);
  }
  return out;
}

Pose perturb_mount(const Pose& mount, const Vec& x) {
  require_size(x.size(), 6, "mount perturbation");
  Pose d = Pose::Identity();
  d.translation() = x.head<3>();
  const Vec3 r = x.tail<3>();
  if (r.norm() > 0.0) d.linear() = Eigen::AngleAxisd(r.norm(), r.normalized()).toRotationMatrix();
  return mount * d;
}

namespace {

double mean_sq_error(const RobotModel& model, const Camera& cam,
                     const std::vector<LandmarkObservation>& obs) {
  constexpr double kMissPenalty = 100.0;  // m^2, rays that miss the ground
  double acc = 0.0;
  for (const auto& o : obs) {
    try {
      const Vec2 g = project_to_ground(o.pixel, cam.intrinsics, cam.distortion,
                                       camera_pose(model, cam, o.q), o.trunk);
      acc += (g - o.ground).squaredNorm();
    } catch (const VisionError&) {
      acc += kMissPenalty;
    }
  }
  return acc / static_cast<double>(obs.size());
}

}  // namespace

double ground_rms(const RobotModel& model, const Camera& cam,
                  const std::vector<LandmarkObservation>& obs) {
  if (obs.empty()) throw VisionError("ground_rms: no observations");
  return std::sqrt(mean_sq_error(model, cam, obs));
}

CalibrationResult calibrate_extrinsics(const std::vector<LandmarkObservation>& obs,
                                       const RobotModel& model, const Camera& initial,
                                       NelderMeadOptions options) {
  if (obs.size() < 6) {
    throw VisionError("calibrate_extrinsics: need at least 6 observations, got " +
                      std::to_string(obs.size()));
  }
  const auto cost = [&](const Vec& x) {
    Camera cam = initial;
    cam.mount = perturb_mount(initial.mount, x);
    return mean_sq_error(model, cam, obs);
  };
  if (options.steps.size() == 0) {
    options.steps = (Vec(6) << 0.02, 0.02, 0.02, 0.05, 0.05, 0.05).finished();
  }
  CalibrationResult out;
  out.rms_before = ground_rms(model, initial, obs);
  // Restart from the best point: a collapsed simplex can stall on a ridge.
  Vec x = Vec::Zero(6);
  NelderMeadResult r;
  for (int pass = 0; pass < 3; ++pass) {
    const int evals = r.evals;
    r = nelder_mead(cost, x, options);
    r.evals += evals;
    x = r.x;
    if (r.reason == Termination::max_evals) break;
    options.steps *= 0.1;
  }
  out.optimizer = r;
  out.params = r.x;
  out.mount = perturb_mount(initial.mount, r.x);
  Camera cam = initial;
  cam.mount = out.mount;
  out.rms_after = ground_rms(model, cam, obs);
  return out;
}

}  // namespace op2::vision
