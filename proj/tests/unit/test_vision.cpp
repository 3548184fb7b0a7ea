#include "op2/vision.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cstdio>

using namespace op2;
using namespace op2::vision;

namespace {

const Camera& shipped_camera() {
  static const Camera cam = Camera::load(test::data_path("camera.json"));
  return cam;
}

double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  return v[static_cast<std::size_t>(p * (v.size() - 1))];
}

// Camera pose in the trunk frame from optical-axis and image-x directions.
Pose look(const Vec3& z_axis, const Vec3& x_axis, const Vec3& at = Vec3::Zero()) {
  Pose p = Pose::Identity();
  const Vec3 z = z_axis.normalized();
  const Vec3 x = x_axis.normalized();
  p.linear().col(0) = x;
  p.linear().col(1) = z.cross(x);
  p.linear().col(2) = z;
  p.translation() = at;
  return p;
}

}  // namespace

TEST_CASE("distortion model") {
  const DistortionCoeffs zero;
  CHECK(distort_point({0.3, -0.2}, zero) == Vec2(0.3, -0.2));
  DistortionCoeffs k;
  k.k1 = 0.1;
  CHECK(distort_point({0.5, 0.0}, k).x() == doctest::Approx(0.5125).epsilon(1e-15));
  const DistortionCoeffs c = shipped_camera().distortion;
  CHECK(distort_point({0.0, 0.0}, c) == Vec2(0.0, 0.0));
  // Jacobian against central differences.
  std::mt19937_64 rng(6);
  for (int i = 0; i < 100; ++i) {
    const Vec2 p = test::random_vec(2, rng, 1.0);
    Eigen::Matrix2d fd;
    for (int j = 0; j < 2; ++j) {
      Vec2 e = Vec2::Zero();
      e[j] = 1e-6;
      fd.col(j) = (distort_point(p + e, c) - distort_point(p - e, c)) / 2e-6;
    }
    REQUIRE((fd - distort_jacobian(p, c)).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("undistortion") {
  const auto id = undistort_point({0.4, 0.1}, DistortionCoeffs{});
  CHECK(id.point == Vec2(0.4, 0.1));
  CHECK(id.iterations == 1);

  const Camera& cam = shipped_camera();
  double worst = 0.0;
  // Grid over the field of view (normalized radius up to ~1.35).
  for (int i = -20; i <= 20; ++i) {
    for (int j = -15; j <= 15; ++j) {
      const Vec2 p(i * 1.0 / 20.0, j * 0.8 / 15.0);
      const Vec2 back = undistort_point(distort_point(p, cam.distortion), cam.distortion).point;
      worst = std::max(worst, (back - p).norm());
    }
  }
  CHECK(worst <= 1e-10);

  DistortionCoeffs bad;
  bad.k1 = -1.0;  // r (1 - r^2) peaks at 0.385
  try {
    undistort_point({0.5, 0.0}, bad);
    FAIL("expected non-convergence");
  } catch (const NonConvergence& e) {
    CHECK(e.residual() > 1e-10);
  }
  CHECK_THROWS_AS(undistort_point({0.1, 0.1}, bad, 0.0), VisionError);
}

TEST_CASE("lookup tables") {
  CameraIntrinsics intr;
  SUBCASE("zero coefficients give identity tables") {
    intr.width = 64;
    intr.height = 48;
    intr.cx = 32;
    intr.cy = 24;
    const auto maps = build_undistort_maps(intr, DistortionCoeffs{});
    CHECK(maps.invalid == 0);
    for (int v = 0; v < 48; ++v) {
      for (int u = 0; u < 64; ++u) {
        const std::size_t i = v * 64 + u;
        REQUIRE(maps.source_x[i] == doctest::Approx(u).epsilon(1e-12));
        REQUIRE(maps.source_y[i] == doctest::Approx(v).epsilon(1e-12));
        REQUIRE(maps.undist_x[i] == doctest::Approx(u).epsilon(1e-12));
        REQUIRE(maps.undist_y[i] == doctest::Approx(v).epsilon(1e-12));
      }
    }
  }
  SUBCASE("640x480 tables match per-pixel Newton-Raphson") {
    const Camera& cam = shipped_camera();
    const auto maps = build_undistort_maps(cam.intrinsics, cam.distortion);
    CHECK(maps.width == 640);
    CHECK(maps.height == 480);
    CHECK(maps.source_x.size() == 640u * 480u);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> ux(0, 639), vy(0, 479);
    std::vector<double> err;
    for (int i = 0; i < 20000; ++i) {
      const Vec2 px(ux(rng), vy(rng));
      Vec2 table;
      if (!maps.lookup(px, table)) continue;
      const Vec2 exact = cam.intrinsics.to_pixel(
          undistort_point(cam.intrinsics.to_normalized(px), cam.distortion).point);
      err.push_back((table - exact).norm());
    }
    CHECK(err.size() > 15000u);
    CHECK(percentile(err, 0.99) <= 0.25);
  }
}

TEST_CASE("remap") {
  CameraIntrinsics intr;
  intr.width = 40;
  intr.height = 30;
  intr.cx = 20;
  intr.cy = 15;
  intr.fx = intr.fy = 20;
  Image img(40, 30, 3);
  for (int y = 0; y < 30; ++y) {
    for (int x = 0; x < 40; ++x) {
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<float>((x + 2 * y + c) % 7) / 7.0f;
    }
  }
  CHECK(remap(img, build_undistort_maps(intr, DistortionCoeffs{})).data == img.data);
  // A linear ramp is reproduced exactly by bilinear sampling at the mapped source.
  DistortionCoeffs c;
  c.k1 = -0.2;
  const auto maps = build_undistort_maps(intr, c);
  Image ramp(40, 30, 1);
  for (int y = 0; y < 30; ++y) {
    for (int x = 0; x < 40; ++x) ramp.at(x, y) = static_cast<float>(x) / 40.0f;
  }
  const Image out = remap(ramp, maps);
  for (int v = 0; v < 30; ++v) {
    for (int u = 0; u < 40; ++u) {
      const float sx = maps.source_x[v * 40 + u], sy = maps.source_y[v * 40 + u];
      if (sx >= 0 && sy >= 0 && sx <= 39 && sy <= 29) {
        REQUIRE(out.at(u, v) == doctest::Approx(sx / 40.0).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("downscale") {
  const Image flat(1600, 1200, 3, 0.25f);
  const Image small = downscale(flat, 2.5);
  CHECK(small.width == 640);
  CHECK(small.height == 480);
  for (float v : small.data) REQUIRE(v == doctest::Approx(0.25f).epsilon(1e-6));

  Image board(1600, 1200, 1);
  double sum = 0.0;
  for (int y = 0; y < 1200; ++y) {
    for (int x = 0; x < 1600; ++x) {
      board.at(x, y) = ((x / 3 + y / 7) % 2) ? 1.0f : 0.0f;
      sum += board.at(x, y);
    }
  }
  const Image b = downscale(board, 2.5);
  double out = 0.0;
  for (float v : b.data) out += v;
  CHECK(std::abs(out / b.data.size() - sum / board.data.size()) <= 1e-6);
  // 2x2 block average oracle at an integer ratio.
  Image tiny(4, 2, 1);
  for (int i = 0; i < 8; ++i) tiny.data[i] = static_cast<float>(i);
  const Image half = downscale(tiny, 2.0);
  CHECK(half.data[0] == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
  CHECK(half.data[1] == doctest::Approx((2 + 3 + 6 + 7) / 4.0));

  CHECK_THROWS_AS(downscale(Image(1000, 1000, 1), 3.0), VisionError);
  CHECK_THROWS_AS(downscale(Image(100, 100, 1), 0.5), VisionError);
}

TEST_CASE("hsv") {
  const Hsv red = rgb_to_hsv(1, 0, 0);
  CHECK(red.h == 0.0);
  CHECK(red.s == 1.0);
  CHECK(red.v == 1.0);
  const Hsv gray = rgb_to_hsv(0.5, 0.5, 0.5);
  CHECK(gray.s == 0.0);
  CHECK(gray.v == 0.5);
  const Hsv blue = rgb_to_hsv(0.2, 0.4, 0.6);
  CHECK(blue.h == doctest::Approx(210.0).epsilon(1e-12));
  CHECK(blue.s == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(blue.v == doctest::Approx(0.6));
  CHECK(rgb_to_hsv(1, 0, 0.5).h == doctest::Approx(330.0));
  CHECK(rgb_to_hsv(0, 1, 0).h == doctest::Approx(120.0));
  Image px(1, 1, 3);
  px.data = {0.2f, 0.4f, 0.6f};
  CHECK(rgb_to_hsv(px).data[0] == doctest::Approx(210.0 / 360.0).epsilon(1e-6));
}

TEST_CASE("pnm round trip") {
  Image img(5, 3, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(i % 256) / 255.0f;
  const std::string path = "test_vision_roundtrip.ppm";
  write_pnm(path, img);
  const Image back = read_pnm(path);
  std::remove(path.c_str());
  CHECK(back.width == 5);
  CHECK(back.channels == 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) REQUIRE(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-6));
  CHECK_THROWS_AS(read_pnm("missing.pgm"), VisionError);
}

TEST_CASE("ground projection") {
  CameraIntrinsics intr;
  const DistortionCoeffs none;
  const Vec2 centre(intr.cx, intr.cy);
  TrunkState trunk;
  trunk.height = 1.0;

  const Pose down = look({0, 0, -1}, {0, -1, 0});
  const Vec2 g = project_to_ground(centre, intr, none, down, trunk);
  CHECK(g.norm() < 1e-12);

  const double az = 0.7;
  const Vec3 fwd(std::cos(az), std::sin(az), 0);
  const Vec3 right(std::sin(az), -std::cos(az), 0);
  const Pose oblique = look(fwd - Vec3::UnitZ(), right);
  const Vec2 p45 = project_to_ground(centre, intr, none, oblique, trunk);
  CHECK(p45.norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::atan2(p45.y(), p45.x()) == doctest::Approx(az).epsilon(1e-12));

  const Pose level = look(fwd, right);
  CHECK_THROWS_AS(project_to_ground(centre, intr, none, level, trunk), NoGroundIntersection);
  CHECK_THROWS_AS(project_to_ground({intr.cx, 10.0}, intr, none, level, trunk),
                  NoGroundIntersection);

  // Range grows strictly towards the horizon along a fixed azimuth.
  const Camera& cam = shipped_camera();
  double last = 0.0;
  int rows = 0;
  for (double v = 470.0; v > 0.0; v -= 5.0) {
    Vec2 pt;
    try {
      pt = project_to_ground({intr.cx, v}, cam.intrinsics, cam.distortion, oblique, trunk);
    } catch (const NoGroundIntersection&) {
      break;
    }
    REQUIRE(pt.norm() > last);
    last = pt.norm();
    ++rows;
  }
  CHECK(rows > 20);

  // ground_to_pixel inverts project_to_ground under tilt.
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> tilt(-0.1, 0.1), r(0.5, 3.0), a(-0.5, 0.5);
  for (int i = 0; i < 200; ++i) {
    TrunkState t{{0.0, tilt(rng), tilt(rng), 1}, 0.6};
    const Pose camp = look({1, 0, -0.6}, {0, -1, 0}, {0.05, 0.0, 0.5});
    const double rr = r(rng), aa = a(rng);
    const Vec2 ground(rr * std::cos(aa), rr * std::sin(aa));
    const Vec2 px = ground_to_pixel(ground, cam.intrinsics, cam.distortion, camp, t);
    const Vec2 back = project_to_ground(px, cam.intrinsics, cam.distortion, camp, t);
    REQUIRE((back - ground).norm() < 1e-8);
  }
}

TEST_CASE("nelder-mead") {
  SUBCASE("quadratic") {
    const auto r = nelder_mead([](const Vec& x) { return (x[0] - 3) * (x[0] - 3); },
                               Vec::Zero(1));
    CHECK(r.converged());
    CHECK(std::abs(r.x[0] - 3.0) <= 1e-6);
  }
  SUBCASE("rosenbrock") {
    const auto rosen = [](const Vec& x) {
      return 100 * std::pow(x[1] - x[0] * x[0], 2) + std::pow(1 - x[0], 2);
    };
    NelderMeadOptions o;
    o.f_tol = 1e-20;
    const auto r = nelder_mead(rosen, (Vec(2) << -1.2, 1.0).finished(), o);
    CHECK(r.converged());
    CHECK(std::abs(r.x[0] - 1.0) <= 1e-4);
    CHECK(std::abs(r.x[1] - 1.0) <= 1e-4);
  }
  SUBCASE("plateau") {
    const auto r = nelder_mead([](const Vec& x) { return x.norm() < 10 ? 1.0 : 2.0; },
                               Vec::Zero(3));
    CHECK(r.reason == Termination::f_spread);
    CHECK(r.evals == 5);  // simplex plus the centroid probe
  }
  SUBCASE("evaluation budget") {
    NelderMeadOptions o;
    o.max_evals = 30;
    const auto r = nelder_mead([](const Vec& x) { return x.squaredNorm() + std::sin(50 * x[0]); },
                               Vec::Ones(4), o);
    CHECK(r.reason == Termination::max_evals);
    CHECK_FALSE(r.converged());
    CHECK(std::isfinite(r.f));
  }
}

TEST_CASE("extrinsic calibration") {
  const auto& model = test::shipped_model();
  const Camera& nominal = shipped_camera();

  SUBCASE("camera file round trip") {
    const Camera again = Camera::from_json(nominal.to_json());
    CHECK(again.mount.isApprox(nominal.mount, 1e-12));
    CHECK(again.intrinsics.fx == nominal.intrinsics.fx);
    CHECK(again.distortion.k1 == nominal.distortion.k1);
  }
  SUBCASE("no perturbation") {
    const auto obs = synthetic_landmarks(model, nominal, 20, 1);
    const auto r = calibrate_extrinsics(obs, model, nominal);
    CHECK(r.rms_before < 1e-8);
    CHECK(r.rms_after <= r.rms_before + 1e-12);
    CHECK(r.params.norm() < 1e-6);
  }
  SUBCASE("recovers a 3 deg / 2 cm perturbation") {
    Camera truth = nominal;
    const Vec delta = (Vec(6) << 0.0, 0.0, 0.02, 0.0, deg2rad(3.0), 0.0).finished();
    truth.mount = perturb_mount(nominal.mount, delta);
    const auto obs = synthetic_landmarks(model, truth, 20, 2);
    const auto r = calibrate_extrinsics(obs, model, nominal);
    const Pose err = truth.mount.inverse() * r.mount;
    const double angle = Eigen::AngleAxisd(err.linear()).angle();
    CHECK(rad2deg(angle) <= 0.2);
    CHECK(err.translation().norm() <= 0.002);
    CHECK(r.rms_after * 10.0 <= r.rms_before);
    const auto json = observations_to_json(model, obs);
    const auto parsed = observations_from_json(model, json);
    CHECK(parsed.size() == obs.size());
    CHECK(parsed[3].q == obs[3].q);
  }
  SUBCASE("too few observations") {
    const auto obs = synthetic_landmarks(model, nominal, 3, 3);
    CHECK_THROWS_AS(calibrate_extrinsics(obs, model, nominal), VisionError);
  }
}
