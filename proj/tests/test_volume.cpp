#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mvmm/error.hpp"
#include "mvmm/phantom.hpp"
#include "mvmm/volume.hpp"
#include "test_support.hpp"

using namespace mvmm;
using mvmm_test::make_grid;
using mvmm_test::constant_grid;
using mvmm_test::noise_grid;

namespace {

std::filesystem::path temp_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "mvmm_test_volume";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("voxel/world maps are mutually inverse") {
  VoxelGrid g = VoxelGrid::zeros({5, 4, 3}, {2.0, 2.0, 2.0}, {0.0, 0.0, 0.0});

  SUBCASE("index (0,0,0) maps to the origin") {
    const Vec3 w = g.voxel_to_world({0, 0, 0});
    CHECK(w[0] == doctest::Approx(0.0));
    CHECK(w[1] == doctest::Approx(0.0));
    CHECK(w[2] == doctest::Approx(0.0));
  }
  SUBCASE("spacing scales indices") {
    const Vec3 w = g.voxel_to_world({1, 1, 1});
    CHECK(w[0] == doctest::Approx(2.0));
    CHECK(w[1] == doctest::Approx(2.0));
    CHECK(w[2] == doctest::Approx(2.0));
  }
  SUBCASE("round trip over random points") {
    g.spacing = {0.7, 1.3, 2.9};
    g.origin = {-3.1, 4.0, 0.25};
    const CounterRng rng = CounterRng::derive(11, 1);
    for (int i = 0; i < 100; ++i) {
      const Vec3 q{4.0 * rng.uniform(3 * i), 3.0 * rng.uniform(3 * i + 1),
                   2.0 * rng.uniform(3 * i + 2)};
      const Vec3 back = g.world_to_voxel(g.voxel_to_world(q));
      for (int a = 0; a < 3; ++a) CHECK(std::abs(back[a] - q[a]) < 1e-12);
    }
  }
}

TEST_CASE("trilinear sampling basics") {
  VoxelGrid g = VoxelGrid::zeros({3, 3, 3}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0});
  g.at(1, 1, 1) = 5.0;
  g.at(2, 1, 1) = 7.0;

  SUBCASE("at a voxel center the stored value comes back") {
    CHECK(*trilinear_sample(g, {1.0, 1.0, 1.0}) == doctest::Approx(5.0));
  }
  SUBCASE("midpoint between axis neighbors is the average") {
    g.at(1, 1, 1) = 2.0;
    g.at(2, 1, 1) = 4.0;
    CHECK(*trilinear_sample(g, {1.5, 1.0, 1.0}) == doctest::Approx(3.0));
  }
  SUBCASE("a point beyond the hull is OUTSIDE") {
    CHECK(!trilinear_sample(g, {3.0, 1.0, 1.0}).has_value());
    CHECK(!trilinear_sample(g, {-0.001, 1.0, 1.0}).has_value());
    CHECK(trilinear_sample(g, {2.0, 2.0, 2.0}).has_value());  // hull corner included
  }
}

TEST_CASE("trilinear sampling reproduces affine fields exactly") {
  const double a = 0.37, b = 1.21, c = -0.73, d = 2.11;
  const auto affine = [&](Vec3 p) { return a + b * p[0] + c * p[1] + d * p[2]; };
  const VoxelGrid g = make_grid({7, 6, 5}, {1.1, 0.9, 1.7}, {-2.0, 1.0, 0.5}, affine);

  const CounterRng rng = CounterRng::derive(5, 2);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p{-2.0 + 6.0 * rng.uniform(3 * i), 1.0 + 4.0 * rng.uniform(3 * i + 1),
                 0.5 + 6.0 * rng.uniform(3 * i + 2)};
    const auto s = trilinear_sample(g, p);
    REQUIRE(s.has_value());
    CHECK(*s == doctest::Approx(affine(p)).epsilon(1e-9));
  }
}

TEST_CASE("trilinear sampling is locally Lipschitz") {
  const VoxelGrid g = noise_grid({6, 6, 6}, {1.0, 1.5, 2.0}, {0.0, 0.0, 0.0}, 17, 0.0, 10.0);
  // Bound the directional slope by the largest adjacent-value jump per mm.
  double max_jump = 0.0;
  for (int z = 0; z < 6; ++z)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) {
        if (x + 1 < 6)
          max_jump = std::max(max_jump,
                              std::abs(g.at(x + 1, y, z) - g.at(x, y, z)) / g.spacing[0]);
        if (y + 1 < 6)
          max_jump = std::max(max_jump,
                              std::abs(g.at(x, y + 1, z) - g.at(x, y, z)) / g.spacing[1]);
        if (z + 1 < 6)
          max_jump = std::max(max_jump,
                              std::abs(g.at(x, y, z + 1) - g.at(x, y, z)) / g.spacing[2]);
      }
  const double lipschitz = 3.0 * max_jump;  // sum of per-axis slopes
  const CounterRng rng = CounterRng::derive(23, 3);
  const double delta = 1e-6;
  for (int i = 0; i < 100; ++i) {
    const Vec3 p{0.1 + 4.5 * rng.uniform(4 * i), 0.1 + 7.0 * rng.uniform(4 * i + 1),
                 0.1 + 9.5 * rng.uniform(4 * i + 2)};
    const int axis = static_cast<int>(rng.bits(4 * i + 3) % 3);
    Vec3 q = p;
    q[axis] += delta;
    const auto s0 = trilinear_sample(g, p);
    const auto s1 = trilinear_sample(g, q);
    REQUIRE(s0.has_value());
    REQUIRE(s1.has_value());
    CHECK(std::abs(*s1 - *s0) <= lipschitz * delta + 1e-12);
  }
}

TEST_CASE("image gradient") {
  SUBCASE("constant grid has zero gradient") {
    const VoxelGrid g = constant_grid({5, 5, 5}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}, 3.5);
    const auto grad = image_gradient(g, {2.0, 2.0, 2.0});
    REQUIRE(grad.has_value());
    for (int a = 0; a < 3; ++a) CHECK((*grad)[a] == doctest::Approx(0.0));
  }
  SUBCASE("linear ramp in x gives (1,0,0)") {
    const VoxelGrid g =
        make_grid({5, 5, 5}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}, [](Vec3 p) { return p[0]; });
    const auto grad = image_gradient(g, {2.0, 2.0, 2.0});
    REQUIRE(grad.has_value());
    CHECK((*grad)[0] == doctest::Approx(1.0));
    CHECK((*grad)[1] == doctest::Approx(0.0));
    CHECK((*grad)[2] == doctest::Approx(0.0));
  }
  SUBCASE("affine field gradient equals its coefficients everywhere inside") {
    const double b = 0.8, c = -1.4, d = 0.3;
    const VoxelGrid g = make_grid({6, 6, 6}, {1.2, 1.0, 0.8}, {0.0, 0.0, 0.0},
                                  [&](Vec3 p) { return 2.0 + b * p[0] + c * p[1] + d * p[2]; });
    const CounterRng rng = CounterRng::derive(31, 4);
    for (int i = 0; i < 50; ++i) {
      const Vec3 p{1.0 + 4.0 * rng.uniform(3 * i), 1.0 + 3.0 * rng.uniform(3 * i + 1),
                   1.0 + 2.0 * rng.uniform(3 * i + 2)};
      const auto grad = image_gradient(g, p);
      REQUIRE(grad.has_value());
      CHECK((*grad)[0] == doctest::Approx(b).epsilon(1e-6));
      CHECK((*grad)[1] == doctest::Approx(c).epsilon(1e-6));
      CHECK((*grad)[2] == doctest::Approx(d).epsilon(1e-6));
    }
  }
  SUBCASE("matches finite differences of the sampler on a smooth field") {
    const VoxelGrid g = make_grid({8, 8, 8}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}, [](Vec3 p) {
      return std::sin(0.4 * p[0]) + 0.2 * p[1] * p[2];
    });
    const Vec3 p{3.3, 3.7, 3.1};
    const double h = default_gradient_step(g);
    const auto grad = image_gradient(g, p);
    REQUIRE(grad.has_value());
    // Same central difference with a tenth of the step; trilinear is
    // piecewise linear so within a cell both agree to rounding.
    for (int a = 0; a < 3; ++a) {
      Vec3 lo = p, hi = p;
      lo[a] -= h / 10.0;
      hi[a] += h / 10.0;
      const double fd = (*trilinear_sample(g, hi) - *trilinear_sample(g, lo)) / (2.0 * h / 10.0);
      const double expected = fd;
      // The wide and narrow stencils straddle cell boundaries differently;
      // compare against the wide-step finite difference computed directly.
      Vec3 lo2 = p, hi2 = p;
      lo2[a] -= h;
      hi2[a] += h;
      const double fd_wide = (*trilinear_sample(g, hi2) - *trilinear_sample(g, lo2)) / (2.0 * h);
      CHECK((*grad)[a] == doctest::Approx(fd_wide).epsilon(1e-12));
      CHECK((*grad)[a] == doctest::Approx(expected).epsilon(0.25));
    }
  }
  SUBCASE("OUTSIDE when a probe leaves the hull") {
    const VoxelGrid g = constant_grid({4, 4, 4}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}, 1.0);
    CHECK(!image_gradient(g, {0.0, 2.0, 2.0}).has_value());
  }
}

TEST_CASE("volume file round trip") {
  const auto dir = temp_dir();
  const std::string hdr = (dir / "vol.vhdr").string();

  SUBCASE("write-read preserves geometry and f32 payload bit-exactly") {
    VoxelGrid g = noise_grid({4, 3, 2}, {0.75, 1.25, 5.0}, {-1.5, 2.25, 0.125}, 7, -10.0, 10.0);
    // Quantize to f32 first so the payload is exactly representable.
    for (double& v : g.values) v = static_cast<double>(static_cast<float>(v));
    write_volume(g, hdr);
    const VoxelGrid back = read_volume(hdr);
    CHECK(back.dims == g.dims);
    for (int a = 0; a < 3; ++a) {
      CHECK(back.spacing[a] == g.spacing[a]);
      CHECK(back.origin[a] == g.origin[a]);
    }
    REQUIRE(back.values.size() == g.values.size());
    for (std::size_t v = 0; v < g.values.size(); ++v) CHECK(back.values[v] == g.values[v]);

    // Second hop must be byte-identical.
    const std::string hdr2 = (dir / "vol2.vhdr").string();
    write_volume(back, hdr2);
    std::ifstream f1((dir / "vol.vraw").string(), std::ios::binary);
    std::ifstream f2((dir / "vol2.vraw").string(), std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
  }
  SUBCASE("header errors are named") {
    std::ofstream bad((dir / "bad.vhdr").string());
    bad << "dims = 2 2 2\nspacing = 1 1 1\norigin = 0 0 0\ndtype = f64\n";
    bad.close();
    CHECK_THROWS_AS(read_volume((dir / "bad.vhdr").string()), Error);
  }
  SUBCASE("payload size mismatch is an error") {
    VoxelGrid g = constant_grid({2, 2, 2}, {1, 1, 1}, {0, 0, 0}, 1.0);
    write_volume(g, (dir / "sz.vhdr").string());
    std::ofstream raw((dir / "sz.vraw").string(), std::ios::binary | std::ios::trunc);
    raw << "xx";
    raw.close();
    CHECK_THROWS_AS(read_volume((dir / "sz.vhdr").string()), Error);
  }
  SUBCASE("label volumes reject non-integer payloads") {
    VoxelGrid g = constant_grid({2, 2, 2}, {1, 1, 1}, {0, 0, 0}, 1.5);
    write_volume(g, (dir / "lab.vhdr").string());
    CHECK_THROWS_AS(read_label_volume((dir / "lab.vhdr").string()), Error);
  }
}

TEST_CASE("grid invariants are validated") {
  CHECK_THROWS_AS(VoxelGrid::zeros({0, 2, 2}, {1, 1, 1}, {0, 0, 0}), Error);
  CHECK_THROWS_AS(VoxelGrid::zeros({2, 2, 2}, {1, 0, 1}, {0, 0, 0}), Error);
  VoxelGrid g = VoxelGrid::zeros({2, 2, 2}, {1, 1, 1}, {0, 0, 0});
  g.values.pop_back();
  CHECK_THROWS_AS(g.validate("test"), Error);
}
