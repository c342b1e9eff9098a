#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mvmm {

using Vec3 = std::array<double, 3>;
using Index3 = std::array<int, 3>;

// Lattice geometry without a payload: defines the common space and the
// target shape of derived fields.
struct GridLayout {
  Index3 dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  std::size_t voxel_count() const;
  Vec3 voxel_center(int x, int y, int z) const;
  Vec3 voxel_center(std::size_t linear) const;
  Index3 unravel(std::size_t linear) const;
  void validate(const std::string& context) const;
};

// Dense axis-aligned 3D scalar field. Values are stored x-fastest; geometry
// is per-axis spacing in mm plus the world position of voxel (0,0,0).
struct VoxelGrid {
  Index3 dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};
  std::vector<double> values;

  static VoxelGrid zeros(Index3 dims, Vec3 spacing, Vec3 origin);
  static VoxelGrid zeros(const GridLayout& layout);

  GridLayout layout() const { return GridLayout{dims, spacing, origin}; }
  std::size_t voxel_count() const;
  std::size_t linear_index(int x, int y, int z) const;
  double at(int x, int y, int z) const { return values[linear_index(x, y, z)]; }
  double& at(int x, int y, int z) { return values[linear_index(x, y, z)]; }

  Vec3 voxel_to_world(const Vec3& continuous_index) const;
  Vec3 world_to_voxel(const Vec3& world_point) const;
  Vec3 voxel_center(int x, int y, int z) const;

  // True when the point lies inside the hull spanned by voxel centers.
  bool contains_world(const Vec3& world_point) const;
  // World bounds of the voxel-center hull: {min corner, max corner}.
  std::pair<Vec3, Vec3> hull() const;

  void validate(const std::string& context) const;
};

// Trilinear interpolation at a world point; nullopt when the point is
// outside the voxel-center hull (the OUTSIDE marker).
std::optional<double> trilinear_sample(const VoxelGrid& grid, const Vec3& world_point);

// Default central-difference step: half the smallest spacing.
double default_gradient_step(const VoxelGrid& grid);

// Central differences of trilinear_sample, in value units per mm; nullopt
// when any probe point leaves the hull. step_mm <= 0 selects the default.
std::optional<Vec3> image_gradient(const VoxelGrid& grid, const Vec3& world_point,
                                   double step_mm = 0.0);

// Integer label field on the same kind of lattice.
struct LabelVolume {
  Index3 dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};
  std::vector<int32_t> labels;

  static LabelVolume filled(const GridLayout& layout, int32_t value);
  GridLayout layout() const { return GridLayout{dims, spacing, origin}; }
  std::size_t voxel_count() const;
  std::size_t linear_index(int x, int y, int z) const;
  int32_t at(int x, int y, int z) const { return labels[linear_index(x, y, z)]; }
  int32_t& at(int x, int y, int z) { return labels[linear_index(x, y, z)]; }
  bool same_lattice(const LabelVolume& other, double tol = 1e-9) const;
};

// Two-file volume format: "<stem>.vhdr" holds `key = value` lines for dims,
// spacing, origin and dtype (f32le only); "<stem>.vraw" holds the payload as
// little-endian float32 in x-fastest order.
void write_volume(const VoxelGrid& grid, const std::string& hdr_path);
VoxelGrid read_volume(const std::string& hdr_path);

// Label volumes reuse the same container; values are written as exact small
// integers in float32.
void write_label_volume(const LabelVolume& vol, const std::string& hdr_path);
LabelVolume read_label_volume(const std::string& hdr_path);

LabelVolume to_label_volume(const VoxelGrid& grid);
VoxelGrid to_value_grid(const LabelVolume& vol);

}  // namespace mvmm
