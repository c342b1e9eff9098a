#pragma once

#include <array>
#include <string>
#include <vector>

#include "mvmm/volume.hpp"

namespace mvmm {

enum class SliceMode { rigid, affine };

int param_count(SliceMode mode);
std::string to_string(SliceMode mode);
SliceMode slice_mode_from_string(const std::string& s);

// In-plane transform of one slice, acting in world coordinates about the
// slice center; z is preserved. Rigid uses p = (tx, ty, theta); affine uses
// p = (tx, ty, a11, a12, a21, a22).
struct SliceTransform {
  std::array<double, 6> p{0, 0, 0, 0, 0, 0};

  static SliceTransform identity(SliceMode mode);
  bool is_identity(SliceMode mode) const;
};

struct SliceAffineSet {
  SliceMode mode = SliceMode::rigid;
  std::vector<std::vector<SliceTransform>> per_image;  // [image][slice]

  static SliceAffineSet identity_for(const std::vector<VoxelGrid>& images,
                                     SliceMode mode = SliceMode::rigid);
  bool all_identity() const;
};

// Slice attribution of a world z in an image's native frame: nearest slice
// when between planes, -1 when beyond the z extent (half a slice past either
// end plane).
int slice_of(const VoxelGrid& image, double world_z);

// World-space in-plane center of one slice.
Vec3 slice_center(const VoxelGrid& image, int slice);

Vec3 apply_slice_params(SliceMode mode, const SliceTransform& t, const Vec3& x,
                        const Vec3& center);
// Inverse map of apply_slice_params (rigid and affine).
Vec3 invert_slice_params(SliceMode mode, const SliceTransform& t, const Vec3& y,
                         const Vec3& center);
// Column j of the Jacobian dy/dp at x.
Vec3 slice_param_jacobian(SliceMode mode, const SliceTransform& t, const Vec3& x,
                          const Vec3& center, int j);

// Full transform of a common-space point through image i's slice set:
// attributes x to a slice by z, applies that slice's in-plane transform;
// points beyond the z extent pass through unchanged.
Vec3 apply_slice_transform(const SliceAffineSet& set, const VoxelGrid& image, int image_index,
                           const Vec3& x);

// Free-form deformation on a uniform control lattice with cubic B-spline
// blending. Control indices are clamped at the lattice edge, so the blend
// weights always sum to 1. Empty lattice (cp_dims all zero) is the identity.
struct FfdDeformation {
  Index3 cp_dims{0, 0, 0};
  Vec3 cp_spacing{1.0, 1.0, 1.0};
  Vec3 cp_origin{0.0, 0.0, 0.0};
  std::vector<Vec3> phi;  // per control point, x-fastest

  // Lattice whose interior support covers the whole domain.
  static FfdDeformation for_domain(const GridLayout& domain, const Vec3& spacing_mm);

  std::size_t control_count() const;
  bool is_identity() const;
  void validate(const std::string& context) const;
};

std::array<double, 4> bspline_weights(double t);

Vec3 ffd_displacement(const FfdDeformation& ffd, const Vec3& x);
Vec3 apply_ffd(const FfdDeformation& ffd, const Vec3& x);

// The 64 (control index, tensor weight) pairs blending at x; indices are
// already edge-clamped (duplicates possible at the boundary).
struct FfdSupport {
  std::array<int, 64> index;
  std::array<double, 64> weight;
};
FfdSupport ffd_weights_at(const FfdDeformation& ffd, const Vec3& x);

struct TransformState {
  SliceAffineSet slices;
  FfdDeformation ffd;

  static TransformState identity_for(const std::vector<VoxelGrid>& images,
                                     SliceMode mode = SliceMode::rigid);
};

// Text serialization; doubles round-trip bit-exactly.
void write_transform_state(const TransformState& state, const std::string& path);
TransformState read_transform_state(const std::string& path);

}  // namespace mvmm
