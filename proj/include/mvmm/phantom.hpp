#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mvmm/model.hpp"
#include "mvmm/transforms.hpp"
#include "mvmm/volume.hpp"

namespace mvmm {

// Counter-based RNG (splitmix64 core): the draw at a given (key, counter)
// never depends on call order, so parallel or re-ordered generation is
// reproducible per seed.
struct CounterRng {
  uint64_t key = 0;

  static CounterRng derive(uint64_t seed, uint64_t stream);
  uint64_t bits(uint64_t counter) const;
  double uniform(uint64_t counter) const;  // in (0, 1)
  double normal(uint64_t counter) const;   // standard normal, Box-Muller
};

// Fixed concentric geometry: outer ellipsoid (body) in background, an
// ellipsoidal shell with an off-center spherical sub-region (the bright
// subtype), and an inner core.
inline constexpr int kPhantomBackground = 0;
inline constexpr int kPhantomBody = 1;
inline constexpr int kPhantomShell = 2;
inline constexpr int kPhantomCore = 3;

struct IntensityEntry {
  double mean = 0.0;
  double stddev = 0.0;
};

struct SequenceSpec {
  std::string name;
  Vec3 spacing{2.0, 2.0, 5.0};
  // Per-label intensity, indexed by label id; the shell sub-blob gets its
  // own entry (it is a subtype, not a label).
  std::vector<IntensityEntry> by_label;
  IntensityEntry scar;
};

struct PhantomSpec {
  GridLayout lattice;  // truth / common lattice
  Vec3 body_semiaxes{30.0, 30.0, 24.0};
  Vec3 shell_outer_semiaxes{24.0, 24.0, 20.0};
  Vec3 core_semiaxes{15.0, 15.0, 12.0};
  Vec3 scar_center_offset{19.0, 0.0, 0.0};
  double scar_radius = 3.5;

  std::vector<SequenceSpec> sequences;

  double atlas_sigma_mm = 4.0;
  int atlas_pad_voxels = 2;

  // Corruption; all optional.
  double shift_sigma_mm = 0.0;
  double shift_fraction = 0.0;
  double ffd_sigma_mm = 0.0;
  Vec3 ffd_mesh_mm{20.0, 20.0, 20.0};
  std::vector<double> truncate_mm;  // per sequence; empty or 0 = none

  uint64_t seed = 0;

  static PhantomSpec defaults();
  void validate() const;
};

struct SliceShiftRecord {
  int image = 0;
  int slice = 0;
  double dx = 0.0;  // applied resampling shift; the correcting transform is its negation
  double dy = 0.0;
};

struct CropRecord {
  int axis = 0;
  bool high_end = false;
  double extent_mm = 0.0;
  int planes_dropped = 0;
};

struct PhantomTruth {
  LabelVolume labels;  // anatomy on the common lattice (after any FFD warp)
  std::vector<SliceShiftRecord> shifts;
  FfdDeformation ffd_field;        // empty lattice when no warp was applied
  std::vector<CropRecord> crops;   // per sequence
};

struct PhantomOutput {
  MultivariateImageSet images;
  PhantomTruth truth;
  AtlasPrior atlas;
};

// Renders every sequence analytically through the corruption chain (shared
// FFD warp of the anatomy, then per-slice acquisition shifts, plus per-voxel
// Gaussian noise), so the recorded truth is exact. Deterministic per seed.
PhantomOutput generate_phantom(const PhantomSpec& spec);

// Per-label indicator volumes blurred with an isotropic Gaussian and
// voxelwise renormalized. pad_voxels grows the atlas lattice on every side
// so samples near the common-space border stay interior.
AtlasPrior make_probabilistic_atlas(const LabelVolume& labels, double sigma_mm,
                                    int pad_voxels = 0);

// Volume-level corruption ops (the phantom renders analytically; these work
// on already-rendered data).
std::pair<VoxelGrid, std::vector<SliceShiftRecord>> inject_slice_shifts(const VoxelGrid& image,
                                                                        double sigma_mm,
                                                                        double fraction,
                                                                        uint64_t seed,
                                                                        int image_index = 0);

std::pair<VoxelGrid, FfdDeformation> inject_random_ffd(const VoxelGrid& volume,
                                                       const Vec3& mesh_spacing_mm,
                                                       double sigma_mm, uint64_t seed);

std::pair<VoxelGrid, CropRecord> truncate_coverage(const VoxelGrid& image, double extent_mm,
                                                   uint64_t seed);

}  // namespace mvmm
