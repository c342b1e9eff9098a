#pragma once

#include <vector>

#include "mvmm/volume.hpp"

namespace mvmm {

// Volume overlap 2|A n B| / (|A| + |B|) for one label; 1.0 when both sets
// are empty.
double dice(const LabelVolume& a, const LabelVolume& b, int label);

// World-space centers of the label's boundary voxels: voxels carrying the
// label with a 6-neighbor that is missing or differently labeled.
std::vector<Vec3> boundary_points(const LabelVolume& vol, int label);

// Symmetrized average contour distance in mm: the mean nearest-boundary
// distance seg->truth and truth->seg, averaged.
double acd_mm(const LabelVolume& seg, const LabelVolume& truth, int label);

}  // namespace mvmm
