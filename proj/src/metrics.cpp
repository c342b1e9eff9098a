#include "mvmm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <tuple>

#include "mvmm/error.hpp"

namespace mvmm {

double dice(const LabelVolume& a, const LabelVolume& b, int label) {
  if (!a.same_lattice(b))
    throw_validation("dice: volumes are not on the same lattice");
  std::size_t na = 0, nb = 0, nboth = 0;
  for (std::size_t v = 0; v < a.labels.size(); ++v) {
    const bool ia = a.labels[v] == label;
    const bool ib = b.labels[v] == label;
    na += ia;
    nb += ib;
    nboth += ia && ib;
  }
  if (na + nb == 0) return 1.0;  // agreement on absence
  return 2.0 * static_cast<double>(nboth) / static_cast<double>(na + nb);
}

std::vector<Vec3> boundary_points(const LabelVolume& vol, int label) {
  std::vector<Vec3> pts;
  const auto& d = vol.dims;
  for (int z = 0; z < d[2]; ++z) {
    for (int y = 0; y < d[1]; ++y) {
      for (int x = 0; x < d[0]; ++x) {
        if (vol.at(x, y, z) != label) continue;
        const bool boundary =
            x == 0 || vol.at(x - 1, y, z) != label || x == d[0] - 1 ||
            vol.at(std::min(x + 1, d[0] - 1), y, z) != label || y == 0 ||
            vol.at(x, y - 1, z) != label || y == d[1] - 1 ||
            vol.at(x, std::min(y + 1, d[1] - 1), z) != label || z == 0 ||
            vol.at(x, y, z - 1) != label || z == d[2] - 1 ||
            vol.at(x, y, std::min(z + 1, d[2] - 1)) != label;
        if (boundary)
          pts.push_back({vol.origin[0] + x * vol.spacing[0], vol.origin[1] + y * vol.spacing[1],
                         vol.origin[2] + z * vol.spacing[2]});
      }
    }
  }
  return pts;
}

namespace {

// Uniform-cell spatial hash for nearest-neighbor queries; the ring search
// stops once the best hit is closer than any unexplored ring can be.
class PointGrid {
 public:
  PointGrid(const std::vector<Vec3>& pts, double cell) : pts_(pts), cell_(cell) {
    if (pts.empty()) throw_validation("nearest-neighbor grid built from an empty point set");
    for (std::size_t i = 0; i < pts.size(); ++i) buckets_[key(pts[i])].push_back(i);
  }

  double nearest_distance(const Vec3& q) const {
    const auto [qx, qy, qz] = key(q);
    double best = std::numeric_limits<double>::infinity();
    for (int ring = 0; !(best <= (ring - 1) * cell_); ++ring) {
      for (int dz = -ring; dz <= ring; ++dz) {
        for (int dy = -ring; dy <= ring; ++dy) {
          for (int dx = -ring; dx <= ring; ++dx) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
            const auto it = buckets_.find({qx + dx, qy + dy, qz + dz});
            if (it == buckets_.end()) continue;
            for (const std::size_t i : it->second) {
              const Vec3& p = pts_[i];
              const double d2 = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                                (p[2] - q[2]) * (p[2] - q[2]);
              best = std::min(best, std::sqrt(d2));
            }
          }
        }
      }
    }
    return best;
  }

 private:
  using Key = std::tuple<int, int, int>;
  Key key(const Vec3& p) const {
    return {static_cast<int>(std::floor(p[0] / cell_)), static_cast<int>(std::floor(p[1] / cell_)),
            static_cast<int>(std::floor(p[2] / cell_))};
  }
  const std::vector<Vec3>& pts_;
  double cell_;
  std::map<Key, std::vector<std::size_t>> buckets_;
};

double directed_mean_distance(const std::vector<Vec3>& from, const PointGrid& to_grid) {
  double sum = 0.0;
  for (const Vec3& p : from) sum += to_grid.nearest_distance(p);
  return sum / static_cast<double>(from.size());
}

}  // namespace

double acd_mm(const LabelVolume& seg, const LabelVolume& truth, int label) {
  if (!seg.same_lattice(truth))
    throw_validation("acd: volumes are not on the same lattice");
  const auto seg_pts = boundary_points(seg, label);
  const auto truth_pts = boundary_points(truth, label);
  if (seg_pts.empty())
    throw_validation("acd: segmentation has no boundary for label " + std::to_string(label));
  if (truth_pts.empty())
    throw_validation("acd: truth has no boundary for label " + std::to_string(label));

  const double cell = std::max({seg.spacing[0], seg.spacing[1], seg.spacing[2]});
  PointGrid seg_grid(seg_pts, cell);
  PointGrid truth_grid(truth_pts, cell);
  const double d1 = directed_mean_distance(seg_pts, truth_grid);
  const double d2 = directed_mean_distance(truth_pts, seg_grid);
  return 0.5 * (d1 + d2);
}

}  // namespace mvmm
