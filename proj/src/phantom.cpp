#include "mvmm/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mvmm/error.hpp"

namespace mvmm {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stream tags keep independent random uses of one seed decorrelated.
enum : uint64_t {
  kStreamNoise = 1,
  kStreamShiftSelect = 2,
  kStreamShiftDraw = 3,
  kStreamFfd = 4,
  kStreamCropAxis = 5,
};

}  // namespace

CounterRng CounterRng::derive(uint64_t seed, uint64_t stream) {
  CounterRng r;
  r.key = splitmix64(splitmix64(seed) ^ (stream * 0xd1342543de82ef95ULL + 1));
  return r;
}

uint64_t CounterRng::bits(uint64_t counter) const { return splitmix64(key ^ splitmix64(counter)); }

double CounterRng::uniform(uint64_t counter) const {
  return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
}

double CounterRng::normal(uint64_t counter) const {
  const double u1 = uniform(2 * counter);
  const double u2 = uniform(2 * counter + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

PhantomSpec PhantomSpec::defaults() {
  PhantomSpec spec;
  spec.lattice.dims = {40, 40, 12};
  spec.lattice.spacing = {2.0, 2.0, 5.0};
  spec.lattice.origin = {0.0, 0.0, 0.0};

  auto seq = [](const std::string& name, Vec3 spacing, double bg, double body, double shell,
                double core, double scar) {
    SequenceSpec s;
    s.name = name;
    s.spacing = spacing;
    s.by_label.resize(4);
    s.by_label[kPhantomBackground] = {bg, 5.0};
    s.by_label[kPhantomBody] = {body, 5.0};
    s.by_label[kPhantomShell] = {shell, 5.0};
    s.by_label[kPhantomCore] = {core, 5.0};
    s.scar = {scar, 5.0};
    return s;
  };
  // Contrast pattern: the first sequence hides the shell sub-blob against
  // the core, the second hides it against the shell, the third sees all
  // four structures but at coarse slices.
  spec.sequences.push_back(seq("lge", {2.0, 2.0, 5.0}, 10, 40, 60, 120, 120));
  spec.sequences.push_back(seq("bssfp", {2.0, 2.0, 5.0}, 10, 45, 70, 130, 70));
  spec.sequences.push_back(seq("t2", {2.0, 2.0, 15.0}, 12, 50, 75, 95, 110));
  return spec;
}

void PhantomSpec::validate() const {
  lattice.validate("phantom lattice");
  if (sequences.empty()) throw_validation("phantom spec: at least one sequence required");
  std::set<std::string> names;
  for (const auto& s : sequences) {
    if (s.name.empty()) throw_validation("phantom spec: sequence name must not be empty");
    if (!names.insert(s.name).second)
      throw_validation("phantom spec: duplicate sequence name `" + s.name + "`");
    for (int a = 0; a < 3; ++a)
      if (!(s.spacing[a] > 0.0))
        throw_validation("phantom spec: sequence spacing must be > 0");
    if (s.by_label.size() != 4)
      throw_validation("phantom spec: sequence `" + s.name +
                       "` is missing intensity entries (background, body, shell, core)");
    for (const auto& e : s.by_label)
      if (e.stddev < 0.0) throw_validation("phantom spec: intensity stddev must be >= 0");
  }
  for (int a = 0; a < 3; ++a) {
    if (!(body_semiaxes[a] > shell_outer_semiaxes[a]))
      throw_validation("phantom spec: body must strictly contain the shell");
    if (!(shell_outer_semiaxes[a] > core_semiaxes[a]))
      throw_validation("phantom spec: shell must strictly contain the core");
  }
  if (!(scar_radius >= 0.0)) throw_validation("phantom spec: scar radius must be >= 0");
  if (!truncate_mm.empty() && truncate_mm.size() != sequences.size())
    throw_validation("phantom spec: truncation list must match sequence count");
  if (shift_fraction < 0.0 || shift_fraction > 1.0)
    throw_validation("phantom spec: shift fraction must be in [0, 1]");
}

namespace {

struct Anatomy {
  const PhantomSpec& spec;
  Vec3 center;
  FfdDeformation warp;  // identity when empty

  struct Classified {
    int label;
    bool scar;
  };

  Classified classify(const Vec3& p_world) const {
    const Vec3 q = apply_ffd(warp, p_world);
    const Vec3 d{q[0] - center[0], q[1] - center[1], q[2] - center[2]};
    auto inside = [&d](const Vec3& ax) {
      const double r = d[0] * d[0] / (ax[0] * ax[0]) + d[1] * d[1] / (ax[1] * ax[1]) +
                       d[2] * d[2] / (ax[2] * ax[2]);
      return r <= 1.0;
    };
    Classified c{kPhantomBackground, false};
    if (inside(spec.core_semiaxes)) {
      c.label = kPhantomCore;
    } else if (inside(spec.shell_outer_semiaxes)) {
      c.label = kPhantomShell;
      const double sx = d[0] - spec.scar_center_offset[0];
      const double sy = d[1] - spec.scar_center_offset[1];
      const double sz = d[2] - spec.scar_center_offset[2];
      c.scar = sx * sx + sy * sy + sz * sz <= spec.scar_radius * spec.scar_radius;
    } else if (inside(spec.body_semiaxes)) {
      c.label = kPhantomBody;
    }
    return c;
  }
};

Vec3 lattice_center(const GridLayout& g) {
  return {g.origin[0] + 0.5 * (g.dims[0] - 1) * g.spacing[0],
          g.origin[1] + 0.5 * (g.dims[1] - 1) * g.spacing[1],
          g.origin[2] + 0.5 * (g.dims[2] - 1) * g.spacing[2]};
}

// Sequence lattice covering the common extent at its own spacing, possibly
// cropped by the truncation protocol.
GridLayout sequence_layout(const GridLayout& common, const Vec3& spacing) {
  GridLayout g;
  g.spacing = spacing;
  g.origin = common.origin;
  for (int a = 0; a < 3; ++a) {
    const double extent = (common.dims[a] - 1) * common.spacing[a];
    g.dims[a] = static_cast<int>(std::floor(extent / spacing[a] + 1e-9)) + 1;
  }
  return g;
}

CropRecord pick_crop(const GridLayout& layout, double extent_mm, const CounterRng& rng,
                     uint64_t counter_base) {
  CropRecord crop;
  crop.extent_mm = extent_mm;
  if (extent_mm <= 0.0) return crop;
  crop.axis = static_cast<int>(rng.bits(counter_base) % 3);
  crop.high_end = (rng.bits(counter_base + 1) & 1) != 0;
  crop.planes_dropped =
      static_cast<int>(std::lround(extent_mm / layout.spacing[static_cast<std::size_t>(crop.axis)]));
  return crop;
}

void apply_crop(GridLayout& layout, const CropRecord& crop, const std::string& context) {
  if (crop.planes_dropped == 0) return;
  const int a = crop.axis;
  for (int ax = 0; ax < 3; ++ax)
    if (!(crop.extent_mm < (layout.dims[ax] - 1) * layout.spacing[ax]))
      throw_validation(context + ": truncation extent " + std::to_string(crop.extent_mm) +
                       " mm is not smaller than the image extent on every axis");
  layout.dims[a] -= crop.planes_dropped;
  if (layout.dims[a] < 1)
    throw_validation(context + ": truncation drops every plane on axis " + std::to_string(a));
  if (!crop.high_end) layout.origin[a] += crop.planes_dropped * layout.spacing[a];
}

}  // namespace

PhantomOutput generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  PhantomOutput out;
  const GridLayout& common = spec.lattice;
  const Vec3 center = lattice_center(common);

  Anatomy anatomy{spec, center, {}};
  if (spec.ffd_sigma_mm > 0.0) {
    anatomy.warp = FfdDeformation::for_domain(common, spec.ffd_mesh_mm);
    const CounterRng rng = CounterRng::derive(spec.seed, kStreamFfd);
    for (std::size_t d = 0; d < anatomy.warp.phi.size(); ++d)
      for (int a = 0; a < 3; ++a)
        anatomy.warp.phi[d][static_cast<std::size_t>(a)] =
            spec.ffd_sigma_mm * rng.normal(3 * d + static_cast<uint64_t>(a));
  }
  out.truth.ffd_field = anatomy.warp;

  // Truth labels: warped anatomy on the common lattice.
  out.truth.labels = LabelVolume::filled(common, kPhantomBackground);
  for (std::size_t v = 0; v < common.voxel_count(); ++v)
    out.truth.labels.labels[v] = anatomy.classify(common.voxel_center(v)).label;

  // Atlas from the unwarped anatomy; with a warp active it is deliberately
  // mis-registered to the rendered images.
  Anatomy unwarped{spec, center, {}};
  LabelVolume atlas_labels = LabelVolume::filled(common, kPhantomBackground);
  for (std::size_t v = 0; v < common.voxel_count(); ++v)
    atlas_labels.labels[v] = unwarped.classify(common.voxel_center(v)).label;
  out.atlas = make_probabilistic_atlas(atlas_labels, spec.atlas_sigma_mm, spec.atlas_pad_voxels);

  // Render sequences.
  out.images.common_space = common;
  for (std::size_t i = 0; i < spec.sequences.size(); ++i) {
    const SequenceSpec& seq = spec.sequences[i];
    GridLayout layout = sequence_layout(common, seq.spacing);
    CropRecord crop;
    if (!spec.truncate_mm.empty() && spec.truncate_mm[i] > 0.0) {
      const CounterRng rng = CounterRng::derive(spec.seed, kStreamCropAxis);
      crop = pick_crop(layout, spec.truncate_mm[i], rng, 16 * i);
      apply_crop(layout, crop, "phantom sequence `" + seq.name + "`");
    }
    out.truth.crops.push_back(crop);

    // Per-slice acquisition shifts.
    std::vector<Vec3> shift(static_cast<std::size_t>(layout.dims[2]), Vec3{0.0, 0.0, 0.0});
    if (spec.shift_sigma_mm > 0.0 && spec.shift_fraction > 0.0) {
      const CounterRng sel = CounterRng::derive(spec.seed, kStreamShiftSelect);
      const CounterRng draw = CounterRng::derive(spec.seed, kStreamShiftDraw);
      for (int s = 0; s < layout.dims[2]; ++s) {
        const uint64_t c = 1024 * i + static_cast<uint64_t>(s);
        if (sel.uniform(c) >= spec.shift_fraction) continue;
        SliceShiftRecord rec;
        rec.image = static_cast<int>(i);
        rec.slice = s;
        rec.dx = spec.shift_sigma_mm * draw.normal(2 * c);
        rec.dy = spec.shift_sigma_mm * draw.normal(2 * c + 1);
        shift[static_cast<std::size_t>(s)] = {rec.dx, rec.dy, 0.0};
        out.truth.shifts.push_back(rec);
      }
    }

    VoxelGrid img = VoxelGrid::zeros(layout);
    const CounterRng noise = CounterRng::derive(spec.seed, kStreamNoise + 16 * (i + 1));
    std::size_t v = 0;
    for (int z = 0; z < layout.dims[2]; ++z) {
      const Vec3& dz = shift[static_cast<std::size_t>(z)];
      for (int y = 0; y < layout.dims[1]; ++y) {
        for (int x = 0; x < layout.dims[0]; ++x, ++v) {
          Vec3 p = layout.voxel_center(x, y, z);
          p[0] += dz[0];
          p[1] += dz[1];
          const auto c = anatomy.classify(p);
          const IntensityEntry& e =
              c.scar ? seq.scar : seq.by_label[static_cast<std::size_t>(c.label)];
          img.values[v] = e.mean + e.stddev * noise.normal(v);
        }
      }
    }
    out.images.images.push_back(std::move(img));
  }
  out.images.validate();
  return out;
}

AtlasPrior make_probabilistic_atlas(const LabelVolume& labels, double sigma_mm, int pad_voxels) {
  if (!(sigma_mm > 0.0)) throw_validation("make_probabilistic_atlas: sigma must be > 0");
  if (pad_voxels < 0) throw_validation("make_probabilistic_atlas: pad must be >= 0");

  std::set<int32_t> ids(labels.labels.begin(), labels.labels.end());
  GridLayout padded;
  padded.spacing = labels.spacing;
  for (int a = 0; a < 3; ++a) {
    padded.dims[a] = labels.dims[a] + 2 * pad_voxels;
    padded.origin[a] = labels.origin[a] - pad_voxels * labels.spacing[a];
  }

  AtlasPrior atlas;
  for (const int32_t id : ids) {
    VoxelGrid indicator = VoxelGrid::zeros(padded);
    for (int z = 0; z < labels.dims[2]; ++z)
      for (int y = 0; y < labels.dims[1]; ++y)
        for (int x = 0; x < labels.dims[0]; ++x)
          if (labels.at(x, y, z) == id)
            indicator.at(x + pad_voxels, y + pad_voxels, z + pad_voxels) = 1.0;

    // Separable Gaussian blur, kernel radius 3 sigma per axis.
    for (int axis = 0; axis < 3; ++axis) {
      const double sv = sigma_mm / padded.spacing[axis];
      const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sv)));
      std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
      double ksum = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        const double w = std::exp(-0.5 * t * t / (sv * sv));
        kernel[static_cast<std::size_t>(t + radius)] = w;
        ksum += w;
      }
      for (double& w : kernel) w /= ksum;

      VoxelGrid blurred = VoxelGrid::zeros(padded);
      const Index3 d = padded.dims;
      for (int z = 0; z < d[2]; ++z) {
        for (int y = 0; y < d[1]; ++y) {
          for (int x = 0; x < d[0]; ++x) {
            double acc = 0.0;
            for (int t = -radius; t <= radius; ++t) {
              int q[3] = {x, y, z};
              q[axis] += t;
              if (q[axis] < 0 || q[axis] >= d[axis]) continue;
              acc += kernel[static_cast<std::size_t>(t + radius)] *
                     indicator.at(q[0], q[1], q[2]);
            }
            blurred.at(x, y, z) = acc;
          }
        }
      }
      indicator = std::move(blurred);
    }
    atlas.labels.push_back(id);
    atlas.maps.push_back(std::move(indicator));
  }

  // Voxelwise renormalization; far from any mass, fall back to uniform.
  const std::size_t V = padded.voxel_count();
  const std::size_t K = atlas.maps.size();
  for (std::size_t v = 0; v < V; ++v) {
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) sum += atlas.maps[k].values[v];
    if (sum < 1e-12) {
      for (std::size_t k = 0; k < K; ++k) atlas.maps[k].values[v] = 1.0 / static_cast<double>(K);
    } else {
      for (std::size_t k = 0; k < K; ++k) atlas.maps[k].values[v] /= sum;
    }
  }
  atlas.validate();
  return atlas;
}

namespace {

double bilinear_clamped(const VoxelGrid& img, double qx, double qy, int z) {
  qx = std::clamp(qx, 0.0, static_cast<double>(img.dims[0] - 1));
  qy = std::clamp(qy, 0.0, static_cast<double>(img.dims[1] - 1));
  const int x0 = std::min(static_cast<int>(std::floor(qx)), std::max(0, img.dims[0] - 2));
  const int y0 = std::min(static_cast<int>(std::floor(qy)), std::max(0, img.dims[1] - 2));
  const double fx = img.dims[0] == 1 ? 0.0 : qx - x0;
  const double fy = img.dims[1] == 1 ? 0.0 : qy - y0;
  const int x1 = img.dims[0] == 1 ? x0 : x0 + 1;
  const int y1 = img.dims[1] == 1 ? y0 : y0 + 1;
  const double c0 = img.at(x0, y0, z) * (1 - fx) + img.at(x1, y0, z) * fx;
  const double c1 = img.at(x0, y1, z) * (1 - fx) + img.at(x1, y1, z) * fx;
  return c0 * (1 - fy) + c1 * fy;
}

}  // namespace

std::pair<VoxelGrid, std::vector<SliceShiftRecord>> inject_slice_shifts(const VoxelGrid& image,
                                                                        double sigma_mm,
                                                                        double fraction,
                                                                        uint64_t seed,
                                                                        int image_index) {
  image.validate("inject_slice_shifts");
  if (!std::isfinite(sigma_mm) || sigma_mm < 0.0)
    throw_validation("inject_slice_shifts: sigma must be finite and >= 0");
  VoxelGrid shifted = image;
  std::vector<SliceShiftRecord> records;
  if (sigma_mm == 0.0 || fraction <= 0.0) return {std::move(shifted), std::move(records)};

  const CounterRng sel = CounterRng::derive(seed, kStreamShiftSelect);
  const CounterRng draw = CounterRng::derive(seed, kStreamShiftDraw);
  for (int z = 0; z < image.dims[2]; ++z) {
    const uint64_t c = 1024 * static_cast<uint64_t>(image_index) + static_cast<uint64_t>(z);
    if (sel.uniform(c) >= fraction) continue;
    SliceShiftRecord rec;
    rec.image = image_index;
    rec.slice = z;
    rec.dx = sigma_mm * draw.normal(2 * c);
    rec.dy = sigma_mm * draw.normal(2 * c + 1);
    records.push_back(rec);
    // Resample the slice through the shift: new(p) = old(p + d).
    for (int y = 0; y < image.dims[1]; ++y) {
      for (int x = 0; x < image.dims[0]; ++x) {
        const double qx = x + rec.dx / image.spacing[0];
        const double qy = y + rec.dy / image.spacing[1];
        shifted.at(x, y, z) = bilinear_clamped(image, qx, qy, z);
      }
    }
  }
  return {std::move(shifted), std::move(records)};
}

std::pair<VoxelGrid, FfdDeformation> inject_random_ffd(const VoxelGrid& volume,
                                                       const Vec3& mesh_spacing_mm,
                                                       double sigma_mm, uint64_t seed) {
  volume.validate("inject_random_ffd");
  if (sigma_mm < 0.0) throw_validation("inject_random_ffd: sigma must be >= 0");
  FfdDeformation field = FfdDeformation::for_domain(volume.layout(), mesh_spacing_mm);
  if (sigma_mm > 0.0) {
    const CounterRng rng = CounterRng::derive(seed, kStreamFfd);
    for (std::size_t d = 0; d < field.phi.size(); ++d)
      for (int a = 0; a < 3; ++a)
        field.phi[d][static_cast<std::size_t>(a)] =
            sigma_mm * rng.normal(3 * d + static_cast<uint64_t>(a));
  }
  VoxelGrid warped = volume;
  if (sigma_mm > 0.0) {
    for (std::size_t v = 0; v < volume.voxel_count(); ++v) {
      const Vec3 p = volume.layout().voxel_center(v);
      const Vec3 q = apply_ffd(field, p);
      Vec3 qi = volume.world_to_voxel(q);
      for (int a = 0; a < 3; ++a)
        qi[a] = std::clamp(qi[a], 0.0, static_cast<double>(volume.dims[a] - 1));
      warped.values[v] = *trilinear_sample(volume, volume.voxel_to_world(qi));
    }
  }
  return {std::move(warped), std::move(field)};
}

std::pair<VoxelGrid, CropRecord> truncate_coverage(const VoxelGrid& image, double extent_mm,
                                                   uint64_t seed) {
  image.validate("truncate_coverage");
  if (extent_mm < 0.0) throw_validation("truncate_coverage: extent must be >= 0");
  GridLayout layout = image.layout();
  const CounterRng rng = CounterRng::derive(seed, kStreamCropAxis);
  const CropRecord crop = pick_crop(layout, extent_mm, rng, 0);
  apply_crop(layout, crop, "truncate_coverage");

  VoxelGrid out = VoxelGrid::zeros(layout);
  Index3 offset{0, 0, 0};
  if (crop.planes_dropped > 0 && !crop.high_end) offset[crop.axis] = crop.planes_dropped;
  for (int z = 0; z < layout.dims[2]; ++z)
    for (int y = 0; y < layout.dims[1]; ++y)
      for (int x = 0; x < layout.dims[0]; ++x)
        out.at(x, y, z) = image.at(x + offset[0], y + offset[1], z + offset[2]);
  return {std::move(out), crop};
}

}  // namespace mvmm
