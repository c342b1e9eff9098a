#include "mvmm/volume.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mvmm/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "volume payload I/O assumes a little-endian host");

namespace mvmm {

namespace {

std::string fmt_triplet_d(const Vec3& v) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g", v[0], v[1], v[2]);
  return buf;
}

std::string fmt_triplet_i(const Index3& v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%d %d %d", v[0], v[1], v[2]);
  return buf;
}

void check_geometry(const Index3& dims, const Vec3& spacing, const std::string& context) {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1)
      throw_validation(context + ": dims must be >= 1 on every axis");
    if (!(spacing[a] > 0.0))
      throw_validation(context + ": spacing must be > 0 on every axis");
  }
}

std::string raw_path_for(const std::string& hdr_path) {
  if (hdr_path.size() < 5 || hdr_path.substr(hdr_path.size() - 5) != ".vhdr")
    throw_validation("volume header path must end in .vhdr: " + hdr_path);
  return hdr_path.substr(0, hdr_path.size() - 5) + ".vraw";
}

struct VolumeHeader {
  Index3 dims;
  Vec3 spacing;
  Vec3 origin;
};

VolumeHeader read_header(const std::string& hdr_path) {
  std::ifstream in(hdr_path);
  if (!in) throw_validation("cannot open volume header: " + hdr_path);
  VolumeHeader h{};
  bool have_dims = false, have_spacing = false, have_origin = false, have_dtype = false;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw_validation(hdr_path + ":" + std::to_string(lineno) + ": expected `key = value`");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    std::istringstream vs(value);
    if (key == "dims") {
      if (!(vs >> h.dims[0] >> h.dims[1] >> h.dims[2]))
        throw_validation(hdr_path + ": bad dims value");
      have_dims = true;
    } else if (key == "spacing") {
      if (!(vs >> h.spacing[0] >> h.spacing[1] >> h.spacing[2]))
        throw_validation(hdr_path + ": bad spacing value");
      have_spacing = true;
    } else if (key == "origin") {
      if (!(vs >> h.origin[0] >> h.origin[1] >> h.origin[2]))
        throw_validation(hdr_path + ": bad origin value");
      have_origin = true;
    } else if (key == "dtype") {
      if (value != "f32le")
        throw_validation(hdr_path + ": unsupported dtype `" + value + "` (only f32le)");
      have_dtype = true;
    } else {
      throw_validation(hdr_path + ":" + std::to_string(lineno) + ": unknown key `" + key + "`");
    }
  }
  if (!have_dims || !have_spacing || !have_origin || !have_dtype)
    throw_validation(hdr_path + ": header must define dims, spacing, origin and dtype");
  check_geometry(h.dims, h.spacing, hdr_path);
  return h;
}

void write_header(const std::string& hdr_path, const Index3& dims, const Vec3& spacing,
                  const Vec3& origin) {
  std::ofstream out(hdr_path, std::ios::trunc);
  if (!out) throw_validation("cannot write volume header: " + hdr_path);
  out << "dims = " << fmt_triplet_i(dims) << "\n";
  out << "spacing = " << fmt_triplet_d(spacing) << "\n";
  out << "origin = " << fmt_triplet_d(origin) << "\n";
  out << "dtype = f32le\n";
  if (!out) throw_validation("failed writing volume header: " + hdr_path);
}

std::vector<float> read_payload(const std::string& raw_path, std::size_t count) {
  std::ifstream in(raw_path, std::ios::binary | std::ios::ate);
  if (!in) throw_validation("cannot open volume payload: " + raw_path);
  const auto size = static_cast<std::size_t>(in.tellg());
  if (size != count * sizeof(float))
    throw_validation("payload size mismatch in " + raw_path + ": expected " +
                     std::to_string(count * sizeof(float)) + " bytes, found " +
                     std::to_string(size));
  in.seekg(0);
  std::vector<float> data(count);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(size));
  if (!in) throw_validation("failed reading volume payload: " + raw_path);
  return data;
}

void write_payload(const std::string& raw_path, const std::vector<float>& data) {
  std::ofstream out(raw_path, std::ios::binary | std::ios::trunc);
  if (!out) throw_validation("cannot write volume payload: " + raw_path);
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw_validation("failed writing volume payload: " + raw_path);
}

}  // namespace

std::size_t GridLayout::voxel_count() const {
  return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
}

Vec3 GridLayout::voxel_center(int x, int y, int z) const {
  return {origin[0] + x * spacing[0], origin[1] + y * spacing[1], origin[2] + z * spacing[2]};
}

Vec3 GridLayout::voxel_center(std::size_t linear) const {
  const Index3 i = unravel(linear);
  return voxel_center(i[0], i[1], i[2]);
}

Index3 GridLayout::unravel(std::size_t linear) const {
  const int x = static_cast<int>(linear % dims[0]);
  const int y = static_cast<int>((linear / dims[0]) % dims[1]);
  const int z = static_cast<int>(linear / (static_cast<std::size_t>(dims[0]) * dims[1]));
  return {x, y, z};
}

void GridLayout::validate(const std::string& context) const {
  check_geometry(dims, spacing, context);
}

VoxelGrid VoxelGrid::zeros(Index3 dims, Vec3 spacing, Vec3 origin) {
  check_geometry(dims, spacing, "VoxelGrid::zeros");
  VoxelGrid g;
  g.dims = dims;
  g.spacing = spacing;
  g.origin = origin;
  g.values.assign(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2], 0.0);
  return g;
}

VoxelGrid VoxelGrid::zeros(const GridLayout& layout) {
  return zeros(layout.dims, layout.spacing, layout.origin);
}

std::size_t VoxelGrid::voxel_count() const {
  return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
}

std::size_t VoxelGrid::linear_index(int x, int y, int z) const {
  return static_cast<std::size_t>(x) +
         static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(y) +
                                              static_cast<std::size_t>(dims[1]) * z);
}

Vec3 VoxelGrid::voxel_to_world(const Vec3& q) const {
  return {origin[0] + q[0] * spacing[0], origin[1] + q[1] * spacing[1],
          origin[2] + q[2] * spacing[2]};
}

Vec3 VoxelGrid::world_to_voxel(const Vec3& p) const {
  return {(p[0] - origin[0]) / spacing[0], (p[1] - origin[1]) / spacing[1],
          (p[2] - origin[2]) / spacing[2]};
}

Vec3 VoxelGrid::voxel_center(int x, int y, int z) const {
  return voxel_to_world({static_cast<double>(x), static_cast<double>(y),
                         static_cast<double>(z)});
}

bool VoxelGrid::contains_world(const Vec3& p) const {
  const Vec3 q = world_to_voxel(p);
  for (int a = 0; a < 3; ++a) {
    if (!(q[a] >= 0.0 && q[a] <= static_cast<double>(dims[a] - 1))) return false;
  }
  return true;
}

std::pair<Vec3, Vec3> VoxelGrid::hull() const {
  Vec3 lo = origin;
  Vec3 hi;
  for (int a = 0; a < 3; ++a) hi[a] = origin[a] + (dims[a] - 1) * spacing[a];
  return {lo, hi};
}

void VoxelGrid::validate(const std::string& context) const {
  check_geometry(dims, spacing, context);
  if (values.size() != voxel_count())
    throw_validation(context + ": values length " + std::to_string(values.size()) +
                     " does not match dims product " + std::to_string(voxel_count()));
}

std::optional<double> trilinear_sample(const VoxelGrid& grid, const Vec3& p) {
  const Vec3 q = grid.world_to_voxel(p);
  int i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    const double top = static_cast<double>(grid.dims[a] - 1);
    if (!(q[a] >= 0.0 && q[a] <= top)) return std::nullopt;
    if (grid.dims[a] == 1) {
      i0[a] = 0;
      f[a] = 0.0;
    } else {
      int i = static_cast<int>(std::floor(q[a]));
      if (i > grid.dims[a] - 2) i = grid.dims[a] - 2;
      i0[a] = i;
      f[a] = q[a] - i;
    }
  }
  const int x1 = grid.dims[0] == 1 ? 0 : 1;
  const int y1 = grid.dims[1] == 1 ? 0 : 1;
  const int z1 = grid.dims[2] == 1 ? 0 : 1;
  const double c000 = grid.at(i0[0], i0[1], i0[2]);
  const double c100 = grid.at(i0[0] + x1, i0[1], i0[2]);
  const double c010 = grid.at(i0[0], i0[1] + y1, i0[2]);
  const double c110 = grid.at(i0[0] + x1, i0[1] + y1, i0[2]);
  const double c001 = grid.at(i0[0], i0[1], i0[2] + z1);
  const double c101 = grid.at(i0[0] + x1, i0[1], i0[2] + z1);
  const double c011 = grid.at(i0[0], i0[1] + y1, i0[2] + z1);
  const double c111 = grid.at(i0[0] + x1, i0[1] + y1, i0[2] + z1);
  const double c00 = c000 + (c100 - c000) * f[0];
  const double c10 = c010 + (c110 - c010) * f[0];
  const double c01 = c001 + (c101 - c001) * f[0];
  const double c11 = c011 + (c111 - c011) * f[0];
  const double c0 = c00 + (c10 - c00) * f[1];
  const double c1 = c01 + (c11 - c01) * f[1];
  return c0 + (c1 - c0) * f[2];
}

double default_gradient_step(const VoxelGrid& grid) {
  return 0.5 * std::min({grid.spacing[0], grid.spacing[1], grid.spacing[2]});
}

std::optional<Vec3> image_gradient(const VoxelGrid& grid, const Vec3& p, double step_mm) {
  const double h = step_mm > 0.0 ? step_mm : default_gradient_step(grid);
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    Vec3 lo = p, hi = p;
    lo[a] -= h;
    hi[a] += h;
    const auto vlo = trilinear_sample(grid, lo);
    const auto vhi = trilinear_sample(grid, hi);
    if (!vlo || !vhi) return std::nullopt;
    g[a] = (*vhi - *vlo) / (2.0 * h);
  }
  return g;
}

LabelVolume LabelVolume::filled(const GridLayout& layout, int32_t value) {
  layout.validate("LabelVolume::filled");
  LabelVolume v;
  v.dims = layout.dims;
  v.spacing = layout.spacing;
  v.origin = layout.origin;
  v.labels.assign(layout.voxel_count(), value);
  return v;
}

std::size_t LabelVolume::voxel_count() const {
  return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
}

std::size_t LabelVolume::linear_index(int x, int y, int z) const {
  return static_cast<std::size_t>(x) +
         static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(y) +
                                              static_cast<std::size_t>(dims[1]) * z);
}

bool LabelVolume::same_lattice(const LabelVolume& other, double tol) const {
  if (dims != other.dims) return false;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(spacing[a] - other.spacing[a]) > tol) return false;
    if (std::abs(origin[a] - other.origin[a]) > tol) return false;
  }
  return true;
}

void write_volume(const VoxelGrid& grid, const std::string& hdr_path) {
  grid.validate("write_volume");
  write_header(hdr_path, grid.dims, grid.spacing, grid.origin);
  std::vector<float> data(grid.values.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(grid.values[i]);
  write_payload(raw_path_for(hdr_path), data);
}

VoxelGrid read_volume(const std::string& hdr_path) {
  const VolumeHeader h = read_header(hdr_path);
  VoxelGrid g;
  g.dims = h.dims;
  g.spacing = h.spacing;
  g.origin = h.origin;
  const auto data = read_payload(raw_path_for(hdr_path), g.voxel_count());
  g.values.assign(data.begin(), data.end());
  return g;
}

void write_label_volume(const LabelVolume& vol, const std::string& hdr_path) {
  write_volume(to_value_grid(vol), hdr_path);
}

LabelVolume read_label_volume(const std::string& hdr_path) {
  return to_label_volume(read_volume(hdr_path));
}

LabelVolume to_label_volume(const VoxelGrid& grid) {
  LabelVolume v;
  v.dims = grid.dims;
  v.spacing = grid.spacing;
  v.origin = grid.origin;
  v.labels.resize(grid.values.size());
  for (std::size_t i = 0; i < grid.values.size(); ++i) {
    const double rounded = std::nearbyint(grid.values[i]);
    if (std::abs(grid.values[i] - rounded) > 1e-6)
      throw_validation("volume holds non-integer value " + std::to_string(grid.values[i]) +
                       " where labels were expected");
    v.labels[i] = static_cast<int32_t>(rounded);
  }
  return v;
}

VoxelGrid to_value_grid(const LabelVolume& vol) {
  VoxelGrid g;
  g.dims = vol.dims;
  g.spacing = vol.spacing;
  g.origin = vol.origin;
  g.values.assign(vol.labels.begin(), vol.labels.end());
  return g;
}

}  // namespace mvmm
