#include "mvmm/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mvmm/config.hpp"
#include "mvmm/error.hpp"

namespace mvmm {

int param_count(SliceMode mode) { return mode == SliceMode::rigid ? 3 : 6; }

std::string to_string(SliceMode mode) {
  return mode == SliceMode::rigid ? "rigid" : "affine";
}

SliceMode slice_mode_from_string(const std::string& s) {
  if (s == "rigid") return SliceMode::rigid;
  if (s == "affine") return SliceMode::affine;
  throw_validation("unknown slice transform mode `" + s + "` (rigid or affine)");
}

SliceTransform SliceTransform::identity(SliceMode mode) {
  SliceTransform t;
  if (mode == SliceMode::affine) {
    t.p = {0, 0, 1, 0, 0, 1};
  }
  return t;
}

bool SliceTransform::is_identity(SliceMode mode) const {
  const SliceTransform id = identity(mode);
  const int n = param_count(mode);
  for (int j = 0; j < n; ++j)
    if (p[j] != id.p[j]) return false;
  return true;
}

SliceAffineSet SliceAffineSet::identity_for(const std::vector<VoxelGrid>& images,
                                            SliceMode mode) {
  SliceAffineSet set;
  set.mode = mode;
  set.per_image.reserve(images.size());
  for (const auto& img : images)
    set.per_image.emplace_back(static_cast<std::size_t>(img.dims[2]),
                               SliceTransform::identity(mode));
  return set;
}

bool SliceAffineSet::all_identity() const {
  for (const auto& img : per_image)
    for (const auto& t : img)
      if (!t.is_identity(mode)) return false;
  return true;
}

int slice_of(const VoxelGrid& image, double world_z) {
  const double zi = (world_z - image.origin[2]) / image.spacing[2];
  if (zi < -0.5 || zi > image.dims[2] - 1 + 0.5) return -1;
  const int s = static_cast<int>(std::lround(zi));
  return std::clamp(s, 0, image.dims[2] - 1);
}

Vec3 slice_center(const VoxelGrid& image, int slice) {
  return {image.origin[0] + 0.5 * (image.dims[0] - 1) * image.spacing[0],
          image.origin[1] + 0.5 * (image.dims[1] - 1) * image.spacing[1],
          image.origin[2] + slice * image.spacing[2]};
}

Vec3 apply_slice_params(SliceMode mode, const SliceTransform& t, const Vec3& x,
                        const Vec3& center) {
  const double dx = x[0] - center[0];
  const double dy = x[1] - center[1];
  if (mode == SliceMode::rigid) {
    const double c = std::cos(t.p[2]);
    const double s = std::sin(t.p[2]);
    return {center[0] + c * dx - s * dy + t.p[0], center[1] + s * dx + c * dy + t.p[1], x[2]};
  }
  return {center[0] + t.p[2] * dx + t.p[3] * dy + t.p[0],
          center[1] + t.p[4] * dx + t.p[5] * dy + t.p[1], x[2]};
}

Vec3 invert_slice_params(SliceMode mode, const SliceTransform& t, const Vec3& y,
                         const Vec3& center) {
  const double ux = y[0] - center[0] - t.p[0];
  const double uy = y[1] - center[1] - t.p[1];
  if (mode == SliceMode::rigid) {
    const double c = std::cos(t.p[2]);
    const double s = std::sin(t.p[2]);
    return {center[0] + c * ux + s * uy, center[1] - s * ux + c * uy, y[2]};
  }
  const double det = t.p[2] * t.p[5] - t.p[3] * t.p[4];
  if (std::abs(det) < 1e-12)
    throw_numeric("slice affine transform is singular and cannot be inverted");
  return {center[0] + (t.p[5] * ux - t.p[3] * uy) / det,
          center[1] + (-t.p[4] * ux + t.p[2] * uy) / det, y[2]};
}

Vec3 slice_param_jacobian(SliceMode mode, const SliceTransform& t, const Vec3& x,
                          const Vec3& center, int j) {
  const double dx = x[0] - center[0];
  const double dy = x[1] - center[1];
  if (mode == SliceMode::rigid) {
    switch (j) {
      case 0: return {1.0, 0.0, 0.0};
      case 1: return {0.0, 1.0, 0.0};
      case 2: {
        const double c = std::cos(t.p[2]);
        const double s = std::sin(t.p[2]);
        return {-s * dx - c * dy, c * dx - s * dy, 0.0};
      }
    }
  } else {
    switch (j) {
      case 0: return {1.0, 0.0, 0.0};
      case 1: return {0.0, 1.0, 0.0};
      case 2: return {dx, 0.0, 0.0};
      case 3: return {dy, 0.0, 0.0};
      case 4: return {0.0, dx, 0.0};
      case 5: return {0.0, dy, 0.0};
    }
  }
  throw_validation("slice transform parameter index out of range");
}

Vec3 apply_slice_transform(const SliceAffineSet& set, const VoxelGrid& image, int image_index,
                           const Vec3& x) {
  const int s = slice_of(image, x[2]);
  if (s < 0) return x;
  const SliceTransform& t = set.per_image[static_cast<std::size_t>(image_index)]
                                         [static_cast<std::size_t>(s)];
  if (t.is_identity(set.mode)) return x;
  return apply_slice_params(set.mode, t, x, slice_center(image, s));
}

FfdDeformation FfdDeformation::for_domain(const GridLayout& domain, const Vec3& spacing_mm) {
  for (int a = 0; a < 3; ++a)
    if (!(spacing_mm[a] > 0.0)) throw_validation("FFD control spacing must be > 0");
  FfdDeformation ffd;
  ffd.cp_spacing = spacing_mm;
  for (int a = 0; a < 3; ++a) {
    ffd.cp_origin[a] = domain.origin[a] - spacing_mm[a];
    const double extent = (domain.dims[a] - 1) * domain.spacing[a];
    // local coord over the domain spans [1, 1 + extent/spacing]; the blend
    // needs floor(u)-1 .. floor(u)+2 on each axis.
    ffd.cp_dims[a] = static_cast<int>(std::floor(extent / spacing_mm[a])) + 4;
  }
  ffd.phi.assign(ffd.control_count(), Vec3{0.0, 0.0, 0.0});
  return ffd;
}

std::size_t FfdDeformation::control_count() const {
  return static_cast<std::size_t>(cp_dims[0]) * cp_dims[1] * cp_dims[2];
}

bool FfdDeformation::is_identity() const {
  if (phi.empty()) return true;
  for (const auto& d : phi)
    if (d[0] != 0.0 || d[1] != 0.0 || d[2] != 0.0) return false;
  return true;
}

void FfdDeformation::validate(const std::string& context) const {
  if (cp_dims[0] == 0 && cp_dims[1] == 0 && cp_dims[2] == 0) {
    if (!phi.empty()) throw_validation(context + ": empty FFD lattice with parameters");
    return;
  }
  for (int a = 0; a < 3; ++a) {
    if (cp_dims[a] < 4) throw_validation(context + ": FFD lattice needs >= 4 points per axis");
    if (!(cp_spacing[a] > 0.0)) throw_validation(context + ": FFD spacing must be > 0");
  }
  if (phi.size() != control_count())
    throw_validation(context + ": FFD parameter count does not match lattice");
}

std::array<double, 4> bspline_weights(double t) {
  const double t2 = t * t;
  const double t3 = t2 * t;
  const double omt = 1.0 - t;
  return {omt * omt * omt / 6.0, (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
          (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0, t3 / 6.0};
}

namespace {

inline int clamp_index(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

}  // namespace

FfdSupport ffd_weights_at(const FfdDeformation& ffd, const Vec3& x) {
  FfdSupport sup{};
  int base[3];
  std::array<double, 4> w[3];
  for (int a = 0; a < 3; ++a) {
    const double u = (x[a] - ffd.cp_origin[a]) / ffd.cp_spacing[a];
    const double fl = std::floor(u);
    base[a] = static_cast<int>(fl) - 1;
    w[a] = bspline_weights(u - fl);
  }
  int out = 0;
  for (int n = 0; n < 4; ++n) {
    const int kz = clamp_index(base[2] + n, ffd.cp_dims[2]);
    for (int m = 0; m < 4; ++m) {
      const int ky = clamp_index(base[1] + m, ffd.cp_dims[1]);
      const double wyz = w[1][m] * w[2][n];
      for (int l = 0; l < 4; ++l) {
        const int kx = clamp_index(base[0] + l, ffd.cp_dims[0]);
        sup.index[out] = kx + ffd.cp_dims[0] * (ky + ffd.cp_dims[1] * kz);
        sup.weight[out] = w[0][l] * wyz;
        ++out;
      }
    }
  }
  return sup;
}

Vec3 ffd_displacement(const FfdDeformation& ffd, const Vec3& x) {
  if (ffd.phi.empty()) return {0.0, 0.0, 0.0};
  const FfdSupport sup = ffd_weights_at(ffd, x);
  Vec3 d{0.0, 0.0, 0.0};
  for (int i = 0; i < 64; ++i) {
    const Vec3& cp = ffd.phi[static_cast<std::size_t>(sup.index[i])];
    d[0] += sup.weight[i] * cp[0];
    d[1] += sup.weight[i] * cp[1];
    d[2] += sup.weight[i] * cp[2];
  }
  return d;
}

Vec3 apply_ffd(const FfdDeformation& ffd, const Vec3& x) {
  if (ffd.is_identity()) return x;
  const Vec3 d = ffd_displacement(ffd, x);
  return {x[0] + d[0], x[1] + d[1], x[2] + d[2]};
}

TransformState TransformState::identity_for(const std::vector<VoxelGrid>& images,
                                            SliceMode mode) {
  TransformState t;
  t.slices = SliceAffineSet::identity_for(images, mode);
  return t;
}

void write_transform_state(const TransformState& state, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw_validation("cannot write transform state: " + path);
  out << "[slices]\n";
  out << "mode = " << to_string(state.slices.mode) << "\n";
  const int n = param_count(state.slices.mode);
  for (std::size_t i = 0; i < state.slices.per_image.size(); ++i) {
    for (std::size_t s = 0; s < state.slices.per_image[i].size(); ++s) {
      out << "slice = " << i << " " << s;
      for (int j = 0; j < n; ++j)
        out << " " << format_double(state.slices.per_image[i][s].p[static_cast<std::size_t>(j)]);
      out << "\n";
    }
  }
  out << "[ffd]\n";
  const auto& f = state.ffd;
  out << "cp_dims = " << f.cp_dims[0] << " " << f.cp_dims[1] << " " << f.cp_dims[2] << "\n";
  out << "cp_spacing = " << format_double(f.cp_spacing[0]) << " " << format_double(f.cp_spacing[1])
      << " " << format_double(f.cp_spacing[2]) << "\n";
  out << "cp_origin = " << format_double(f.cp_origin[0]) << " " << format_double(f.cp_origin[1])
      << " " << format_double(f.cp_origin[2]) << "\n";
  for (std::size_t d = 0; d < f.phi.size(); ++d) {
    out << "phi = " << d << " " << format_double(f.phi[d][0]) << " " << format_double(f.phi[d][1])
        << " " << format_double(f.phi[d][2]) << "\n";
  }
  if (!out) throw_validation("failed writing transform state: " + path);
}

TransformState read_transform_state(const std::string& path) {
  const ConfigDoc doc = ConfigDoc::parse_file(path);
  doc.enforce_schema({{"slices", {"mode", "slice"}},
                      {"ffd", {"cp_dims", "cp_spacing", "cp_origin", "phi"}}});
  TransformState state;

  const ConfigSection& slices = doc.require("slices");
  state.slices.mode = slice_mode_from_string(slices.require("mode", path));
  const int n = param_count(state.slices.mode);
  for (const auto& line : slices.get_all("slice")) {
    const auto toks = split_tokens(line);
    if (static_cast<int>(toks.size()) != 2 + n)
      throw_validation(path + ": slice entry needs image, slice and " + std::to_string(n) +
                       " parameters: `" + line + "`");
    const int img = parse_int(toks[0], path);
    const int sl = parse_int(toks[1], path);
    if (img < 0 || sl < 0) throw_validation(path + ": negative slice index");
    if (state.slices.per_image.size() <= static_cast<std::size_t>(img))
      state.slices.per_image.resize(static_cast<std::size_t>(img) + 1);
    auto& v = state.slices.per_image[static_cast<std::size_t>(img)];
    if (v.size() <= static_cast<std::size_t>(sl))
      v.resize(static_cast<std::size_t>(sl) + 1, SliceTransform::identity(state.slices.mode));
    for (int j = 0; j < n; ++j)
      v[static_cast<std::size_t>(sl)].p[static_cast<std::size_t>(j)] =
          parse_double(toks[static_cast<std::size_t>(2 + j)], path);
  }

  const ConfigSection& ffd = doc.require("ffd");
  const auto id = parse_itriplet(ffd.require("cp_dims", path), path);
  state.ffd.cp_dims = {id[0], id[1], id[2]};
  const auto sp = parse_triplet(ffd.require("cp_spacing", path), path);
  state.ffd.cp_spacing = {sp[0], sp[1], sp[2]};
  const auto og = parse_triplet(ffd.require("cp_origin", path), path);
  state.ffd.cp_origin = {og[0], og[1], og[2]};
  state.ffd.phi.assign(state.ffd.control_count(), Vec3{0.0, 0.0, 0.0});
  for (const auto& line : ffd.get_all("phi")) {
    const auto toks = split_tokens(line);
    if (toks.size() != 4) throw_validation(path + ": phi entry needs index and 3 components");
    const long long d = parse_int64(toks[0], path);
    if (d < 0 || static_cast<std::size_t>(d) >= state.ffd.phi.size())
      throw_validation(path + ": phi index out of range: " + toks[0]);
    state.ffd.phi[static_cast<std::size_t>(d)] = {parse_double(toks[1], path),
                                                  parse_double(toks[2], path),
                                                  parse_double(toks[3], path)};
  }
  state.ffd.validate(path);
  return state;
}

}  // namespace mvmm
