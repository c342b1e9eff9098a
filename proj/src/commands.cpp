#include "mvmm/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mvmm/config.hpp"
#include "mvmm/error.hpp"
#include "mvmm/metrics.hpp"
#include "mvmm/parallel.hpp"

namespace fs = std::filesystem;

namespace mvmm {

namespace {

const std::vector<std::string> kScheduleKeys = {
    "preset",        "enable_sc",    "enable_ffd",  "pre_align",  "slice_mode",
    "em_iters",      "em_tol",       "max_rounds",  "round_tol",  "ffd_spacing_mm",
    "step_trans_mm", "step_rot_rad", "step_affine", "step_ffd_mm", "max_halvings"};

Schedule parse_schedule(const ConfigSection* sec, const std::string& origin) {
  Schedule s;
  if (!sec) return s;
  if (const auto preset = sec->get("preset")) s = Schedule::preset(*preset);
  if (const auto v = sec->get("enable_sc")) s.enable_sc = parse_bool(*v, origin);
  if (const auto v = sec->get("enable_ffd")) s.enable_ffd = parse_bool(*v, origin);
  if (const auto v = sec->get("pre_align")) s.pre_align = parse_bool(*v, origin);
  if (const auto v = sec->get("slice_mode")) s.slice_mode = slice_mode_from_string(*v);
  if (const auto v = sec->get("em_iters")) s.em_iters = parse_int(*v, origin);
  if (const auto v = sec->get("em_tol")) s.em_tol = parse_double(*v, origin);
  if (const auto v = sec->get("max_rounds")) s.max_rounds = parse_int(*v, origin);
  if (const auto v = sec->get("round_tol")) s.round_tol = parse_double(*v, origin);
  if (const auto v = sec->get("ffd_spacing_mm")) s.ffd_spacing_mm = parse_double(*v, origin);
  if (const auto v = sec->get("step_trans_mm")) s.step_trans_mm = parse_double(*v, origin);
  if (const auto v = sec->get("step_rot_rad")) s.step_rot_rad = parse_double(*v, origin);
  if (const auto v = sec->get("step_affine")) s.step_affine = parse_double(*v, origin);
  if (const auto v = sec->get("step_ffd_mm")) s.step_ffd_mm = parse_double(*v, origin);
  if (const auto v = sec->get("max_halvings")) s.max_halvings = parse_int(*v, origin);
  if (s.em_iters < 1 || s.max_rounds < 1 || s.max_halvings < 0)
    throw_validation(origin + ": schedule iteration budgets must be positive");
  return s;
}

std::string atlas_map_path(const std::string& prefix, int label_id) {
  return prefix + "_k" + std::to_string(label_id) + ".vhdr";
}

AtlasPrior load_atlas(const std::string& prefix, const std::vector<int>& labels) {
  AtlasPrior atlas;
  atlas.labels = labels;
  for (const int id : labels) atlas.maps.push_back(read_volume(atlas_map_path(prefix, id)));
  atlas.validate();
  return atlas;
}

struct LoadedInputs {
  MultivariateImageSet images;
  AtlasPrior atlas;
};

LoadedInputs load_inputs(const RunConfig& cfg) {
  LoadedInputs in;
  for (const auto& p : cfg.image_paths) in.images.images.push_back(read_volume(p));
  in.images.common_space =
      cfg.common_space ? *cfg.common_space : in.images.images.front().layout();
  in.atlas = load_atlas(cfg.atlas_prefix, cfg.label_config.labels);
  in.images.validate();
  return in;
}

void require_exists(const std::string& path, const std::string& origin) {
  if (!fs::exists(path))
    throw_validation(origin + ": referenced path does not exist: " + path);
}

std::string fmt4(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

RunConfig parse_run_config(const std::string& path) {
  const ConfigDoc doc = ConfigDoc::parse_file(path);
  doc.enforce_schema({{"input", {"image", "atlas"}},
                      {"labels", {"labels", "components"}},
                      {"common", {"dims", "spacing", "origin"}},
                      {"schedule", kScheduleKeys},
                      {"output", {"dir", "write_posteriors"}},
                      {"run", {"seed", "workers"}},
                      {"evaluate", {"truth_labels", "labels"}}});

  RunConfig cfg;
  const ConfigSection& input = doc.require("input");
  cfg.image_paths = input.get_all("image");
  if (cfg.image_paths.empty()) throw_validation(path + ": [input] needs at least one image");
  cfg.atlas_prefix = input.require("atlas", path);

  const ConfigSection& labels = doc.require("labels");
  for (const auto& tok : split_tokens(labels.require("labels", path)))
    cfg.label_config.labels.push_back(parse_int(tok, path));
  cfg.label_config.n_components.assign(
      cfg.image_paths.size(), std::vector<int>(cfg.label_config.labels.size(), 1));
  for (const auto& line : labels.get_all("components")) {
    const auto toks = split_tokens(line);
    if (toks.size() != 3)
      throw_validation(path + ": components entry needs image, label, count: `" + line + "`");
    const int i = parse_int(toks[0], path);
    const int k = cfg.label_config.label_index(parse_int(toks[1], path));
    if (i < 0 || i >= static_cast<int>(cfg.image_paths.size()) || k < 0)
      throw_validation(path + ": components entry out of range: `" + line + "`");
    cfg.label_config.n_components[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] =
        parse_int(toks[2], path);
  }
  cfg.label_config.validate();

  if (const auto* common = doc.find("common")) {
    GridLayout g;
    const auto d = parse_itriplet(common->require("dims", path), path);
    g.dims = {d[0], d[1], d[2]};
    const auto s = parse_triplet(common->require("spacing", path), path);
    g.spacing = {s[0], s[1], s[2]};
    const auto o = parse_triplet(common->require("origin", path), path);
    g.origin = {o[0], o[1], o[2]};
    g.validate(path + ": [common]");
    cfg.common_space = g;
  }

  cfg.schedule = parse_schedule(doc.find("schedule"), path);

  const ConfigSection& output = doc.require("output");
  cfg.out_dir = output.require("dir", path);
  if (const auto v = output.get("write_posteriors"))
    cfg.write_posteriors = parse_bool(*v, path);

  if (const auto* run = doc.find("run")) {
    if (const auto v = run->get("seed"))
      cfg.seed = static_cast<uint64_t>(parse_int64(*v, path));
    if (const auto v = run->get("workers")) cfg.workers = parse_int(*v, path);
  }
  if (const auto* ev = doc.find("evaluate")) {
    cfg.truth_labels_path = ev->require("truth_labels", path);
    for (const auto& tok : split_tokens(ev->require("labels", path)))
      cfg.eval_labels.push_back(parse_int(tok, path));
  }

  for (const auto& p : cfg.image_paths) require_exists(p, path);
  for (const int id : cfg.label_config.labels)
    require_exists(atlas_map_path(cfg.atlas_prefix, id), path);
  if (!cfg.truth_labels_path.empty()) require_exists(cfg.truth_labels_path, path);
  return cfg;
}

PhantomSpec parse_phantom_spec(const std::string& path) {
  const ConfigDoc doc = ConfigDoc::parse_file(path);

  PhantomSpec spec = PhantomSpec::defaults();
  spec.sequences.clear();

  // Sequence names feed the per-sequence intensity section names, so the
  // schema is assembled in two steps.
  const ConfigSection& sequences = doc.require("sequences");
  std::map<std::string, std::vector<std::string>> schema = {
      {"lattice", {"dims", "spacing", "origin"}},
      {"geometry",
       {"body_semiaxes", "shell_outer_semiaxes", "core_semiaxes", "scar_center_offset",
        "scar_radius"}},
      {"sequences", {"sequence"}},
      {"atlas", {"sigma_mm", "pad_voxels"}},
      {"corruption",
       {"shift_sigma_mm", "shift_fraction", "ffd_sigma_mm", "ffd_mesh_mm", "truncate"}},
      {"run", {"seed"}}};
  for (const auto& line : sequences.get_all("sequence")) {
    const auto toks = split_tokens(line);
    if (toks.size() != 4)
      throw_validation(path + ": sequence entry needs name and 3 spacings: `" + line + "`");
    SequenceSpec s;
    s.name = toks[0];
    s.spacing = {parse_double(toks[1], path), parse_double(toks[2], path),
                 parse_double(toks[3], path)};
    s.by_label.resize(4);
    spec.sequences.push_back(std::move(s));
    schema["intensity." + toks[0]] = {"background", "body", "shell", "core", "scar"};
  }
  doc.enforce_schema(schema);

  if (const auto* lattice = doc.find("lattice")) {
    const auto d = parse_itriplet(lattice->require("dims", path), path);
    spec.lattice.dims = {d[0], d[1], d[2]};
    const auto s = parse_triplet(lattice->require("spacing", path), path);
    spec.lattice.spacing = {s[0], s[1], s[2]};
    const auto o = parse_triplet(lattice->require("origin", path), path);
    spec.lattice.origin = {o[0], o[1], o[2]};
  }
  if (const auto* geo = doc.find("geometry")) {
    auto triplet = [&](const char* key, Vec3& out) {
      if (const auto v = geo->get(key)) {
        const auto t = parse_triplet(*v, path);
        out = {t[0], t[1], t[2]};
      }
    };
    triplet("body_semiaxes", spec.body_semiaxes);
    triplet("shell_outer_semiaxes", spec.shell_outer_semiaxes);
    triplet("core_semiaxes", spec.core_semiaxes);
    triplet("scar_center_offset", spec.scar_center_offset);
    if (const auto v = geo->get("scar_radius")) spec.scar_radius = parse_double(*v, path);
  }
  for (auto& seq : spec.sequences) {
    const ConfigSection& intensity = doc.require("intensity." + seq.name);
    auto entry = [&](const char* key) {
      const auto toks = split_tokens(intensity.require(key, path));
      if (toks.size() != 2)
        throw_validation(path + ": intensity entry `" + key + "` needs mean and stddev");
      return IntensityEntry{parse_double(toks[0], path), parse_double(toks[1], path)};
    };
    seq.by_label[kPhantomBackground] = entry("background");
    seq.by_label[kPhantomBody] = entry("body");
    seq.by_label[kPhantomShell] = entry("shell");
    seq.by_label[kPhantomCore] = entry("core");
    seq.scar = entry("scar");
  }
  if (const auto* atlas = doc.find("atlas")) {
    if (const auto v = atlas->get("sigma_mm")) spec.atlas_sigma_mm = parse_double(*v, path);
    if (const auto v = atlas->get("pad_voxels")) spec.atlas_pad_voxels = parse_int(*v, path);
  }
  if (const auto* cor = doc.find("corruption")) {
    if (const auto v = cor->get("shift_sigma_mm")) spec.shift_sigma_mm = parse_double(*v, path);
    if (const auto v = cor->get("shift_fraction")) spec.shift_fraction = parse_double(*v, path);
    if (const auto v = cor->get("ffd_sigma_mm")) spec.ffd_sigma_mm = parse_double(*v, path);
    if (const auto v = cor->get("ffd_mesh_mm")) {
      const auto t = parse_triplet(*v, path);
      spec.ffd_mesh_mm = {t[0], t[1], t[2]};
    }
    const auto truncs = cor->get_all("truncate");
    if (!truncs.empty()) {
      spec.truncate_mm.assign(spec.sequences.size(), 0.0);
      for (const auto& line : truncs) {
        const auto toks = split_tokens(line);
        if (toks.size() != 2)
          throw_validation(path + ": truncate entry needs sequence name and extent: `" + line +
                           "`");
        bool found = false;
        for (std::size_t i = 0; i < spec.sequences.size(); ++i) {
          if (spec.sequences[i].name == toks[0]) {
            spec.truncate_mm[i] = parse_double(toks[1], path);
            found = true;
          }
        }
        if (!found)
          throw_validation(path + ": truncate names unknown sequence `" + toks[0] + "`");
      }
    }
  }
  if (const auto* run = doc.find("run"))
    if (const auto v = run->get("seed")) spec.seed = static_cast<uint64_t>(parse_int64(*v, path));
  spec.validate();
  return spec;
}

void cmd_phantom(const std::string& spec_path, const std::string& out_dir, int workers) {
  (void)workers;  // generation is already deterministic and cheap
  const PhantomSpec spec = parse_phantom_spec(spec_path);
  const PhantomOutput out = generate_phantom(spec);

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);

  for (std::size_t i = 0; i < spec.sequences.size(); ++i)
    write_volume(out.images.images[i], (dir / (spec.sequences[i].name + ".vhdr")).string());
  write_label_volume(out.truth.labels, (dir / "truth_labels.vhdr").string());
  for (std::size_t k = 0; k < out.atlas.maps.size(); ++k)
    write_volume(out.atlas.maps[k],
                 (dir / ("atlas_k" + std::to_string(out.atlas.labels[k]) + ".vhdr")).string());

  {
    std::ofstream truth((dir / "truth_transforms.txt").string(), std::ios::trunc);
    if (!truth) throw_validation("cannot write truth transforms");
    truth << "[shift_truth]\n";
    for (const auto& rec : out.truth.shifts)
      truth << "shift = " << rec.image << " " << rec.slice << " " << format_double(rec.dx) << " "
            << format_double(rec.dy) << "\n";
    truth << "[ffd_truth]\n";
    const auto& f = out.truth.ffd_field;
    truth << "cp_dims = " << f.cp_dims[0] << " " << f.cp_dims[1] << " " << f.cp_dims[2] << "\n";
    truth << "cp_spacing = " << format_double(f.cp_spacing[0]) << " "
          << format_double(f.cp_spacing[1]) << " " << format_double(f.cp_spacing[2]) << "\n";
    truth << "cp_origin = " << format_double(f.cp_origin[0]) << " "
          << format_double(f.cp_origin[1]) << " " << format_double(f.cp_origin[2]) << "\n";
    for (std::size_t d = 0; d < f.phi.size(); ++d)
      truth << "phi = " << d << " " << format_double(f.phi[d][0]) << " "
            << format_double(f.phi[d][1]) << " " << format_double(f.phi[d][2]) << "\n";
  }

  {
    std::ofstream manifest((dir / "manifest.txt").string(), std::ios::trunc);
    if (!manifest) throw_validation("cannot write phantom manifest");
    manifest << "[phantom]\n";
    manifest << "seed = " << spec.seed << "\n";
    manifest << "sequences =";
    for (const auto& s : spec.sequences) manifest << " " << s.name;
    manifest << "\n";
    manifest << "[hull]\n";
    for (std::size_t i = 0; i < out.images.images.size(); ++i) {
      const auto [lo, hi] = out.images.images[i].hull();
      manifest << "hull = " << i << " " << spec.sequences[i].name;
      for (int a = 0; a < 3; ++a) manifest << " " << format_double(lo[a]);
      for (int a = 0; a < 3; ++a) manifest << " " << format_double(hi[a]);
      manifest << "\n";
    }
    manifest << "[truncation]\n";
    for (std::size_t i = 0; i < out.truth.crops.size(); ++i) {
      const auto& c = out.truth.crops[i];
      manifest << "crop = " << i << " " << c.axis << " " << (c.high_end ? "high" : "low") << " "
               << format_double(c.extent_mm) << " " << c.planes_dropped << "\n";
    }
  }

  // Ready-to-run segmentation config. Sequences whose shell sub-blob has its
  // own contrast get a second shell component.
  {
    std::ofstream cfg((dir / "segment_config.txt").string(), std::ios::trunc);
    if (!cfg) throw_validation("cannot write segment config");
    cfg << "[input]\n";
    for (const auto& s : spec.sequences) cfg << "image = " << (dir / (s.name + ".vhdr")).string() << "\n";
    cfg << "atlas = " << (dir / "atlas").string() << "\n";
    cfg << "[labels]\n";
    cfg << "labels = 0 1 2 3\n";
    for (std::size_t i = 0; i < spec.sequences.size(); ++i) {
      const auto& s = spec.sequences[i];
      if (std::abs(s.scar.mean - s.by_label[kPhantomShell].mean) > 1e-9)
        cfg << "components = " << i << " " << kPhantomShell << " 2\n";
    }
    cfg << "[schedule]\n";
    cfg << "preset = mvmm-full\n";
    cfg << "[output]\n";
    cfg << "dir = " << (dir / "run").string() << "\n";
    cfg << "[run]\n";
    cfg << "seed = " << spec.seed << "\n";
    cfg << "[evaluate]\n";
    cfg << "truth_labels = " << (dir / "truth_labels.vhdr").string() << "\n";
    cfg << "labels = " << kPhantomShell << " " << kPhantomCore << "\n";
  }
}

void cmd_segment(const std::string& config_path, int workers) {
  const RunConfig cfg = parse_run_config(config_path);
  const LoadedInputs in = load_inputs(cfg);
  const int w = resolve_workers(workers > 0 ? workers : cfg.workers);

  std::ostringstream log;
  log << "RUN seed=" << cfg.seed << " config=" << config_path << "\n";

  fs::create_directories(cfg.out_dir);
  const fs::path dir(cfg.out_dir);
  IcmState state;
  try {
    state = run_icm(in.images, in.atlas, cfg.label_config, cfg.schedule, w, &log);
  } catch (...) {
    std::ofstream f((dir / "run.log").string(), std::ios::trunc);
    f << log.str();
    throw;
  }

  const LabelVolume seg =
      hard_segmentation_common(state.posteriors, state.params, state.cache,
                               in.images.common_space);
  write_label_volume(seg, (dir / "seg_common.vhdr").string());
  for (int i = 0; i < in.images.n_images(); ++i) {
    const LabelVolume seg_i = resample_labels_to_image(
        seg, in.images.images[static_cast<std::size_t>(i)], state.transforms.slices, i);
    write_label_volume(seg_i, (dir / ("seg_image" + std::to_string(i) + ".vhdr")).string());
  }
  write_model_params(state.params, (dir / "params.txt").string());
  write_transform_state(state.transforms, (dir / "transforms.txt").string());
  write_phase_trace((dir / "ll_trace.txt").string(), state.ll_trace);
  if (cfg.write_posteriors) {
    const int K = cfg.label_config.n_labels();
    for (int k = 0; k < K; ++k) {
      VoxelGrid post = VoxelGrid::zeros(in.images.common_space);
      for (std::size_t v = 0; v < post.values.size(); ++v)
        post.values[v] = state.posteriors.label_post[v * static_cast<std::size_t>(K) + k];
      const int id = cfg.label_config.labels[static_cast<std::size_t>(k)];
      write_volume(post, (dir / ("post_k" + std::to_string(id) + ".vhdr")).string());
    }
  }
  std::ofstream f((dir / "run.log").string(), std::ios::trunc);
  f << log.str();
}

std::string cmd_evaluate(const std::vector<std::string>& seg_paths,
                         const std::vector<std::string>& truth_paths,
                         const std::vector<int>& labels, bool* partial_failure) {
  if (seg_paths.size() != truth_paths.size())
    throw_validation("evaluate: need matching --seg and --truth counts");
  if (seg_paths.empty()) throw_validation("evaluate: no segmentation files given");
  if (labels.empty()) throw_validation("evaluate: no labels given");
  for (const auto& p : seg_paths) require_exists(p, "evaluate");
  for (const auto& p : truth_paths) require_exists(p, "evaluate");

  bool partial = false;
  std::ostringstream out;
  out << "# case label dice acd_mm\n";
  std::map<int, std::vector<std::pair<double, double>>> per_label;
  for (std::size_t c = 0; c < seg_paths.size(); ++c) {
    LabelVolume seg, truth;
    try {
      seg = read_label_volume(seg_paths[c]);
      truth = read_label_volume(truth_paths[c]);
    } catch (const Error& e) {
      out << c << " * ERROR " << e.what() << "\n";
      partial = true;
      continue;
    }
    for (const int label : labels) {
      try {
        const double d = dice(seg, truth, label);
        const double a = acd_mm(seg, truth, label);
        per_label[label].emplace_back(d, a);
        out << c << " " << label << " " << fmt4(d) << " " << fmt4(a) << "\n";
      } catch (const Error& e) {
        out << c << " " << label << " ERROR " << e.what() << "\n";
        partial = true;
      }
    }
  }
  out << "# aggregate label dice_mean dice_sd acd_mean acd_sd n\n";
  for (const int label : labels) {
    const auto& rows = per_label[label];
    if (rows.empty()) continue;
    const double n = static_cast<double>(rows.size());
    double dm = 0, am = 0;
    for (const auto& [d, a] : rows) {
      dm += d;
      am += a;
    }
    dm /= n;
    am /= n;
    double dv = 0, av = 0;
    for (const auto& [d, a] : rows) {
      dv += (d - dm) * (d - dm);
      av += (a - am) * (a - am);
    }
    const double dsd = rows.size() > 1 ? std::sqrt(dv / (n - 1)) : 0.0;
    const double asd = rows.size() > 1 ? std::sqrt(av / (n - 1)) : 0.0;
    out << "aggregate " << label << " " << fmt4(dm) << " " << fmt4(dsd) << " " << fmt4(am) << " "
        << fmt4(asd) << " " << rows.size() << "\n";
  }
  if (partial_failure) *partial_failure = partial;
  return out.str();
}

std::string cmd_ablate(const std::string& config_path, int workers, bool* partial_failure) {
  const RunConfig cfg = parse_run_config(config_path);
  if (cfg.truth_labels_path.empty() || cfg.eval_labels.empty())
    throw_validation(config_path + ": ablate needs an [evaluate] section with truth and labels");
  const LoadedInputs in = load_inputs(cfg);
  const LabelVolume truth = read_label_volume(cfg.truth_labels_path);
  const int w = resolve_workers(workers > 0 ? workers : cfg.workers);

  const std::vector<std::string> presets = {"mvmm-minus", "mvmm-minus-ffd", "mvmm-minus-sc",
                                            "mvmm-full"};
  bool partial = false;
  std::ostringstream out;
  out << "# preset label dice acd_mm final_ll\n";
  for (const auto& preset : presets) {
    Schedule schedule = cfg.schedule;
    const Schedule flags = Schedule::preset(preset);
    schedule.enable_sc = flags.enable_sc;
    schedule.enable_ffd = flags.enable_ffd;
    try {
      const IcmState state = run_icm(in.images, in.atlas, cfg.label_config, schedule, w, nullptr);
      const LabelVolume seg = hard_segmentation_common(state.posteriors, state.params,
                                                       state.cache, in.images.common_space);
      const double ll = state.ll_trace.back().ll;
      for (const int label : cfg.eval_labels) {
        const double d = dice(seg, truth, label);
        const double a = acd_mm(seg, truth, label);
        out << preset << " " << label << " " << fmt4(d) << " " << fmt4(a) << " "
            << format_double(ll) << "\n";
      }
    } catch (const Error& e) {
      out << preset << " * ERROR " << e.what() << "\n";
      partial = true;
    }
  }
  if (partial_failure) *partial_failure = partial;
  const std::string table = out.str();
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    std::ofstream f((fs::path(cfg.out_dir) / "ablation.txt").string(), std::ios::trunc);
    f << table;
  }
  return table;
}

}  // namespace mvmm
