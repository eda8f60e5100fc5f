#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "vinil/rng.hpp"
#include "vinil/tensor.hpp"

namespace vinil {

enum class Split { train, gallery };

/// One rendered view of one object instance. Images are (3,H,W) in [0,1].
struct Sample {
  Tensor image;
  int category_id = 0;
  int instance_id = 0;  // globally unique across categories
  int view_id = 0;
  Split split = Split::train;
};

enum class Preset { synthA, synthB };

inline const char* preset_name(Preset p) { return p == Preset::synthA ? "synthA" : "synthB"; }

struct DatasetConfig {
  uint64_t seed = 0;
  int n_categories = 10;
  int instances_per_category = 4;
  int views_per_instance = 24;
  int image_size = 32;
  double gallery_fraction = 0.25;
  Preset preset = Preset::synthA;

  void validate() const {
    check(n_categories >= 1 && n_categories <= 10,
          "DatasetConfig: n_categories must be in [1, 10] (one shape family per category), got ",
          n_categories);
    check(instances_per_category >= 1, "DatasetConfig: instances_per_category must be >= 1");
    check(views_per_instance >= 2, "DatasetConfig: views_per_instance must be >= 2");
    check(image_size >= 8, "DatasetConfig: image_size must be >= 8, got ", image_size);
    check(gallery_fraction > 0.0 && gallery_fraction < 1.0,
          "DatasetConfig: gallery_fraction must be in (0, 1), got ", gallery_fraction);
  }
};

/// Per-instance appearance parameters. Two distinct instances always
/// differ: hue is spaced widely within a category and the texture seed is
/// unique per instance.
struct InstanceSpec {
  int category = 0;
  double hue = 0.0;
  double sat = 0.85;
  double val = 0.9;
  double size = 0.65;    // shape radius relative to half the image
  double aspect = 1.0;   // x/y stretch
  uint64_t texture_seed = 0;
};

namespace detail {

inline void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1)      { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else             { r = c; b = x; }
  const double m = v - c;
  rgb[0] = r + m;
  rgb[1] = g + m;
  rgb[2] = b + m;
}

inline double sd_box(double x, double y, double ex, double ey) {
  return std::max(std::abs(x) - ex, std::abs(y) - ey);
}

/// Signed "inside <= 0" field for the ten shape families, unit scale.
inline double shape_field(int family, double x, double y) {
  const double r = std::sqrt(x * x + y * y);
  switch (family) {
    case 0:  // disk
      return r - 1.0;
    case 1:  // square
      return sd_box(x, y, 0.82, 0.82);
    case 2: {  // triangle (three half-planes)
      double d = -1e9;
      for (int i = 0; i < 3; ++i) {
        const double a = M_PI / 2.0 + 2.0 * M_PI * i / 3.0;
        d = std::max(d, x * std::cos(a) + y * std::sin(a) - 0.62);
      }
      return d;
    }
    case 3:  // cross
      return std::min(sd_box(x, y, 1.0, 0.34), sd_box(x, y, 0.34, 1.0));
    case 4: {  // five-pointed star
      const double th = std::atan2(y, x);
      return r - (0.55 + 0.45 * std::cos(5.0 * th));
    }
    case 5:  // ring
      return std::abs(r - 0.70) - 0.28;
    case 6:  // bar
      return sd_box(x, y, 1.0, 0.32);
    case 7:  // L-shape
      return std::min(sd_box(x + 0.5, y, 0.35, 1.0), sd_box(x - 0.2, y - 0.68, 0.72, 0.32));
    case 8:  // diamond
      return std::abs(x) + std::abs(y) - 1.0;
    default: {  // wedge (disk sector)
      const double th = std::atan2(y, x);
      return std::max(r - 1.0, std::abs(th) - 1.15);
    }
  }
}

struct Background {
  double hue, sat, val;   // base color
  double angle, strength; // low-frequency linear gradient
};

/// Fixed pool of 11 muted backgrounds. Entries 4, 8 and 10 are the
/// near-identical studio walls the turntable preset cycles through; the
/// rest are the diverse hand-held settings.
inline const Background& background_pool(int i) {
  static const Background pool[11] = {
      {0.58, 0.20, 0.55, 0.4, 0.22}, {0.08, 0.25, 0.62, 2.1, 0.18}, {0.33, 0.18, 0.48, 5.0, 0.25},
      {0.75, 0.22, 0.58, 1.2, 0.20}, {0.57, 0.08, 0.71, 3.6, 0.06}, {0.47, 0.28, 0.42, 0.9, 0.24},
      {0.90, 0.18, 0.60, 4.3, 0.19}, {0.25, 0.22, 0.52, 2.8, 0.23}, {0.58, 0.09, 0.73, 5.7, 0.05},
      {0.02, 0.20, 0.45, 1.8, 0.26}, {0.59, 0.08, 0.72, 3.1, 0.07}};
  return pool[i % 11];
}

}  // namespace detail

inline InstanceSpec instance_spec(const DatasetConfig& cfg, int category, int instance_in_cat) {
  InstanceSpec spec;
  spec.category = category;
  Rng rng(mix_seed(cfg.seed, 0x696e7374ull + 1000003ull * category + instance_in_cat));
  // Hue is category-anchored with wide within-category spacing so that
  // instances of the same shape family stay far apart in pixel space;
  // brightness/saturation bits break the rare cross-category hue near-ties.
  const double within = 0.9 * (instance_in_cat + 0.5) / cfg.instances_per_category;
  spec.hue = std::fmod(category * 0.1 + within + rng.uniform(-0.01, 0.01) + 1.0, 1.0);
  spec.val = ((instance_in_cat + category) % 2 ? 0.66 : 0.95) + rng.uniform(-0.02, 0.02);
  spec.sat = ((instance_in_cat / 2 + category) % 2 ? 0.62 : 0.92) + rng.uniform(-0.03, 0.03);
  spec.size = rng.uniform(0.62, 0.88);
  spec.aspect = rng.uniform(0.85, 1.20);
  spec.texture_seed = rng.next_u64();
  return spec;
}

struct ViewParams {
  double rotation = 0.0;
  double center_x = 0.5, center_y = 0.5;  // relative to the image
  double scale = 1.0;                     // view-level size jitter
  int background = 0;
};

inline ViewParams view_params(const DatasetConfig& cfg, int category, int instance_in_cat,
                              int view) {
  ViewParams vp;
  Rng rng(mix_seed(cfg.seed, 0x76696577ull + 1000003ull * (1000003ull * category + instance_in_cat) + view));
  if (cfg.preset == Preset::synthA) {
    // Turntable: a dense systematic sweep over a 75-degree arc, few
    // backgrounds. Dense steps keep adjacent views pixel-overlapping.
    vp.rotation = (5.0 / 12.0) * M_PI * view / cfg.views_per_instance + rng.uniform(-0.02, 0.02);
    vp.center_x = 0.5 + rng.uniform(-0.015, 0.015);
    vp.center_y = 0.5 + rng.uniform(-0.015, 0.015);
    vp.scale = 1.0;
    static const int pale_trio[3] = {4, 8, 10};  // the turntable's studio walls
    vp.background = pale_trio[view % 3];
  } else {
    // Hand-held: jittered pose and position, many backgrounds.
    vp.rotation = rng.uniform(0.0, 2.0 * M_PI);
    vp.center_x = 0.5 + rng.uniform(-0.10, 0.10);
    vp.center_y = 0.5 + rng.uniform(-0.10, 0.10);
    vp.scale = rng.uniform(0.92, 1.08);
    vp.background = static_cast<int>(rng.uniform_int(11));
  }
  return vp;
}

/// Deterministic renderer: shape family of the category, instance
/// appearance, view pose, background from the fixed pool. 2x2 supersampled
/// coverage; rotation is reduced mod 2*pi so 0 and 2*pi render identically.
inline Tensor render_view(const DatasetConfig& cfg, const InstanceSpec& spec,
                          const ViewParams& vp) {
  const int S = cfg.image_size;
  Tensor img({3, S, S});
  double rot = std::fmod(vp.rotation, 2.0 * M_PI);
  if (rot < 0) rot += 2.0 * M_PI;
  const double cr = std::cos(rot), sr = std::sin(rot);
  const double radius = spec.size * vp.scale * (S / 2.0);
  const double ax = std::sqrt(spec.aspect), ay = 1.0 / std::sqrt(spec.aspect);
  const double cx = vp.center_x * S, cy = vp.center_y * S;

  const detail::Background& bg = detail::background_pool(vp.background);
  const double gx = std::cos(bg.angle), gy = std::sin(bg.angle);

  Rng trng(spec.texture_seed);
  const double fa = trng.uniform(2.0, 5.5), fb = trng.uniform(0.0, 6.28);
  const double fc = trng.uniform(2.0, 5.5), fd = trng.uniform(0.0, 6.28);

  double shape_rgb[3];
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      int hits = 0;
      double lu = 0.0, lv = 0.0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          const double px = (x + 0.25 + 0.5 * sx - cx) / radius;
          const double py = (y + 0.25 + 0.5 * sy - cy) / radius;
          const double qx = (cr * px + sr * py) / ax;
          const double qy = (-sr * px + cr * py) / ay;
          if (detail::shape_field(spec.category, qx, qy) <= 0.0) {
            ++hits;
            // Texture is anchored to unrotated object coordinates so the
            // interior stays put as the view angle sweeps.
            lu += px;
            lv += py;
          }
        }
      const double alpha = hits / 4.0;
      const double u = (x + 0.5) / S - 0.5, v = (y + 0.5) / S - 0.5;
      double bg_rgb[3];
      const double bval =
          std::clamp(bg.val + bg.strength * (u * gx + v * gy), 0.0, 1.0);
      detail::hsv_to_rgb(bg.hue, bg.sat, bval, bg_rgb);
      if (hits > 0) {
        lu /= hits;
        lv /= hits;
        const double tex =
            0.90 + 0.10 * std::sin(fa * lu + fb) * std::sin(fc * lv + fd);
        detail::hsv_to_rgb(spec.hue, spec.sat, std::clamp(spec.val * tex, 0.0, 1.0), shape_rgb);
      } else {
        shape_rgb[0] = shape_rgb[1] = shape_rgb[2] = 0.0;
      }
      for (int c = 0; c < 3; ++c) {
        const double val = alpha * shape_rgb[c] + (1.0 - alpha) * bg_rgb[c];
        img.values[(static_cast<size_t>(c) * S + y) * S + x] = std::clamp(val, 0.0, 1.0);
      }
    }
  return img;
}

/// Evenly spread gallery view indices: round(fraction * n) of them,
/// clamped to [1, n-1] so every instance keeps both splits.
inline std::vector<int> gallery_view_indices(int n_views, double fraction) {
  int g = static_cast<int>(std::lround(fraction * n_views));
  g = std::clamp(g, 1, n_views - 1);
  std::vector<int> idx;
  idx.reserve(static_cast<size_t>(g));
  for (int i = 0; i < g; ++i) {
    int v = static_cast<int>((i + 0.5) * n_views / g);
    v = std::clamp(v, 0, n_views - 1);
    if (idx.empty() || v > idx.back()) idx.push_back(v);
  }
  // Collisions only occur for extreme fractions; fill from unused slots.
  for (int v = 0; static_cast<int>(idx.size()) < g && v < n_views; ++v)
    if (!std::binary_search(idx.begin(), idx.end(), v)) idx.insert(std::lower_bound(idx.begin(), idx.end(), v), v);
  return idx;
}

/// Renders the full dataset in (category, instance, view) order. Purely a
/// function of the config, so the output is independent of evaluation
/// order and reproducible byte-for-byte.
inline std::vector<Sample> generate_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(cfg.n_categories) * cfg.instances_per_category *
              cfg.views_per_instance);
  for (int cat = 0; cat < cfg.n_categories; ++cat)
    for (int inst = 0; inst < cfg.instances_per_category; ++inst) {
      const InstanceSpec spec = instance_spec(cfg, cat, inst);
      const std::vector<int> gal = gallery_view_indices(cfg.views_per_instance, cfg.gallery_fraction);
      for (int view = 0; view < cfg.views_per_instance; ++view) {
        Sample s;
        s.category_id = cat;
        s.instance_id = cat * cfg.instances_per_category + inst;
        s.view_id = view;
        s.split = std::binary_search(gal.begin(), gal.end(), view) ? Split::gallery : Split::train;
        s.image = render_view(cfg, spec, view_params(cfg, cat, inst, view));
        out.push_back(std::move(s));
      }
    }
  return out;
}

// ---- augmentation --------------------------------------------------------

/// Bilinear resize of a (C,H,W) image to (C,out_h,out_w); same-size resize
/// is an exact copy.
inline Tensor bilinear_resize(const Tensor& img, int out_h, int out_w) {
  const int C = img.shape[0], H = img.shape[1], W = img.shape[2];
  Tensor out({C, out_h, out_w});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < out_h; ++y) {
      double sy = (y + 0.5) * H / out_h - 0.5;
      sy = std::clamp(sy, 0.0, H - 1.0);
      const int y0 = static_cast<int>(sy);
      const int y1 = std::min(y0 + 1, H - 1);
      const double fy = sy - y0;
      for (int x = 0; x < out_w; ++x) {
        double sx = (x + 0.5) * W / out_w - 0.5;
        sx = std::clamp(sx, 0.0, W - 1.0);
        const int x0 = static_cast<int>(sx);
        const int x1 = std::min(x0 + 1, W - 1);
        const double fx = sx - x0;
        auto at = [&](int yy, int xx) {
          return img.values[(static_cast<size_t>(c) * H + yy) * W + xx];
        };
        out.values[(static_cast<size_t>(c) * out_h + y) * out_w + x] =
            (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
            fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
      }
    }
  return out;
}

/// Crop (crop_h, crop_w) at (y0, x0) and resize back to the input size.
inline Tensor crop_resize(const Tensor& img, int y0, int x0, int crop_h, int crop_w) {
  const int C = img.shape[0], H = img.shape[1], W = img.shape[2];
  check(crop_h >= 1 && crop_w >= 1 && y0 >= 0 && x0 >= 0 && y0 + crop_h <= H && x0 + crop_w <= W,
        "crop_resize: crop (", y0, ", ", x0, ", ", crop_h, ", ", crop_w,
        ") outside image ", shape_str(img.shape));
  Tensor crop({C, crop_h, crop_w});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < crop_h; ++y)
      for (int x = 0; x < crop_w; ++x)
        crop.values[(static_cast<size_t>(c) * crop_h + y) * crop_w + x] =
            img.values[(static_cast<size_t>(c) * H + (y0 + y)) * W + (x0 + x)];
  if (crop_h == H && crop_w == W) return crop;
  return bilinear_resize(crop, H, W);
}

/// Random resized crop: area scale U[0.6, 1.0], aspect U[3/4, 4/3],
/// uniform position, bilinear back to the input size.
inline Tensor augment(const Tensor& img, Rng& rng) {
  check(img.rank() == 3, "augment: expected a (C,H,W) image, got ", shape_str(img.shape));
  const int H = img.shape[1], W = img.shape[2];
  const double area = rng.uniform(0.6, 1.0) * H * W;
  const double aspect = rng.uniform(0.75, 4.0 / 3.0);
  int cw = static_cast<int>(std::lround(std::sqrt(area * aspect)));
  int ch = static_cast<int>(std::lround(std::sqrt(area / aspect)));
  cw = std::clamp(cw, 1, W);
  ch = std::clamp(ch, 1, H);
  const int x0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(W - cw + 1)));
  const int y0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(H - ch + 1)));
  return crop_resize(img, y0, x0, ch, cw);
}

// ---- protocol ------------------------------------------------------------

/// One incremental session's training data plus its identity metadata.
struct Task {
  int task_id = 0;
  std::vector<int> category_ids;
  std::vector<int> instance_ids;
  std::vector<Sample> train;
};

struct TaskStream {
  std::vector<Task> tasks;
  std::vector<Sample> gallery;              // held-out views of every stream instance
  std::map<int, int> instance_task;         // instance id -> stream task index

  int task_of_instance(int instance_id) const {
    auto it = instance_task.find(instance_id);
    check(it != instance_task.end(), "TaskStream: unknown instance id ", instance_id);
    return it->second;
  }
};

/// Splits a dataset into n_tasks tasks of categories_per_task categories
/// (category order shuffled by seed), each optionally subdivided into
/// instance-level subtasks with disjoint instances.
inline TaskStream split_protocol(const std::vector<Sample>& samples, int n_tasks = 5,
                                 int categories_per_task = 2, int instance_subtasks = 1,
                                 uint64_t seed = 0) {
  check(n_tasks >= 1 && categories_per_task >= 1, "split_protocol: bad task shape");
  check(instance_subtasks >= 1, "split_protocol: instance_subtasks must be >= 1");

  std::vector<int> categories;
  std::map<int, std::vector<int>> cat_instances;
  for (const Sample& s : samples) {
    if (cat_instances.find(s.category_id) == cat_instances.end())
      categories.push_back(s.category_id);
    auto& v = cat_instances[s.category_id];
    if (std::find(v.begin(), v.end(), s.instance_id) == v.end()) v.push_back(s.instance_id);
  }
  std::sort(categories.begin(), categories.end());
  check(static_cast<int>(categories.size()) >= n_tasks * categories_per_task,
        "split_protocol: need ", n_tasks * categories_per_task, " categories, dataset has ",
        categories.size());

  Rng rng(mix_seed(seed, 0x70726f74ull));
  rng.shuffle(categories);

  TaskStream stream;
  for (int t = 0; t < n_tasks; ++t) {
    std::vector<int> cats(categories.begin() + static_cast<size_t>(t) * categories_per_task,
                          categories.begin() + static_cast<size_t>(t + 1) * categories_per_task);
    std::sort(cats.begin(), cats.end());
    std::vector<int> instances;
    for (int c : cats) {
      auto ids = cat_instances.at(c);
      std::sort(ids.begin(), ids.end());
      instances.insert(instances.end(), ids.begin(), ids.end());
    }
    check(static_cast<int>(instances.size()) >= instance_subtasks, "split_protocol: task ", t,
          " has ", instances.size(), " instances, cannot make ", instance_subtasks, " subtasks");
    Rng srng(mix_seed(seed, 0x73756274ull + t));
    srng.shuffle(instances);
    const int n = static_cast<int>(instances.size());
    for (int g = 0; g < instance_subtasks; ++g) {
      const int lo = g * n / instance_subtasks, hi = (g + 1) * n / instance_subtasks;
      Task task;
      task.task_id = static_cast<int>(stream.tasks.size());
      task.instance_ids.assign(instances.begin() + lo, instances.begin() + hi);
      std::sort(task.instance_ids.begin(), task.instance_ids.end());
      stream.tasks.push_back(std::move(task));
    }
  }

  for (Task& task : stream.tasks) {
    for (int id : task.instance_ids) stream.instance_task[id] = task.task_id;
  }
  for (const Sample& s : samples) {
    auto it = stream.instance_task.find(s.instance_id);
    if (it == stream.instance_task.end()) continue;  // category not covered by the stream
    Task& task = stream.tasks[static_cast<size_t>(it->second)];
    if (s.split == Split::gallery) {
      stream.gallery.push_back(s);
    } else {
      task.train.push_back(s);
    }
    if (std::find(task.category_ids.begin(), task.category_ids.end(), s.category_id) ==
        task.category_ids.end())
      task.category_ids.push_back(s.category_id);
  }
  for (Task& task : stream.tasks) std::sort(task.category_ids.begin(), task.category_ids.end());
  return stream;
}

// ---- PPM + folder layout ---------------------------------------------------

/// Binary PPM (P6, 8-bit) writer; quantizes [0,1] doubles to bytes.
inline void write_ppm(const std::filesystem::path& path, const Tensor& img) {
  check(img.rank() == 3 && img.shape[0] == 3, "write_ppm: expected a (3,H,W) image, got ",
        shape_str(img.shape));
  const int H = img.shape[1], W = img.shape[2];
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "write_ppm: cannot open ", path.string());
  f << "P6\n" << W << " " << H << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(W) * 3);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(img.values[(static_cast<size_t>(c) * H + y) * W + x], 0.0, 1.0);
        row[static_cast<size_t>(x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  check(f.good(), "write_ppm: write failed for ", path.string());
}

inline Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "read_ppm: cannot open ", path.string());
  std::string magic;
  f >> magic;
  check(magic == "P6", "read_ppm: ", path.string(), " is not a binary PPM (magic '", magic, "')");
  auto next_int = [&]() {
    int v = 0;
    f >> std::ws;
    while (f.peek() == '#') {
      std::string comment;
      std::getline(f, comment);
      f >> std::ws;
    }
    f >> v;
    check(f.good(), "read_ppm: truncated header in ", path.string());
    return v;
  };
  const int W = next_int(), H = next_int(), maxval = next_int();
  check(W > 0 && H > 0, "read_ppm: bad dimensions in ", path.string());
  check(maxval == 255, "read_ppm: unsupported maxval ", maxval, " in ", path.string());
  f.get();  // single whitespace after maxval
  std::vector<unsigned char> bytes(static_cast<size_t>(W) * H * 3);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  check(f.gcount() == static_cast<std::streamsize>(bytes.size()), "read_ppm: truncated pixel data in ",
        path.string());
  Tensor img({3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        img.values[(static_cast<size_t>(c) * H + y) * W + x] =
            bytes[(static_cast<size_t>(y) * W + x) * 3 + c] / 255.0;
  return img;
}

/// Writes samples as root/<category>/<instance>/<view>.ppm.
inline void save_folder_dataset(const std::vector<Sample>& samples,
                                const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  char buf[32];
  for (const Sample& s : samples) {
    std::snprintf(buf, sizeof buf, "cat%02d", s.category_id);
    fs::path dir = root / buf;
    std::snprintf(buf, sizeof buf, "inst%04d", s.instance_id);
    dir /= buf;
    fs::create_directories(dir);
    std::snprintf(buf, sizeof buf, "view%03d.ppm", s.view_id);
    write_ppm(dir / buf, s.image);
  }
}

/// Reads a category/instance/view tree of PPMs. Ids are assigned by
/// lexicographic order of directory and file names, so re-loading is
/// stable; the gallery split is re-derived per instance from the same
/// evenly-spread rule the generator uses.
inline std::vector<Sample> load_folder_dataset(const std::filesystem::path& root,
                                               double gallery_fraction = 0.25) {
  namespace fs = std::filesystem;
  check(fs::is_directory(root), "load_folder_dataset: not a directory: ", root.string());
  auto sorted_dir = [](const fs::path& p, bool dirs_only) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(p)) {
      if (dirs_only ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
  };

  std::vector<Sample> samples;
  int instance_id = 0, width = -1, height = -1;
  const std::vector<fs::path> cats = sorted_dir(root, true);
  if (cats.empty()) {
    std::cerr << "warning: load_folder_dataset: no category directories under " << root.string()
              << "\n";
    return samples;
  }
  for (size_t ci = 0; ci < cats.size(); ++ci) {
    for (const fs::path& inst_dir : sorted_dir(cats[ci], true)) {
      std::vector<fs::path> views = sorted_dir(inst_dir, false);
      std::erase_if(views, [](const fs::path& p) { return p.extension() != ".ppm"; });
      if (views.empty()) continue;
      const std::vector<int> gal =
          gallery_view_indices(static_cast<int>(views.size()), gallery_fraction);
      for (size_t vi = 0; vi < views.size(); ++vi) {
        Sample s;
        s.image = read_ppm(views[vi]);
        if (width < 0) {
          width = s.image.shape[2];
          height = s.image.shape[1];
        }
        check(s.image.shape[1] == height && s.image.shape[2] == width,
              "load_folder_dataset: inconsistent image size at ", views[vi].string(), ": got ",
              shape_str(s.image.shape), ", expected (3, ", height, ", ", width, ")");
        s.category_id = static_cast<int>(ci);
        s.instance_id = instance_id;
        s.view_id = static_cast<int>(vi);
        s.split = std::binary_search(gal.begin(), gal.end(), static_cast<int>(vi))
                      ? Split::gallery
                      : Split::train;
        samples.push_back(std::move(s));
      }
      ++instance_id;
    }
  }
  return samples;
}

/// FNV-1a over the raw image bits and ids; pins generator determinism.
inline uint64_t dataset_digest(const std::vector<Sample>& samples) {
  uint64_t h = 1469598103934665603ull;
  auto feed = [&h](const void* data, size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const Sample& s : samples) {
    feed(&s.category_id, sizeof s.category_id);
    feed(&s.instance_id, sizeof s.instance_id);
    feed(&s.view_id, sizeof s.view_id);
    const int split = s.split == Split::gallery ? 1 : 0;
    feed(&split, sizeof split);
    feed(s.image.values.data(), s.image.values.size() * sizeof(double));
  }
  return h;
}

}  // namespace vinil
