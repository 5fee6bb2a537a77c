#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rpk/errors.hpp"
#include "rpk/image.hpp"
#include "rpk/rng.hpp"
#include "rpk/skeleton.hpp"

// Procedural paired-frame toy dataset: stick figures with per-edge capsule
// limbs and per-joint colored discs over a shared deterministic background.
// Both frames of a pair share appearance and background exactly, only the
// pose differs. Colors live in three disjoint regions of RGB space (bright
// joints, mid-tone limbs, muted background) so joints are recoverable from
// pixels alone by the evaluation oracle.

namespace rpk {

struct ToyAppearance {
  std::vector<double> bone_lengths;            // pixels, per joint edge; 0 at roots
  std::vector<Eigen::Vector3f> limb_colors;    // per joint edge
  std::vector<Eigen::Vector3f> joint_colors;   // per joint, pairwise far apart
  double limb_width = 3.0;                     // capsule diameter in pixels
  double figure_scale = 1.0;

  double joint_disc_radius() const { return limb_width / 2.0 + 1.0; }

  void validate(const KinematicTree& tree) const {
    const int n = tree.size();
    if (static_cast<int>(bone_lengths.size()) != n ||
        static_cast<int>(limb_colors.size()) != n ||
        static_cast<int>(joint_colors.size()) != n)
      throw DescriptorError("appearance: per-joint table size mismatch");
    for (int i = 0; i < n; ++i)
      if (tree.parent[i] != -1 && bone_lengths[i] <= 0)
        throw DescriptorError("appearance: bone lengths must be positive");
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if ((joint_colors[i] - joint_colors[j]).norm() < 0.25f)
          throw DescriptorError("appearance: joint colors closer than 0.25");
  }
};

struct BackgroundSpec {
  enum class Pattern { checker, gradient, blobs };
  Pattern pattern = Pattern::checker;
  Eigen::Vector3f color_a{0.30f, 0.30f, 0.34f};
  Eigen::Vector3f color_b{0.24f, 0.26f, 0.28f};
  double cell = 8.0;    // checker cell size
  double angle = 0.0;   // gradient direction
  int blob_count = 5;
  std::uint64_t seed = 0;

  Image render(int H, int W) const {
    Image img(H, W, 3);
    auto set = [&](int y, int x, const Eigen::Vector3f& c) {
      img.at(0, y, x) = c[0];
      img.at(1, y, x) = c[1];
      img.at(2, y, x) = c[2];
    };
    switch (pattern) {
      case Pattern::checker:
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            const int par = (static_cast<int>(y / cell) + static_cast<int>(x / cell)) % 2;
            set(y, x, par == 0 ? color_a : color_b);
          }
        break;
      case Pattern::gradient: {
        const double dx = std::cos(angle), dy = std::sin(angle);
        const double lo = std::min({0.0, dx * (W - 1), dy * (H - 1), dx * (W - 1) + dy * (H - 1)});
        const double hi = std::max({0.0, dx * (W - 1), dy * (H - 1), dx * (W - 1) + dy * (H - 1)});
        const double span = hi - lo > 1e-9 ? hi - lo : 1.0;
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            const float t = static_cast<float>((dx * x + dy * y - lo) / span);
            set(y, x, color_a + t * (color_b - color_a));
          }
        break;
      }
      case Pattern::blobs: {
        Rng rng(seed);
        struct Blob {
          double x, y, r;
          Eigen::Vector3f c;
        };
        std::vector<Blob> blobs;
        for (int i = 0; i < blob_count; ++i) {
          Blob b;
          b.x = rng.uniform(0, W);
          b.y = rng.uniform(0, H);
          b.r = rng.uniform(std::min(H, W) / 10.0, std::min(H, W) / 3.0);
          const float t = static_cast<float>(rng.uniform());
          b.c = color_a + t * (color_b - color_a);
          blobs.push_back(b);
        }
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            Eigen::Vector3f c = color_a;
            for (const auto& b : blobs) {
              const double d2 = (x - b.x) * (x - b.x) + (y - b.y) * (y - b.y);
              const float t = static_cast<float>(std::exp(-d2 / (2 * b.r * b.r)));
              c = c + t * (b.c - c);
            }
            set(y, x, c);
          }
        break;
      }
    }
    return img;
  }
};

struct Sample {
  Image input_image, target_image;
  PoseDescriptor input_pose, target_pose;
  Mask input_mask, target_mask;
  bool has_masks = true;
};

struct ToyConfig {
  int height = 64, width = 64;
  double min_inside_frac = 1.0;  // required bbox-inside-raster area fraction
  double scale_lo = 0.9, scale_hi = 1.2;
  double width_lo = 2.6, width_hi = 3.0;
  int max_retries = 200;
};

// Bright palette: every entry keeps one channel at 1.0 and pairwise distance
// >= 0.5, and stays >= 0.3 away from the limb/background color regions.
inline const std::vector<Eigen::Vector3f>& toy_joint_palette() {
  static const std::vector<Eigen::Vector3f> p = {
      {1, 0, 0},     {0, 1, 0},     {0, 0, 1},     {1, 1, 0},
      {1, 0, 1},     {0, 1, 1},     {1, 1, 1},     {1, 0.5f, 0},
      {0.5f, 0, 1},  {0, 1, 0.5f},  {1, 0, 0.5f},  {0.5f, 1, 0},
      {0, 0.5f, 1},  {1, 1, 0.5f},  {0.5f, 1, 1},  {1, 0.5f, 1}};
  return p;
}

// Mid-tone palette, one identifying channel at 0.62, clear of the background
// band (channels <= 0.42) and of every joint color.
inline const std::vector<Eigen::Vector3f>& toy_limb_palette() {
  static const std::vector<Eigen::Vector3f> p = {
      {0.62f, 0.34f, 0.30f}, {0.30f, 0.62f, 0.34f}, {0.34f, 0.30f, 0.62f},
      {0.62f, 0.54f, 0.30f}, {0.62f, 0.30f, 0.54f}, {0.30f, 0.62f, 0.54f},
      {0.54f, 0.62f, 0.30f}, {0.54f, 0.30f, 0.62f}, {0.30f, 0.54f, 0.62f},
      {0.62f, 0.42f, 0.42f}, {0.42f, 0.62f, 0.42f}, {0.42f, 0.42f, 0.62f},
      {0.62f, 0.62f, 0.36f}, {0.62f, 0.36f, 0.62f}, {0.36f, 0.62f, 0.62f},
      {0.50f, 0.50f, 0.62f}};
  return p;
}

namespace toy_detail {

// Base bone lengths in pixels on a 64px raster, per joint edge. Every bone
// stays longer than the disc-separation requirement at the smallest sampled
// figure scale, so adjacent joints can never collide.
inline const std::vector<double>& base_bone_lengths() {
  static const std::vector<double> b = {9, 9, 8, 8, 9, 9, 9, 0,
                                        8, 8, 7.5, 7.5, 8, 8, 7.5, 7.5};
  return b;
}

struct AngleRange {
  double lo, hi;  // degrees; x rightward, y downward
};

inline const std::vector<AngleRange>& default_angle_ranges() {
  static const std::vector<AngleRange> r = {
      {65, 115},    // r_ankle from r_knee
      {65, 115},    // r_knee from r_hip
      {125, 155},   // r_hip from pelvis
      {25, 55},     // l_hip from pelvis
      {65, 115},    // l_knee
      {65, 115},    // l_ankle
      {80, 100},    // pelvis from thorax
      {0, 0},       // thorax (root, unused)
      {255, 285},   // upper_neck from thorax
      {255, 285},   // head_top from upper_neck
      {70, 250},    // r_wrist from r_elbow
      {100, 220},   // r_elbow from r_shoulder
      {160, 200},   // r_shoulder from thorax
      {-20, 20},    // l_shoulder from thorax
      {-40, 80},    // l_elbow from l_shoulder
      {-70, 110}};  // l_wrist from l_elbow
  return r;
}

// Forward kinematics from per-edge absolute angles, root at the origin.
inline PoseDescriptor fk_pose(const KinematicTree& tree,
                              const std::vector<double>& angles_deg,
                              const std::vector<double>& bone_lengths) {
  const int n = tree.size();
  PoseDescriptor pose;
  pose.joints.assign(n, Eigen::Vector2d(0, 0));
  std::vector<char> placed(n, 0);
  for (int i = 0; i < n; ++i)
    if (tree.parent[i] == -1) placed[i] = 1;
  bool progress = true;
  while (progress) {
    progress = false;
    for (int i = 0; i < n; ++i) {
      if (placed[i]) continue;
      const int p = tree.parent[i];
      if (!placed[p]) continue;
      const double a = angles_deg[i] * M_PI / 180.0;
      pose.joints[i] =
          pose.joints[p] + bone_lengths[i] * Eigen::Vector2d(std::cos(a), std::sin(a));
      placed[i] = 1;
      progress = true;
    }
  }
  return pose;
}

inline double min_pairwise_distance(const PoseDescriptor& pose) {
  double best = 1e18;
  for (int i = 0; i < pose.size(); ++i)
    for (int j = i + 1; j < pose.size(); ++j)
      best = std::min(best, (pose.joints[i] - pose.joints[j]).norm());
  return best;
}

inline void bbox_of(const PoseDescriptor& pose, double& x0, double& y0,
                    double& x1, double& y1) {
  x0 = y0 = 1e18;
  x1 = y1 = -1e18;
  for (const auto& j : pose.joints) {
    x0 = std::min(x0, j.x());
    y0 = std::min(y0, j.y());
    x1 = std::max(x1, j.x());
    y1 = std::max(y1, j.y());
  }
}

inline double dist_point_segment(double px, double py, const Eigen::Vector2d& a,
                                 const Eigen::Vector2d& b) {
  const Eigen::Vector2d p(px, py);
  const Eigen::Vector2d d = b - a;
  const double len2 = d.squaredNorm();
  if (len2 < 1e-12) return (p - a).norm();
  const double t = std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
  return (p - (a + t * d)).norm();
}

}  // namespace toy_detail

inline ToyAppearance sample_appearance(Rng& rng, const KinematicTree& tree,
                                       const ToyConfig& cfg) {
  ToyAppearance app;
  const double res_factor = std::min(cfg.height, cfg.width) / 64.0;
  app.figure_scale = rng.uniform(cfg.scale_lo, cfg.scale_hi) * res_factor;
  app.limb_width = rng.uniform(cfg.width_lo, cfg.width_hi) * res_factor;
  const auto& base = toy_detail::base_bone_lengths();
  app.bone_lengths.resize(tree.size());
  for (int i = 0; i < tree.size(); ++i)
    app.bone_lengths[i] = base[i] * app.figure_scale;
  app.limb_colors = toy_limb_palette();
  app.joint_colors = toy_joint_palette();
  app.validate(tree);
  return app;
}

inline BackgroundSpec sample_background(Rng& rng) {
  BackgroundSpec bg;
  const int pick = rng.uniform_int(0, 2);
  bg.pattern = pick == 0 ? BackgroundSpec::Pattern::checker
               : pick == 1 ? BackgroundSpec::Pattern::gradient
                           : BackgroundSpec::Pattern::blobs;
  auto muted = [&] {
    return Eigen::Vector3f(static_cast<float>(rng.uniform(0.20, 0.42)),
                           static_cast<float>(rng.uniform(0.20, 0.42)),
                           static_cast<float>(rng.uniform(0.20, 0.42)));
  };
  bg.color_a = muted();
  bg.color_b = muted();
  bg.cell = rng.uniform(5.0, 16.0);
  bg.angle = rng.uniform(0.0, 2 * M_PI);
  bg.blob_count = rng.uniform_int(3, 8);
  bg.seed = rng.bits();
  return bg;
}

// Draws per-edge angles, rejects poses whose joints sit closer than the disc
// footprint or whose bounding box cannot be placed, then positions the root.
// After max_retries the canonical mid-range pose is centered instead.
inline PoseDescriptor sample_pose(Rng& rng, const KinematicTree& tree,
                                  const ToyAppearance& app, int H, int W,
                                  const ToyConfig& cfg = {},
                                  const std::vector<toy_detail::AngleRange>*
                                      ranges_override = nullptr) {
  const auto& ranges =
      ranges_override ? *ranges_override : toy_detail::default_angle_ranges();
  const int n = tree.size();
  const double min_sep = app.limb_width + 3.0 + 0.5;
  std::vector<double> angles(n, 0.0);

  auto canonical = [&] {
    for (int i = 0; i < n; ++i) angles[i] = (ranges[i].lo + ranges[i].hi) / 2;
    return toy_detail::fk_pose(tree, angles, app.bone_lengths);
  };
  auto place = [&](PoseDescriptor pose, const Eigen::Vector2d& root) {
    for (auto& j : pose.joints) j += root;
    return pose;
  };
  auto center_of = [&](const PoseDescriptor& rel) {
    double x0, y0, x1, y1;
    toy_detail::bbox_of(rel, x0, y0, x1, y1);
    return Eigen::Vector2d((W - 1) / 2.0 - (x0 + x1) / 2,
                           (H - 1) / 2.0 - (y0 + y1) / 2);
  };

  bool all_collapsed = true;
  for (int i = 0; i < n; ++i)
    if (tree.parent[i] != -1 && ranges[i].lo != ranges[i].hi) all_collapsed = false;
  if (all_collapsed) {
    PoseDescriptor rel = canonical();
    return place(rel, center_of(rel));
  }

  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    for (int i = 0; i < n; ++i) angles[i] = rng.uniform(ranges[i].lo, ranges[i].hi);
    PoseDescriptor rel = toy_detail::fk_pose(tree, angles, app.bone_lengths);
    if (toy_detail::min_pairwise_distance(rel) < min_sep) continue;
    double x0, y0, x1, y1;
    toy_detail::bbox_of(rel, x0, y0, x1, y1);
    if (cfg.min_inside_frac >= 1.0) {
      const double margin = app.joint_disc_radius() + 1;
      const double rx_lo = margin - x0, rx_hi = (W - 1 - margin) - x1;
      const double ry_lo = margin - y0, ry_hi = (H - 1 - margin) - y1;
      if (rx_lo > rx_hi || ry_lo > ry_hi) continue;
      return place(rel, {rng.uniform(rx_lo, rx_hi), rng.uniform(ry_lo, ry_hi)});
    }
    const Eigen::Vector2d root(rng.uniform(0, W - 1), rng.uniform(0, H - 1));
    const double bw = x1 - x0, bh = y1 - y0;
    const double ix0 = std::max(0.0, x0 + root.x()), iy0 = std::max(0.0, y0 + root.y());
    const double ix1 = std::min(double(W - 1), x1 + root.x());
    const double iy1 = std::min(double(H - 1), y1 + root.y());
    const double inter = std::max(0.0, ix1 - ix0) * std::max(0.0, iy1 - iy0);
    const double area = std::max(1e-9, bw * bh);
    if (inter / area >= cfg.min_inside_frac) return place(rel, root);
  }

  // Widest fit: canonical pose, bbox centered on the raster.
  PoseDescriptor rel = canonical();
  return place(rel, center_of(rel));
}

// Background first, capsule limbs along every edge, joint discs on top in
// joint order. The mask covers exactly the drawn figure pixels. Output values
// are quantized to the 8-bit grid so disk round trips are exact.
inline std::pair<Image, Mask> render_figure(const PoseDescriptor& pose,
                                            const KinematicTree& tree,
                                            const ToyAppearance& app,
                                            const BackgroundSpec& bg, int H,
                                            int W) {
  if (pose.size() != tree.size())
    throw DescriptorError("render_figure: pose/tree joint count mismatch");
  Image img = bg.render(H, W);
  Mask mask(H, W);
  auto paint = [&](int y, int x, const Eigen::Vector3f& c) {
    img.at(0, y, x) = c[0];
    img.at(1, y, x) = c[1];
    img.at(2, y, x) = c[2];
    mask.at(y, x) = 1;
  };

  const double lr = app.limb_width / 2.0;
  for (int i = 0; i < pose.size(); ++i) {
    const int p = tree.parent[i];
    if (p == -1) continue;
    const Eigen::Vector2d a = pose.joints[i], b = pose.joints[p];
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - lr - 1)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(std::max(a.x(), b.x()) + lr + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - lr - 1)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(std::max(a.y(), b.y()) + lr + 1)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (toy_detail::dist_point_segment(x, y, a, b) <= lr)
          paint(y, x, app.limb_colors[i]);
  }

  const double jr = app.joint_disc_radius();
  for (int i = 0; i < pose.size(); ++i) {
    const Eigen::Vector2d c = pose.joints[i];
    const int x0 = std::max(0, static_cast<int>(std::floor(c.x() - jr - 1)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(c.x() + jr + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(c.y() - jr - 1)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(c.y() + jr + 1)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - c.x(), dy = y - c.y();
        if (dx * dx + dy * dy <= jr * jr) paint(y, x, app.joint_colors[i]);
      }
  }

  img.quantize();
  return {img, mask};
}

// One appearance, one background, two independent poses: identical alpha,
// differing beta.
inline Sample make_pair(Rng& rng, const ToyConfig& cfg,
                        const KinematicTree& tree) {
  Sample s;
  const ToyAppearance app = sample_appearance(rng, tree, cfg);
  const BackgroundSpec bg = sample_background(rng);
  s.input_pose = sample_pose(rng, tree, app, cfg.height, cfg.width, cfg);
  s.target_pose = sample_pose(rng, tree, app, cfg.height, cfg.width, cfg);
  auto in = render_figure(s.input_pose, tree, app, bg, cfg.height, cfg.width);
  auto tg = render_figure(s.target_pose, tree, app, bg, cfg.height, cfg.width);
  s.input_image = std::move(in.first);
  s.input_mask = std::move(in.second);
  s.target_image = std::move(tg.first);
  s.target_mask = std::move(tg.second);
  return s;
}

// Per-index derived seeds: sample k is a pure function of (config, seed, k),
// so parallel generation reproduces the serial output.
inline std::vector<Sample> generate_dataset(const ToyConfig& cfg, int n,
                                            std::uint64_t seed,
                                            const KinematicTree& tree) {
  std::vector<Sample> out;
  out.reserve(n);
  for (int k = 0; k < n; ++k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    out.push_back(make_pair(rng, cfg, tree));
  }
  return out;
}

// Dataset directory layout (documented in the README):
//   manifest.txt       one record id per line
//   <id>_in.png        input image        <id>_tg.png       target image
//   <id>_in_mask.png   input figure mask  <id>_tg_mask.png  target figure mask
//   <id>_poses.txt     two pose lines: input then target
inline void write_dataset(const std::vector<Sample>& samples,
                          const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("write_dataset: cannot create directory " + dir);
  std::ofstream manifest(dir + "/manifest.txt");
  if (!manifest) throw IoError("write_dataset: cannot write " + dir + "/manifest.txt");
  char id[16];
  for (std::size_t k = 0; k < samples.size(); ++k) {
    std::snprintf(id, sizeof(id), "p%06zu", k);
    manifest << id << '\n';
    const std::string base = dir + "/" + id;
    const Sample& s = samples[k];
    write_png(base + "_in.png", s.input_image);
    write_png(base + "_tg.png", s.target_image);
    if (s.has_masks) {
      write_mask_png(base + "_in_mask.png", s.input_mask);
      write_mask_png(base + "_tg_mask.png", s.target_mask);
    }
    write_pose_file(base + "_poses.txt", {s.input_pose, s.target_pose});
  }
}

inline std::vector<Sample> read_dataset(const std::string& dir,
                                        int limit = -1) {
  std::ifstream manifest(dir + "/manifest.txt");
  if (!manifest)
    throw IoError("read_dataset: missing manifest: " + dir + "/manifest.txt");
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(manifest, line)) {
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back())))
      line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  if (limit >= 0 && static_cast<int>(ids.size()) > limit) ids.resize(limit);
  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const std::string base = dir + "/" + id;
    Sample s;
    s.input_image = read_png(base + "_in.png");
    s.target_image = read_png(base + "_tg.png");
    auto poses = read_pose_file(base + "_poses.txt");
    if (poses.size() != 2)
      throw IoError("read_dataset: expected two pose lines in " + base + "_poses.txt");
    s.input_pose = poses[0];
    s.target_pose = poses[1];
    if (std::filesystem::exists(base + "_in_mask.png") &&
        std::filesystem::exists(base + "_tg_mask.png")) {
      s.input_mask = read_mask_png(base + "_in_mask.png");
      s.target_mask = read_mask_png(base + "_tg_mask.png");
      s.has_masks = true;
    } else {
      s.has_masks = false;
    }
    out.push_back(std::move(s));
  }
  return out;
}

// External-clip adapter surface: clip metadata plus a frame decode callback.
// The kit never bundles video data; adapters feed frames through this.
struct ClipMetadata {
  std::string id;
  int n_frames = 0;
};

using FrameDecodeFn =
    std::function<void(int frame_index, Image* image, PoseDescriptor* pose)>;

// Input frame 0, target the 60th frame (index 59) or the last one, whichever
// comes first. Single-frame clips are filtered out.
inline std::pair<int, int> select_frame_pair(const ClipMetadata& clip) {
  if (clip.n_frames < 2)
    throw DescriptorError("select_frame_pair: clip too short: " + clip.id);
  return {0, std::min(59, clip.n_frames - 1)};
}

// True when at least min_fraction of the joints lie inside the raster
// (inclusive threshold).
inline bool frame_has_figure(const PoseDescriptor& pose, int H, int W,
                             double min_fraction = 0.5) {
  if (pose.size() == 0) return false;
  int inside = 0;
  for (const auto& j : pose.joints)
    if (j.x() >= 0 && j.x() < W && j.y() >= 0 && j.y() < H) ++inside;
  return static_cast<double>(inside) / pose.size() >= min_fraction;
}

}  // namespace rpk
