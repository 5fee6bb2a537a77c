#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rpk/errors.hpp"

// Pose descriptors, kinematic trees and the pose -> joint-map converter. A
// joint map holds one channel per joint; channel i rasterizes the segment
// from joint i to its parent (a disc for root joints), so the conditioning
// signal carries both joint locations and limb topology.

namespace rpk {

struct KinematicTree {
  std::vector<int> parent;              // -1 marks a root
  std::vector<std::string> joint_names;

  int size() const { return static_cast<int>(parent.size()); }

  void validate() const {
    const int n = size();
    if (joint_names.size() != parent.size())
      throw DescriptorError("tree: name/parent count mismatch");
    bool has_root = false;
    for (int i = 0; i < n; ++i) {
      const int p = parent[i];
      if (p == -1) {
        has_root = true;
        continue;
      }
      if (p < 0 || p >= n) throw DescriptorError("tree: parent index out of range");
      if (p == i) throw DescriptorError("tree: joint is its own parent");
    }
    if (!has_root) throw DescriptorError("tree: no root joint");
    for (int i = 0; i < n; ++i) {
      int steps = 0, j = i;
      while (parent[j] != -1) {
        j = parent[j];
        if (++steps > n) throw DescriptorError("tree: parent links form a cycle");
      }
    }
  }

  // Hops from joint i to its root.
  int depth_of(int i) const {
    int d = 0;
    while (parent[i] != -1) {
      i = parent[i];
      ++d;
    }
    return d;
  }
};

struct PoseDescriptor {
  // (x, y) pixel coordinates, x rightward, y downward, origin top-left.
  std::vector<Eigen::Vector2d> joints;

  int size() const { return static_cast<int>(joints.size()); }
};

struct JointMap {
  int n = 0, h = 0, w = 0;
  float fg = 1.0f, bg = 0.0f;
  std::vector<float> data;  // n channels of h*w, channel-major

  float* channel(int i) { return data.data() + static_cast<std::size_t>(i) * h * w; }
  const float* channel(int i) const {
    return data.data() + static_cast<std::size_t>(i) * h * w;
  }
  float at(int i, int y, int x) const {
    return channel(i)[static_cast<std::size_t>(y) * w + x];
  }
};

// 16-joint tree in MPII joint order. Chains: ankle-knee-hip-pelvis-thorax and
// wrist-elbow-shoulder-thorax per side, neck and head off the thorax, thorax
// is the root.
inline KinematicTree make_default_tree() {
  KinematicTree t;
  t.joint_names = {"r_ankle", "r_knee",  "r_hip",      "l_hip",
                   "l_knee",  "l_ankle", "pelvis",     "thorax",
                   "upper_neck", "head_top", "r_wrist", "r_elbow",
                   "r_shoulder", "l_shoulder", "l_elbow", "l_wrist"};
  t.parent = {1, 2, 6, 6, 3, 4, 7, -1, 7, 8, 11, 12, 7, 7, 13, 14};
  t.validate();
  return t;
}

namespace detail {

// Integer segment pixels, major-axis stepping with the incremental error
// form of round-half-down rational rounding on the minor axis.
template <typename Plot>
void bresenham(int x0, int y0, int x1, int y1, Plot&& plot) {
  const int adx = std::abs(x1 - x0), ady = std::abs(y1 - y0);
  const int sx = x1 >= x0 ? 1 : -1, sy = y1 >= y0 ? 1 : -1;
  if (adx >= ady) {
    long long err = adx;  // numerator of the rounded minor offset
    int y = y0;
    for (int i = 0, x = x0; i <= adx; ++i, x += sx) {
      plot(x, y);
      err += 2LL * ady;
      if (err >= 2LL * adx && adx > 0) {
        y += sy;
        err -= 2LL * adx;
      }
    }
  } else {
    long long err = ady;
    int x = x0;
    for (int i = 0, y = y0; i <= ady; ++i, y += sy) {
      plot(x, y);
      err += 2LL * adx;
      if (err >= 2LL * ady) {
        x += sx;
        err -= 2LL * ady;
      }
    }
  }
}

inline std::vector<std::pair<int, int>> disc_offsets(int thickness) {
  const double r = thickness / 2.0;
  const double r2 = r * r;
  const int ir = static_cast<int>(std::floor(r));
  std::vector<std::pair<int, int>> offs;
  for (int dy = -ir; dy <= ir; ++dy)
    for (int dx = -ir; dx <= ir; ++dx)
      if (dx * dx + dy * dy <= r2) offs.emplace_back(dx, dy);
  return offs;
}

}  // namespace detail

// Channel i holds the segment joint i -> parent(i) stamped with a disc of
// radius thickness/2 at every line pixel; root joints get the single disc.
// Everything is clipped to the raster; off-raster geometry is silently empty.
inline JointMap rasterize_jmap(const PoseDescriptor& pose,
                               const KinematicTree& tree, int H, int W,
                               int thickness = 3, float fg = 1.0f,
                               float bg = 0.0f) {
  if (pose.size() != tree.size())
    throw DescriptorError("rasterize_jmap: pose/tree joint count mismatch");
  if (H < 1 || W < 1) throw ConfigError("rasterize_jmap: raster extents must be >= 1");
  if (thickness < 1) throw ConfigError("rasterize_jmap: thickness must be >= 1");

  JointMap jm;
  jm.n = pose.size();
  jm.h = H;
  jm.w = W;
  jm.fg = fg;
  jm.bg = bg;
  jm.data.assign(static_cast<std::size_t>(jm.n) * H * W, bg);

  const auto offs = detail::disc_offsets(thickness);
  for (int i = 0; i < pose.size(); ++i) {
    float* ch = jm.channel(i);
    auto stamp = [&](int x, int y) {
      for (const auto& [dx, dy] : offs) {
        const int px = x + dx, py = y + dy;
        if (px >= 0 && px < W && py >= 0 && py < H)
          ch[static_cast<std::size_t>(py) * W + px] = fg;
      }
    };
    const int x0 = static_cast<int>(std::lround(pose.joints[i].x()));
    const int y0 = static_cast<int>(std::lround(pose.joints[i].y()));
    const int p = tree.parent[i];
    if (p == -1) {
      stamp(x0, y0);
    } else {
      const int x1 = static_cast<int>(std::lround(pose.joints[p].x()));
      const int y1 = static_cast<int>(std::lround(pose.joints[p].y()));
      detail::bresenham(x0, y0, x1, y1, stamp);
    }
  }
  return jm;
}

// Per-axis rescale: x by to_w/from_w, y by to_h/from_h.
inline PoseDescriptor rescale_pose(const PoseDescriptor& pose, int from_h,
                                   int from_w, int to_h, int to_w) {
  if (from_h < 1 || from_w < 1 || to_h < 1 || to_w < 1)
    throw ConfigError("rescale_pose: extents must be >= 1");
  PoseDescriptor out = pose;
  const double fx = static_cast<double>(to_w) / from_w;
  const double fy = static_cast<double>(to_h) / from_h;
  for (auto& j : out.joints) {
    j.x() *= fx;
    j.y() *= fy;
  }
  return out;
}

// Pose file format: one figure per line, "x0 y0 x1 y1 ..." in pixel
// coordinates, whitespace separated.
inline std::string format_pose_line(const PoseDescriptor& pose) {
  std::string line;
  char buf[64];
  for (int i = 0; i < pose.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g", pose.joints[i].x(),
                  pose.joints[i].y());
    if (i) line += ' ';
    line += buf;
  }
  return line;
}

inline PoseDescriptor parse_pose_line(const std::string& line) {
  std::istringstream is(line);
  std::vector<double> vals;
  double v;
  while (is >> v) vals.push_back(v);
  if (vals.empty() || vals.size() % 2 != 0)
    throw DescriptorError("pose line: expected an even number of coordinates");
  PoseDescriptor p;
  for (std::size_t i = 0; i < vals.size(); i += 2)
    p.joints.emplace_back(vals[i], vals[i + 1]);
  return p;
}

inline std::vector<PoseDescriptor> read_pose_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open pose file: " + path);
  std::vector<PoseDescriptor> poses;
  std::string line;
  while (std::getline(f, line)) {
    bool blank = true;
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
    if (blank) continue;
    poses.push_back(parse_pose_line(line));
  }
  return poses;
}

inline void write_pose_file(const std::string& path,
                            const std::vector<PoseDescriptor>& poses) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write pose file: " + path);
  for (const auto& p : poses) f << format_pose_line(p) << '\n';
}

}  // namespace rpk
