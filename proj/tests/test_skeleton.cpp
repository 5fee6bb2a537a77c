#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <utility>

#include "rpk/rng.hpp"
#include "rpk/skeleton.hpp"

using namespace rpk;

namespace {

// Closed-form rational-rounding line oracle: for each major-axis step the
// minor offset is floor((2*i*a_minor + a_major) / (2*a_major)), magnitudes
// and signs handled separately. Independent of the incremental rasterizer.
std::set<std::pair<int, int>> oracle_line(int x0, int y0, int x1, int y1) {
  const int adx = std::abs(x1 - x0), ady = std::abs(y1 - y0);
  const int sx = x1 >= x0 ? 1 : -1, sy = y1 >= y0 ? 1 : -1;
  std::set<std::pair<int, int>> px;
  if (adx >= ady) {
    for (int i = 0; i <= adx; ++i) {
      const long long num = 2LL * i * ady + adx;
      const int q = adx > 0 ? static_cast<int>(num / (2LL * adx)) : 0;
      px.insert({x0 + i * sx, y0 + q * sy});
    }
  } else {
    for (int i = 0; i <= ady; ++i) {
      const long long num = 2LL * i * adx + ady;
      const int q = static_cast<int>(num / (2LL * ady));
      px.insert({x0 + q * sx, y0 + i * sy});
    }
  }
  return px;
}

std::set<std::pair<int, int>> channel_pixels(const JointMap& jm, int ch) {
  std::set<std::pair<int, int>> px;
  for (int y = 0; y < jm.h; ++y)
    for (int x = 0; x < jm.w; ++x)
      if (jm.at(ch, y, x) == jm.fg) px.insert({x, y});
  return px;
}

PoseDescriptor zero_pose(int n) {
  PoseDescriptor p;
  p.joints.assign(n, Eigen::Vector2d(0, 0));
  return p;
}

}  // namespace

TEST_CASE("default tree structure") {
  auto t = make_default_tree();
  CHECK(t.size() == 16);
  CHECK(t.joint_names[7] == "thorax");
  CHECK(t.parent[7] == -1);
  for (int i = 0; i < 16; ++i)
    if (i != 7) CHECK(t.parent[i] != -1);
  CHECK_NOTHROW(t.validate());
  // head_top chain: head_top -> upper_neck -> thorax.
  CHECK(t.joint_names[9] == "head_top");
  CHECK(t.depth_of(9) <= 4);
  CHECK(t.depth_of(9) == 2);
}

TEST_CASE("tree validation rejects malformed trees") {
  KinematicTree t;
  t.parent = {1, 0};
  t.joint_names = {"a", "b"};
  CHECK_THROWS_AS(t.validate(), DescriptorError);  // cycle, no root
  t.parent = {-1, 1};
  CHECK_THROWS_AS(t.validate(), DescriptorError);  // self-parent
  t.parent = {-1, 5};
  CHECK_THROWS_AS(t.validate(), DescriptorError);  // out of range
}

TEST_CASE("thickness-1 horizontal segment pixels") {
  auto tree = make_default_tree();
  auto pose = zero_pose(16);
  pose.joints[0] = {2, 2};  // r_ankle, parent r_knee
  pose.joints[1] = {5, 2};
  auto jm = rasterize_jmap(pose, tree, 8, 8, 1);
  auto px = channel_pixels(jm, 0);
  CHECK(px == std::set<std::pair<int, int>>{{2, 2}, {3, 2}, {4, 2}, {5, 2}});
}

TEST_CASE("coincident joint and parent leave one disc") {
  auto tree = make_default_tree();
  auto pose = zero_pose(16);
  for (auto& j : pose.joints) j = {50, 50};  // push others away from origin
  pose.joints[0] = {10, 10};
  pose.joints[1] = {10, 10};
  auto jm = rasterize_jmap(pose, tree, 64, 64, 3);
  auto px = channel_pixels(jm, 0);
  CHECK(px.size() == 9);  // 3x3 block: offsets with dx^2+dy^2 <= 1.5^2
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx)
      CHECK(px.count({10 + dx, 10 + dy}) == 1);
}

TEST_CASE("paper-scale joint map shape") {
  auto tree = make_default_tree();
  auto pose = zero_pose(16);
  auto jm = rasterize_jmap(pose, tree, 128, 128, 3);
  CHECK(jm.n == 16);
  CHECK(jm.h == 128);
  CHECK(jm.w == 128);
}

TEST_CASE("root channel is a disc at the root location") {
  auto tree = make_default_tree();
  auto pose = zero_pose(16);
  pose.joints[7] = {20, 30};
  auto jm = rasterize_jmap(pose, tree, 64, 64, 1);
  auto px = channel_pixels(jm, 7);
  CHECK(px == std::set<std::pair<int, int>>{{20, 30}});
}

TEST_CASE("rasterizer matches the line oracle on random segments") {
  auto tree = make_default_tree();
  Rng rng(123);
  for (int trial = 0; trial < 500; ++trial) {
    const int H = 48, W = 48;
    const int x0 = rng.uniform_int(0, W - 1), y0 = rng.uniform_int(0, H - 1);
    const int x1 = rng.uniform_int(0, W - 1), y1 = rng.uniform_int(0, H - 1);
    auto pose = zero_pose(16);
    for (auto& j : pose.joints) j = {-100, -100};  // park everything off-raster
    pose.joints[0] = {double(x0), double(y0)};
    pose.joints[1] = {double(x1), double(y1)};
    auto jm = rasterize_jmap(pose, tree, H, W, 1);
    REQUIRE(channel_pixels(jm, 0) == oracle_line(x0, y0, x1, y1));
  }
}

TEST_CASE("every pixel is exactly fg or bg") {
  auto tree = make_default_tree();
  Rng rng(5);
  auto pose = zero_pose(16);
  for (auto& j : pose.joints) j = {rng.uniform(-10, 70), rng.uniform(-10, 70)};
  auto jm = rasterize_jmap(pose, tree, 64, 64, 3, 0.75f, -0.25f);
  for (float v : jm.data) CHECK((v == 0.75f || v == -0.25f));
}

TEST_CASE("channel support: moving a joint touches only it and its children") {
  auto tree = make_default_tree();
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    auto pose = zero_pose(16);
    for (auto& j : pose.joints) j = {rng.uniform(0, 63), rng.uniform(0, 63)};
    const int moved = rng.uniform_int(0, 15);
    auto pose2 = pose;
    pose2.joints[moved] = {rng.uniform(0, 63), rng.uniform(0, 63)};
    auto a = rasterize_jmap(pose, tree, 64, 64, 3);
    auto b = rasterize_jmap(pose2, tree, 64, 64, 3);
    for (int ch = 0; ch < 16; ++ch) {
      const bool may_change = ch == moved || tree.parent[ch] == moved;
      if (may_change) continue;
      for (int i = 0; i < 64 * 64; ++i)
        REQUIRE(a.channel(ch)[i] == b.channel(ch)[i]);
    }
  }
}

TEST_CASE("fully off-raster segments clip to empty channels") {
  auto tree = make_default_tree();
  auto pose = zero_pose(16);
  for (auto& j : pose.joints) j = {-50, -50};
  auto jm = rasterize_jmap(pose, tree, 32, 32, 3);
  for (float v : jm.data) CHECK(v == jm.bg);
}

TEST_CASE("rasterization is deterministic") {
  auto tree = make_default_tree();
  Rng rng(9);
  auto pose = zero_pose(16);
  for (auto& j : pose.joints) j = {rng.uniform(0, 127), rng.uniform(0, 127)};
  auto a = rasterize_jmap(pose, tree, 128, 128, 3);
  auto b = rasterize_jmap(pose, tree, 128, 128, 3);
  CHECK(a.data == b.data);
}

TEST_CASE("pose/tree size mismatch is a descriptor error") {
  auto tree = make_default_tree();
  auto pose = zero_pose(15);
  CHECK_THROWS_AS(rasterize_jmap(pose, tree, 64, 64, 3), DescriptorError);
}

TEST_CASE("rescale_pose") {
  PoseDescriptor p;
  p.joints = {{10, 20}};
  auto same = rescale_pose(p, 64, 64, 64, 64);
  CHECK(same.joints[0].x() == 10);
  CHECK(same.joints[0].y() == 20);

  auto doubled = rescale_pose(p, 64, 64, 128, 128);
  CHECK(doubled.joints[0].x() == 20);
  CHECK(doubled.joints[0].y() == 40);

  // Extents H 100 -> 50, W 50 -> 100: per-axis factors are x2 on x, x0.5 on y.
  PoseDescriptor q;
  q.joints = {{40, 40}};
  auto r = rescale_pose(q, 100, 50, 50, 100);
  CHECK(r.joints[0].x() == 80);
  CHECK(r.joints[0].y() == 20);
}

TEST_CASE("pose file round trip") {
  std::vector<PoseDescriptor> poses(2);
  Rng rng(31);
  for (auto& p : poses)
    for (int i = 0; i < 16; ++i)
      p.joints.emplace_back(rng.uniform(-5, 130), rng.normal(64, 30));
  const std::string path = "pose_roundtrip_test.txt";
  write_pose_file(path, poses);
  auto back = read_pose_file(path);
  REQUIRE(back.size() == 2);
  for (int k = 0; k < 2; ++k) {
    REQUIRE(back[k].size() == 16);
    for (int i = 0; i < 16; ++i) {
      CHECK(back[k].joints[i].x() == poses[k].joints[i].x());
      CHECK(back[k].joints[i].y() == poses[k].joints[i].y());
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("pose parsing errors") {
  CHECK_THROWS_AS(parse_pose_line("1 2 3"), DescriptorError);
  CHECK_THROWS_AS(read_pose_file("no_such_pose_file.txt"), IoError);
}
