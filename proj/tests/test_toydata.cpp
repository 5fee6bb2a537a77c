#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "rpk/toydata.hpp"

using namespace rpk;

namespace {

// Independent capsule/disc membership: endpoint circles plus the
// perpendicular strip, written without the projection-clamp form the
// renderer uses.
bool in_capsule_oracle(double px, double py, const Eigen::Vector2d& a,
                       const Eigen::Vector2d& b, double r) {
  const Eigen::Vector2d p(px, py);
  if ((p - a).squaredNorm() <= r * r) return true;
  if ((p - b).squaredNorm() <= r * r) return true;
  const Eigen::Vector2d d = b - a;
  const double len = d.norm();
  if (len < 1e-12) return false;
  const Eigen::Vector2d u = d / len;
  const double along = (p - a).dot(u);
  if (along < 0 || along > len) return false;
  const double across = std::abs((p.x() - a.x()) * u.y() - (p.y() - a.y()) * u.x());
  return across <= r;
}

bool in_disc_oracle(double px, double py, const Eigen::Vector2d& c, double r) {
  return (Eigen::Vector2d(px, py) - c).squaredNorm() <= r * r;
}

ToyAppearance fixed_appearance(const KinematicTree& tree) {
  Rng rng(42);
  return sample_appearance(rng, tree, ToyConfig{});
}

}  // namespace

TEST_CASE("palette geometry backs the detection oracle") {
  const auto& joints = toy_joint_palette();
  const auto& limbs = toy_limb_palette();
  REQUIRE(joints.size() == 16);
  REQUIRE(limbs.size() == 16);
  for (std::size_t i = 0; i < joints.size(); ++i)
    for (std::size_t j = i + 1; j < joints.size(); ++j)
      CHECK((joints[i] - joints[j]).norm() >= 0.5f);
  // Joint colors stay far from every limb color and from the whole muted
  // background band [0.20, 0.42]^3.
  for (const auto& jc : joints) {
    for (const auto& lc : limbs) CHECK((jc - lc).norm() >= 0.3f);
    Eigen::Vector3f nearest;
    for (int k = 0; k < 3; ++k) nearest[k] = std::clamp(jc[k], 0.20f, 0.42f);
    CHECK((jc - nearest).norm() >= 0.3f);
  }
  // Limb identifying channels clear the background band by more than the
  // detector radius.
  for (const auto& lc : limbs) {
    Eigen::Vector3f nearest;
    for (int k = 0; k < 3; ++k) nearest[k] = std::clamp(lc[k], 0.20f, 0.42f);
    CHECK((lc - nearest).norm() >= 0.19f);
  }
}

TEST_CASE("collapsed angle ranges give a deterministic canonical pose") {
  auto tree = make_default_tree();
  auto app = fixed_appearance(tree);
  auto ranges = toy_detail::default_angle_ranges();
  for (auto& r : ranges) r.lo = r.hi = (r.lo + r.hi) / 2;
  Rng a(1), b(999);
  auto pa = sample_pose(a, tree, app, 64, 64, {}, &ranges);
  auto pb = sample_pose(b, tree, app, 64, 64, {}, &ranges);
  REQUIRE(pa.size() == 16);
  for (int i = 0; i < 16; ++i) {
    CHECK(pa.joints[i].x() == pb.joints[i].x());
    CHECK(pa.joints[i].y() == pb.joints[i].y());
  }
}

TEST_CASE("same seed reproduces the same pose") {
  auto tree = make_default_tree();
  auto app = fixed_appearance(tree);
  Rng a(7), b(7);
  auto pa = sample_pose(a, tree, app, 64, 64);
  auto pb = sample_pose(b, tree, app, 64, 64);
  for (int i = 0; i < 16; ++i) CHECK(pa.joints[i] == pb.joints[i]);
}

TEST_CASE("sampled poses keep bone lengths and stay in extended bounds") {
  auto tree = make_default_tree();
  for (int k = 0; k < 1000; ++k) {
    Rng rng(derive_seed(100, k));
    auto app = sample_appearance(rng, tree, ToyConfig{});
    auto pose = sample_pose(rng, tree, app, 64, 64);
    for (int i = 0; i < 16; ++i) {
      CHECK(pose.joints[i].x() > -64.0);
      CHECK(pose.joints[i].x() < 128.0);
      CHECK(pose.joints[i].y() > -64.0);
      CHECK(pose.joints[i].y() < 128.0);
      const int p = tree.parent[i];
      if (p == -1) continue;
      const double len = (pose.joints[i] - pose.joints[p]).norm();
      REQUIRE(std::abs(len - app.bone_lengths[i]) < 1e-6);
    }
  }
}

TEST_CASE("off-raster figure renders the bare background") {
  auto tree = make_default_tree();
  auto app = fixed_appearance(tree);
  BackgroundSpec bg;
  bg.pattern = BackgroundSpec::Pattern::checker;
  PoseDescriptor pose;
  pose.joints.assign(16, Eigen::Vector2d(-500, -500));
  auto [img, mask] = render_figure(pose, tree, app, bg, 32, 32);
  CHECK(mask.count() == 0);
  Image plain = bg.render(32, 32);
  plain.quantize();
  CHECK(img.data == plain.data);
}

TEST_CASE("joint centers carry their palette color") {
  auto tree = make_default_tree();
  auto app = fixed_appearance(tree);
  Rng rng(3);
  auto bg = sample_background(rng);
  auto pose = sample_pose(rng, tree, app, 64, 64);
  auto [img, mask] = render_figure(pose, tree, app, bg, 64, 64);
  for (int i = 0; i < 16; ++i) {
    const int x = static_cast<int>(std::lround(pose.joints[i].x()));
    const int y = static_cast<int>(std::lround(pose.joints[i].y()));
    REQUIRE(x >= 0);
    REQUIRE(x < 64);
    Eigen::Vector3f expect = app.joint_colors[i];
    for (int ch = 0; ch < 3; ++ch) {
      const float q = std::nearbyint(expect[ch] * 255.0f) / 255.0f;
      CHECK(img.at(ch, y, x) == q);
    }
    CHECK(mask.at(y, x) == 1);
  }
}

TEST_CASE("mask agrees with the geometric membership oracle") {
  auto tree = make_default_tree();
  auto app = fixed_appearance(tree);
  Rng rng(11);
  auto bg = sample_background(rng);
  auto pose = sample_pose(rng, tree, app, 64, 64);
  auto [img, mask] = render_figure(pose, tree, app, bg, 64, 64);
  std::size_t oracle_count = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      bool in = false;
      for (int i = 0; i < 16 && !in; ++i) {
        const int p = tree.parent[i];
        if (p != -1 &&
            in_capsule_oracle(x, y, pose.joints[i], pose.joints[p],
                              app.limb_width / 2.0))
          in = true;
        if (in_disc_oracle(x, y, pose.joints[i], app.joint_disc_radius()))
          in = true;
      }
      oracle_count += in;
      REQUIRE(static_cast<bool>(mask.at(y, x)) == in);
    }
  CHECK(oracle_count == mask.count());
}

TEST_CASE("pairs share appearance and background exactly") {
  auto tree = make_default_tree();
  ToyConfig cfg;
  int nonzero_pose_dist = 0;
  for (int k = 0; k < 100; ++k) {
    Rng rng(derive_seed(500, k));
    Sample s = make_pair(rng, cfg, tree);
    // Pixels outside the union of masks are bit-identical.
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x) {
        if (s.input_mask.at(y, x) || s.target_mask.at(y, x)) continue;
        for (int ch = 0; ch < 3; ++ch)
          REQUIRE(s.input_image.at(ch, y, x) == s.target_image.at(ch, y, x));
      }
    double d = 0;
    for (int i = 0; i < 16; ++i)
      d += (s.input_pose.joints[i] - s.target_pose.joints[i]).squaredNorm();
    if (d > 0) ++nonzero_pose_dist;
  }
  CHECK(nonzero_pose_dist == 100);
}

TEST_CASE("same seed gives bit-identical samples") {
  auto tree = make_default_tree();
  Rng a(77), b(77);
  Sample sa = make_pair(a, ToyConfig{}, tree);
  Sample sb = make_pair(b, ToyConfig{}, tree);
  CHECK(sa.input_image.data == sb.input_image.data);
  CHECK(sa.target_image.data == sb.target_image.data);
  CHECK(sa.input_mask.data == sb.input_mask.data);
  for (int i = 0; i < 16; ++i)
    CHECK(sa.input_pose.joints[i] == sb.input_pose.joints[i]);
}

TEST_CASE("dataset round trip is lossless") {
  auto tree = make_default_tree();
  auto samples = generate_dataset(ToyConfig{}, 4, 321, tree);
  const std::string dir = "toydata_rt_test";
  write_dataset(samples, dir);

  std::ifstream manifest(dir + "/manifest.txt");
  int lines = 0;
  std::string line;
  while (std::getline(manifest, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 4);

  auto back = read_dataset(dir);
  REQUIRE(back.size() == 4);
  for (int k = 0; k < 4; ++k) {
    CHECK(back[k].input_image.data == samples[k].input_image.data);
    CHECK(back[k].target_image.data == samples[k].target_image.data);
    CHECK(back[k].input_mask.data == samples[k].input_mask.data);
    CHECK(back[k].target_mask.data == samples[k].target_mask.data);
    CHECK(back[k].has_masks);
    for (int i = 0; i < 16; ++i) {
      CHECK(back[k].input_pose.joints[i] == samples[k].input_pose.joints[i]);
      CHECK(back[k].target_pose.joints[i] == samples[k].target_pose.joints[i]);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("empty dataset round trips") {
  const std::string dir = "toydata_empty_test";
  write_dataset({}, dir);
  auto back = read_dataset(dir);
  CHECK(back.empty());
  std::filesystem::remove_all(dir);
}

TEST_CASE("missing manifest is an io error naming the path") {
  try {
    read_dataset("definitely_missing_dir");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("definitely_missing_dir") != std::string::npos);
  }
}

TEST_CASE("frame pair selection") {
  CHECK(select_frame_pair({"c", 100}) == std::pair<int, int>{0, 59});
  CHECK(select_frame_pair({"c", 30}) == std::pair<int, int>{0, 29});
  CHECK(select_frame_pair({"c", 2}) == std::pair<int, int>{0, 1});
  CHECK_THROWS_AS(select_frame_pair({"c", 1}), DescriptorError);
  CHECK_THROWS_AS(select_frame_pair({"c", 0}), DescriptorError);
}

TEST_CASE("frame_has_figure thresholds") {
  PoseDescriptor all_in, all_out, half;
  for (int i = 0; i < 16; ++i) {
    all_in.joints.emplace_back(10 + i, 20);
    all_out.joints.emplace_back(-10, -10);
    half.joints.emplace_back(i < 8 ? 5.0 : -5.0, 5.0);
  }
  CHECK(frame_has_figure(all_in, 64, 64));
  CHECK_FALSE(frame_has_figure(all_out, 64, 64));
  CHECK(frame_has_figure(half, 64, 64, 0.5));         // 8/16 inclusive boundary
  CHECK_FALSE(frame_has_figure(half, 64, 64, 0.51));
}
