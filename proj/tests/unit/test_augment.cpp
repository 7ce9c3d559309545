#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cattleact/augment.hpp"
#include "cattleact/rng.hpp"

using namespace cattleact;

namespace {

Image noise_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image img(w, h);
  for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
  return img;
}

Skeleton centered_skeleton(double x, double y, double conf = 0.9) {
  Skeleton s;
  s.points.push_back({KeypointId::head, x, y, conf});
  s.points.push_back({KeypointId::front_leg_left, x - 8, y + 10, conf});
  s.points.push_back({KeypointId::front_leg_right, x + 8, y + 10, conf});
  return s;
}

}  // namespace

TEST_CASE("cutout is deterministic under a fixed seed") {
  const Image img = noise_image(64, 64, 1);
  const Skeleton skel = centered_skeleton(32, 32);
  CutoutConfig cfg;
  cfg.seed = 99;
  const Image a = skeleton_aware_cutout(img, skel, ProtectedRegionSpec::action_default(), cfg);
  const Image b = skeleton_aware_cutout(img, skel, ProtectedRegionSpec::action_default(), cfg);
  REQUIRE(a.pixels.size() == b.pixels.size());
  CHECK(a.pixels == b.pixels);
  cfg.seed = 100;
  const Image c = skeleton_aware_cutout(img, skel, ProtectedRegionSpec::action_default(), cfg);
  CHECK(a.pixels != c.pixels);
}

TEST_CASE("masks have the configured size and stay in bounds") {
  const Image img = noise_image(60, 40, 2);
  CutoutConfig cfg;
  cfg.n_masks = 3;
  cfg.mask_size_frac = 0.25;
  cfg.seed = 4;
  Skeleton empty;
  const Skeleton skels[1] = {empty};
  const auto res =
      skeleton_aware_cutout_traced(img, skels, ProtectedRegionSpec::action_default(), cfg);
  REQUIRE(res.masks.size() == 3);
  CHECK(res.skipped == 0);
  const int want_side = static_cast<int>(std::lround(0.25 * 40));
  for (const auto& m : res.masks) {
    CHECK(m.side == want_side);
    CHECK(m.x0 >= 0);
    CHECK(m.y0 >= 0);
    CHECK(m.x0 + m.side <= img.width);
    CHECK(m.y0 + m.side <= img.height);
  }
}

TEST_CASE("zero masks is the identity") {
  const Image img = noise_image(32, 32, 3);
  CutoutConfig cfg;
  cfg.n_masks = 0;
  const Image out =
      skeleton_aware_cutout(img, centered_skeleton(16, 16), ProtectedRegionSpec::action_default(), cfg);
  CHECK(out.pixels == img.pixels);
}

TEST_CASE("protected pixels are never masked") {
  // Many seeds, many layouts: no pixel within a protection disc may change.
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Image img = noise_image(48, 48, seed + 10);
    const Skeleton skel = centered_skeleton(12.0 + static_cast<double>(seed % 5) * 5.0,
                                            14.0 + static_cast<double>(seed % 7) * 3.0);
    CutoutConfig cfg;
    cfg.n_masks = 4;
    cfg.mask_size_frac = 0.3;
    cfg.protection_radius_frac = 0.15;
    cfg.seed = seed;
    const Skeleton skels[1] = {skel};
    const auto res =
        skeleton_aware_cutout_traced(img, skels, ProtectedRegionSpec::action_default(), cfg);
    REQUIRE(res.discs.size() == 3);
    for (const auto& d : res.discs) {
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
          const double dx = x - d.x, dy = y - d.y;
          if (dx * dx + dy * dy > d.radius * d.radius) continue;
          for (int c = 0; c < 3; ++c)
            REQUIRE(res.image.at(x, y, c) == img.at(x, y, c));
        }
    }
    CHECK(static_cast<int>(res.masks.size()) + res.skipped == 4);
  }
}

TEST_CASE("low-confidence keypoints are not protected") {
  const Image img = noise_image(40, 40, 7);
  Skeleton skel = centered_skeleton(20, 20, 0.4);  // below threshold
  CutoutConfig cfg;
  cfg.seed = 1;
  const Skeleton skels[1] = {skel};
  const auto res =
      skeleton_aware_cutout_traced(img, skels, ProtectedRegionSpec::action_default(), cfg);
  CHECK(res.discs.empty());

  skel.points[0].confidence = 0.5;  // at threshold: protected
  const Skeleton skels2[1] = {skel};
  const auto res2 =
      skeleton_aware_cutout_traced(img, skels2, ProtectedRegionSpec::action_default(), cfg);
  CHECK(res2.discs.size() == 1);
}

TEST_CASE("interaction mode protects both skeletons") {
  const Image img = noise_image(64, 48, 8);
  Skeleton a, b;
  a.points.push_back({KeypointId::head, 10, 10, 0.9});
  a.points.push_back({KeypointId::buttocks, 20, 12, 0.9});
  a.points.push_back({KeypointId::torso_center, 15, 11, 0.9});
  b.points.push_back({KeypointId::head, 44, 30, 0.9});
  b.points.push_back({KeypointId::buttocks, 54, 32, 0.9});
  b.points.push_back({KeypointId::torso_center, 49, 31, 0.9});
  CutoutConfig cfg;
  cfg.seed = 3;
  const std::vector<Skeleton> skels = {a, b};
  const auto res =
      skeleton_aware_cutout_traced(img, skels, ProtectedRegionSpec::interaction_default(), cfg);
  CHECK(res.discs.size() == 6);
}

TEST_CASE("fully protected image skips all masks") {
  const Image img = noise_image(20, 20, 9);
  Skeleton skel = centered_skeleton(10, 10);
  CutoutConfig cfg;
  cfg.n_masks = 3;
  cfg.protection_radius_frac = 2.0;  // discs cover everything
  cfg.seed = 5;
  const Skeleton skels[1] = {skel};
  const auto res =
      skeleton_aware_cutout_traced(img, skels, ProtectedRegionSpec::action_default(), cfg);
  CHECK(res.masks.empty());
  CHECK(res.skipped == 3);
  CHECK(res.image.pixels == img.pixels);
}

TEST_CASE("standard cutout equals skeleton-aware cutout with nothing protected") {
  const Image img = noise_image(50, 34, 11);
  CutoutConfig cfg;
  cfg.n_masks = 2;
  cfg.seed = 17;
  const Image plain = standard_cutout(img, cfg);
  // Same seed, same draw sequence, no discs: identical placement, identical pixels.
  const auto aware = skeleton_aware_cutout_traced(img, {}, ProtectedRegionSpec::action_default(), cfg);
  CHECK(plain.pixels == aware.image.pixels);
}

TEST_CASE("mask fill uses explicit color or image channel means") {
  Image img(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      img.at(x, y, 0) = 0.2f;
      img.at(x, y, 1) = 0.4f;
      img.at(x, y, 2) = 0.6f;
    }
  CutoutConfig cfg;
  cfg.n_masks = 1;
  cfg.mask_size_frac = 0.25;
  cfg.seed = 2;

  SECTION("explicit fill") {
    cfg.fill_rgb = {{1.0f, 0.0f, 0.5f}};
    const auto res = detail::cutout_core(img, {}, {}, cfg);
    REQUIRE(res.masks.size() == 1);
    const auto& m = res.masks[0];
    CHECK(res.image.at(m.x0, m.y0, 0) == 1.0f);
    CHECK(res.image.at(m.x0, m.y0, 1) == 0.0f);
    CHECK(res.image.at(m.x0, m.y0, 2) == 0.5f);
  }
  SECTION("default fill is the per-channel mean") {
    const auto res = detail::cutout_core(img, {}, {}, cfg);
    REQUIRE(res.masks.size() == 1);
    const auto& m = res.masks[0];
    CHECK(res.image.at(m.x0, m.y0, 0) == Catch::Approx(0.2).margin(1e-6));
    CHECK(res.image.at(m.x0, m.y0, 1) == Catch::Approx(0.4).margin(1e-6));
    CHECK(res.image.at(m.x0, m.y0, 2) == Catch::Approx(0.6).margin(1e-6));
  }
}

TEST_CASE("cutout config validation") {
  CutoutConfig cfg;
  cfg.n_masks = -1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.mask_size_frac = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.protection_radius_frac = -0.1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  CHECK_NOTHROW(cfg.validate());

  ProtectedRegionSpec spec = ProtectedRegionSpec::action_default();
  spec.protected_keypoints.erase(KeypointId::head);
  CHECK_THROWS_AS(spec.validate(), Error);
  ProtectedRegionSpec ispec = ProtectedRegionSpec::interaction_default();
  CHECK_NOTHROW(ispec.validate());
  ispec.protected_keypoints.erase(KeypointId::buttocks);
  CHECK_THROWS_AS(ispec.validate(), Error);
}

TEST_CASE("horizontal flip round trips and mirrors geometry") {
  ActionSample s;
  s.image = noise_image(24, 16, 12);
  s.box = {2, 3, 20, 15};
  s.skeleton.points.push_back({KeypointId::head, 4.0, 5.0, 0.9});
  s.skeleton.points.push_back({KeypointId::front_leg_left, 6.0, 12.0, 0.8});
  s.label = ActionClass::standing;

  const ActionSample f = horizontal_flip(s);
  CHECK(f.image.at(0, 0, 0) == s.image.at(23, 0, 0));
  CHECK(f.box.x_min == Catch::Approx(24.0 - 20.0));
  CHECK(f.box.x_max == Catch::Approx(24.0 - 2.0));
  CHECK(f.box.y_min == 3.0);
  CHECK(f.skeleton.points[0].x == Catch::Approx(20.0));
  CHECK(f.skeleton.points[0].id == KeypointId::head);
  CHECK(f.skeleton.points[1].id == KeypointId::front_leg_right);
  CHECK(f.label == ActionClass::standing);

  const ActionSample ff = horizontal_flip(f);
  CHECK(ff.image.pixels == s.image.pixels);
  CHECK(ff.box.x_min == Catch::Approx(s.box.x_min));
  CHECK(ff.skeleton.points[1].id == KeypointId::front_leg_left);
}

TEST_CASE("interaction flip moves both members") {
  InteractionSample s;
  s.union_image = noise_image(40, 20, 13);
  s.member_a.box = {0, 0, 18, 20};
  s.member_a.skeleton.points.push_back({KeypointId::head, 2.0, 4.0, 0.9});
  s.member_b.box = {22, 0, 40, 20};
  s.member_b.skeleton.points.push_back({KeypointId::head, 30.0, 6.0, 0.9});
  s.label = InteractionClass::conflict;

  const InteractionSample f = horizontal_flip(s);
  CHECK(f.member_a.box.x_min == Catch::Approx(40.0 - 18.0));
  CHECK(f.member_b.box.x_max == Catch::Approx(40.0 - 22.0));
  CHECK(f.member_b.skeleton.points[0].x == Catch::Approx(10.0));
  CHECK(f.label == InteractionClass::conflict);
  CHECK_NOTHROW(f.validate());
}

TEST_CASE("brightness/contrast jitter is bounded and deterministic") {
  const Image img = noise_image(10, 10, 14);
  JitterConfig jc;
  Rng r1(77), r2(77);
  const Image a = brightness_contrast_jitter(img, jc, r1);
  const Image b = brightness_contrast_jitter(img, jc, r2);
  CHECK(a.pixels == b.pixels);
  for (float p : a.pixels) {
    CHECK(p >= 0.0f);
    CHECK(p <= 1.0f);
  }
  // zero-amplitude jitter is the identity
  JitterConfig zero;
  zero.max_brightness = 0.0;
  zero.max_contrast = 0.0;
  Rng r3(1);
  const Image c = brightness_contrast_jitter(img, zero, r3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    CHECK(c.pixels[i] == Catch::Approx(img.pixels[i]).margin(1e-6));
}
