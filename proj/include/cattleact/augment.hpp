#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "cattleact/image.hpp"
#include "cattleact/manifest.hpp"
#include "cattleact/rng.hpp"
#include "cattleact/types.hpp"

namespace cattleact {

/// Keypoints below this confidence are not protected (pose estimates are noisy).
inline constexpr double kProtectedConfidenceThreshold = 0.5;

struct CutoutConfig {
  int n_masks = 2;
  double mask_size_frac = 0.25;        // square side as a fraction of min(H,W)
  double protection_radius_frac = 0.15;  // disc radius as a fraction of min(H,W)
  int max_resample_attempts = 10;
  std::uint64_t seed = 0;
  /// Mask fill; unset falls back to the image's own per-channel means.
  /// Training passes the dataset means here.
  std::optional<std::array<float, 3>> fill_rgb;

  void validate() const {
    if (n_masks < 0)
      throw Error(Error::Code::InvalidSpec, "CutoutConfig: n_masks must be >= 0");
    if (!(mask_size_frac > 0.0 && mask_size_frac < 1.0))
      throw Error(Error::Code::InvalidSpec, "CutoutConfig: mask_size_frac must be in (0,1)");
    if (protection_radius_frac < 0.0)
      throw Error(Error::Code::InvalidSpec, "CutoutConfig: protection_radius_frac must be >= 0");
    if (max_resample_attempts < 0)
      throw Error(Error::Code::InvalidSpec, "CutoutConfig: max_resample_attempts must be >= 0");
  }
};

struct ProtectedRegionSpec {
  enum class Mode : std::uint8_t { action, interaction };

  Mode mode = Mode::action;
  std::set<KeypointId> protected_keypoints;

  static ProtectedRegionSpec action_default() {
    return {Mode::action,
            {KeypointId::head, KeypointId::front_leg_left, KeypointId::front_leg_right}};
  }
  static ProtectedRegionSpec interaction_default() {
    return {Mode::interaction,
            {KeypointId::head, KeypointId::buttocks, KeypointId::torso_center}};
  }

  void validate() const {
    auto require = [&](KeypointId k) {
      if (!protected_keypoints.count(k))
        throw Error(Error::Code::InvalidSpec,
                    "ProtectedRegionSpec: protected set must include '" + to_string(k) + "'");
    };
    if (mode == Mode::action) {
      require(KeypointId::head);
      require(KeypointId::front_leg_left);
      require(KeypointId::front_leg_right);
    } else {
      require(KeypointId::head);
      require(KeypointId::buttocks);
      require(KeypointId::torso_center);
    }
  }
};

struct MaskRect {
  int x0 = 0;
  int y0 = 0;
  int side = 0;
};

struct ProtectedDisc {
  double x = 0.0;
  double y = 0.0;
  double radius = 0.0;
};

struct CutoutResult {
  Image image;
  std::vector<MaskRect> masks;
  std::vector<ProtectedDisc> discs;
  int skipped = 0;  // masks dropped after exhausting resample attempts
};

namespace detail {

/// Conservative square/disc intersection: distance from the disc center to the
/// closest point of the continuous rect spanned by the painted integer pixels.
/// This lower-bounds the distance to any painted pixel coordinate, so a mask
/// accepted here can never touch a protected pixel.
inline bool mask_hits_disc(const MaskRect& m, const ProtectedDisc& d) {
  const double cx = std::clamp(d.x, static_cast<double>(m.x0), static_cast<double>(m.x0 + m.side - 1));
  const double cy = std::clamp(d.y, static_cast<double>(m.y0), static_cast<double>(m.y0 + m.side - 1));
  const double dx = cx - d.x;
  const double dy = cy - d.y;
  return dx * dx + dy * dy <= d.radius * d.radius;
}

inline CutoutResult cutout_core(const Image& input, std::span<const Skeleton> skeletons,
                                const std::set<KeypointId>& protected_set,
                                const CutoutConfig& cfg) {
  cfg.validate();
  CutoutResult result;
  result.image = input;
  if (input.empty()) return result;

  const int min_dim = std::min(input.width, input.height);
  const double radius = cfg.protection_radius_frac * min_dim;
  for (const auto& skel : skeletons) {
    for (const auto& p : skel.points) {
      if (!protected_set.count(p.id)) continue;
      if (p.confidence < kProtectedConfidenceThreshold) continue;
      // Out-of-bounds keypoints are treated as absent.
      if (p.x < 0.0 || p.y < 0.0 || p.x >= input.width || p.y >= input.height) continue;
      result.discs.push_back({p.x, p.y, radius});
    }
  }

  const int side = std::max(1, static_cast<int>(std::lround(cfg.mask_size_frac * min_dim)));
  if (side > input.width || side > input.height) return result;

  const std::array<float, 3> fill = cfg.fill_rgb ? *cfg.fill_rgb : [&] {
    const auto m = input.channel_means();
    return std::array<float, 3>{static_cast<float>(m[0]), static_cast<float>(m[1]),
                                static_cast<float>(m[2])};
  }();

  Rng rng(cfg.seed);
  for (int i = 0; i < cfg.n_masks; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt <= cfg.max_resample_attempts; ++attempt) {
      MaskRect m;
      m.side = side;
      m.x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(input.width - side + 1)));
      m.y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(input.height - side + 1)));
      const bool conflict = std::any_of(result.discs.begin(), result.discs.end(),
                                        [&](const ProtectedDisc& d) { return mask_hits_disc(m, d); });
      if (!conflict) {
        fill_rect(result.image, m.x0, m.y0, m.side, m.side, fill);
        result.masks.push_back(m);
        placed = true;
        break;
      }
    }
    if (!placed) ++result.skipped;
  }
  return result;
}

}  // namespace detail

/// Cutout that never masks pixels within the protection radius of any
/// protected keypoint (confidence >= 0.5); conflicting masks are resampled
/// and skipped after max_resample_attempts.
inline CutoutResult skeleton_aware_cutout_traced(const Image& image,
                                                 std::span<const Skeleton> skeletons,
                                                 const ProtectedRegionSpec& spec,
                                                 const CutoutConfig& cfg) {
  spec.validate();
  return detail::cutout_core(image, skeletons, spec.protected_keypoints, cfg);
}

inline Image skeleton_aware_cutout(const Image& image, const Skeleton& skeleton,
                                   const ProtectedRegionSpec& spec, const CutoutConfig& cfg) {
  const Skeleton skels[1] = {skeleton};
  return skeleton_aware_cutout_traced(image, skels, spec, cfg).image;
}

/// Interaction mode: protection applies to both members' skeletons within the
/// union crop.
inline Image skeleton_aware_cutout(const Image& image, const std::vector<Skeleton>& skeletons,
                                   const ProtectedRegionSpec& spec, const CutoutConfig& cfg) {
  return skeleton_aware_cutout_traced(image, skeletons, spec, cfg).image;
}

/// Plain cutout: identical to skeleton_aware_cutout with an empty protected
/// set (same code path, pixel-exact equivalence).
inline Image standard_cutout(const Image& image, const CutoutConfig& cfg) {
  return detail::cutout_core(image, {}, {}, cfg).image;
}

// ---------------------------------------------------------------------------
// Horizontal flip
// ---------------------------------------------------------------------------

inline Image flip_image(const Image& src) {
  Image out(src.width, src.height);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = src.at(src.width - 1 - x, y, c);
  return out;
}

inline Skeleton flip_skeleton(const Skeleton& s, double width) {
  Skeleton out = s;
  for (auto& p : out.points) {
    p.x = width - p.x;
    p.id = mirrored(p.id);
  }
  return out;
}

inline BoundingBox flip_box(const BoundingBox& b, double width) {
  return {width - b.x_max, b.y_min, width - b.x_min, b.y_max};
}

/// Mirror the image; reflect box and keypoint x-coordinates (x -> W - x) and
/// swap left/right keypoint names. Labels are untouched.
inline ActionSample horizontal_flip(const ActionSample& s) {
  ActionSample out;
  out.image = flip_image(s.image);
  const double w = static_cast<double>(s.image.width);
  out.box = flip_box(s.box, w);
  out.skeleton = flip_skeleton(s.skeleton, w);
  out.label = s.label;
  return out;
}

inline InteractionSample horizontal_flip(const InteractionSample& s) {
  InteractionSample out;
  out.union_image = flip_image(s.union_image);
  const double w = static_cast<double>(s.union_image.width);
  auto flip_member = [&](const ActionSample& m) {
    ActionSample fm;
    fm.box = flip_box(m.box, w);
    fm.skeleton = flip_skeleton(m.skeleton, w);
    fm.label = m.label;
    return fm;
  };
  out.member_a = flip_member(s.member_a);
  out.member_b = flip_member(s.member_b);
  out.label = s.label;
  return out;
}

// ---------------------------------------------------------------------------
// Simple photometric jitter (stand-in for a full RandAugment policy)
// ---------------------------------------------------------------------------

struct JitterConfig {
  double max_brightness = 0.08;  // additive shift bound
  double max_contrast = 0.15;    // multiplicative deviation bound
};

inline Image brightness_contrast_jitter(const Image& src, const JitterConfig& cfg, Rng& rng) {
  const double b = rng.uniform(-cfg.max_brightness, cfg.max_brightness);
  const double c = rng.uniform(1.0 - cfg.max_contrast, 1.0 + cfg.max_contrast);
  Image out = src;
  for (auto& v : out.pixels)
    v = clamp01(static_cast<float>((static_cast<double>(v) - 0.5) * c + 0.5 + b));
  return out;
}

}  // namespace cattleact
