#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cattleact {

inline constexpr std::string_view kLibraryVersion = "0.1.0";

/// Single error type for the whole library; the code enum keeps failures
/// machine-checkable without a class per failure mode.
class Error : public std::runtime_error {
public:
  enum class Code {
    MissingFile,
    SchemaViolation,
    DegenerateBox,
    InvalidSpec,
    ShapeMismatch,
    DimensionMismatch,
    EmptyBatch,
    ZeroNormEmbedding,
    ZeroCount,
    IndexOutOfRange,
    InsufficientClassDiversity,
    NonFiniteLoss,
    CheckpointMismatch,
    DegenerateConfiguration,
    InsufficientPoints,
    NoTemporalOverlap,
    LengthMismatch,
    UnknownLabel,
    PatchLargerThanImage,
    InvalidArgument,
    IoFailure,
  };

  Error(Code code, const std::string& msg) : std::runtime_error(msg), code_(code) {}

  Code code() const noexcept { return code_; }

private:
  Code code_;
};

enum class ActionClass : std::uint8_t { grazing = 0, standing, lying, riding };
enum class InteractionClass : std::uint8_t { no_interaction = 0, interest, conflict, mount };

inline constexpr std::size_t kNumActionClasses = 4;
inline constexpr std::size_t kNumInteractionClasses = 4;

inline constexpr std::array<std::string_view, kNumActionClasses> kActionClassNames = {
    "grazing", "standing", "lying", "riding"};
inline constexpr std::array<std::string_view, kNumInteractionClasses> kInteractionClassNames = {
    "no_interaction", "interest", "conflict", "mount"};

inline std::string to_string(ActionClass c) {
  return std::string(kActionClassNames[static_cast<std::size_t>(c)]);
}
inline std::string to_string(InteractionClass c) {
  return std::string(kInteractionClassNames[static_cast<std::size_t>(c)]);
}

inline std::vector<std::string> action_class_order() {
  std::vector<std::string> v;
  for (auto s : kActionClassNames) v.emplace_back(s);
  return v;
}
inline std::vector<std::string> interaction_class_order() {
  std::vector<std::string> v;
  for (auto s : kInteractionClassNames) v.emplace_back(s);
  return v;
}

inline std::optional<ActionClass> action_class_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kActionClassNames.size(); ++i)
    if (kActionClassNames[i] == s) return static_cast<ActionClass>(i);
  return std::nullopt;
}
inline std::optional<InteractionClass> interaction_class_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kInteractionClassNames.size(); ++i)
    if (kInteractionClassNames[i] == s) return static_cast<InteractionClass>(i);
  return std::nullopt;
}

/// Fixed 8-point skeleton vocabulary covering both protected-region modes.
enum class KeypointId : std::uint8_t {
  head = 0,
  neck,
  torso_center,
  buttocks,
  front_leg_left,
  front_leg_right,
  hind_leg_left,
  hind_leg_right,
};

inline constexpr std::size_t kNumKeypoints = 8;
inline constexpr std::array<std::string_view, kNumKeypoints> kKeypointNames = {
    "head",           "neck",          "torso_center",  "buttocks",
    "front_leg_left", "front_leg_right", "hind_leg_left", "hind_leg_right"};

inline std::string to_string(KeypointId k) {
  return std::string(kKeypointNames[static_cast<std::size_t>(k)]);
}
inline std::optional<KeypointId> keypoint_id_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kKeypointNames.size(); ++i)
    if (kKeypointNames[i] == s) return static_cast<KeypointId>(i);
  return std::nullopt;
}

/// Mirror partner under horizontal flip (left/right leg names swap).
inline KeypointId mirrored(KeypointId k) {
  switch (k) {
    case KeypointId::front_leg_left: return KeypointId::front_leg_right;
    case KeypointId::front_leg_right: return KeypointId::front_leg_left;
    case KeypointId::hind_leg_left: return KeypointId::hind_leg_right;
    case KeypointId::hind_leg_right: return KeypointId::hind_leg_left;
    default: return k;
  }
}

/// Axis-aligned box in image coordinates, origin top-left, continuous pixels.
struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double diagonal() const { return std::hypot(width(), height()); }

  bool valid() const {
    return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
           std::isfinite(y_max) && x_min < x_max && y_min < y_max;
  }

  void validate(const std::string& what = "BoundingBox") const {
    if (!valid())
      throw Error(Error::Code::DegenerateBox,
                  what + ": requires finite coordinates with x_min < x_max and y_min < y_max");
  }

  bool contains(const BoundingBox& inner) const {
    return inner.x_min >= x_min && inner.y_min >= y_min && inner.x_max <= x_max &&
           inner.y_max <= y_max;
  }
};

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Euclidean gap between box boundaries; 0 when the boxes touch or overlap.
inline double boundary_gap(const BoundingBox& a, const BoundingBox& b) {
  const double dx = std::max({0.0, a.x_min - b.x_max, b.x_min - a.x_max});
  const double dy = std::max({0.0, a.y_min - b.y_max, b.y_min - a.y_max});
  return std::hypot(dx, dy);
}

inline BoundingBox union_box(const BoundingBox& a, const BoundingBox& b) {
  return {std::min(a.x_min, b.x_min), std::min(a.y_min, b.y_min), std::max(a.x_max, b.x_max),
          std::max(a.y_max, b.y_max)};
}

struct Keypoint {
  KeypointId id = KeypointId::head;
  double x = 0.0;
  double y = 0.0;
  double confidence = 1.0;
};

struct Skeleton {
  std::vector<Keypoint> points;

  const Keypoint* find(KeypointId id) const {
    for (const auto& p : points)
      if (p.id == id) return &p;
    return nullptr;
  }

  void validate(const std::string& what = "Skeleton") const {
    std::array<bool, kNumKeypoints> seen{};
    for (const auto& p : points) {
      const auto idx = static_cast<std::size_t>(p.id);
      if (idx >= kNumKeypoints)
        throw Error(Error::Code::SchemaViolation, what + ": unknown keypoint id");
      if (seen[idx])
        throw Error(Error::Code::SchemaViolation,
                    what + ": duplicate keypoint '" + to_string(p.id) + "'");
      seen[idx] = true;
      if (!(p.confidence >= 0.0 && p.confidence <= 1.0))
        throw Error(Error::Code::SchemaViolation,
                    what + ": confidence of '" + to_string(p.id) + "' outside [0,1]");
      if (!std::isfinite(p.x) || !std::isfinite(p.y))
        throw Error(Error::Code::SchemaViolation,
                    what + ": non-finite coordinates for '" + to_string(p.id) + "'");
    }
  }
};

}  // namespace cattleact
