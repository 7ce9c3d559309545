#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cattleact/association.hpp"
#include "cattleact/image.hpp"
#include "cattleact/manifest.hpp"
#include "cattleact/png_io.hpp"
#include "cattleact/rng.hpp"
#include "cattleact/types.hpp"

namespace cattleact {

// ---------------------------------------------------------------------------
// Scene specification
// ---------------------------------------------------------------------------

/// Class order of the mix vector: the four action classes then the four
/// interaction classes, each in declaration order.
inline std::vector<std::string> mix_class_order() {
  std::vector<std::string> v = action_class_order();
  for (const auto& s : interaction_class_order()) v.push_back(s);
  return v;
}

struct SyntheticSceneSpec {
  int n_cattle = 6;
  double arena_w_m = 30.0;
  double arena_h_m = 20.0;
  std::array<double, 8> class_mix = {0.15, 0.1, 0.1, 0.05, 0.25, 0.15, 0.1, 0.1};
  double gps_noise_sigma = 0.0;
  std::uint64_t seed = 0;
  int n_samples = 100;

  void validate() const {
    if (n_cattle <= 0) throw Error(Error::Code::InvalidSpec, "SyntheticSceneSpec: n_cattle <= 0");
    if (!(arena_w_m > 0.0) || !(arena_h_m > 0.0))
      throw Error(Error::Code::InvalidSpec, "SyntheticSceneSpec: arena must have positive size");
    double sum = 0.0;
    for (double p : class_mix) {
      if (!(p >= 0.0))
        throw Error(Error::Code::InvalidSpec, "SyntheticSceneSpec: negative mix entry");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw Error(Error::Code::InvalidSpec, "SyntheticSceneSpec: class_mix must sum to 1");
    if (gps_noise_sigma < 0.0)
      throw Error(Error::Code::InvalidSpec, "SyntheticSceneSpec: gps_noise_sigma < 0");
    if (n_samples < 0) throw Error(Error::Code::InvalidSpec, "SyntheticSceneSpec: n_samples < 0");
  }
};

inline nlohmann::ordered_json scene_spec_to_json(const SyntheticSceneSpec& s) {
  nlohmann::ordered_json j;
  j["n_cattle"] = s.n_cattle;
  j["arena_w_m"] = s.arena_w_m;
  j["arena_h_m"] = s.arena_h_m;
  nlohmann::ordered_json mix;
  const auto order = mix_class_order();
  for (std::size_t i = 0; i < order.size(); ++i) mix[order[i]] = s.class_mix[i];
  j["class_mix"] = std::move(mix);
  j["gps_noise_sigma"] = s.gps_noise_sigma;
  j["seed"] = s.seed;
  j["n_samples"] = s.n_samples;
  return j;
}

inline SyntheticSceneSpec scene_spec_from_json(const nlohmann::json& j) {
  SyntheticSceneSpec s;
  try {
    s.n_cattle = j.at("n_cattle").get<int>();
    s.arena_w_m = j.at("arena_w_m").get<double>();
    s.arena_h_m = j.at("arena_h_m").get<double>();
    const auto order = mix_class_order();
    for (std::size_t i = 0; i < order.size(); ++i)
      s.class_mix[i] = j.at("class_mix").at(order[i]).get<double>();
    s.gps_noise_sigma = j.at("gps_noise_sigma").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.n_samples = j.at("n_samples").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Error::Code::SchemaViolation,
                std::string("scene_spec_from_json: ") + e.what());
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Rendering primitives
// ---------------------------------------------------------------------------

namespace detail {

inline void blend_px(Image& img, int x, int y, const std::array<float, 3>& rgb) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  const std::size_t i = (static_cast<std::size_t>(y) * img.width + x) * 3;
  for (int c = 0; c < 3; ++c) img.pixels[i + static_cast<std::size_t>(c)] = rgb[static_cast<std::size_t>(c)];
}

inline void draw_ellipse(Image& img, double cx, double cy, double rx, double ry, double angle,
                         const std::array<float, 3>& rgb) {
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double ex = std::sqrt(rx * rx * ca * ca + ry * ry * sa * sa);
  const double ey = std::sqrt(rx * rx * sa * sa + ry * ry * ca * ca);
  const int x0 = static_cast<int>(std::floor(cx - ex)), x1 = static_cast<int>(std::ceil(cx + ex));
  const int y0 = static_cast<int>(std::floor(cy - ey)), y1 = static_cast<int>(std::ceil(cy + ey));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5) - cx, dy = (y + 0.5) - cy;
      const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
      if ((u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0) blend_px(img, x, y, rgb);
    }
}

inline void draw_disc(Image& img, double cx, double cy, double r,
                      const std::array<float, 3>& rgb) {
  draw_ellipse(img, cx, cy, r, r, 0.0, rgb);
}

/// Per-action geometry and the head-disc color that carries the class cue.
struct AnimalStyle {
  double body_rx = 9.0, body_ry = 5.0;
  double angle = 0.0;     // body axis, radians (y axis points down)
  double head_dy = 0.0;   // canvas-vertical head offset
  bool legs_visible = true;
  std::array<float, 3> head_rgb{0.5f, 0.5f, 0.5f};
};

inline AnimalStyle animal_style(ActionClass action, int facing, Rng& rng) {
  AnimalStyle st;
  st.body_rx = rng.uniform(8.2, 9.8);
  st.body_ry = rng.uniform(4.4, 5.4);
  st.angle = rng.uniform(-0.08, 0.08);
  auto jitter = [&](double base) { return static_cast<float>(base + rng.uniform(-0.04, 0.04)); };
  switch (action) {
    case ActionClass::grazing:
      st.head_dy = rng.uniform(4.0, 5.0);  // head lowered to the ground
      st.head_rgb = {jitter(0.95), jitter(0.85), jitter(0.2)};
      break;
    case ActionClass::standing:
      st.head_dy = rng.uniform(-5.0, -4.0);  // head raised
      st.head_rgb = {jitter(0.2), jitter(0.75), jitter(0.95)};
      break;
    case ActionClass::lying:
      st.body_rx = rng.uniform(9.2, 10.8);
      st.body_ry = rng.uniform(2.4, 3.2);  // flattened silhouette
      st.head_dy = rng.uniform(-0.5, 0.5);
      st.legs_visible = false;
      st.head_rgb = {jitter(0.25), jitter(0.25), jitter(0.95)};
      break;
    case ActionClass::riding:
      st.angle = facing * rng.uniform(-0.78, -0.62);  // reared-up diagonal pose
      st.head_dy = rng.uniform(-0.5, 0.5);
      st.head_rgb = {jitter(0.95), jitter(0.4), jitter(0.1)};
      break;
  }
  return st;
}

struct RenderedAnimal {
  Skeleton skeleton;   // canvas coordinates
  BoundingBox box;     // canvas coordinates, integer-aligned
  double cx = 0.0, cy = 0.0;
  int facing = 1;
  AnimalStyle style;
};

/// Compute keypoints and the tight box from the pose; drawing is separate so
/// all metadata-affecting rng draws happen before any pixel work.
inline RenderedAnimal plan_animal(double cx, double cy, int facing, ActionClass action, Rng& rng,
                                  int canvas_w, int canvas_h) {
  RenderedAnimal a;
  a.cx = cx;
  a.cy = cy;
  a.facing = facing;
  a.style = animal_style(action, facing, rng);
  const AnimalStyle& st = a.style;
  const double ax = std::cos(st.angle), ay = std::sin(st.angle);
  const double f = static_cast<double>(facing);

  const double head_x = cx + f * (st.body_rx + 2.5) * ax;
  const double head_y = cy + f * (st.body_rx + 2.5) * ay + st.head_dy;
  const double neck_x = cx + f * (st.body_rx - 1.0) * ax;
  const double neck_y = cy + f * (st.body_rx - 1.0) * ay + 0.5 * st.head_dy;
  const double butt_x = cx - f * (st.body_rx - 0.5) * ax;
  const double butt_y = cy - f * (st.body_rx - 0.5) * ay;
  const double leg_y = cy + st.body_ry + (st.legs_visible ? 1.8 : 0.2);
  const double front_x = cx + f * (st.body_rx - 2.5) * ax;
  const double hind_x = cx - f * (st.body_rx - 2.5) * ax;
  const double front_y = st.legs_visible ? leg_y + f * (st.body_rx - 2.5) * ay : leg_y;
  const double hind_y = st.legs_visible ? leg_y - f * (st.body_rx - 2.5) * ay : leg_y;

  auto conf = [&](bool visible) {
    return visible ? rng.uniform(0.85, 0.97) : rng.uniform(0.2, 0.4);
  };
  a.skeleton.points = {
      {KeypointId::head, head_x, head_y, conf(true)},
      {KeypointId::neck, neck_x, neck_y, conf(true)},
      {KeypointId::torso_center, cx, cy, conf(true)},
      {KeypointId::buttocks, butt_x, butt_y, conf(true)},
      {KeypointId::front_leg_left, front_x - 1.2, front_y, conf(st.legs_visible)},
      {KeypointId::front_leg_right, front_x + 1.2, front_y, conf(st.legs_visible)},
      {KeypointId::hind_leg_left, hind_x - 1.2, hind_y, conf(st.legs_visible)},
      {KeypointId::hind_leg_right, hind_x + 1.2, hind_y, conf(st.legs_visible)},
  };

  const double ex = std::sqrt(st.body_rx * st.body_rx * ax * ax + st.body_ry * st.body_ry * ay * ay);
  const double ey = std::sqrt(st.body_rx * st.body_rx * ay * ay + st.body_ry * st.body_ry * ax * ax);
  double lo_x = cx - ex, hi_x = cx + ex, lo_y = cy - ey, hi_y = cy + ey;
  auto grow = [&](double x, double y, double r) {
    lo_x = std::min(lo_x, x - r);
    hi_x = std::max(hi_x, x + r);
    lo_y = std::min(lo_y, y - r);
    hi_y = std::max(hi_y, y + r);
  };
  grow(head_x, head_y, 3.2);
  if (st.legs_visible) {
    grow(front_x - 1.2, front_y, 1.5);
    grow(front_x + 1.2, front_y, 1.5);
    grow(hind_x - 1.2, hind_y, 1.5);
    grow(hind_x + 1.2, hind_y, 1.5);
  }
  a.box = {std::floor(std::max(0.0, lo_x - 1.5)), std::floor(std::max(0.0, lo_y - 1.5)),
           std::ceil(std::min<double>(canvas_w, hi_x + 1.5)),
           std::ceil(std::min<double>(canvas_h, hi_y + 1.5))};
  return a;
}

inline void draw_animal(Image& img, const RenderedAnimal& a, Rng& rng) {
  const AnimalStyle& st = a.style;
  auto jitter = [&](double base) { return static_cast<float>(base + rng.uniform(-0.03, 0.03)); };
  const std::array<float, 3> body{jitter(0.45), jitter(0.3), jitter(0.2)};
  draw_ellipse(img, a.cx, a.cy, st.body_rx, st.body_ry, st.angle, body);
  if (st.legs_visible) {
    const std::array<float, 3> front{0.92f, 0.92f, 0.92f};
    const std::array<float, 3> hind{0.55f, 0.55f, 0.55f};
    for (const auto& p : a.skeleton.points) {
      if (p.id == KeypointId::front_leg_left || p.id == KeypointId::front_leg_right)
        draw_disc(img, p.x, p.y, 1.3, front);
      if (p.id == KeypointId::hind_leg_left || p.id == KeypointId::hind_leg_right)
        draw_disc(img, p.x, p.y, 1.3, hind);
    }
  }
  const auto& head = a.skeleton.points[0];
  draw_disc(img, head.x, head.y, 3.0, st.head_rgb);
}

inline Image grass_canvas(int w, int h, Rng& rng) {
  Image img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i + 2 < img.pixels.size(); i += 3) {
    const float n = static_cast<float>(rng.uniform(-0.06, 0.06));
    img.pixels[i] = 0.2f + n;
    img.pixels[i + 1] = 0.45f + n + static_cast<float>(rng.uniform(-0.03, 0.03));
    img.pixels[i + 2] = 0.15f + n;
  }
  return img;
}

inline void draw_mount_checker(Image& img, const BoundingBox& rect) {
  const std::array<float, 3> c1{0.85f, 0.1f, 0.9f};
  const std::array<float, 3> c2{0.55f, 0.0f, 0.6f};
  const int x0 = static_cast<int>(std::lround(rect.x_min));
  const int y0 = static_cast<int>(std::lround(rect.y_min));
  const int x1 = static_cast<int>(std::lround(rect.x_max));
  const int y1 = static_cast<int>(std::lround(rect.y_max));
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      blend_px(img, x, y, ((x / 2 + y / 2) % 2 == 0) ? c1 : c2);
}

inline std::string sample_id(ManifestRecord::Kind kind, int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%s_%06d", kind == ManifestRecord::Kind::action ? "a" : "i",
                index);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

struct GenerateOptions {
  bool write_images = true;  // metadata-only runs are handy for statistics
};

struct GeneratedDataset {
  DatasetManifest manifest;
  std::map<std::string, BoundingBox> mount_regions;  // sample id -> overlap rect
};

inline constexpr int kActionCanvas = 40;
inline constexpr int kInteractionCanvasW = 64;
inline constexpr int kInteractionCanvasH = 44;

namespace detail {

struct PlannedSample {
  ManifestRecord record;
  std::optional<BoundingBox> mount_rect;
  std::vector<RenderedAnimal> animals;  // 1 for action, 2 for interaction (a then b)
  int canvas_w = 0, canvas_h = 0;
};

inline PlannedSample plan_action_sample(ActionClass action, const std::string& id, Rng& rng) {
  PlannedSample s;
  s.canvas_w = kActionCanvas;
  s.canvas_h = kActionCanvas;
  const double cx = 19.0 + rng.uniform(-2.0, 2.0);
  const double cy = 20.0 + rng.uniform(-2.0, 2.0);
  const int facing = rng.bernoulli(0.5) ? 1 : -1;
  s.animals.push_back(plan_animal(cx, cy, facing, action, rng, s.canvas_w, s.canvas_h));
  s.record.kind = ManifestRecord::Kind::action;
  s.record.image = "images/" + id + ".png";
  s.record.box = s.animals[0].box;
  s.record.skeleton = s.animals[0].skeleton;
  s.record.label = to_string(action);
  return s;
}

inline MemberRecord member_from(const RenderedAnimal& a, ActionClass label) {
  MemberRecord m;
  m.box = a.box;
  m.skeleton = a.skeleton;
  m.label = label;
  return m;
}

inline PlannedSample plan_interaction_sample(InteractionClass cls, const std::string& id,
                                             Rng& rng) {
  PlannedSample s;
  s.canvas_w = kInteractionCanvasW;
  s.canvas_h = kInteractionCanvasH;
  const int W = s.canvas_w, H = s.canvas_h;

  ActionClass label_a = ActionClass::standing, label_b = ActionClass::standing;
  RenderedAnimal first, second;
  switch (cls) {
    case InteractionClass::no_interaction: {
      const std::array<ActionClass, 3> pool{ActionClass::grazing, ActionClass::standing,
                                            ActionClass::lying};
      label_a = pool[rng.below(3)];
      label_b = pool[rng.below(3)];
      const double cy1 = 20.0 + rng.uniform(-3.0, 3.0);
      const double cy2 = 24.0 + rng.uniform(-3.0, 3.0);
      const int f1 = rng.bernoulli(0.5) ? 1 : -1;
      const int f2 = rng.bernoulli(0.5) ? 1 : -1;
      first = plan_animal(14.0 + rng.uniform(-1.5, 1.5), cy1, f1, label_a, rng, W, H);
      second = plan_animal(50.0 + rng.uniform(-1.5, 1.5), cy2, f2, label_b, rng, W, H);
      break;
    }
    case InteractionClass::interest:
    case InteractionClass::conflict: {
      label_a = ActionClass::standing;
      label_b = ActionClass::standing;
      const double gap = cls == InteractionClass::interest ? rng.uniform(2.0, 5.0)
                                                           : rng.uniform(-1.0, 1.5);
      const double mid = 32.0 + rng.uniform(-1.5, 1.5);
      const double cy1 = 22.0 + rng.uniform(-2.0, 2.0);
      const double cy2 = 22.0 + rng.uniform(-2.0, 2.0);
      // facing each other: left animal faces right and vice versa
      first = plan_animal(mid - 14.0 - gap / 2.0, cy1, 1, label_a, rng, W, H);
      second = plan_animal(mid + 14.0 + gap / 2.0, cy2, -1, label_b, rng, W, H);
      break;
    }
    case InteractionClass::mount: {
      label_a = ActionClass::riding;    // the rider
      label_b = ActionClass::standing;  // the mounted animal
      const int d = rng.bernoulli(0.5) ? 1 : -1;
      const double mcx = 32.0 + rng.uniform(-2.0, 2.0);
      const double mcy = 26.0 + rng.uniform(-1.5, 1.5);
      second = plan_animal(mcx, mcy, d, label_b, rng, W, H);
      const double rcx = mcx - d * rng.uniform(6.0, 8.0);
      const double rcy = mcy - rng.uniform(7.0, 9.0);
      first = plan_animal(rcx, rcy, d, label_a, rng, W, H);

      // discriminative overlap: the rider's box over the mounted rear quarter
      const BoundingBox& mb = second.box;
      const BoundingBox rear = d > 0
                                   ? BoundingBox{mb.x_min, mb.y_min,
                                                 mb.x_min + 0.45 * mb.width(), mb.y_max}
                                   : BoundingBox{mb.x_max - 0.45 * mb.width(), mb.y_min,
                                                 mb.x_max, mb.y_max};
      const double x0 = std::max(first.box.x_min, rear.x_min);
      const double y0 = std::max(first.box.y_min, rear.y_min);
      const double x1 = std::min(first.box.x_max, rear.x_max);
      const double y1 = std::min(first.box.y_max, rear.y_max);
      BoundingBox rect{x0, y0, std::max(x1, x0 + 6.0), std::max(y1, y0 + 6.0)};
      rect.x_min = std::clamp(rect.x_min, 0.0, static_cast<double>(W - 8));
      rect.y_min = std::clamp(rect.y_min, 0.0, static_cast<double>(H - 8));
      rect.x_max = std::clamp(rect.x_max, rect.x_min + 6.0, static_cast<double>(W));
      rect.y_max = std::clamp(rect.y_max, rect.y_min + 6.0, static_cast<double>(H));
      s.mount_rect = rect;
      break;
    }
  }

  // randomize which animal is listed as member_a
  const bool swap = rng.bernoulli(0.5);
  const RenderedAnimal& a = swap ? second : first;
  const RenderedAnimal& b = swap ? first : second;
  const ActionClass la = swap ? label_b : label_a;
  const ActionClass lb = swap ? label_a : label_b;
  s.animals = {a, b};

  s.record.kind = ManifestRecord::Kind::interaction;
  s.record.image = "images/" + id + ".png";
  s.record.box = {0.0, 0.0, static_cast<double>(W), static_cast<double>(H)};
  s.record.label = to_string(cls);
  s.record.member_a = member_from(a, la);
  s.record.member_b = member_from(b, lb);
  return s;
}

inline void render_sample(Image& img, const PlannedSample& s, InteractionClass cls, Rng& rng) {
  // torso marks carry the close-contact interaction cue
  std::optional<std::array<float, 3>> torso_mark;
  if (s.record.kind == ManifestRecord::Kind::interaction) {
    if (cls == InteractionClass::interest) torso_mark = {{0.1f, 0.95f, 0.6f}};
    if (cls == InteractionClass::conflict) torso_mark = {{0.85f, 0.05f, 0.25f}};
  }
  for (const auto& a : s.animals) {
    draw_animal(img, a, rng);
    if (torso_mark) draw_disc(img, a.cx, a.cy, 2.2, *torso_mark);
  }
  if (s.mount_rect) draw_mount_checker(img, *s.mount_rect);
}

}  // namespace detail

/// Generate a labeled synthetic dataset under out_dir: images/*.png, a
/// manifest (manifest.jsonl), and a sidecar (regions.jsonl) mapping each mount
/// sample to its discriminative overlap rectangle. Deterministic in `spec`.
inline GeneratedDataset generate_synthetic_dataset(const SyntheticSceneSpec& spec,
                                                   const std::filesystem::path& out_dir,
                                                   const GenerateOptions& opts = {}) {
  spec.validate();
  std::filesystem::create_directories(out_dir / "images");

  Rng root(spec.seed);
  std::vector<Rng> streams;
  streams.reserve(static_cast<std::size_t>(spec.n_samples));
  for (int i = 0; i < spec.n_samples; ++i)
    streams.push_back(root.fork(static_cast<std::uint64_t>(i)));

  const auto order = mix_class_order();
  DatasetManifest manifest;
  manifest.base_dir = out_dir;
  std::map<std::string, BoundingBox> regions;

  for (int i = 0; i < spec.n_samples; ++i) {
    Rng& rng = streams[static_cast<std::size_t>(i)];
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t cls_idx = spec.class_mix.size() - 1;
    for (std::size_t c = 0; c < spec.class_mix.size(); ++c) {
      acc += spec.class_mix[c];
      if (u < acc) {
        cls_idx = c;
        break;
      }
    }

    detail::PlannedSample planned;
    InteractionClass icls = InteractionClass::no_interaction;
    if (cls_idx < kNumActionClasses) {
      const auto id = detail::sample_id(ManifestRecord::Kind::action, i);
      planned = detail::plan_action_sample(static_cast<ActionClass>(cls_idx), id, rng);
    } else {
      const auto id = detail::sample_id(ManifestRecord::Kind::interaction, i);
      icls = static_cast<InteractionClass>(cls_idx - kNumActionClasses);
      planned = detail::plan_interaction_sample(icls, id, rng);
      if (planned.mount_rect) regions[id] = *planned.mount_rect;
    }

    if (opts.write_images) {
      Image img = detail::grass_canvas(planned.canvas_w, planned.canvas_h, rng);
      detail::render_sample(img, planned, icls, rng);
      write_png(img, (out_dir / planned.record.image).string());
    }
    manifest.records.push_back(std::move(planned.record));
  }
  manifest.recompute_counts();
  save_manifest(manifest, out_dir / "manifest.jsonl");

  std::ofstream rout(out_dir / "regions.jsonl", std::ios::binary);
  if (!rout)
    throw Error(Error::Code::IoFailure, "generate_synthetic_dataset: cannot write regions.jsonl");
  for (const auto& [id, rect] : regions) {
    nlohmann::ordered_json j;
    j["id"] = id;
    j["rect"] = {rect.x_min, rect.y_min, rect.x_max, rect.y_max};
    rout << j.dump() << "\n";
  }
  rout.close();

  return {std::move(manifest), std::move(regions)};
}

inline std::map<std::string, BoundingBox> load_mount_regions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw Error(Error::Code::MissingFile, "load_mount_regions: cannot open " + path.string());
  std::map<std::string, BoundingBox> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("id") || !j.contains("rect") ||
        !j.at("rect").is_array() || j.at("rect").size() != 4)
      throw Error(Error::Code::SchemaViolation,
                  "load_mount_regions: line " + std::to_string(row) + ": bad record");
    const auto& r = j.at("rect");
    out[j.at("id").get<std::string>()] =
        BoundingBox{r[0].get<double>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>()};
  }
  return out;
}

// ---------------------------------------------------------------------------
// GPS track + tracklet generation
// ---------------------------------------------------------------------------

struct SyntheticGpsBundle {
  std::vector<GpsTrack> gps;    // noisy fixes, one track per animal
  std::vector<GpsTrack> truth;  // noise-free ground positions at the same times
  std::vector<Tracklet> tracklets;  // image-plane boxes anchored on the truth
  Homography homography;            // ground meters -> image pixels
  std::vector<Correspondence> correspondences;  // enough to re-fit the homography
};

namespace detail {

inline Homography pasture_camera() {
  Homography h;
  h.H << 14.0, 1.2, 30.0, 0.8, 9.5, 20.0, 0.004, 0.02, 1.0;
  return h;
}

}  // namespace detail

/// Smooth sinusoid trajectories on a >= 3 m grid, sampled at `rate` for
/// `duration` seconds, with optional Gaussian position noise on the GPS side.
/// Tracklets are exact: each frame's bottom-center equals the projected true
/// ground position at that frame's time (shifted by frame_offset_s).
inline SyntheticGpsBundle generate_synthetic_gps_tracks(const SyntheticSceneSpec& spec,
                                                        double duration_s, double rate_hz,
                                                        double frame_offset_s = 0.0) {
  spec.validate();
  if (!(duration_s > 0.0) || !(rate_hz > 0.0))
    throw Error(Error::Code::InvalidSpec,
                "generate_synthetic_gps_tracks: duration and rate must be positive");

  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(spec.n_cattle))));
  const int rows = (spec.n_cattle + cols - 1) / cols;
  const double spacing = 3.0;
  const double margin = 1.6;  // amplitude stays below spacing/2 so ids never cross
  if (margin * 2 + (cols - 1) * spacing > spec.arena_w_m ||
      margin * 2 + (rows - 1) * spacing > spec.arena_h_m)
    throw Error(Error::Code::InvalidSpec,
                "generate_synthetic_gps_tracks: arena too small for the herd at 3 m spacing");

  const int n_fixes = std::max(1, static_cast<int>(std::lround(duration_s * rate_hz)));
  Rng rng(spec.seed ^ 0x67707374ULL);  // decoupled from image generation draws

  SyntheticGpsBundle bundle;
  bundle.homography = detail::pasture_camera();

  for (int k = 0; k < spec.n_cattle; ++k) {
    const double x0 = margin + (k % cols) * spacing;
    const double y0 = margin + (k / cols) * spacing;
    const double amp_x = rng.uniform(0.6, 1.1);
    const double amp_y = rng.uniform(0.6, 1.1);
    const double period_x = rng.uniform(20.0, 40.0);
    const double period_y = rng.uniform(20.0, 40.0);
    const double phase_x = rng.uniform(0.0, 6.283185307179586);
    const double phase_y = rng.uniform(0.0, 6.283185307179586);

    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "cow_%03d", k);
    GpsTrack noisy{idbuf, {}};
    GpsTrack clean{idbuf, {}};
    char tbuf[16];
    std::snprintf(tbuf, sizeof tbuf, "trk_%03d", k);
    Tracklet trk{tbuf, {}};

    for (int s = 0; s < n_fixes; ++s) {
      const double t = static_cast<double>(s) / rate_hz;
      const double x = x0 + amp_x * std::sin(2 * 3.141592653589793 * t / period_x + phase_x);
      const double y = y0 + amp_y * std::sin(2 * 3.141592653589793 * t / period_y + phase_y);
      clean.fixes.push_back({t, x, y});
      noisy.fixes.push_back({t, x + rng.normal(0.0, spec.gps_noise_sigma),
                             y + rng.normal(0.0, spec.gps_noise_sigma)});

      const auto p = bundle.homography.project(x, y);
      if (!p.valid)
        throw Error(Error::Code::DegenerateConfiguration,
                    "generate_synthetic_gps_tracks: camera cannot see the arena");
      const double bw = 28.0, bh = 20.0;
      trk.frames.push_back(
          {t + frame_offset_s, {p.u - bw / 2.0, p.v - bh, p.u + bw / 2.0, p.v}});
    }
    bundle.gps.push_back(std::move(noisy));
    bundle.truth.push_back(std::move(clean));
    bundle.tracklets.push_back(std::move(trk));
  }

  // correspondence points covering the arena
  for (const auto& [wx, wy] : std::vector<std::pair<double, double>>{
           {0.0, 0.0},
           {spec.arena_w_m, 0.0},
           {0.0, spec.arena_h_m},
           {spec.arena_w_m, spec.arena_h_m},
           {spec.arena_w_m / 2.0, spec.arena_h_m / 3.0},
           {spec.arena_w_m / 3.0, spec.arena_h_m / 2.0}}) {
    const auto p = bundle.homography.project(wx, wy);
    bundle.correspondences.push_back({wx, wy, p.u, p.v});
  }
  return bundle;
}

}  // namespace cattleact
