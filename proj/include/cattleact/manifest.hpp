#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cattleact/image.hpp"
#include "cattleact/png_io.hpp"
#include "cattleact/types.hpp"

namespace cattleact {

/// Labeled crop with skeleton keypoints. The label is optional only when the
/// sample is an interaction member; standalone action records always carry one.
struct ActionSample {
  Image image;
  BoundingBox box;
  Skeleton skeleton;
  std::optional<ActionClass> label;

  void validate(bool require_label = true) const {
    image.validate("ActionSample.image");
    if (image.width < 8 || image.height < 8)
      throw Error(Error::Code::SchemaViolation, "ActionSample: image dimensions must be >= 8x8");
    box.validate("ActionSample.box");
    skeleton.validate("ActionSample.skeleton");
    if (require_label && !label)
      throw Error(Error::Code::SchemaViolation, "ActionSample: missing action label");
  }
};

struct InteractionSample {
  Image union_image;
  ActionSample member_a;  // box/skeleton in union-image coordinates; image unset until split
  ActionSample member_b;
  InteractionClass label = InteractionClass::no_interaction;

  void validate() const {
    union_image.validate("InteractionSample.union_image");
    member_a.box.validate("InteractionSample.member_a.box");
    member_b.box.validate("InteractionSample.member_b.box");
    const BoundingBox bounds{0.0, 0.0, static_cast<double>(union_image.width),
                             static_cast<double>(union_image.height)};
    if (!bounds.contains(member_a.box) || !bounds.contains(member_b.box))
      throw Error(Error::Code::SchemaViolation,
                  "InteractionSample: member boxes must lie within the union image");
    member_a.skeleton.validate("InteractionSample.member_a.skeleton");
    member_b.skeleton.validate("InteractionSample.member_b.skeleton");
  }
};

// ---------------------------------------------------------------------------
// Manifest records (metadata + image paths; JSON Lines on disk)
// ---------------------------------------------------------------------------

struct MemberRecord {
  BoundingBox box;
  Skeleton skeleton;
  std::optional<ActionClass> label;
};

struct ManifestRecord {
  enum class Kind : std::uint8_t { action = 0, interaction = 1 };

  Kind kind = Kind::action;
  std::string image;  // path relative to the manifest's directory
  BoundingBox box;
  Skeleton skeleton;  // empty for interaction records; members carry theirs
  std::string label;
  std::optional<MemberRecord> member_a;
  std::optional<MemberRecord> member_b;

  /// Stable sample id: the image path stem.
  std::string id() const {
    return std::filesystem::path(image).stem().string();
  }
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::map<std::string, std::size_t> class_counts;
  std::filesystem::path base_dir;  // directory image paths resolve against; not serialized

  void recompute_counts() {
    class_counts.clear();
    for (const auto& r : records) ++class_counts[r.label];
  }

  std::size_t count_of(const std::string& cls) const {
    const auto it = class_counts.find(cls);
    return it == class_counts.end() ? 0 : it->second;
  }
};

namespace detail {

inline Error schema_error(std::size_t record_index, const std::string& field,
                          const std::string& why) {
  std::ostringstream os;
  os << "manifest record " << record_index << ": field '" << field << "': " << why;
  return Error(Error::Code::SchemaViolation, os.str());
}

inline BoundingBox parse_box(const nlohmann::json& j, std::size_t idx, const std::string& field) {
  if (!j.is_array() || j.size() != 4 || !j[0].is_number())
    throw schema_error(idx, field, "expected [x0,y0,x1,y1]");
  BoundingBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!b.valid()) throw schema_error(idx, field, "degenerate or non-finite box");
  return b;
}

inline Skeleton parse_skeleton(const nlohmann::json& j, std::size_t idx,
                               const std::string& field) {
  if (!j.is_array()) throw schema_error(idx, field, "expected a list of keypoints");
  Skeleton s;
  for (const auto& kp : j) {
    if (!kp.is_array() || kp.size() != 4)
      throw schema_error(idx, field, "keypoint must be [name,x,y,conf]");
    const auto id = keypoint_id_from_string(kp[0].get<std::string>());
    if (!id) throw schema_error(idx, field, "unknown keypoint name '" + kp[0].get<std::string>() + "'");
    s.points.push_back({*id, kp[1].get<double>(), kp[2].get<double>(), kp[3].get<double>()});
  }
  try {
    s.validate();
  } catch (const Error& e) {
    throw schema_error(idx, field, e.what());
  }
  return s;
}

inline nlohmann::ordered_json box_json(const BoundingBox& b) {
  return nlohmann::ordered_json::array({b.x_min, b.y_min, b.x_max, b.y_max});
}

inline nlohmann::ordered_json skeleton_json(const Skeleton& s) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& p : s.points)
    arr.push_back(nlohmann::ordered_json::array({to_string(p.id), p.x, p.y, p.confidence}));
  return arr;
}

inline MemberRecord parse_member(const nlohmann::json& j, std::size_t idx,
                                 const std::string& field) {
  if (!j.is_object()) throw schema_error(idx, field, "expected an object");
  MemberRecord m;
  if (!j.contains("box")) throw schema_error(idx, field + ".box", "missing");
  m.box = parse_box(j.at("box"), idx, field + ".box");
  if (!j.contains("skeleton")) throw schema_error(idx, field + ".skeleton", "missing");
  m.skeleton = parse_skeleton(j.at("skeleton"), idx, field + ".skeleton");
  if (j.contains("label") && !j.at("label").is_null()) {
    const auto lbl = action_class_from_string(j.at("label").get<std::string>());
    if (!lbl) throw schema_error(idx, field + ".label", "unknown action class");
    m.label = *lbl;
  }
  return m;
}

inline nlohmann::ordered_json member_json(const MemberRecord& m) {
  nlohmann::ordered_json j;
  j["box"] = box_json(m.box);
  j["skeleton"] = skeleton_json(m.skeleton);
  if (m.label) j["label"] = to_string(*m.label);
  return j;
}

}  // namespace detail

inline constexpr std::string_view kManifestSchemaName = "cattleact-manifest";
inline constexpr int kManifestSchemaVersion = 1;

struct LoadOptions {
  bool verify_paths = true;  // check referenced images resolve at load time
};

inline DatasetManifest load_manifest(const std::filesystem::path& path,
                                     const LoadOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw Error(Error::Code::MissingFile, "load_manifest: cannot open " + path.string());

  DatasetManifest manifest;
  manifest.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");

  std::string line;
  if (!std::getline(in, line))
    throw Error(Error::Code::SchemaViolation, "load_manifest: empty file, missing header line");
  nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || !header.is_object() ||
      header.value("schema", "") != kManifestSchemaName)
    throw Error(Error::Code::SchemaViolation,
                "load_manifest: first line must be the cattleact-manifest header");

  std::size_t idx = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw detail::schema_error(idx, "<record>", "invalid JSON");

    ManifestRecord r;
    const std::string kind = j.value("kind", "");
    if (kind == "action") {
      r.kind = ManifestRecord::Kind::action;
    } else if (kind == "interaction") {
      r.kind = ManifestRecord::Kind::interaction;
    } else {
      throw detail::schema_error(idx, "kind", "must be 'action' or 'interaction'");
    }
    if (!j.contains("image") || !j.at("image").is_string())
      throw detail::schema_error(idx, "image", "missing or not a string");
    r.image = j.at("image").get<std::string>();
    if (!j.contains("box")) throw detail::schema_error(idx, "box", "missing");
    r.box = detail::parse_box(j.at("box"), idx, "box");
    r.skeleton = j.contains("skeleton")
                     ? detail::parse_skeleton(j.at("skeleton"), idx, "skeleton")
                     : Skeleton{};
    if (!j.contains("label") || !j.at("label").is_string())
      throw detail::schema_error(idx, "label", "missing or not a string");
    r.label = j.at("label").get<std::string>();

    if (r.kind == ManifestRecord::Kind::action) {
      if (!action_class_from_string(r.label))
        throw detail::schema_error(idx, "label", "unknown action class '" + r.label + "'");
    } else {
      if (!interaction_class_from_string(r.label))
        throw detail::schema_error(idx, "label", "unknown interaction class '" + r.label + "'");
      if (!j.contains("member_a")) throw detail::schema_error(idx, "member_a", "missing");
      if (!j.contains("member_b")) throw detail::schema_error(idx, "member_b", "missing");
      r.member_a = detail::parse_member(j.at("member_a"), idx, "member_a");
      r.member_b = detail::parse_member(j.at("member_b"), idx, "member_b");
    }

    if (opts.verify_paths && !std::filesystem::exists(manifest.base_dir / r.image))
      throw detail::schema_error(idx, "image", "path does not resolve: " + r.image);

    manifest.records.push_back(std::move(r));
    ++idx;
  }
  manifest.recompute_counts();
  return manifest;
}

inline nlohmann::ordered_json record_to_json(const ManifestRecord& r) {
  nlohmann::ordered_json j;
  j["kind"] = r.kind == ManifestRecord::Kind::action ? "action" : "interaction";
  j["image"] = r.image;
  j["box"] = detail::box_json(r.box);
  j["skeleton"] = detail::skeleton_json(r.skeleton);
  j["label"] = r.label;
  if (r.kind == ManifestRecord::Kind::interaction) {
    j["member_a"] = detail::member_json(*r.member_a);
    j["member_b"] = detail::member_json(*r.member_b);
  }
  return j;
}

inline void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);  // binary: no platform newline translation
  if (!out) throw Error(Error::Code::IoFailure, "save_manifest: cannot open " + path.string());
  nlohmann::ordered_json header;
  header["schema"] = kManifestSchemaName;
  header["version"] = kManifestSchemaVersion;
  out << header.dump() << "\n";
  for (const auto& r : manifest.records) out << record_to_json(r).dump() << "\n";
  if (!out) throw Error(Error::Code::IoFailure, "save_manifest: write failed " + path.string());
}

// ---------------------------------------------------------------------------
// Sample materialization
// ---------------------------------------------------------------------------

inline ActionSample load_action_sample(const DatasetManifest& m, const ManifestRecord& r) {
  if (r.kind != ManifestRecord::Kind::action)
    throw Error(Error::Code::InvalidArgument, "load_action_sample: record is not an action");
  ActionSample s;
  s.image = read_png((m.base_dir / r.image).string());
  s.box = r.box;
  s.skeleton = r.skeleton;
  s.label = action_class_from_string(r.label);
  return s;
}

inline InteractionSample load_interaction_sample(const DatasetManifest& m,
                                                 const ManifestRecord& r) {
  if (r.kind != ManifestRecord::Kind::interaction)
    throw Error(Error::Code::InvalidArgument,
                "load_interaction_sample: record is not an interaction");
  InteractionSample s;
  s.union_image = read_png((m.base_dir / r.image).string());
  s.label = *interaction_class_from_string(r.label);
  s.member_a.box = r.member_a->box;
  s.member_a.skeleton = r.member_a->skeleton;
  s.member_a.label = r.member_a->label;
  s.member_b.box = r.member_b->box;
  s.member_b.skeleton = r.member_b->skeleton;
  s.member_b.label = r.member_b->label;
  return s;
}

/// Cut the two member crops (I_act1, I_act2) out of the union image and
/// translate skeletons into crop-local coordinates. Pixel extraction uses the
/// nearest integer grid; metadata translation subtracts the continuous box
/// origin, so integer boxes round-trip exactly.
inline std::pair<ActionSample, ActionSample> split_interaction_crop(const InteractionSample& s) {
  const BoundingBox bounds{0.0, 0.0, static_cast<double>(s.union_image.width),
                           static_cast<double>(s.union_image.height)};
  auto cut = [&](const ActionSample& member) {
    member.box.validate("split_interaction_crop member box");
    if (member.box.area() <= 0.0)
      throw Error(Error::Code::DegenerateBox, "split_interaction_crop: zero-area member box");
    if (!bounds.contains(member.box))
      throw Error(Error::Code::InvalidArgument,
                  "split_interaction_crop: member box outside union image");
    const int x0 = static_cast<int>(std::lround(member.box.x_min));
    const int y0 = static_cast<int>(std::lround(member.box.y_min));
    const int w = static_cast<int>(std::lround(member.box.width()));
    const int h = static_cast<int>(std::lround(member.box.height()));
    Image img(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) {
          const int sx = std::clamp(x0 + x, 0, s.union_image.width - 1);
          const int sy = std::clamp(y0 + y, 0, s.union_image.height - 1);
          img.at(x, y, c) = s.union_image.at(sx, sy, c);
        }
    ActionSample out;
    out.image = std::move(img);
    out.box = {0.0, 0.0, member.box.width(), member.box.height()};
    out.skeleton = member.skeleton;
    for (auto& p : out.skeleton.points) {
      p.x -= member.box.x_min;
      p.y -= member.box.y_min;
    }
    out.label = member.label;
    return out;
  };
  return {cut(s.member_a), cut(s.member_b)};
}

/// Member-action co-occurrence rules declared by the synthetic generator;
/// used by tests to scan generated datasets.
inline bool interaction_cooccurrence_ok(InteractionClass label, std::optional<ActionClass> a,
                                        std::optional<ActionClass> b) {
  if (!a || !b) return false;
  const bool a_rides = *a == ActionClass::riding;
  const bool b_rides = *b == ActionClass::riding;
  switch (label) {
    case InteractionClass::mount:
      return (a_rides && *b == ActionClass::standing) || (b_rides && *a == ActionClass::standing);
    case InteractionClass::interest:
    case InteractionClass::conflict:
      return *a == ActionClass::standing && *b == ActionClass::standing;
    case InteractionClass::no_interaction: {
      auto calm = [](ActionClass c) {
        return c == ActionClass::grazing || c == ActionClass::standing || c == ActionClass::lying;
      };
      return calm(*a) && calm(*b);
    }
  }
  return false;
}

}  // namespace cattleact
