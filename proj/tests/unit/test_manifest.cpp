#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>

#include "cattleact/augment.hpp"
#include "cattleact/manifest.hpp"
#include "cattleact/png_io.hpp"
#include "cattleact/rng.hpp"

using namespace cattleact;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("cattleact_manifest_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

Image checker(int w, int h) {
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(x, y, c) = static_cast<float>(((x + y + c) % 5) / 4.0);
  return img;
}

Skeleton simple_skeleton(double ox, double oy) {
  Skeleton s;
  s.points.push_back({KeypointId::head, ox + 2.0, oy + 2.0, 0.9});
  s.points.push_back({KeypointId::buttocks, ox + 10.0, oy + 4.0, 0.8});
  s.points.push_back({KeypointId::torso_center, ox + 6.0, oy + 3.0, 0.7});
  return s;
}

ManifestRecord action_record(const std::string& image, const std::string& label) {
  ManifestRecord r;
  r.kind = ManifestRecord::Kind::action;
  r.image = image;
  r.box = {0, 0, 16, 12};
  r.skeleton = simple_skeleton(1, 1);
  r.label = label;
  return r;
}

ManifestRecord interaction_record(const std::string& image) {
  ManifestRecord r;
  r.kind = ManifestRecord::Kind::interaction;
  r.image = image;
  r.box = {0, 0, 32, 20};
  r.label = "interest";
  MemberRecord a;
  a.box = {0, 0, 14, 12};
  a.skeleton = simple_skeleton(1, 1);
  a.label = ActionClass::standing;
  MemberRecord b;
  b.box = {16, 4, 30, 18};
  b.skeleton = simple_skeleton(17, 5);
  b.label = ActionClass::standing;
  r.member_a = a;
  r.member_b = b;
  return r;
}

}  // namespace

TEST_CASE("manifest save/load round trip") {
  TempDir dir;
  write_png(checker(16, 12), (dir.path / "a0.png").string());
  write_png(checker(32, 20), (dir.path / "i0.png").string());

  DatasetManifest m;
  m.records.push_back(action_record("a0.png", "grazing"));
  m.records.push_back(interaction_record("i0.png"));
  m.recompute_counts();
  save_manifest(m, dir.path / "manifest.jsonl");

  const DatasetManifest back = load_manifest(dir.path / "manifest.jsonl");
  REQUIRE(back.records.size() == 2);
  CHECK(back.base_dir == dir.path);
  const auto& a = back.records[0];
  CHECK(a.kind == ManifestRecord::Kind::action);
  CHECK(a.image == "a0.png");
  CHECK(a.label == "grazing");
  CHECK(a.id() == "a0");
  CHECK(a.box.x_max == 16.0);
  REQUIRE(a.skeleton.points.size() == 3);
  CHECK(a.skeleton.points[0].id == KeypointId::head);
  CHECK(a.skeleton.points[0].confidence == 0.9);

  const auto& i = back.records[1];
  CHECK(i.kind == ManifestRecord::Kind::interaction);
  REQUIRE(i.member_a.has_value());
  REQUIRE(i.member_b.has_value());
  CHECK(i.member_a->label == ActionClass::standing);
  CHECK(i.member_b->box.x_min == 16.0);
  CHECK(back.count_of("grazing") == 1);
  CHECK(back.count_of("interest") == 1);
  CHECK(back.count_of("mount") == 0);
}

TEST_CASE("manifest header is required") {
  TempDir dir;
  {
    std::ofstream out(dir.path / "no_header.jsonl");
    out << record_to_json(action_record("a0.png", "grazing")).dump() << "\n";
  }
  try {
    load_manifest(dir.path / "no_header.jsonl");
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == Error::Code::SchemaViolation);
  }
  CHECK_THROWS_AS(load_manifest(dir.path / "absent.jsonl"), Error);
}

TEST_CASE("schema errors name the record and field") {
  TempDir dir;
  write_png(checker(16, 12), (dir.path / "a0.png").string());
  auto write_lines = [&](const std::string& name, const std::string& body) {
    std::ofstream out(dir.path / name);
    out << R"({"schema":"cattleact-manifest","version":1})" << "\n" << body << "\n";
  };

  SECTION("bad kind") {
    write_lines("m.jsonl", R"({"kind":"dance","image":"a0.png","box":[0,0,4,4],"label":"grazing"})");
    try {
      load_manifest(dir.path / "m.jsonl");
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("record 0") != std::string::npos);
      CHECK(std::string(e.what()).find("kind") != std::string::npos);
    }
  }
  SECTION("bad label") {
    write_lines("m.jsonl", R"({"kind":"action","image":"a0.png","box":[0,0,4,4],"label":"flying"})");
    try {
      load_manifest(dir.path / "m.jsonl");
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Error::Code::SchemaViolation);
      CHECK(std::string(e.what()).find("label") != std::string::npos);
    }
  }
  SECTION("degenerate box") {
    write_lines("m.jsonl", R"({"kind":"action","image":"a0.png","box":[4,0,4,4],"label":"grazing"})");
    CHECK_THROWS_AS(load_manifest(dir.path / "m.jsonl"), Error);
  }
  SECTION("interaction without members") {
    write_lines("m.jsonl",
                R"({"kind":"interaction","image":"a0.png","box":[0,0,4,4],"label":"interest"})");
    try {
      load_manifest(dir.path / "m.jsonl");
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("member_a") != std::string::npos);
    }
  }
  SECTION("missing image fails when paths are verified") {
    write_lines("m.jsonl", R"({"kind":"action","image":"gone.png","box":[0,0,4,4],"label":"grazing"})");
    CHECK_THROWS_AS(load_manifest(dir.path / "m.jsonl"), Error);
    LoadOptions opts;
    opts.verify_paths = false;
    CHECK_NOTHROW(load_manifest(dir.path / "m.jsonl", opts));
  }
}

TEST_CASE("action sample materializes from disk") {
  TempDir dir;
  const Image img = checker(16, 12);
  write_png(img, (dir.path / "a0.png").string());
  DatasetManifest m;
  m.base_dir = dir.path;
  const ManifestRecord r = action_record("a0.png", "lying");
  const ActionSample s = load_action_sample(m, r);
  CHECK(s.image.width == 16);
  CHECK(s.label == ActionClass::lying);
  CHECK_NOTHROW(s.validate());
  CHECK_THROWS_AS(load_interaction_sample(m, r), Error);
}

TEST_CASE("interaction split extracts exact member crops") {
  InteractionSample s;
  s.union_image = checker(32, 20);
  s.label = InteractionClass::mount;
  s.member_a.box = {2, 3, 14, 13};
  s.member_a.skeleton = simple_skeleton(3, 4);
  s.member_a.label = ActionClass::riding;
  s.member_b.box = {16, 4, 30, 18};
  s.member_b.skeleton = simple_skeleton(17, 5);
  s.member_b.label = ActionClass::standing;
  CHECK_NOTHROW(s.validate());

  const auto [a, b] = split_interaction_crop(s);
  REQUIRE(a.image.width == 12);
  REQUIRE(a.image.height == 10);
  // pixel-exact extraction at the integer grid
  for (int y = 0; y < a.image.height; ++y)
    for (int x = 0; x < a.image.width; ++x)
      for (int c = 0; c < 3; ++c) CHECK(a.image.at(x, y, c) == s.union_image.at(x + 2, y + 3, c));
  // skeleton moved into crop-local coordinates
  CHECK(a.skeleton.points[0].x == Catch::Approx(3.0 + 2.0 - 2.0));
  CHECK(a.skeleton.points[0].y == Catch::Approx(4.0 + 2.0 - 3.0));
  CHECK(a.label == ActionClass::riding);
  CHECK(b.image.width == 14);
  CHECK(b.label == ActionClass::standing);

  InteractionSample outside = s;
  outside.member_b.box = {16, 4, 40, 18};
  CHECK_THROWS_AS(split_interaction_crop(outside), Error);
}

TEST_CASE("co-occurrence rules") {
  using A = ActionClass;
  using I = InteractionClass;
  CHECK(interaction_cooccurrence_ok(I::mount, A::riding, A::standing));
  CHECK(interaction_cooccurrence_ok(I::mount, A::standing, A::riding));
  CHECK(!interaction_cooccurrence_ok(I::mount, A::riding, A::riding));
  CHECK(!interaction_cooccurrence_ok(I::mount, A::standing, A::standing));
  CHECK(interaction_cooccurrence_ok(I::interest, A::standing, A::standing));
  CHECK(!interaction_cooccurrence_ok(I::interest, A::grazing, A::standing));
  CHECK(interaction_cooccurrence_ok(I::conflict, A::standing, A::standing));
  CHECK(interaction_cooccurrence_ok(I::no_interaction, A::grazing, A::lying));
  CHECK(!interaction_cooccurrence_ok(I::no_interaction, A::riding, A::standing));
  CHECK(!interaction_cooccurrence_ok(I::mount, std::nullopt, A::standing));
}
