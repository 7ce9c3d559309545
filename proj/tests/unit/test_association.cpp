#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "cattleact/association.hpp"
#include "cattleact/rng.hpp"

using namespace cattleact;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("cattleact_assoc_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

// Exhaustive minimum-cost assignment for small matrices.
double brute_force_min_cost(const Mat& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  double best = std::numeric_limits<double>::infinity();
  if (n <= m) {
    std::vector<int> cols(static_cast<std::size_t>(m));
    std::iota(cols.begin(), cols.end(), 0);
    do {
      double total = 0.0;
      for (int i = 0; i < n; ++i) total += cost(i, cols[static_cast<std::size_t>(i)]);
      best = std::min(best, total);
    } while (std::next_permutation(cols.begin(), cols.end()));
  } else {
    std::vector<int> rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), 0);
    do {
      double total = 0.0;
      for (int j = 0; j < m; ++j) total += cost(rows[static_cast<std::size_t>(j)], j);
      best = std::min(best, total);
    } while (std::next_permutation(rows.begin(), rows.end()));
  }
  return best;
}

Homography make_test_homography() {
  Homography h;
  h.H << 2.0, 0.1, 5.0, -0.05, 1.8, 3.0, 0.001, 0.002, 1.0;
  return h;
}

}  // namespace

TEST_CASE("interaction candidates: overlap, gap rule, ordering") {
  std::vector<BoundingBox> boxes = {
      {0, 0, 10, 10},    // 0
      {5, 5, 15, 15},    // 1: overlaps 0
      {12, 0, 22, 10},   // 2: gap 2 from 0, overlaps nothing else? gap 0 edge vs 1
      {60, 60, 70, 70},  // 3: far from everything
  };
  auto cands = build_interaction_candidates(boxes, 0.5);

  // (0,1) overlap; (0,2) gap 2 <= 0.5*sqrt(200); (1,2) gap 0 <= threshold.
  REQUIRE(cands.size() == 3);
  CHECK(cands[0].i == 0);
  CHECK(cands[0].j == 1);
  CHECK(cands[0].iou == Catch::Approx(25.0 / 175.0));
  CHECK(cands[1].i == 0);
  CHECK(cands[1].j == 2);
  CHECK(cands[1].iou == 0.0);
  CHECK(cands[1].gap == Catch::Approx(2.0));
  CHECK(cands[2].i == 1);
  CHECK(cands[2].j == 2);

  // sorted by (i, j)
  for (std::size_t k = 1; k < cands.size(); ++k) {
    CHECK((cands[k - 1].i < cands[k].i ||
           (cands[k - 1].i == cands[k].i && cands[k - 1].j < cands[k].j)));
  }

  // tighter threshold drops the gap-based pairs but keeps the overlap
  auto tight = build_interaction_candidates(boxes, 0.05);
  REQUIRE(tight.size() == 2);
  CHECK(tight[0].iou > 0.0);
  CHECK(tight[1].gap == Catch::Approx(0.0));

  CHECK_THROWS_AS(build_interaction_candidates(boxes, -0.1), Error);
}

TEST_CASE("homography: exact recovery from four and many points") {
  const Homography truth = make_test_homography();
  std::vector<std::pair<double, double>> world4 = {{0, 0}, {10, 0}, {0, 10}, {10, 10}};
  std::vector<std::pair<double, double>> world8 = {{0, 0}, {10, 0}, {0, 10}, {10, 10},
                                                   {3, 7},  {8, 2},  {5, 5},  {1, 9}};
  for (const auto* world : {&world4, &world8}) {
    std::vector<Correspondence> pts;
    for (const auto& [x, y] : *world) {
      const auto p = truth.project(x, y);
      REQUIRE(p.valid);
      pts.push_back({x, y, p.u, p.v});
    }
    const Homography fit = fit_homography(pts);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        CHECK(fit.H(r, c) == Catch::Approx(truth.H(r, c)).margin(1e-8));
    // projections agree on a point not in the correspondence set
    const auto a = truth.project(4.2, 6.9);
    const auto b = fit.project(4.2, 6.9);
    CHECK(a.u == Catch::Approx(b.u).margin(1e-8));
    CHECK(a.v == Catch::Approx(b.v).margin(1e-8));
  }
}

TEST_CASE("homography: validation and degeneracy") {
  std::vector<Correspondence> three = {{0, 0, 0, 0}, {1, 0, 1, 0}, {0, 1, 0, 1}};
  CHECK_THROWS_AS(fit_homography(three), Error);
  try {
    fit_homography(three);
  } catch (const Error& e) {
    CHECK(e.code() == Error::Code::InsufficientPoints);
  }

  // three collinear world points among four
  std::vector<Correspondence> collinear = {
      {0, 0, 10, 20}, {1, 1, 30, 40}, {2, 2, 50, 60}, {5, 0, 70, 80}};
  CHECK_THROWS_AS(fit_homography(collinear), Error);
  try {
    fit_homography(collinear);
  } catch (const Error& e) {
    CHECK(e.code() == Error::Code::DegenerateConfiguration);
  }

  // coincident points
  std::vector<Correspondence> same = {{2, 2, 1, 1}, {2, 2, 1, 1}, {2, 2, 1, 1}, {2, 2, 1, 1}};
  CHECK_THROWS_AS(fit_homography(same), Error);

  std::vector<Correspondence> nonfinite = {
      {0, 0, 0, 0}, {1, 0, 1, 0}, {0, 1, 0, 1}, {1, 1, std::numeric_limits<double>::quiet_NaN(), 1}};
  CHECK_THROWS_AS(fit_homography(nonfinite), Error);
}

TEST_CASE("homography: points behind the camera are flagged invalid") {
  Homography h;
  h.H << 1, 0, 0, 0, 1, 0, -1, 0, 1;  // w = 1 - x
  CHECK(h.project(0.5, 2.0).valid);
  CHECK_FALSE(h.project(1.0, 2.0).valid);  // w = 0
  CHECK_FALSE(h.project(3.0, 2.0).valid);  // w < 0
}

TEST_CASE("hungarian: hand-checked square case") {
  Mat cost(3, 3);
  cost << 4, 1, 3, 2, 0, 5, 3, 2, 2;
  const auto res = hungarian(cost);
  REQUIRE(res.row_to_col.size() == 3);
  CHECK(res.row_to_col[0] == 1);
  CHECK(res.row_to_col[1] == 0);
  CHECK(res.row_to_col[2] == 2);
  CHECK(res.total_cost == 5.0);
}

TEST_CASE("hungarian: matches brute force exactly on integer costs") {
  Rng rng(4242);
  const std::vector<std::pair<int, int>> shapes = {{1, 1}, {2, 2}, {3, 3}, {4, 4}, {5, 5},
                                                   {6, 6}, {2, 5}, {3, 5}, {5, 3}, {4, 6},
                                                   {6, 2}, {1, 4}, {4, 1}};
  for (const auto& [n, m] : shapes) {
    for (int trial = 0; trial < 8; ++trial) {
      Mat cost(n, m);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
          cost(i, j) = static_cast<double>(rng.below(21));  // integer-valued: sums are exact
      const auto res = hungarian(cost);
      CHECK(res.total_cost == brute_force_min_cost(cost));

      // assignment structure: min(n, m) distinct columns
      std::vector<int> used;
      for (int c : res.row_to_col)
        if (c >= 0) used.push_back(c);
      CHECK(static_cast<int>(used.size()) == std::min(n, m));
      std::sort(used.begin(), used.end());
      CHECK(std::adjacent_find(used.begin(), used.end()) == used.end());
      double recomputed = 0.0;
      for (int i = 0; i < n; ++i)
        if (res.row_to_col[static_cast<std::size_t>(i)] >= 0)
          recomputed += cost(i, res.row_to_col[static_cast<std::size_t>(i)]);
      CHECK(recomputed == res.total_cost);
    }
  }
}

TEST_CASE("hungarian: input validation") {
  CHECK_THROWS_AS(hungarian(Mat(0, 3)), Error);
  Mat bad(2, 2);
  bad << 1, 2, 3, std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(hungarian(bad), Error);
}

TEST_CASE("gps interpolation: lerp, clamping, tolerance") {
  GpsTrack g{"cow_a", {{10.0, 0.0, 0.0}, {20.0, 10.0, -4.0}, {40.0, 10.0, 16.0}}};

  auto mid = g.position_at(15.0, 2.0);
  REQUIRE(mid.has_value());
  CHECK(mid->first == Catch::Approx(5.0));
  CHECK(mid->second == Catch::Approx(-2.0));

  auto exact = g.position_at(20.0, 2.0);
  REQUIRE(exact.has_value());
  CHECK(exact->first == Catch::Approx(10.0));
  CHECK(exact->second == Catch::Approx(-4.0));

  // clamp within tolerance beyond the ends
  auto before = g.position_at(8.5, 2.0);
  REQUIRE(before.has_value());
  CHECK(before->first == 0.0);
  auto after = g.position_at(41.9, 2.0);
  REQUIRE(after.has_value());
  CHECK(after->second == 16.0);

  // out of range
  CHECK_FALSE(g.position_at(7.9, 2.0).has_value());
  CHECK_FALSE(g.position_at(42.1, 2.0).has_value());
  CHECK_FALSE(GpsTrack{"x", {}}.position_at(0.0, 2.0).has_value());
}

TEST_CASE("gps-tracklet matching: recovers identity permutation") {
  const Homography h = make_test_homography();

  // three animals walking distinct straight lines on the ground plane
  std::vector<GpsTrack> gps;
  for (int k = 0; k < 3; ++k) {
    GpsTrack g;
    g.cattle_id = "cow_" + std::to_string(k);
    for (int s = 0; s <= 10; ++s) {
      const double t = static_cast<double>(s);
      g.fixes.push_back({t, 2.0 + 3.0 * k + 0.2 * t, 1.0 + 2.5 * k + 0.1 * t});
    }
    gps.push_back(g);
  }

  // tracklets observe the same animals at half-integer times, boxes anchored
  // at the projected ground point; listed in scrambled order
  auto tracklet_for = [&](int k, const std::string& id) {
    Tracklet tr;
    tr.track_id = id;
    for (int s = 0; s < 10; ++s) {
      const double t = static_cast<double>(s) + 0.5;
      const double x = 2.0 + 3.0 * k + 0.2 * t;
      const double y = 1.0 + 2.5 * k + 0.1 * t;
      const auto p = h.project(x, y);
      REQUIRE(p.valid);
      TrackletFrame f;
      f.t = t;
      f.box = {p.u - 4.0, p.v - 9.0, p.u + 4.0, p.v};  // bottom-center == projection
      tr.frames.push_back(f);
    }
    return tr;
  };
  std::vector<Tracklet> tracklets = {tracklet_for(2, "trk_x"), tracklet_for(0, "trk_y"),
                                     tracklet_for(1, "trk_z")};

  const auto res = match_gps_to_tracklets(gps, tracklets, h);
  REQUIRE(res.matches.size() == 3);
  CHECK(res.unmatched_tracks.empty());
  CHECK(res.unmatched_gps.empty());
  // sorted by track_id
  CHECK(res.matches[0].track_id == "trk_x");
  CHECK(res.matches[0].cattle_id == "cow_2");
  CHECK(res.matches[1].track_id == "trk_y");
  CHECK(res.matches[1].cattle_id == "cow_0");
  CHECK(res.matches[2].track_id == "trk_z");
  CHECK(res.matches[2].cattle_id == "cow_1");
  for (const auto& m : res.matches) CHECK(m.mean_px_dist == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("gps-tracklet matching: disjoint times and partial overlap") {
  const Homography h = make_test_homography();
  GpsTrack g0{"cow_0", {{0.0, 1.0, 1.0}, {10.0, 3.0, 1.0}}};
  GpsTrack g1{"cow_1", {{0.0, 8.0, 8.0}, {10.0, 9.0, 8.0}}};

  auto tracklet_at = [&](double t0, double x, double y, const std::string& id) {
    Tracklet tr;
    tr.track_id = id;
    for (int s = 0; s < 3; ++s) {
      const auto p = h.project(x, y);
      TrackletFrame f;
      f.t = t0 + s;
      f.box = {p.u - 2.0, p.v - 4.0, p.u + 2.0, p.v};
      tr.frames.push_back(f);
    }
    return tr;
  };

  SECTION("no overlap anywhere throws") {
    std::vector<Tracklet> far = {tracklet_at(500.0, 1.0, 1.0, "trk_a")};
    CHECK_THROWS_AS(match_gps_to_tracklets({g0, g1}, far, h), Error);
    try {
      match_gps_to_tracklets({g0, g1}, far, h);
    } catch (const Error& e) {
      CHECK(e.code() == Error::Code::NoTemporalOverlap);
    }
  }

  SECTION("tracklet without temporal overlap stays unmatched") {
    std::vector<Tracklet> trs = {tracklet_at(2.0, 1.4, 1.0, "trk_a"),
                                 tracklet_at(2.0, 8.2, 8.0, "trk_b"),
                                 tracklet_at(900.0, 5.0, 5.0, "trk_stale")};
    const auto res = match_gps_to_tracklets({g0, g1}, trs, h);
    REQUIRE(res.matches.size() == 2);
    CHECK(res.matches[0].track_id == "trk_a");
    CHECK(res.matches[0].cattle_id == "cow_0");
    CHECK(res.matches[1].track_id == "trk_b");
    CHECK(res.matches[1].cattle_id == "cow_1");
    REQUIRE(res.unmatched_tracks.size() == 1);
    CHECK(res.unmatched_tracks[0] == "trk_stale");
    CHECK(res.unmatched_gps.empty());
  }

  SECTION("extra gps track stays unmatched") {
    GpsTrack g2{"cow_far", {{0.0, 50.0, 50.0}, {10.0, 50.0, 50.0}}};
    std::vector<Tracklet> trs = {tracklet_at(2.0, 1.4, 1.0, "trk_a")};
    const auto res = match_gps_to_tracklets({g0, g1, g2}, trs, h);
    REQUIRE(res.matches.size() == 1);
    CHECK(res.matches[0].cattle_id == "cow_0");
    CHECK(res.unmatched_gps.size() == 2);
  }

  SECTION("unsorted gps fixes rejected") {
    GpsTrack bad{"cow_bad", {{5.0, 0.0, 0.0}, {1.0, 1.0, 1.0}}};
    std::vector<Tracklet> trs = {tracklet_at(2.0, 1.4, 1.0, "trk_a")};
    CHECK_THROWS_AS(match_gps_to_tracklets({bad}, trs, h), Error);
  }

  SECTION("empty inputs rejected") {
    std::vector<Tracklet> trs = {tracklet_at(2.0, 1.4, 1.0, "trk_a")};
    CHECK_THROWS_AS(match_gps_to_tracklets({}, trs, h), Error);
    CHECK_THROWS_AS(match_gps_to_tracklets({g0}, {}, h), Error);
  }
}

TEST_CASE("gps csv: round trip and schema errors") {
  TempDir tmp;
  const fs::path path = tmp.path / "gps.csv";

  std::vector<GpsTrack> tracks = {
      {"cow_a", {{0.5, 1.25, 2.5}, {1.5, 1.75, 2.25}}},
      {"cow_b", {{0.25, -3.5, 4.75}}},
  };
  save_gps_csv(tracks, path);
  const auto loaded = load_gps_csv(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].cattle_id == "cow_a");
  REQUIRE(loaded[0].fixes.size() == 2);
  CHECK(loaded[0].fixes[0].t == 0.5);
  CHECK(loaded[0].fixes[0].x == 1.25);
  CHECK(loaded[0].fixes[0].y == 2.5);
  CHECK(loaded[1].cattle_id == "cow_b");
  CHECK(loaded[1].fixes[0].y == 4.75);

  // rows may arrive interleaved and unsorted; loader groups and sorts
  {
    std::ofstream out(tmp.path / "mixed.csv");
    out << "cattle_id,timestamp_s,x_m,y_m\n";
    out << "a,5,0,0\n";
    out << "b,1,9,9\n";
    out << "a,2,1,1\n";
  }
  const auto mixed = load_gps_csv(tmp.path / "mixed.csv");
  REQUIRE(mixed.size() == 2);
  CHECK(mixed[0].cattle_id == "a");
  REQUIRE(mixed[0].fixes.size() == 2);
  CHECK(mixed[0].fixes[0].t == 2.0);
  CHECK(mixed[0].fixes[1].t == 5.0);

  CHECK_THROWS_AS(load_gps_csv(tmp.path / "absent.csv"), Error);
  {
    std::ofstream out(tmp.path / "bad_header.csv");
    out << "id,t,x,y\n";
  }
  CHECK_THROWS_AS(load_gps_csv(tmp.path / "bad_header.csv"), Error);
  {
    std::ofstream out(tmp.path / "bad_fields.csv");
    out << "cattle_id,timestamp_s,x_m,y_m\n";
    out << "a,1,2\n";
  }
  CHECK_THROWS_AS(load_gps_csv(tmp.path / "bad_fields.csv"), Error);
  {
    std::ofstream out(tmp.path / "bad_number.csv");
    out << "cattle_id,timestamp_s,x_m,y_m\n";
    out << "a,1,oops,3\n";
  }
  CHECK_THROWS_AS(load_gps_csv(tmp.path / "bad_number.csv"), Error);
  try {
    load_gps_csv(tmp.path / "bad_number.csv");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
}

TEST_CASE("tracklet jsonl: round trip and schema errors") {
  TempDir tmp;
  const fs::path path = tmp.path / "tracklets.jsonl";

  std::vector<Tracklet> tracklets(2);
  tracklets[0].track_id = "trk_0";
  tracklets[0].frames = {{1.5, {10, 20, 30, 40}}, {2.5, {11, 21, 31, 41}}};
  tracklets[1].track_id = "trk_1";
  tracklets[1].frames = {{0.5, {-5, 0, 5, 12.5}}};
  save_tracklets_jsonl(tracklets, path);

  const auto loaded = load_tracklets_jsonl(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].track_id == "trk_0");
  REQUIRE(loaded[0].frames.size() == 2);
  CHECK(loaded[0].frames[0].t == 1.5);
  CHECK(loaded[0].frames[0].box.x_min == 10.0);
  CHECK(loaded[0].frames[1].box.y_max == 41.0);
  CHECK(loaded[1].frames[0].box.x_min == -5.0);

  // frames are sorted by time on load
  {
    std::ofstream out(tmp.path / "unsorted.jsonl");
    out << R"({"track_id":"t","frames":[[9,0,0,1,1],[2,5,5,6,6]]})" << "\n";
  }
  const auto sorted = load_tracklets_jsonl(tmp.path / "unsorted.jsonl");
  REQUIRE(sorted.size() == 1);
  CHECK(sorted[0].frames[0].t == 2.0);

  CHECK_THROWS_AS(load_tracklets_jsonl(tmp.path / "absent.jsonl"), Error);
  {
    std::ofstream out(tmp.path / "bad1.jsonl");
    out << "not json\n";
  }
  CHECK_THROWS_AS(load_tracklets_jsonl(tmp.path / "bad1.jsonl"), Error);
  {
    std::ofstream out(tmp.path / "bad2.jsonl");
    out << R"({"track_id":"t","frames":[[1,2,3]]})" << "\n";
  }
  CHECK_THROWS_AS(load_tracklets_jsonl(tmp.path / "bad2.jsonl"), Error);
  {
    std::ofstream out(tmp.path / "bad3.jsonl");
    out << R"({"track_id":"t","frames":[[1,"a",0,1,1]]})" << "\n";
  }
  CHECK_THROWS_AS(load_tracklets_jsonl(tmp.path / "bad3.jsonl"), Error);
  {
    std::ofstream out(tmp.path / "bad4.jsonl");
    out << R"({"track_id":"t","frames":[[1,5,5,4,6]]})" << "\n";  // degenerate box
  }
  CHECK_THROWS_AS(load_tracklets_jsonl(tmp.path / "bad4.jsonl"), Error);
  try {
    load_tracklets_jsonl(tmp.path / "bad2.jsonl");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
}

TEST_CASE("correspondence csv: round trip and schema errors") {
  TempDir tmp;
  const fs::path path = tmp.path / "corr.csv";

  std::vector<Correspondence> pts = {{0.5, 1.5, 100.25, 200.75}, {-2.5, 3.0, 50.0, 60.5}};
  save_correspondences_csv(pts, path);
  const auto loaded = load_correspondences_csv(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].x_m == 0.5);
  CHECK(loaded[0].v_px == 200.75);
  CHECK(loaded[1].x_m == -2.5);
  CHECK(loaded[1].u_px == 50.0);

  CHECK_THROWS_AS(load_correspondences_csv(tmp.path / "absent.csv"), Error);
  {
    std::ofstream out(tmp.path / "bad_header.csv");
    out << "a,b,c,d\n";
  }
  CHECK_THROWS_AS(load_correspondences_csv(tmp.path / "bad_header.csv"), Error);
  {
    std::ofstream out(tmp.path / "bad_row.csv");
    out << "x_m,y_m,u_px,v_px\n";
    out << "1,2,3\n";
  }
  CHECK_THROWS_AS(load_correspondences_csv(tmp.path / "bad_row.csv"), Error);
}

TEST_CASE("fit-then-match end to end on saved files") {
  TempDir tmp;
  const Homography truth = make_test_homography();

  // correspondences from the true homography, written and re-read
  std::vector<Correspondence> corr;
  for (const auto& [x, y] : std::vector<std::pair<double, double>>{
           {0, 0}, {12, 0}, {0, 9}, {12, 9}, {6, 4}, {3, 8}}) {
    const auto p = truth.project(x, y);
    corr.push_back({x, y, p.u, p.v});
  }
  save_correspondences_csv(corr, tmp.path / "corr.csv");
  const Homography fitted = fit_homography(load_correspondences_csv(tmp.path / "corr.csv"));

  GpsTrack g{"cow_7", {}};
  for (int s = 0; s <= 6; ++s)
    g.fixes.push_back({static_cast<double>(s), 1.0 + 0.5 * s, 2.0 + 0.25 * s});
  save_gps_csv({g}, tmp.path / "gps.csv");

  Tracklet tr;
  tr.track_id = "trk_7";
  for (int s = 1; s <= 5; ++s) {
    const double t = static_cast<double>(s);
    const auto p = truth.project(1.0 + 0.5 * t, 2.0 + 0.25 * t);
    tr.frames.push_back({t, {p.u - 3.0, p.v - 6.0, p.u + 3.0, p.v}});
  }
  save_tracklets_jsonl({tr}, tmp.path / "trk.jsonl");

  const auto res = match_gps_to_tracklets(load_gps_csv(tmp.path / "gps.csv"),
                                          load_tracklets_jsonl(tmp.path / "trk.jsonl"), fitted);
  REQUIRE(res.matches.size() == 1);
  CHECK(res.matches[0].track_id == "trk_7");
  CHECK(res.matches[0].cattle_id == "cow_7");
  CHECK(res.matches[0].mean_px_dist < 1e-6);
}

TEST_CASE("homography json: round trip and schema errors") {
  Homography h;
  h.H << 1.5, 0.25, -3.0, 0.0, 2.0, 40.0, 1e-4, -2e-4, 1.0;

  const auto j = homography_to_json(h);
  const Homography back = homography_from_json(j);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) CHECK(back.H(r, c) == h.H(r, c));

  CHECK_THROWS_AS(homography_from_json(nlohmann::json{{"H", {{1, 2}, {3, 4}}}}),
                  Error);
  CHECK_THROWS_AS(homography_from_json(nlohmann::json{{"rows", 3}}), Error);
  try {
    homography_from_json(nlohmann::json{
        {"H", {{1, 0, 0}, {0, 1, 0}, {0, 0, 0}}}});
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == Error::Code::SchemaViolation);
  }
}
