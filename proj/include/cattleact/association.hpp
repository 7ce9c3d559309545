#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "cattleact/linalg.hpp"
#include "cattleact/types.hpp"

namespace cattleact {

// ---------------------------------------------------------------------------
// Interaction candidate pairs
// ---------------------------------------------------------------------------

struct CandidatePair {
  std::size_t i = 0;
  std::size_t j = 0;  // i < j
  double iou = 0.0;
  double gap = 0.0;
};

/// Pairs of boxes that overlap, or whose boundary gap is at most
/// gap_frac times the pair's mean box diagonal. Sorted by (i, j).
inline std::vector<CandidatePair> build_interaction_candidates(
    const std::vector<BoundingBox>& boxes, double gap_frac = 0.5) {
  if (gap_frac < 0.0)
    throw Error(Error::Code::InvalidArgument, "build_interaction_candidates: gap_frac < 0");
  for (const auto& b : boxes) b.validate("build_interaction_candidates box");
  std::vector<CandidatePair> out;
  for (std::size_t i = 0; i < boxes.size(); ++i)
    for (std::size_t j = i + 1; j < boxes.size(); ++j) {
      const double v = iou(boxes[i], boxes[j]);
      const double gap = boundary_gap(boxes[i], boxes[j]);
      const double mean_diag = 0.5 * (boxes[i].diagonal() + boxes[j].diagonal());
      if (v > 0.0 || gap <= gap_frac * mean_diag) out.push_back({i, j, v, gap});
    }
  return out;  // loop order already yields (i, j) ascending
}

// ---------------------------------------------------------------------------
// Homography (world ground plane -> image pixels)
// ---------------------------------------------------------------------------

struct Correspondence {
  double x_m = 0.0;
  double y_m = 0.0;
  double u_px = 0.0;
  double v_px = 0.0;
};

struct ProjectedPoint {
  double u = 0.0;
  double v = 0.0;
  bool valid = false;  // false when the point maps behind the camera (w <= 0)
};

struct Homography {
  Mat H = Mat::Identity(3, 3);

  ProjectedPoint project(double x, double y) const {
    const double u = H(0, 0) * x + H(0, 1) * y + H(0, 2);
    const double v = H(1, 0) * x + H(1, 1) * y + H(1, 2);
    const double w = H(2, 0) * x + H(2, 1) * y + H(2, 2);
    if (!(w > 1e-12)) return {0.0, 0.0, false};
    return {u / w, v / w, true};
  }
};

inline nlohmann::ordered_json homography_to_json(const Homography& h) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (int r = 0; r < 3; ++r) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (int c = 0; c < 3; ++c) row.push_back(h.H(r, c));
    rows.push_back(std::move(row));
  }
  nlohmann::ordered_json j;
  j["H"] = std::move(rows);
  return j;
}

inline Homography homography_from_json(const nlohmann::json& j) {
  Homography h;
  try {
    const auto& rows = j.at("H");
    if (!rows.is_array() || rows.size() != 3)
      throw Error(Error::Code::SchemaViolation, "homography_from_json: H must be 3 rows");
    for (int r = 0; r < 3; ++r) {
      const auto& row = rows.at(static_cast<std::size_t>(r));
      if (!row.is_array() || row.size() != 3)
        throw Error(Error::Code::SchemaViolation, "homography_from_json: rows must have 3 entries");
      for (int c = 0; c < 3; ++c)
        h.H(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Error::Code::SchemaViolation,
                std::string("homography_from_json: ") + e.what());
  }
  if (!(std::abs(h.H(2, 2)) > 1e-12))
    throw Error(Error::Code::SchemaViolation, "homography_from_json: H(2,2) must be nonzero");
  return h;
}

namespace detail {

struct NormalizeResult {
  Mat T = Mat::Identity(3, 3);
};

/// Hartley normalization: centroid to origin, mean distance sqrt(2).
inline NormalizeResult normalizing_transform(const std::vector<std::pair<double, double>>& pts) {
  double cx = 0.0, cy = 0.0;
  for (const auto& [x, y] : pts) {
    cx += x;
    cy += y;
  }
  cx /= static_cast<double>(pts.size());
  cy /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& [x, y] : pts) mean_dist += std::hypot(x - cx, y - cy);
  mean_dist /= static_cast<double>(pts.size());
  if (mean_dist < 1e-12)
    throw Error(Error::Code::DegenerateConfiguration,
                "fit_homography: correspondence points are coincident");
  const double s = std::sqrt(2.0) / mean_dist;
  NormalizeResult r;
  r.T << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
  return r;
}

inline bool collinear(const std::pair<double, double>& a, const std::pair<double, double>& b,
                      const std::pair<double, double>& c, double scale) {
  const double area2 = std::abs((b.first - a.first) * (c.second - a.second) -
                                (c.first - a.first) * (b.second - a.second));
  return area2 < 1e-9 * std::max(1.0, scale * scale);
}

}  // namespace detail

/// Direct linear transform with Hartley normalization; least squares for more
/// than four correspondences. H is scaled so H(2,2) = 1.
inline Homography fit_homography(const std::vector<Correspondence>& pts) {
  if (pts.size() < 4)
    throw Error(Error::Code::InsufficientPoints,
                "fit_homography: at least 4 correspondences required");
  std::vector<std::pair<double, double>> world, image;
  world.reserve(pts.size());
  image.reserve(pts.size());
  for (const auto& c : pts) {
    if (!std::isfinite(c.x_m) || !std::isfinite(c.y_m) || !std::isfinite(c.u_px) ||
        !std::isfinite(c.v_px))
      throw Error(Error::Code::InvalidArgument, "fit_homography: non-finite correspondence");
    world.emplace_back(c.x_m, c.y_m);
    image.emplace_back(c.u_px, c.v_px);
  }

  // With exactly four points any collinear triple leaves H underdetermined.
  if (pts.size() == 4) {
    auto spread = [](const std::vector<std::pair<double, double>>& p) {
      double lo_x = p[0].first, hi_x = p[0].first, lo_y = p[0].second, hi_y = p[0].second;
      for (const auto& [x, y] : p) {
        lo_x = std::min(lo_x, x);
        hi_x = std::max(hi_x, x);
        lo_y = std::min(lo_y, y);
        hi_y = std::max(hi_y, y);
      }
      return std::max(hi_x - lo_x, hi_y - lo_y);
    };
    for (const auto* set : {&world, &image}) {
      const double scale = spread(*set);
      const auto& p = *set;
      for (int a = 0; a < 4; ++a)
        for (int b = a + 1; b < 4; ++b)
          for (int c = b + 1; c < 4; ++c)
            if (detail::collinear(p[static_cast<std::size_t>(a)], p[static_cast<std::size_t>(b)],
                                  p[static_cast<std::size_t>(c)], scale))
              throw Error(Error::Code::DegenerateConfiguration,
                          "fit_homography: three of four points are collinear");
    }
  }

  const Mat Tw = detail::normalizing_transform(world).T;
  const Mat Ti = detail::normalizing_transform(image).T;
  auto apply = [](const Mat& T, std::pair<double, double> p) {
    return std::pair<double, double>{T(0, 0) * p.first + T(0, 2), T(1, 1) * p.second + T(1, 2)};
  };

  Mat A(2 * static_cast<Eigen::Index>(pts.size()), 9);
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const auto [x, y] = apply(Tw, world[k]);
    const auto [u, v] = apply(Ti, image[k]);
    const Eigen::Index r = 2 * static_cast<Eigen::Index>(k);
    A.row(r) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    A.row(r + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }

  Eigen::JacobiSVD<Mat> svd(A, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // A second near-zero singular value means the solution is not unique.
  if (sv.size() >= 2 && sv[sv.size() - 2] < 1e-10 * sv[0])
    throw Error(Error::Code::DegenerateConfiguration,
                "fit_homography: degenerate correspondence geometry");
  const Vec h = svd.matrixV().col(8);
  Mat Hn(3, 3);
  Hn << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8];

  Mat H = Ti.inverse() * Hn * Tw;
  if (std::abs(H(2, 2)) < 1e-15)
    throw Error(Error::Code::DegenerateConfiguration, "fit_homography: H(2,2) vanishes");
  H /= H(2, 2);
  return Homography{H};
}

// ---------------------------------------------------------------------------
// Optimal assignment (Hungarian algorithm, potentials form, O(n^3))
// ---------------------------------------------------------------------------

struct AssignmentResult {
  std::vector<int> row_to_col;  // -1 = unassigned
  double total_cost = 0.0;
};

/// Minimum-cost assignment on an n x m cost matrix. When n != m the matrix is
/// padded with a large finite sentinel; rows landing on padding stay
/// unassigned. min(n, m) real assignments are always produced.
inline AssignmentResult hungarian(const Mat& cost) {
  const Eigen::Index n_rows = cost.rows();
  const Eigen::Index n_cols = cost.cols();
  if (n_rows == 0 || n_cols == 0)
    throw Error(Error::Code::EmptyBatch, "hungarian: empty cost matrix");
  if (!cost.allFinite())
    throw Error(Error::Code::InvalidArgument, "hungarian: non-finite cost entry");

  const Eigen::Index n = std::max(n_rows, n_cols);
  const double span = cost.maxCoeff() - std::min(0.0, cost.minCoeff());
  const double sentinel = (span + 1.0) * (static_cast<double>(n) + 1.0);
  Mat a = Mat::Constant(n, n, sentinel);
  a.topLeftCorner(n_rows, n_cols) = cost;

  // potentials over a 1-based virtual grid
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(n) + 1, 0);  // column -> row match
  std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);
  const double inf = std::numeric_limits<double>::infinity();

  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = a(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                           v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }

  AssignmentResult res;
  res.row_to_col.assign(static_cast<std::size_t>(n_rows), -1);
  for (int j = 1; j <= n; ++j) {
    const int i = p[static_cast<std::size_t>(j)];
    if (i >= 1 && i <= n_rows && j <= n_cols) {
      res.row_to_col[static_cast<std::size_t>(i - 1)] = j - 1;
      res.total_cost += cost(i - 1, j - 1);
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// GPS tracks and visual tracklets
// ---------------------------------------------------------------------------

struct GpsFix {
  double t = 0.0;
  double x = 0.0;  // meters
  double y = 0.0;
};

struct GpsTrack {
  std::string cattle_id;
  std::vector<GpsFix> fixes;  // sorted by t

  /// Linear interpolation of the ground position; times within `tol` beyond
  /// either end clamp to that endpoint, anything farther is out of range.
  std::optional<std::pair<double, double>> position_at(double t, double tol) const {
    if (fixes.empty()) return std::nullopt;
    if (t < fixes.front().t) {
      if (fixes.front().t - t > tol) return std::nullopt;
      return std::make_pair(fixes.front().x, fixes.front().y);
    }
    if (t > fixes.back().t) {
      if (t - fixes.back().t > tol) return std::nullopt;
      return std::make_pair(fixes.back().x, fixes.back().y);
    }
    const auto it = std::lower_bound(fixes.begin(), fixes.end(), t,
                                     [](const GpsFix& f, double tt) { return f.t < tt; });
    if (it == fixes.begin()) return std::make_pair(it->x, it->y);
    const GpsFix& b = *it;
    const GpsFix& a = *(it - 1);
    const double span = b.t - a.t;
    const double w = span > 0.0 ? (t - a.t) / span : 0.0;
    return std::make_pair(a.x + w * (b.x - a.x), a.y + w * (b.y - a.y));
  }
};

struct TrackletFrame {
  double t = 0.0;
  BoundingBox box;

  /// Ground anchor of a standing animal: bottom-center of the box.
  std::pair<double, double> anchor() const {
    return {0.5 * (box.x_min + box.x_max), box.y_max};
  }
};

struct Tracklet {
  std::string track_id;
  std::vector<TrackletFrame> frames;  // sorted by t
};

struct MatchConfig {
  double time_tolerance_s = 2.0;  // clamp window beyond GPS track ends
};

struct MatchedPair {
  std::string track_id;
  std::string cattle_id;
  double mean_px_dist = 0.0;
};

struct MatchResult {
  std::vector<MatchedPair> matches;          // sorted by track_id
  std::vector<std::string> unmatched_tracks;  // tracklets left unassigned
  std::vector<std::string> unmatched_gps;
};

/// Assign tracklets to GPS identities: project each interpolated GPS ground
/// position into the image, average pixel distance to the tracklet's
/// bottom-center anchors, and solve the optimal assignment on those costs.
inline MatchResult match_gps_to_tracklets(const std::vector<GpsTrack>& gps,
                                          const std::vector<Tracklet>& tracklets,
                                          const Homography& homography,
                                          const MatchConfig& cfg = {}) {
  if (gps.empty() || tracklets.empty())
    throw Error(Error::Code::EmptyBatch, "match_gps_to_tracklets: no tracks to match");
  for (const auto& g : gps)
    if (!std::is_sorted(g.fixes.begin(), g.fixes.end(),
                        [](const GpsFix& a, const GpsFix& b) { return a.t < b.t; }))
      throw Error(Error::Code::InvalidArgument,
                  "match_gps_to_tracklets: GPS fixes must be sorted by time");

  const double unmatched_cost = std::numeric_limits<double>::max();
  Mat cost(static_cast<Eigen::Index>(tracklets.size()), static_cast<Eigen::Index>(gps.size()));
  bool any_overlap = false;
  double max_real = 0.0;
  std::vector<std::vector<bool>> feasible(tracklets.size(),
                                          std::vector<bool>(gps.size(), false));
  for (std::size_t r = 0; r < tracklets.size(); ++r) {
    for (std::size_t c = 0; c < gps.size(); ++c) {
      double sum = 0.0;
      int n = 0;
      for (const auto& frame : tracklets[r].frames) {
        const auto pos = gps[c].position_at(frame.t, cfg.time_tolerance_s);
        if (!pos) continue;
        const auto proj = homography.project(pos->first, pos->second);
        if (!proj.valid) continue;
        const auto [ax, ay] = frame.anchor();
        sum += std::hypot(proj.u - ax, proj.v - ay);
        ++n;
      }
      if (n > 0) {
        cost(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            sum / static_cast<double>(n);
        feasible[r][c] = true;
        any_overlap = true;
        max_real = std::max(max_real, cost(static_cast<Eigen::Index>(r),
                                           static_cast<Eigen::Index>(c)));
      } else {
        cost(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = unmatched_cost;
      }
    }
  }
  if (!any_overlap)
    throw Error(Error::Code::NoTemporalOverlap,
                "match_gps_to_tracklets: no tracklet frame falls within any GPS track's span");

  // replace the placeholder with a finite sentinel the solver can reason about
  const double sentinel = (max_real + 1.0) * (static_cast<double>(tracklets.size() + gps.size()) + 1.0);
  for (std::size_t r = 0; r < tracklets.size(); ++r)
    for (std::size_t c = 0; c < gps.size(); ++c)
      if (!feasible[r][c])
        cost(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = sentinel;

  const AssignmentResult assign = hungarian(cost);

  MatchResult out;
  std::vector<bool> gps_used(gps.size(), false);
  for (std::size_t r = 0; r < tracklets.size(); ++r) {
    const int c = assign.row_to_col[r];
    if (c >= 0 && feasible[r][static_cast<std::size_t>(c)]) {
      out.matches.push_back({tracklets[r].track_id, gps[static_cast<std::size_t>(c)].cattle_id,
                             cost(static_cast<Eigen::Index>(r), c)});
      gps_used[static_cast<std::size_t>(c)] = true;
    } else {
      out.unmatched_tracks.push_back(tracklets[r].track_id);
    }
  }
  for (std::size_t c = 0; c < gps.size(); ++c)
    if (!gps_used[c]) out.unmatched_gps.push_back(gps[c].cattle_id);
  std::sort(out.matches.begin(), out.matches.end(),
            [](const MatchedPair& a, const MatchedPair& b) { return a.track_id < b.track_id; });
  return out;
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v))
      throw Error(Error::Code::SchemaViolation, what + ": bad number '" + s + "'");
    return v;
  } catch (const std::exception&) {
    throw Error(Error::Code::SchemaViolation, what + ": bad number '" + s + "'");
  }
}

}  // namespace detail

inline constexpr std::string_view kGpsCsvHeader = "cattle_id,timestamp_s,x_m,y_m";
inline constexpr std::string_view kCorrespondenceCsvHeader = "x_m,y_m,u_px,v_px";

/// CSV with header cattle_id,timestamp_s,x_m,y_m; rows grouped into tracks by
/// id, each track sorted by time. Track order follows first appearance.
inline std::vector<GpsTrack> load_gps_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Error::Code::MissingFile, "load_gps_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind(kGpsCsvHeader, 0) != 0)
    throw Error(Error::Code::SchemaViolation,
                "load_gps_csv: expected header '" + std::string(kGpsCsvHeader) + "'");
  std::vector<GpsTrack> tracks;
  std::map<std::string, std::size_t> index;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 4)
      throw Error(Error::Code::SchemaViolation,
                  "load_gps_csv: row " + std::to_string(row) + ": expected 4 fields");
    const std::string what = "load_gps_csv row " + std::to_string(row);
    GpsFix fix{detail::parse_double(f[1], what), detail::parse_double(f[2], what),
               detail::parse_double(f[3], what)};
    auto [it, fresh] = index.try_emplace(f[0], tracks.size());
    if (fresh) tracks.push_back(GpsTrack{f[0], {}});
    tracks[it->second].fixes.push_back(fix);
  }
  for (auto& t : tracks)
    std::sort(t.fixes.begin(), t.fixes.end(),
              [](const GpsFix& a, const GpsFix& b) { return a.t < b.t; });
  return tracks;
}

inline void save_gps_csv(const std::vector<GpsTrack>& tracks,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Error::Code::IoFailure, "save_gps_csv: cannot open " + path.string());
  out << kGpsCsvHeader << "\n";
  out.precision(10);
  for (const auto& t : tracks)
    for (const auto& f : t.fixes)
      out << t.cattle_id << "," << f.t << "," << f.x << "," << f.y << "\n";
  if (!out) throw Error(Error::Code::IoFailure, "save_gps_csv: write failed");
}

/// JSON Lines, one tracklet per line:
/// {"track_id": "...", "frames": [[t, x0, y0, x1, y1], ...]}
inline std::vector<Tracklet> load_tracklets_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw Error(Error::Code::MissingFile, "load_tracklets_jsonl: cannot open " + path.string());
  std::vector<Tracklet> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("track_id") || !j.contains("frames") ||
        !j.at("frames").is_array())
      throw Error(Error::Code::SchemaViolation,
                  "load_tracklets_jsonl: line " + std::to_string(row) + ": bad record");
    Tracklet t;
    t.track_id = j.at("track_id").is_string() ? j.at("track_id").get<std::string>()
                                              : j.at("track_id").dump();
    for (const auto& fr : j.at("frames")) {
      if (!fr.is_array() || fr.size() != 5)
        throw Error(Error::Code::SchemaViolation,
                    "load_tracklets_jsonl: line " + std::to_string(row) +
                        ": frame must be [t,x0,y0,x1,y1]");
      TrackletFrame frame;
      try {
        frame.t = fr[0].get<double>();
        frame.box = {fr[1].get<double>(), fr[2].get<double>(), fr[3].get<double>(),
                     fr[4].get<double>()};
      } catch (const nlohmann::json::exception&) {
        throw Error(Error::Code::SchemaViolation,
                    "load_tracklets_jsonl: line " + std::to_string(row) +
                        ": frame entries must be numbers");
      }
      frame.box.validate("tracklet frame box");
      t.frames.push_back(frame);
    }
    std::sort(t.frames.begin(), t.frames.end(),
              [](const TrackletFrame& a, const TrackletFrame& b) { return a.t < b.t; });
    out.push_back(std::move(t));
  }
  return out;
}

inline void save_tracklets_jsonl(const std::vector<Tracklet>& tracklets,
                                 const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error(Error::Code::IoFailure, "save_tracklets_jsonl: cannot open " + path.string());
  for (const auto& t : tracklets) {
    nlohmann::ordered_json j;
    j["track_id"] = t.track_id;
    auto frames = nlohmann::ordered_json::array();
    for (const auto& f : t.frames)
      frames.push_back({f.t, f.box.x_min, f.box.y_min, f.box.x_max, f.box.y_max});
    j["frames"] = std::move(frames);
    out << j.dump() << "\n";
  }
  if (!out) throw Error(Error::Code::IoFailure, "save_tracklets_jsonl: write failed");
}

/// CSV with header x_m,y_m,u_px,v_px.
inline std::vector<Correspondence> load_correspondences_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw Error(Error::Code::MissingFile, "load_correspondences_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind(kCorrespondenceCsvHeader, 0) != 0)
    throw Error(Error::Code::SchemaViolation, "load_correspondences_csv: expected header '" +
                                                  std::string(kCorrespondenceCsvHeader) + "'");
  std::vector<Correspondence> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 4)
      throw Error(Error::Code::SchemaViolation,
                  "load_correspondences_csv: row " + std::to_string(row) + ": expected 4 fields");
    const std::string what = "load_correspondences_csv row " + std::to_string(row);
    out.push_back({detail::parse_double(f[0], what), detail::parse_double(f[1], what),
                   detail::parse_double(f[2], what), detail::parse_double(f[3], what)});
  }
  return out;
}

inline void save_correspondences_csv(const std::vector<Correspondence>& pts,
                                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error(Error::Code::IoFailure, "save_correspondences_csv: cannot open " + path.string());
  out << kCorrespondenceCsvHeader << "\n";
  out.precision(10);
  for (const auto& c : pts) out << c.x_m << "," << c.y_m << "," << c.u_px << "," << c.v_px << "\n";
  if (!out) throw Error(Error::Code::IoFailure, "save_correspondences_csv: write failed");
}

}  // namespace cattleact
