#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cattleact/encoders.hpp"
#include "cattleact/image.hpp"
#include "cattleact/linalg.hpp"
#include "cattleact/manifest.hpp"
#include "cattleact/png_io.hpp"
#include "cattleact/types.hpp"

namespace cattleact {

// ---------------------------------------------------------------------------
// Confusion matrix and multiclass metrics
// ---------------------------------------------------------------------------

struct ConfusionMatrix {
  std::vector<std::string> class_order;
  std::vector<std::vector<long long>> counts;  // rows = truth, cols = prediction

  long long total() const {
    long long t = 0;
    for (const auto& row : counts)
      for (long long v : row) t += v;
    return t;
  }
};

struct MetricsReport {
  std::vector<std::string> class_order;
  double accuracy = 0.0;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;  // 0 when precision + recall == 0
  double macro_f1 = 0.0;   // unweighted mean over all classes
  double weighted_f1 = 0.0;  // support-weighted mean
  std::vector<long long> support;  // truth count per class
  long long total = 0;
};

namespace detail {

inline std::vector<std::size_t> label_indices(const std::vector<std::string>& labels,
                                              const std::vector<std::string>& class_order,
                                              const std::string& what) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < class_order.size(); ++i) index[class_order[i]] = i;
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (const auto& l : labels) {
    const auto it = index.find(l);
    if (it == index.end())
      throw Error(Error::Code::UnknownLabel, what + ": unknown label '" + l + "'");
    out.push_back(it->second);
  }
  return out;
}

}  // namespace detail

inline std::pair<ConfusionMatrix, MetricsReport> confusion_and_metrics(
    const std::vector<std::string>& preds, const std::vector<std::string>& truths,
    const std::vector<std::string>& class_order) {
  if (preds.size() != truths.size())
    throw Error(Error::Code::LengthMismatch, "confusion_and_metrics: preds/truths sizes differ");
  if (preds.empty())
    throw Error(Error::Code::EmptyBatch, "confusion_and_metrics: no predictions");
  if (class_order.empty())
    throw Error(Error::Code::InvalidArgument, "confusion_and_metrics: empty class order");

  const auto p = detail::label_indices(preds, class_order, "confusion_and_metrics preds");
  const auto t = detail::label_indices(truths, class_order, "confusion_and_metrics truths");
  const std::size_t C = class_order.size();

  ConfusionMatrix cm;
  cm.class_order = class_order;
  cm.counts.assign(C, std::vector<long long>(C, 0));
  for (std::size_t i = 0; i < p.size(); ++i) ++cm.counts[t[i]][p[i]];

  MetricsReport rep;
  rep.class_order = class_order;
  rep.total = static_cast<long long>(p.size());
  rep.precision.resize(C);
  rep.recall.resize(C);
  rep.f1.resize(C);
  rep.support.resize(C);
  long long trace = 0;
  double weighted = 0.0;
  for (std::size_t j = 0; j < C; ++j) {
    long long tp = cm.counts[j][j];
    long long row = 0, col = 0;
    for (std::size_t k = 0; k < C; ++k) {
      row += cm.counts[j][k];
      col += cm.counts[k][j];
    }
    trace += tp;
    rep.support[j] = row;
    rep.precision[j] = col > 0 ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    rep.recall[j] = row > 0 ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    const double pr = rep.precision[j] + rep.recall[j];
    rep.f1[j] = pr > 0.0 ? 2.0 * rep.precision[j] * rep.recall[j] / pr : 0.0;
    rep.macro_f1 += rep.f1[j];
    weighted += static_cast<double>(row) * rep.f1[j];
  }
  rep.accuracy = static_cast<double>(trace) / static_cast<double>(rep.total);
  rep.macro_f1 /= static_cast<double>(C);
  rep.weighted_f1 = weighted / static_cast<double>(rep.total);
  return {cm, rep};
}

// One-vs-rest per-class table: binary accuracy and F1 for each class.
struct PerClassBinaryReport {
  std::vector<std::string> class_order;
  std::vector<double> accuracy;  // (TP + TN) / total
  std::vector<double> f1;
  std::vector<long long> support;
  long long total = 0;
};

inline PerClassBinaryReport per_class_binary_report(const std::vector<std::string>& preds,
                                                    const std::vector<std::string>& truths,
                                                    const std::vector<std::string>& class_order) {
  const auto [cm, rep] = confusion_and_metrics(preds, truths, class_order);
  const std::size_t C = class_order.size();
  PerClassBinaryReport out;
  out.class_order = class_order;
  out.total = rep.total;
  out.support = rep.support;
  out.accuracy.resize(C);
  out.f1 = rep.f1;  // one-vs-rest F1 equals the multiclass per-class F1
  for (std::size_t j = 0; j < C; ++j) {
    long long tp = cm.counts[j][j];
    long long row = 0, col = 0;
    for (std::size_t k = 0; k < C; ++k) {
      row += cm.counts[j][k];
      col += cm.counts[k][j];
    }
    const long long fp = col - tp;
    const long long fn = row - tp;
    const long long tn = rep.total - tp - fp - fn;
    out.accuracy[j] = static_cast<double>(tp + tn) / static_cast<double>(rep.total);
  }
  return out;
}

inline nlohmann::ordered_json metrics_report_to_json(const MetricsReport& rep,
                                                     const ConfusionMatrix& cm) {
  nlohmann::ordered_json j;
  j["class_order"] = rep.class_order;
  j["total"] = rep.total;
  j["accuracy"] = rep.accuracy;
  j["macro_f1"] = rep.macro_f1;
  j["weighted_f1"] = rep.weighted_f1;
  j["precision"] = rep.precision;
  j["recall"] = rep.recall;
  j["f1"] = rep.f1;
  j["support"] = rep.support;
  j["confusion"] = cm.counts;
  return j;
}

/// Plain-text table of the report, one class per row.
inline std::string metrics_report_to_table(const MetricsReport& rep) {
  char buf[160];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-16s %9s %9s %9s %9s\n", "class", "precision", "recall", "f1",
                "support");
  out += buf;
  for (std::size_t j = 0; j < rep.class_order.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%-16s %9.4f %9.4f %9.4f %9lld\n", rep.class_order[j].c_str(),
                  rep.precision[j], rep.recall[j], rep.f1[j], rep.support[j]);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "accuracy %.4f  macro_f1 %.4f  weighted_f1 %.4f  n %lld\n",
                rep.accuracy, rep.macro_f1, rep.weighted_f1, rep.total);
  out += buf;
  return out;
}

// ---------------------------------------------------------------------------
// Raw prediction rows (so every report number can be recomputed externally)
// ---------------------------------------------------------------------------

struct PredictionRow {
  std::string sample_id;
  std::string truth;
  std::string pred;
  std::vector<double> scores;  // softmax, aligned with class_order
};

inline void save_predictions_csv(const std::vector<PredictionRow>& rows,
                                 const std::vector<std::string>& class_order,
                                 const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error(Error::Code::IoFailure, "save_predictions_csv: cannot open " + path.string());
  out << "sample_id,truth,pred";
  for (const auto& c : class_order) out << ",score_" << c;
  out << "\n";
  out.precision(10);
  for (const auto& r : rows) {
    if (r.scores.size() != class_order.size())
      throw Error(Error::Code::LengthMismatch, "save_predictions_csv: score width mismatch");
    out << r.sample_id << "," << r.truth << "," << r.pred;
    for (double s : r.scores) out << "," << s;
    out << "\n";
  }
  if (!out) throw Error(Error::Code::IoFailure, "save_predictions_csv: write failed");
}

// ---------------------------------------------------------------------------
// Model inference helpers (softmax scores over the class order)
// ---------------------------------------------------------------------------

inline Vec infer_action_scores(const Model& m, const Image& crop_img) {
  return softmax(m.classify_action(m.encode_action(crop_img)).values);
}

inline Vec infer_interaction_scores(const Model& m, const InteractionSample& s) {
  const auto [a, b] = split_interaction_crop(s);
  const Embedding z_int = m.encode_interaction(s.union_image);
  const Embedding z_a = m.encode_action(a.image);
  const Embedding z_b = m.encode_action(b.image);
  return softmax(m.classify_interaction(m.fuse(z_int, z_a, z_b)).values);
}

// ---------------------------------------------------------------------------
// Occlusion sensitivity
// ---------------------------------------------------------------------------

struct OcclusionConfig {
  int patch_size = 16;
  int stride = 8;
  std::optional<std::array<float, 3>> fill_rgb;  // default: channel means of the input

  void validate() const {
    if (patch_size <= 0 || stride <= 0)
      throw Error(Error::Code::InvalidArgument,
                  "OcclusionConfig: patch_size and stride must be positive");
  }
};

struct OcclusionMap {
  Mat drops;  // rows x cols, row-major grid over patch anchor positions
  int patch_size = 0;
  int stride = 0;
  double baseline_score = 0.0;
  std::string target_class;

  /// Anchor (x, y) of the cell holding the largest drop; first occurrence on ties.
  std::pair<int, int> peak_anchor() const {
    Eigen::Index br = 0, bc = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index r = 0; r < drops.rows(); ++r)
      for (Eigen::Index c = 0; c < drops.cols(); ++c)
        if (drops(r, c) > best) {
          best = drops(r, c);
          br = r;
          bc = c;
        }
    return {static_cast<int>(bc) * stride, static_cast<int>(br) * stride};
  }
};

namespace detail {

template <typename ScoreFn>
OcclusionMap occlusion_map_core(const Image& img, const OcclusionConfig& cfg,
                                const std::string& target_class, ScoreFn&& score) {
  cfg.validate();
  img.validate("occlusion input");
  if (cfg.patch_size > img.width || cfg.patch_size > img.height)
    throw Error(Error::Code::PatchLargerThanImage,
                "occlusion_sensitivity_map: patch exceeds image dimensions");
  const int rows = (img.height - cfg.patch_size) / cfg.stride + 1;
  const int cols = (img.width - cfg.patch_size) / cfg.stride + 1;

  const auto means = img.channel_means();
  const std::array<float, 3> fill =
      cfg.fill_rgb.value_or(std::array<float, 3>{static_cast<float>(means[0]),
                                                 static_cast<float>(means[1]),
                                                 static_cast<float>(means[2])});

  OcclusionMap map;
  map.patch_size = cfg.patch_size;
  map.stride = cfg.stride;
  map.target_class = target_class;
  map.baseline_score = score(img);
  map.drops.resize(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      Image masked = img;
      fill_rect(masked, c * cfg.stride, r * cfg.stride, cfg.patch_size, cfg.patch_size, fill);
      map.drops(r, c) = map.baseline_score - score(masked);
    }
  if (!map.drops.allFinite())
    throw Error(Error::Code::NonFiniteLoss, "occlusion_sensitivity_map: non-finite drop");
  return map;
}

}  // namespace detail

/// Slide an occluding patch over the action crop; each cell holds the drop in
/// the target class's softmax score relative to the unmasked input.
inline OcclusionMap occlusion_map_action(const Model& m, const Image& crop_img, ActionClass target,
                                         const OcclusionConfig& cfg) {
  const auto idx = static_cast<Eigen::Index>(target);
  return detail::occlusion_map_core(crop_img, cfg, to_string(target), [&](const Image& img) {
    return infer_action_scores(m, img)[idx];
  });
}

/// Same sweep over the union crop of an interaction pair; member crops are
/// re-cut from the masked image so occlusion reaches the whole pipeline.
inline OcclusionMap occlusion_map_interaction(const Model& m, const InteractionSample& s,
                                              InteractionClass target,
                                              const OcclusionConfig& cfg) {
  const auto idx = static_cast<Eigen::Index>(target);
  return detail::occlusion_map_core(s.union_image, cfg, to_string(target), [&](const Image& img) {
    InteractionSample masked = s;
    masked.union_image = img;
    return infer_interaction_scores(m, masked)[idx];
  });
}

inline nlohmann::ordered_json occlusion_map_to_json(const OcclusionMap& map) {
  nlohmann::ordered_json j;
  j["target_class"] = map.target_class;
  j["patch_size"] = map.patch_size;
  j["stride"] = map.stride;
  j["baseline_score"] = map.baseline_score;
  j["rows"] = map.drops.rows();
  j["cols"] = map.drops.cols();
  auto grid = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < map.drops.rows(); ++r) {
    auto row = nlohmann::ordered_json::array();
    for (Eigen::Index c = 0; c < map.drops.cols(); ++c) row.push_back(map.drops(r, c));
    grid.push_back(std::move(row));
  }
  j["drops"] = std::move(grid);
  const auto [px, py] = map.peak_anchor();
  j["peak_anchor"] = {px, py};
  return j;
}

/// Grayscale heatmap, one pixel per grid cell, drops normalized to [0, 1].
inline Image occlusion_map_to_image(const OcclusionMap& map) {
  Image img;
  img.width = static_cast<int>(map.drops.cols());
  img.height = static_cast<int>(map.drops.rows());
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * 3, 0.0f);
  const double lo = map.drops.minCoeff();
  const double hi = map.drops.maxCoeff();
  const double span = hi - lo;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double v = span > 1e-12 ? (map.drops(y, x) - lo) / span : 0.0;
      for (int c = 0; c < 3; ++c)
        img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] =
            static_cast<float>(v);
    }
  return img;
}

inline void save_occlusion_map(const OcclusionMap& map, const std::filesystem::path& png_path,
                               const std::filesystem::path& json_path) {
  write_png(occlusion_map_to_image(map), png_path.string());
  std::ofstream out(json_path, std::ios::binary);
  if (!out)
    throw Error(Error::Code::IoFailure, "save_occlusion_map: cannot open " + json_path.string());
  out << occlusion_map_to_json(map).dump(2) << "\n";
  if (!out) throw Error(Error::Code::IoFailure, "save_occlusion_map: write failed");
}

// ---------------------------------------------------------------------------
// Embedding dump (binary container)
// ---------------------------------------------------------------------------

inline constexpr std::uint8_t kEmbeddingKindAction = 0;
inline constexpr std::uint8_t kEmbeddingKindInteraction = 1;
inline constexpr std::uint16_t kEmbeddingDumpVersion = 1;

struct EmbeddingRow {
  std::string id;
  std::uint8_t kind = kEmbeddingKindAction;
  std::uint8_t label = 0;  // class index within the row's taxonomy
  Vec z;
};

struct EmbeddingDump {
  Eigen::Index dim = 0;
  std::vector<EmbeddingRow> rows;  // sorted by id, unique
};

namespace detail {

inline void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

struct ByteReader {
  const std::string& data;
  std::size_t pos = 0;
  const char* what;

  void need(std::size_t n) const {
    if (pos + n > data.size())
      throw Error(Error::Code::SchemaViolation, std::string(what) + ": truncated dump");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data[pos++]);
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(u8()) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

inline void save_embedding_dump(const EmbeddingDump& dump, const std::filesystem::path& path) {
  std::string buf = "CAEM";
  detail::put_u16(buf, kEmbeddingDumpVersion);
  detail::put_u32(buf, static_cast<std::uint32_t>(dump.rows.size()));
  detail::put_u32(buf, static_cast<std::uint32_t>(dump.dim));
  for (const auto& r : dump.rows) {
    if (r.z.size() != dump.dim)
      throw Error(Error::Code::DimensionMismatch, "save_embedding_dump: row width mismatch");
    if (r.id.size() > 0xffff)
      throw Error(Error::Code::InvalidArgument, "save_embedding_dump: id too long");
    detail::put_u16(buf, static_cast<std::uint16_t>(r.id.size()));
    buf += r.id;
    buf.push_back(static_cast<char>(r.kind));
    buf.push_back(static_cast<char>(r.label));
    for (Eigen::Index i = 0; i < r.z.size(); ++i)
      detail::put_f32(buf, static_cast<float>(r.z[i]));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error(Error::Code::IoFailure, "save_embedding_dump: cannot open " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error(Error::Code::IoFailure, "save_embedding_dump: write failed");
}

inline EmbeddingDump load_embedding_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(Error::Code::MissingFile, "load_embedding_dump: cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  detail::ByteReader r{data, 0, "load_embedding_dump"};
  if (r.bytes(4) != "CAEM")
    throw Error(Error::Code::SchemaViolation, "load_embedding_dump: bad magic");
  const std::uint16_t version = r.u16();
  if (version != kEmbeddingDumpVersion)
    throw Error(Error::Code::SchemaViolation,
                "load_embedding_dump: unsupported version " + std::to_string(version));
  const std::uint32_t n_rows = r.u32();
  const std::uint32_t dim = r.u32();
  EmbeddingDump dump;
  dump.dim = static_cast<Eigen::Index>(dim);
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < n_rows; ++i) {
    EmbeddingRow row;
    const std::uint16_t id_len = r.u16();
    row.id = r.bytes(id_len);
    row.kind = r.u8();
    row.label = r.u8();
    if (row.kind > kEmbeddingKindInteraction)
      throw Error(Error::Code::SchemaViolation, "load_embedding_dump: bad kind byte");
    if (!seen.insert(row.id).second)
      throw Error(Error::Code::SchemaViolation,
                  "load_embedding_dump: duplicate id '" + row.id + "'");
    row.z.resize(dump.dim);
    for (Eigen::Index k = 0; k < dump.dim; ++k) row.z[k] = static_cast<double>(r.f32());
    dump.rows.push_back(std::move(row));
  }
  if (r.pos != data.size())
    throw Error(Error::Code::SchemaViolation, "load_embedding_dump: trailing bytes");
  return dump;
}

/// Embed every labeled sample: action crops through the action encoder,
/// interaction union crops through the interaction encoder. Rows sorted by id.
inline EmbeddingDump export_embeddings(
    const Model& m, const std::vector<std::pair<std::string, ActionSample>>& actions,
    const std::vector<std::pair<std::string, InteractionSample>>& interactions) {
  EmbeddingDump dump;
  dump.dim = m.config().embedding_dim;
  for (const auto& [id, s] : actions) {
    if (!s.label) throw Error(Error::Code::SchemaViolation, "export_embeddings: unlabeled action");
    EmbeddingRow row;
    row.id = id;
    row.kind = kEmbeddingKindAction;
    row.label = static_cast<std::uint8_t>(*s.label);
    row.z = m.encode_action(crop(s.image, s.box));
    dump.rows.push_back(std::move(row));
  }
  for (const auto& [id, s] : interactions) {
    EmbeddingRow row;
    row.id = id;
    row.kind = kEmbeddingKindInteraction;
    row.label = static_cast<std::uint8_t>(s.label);
    row.z = m.encode_interaction(s.union_image);
    dump.rows.push_back(std::move(row));
  }
  std::sort(dump.rows.begin(), dump.rows.end(),
            [](const EmbeddingRow& a, const EmbeddingRow& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < dump.rows.size(); ++i)
    if (dump.rows[i].id == dump.rows[i - 1].id)
      throw Error(Error::Code::SchemaViolation,
                  "export_embeddings: duplicate sample id '" + dump.rows[i].id + "'");
  return dump;
}

// ---------------------------------------------------------------------------
// PCA projection
// ---------------------------------------------------------------------------

struct PcaResult {
  Mat coords;      // N x k
  Mat components;  // D x k, orthonormal columns, sign-fixed
  Vec singular_values;
  bool rank_deficient = false;  // fewer than k informative directions
};

/// Project mean-centered rows onto the top-k principal directions. Each
/// component's sign is fixed so its largest-magnitude entry is positive.
/// With fewer than k informative directions the missing coordinates are
/// zero-filled and the result is flagged rather than rejected.
inline PcaResult pca_project(const Mat& X, int k = 2) {
  if (k <= 0) throw Error(Error::Code::InvalidArgument, "pca_project: k must be positive");
  if (X.rows() < k)
    throw Error(Error::Code::InvalidArgument, "pca_project: need at least k rows");
  const Vec mean = X.colwise().mean().transpose();
  Mat centered = X.rowwise() - mean.transpose();
  Eigen::JacobiSVD<Mat> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec sv = svd.singularValues();

  PcaResult res;
  res.singular_values = sv;
  res.components = Mat::Zero(X.cols(), k);
  res.coords = Mat::Zero(X.rows(), k);
  const double tol = 1e-12 * std::max(1.0, sv.size() > 0 ? sv[0] : 0.0);
  for (int j = 0; j < k; ++j) {
    if (j >= sv.size() || sv[j] <= tol) {
      res.rank_deficient = true;
      continue;
    }
    Vec comp = svd.matrixV().col(j);
    Eigen::Index argmax = 0;
    comp.cwiseAbs().maxCoeff(&argmax);
    if (comp[argmax] < 0.0) comp = -comp;
    res.components.col(j) = comp;
    res.coords.col(j) = centered * comp;
  }
  return res;
}

inline PcaResult pca_project(const EmbeddingDump& dump, int k = 2) {
  Mat X(static_cast<Eigen::Index>(dump.rows.size()), dump.dim);
  for (std::size_t i = 0; i < dump.rows.size(); ++i)
    X.row(static_cast<Eigen::Index>(i)) = dump.rows[i].z.transpose();
  return pca_project(X, k);
}

// ---------------------------------------------------------------------------
// k-nearest-neighbor classification over embeddings
// ---------------------------------------------------------------------------

/// Majority vote over the k Euclidean nearest train rows; vote ties go to the
/// class with the smaller mean neighbor distance, then to the smaller label.
inline std::vector<std::uint8_t> knn_classify(const Mat& train, const std::vector<std::uint8_t>& train_labels,
                                              const Mat& test, int k = 5) {
  if (train.rows() == 0) throw Error(Error::Code::EmptyBatch, "knn_classify: empty train set");
  if (train.rows() != static_cast<Eigen::Index>(train_labels.size()))
    throw Error(Error::Code::LengthMismatch, "knn_classify: labels/rows mismatch");
  if (train.cols() != test.cols())
    throw Error(Error::Code::DimensionMismatch, "knn_classify: train/test widths differ");
  if (k <= 0 || k > train.rows())
    throw Error(Error::Code::InvalidArgument, "knn_classify: k must be in [1, train size]");

  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(test.rows()));
  for (Eigen::Index i = 0; i < test.rows(); ++i) {
    std::vector<std::pair<double, Eigen::Index>> dist;
    dist.reserve(static_cast<std::size_t>(train.rows()));
    for (Eigen::Index j = 0; j < train.rows(); ++j)
      dist.emplace_back((train.row(j) - test.row(i)).norm(), j);
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());

    std::map<std::uint8_t, std::pair<int, double>> votes;  // label -> (count, distance sum)
    for (int n = 0; n < k; ++n) {
      const auto& [d, j] = dist[static_cast<std::size_t>(n)];
      auto& v = votes[train_labels[static_cast<std::size_t>(j)]];
      v.first += 1;
      v.second += d;
    }
    std::uint8_t best_label = 0;
    int best_count = -1;
    double best_mean = std::numeric_limits<double>::infinity();
    for (const auto& [label, v] : votes) {
      const double mean = v.second / v.first;
      if (v.first > best_count ||
          (v.first == best_count && mean < best_mean)) {
        best_label = label;
        best_count = v.first;
        best_mean = mean;
      }
    }
    out.push_back(best_label);
  }
  return out;
}

inline std::vector<std::uint8_t> knn_classify(const EmbeddingDump& train,
                                              const EmbeddingDump& test, int k = 5) {
  if (train.dim != test.dim)
    throw Error(Error::Code::DimensionMismatch, "knn_classify: dump widths differ");
  Mat tr(static_cast<Eigen::Index>(train.rows.size()), train.dim);
  Mat te(static_cast<Eigen::Index>(test.rows.size()), test.dim);
  std::vector<std::uint8_t> labels;
  for (std::size_t i = 0; i < train.rows.size(); ++i) {
    tr.row(static_cast<Eigen::Index>(i)) = train.rows[i].z.transpose();
    labels.push_back(train.rows[i].label);
  }
  for (std::size_t i = 0; i < test.rows.size(); ++i)
    te.row(static_cast<Eigen::Index>(i)) = test.rows[i].z.transpose();
  return knn_classify(tr, labels, te, k);
}

}  // namespace cattleact
