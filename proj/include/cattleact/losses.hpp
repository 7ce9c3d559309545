#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cattleact/linalg.hpp"
#include "cattleact/types.hpp"

namespace cattleact {

/// Every loss hyperparameter in one place. Defaults follow the reported
/// training setup: margin 0.5, temperature 0.03, lambda1 = 1 with lambda2
/// linearly decayed from 0.1 to 0.
struct LossWeights {
  double alpha = 0.5;                // triplet margin
  double tau = 0.03;                 // InfoNCE temperature
  double lambda1 = 1.0;              // alignment weight
  double lambda2_start = 0.1;        // classification weight schedule (linear)
  double lambda2_end = 0.0;
  std::int64_t schedule_steps = 1;   // steps over which the decay runs
  double ldam_margin_scale = 4.0;    // the constant in Delta_j; defaults to C
  double zero_mean_weight = 0.01;    // beta on the pretraining regularizer

  /// Which loss the schedule decays. The literal reading decays the
  /// classification weight; the swapped reading decays alignment instead.
  enum class DecayTarget : std::uint8_t { classification, alignment };
  DecayTarget decay_target = DecayTarget::classification;

  void validate() const {
    if (!(alpha > 0.0)) throw Error(Error::Code::InvalidSpec, "LossWeights: alpha must be > 0");
    if (!(tau > 0.0)) throw Error(Error::Code::InvalidSpec, "LossWeights: tau must be > 0");
    if (lambda2_start < 0.0 || lambda2_end < 0.0)
      throw Error(Error::Code::InvalidSpec, "LossWeights: schedule endpoints must be >= 0");
    if (!(ldam_margin_scale > 0.0))
      throw Error(Error::Code::InvalidSpec, "LossWeights: ldam_margin_scale must be > 0");
    if (schedule_steps < 1)
      throw Error(Error::Code::InvalidSpec, "LossWeights: schedule_steps must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Triplet loss
// ---------------------------------------------------------------------------

/// max(0, d(a,p) - d(a,n) + alpha) with Euclidean d.
inline double triplet_loss(const Vec& z_a, const Vec& z_p, const Vec& z_n, double alpha) {
  require_same_dim(z_a, z_p, "triplet_loss");
  require_same_dim(z_a, z_n, "triplet_loss");
  const double d_ap = (z_a - z_p).norm();
  const double d_an = (z_a - z_n).norm();
  return std::max(0.0, d_ap - d_an + alpha);
}

struct TripletGrad {
  double value = 0.0;
  Vec g_a, g_p, g_n;
};

inline TripletGrad triplet_loss_grad(const Vec& z_a, const Vec& z_p, const Vec& z_n,
                                     double alpha) {
  require_same_dim(z_a, z_p, "triplet_loss");
  require_same_dim(z_a, z_n, "triplet_loss");
  TripletGrad out;
  const Vec ap = z_a - z_p;
  const Vec an = z_a - z_n;
  const double d_ap = ap.norm();
  const double d_an = an.norm();
  out.value = std::max(0.0, d_ap - d_an + alpha);
  out.g_a = Vec::Zero(z_a.size());
  out.g_p = Vec::Zero(z_a.size());
  out.g_n = Vec::Zero(z_a.size());
  if (out.value > 0.0) {
    constexpr double kEps = 1e-12;  // subgradient guard at coincident points
    const Vec u_ap = ap / std::max(d_ap, kEps);
    const Vec u_an = an / std::max(d_an, kEps);
    out.g_a = u_ap - u_an;
    out.g_p = -u_ap;
    out.g_n = u_an;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Zero-mean regularization
// ---------------------------------------------------------------------------

/// Squared norm of the batch-mean embedding; keeps the distribution centered.
inline double zero_mean_reg(const std::vector<Vec>& batch) {
  if (batch.empty()) throw Error(Error::Code::EmptyBatch, "zero_mean_reg: empty batch");
  Vec mean = Vec::Zero(batch.front().size());
  for (const auto& z : batch) {
    require_same_dim(batch.front(), z, "zero_mean_reg");
    mean += z;
  }
  mean /= static_cast<double>(batch.size());
  return mean.squaredNorm();
}

/// Gradient wrt each batch element: 2 * mean / B.
inline std::vector<Vec> zero_mean_reg_grad(const std::vector<Vec>& batch) {
  if (batch.empty()) throw Error(Error::Code::EmptyBatch, "zero_mean_reg: empty batch");
  Vec mean = Vec::Zero(batch.front().size());
  for (const auto& z : batch) mean += z;
  mean /= static_cast<double>(batch.size());
  const Vec g = 2.0 * mean / static_cast<double>(batch.size());
  return std::vector<Vec>(batch.size(), g);
}

// ---------------------------------------------------------------------------
// InfoNCE action-interaction alignment
// ---------------------------------------------------------------------------

/// One anchor with its decomposed-action positives and the batch's
/// no_interaction negatives.
struct AlignmentBatch {
  Vec z_int;                    // anchor interaction latent
  std::vector<Vec> z_act_pos;   // 1-2 positives
  std::vector<Vec> z_int_negs;  // M >= 1 negatives

  void validate() const {
    if (z_act_pos.empty() || z_act_pos.size() > 2)
      throw Error(Error::Code::InvalidSpec, "AlignmentBatch: need 1 or 2 positives");
    if (z_int_negs.empty())
      throw Error(Error::Code::InvalidSpec, "AlignmentBatch: need at least one negative (M >= 1)");
    for (const auto& p : z_act_pos) require_same_dim(z_int, p, "AlignmentBatch");
    for (const auto& n : z_int_negs) require_same_dim(z_int, n, "AlignmentBatch");
  }
};

namespace detail {

inline double safe_norm(const Vec& v, const char* what) {
  const double n = v.norm();
  if (n <= 0.0)
    throw Error(Error::Code::ZeroNormEmbedding,
                std::string(what) + ": cosine similarity undefined for zero-norm embedding");
  return n;
}

inline double cosine(const Vec& a, const Vec& b, const char* what) {
  return a.dot(b) / (safe_norm(a, what) * safe_norm(b, what));
}

/// d cos(a,b) / d a = (b/|b| - cos * a/|a|) / |a|
inline Vec cosine_grad_wrt_first(const Vec& a, const Vec& b) {
  const double na = a.norm();
  const double nb = b.norm();
  const double c = a.dot(b) / (na * nb);
  return (b / nb - c * (a / na)) / na;
}

}  // namespace detail

/// -log( e^{sim(z_int, z+)/tau} / (e^{sim(z_int, z+)/tau} + sum_j e^{sim(z_int, z-_j)/tau}) ),
/// cosine similarity; with two positives the per-positive losses are averaged.
inline double infonce_alignment_loss(const AlignmentBatch& batch, double tau) {
  batch.validate();
  if (!(tau > 0.0)) throw Error(Error::Code::InvalidSpec, "infonce: tau must be > 0");
  const char* what = "infonce_alignment_loss";
  const std::size_t m = batch.z_int_negs.size();
  Vec neg_logits(m);
  for (std::size_t j = 0; j < m; ++j)
    neg_logits[j] = detail::cosine(batch.z_int, batch.z_int_negs[j], what) / tau;

  double total = 0.0;
  for (const auto& pos : batch.z_act_pos) {
    const double s_pos = detail::cosine(batch.z_int, pos, what) / tau;
    Vec logits(m + 1);
    logits[0] = s_pos;
    logits.tail(m) = neg_logits;
    total += log_sum_exp(logits) - s_pos;
  }
  return total / static_cast<double>(batch.z_act_pos.size());
}

struct AlignmentGrad {
  double value = 0.0;
  Vec g_int;
  std::vector<Vec> g_pos;
  std::vector<Vec> g_negs;
};

inline AlignmentGrad infonce_alignment_loss_grad(const AlignmentBatch& batch, double tau) {
  batch.validate();
  if (!(tau > 0.0)) throw Error(Error::Code::InvalidSpec, "infonce: tau must be > 0");
  const char* what = "infonce_alignment_loss";
  const std::size_t m = batch.z_int_negs.size();
  const std::size_t np = batch.z_act_pos.size();
  const double inv_p = 1.0 / static_cast<double>(np);

  AlignmentGrad out;
  out.g_int = Vec::Zero(batch.z_int.size());
  out.g_pos.assign(np, Vec::Zero(batch.z_int.size()));
  out.g_negs.assign(m, Vec::Zero(batch.z_int.size()));

  Vec neg_logits(m);
  for (std::size_t j = 0; j < m; ++j)
    neg_logits[j] = detail::cosine(batch.z_int, batch.z_int_negs[j], what) / tau;

  for (std::size_t k = 0; k < np; ++k) {
    const Vec& pos = batch.z_act_pos[k];
    const double s_pos = detail::cosine(batch.z_int, pos, what) / tau;
    Vec logits(m + 1);
    logits[0] = s_pos;
    logits.tail(m) = neg_logits;
    const Vec sigma = softmax(logits);
    out.value += log_sum_exp(logits) - s_pos;

    // dL_k/ds+ = (sigma+ - 1)/tau ; dL_k/ds-_j = sigma_j/tau
    const double ds_pos = inv_p * (sigma[0] - 1.0) / tau;
    out.g_int += ds_pos * detail::cosine_grad_wrt_first(batch.z_int, pos);
    out.g_pos[k] += ds_pos * detail::cosine_grad_wrt_first(pos, batch.z_int);
    for (std::size_t j = 0; j < m; ++j) {
      const double ds_neg = inv_p * sigma[j + 1] / tau;
      out.g_int += ds_neg * detail::cosine_grad_wrt_first(batch.z_int, batch.z_int_negs[j]);
      out.g_negs[j] += ds_neg * detail::cosine_grad_wrt_first(batch.z_int_negs[j], batch.z_int);
    }
  }
  out.value *= inv_p;
  return out;
}

// ---------------------------------------------------------------------------
// LDAM
// ---------------------------------------------------------------------------

/// Delta_j = scale / n_j^{1/4}
inline std::vector<double> ldam_margins(const std::vector<std::size_t>& class_counts,
                                        double scale) {
  if (!(scale > 0.0)) throw Error(Error::Code::InvalidSpec, "ldam_margins: scale must be > 0");
  std::vector<double> margins;
  margins.reserve(class_counts.size());
  for (const auto n : class_counts) {
    if (n == 0) throw Error(Error::Code::ZeroCount, "ldam_margins: class with zero samples");
    margins.push_back(scale / std::pow(static_cast<double>(n), 0.25));
  }
  return margins;
}

inline std::vector<double> ldam_margins(const std::map<std::string, std::size_t>& class_counts,
                                        const std::vector<std::string>& class_order,
                                        double scale) {
  std::vector<std::size_t> counts;
  counts.reserve(class_order.size());
  for (const auto& cls : class_order) {
    const auto it = class_counts.find(cls);
    if (it == class_counts.end() || it->second == 0)
      throw Error(Error::Code::ZeroCount, "ldam_margins: class '" + cls + "' has zero samples");
    counts.push_back(it->second);
  }
  return ldam_margins(counts, scale);
}

/// -log( e^{p_y - Delta_y} / (e^{p_y - Delta_y} + sum_{j != y} e^{p_j}) ),
/// stabilized by max subtraction.
inline double ldam_loss(const Vec& logits, std::size_t y, const std::vector<double>& margins) {
  if (y >= static_cast<std::size_t>(logits.size()))
    throw Error(Error::Code::IndexOutOfRange, "ldam_loss: label index out of range");
  if (margins.size() != static_cast<std::size_t>(logits.size()))
    throw Error(Error::Code::DimensionMismatch, "ldam_loss: |margins| must equal |logits|");
  Vec adjusted = logits;
  adjusted[static_cast<Eigen::Index>(y)] -= margins[y];
  return log_sum_exp(adjusted) - adjusted[static_cast<Eigen::Index>(y)];
}

struct LdamGrad {
  double value = 0.0;
  Vec g_logits;
};

/// Gradient wrt the raw logits: softmax(adjusted) - onehot(y).
inline LdamGrad ldam_loss_grad(const Vec& logits, std::size_t y,
                               const std::vector<double>& margins) {
  LdamGrad out;
  out.value = ldam_loss(logits, y, margins);
  Vec adjusted = logits;
  adjusted[static_cast<Eigen::Index>(y)] -= margins[y];
  out.g_logits = softmax(adjusted);
  out.g_logits[static_cast<Eigen::Index>(y)] -= 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Total joint loss schedule
// ---------------------------------------------------------------------------

struct JointLambdas {
  double aln = 1.0;
  double cls = 0.1;
};

inline JointLambdas joint_lambdas(std::int64_t step, const LossWeights& w) {
  w.validate();
  const double t =
      std::clamp(static_cast<double>(step) / static_cast<double>(w.schedule_steps), 0.0, 1.0);
  const double scheduled = w.lambda2_start + (w.lambda2_end - w.lambda2_start) * t;
  if (w.decay_target == LossWeights::DecayTarget::classification)
    return {w.lambda1, scheduled};
  return {scheduled, w.lambda1};
}

/// lambda_aln * L_aln + lambda_cls * L_cls with the linear schedule applied to
/// the configured decay target; steps beyond the horizon clamp to the endpoint.
inline double total_joint_loss(double loss_aln, double loss_cls, std::int64_t step,
                               const LossWeights& w) {
  const JointLambdas l = joint_lambdas(step, w);
  return l.aln * loss_aln + l.cls * loss_cls;
}

}  // namespace cattleact
