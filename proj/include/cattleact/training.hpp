#pragma once

/// Two-stage optimization. Stage one shapes the action latent space with a
/// triplet objective plus a zero-mean regularizer; stage two jointly trains
/// the interaction encoder, fusion block, and heads with the alignment and
/// margin-aware classification losses on top of the pretrained action space.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cattleact/augment.hpp"
#include "cattleact/encoders.hpp"
#include "cattleact/evaluation.hpp"
#include "cattleact/image.hpp"
#include "cattleact/losses.hpp"
#include "cattleact/manifest.hpp"
#include "cattleact/nn.hpp"
#include "cattleact/rng.hpp"
#include "cattleact/types.hpp"

namespace cattleact {

// ---------------------------------------------------------------------------
// Augmentation policy shared by both stages
// ---------------------------------------------------------------------------

enum class CutoutMode : std::uint8_t { skeleton_aware, standard, none };

inline std::string to_string(CutoutMode m) {
  switch (m) {
    case CutoutMode::skeleton_aware: return "skeleton_aware";
    case CutoutMode::standard: return "standard";
    case CutoutMode::none: return "none";
  }
  throw Error(Error::Code::InvalidArgument, "to_string: bad CutoutMode");
}

inline std::optional<CutoutMode> cutout_mode_from_string(std::string_view s) {
  if (s == "skeleton_aware") return CutoutMode::skeleton_aware;
  if (s == "standard") return CutoutMode::standard;
  if (s == "none") return CutoutMode::none;
  return std::nullopt;
}

/// Cutout policy applied per sample during training. The embedded
/// CutoutConfig's seed and fill are overwritten per application: masks draw
/// from the training run's augmentation stream and fill with dataset means.
struct AugmentOptions {
  CutoutMode mode = CutoutMode::skeleton_aware;
  double probability = 0.5;
  CutoutConfig cutout;

  void validate() const {
    if (!(probability >= 0.0 && probability <= 1.0))
      throw Error(Error::Code::InvalidSpec, "AugmentOptions: probability must be in [0, 1]");
    cutout.validate();
  }
};

namespace detail {

inline void check_known_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                             const char* what) {
  for (const auto& item : j.items())
    if (!allowed.count(item.key()))
      throw Error(Error::Code::SchemaViolation,
                  std::string(what) + ": unknown field '" + item.key() + "'");
}

}  // namespace detail

inline nlohmann::ordered_json augment_options_to_json(const AugmentOptions& a) {
  return nlohmann::ordered_json{
      {"mode", to_string(a.mode)},
      {"probability", a.probability},
      {"n_masks", a.cutout.n_masks},
      {"mask_size_frac", a.cutout.mask_size_frac},
      {"protection_radius_frac", a.cutout.protection_radius_frac},
      {"max_resample_attempts", a.cutout.max_resample_attempts},
  };
}

inline AugmentOptions augment_options_from_json(const nlohmann::json& j) {
  AugmentOptions a;
  detail::check_known_keys(j,
                           {"mode", "probability", "n_masks", "mask_size_frac",
                            "protection_radius_frac", "max_resample_attempts"},
                           "augment options");
  try {
    if (j.contains("mode")) {
      const auto m = cutout_mode_from_string(j.at("mode").get<std::string>());
      if (!m)
        throw Error(Error::Code::SchemaViolation,
                    "augment options: unknown mode '" + j.at("mode").get<std::string>() + "'");
      a.mode = *m;
    }
    a.probability = j.value("probability", a.probability);
    a.cutout.n_masks = j.value("n_masks", a.cutout.n_masks);
    a.cutout.mask_size_frac = j.value("mask_size_frac", a.cutout.mask_size_frac);
    a.cutout.protection_radius_frac =
        j.value("protection_radius_frac", a.cutout.protection_radius_frac);
    a.cutout.max_resample_attempts =
        j.value("max_resample_attempts", a.cutout.max_resample_attempts);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Error::Code::SchemaViolation, std::string("augment options: ") + e.what());
  }
  a.validate();
  return a;
}

namespace detail {

inline void maybe_cutout(ActionSample& s, const AugmentOptions& a,
                         const std::array<float, 3>& fill, Rng& rng) {
  if (a.mode == CutoutMode::none || a.probability <= 0.0) return;
  if (!rng.bernoulli(a.probability)) return;
  CutoutConfig cc = a.cutout;
  cc.seed = rng.raw();
  cc.fill_rgb = fill;
  if (a.mode == CutoutMode::skeleton_aware)
    s.image = skeleton_aware_cutout(s.image, s.skeleton, ProtectedRegionSpec::action_default(), cc);
  else
    s.image = standard_cutout(s.image, cc);
}

inline void maybe_cutout(InteractionSample& s, const AugmentOptions& a,
                         const std::array<float, 3>& fill, Rng& rng) {
  if (a.mode == CutoutMode::none || a.probability <= 0.0) return;
  if (!rng.bernoulli(a.probability)) return;
  CutoutConfig cc = a.cutout;
  cc.seed = rng.raw();
  cc.fill_rgb = fill;
  if (a.mode == CutoutMode::skeleton_aware) {
    const std::vector<Skeleton> skels{s.member_a.skeleton, s.member_b.skeleton};
    s.union_image =
        skeleton_aware_cutout(s.union_image, skels, ProtectedRegionSpec::interaction_default(), cc);
  } else {
    s.union_image = standard_cutout(s.union_image, cc);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Sample materialization and dataset statistics
// ---------------------------------------------------------------------------

/// Cut an action sample down to its bounding box: pixels from the box region,
/// skeleton translated into crop-local coordinates, box reset to the crop
/// extent. Mirrors the member-crop convention used for interactions.
inline ActionSample materialize_action_crop(const ActionSample& s) {
  ActionSample out;
  out.image = crop(s.image, s.box);
  out.label = s.label;
  out.skeleton = s.skeleton;
  for (auto& p : out.skeleton.points) {
    p.x -= s.box.x_min;
    p.y -= s.box.y_min;
  }
  out.box = BoundingBox{0.0, 0.0, static_cast<double>(out.image.width),
                        static_cast<double>(out.image.height)};
  return out;
}

/// Per-channel mean/stdev over every pixel of the given images.
inline NormStats compute_norm_stats(const std::vector<const Image*>& images) {
  if (images.empty())
    throw Error(Error::Code::EmptyBatch, "compute_norm_stats: no images");
  std::array<double, 3> sum{0.0, 0.0, 0.0};
  std::array<double, 3> sq{0.0, 0.0, 0.0};
  double n = 0.0;
  for (const Image* img : images) {
    img->validate("compute_norm_stats image");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < img->height; ++y)
        for (int x = 0; x < img->width; ++x) {
          const double v = static_cast<double>(img->at(x, y, c));
          sum[static_cast<std::size_t>(c)] += v;
          sq[static_cast<std::size_t>(c)] += v * v;
        }
    n += static_cast<double>(img->width) * img->height;
  }
  NormStats st;
  for (std::size_t c = 0; c < 3; ++c) {
    st.mean[c] = sum[c] / n;
    const double var = std::max(0.0, sq[c] / n - st.mean[c] * st.mean[c]);
    st.stdev[c] = std::max(std::sqrt(var), 1e-6);
  }
  return st;
}

// ---------------------------------------------------------------------------
// Triplet mining
// ---------------------------------------------------------------------------

struct TripletIndices {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
};

/// Uniform random triplets over integer class labels: the anchor is drawn
/// uniformly among samples whose class has at least two members, the positive
/// uniformly among the anchor's classmates (excluding the anchor itself), and
/// the negative uniformly among all samples of other classes.
inline std::vector<TripletIndices> sample_triplet_indices(const std::vector<int>& labels,
                                                          std::size_t count, Rng& rng) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  if (by_class.size() < 2)
    throw Error(Error::Code::InsufficientClassDiversity,
                "sample_triplets: need samples from at least two classes");
  std::vector<std::size_t> eligible_anchors;
  for (const auto& [cls, members] : by_class)
    if (members.size() >= 2)
      eligible_anchors.insert(eligible_anchors.end(), members.begin(), members.end());
  if (eligible_anchors.empty())
    throw Error(Error::Code::InsufficientClassDiversity,
                "sample_triplets: every class is a singleton; no positive pair exists");

  std::vector<TripletIndices> out;
  out.reserve(count);
  for (std::size_t t = 0; t < count; ++t) {
    TripletIndices tr;
    tr.anchor = eligible_anchors[rng.below(eligible_anchors.size())];
    const auto& mates = by_class.at(labels[tr.anchor]);
    do {
      tr.positive = mates[rng.below(mates.size())];
    } while (tr.positive == tr.anchor);
    do {
      tr.negative = rng.below(labels.size());
    } while (labels[tr.negative] == labels[tr.anchor]);
    out.push_back(tr);
  }
  return out;
}

struct Triplet {
  ActionSample anchor;
  ActionSample positive;
  ActionSample negative;
};

/// Draw a batch of uniform random triplets from the manifest's action records
/// and materialize their crops. Seeded calls are reproducible.
inline std::vector<Triplet> sample_triplets(const DatasetManifest& manifest,
                                            std::size_t batch_size, std::uint64_t seed) {
  std::vector<const ManifestRecord*> recs;
  std::vector<int> labels;
  for (const auto& r : manifest.records)
    if (r.kind == ManifestRecord::Kind::action) {
      const auto cls = action_class_from_string(r.label);
      if (!cls)
        throw Error(Error::Code::UnknownLabel,
                    "sample_triplets: unknown action label '" + r.label + "'");
      recs.push_back(&r);
      labels.push_back(static_cast<int>(*cls));
    }
  if (recs.empty())
    throw Error(Error::Code::InsufficientClassDiversity,
                "sample_triplets: manifest has no action records");
  Rng rng(seed);
  const auto idx = sample_triplet_indices(labels, batch_size, rng);
  std::vector<Triplet> out;
  out.reserve(idx.size());
  for (const auto& tr : idx)
    out.push_back(Triplet{
        materialize_action_crop(load_action_sample(manifest, *recs[tr.anchor])),
        materialize_action_crop(load_action_sample(manifest, *recs[tr.positive])),
        materialize_action_crop(load_action_sample(manifest, *recs[tr.negative]))});
  return out;
}

// ---------------------------------------------------------------------------
// Stage one: action-space pretraining
// ---------------------------------------------------------------------------

struct PretrainConfig {
  int epochs = 50;
  double learning_rate = 1e-5;
  int batch_size = 16;
  double alpha = 0.5;            // triplet margin
  double zero_mean_weight = 0.01;
  std::uint64_t seed = 0;
  EncoderConfig encoder;
  AugmentOptions augment;
  std::filesystem::path log_csv;  // per-epoch CSV when non-empty

  void validate() const {
    if (epochs <= 0) throw Error(Error::Code::InvalidSpec, "PretrainConfig: epochs must be > 0");
    if (!(learning_rate > 0.0))
      throw Error(Error::Code::InvalidSpec, "PretrainConfig: learning_rate must be > 0");
    if (batch_size <= 0)
      throw Error(Error::Code::InvalidSpec, "PretrainConfig: batch_size must be > 0");
    if (!(alpha > 0.0)) throw Error(Error::Code::InvalidSpec, "PretrainConfig: alpha must be > 0");
    if (zero_mean_weight < 0.0)
      throw Error(Error::Code::InvalidSpec, "PretrainConfig: zero_mean_weight must be >= 0");
    encoder.validate();
    augment.validate();
  }
};

inline nlohmann::ordered_json pretrain_config_to_json(const PretrainConfig& c) {
  return nlohmann::ordered_json{
      {"epochs", c.epochs},
      {"learning_rate", c.learning_rate},
      {"batch_size", c.batch_size},
      {"alpha", c.alpha},
      {"zero_mean_weight", c.zero_mean_weight},
      {"seed", c.seed},
      {"encoder", encoder_config_to_json(c.encoder)},
      {"augment", augment_options_to_json(c.augment)},
  };
}

inline PretrainConfig pretrain_config_from_json(const nlohmann::json& j) {
  PretrainConfig c;
  detail::check_known_keys(j,
                           {"epochs", "learning_rate", "batch_size", "alpha", "zero_mean_weight",
                            "seed", "encoder", "augment"},
                           "pretrain config");
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.alpha = j.value("alpha", c.alpha);
    c.zero_mean_weight = j.value("zero_mean_weight", c.zero_mean_weight);
    c.seed = j.value("seed", c.seed);
    if (j.contains("encoder")) c.encoder = encoder_config_from_json(j.at("encoder"));
    if (j.contains("augment")) c.augment = augment_options_from_json(j.at("augment"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Error::Code::SchemaViolation, std::string("pretrain config: ") + e.what());
  }
  c.validate();
  return c;
}

struct PretrainEpochLog {
  int epoch = 0;
  double mean_triplet_loss = 0.0;
  double mean_batch_norm = 0.0;  // ||batch-mean embedding||, averaged over steps
};

inline constexpr char kPretrainLogHeader[] = "epoch,mean_triplet_loss,mean_batch_norm";

struct PretrainResult {
  Model model;
  CheckpointMeta meta;
  std::vector<PretrainEpochLog> epochs;
};

/// Train the action encoder on uniform random triplets with the zero-mean
/// regularizer. Returns the trained model plus its per-epoch loss curve; the
/// interaction side of the model keeps its seeded initialization.
inline PretrainResult pretrain_action_encoder(const DatasetManifest& manifest,
                                              const PretrainConfig& cfg) {
  cfg.validate();
  std::vector<ActionSample> pool;
  std::vector<int> labels;
  for (const auto& r : manifest.records)
    if (r.kind == ManifestRecord::Kind::action) {
      pool.push_back(materialize_action_crop(load_action_sample(manifest, r)));
      labels.push_back(static_cast<int>(*pool.back().label));
    }
  if (pool.empty())
    throw Error(Error::Code::InsufficientClassDiversity,
                "pretrain_action_encoder: manifest has no action records");

  PretrainResult out{Model(cfg.encoder), {}, {}};
  {
    std::vector<const Image*> imgs;
    imgs.reserve(pool.size());
    for (const auto& s : pool) imgs.push_back(&s.image);
    out.model.norm = compute_norm_stats(imgs);
  }
  const std::array<float, 3> fill{static_cast<float>(out.model.norm.mean[0]),
                                  static_cast<float>(out.model.norm.mean[1]),
                                  static_cast<float>(out.model.norm.mean[2])};

  const nn::ParamRefs params = out.model.params_action_encoder();
  nn::Adam opt(nn::AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
  Rng rng(cfg.seed);
  Rng aug = rng.fork(1);

  std::ofstream log;
  if (!cfg.log_csv.empty()) {
    log.open(cfg.log_csv, std::ios::trunc);
    if (!log)
      throw Error(Error::Code::IoFailure,
                  "pretrain_action_encoder: cannot open log " + cfg.log_csv.string());
    log.precision(10);
    log << kPretrainLogHeader << "\n";
  }

  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = std::max<std::size_t>(1, pool.size() / batch);
  std::int64_t gstep = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double trip_acc = 0.0;
    double norm_acc = 0.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step, ++gstep) {
      const auto triplets = sample_triplet_indices(labels, batch, rng);
      const std::size_t n = 3 * triplets.size();
      std::vector<Model::ActTrace> traces(n);
      std::vector<Vec> zs(n);
      for (std::size_t t = 0; t < triplets.size(); ++t) {
        const std::size_t roles[3] = {triplets[t].anchor, triplets[t].positive,
                                      triplets[t].negative};
        for (std::size_t r = 0; r < 3; ++r) {
          ActionSample s = pool[roles[r]];
          detail::maybe_cutout(s, cfg.augment, fill, aug);
          zs[3 * t + r] =
              out.model.encode_action_input(out.model.preprocess(s.image), &traces[3 * t + r]);
        }
      }

      std::vector<Vec> grads(n, Vec::Zero(zs.front().size()));
      double trip_mean = 0.0;
      const double inv_b = 1.0 / static_cast<double>(triplets.size());
      for (std::size_t t = 0; t < triplets.size(); ++t) {
        const auto tg =
            triplet_loss_grad(zs[3 * t], zs[3 * t + 1], zs[3 * t + 2], cfg.alpha);
        trip_mean += tg.value * inv_b;
        grads[3 * t] += inv_b * tg.g_a;
        grads[3 * t + 1] += inv_b * tg.g_p;
        grads[3 * t + 2] += inv_b * tg.g_n;
      }
      const double reg = zero_mean_reg(zs);
      if (cfg.zero_mean_weight > 0.0) {
        const auto rg = zero_mean_reg_grad(zs);
        for (std::size_t k = 0; k < n; ++k) grads[k] += cfg.zero_mean_weight * rg[k];
      }
      const double loss = trip_mean + cfg.zero_mean_weight * reg;
      if (!std::isfinite(loss))
        throw Error(Error::Code::NonFiniteLoss,
                    "pretrain_action_encoder: non-finite loss at step " + std::to_string(gstep));

      nn::zero_grads(params);
      for (std::size_t k = 0; k < n; ++k) out.model.encode_action_backward(traces[k], grads[k]);
      opt.step(params);

      trip_acc += trip_mean;
      norm_acc += std::sqrt(reg);
    }
    PretrainEpochLog row{epoch, trip_acc / static_cast<double>(steps_per_epoch),
                         norm_acc / static_cast<double>(steps_per_epoch)};
    out.epochs.push_back(row);
    if (log)
      log << row.epoch << ',' << row.mean_triplet_loss << ',' << row.mean_batch_norm << "\n";
  }
  if (log && !log.flush())
    throw Error(Error::Code::IoFailure,
                "pretrain_action_encoder: failed writing log " + cfg.log_csv.string());

  out.meta.step = gstep;
  out.meta.metrics["final_epoch_mean_triplet_loss"] = out.epochs.back().mean_triplet_loss;
  out.meta.metrics["final_epoch_mean_batch_norm"] = out.epochs.back().mean_batch_norm;
  return out;
}

// ---------------------------------------------------------------------------
// Alignment batch construction
// ---------------------------------------------------------------------------

/// Embeddings for one optimization batch of interaction samples, in batch
/// order: the interaction latent and the two member-crop action latents.
struct InteractionEmbeddings {
  std::vector<InteractionClass> labels;
  std::vector<Vec> z_int;
  std::vector<std::array<Vec, 2>> z_members;

  void validate() const {
    if (labels.size() != z_int.size() || labels.size() != z_members.size())
      throw Error(Error::Code::LengthMismatch,
                  "InteractionEmbeddings: labels/z_int/z_members lengths differ");
  }
};

/// One alignment batch per labeled-interaction anchor (ascending batch order):
/// positives are the anchor's two member-crop embeddings, negatives the
/// interaction latents of every no_interaction sample in the batch (ascending
/// order). Returns empty when there are no anchors or no negatives; callers
/// skip the alignment term for that step.
inline std::vector<AlignmentBatch> build_alignment_batches(const InteractionEmbeddings& e) {
  e.validate();
  std::vector<Vec> negs;
  for (std::size_t i = 0; i < e.labels.size(); ++i)
    if (e.labels[i] == InteractionClass::no_interaction) negs.push_back(e.z_int[i]);
  std::vector<AlignmentBatch> out;
  if (negs.empty()) return out;
  for (std::size_t i = 0; i < e.labels.size(); ++i) {
    if (e.labels[i] == InteractionClass::no_interaction) continue;
    AlignmentBatch b;
    b.z_int = e.z_int[i];
    b.z_act_pos = {e.z_members[i][0], e.z_members[i][1]};
    b.z_int_negs = negs;
    out.push_back(std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss-weight serialization
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json loss_weights_to_json(const LossWeights& w) {
  return nlohmann::ordered_json{
      {"alpha", w.alpha},
      {"tau", w.tau},
      {"lambda1", w.lambda1},
      {"lambda2_start", w.lambda2_start},
      {"lambda2_end", w.lambda2_end},
      {"schedule_steps", w.schedule_steps},
      {"ldam_margin_scale", w.ldam_margin_scale},
      {"zero_mean_weight", w.zero_mean_weight},
      {"decay_target",
       w.decay_target == LossWeights::DecayTarget::classification ? "classification"
                                                                  : "alignment"},
  };
}

inline LossWeights loss_weights_from_json(const nlohmann::json& j) {
  LossWeights w;
  detail::check_known_keys(j,
                           {"alpha", "tau", "lambda1", "lambda2_start", "lambda2_end",
                            "schedule_steps", "ldam_margin_scale", "zero_mean_weight",
                            "decay_target"},
                           "loss weights");
  try {
    w.alpha = j.value("alpha", w.alpha);
    w.tau = j.value("tau", w.tau);
    w.lambda1 = j.value("lambda1", w.lambda1);
    w.lambda2_start = j.value("lambda2_start", w.lambda2_start);
    w.lambda2_end = j.value("lambda2_end", w.lambda2_end);
    w.schedule_steps = j.value("schedule_steps", w.schedule_steps);
    w.ldam_margin_scale = j.value("ldam_margin_scale", w.ldam_margin_scale);
    w.zero_mean_weight = j.value("zero_mean_weight", w.zero_mean_weight);
    if (j.contains("decay_target")) {
      const std::string d = j.at("decay_target").get<std::string>();
      if (d == "classification")
        w.decay_target = LossWeights::DecayTarget::classification;
      else if (d == "alignment")
        w.decay_target = LossWeights::DecayTarget::alignment;
      else
        throw Error(Error::Code::SchemaViolation,
                    "loss weights: unknown decay_target '" + d + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Error::Code::SchemaViolation, std::string("loss weights: ") + e.what());
  }
  w.validate();
  return w;
}

// ---------------------------------------------------------------------------
// Stage two: joint training
// ---------------------------------------------------------------------------

struct JointTrainConfig {
  int epochs = 50;
  double learning_rate = 1e-5;
  int batch_size = 8;
  LossWeights weights;
  bool freeze_action_encoder = false;
  std::uint64_t seed = 0;

  double val_fraction = 0.2;      // held out for model selection by macro-F1
  bool use_alignment = true;      // disable for the alignment ablation
  bool from_scratch = false;      // explicit override of the stage ordering
  double action_ce_weight = 1.0;  // cross-entropy on member-crop action labels
  bool schedule_over_run = true;  // stretch the lambda schedule across all steps
  EncoderConfig encoder;          // used only when training from scratch
  AugmentOptions augment;
  std::filesystem::path log_csv;  // per-step CSV when non-empty

  void validate() const {
    if (epochs <= 0) throw Error(Error::Code::InvalidSpec, "JointTrainConfig: epochs must be > 0");
    if (!(learning_rate > 0.0))
      throw Error(Error::Code::InvalidSpec, "JointTrainConfig: learning_rate must be > 0");
    if (batch_size <= 0)
      throw Error(Error::Code::InvalidSpec, "JointTrainConfig: batch_size must be > 0");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
      throw Error(Error::Code::InvalidSpec, "JointTrainConfig: val_fraction must be in [0, 1)");
    if (action_ce_weight < 0.0)
      throw Error(Error::Code::InvalidSpec, "JointTrainConfig: action_ce_weight must be >= 0");
    weights.validate();
    encoder.validate();
    augment.validate();
  }
};

inline nlohmann::ordered_json joint_train_config_to_json(const JointTrainConfig& c) {
  return nlohmann::ordered_json{
      {"epochs", c.epochs},
      {"learning_rate", c.learning_rate},
      {"batch_size", c.batch_size},
      {"weights", loss_weights_to_json(c.weights)},
      {"freeze_action_encoder", c.freeze_action_encoder},
      {"seed", c.seed},
      {"val_fraction", c.val_fraction},
      {"use_alignment", c.use_alignment},
      {"from_scratch", c.from_scratch},
      {"action_ce_weight", c.action_ce_weight},
      {"schedule_over_run", c.schedule_over_run},
      {"encoder", encoder_config_to_json(c.encoder)},
      {"augment", augment_options_to_json(c.augment)},
  };
}

inline JointTrainConfig joint_train_config_from_json(const nlohmann::json& j) {
  JointTrainConfig c;
  detail::check_known_keys(
      j,
      {"epochs", "learning_rate", "batch_size", "weights", "freeze_action_encoder", "seed",
       "val_fraction", "use_alignment", "from_scratch", "action_ce_weight", "schedule_over_run",
       "encoder", "augment"},
      "joint config");
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("weights")) c.weights = loss_weights_from_json(j.at("weights"));
    c.freeze_action_encoder = j.value("freeze_action_encoder", c.freeze_action_encoder);
    c.seed = j.value("seed", c.seed);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.use_alignment = j.value("use_alignment", c.use_alignment);
    c.from_scratch = j.value("from_scratch", c.from_scratch);
    c.action_ce_weight = j.value("action_ce_weight", c.action_ce_weight);
    c.schedule_over_run = j.value("schedule_over_run", c.schedule_over_run);
    if (j.contains("encoder")) c.encoder = encoder_config_from_json(j.at("encoder"));
    if (j.contains("augment")) c.augment = augment_options_from_json(j.at("augment"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Error::Code::SchemaViolation, std::string("joint config: ") + e.what());
  }
  c.validate();
  return c;
}

struct JointStepLog {
  std::int64_t step = 0;
  double loss_total = 0.0;
  double loss_aln = 0.0;
  double loss_cls = 0.0;
  double lambda2 = 0.0;  // the scheduled (decaying) weight at this step
};

inline constexpr char kJointLogHeader[] = "step,loss_total,loss_aln,loss_cls,lambda2";

struct JointTrainResult {
  Model model;  // final state
  CheckpointMeta meta;
  Model best_model;  // best validation macro-F1 (final state when no split)
  CheckpointMeta best_meta;
  std::vector<JointStepLog> steps;
  std::vector<double> val_macro_f1;  // initial eval plus one entry per epoch
};

namespace detail {

/// Seeded shuffle-and-cut split over [0, n); both halves returned sorted.
/// Keeps at least one training sample.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_train_val(
    std::size_t n, double val_fraction, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);
  std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  if (n_val >= n) n_val = n - 1;
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {std::move(train), std::move(val)};
}

/// Leakage guard: no sample id may sit in both splits.
inline void require_disjoint_ids(const std::vector<std::string>& train_ids,
                                 const std::vector<std::string>& val_ids) {
  const std::set<std::string> train_set(train_ids.begin(), train_ids.end());
  for (const auto& id : val_ids)
    if (train_set.count(id))
      throw Error(Error::Code::InvalidArgument,
                  "data leakage: id '" + id + "' appears in both training and validation splits");
}

inline JointTrainResult train_joint_impl(const DatasetManifest& manifest, const Model* pretrained,
                                         const JointTrainConfig& cfg) {
  cfg.validate();
  if (pretrained == nullptr && !cfg.from_scratch)
    throw Error(Error::Code::CheckpointMismatch,
                "train_joint: joint training continues from an action-pretraining checkpoint; "
                "provide one or set from_scratch to override");

  std::vector<const ManifestRecord*> recs;
  for (const auto& r : manifest.records)
    if (r.kind == ManifestRecord::Kind::interaction) recs.push_back(&r);
  if (recs.empty())
    throw Error(Error::Code::EmptyBatch, "train_joint: manifest has no interaction records");

  struct Item {
    std::string id;
    InteractionSample sample;
  };
  std::vector<Item> pool;
  pool.reserve(recs.size());
  for (const auto* r : recs) pool.push_back({r->id(), load_interaction_sample(manifest, *r)});

  Rng rng(cfg.seed);
  auto [train_idx, val_idx] = split_train_val(pool.size(), cfg.val_fraction, rng);
  {
    std::vector<std::string> train_ids, val_ids;
    for (auto i : train_idx) train_ids.push_back(pool[i].id);
    for (auto i : val_idx) val_ids.push_back(pool[i].id);
    require_disjoint_ids(train_ids, val_ids);
  }

  std::vector<std::size_t> counts(kNumInteractionClasses, 0);
  for (auto i : train_idx) ++counts[static_cast<std::size_t>(pool[i].sample.label)];
  LossWeights weights = cfg.weights;
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (train_idx.size() + batch - 1) / batch;
  const std::int64_t total_steps =
      static_cast<std::int64_t>(steps_per_epoch) * cfg.epochs;
  if (cfg.schedule_over_run) weights.schedule_steps = std::max<std::int64_t>(1, total_steps - 1);
  const std::vector<double> margins = ldam_margins(counts, weights.ldam_margin_scale);
  const std::vector<double> no_margins(kNumActionClasses, 0.0);

  Model initial = pretrained ? Model(*pretrained) : Model(cfg.encoder);
  if (!pretrained) {
    std::vector<const Image*> imgs;
    for (auto i : train_idx) imgs.push_back(&pool[i].sample.union_image);
    initial.norm = compute_norm_stats(imgs);
  }
  JointTrainResult out{initial, {}, std::move(initial), {}, {}, {}};

  const nn::ParamRefs all_params = out.model.params(true);
  const nn::ParamRefs params = out.model.params(!cfg.freeze_action_encoder);
  nn::Adam opt(nn::AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
  Rng aug = rng.fork(1);
  const std::array<float, 3> fill{static_cast<float>(out.model.norm.mean[0]),
                                  static_cast<float>(out.model.norm.mean[1]),
                                  static_cast<float>(out.model.norm.mean[2])};

  std::ofstream log;
  if (!cfg.log_csv.empty()) {
    log.open(cfg.log_csv, std::ios::trunc);
    if (!log)
      throw Error(Error::Code::IoFailure, "train_joint: cannot open log " + cfg.log_csv.string());
    log.precision(10);
    log << kJointLogHeader << "\n";
  }

  auto eval_val_macro_f1 = [&]() {
    std::vector<std::string> preds, truths;
    preds.reserve(val_idx.size());
    truths.reserve(val_idx.size());
    for (auto i : val_idx) {
      const Vec scores = infer_interaction_scores(out.model, pool[i].sample);
      Eigen::Index arg = 0;
      scores.maxCoeff(&arg);
      preds.push_back(interaction_class_order()[static_cast<std::size_t>(arg)]);
      truths.push_back(to_string(pool[i].sample.label));
    }
    return confusion_and_metrics(preds, truths, interaction_class_order()).second.macro_f1;
  };

  double best_f1 = -1.0;
  if (!val_idx.empty()) {
    best_f1 = eval_val_macro_f1();
    out.val_macro_f1.push_back(best_f1);
    out.best_meta.step = 0;
    out.best_meta.metrics["val_macro_f1"] = best_f1;
  }

  std::int64_t gstep = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.below(i)]);

    for (std::size_t start = 0; start < order.size(); start += batch, ++gstep) {
      const std::size_t b = std::min(batch, order.size() - start);
      const double inv_b = 1.0 / static_cast<double>(b);

      struct SampleState {
        Model::IntTrace int_trace;
        Model::ActTrace act_trace_a, act_trace_b;
        Model::FuseTrace fuse_trace;
        FusionState fused;
        Vec ldam_g;             // gradient wrt interaction logits
        std::optional<Vec> ce_g_a, ce_g_b;  // gradients wrt action logits
        Vec z_a, z_b;
        Vec g_int, g_a, g_b;    // accumulated gradients wrt the three latents
      };
      std::vector<SampleState> st(b);
      InteractionEmbeddings emb;
      emb.labels.resize(b);
      emb.z_int.resize(b);
      emb.z_members.resize(b);

      double loss_cls = 0.0;
      double loss_act = 0.0;
      std::size_t act_terms = 0;
      for (std::size_t k = 0; k < b; ++k) {
        InteractionSample s = pool[order[start + k]].sample;
        maybe_cutout(s, cfg.augment, fill, aug);
        const auto members = split_interaction_crop(s);

        emb.labels[k] = s.label;
        emb.z_int[k] = out.model.encode_interaction_input(out.model.preprocess(s.union_image),
                                                          &st[k].int_trace);
        st[k].z_a = out.model.encode_action_input(out.model.preprocess(members.first.image),
                                                  &st[k].act_trace_a);
        st[k].z_b = out.model.encode_action_input(out.model.preprocess(members.second.image),
                                                  &st[k].act_trace_b);
        emb.z_members[k] = {st[k].z_a, st[k].z_b};
        st[k].fused = out.model.fuse(emb.z_int[k], st[k].z_a, st[k].z_b, &st[k].fuse_trace);

        const Logits lg = out.model.classify_interaction(st[k].fused);
        const auto cg =
            ldam_loss_grad(lg.values, static_cast<std::size_t>(s.label), margins);
        loss_cls += cg.value * inv_b;
        st[k].ldam_g = cg.g_logits;

        if (cfg.action_ce_weight > 0.0) {
          auto member_ce = [&](const ActionSample& m, std::optional<Vec>& slot, const Vec& z) {
            if (!m.label) return;
            const auto ag = ldam_loss_grad(out.model.classify_action(z).values,
                                           static_cast<std::size_t>(*m.label), no_margins);
            loss_act += ag.value;
            slot = ag.g_logits;
            ++act_terms;
          };
          member_ce(members.first, st[k].ce_g_a, st[k].z_a);
          member_ce(members.second, st[k].ce_g_b, st[k].z_b);
        }
        st[k].g_int = Vec::Zero(emb.z_int[k].size());
        st[k].g_a = Vec::Zero(emb.z_int[k].size());
        st[k].g_b = Vec::Zero(emb.z_int[k].size());
      }
      if (act_terms > 0) loss_act /= static_cast<double>(act_terms);

      const JointLambdas lambdas = joint_lambdas(gstep, weights);
      const double lambda2 =
          weights.decay_target == LossWeights::DecayTarget::classification ? lambdas.cls
                                                                           : lambdas.aln;

      // Alignment term: one batch per anchor, negatives shared in batch order.
      double loss_aln = 0.0;
      if (cfg.use_alignment) {
        std::vector<std::size_t> anchor_slots, neg_slots;
        for (std::size_t k = 0; k < b; ++k)
          (emb.labels[k] == InteractionClass::no_interaction ? neg_slots : anchor_slots)
              .push_back(k);
        const auto batches = build_alignment_batches(emb);
        if (!batches.empty()) {
          const double inv_a = 1.0 / static_cast<double>(batches.size());
          for (std::size_t a = 0; a < batches.size(); ++a) {
            const auto ag = infonce_alignment_loss_grad(batches[a], weights.tau);
            loss_aln += ag.value * inv_a;
            const double w = lambdas.aln * inv_a;
            const std::size_t slot = anchor_slots[a];
            st[slot].g_int += w * ag.g_int;
            st[slot].g_a += w * ag.g_pos[0];
            st[slot].g_b += w * ag.g_pos[1];
            for (std::size_t j = 0; j < neg_slots.size(); ++j)
              st[neg_slots[j]].g_int += w * ag.g_negs[j];
          }
        }
      }

      const double loss_total =
          lambdas.aln * loss_aln + lambdas.cls * loss_cls + cfg.action_ce_weight * loss_act;
      if (!std::isfinite(loss_total))
        throw Error(Error::Code::NonFiniteLoss,
                    "train_joint: non-finite loss at step " + std::to_string(gstep));

      nn::zero_grads(all_params);
      const double act_w =
          act_terms > 0 ? cfg.action_ce_weight / static_cast<double>(act_terms) : 0.0;
      for (std::size_t k = 0; k < b; ++k) {
        const Vec g_flat =
            out.model.head_int_backward(st[k].fused, (lambdas.cls * inv_b) * st[k].ldam_g);
        const auto fg = out.model.fuse_backward(st[k].fuse_trace, g_flat);
        st[k].g_int += fg.g_int;
        st[k].g_a += fg.g_a;
        st[k].g_b += fg.g_b;
        if (st[k].ce_g_a) st[k].g_a += out.model.head_act_backward(st[k].z_a, act_w * *st[k].ce_g_a);
        if (st[k].ce_g_b) st[k].g_b += out.model.head_act_backward(st[k].z_b, act_w * *st[k].ce_g_b);
        out.model.encode_interaction_backward(st[k].int_trace, st[k].g_int);
        out.model.encode_action_backward(st[k].act_trace_a, st[k].g_a);
        out.model.encode_action_backward(st[k].act_trace_b, st[k].g_b);
      }
      opt.step(params);

      out.steps.push_back({gstep, loss_total, loss_aln, loss_cls, lambda2});
      if (log)
        log << gstep << ',' << loss_total << ',' << loss_aln << ',' << loss_cls << ',' << lambda2
            << "\n";
    }

    if (!val_idx.empty()) {
      const double f1 = eval_val_macro_f1();
      out.val_macro_f1.push_back(f1);
      if (f1 > best_f1) {
        best_f1 = f1;
        out.best_model = out.model;
        out.best_meta.step = gstep;
        out.best_meta.metrics["val_macro_f1"] = f1;
      }
    }
  }
  if (log && !log.flush())
    throw Error(Error::Code::IoFailure, "train_joint: failed writing log " + cfg.log_csv.string());

  out.meta.step = gstep;
  out.meta.metrics["final_loss_total"] = out.steps.back().loss_total;
  if (!val_idx.empty()) {
    out.meta.metrics["final_val_macro_f1"] = out.val_macro_f1.back();
    out.meta.metrics["best_val_macro_f1"] = best_f1;
  } else {
    out.best_model = out.model;
    out.best_meta = out.meta;
  }
  return out;
}

}  // namespace detail

/// Stage two on top of a pretrained action encoder (the model carries its
/// normalization statistics and the interaction side's initialization).
inline JointTrainResult train_joint(const DatasetManifest& manifest, const Model& pretrained,
                                    const JointTrainConfig& cfg) {
  return detail::train_joint_impl(manifest, &pretrained, cfg);
}

/// Stage two without a pretraining checkpoint: refused unless the config sets
/// the explicit from_scratch override.
inline JointTrainResult train_joint(const DatasetManifest& manifest,
                                    const JointTrainConfig& cfg) {
  return detail::train_joint_impl(manifest, nullptr, cfg);
}

}  // namespace cattleact
