// cattleact: one binary tying the pipeline together — synthetic dataset
// generation, two-stage training, evaluation, GPS re-identification, and
// model-analysis commands, all driven by JSON configs and reproducible seeds.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cattleact/association.hpp"
#include "cattleact/augment.hpp"
#include "cattleact/encoders.hpp"
#include "cattleact/evaluation.hpp"
#include "cattleact/image.hpp"
#include "cattleact/manifest.hpp"
#include "cattleact/png_io.hpp"
#include "cattleact/rng.hpp"
#include "cattleact/synthetic.hpp"
#include "cattleact/training.hpp"
#include "cattleact/types.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

using namespace cattleact;

/// Problems with flags, configs, or referenced inputs: exit code 2.
/// cattleact::Error escaping a command once execution starts: exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

std::uint64_t fnv1a_bytes(const char* data, std::size_t n,
                          std::uint64_t h = 1469598103934665603ULL) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv1a_string(const std::string& s) { return fnv1a_bytes(s.data(), s.size()); }

std::string fnv1a_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError("cannot open input file: " + p.string());
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 16];
  for (;;) {
    in.read(buf, sizeof buf);
    const std::streamsize got = in.gcount();
    if (got <= 0) break;
    h = fnv1a_bytes(buf, static_cast<std::size_t>(got), h);
    if (!in) break;
  }
  char out[32];
  std::snprintf(out, sizeof out, "fnv1a:%016llx", static_cast<unsigned long long>(h));
  return out;
}

std::string utc_timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// CATTLEACT_SEED overrides both the --seed flag and any config-file seed.
std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("CATTLEACT_SEED");
  if (!s || !*s) return std::nullopt;
  for (const char* c = s; *c; ++c)
    if (*c < '0' || *c > '9')
      throw UsageError(std::string("CATTLEACT_SEED must be a decimal unsigned integer, got '") +
                       s + "'");
  errno = 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (errno == ERANGE)
    throw UsageError(std::string("CATTLEACT_SEED out of range: '") + s + "'");
  return v;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t config_seed) {
  if (const auto e = env_seed()) return *e;
  if (flag) return *flag;
  return config_seed;
}

nlohmann::json load_json_file(const fs::path& p, const char* what) {
  std::ifstream in(p);
  if (!in) throw UsageError(std::string(what) + ": cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string(what) + " " + p.string() + ": " + e.what());
  }
}

void write_text_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(Error::Code::IoFailure, "cannot open for writing: " + p.string());
  out << text;
  if (!out) throw Error(Error::Code::IoFailure, "write failed: " + p.string());
}

DatasetManifest load_manifest_checked(const fs::path& p) {
  try {
    return load_manifest(p);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

LoadedCheckpoint load_checkpoint_checked(const fs::path& p) {
  try {
    return load_checkpoint(p);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

/// Manifest preconditions are usage errors: the images a command will read
/// must exist before execution starts.
void require_image(const DatasetManifest& m, const ManifestRecord& r) {
  const fs::path p = m.base_dir / r.image;
  if (!fs::exists(p)) throw UsageError("manifest references missing image: " + p.string());
}

// ---------------------------------------------------------------------------
// run.json provenance record
// ---------------------------------------------------------------------------

struct RunRecorder {
  std::string command;
  fs::path out_dir;
  ordered_json config = ordered_json::object();
  std::optional<std::uint64_t> seed;
  ordered_json inputs = ordered_json::object();
  std::vector<std::string> outputs;
  ordered_json extra = ordered_json::object();

  RunRecorder(std::string cmd, fs::path dir) : command(std::move(cmd)), out_dir(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw UsageError("cannot create output directory " + out_dir.string() + ": " +
                             ec.message());
  }

  void input(const std::string& name, const fs::path& p) { inputs[name] = fnv1a_file(p); }

  /// Register an output file name and return its full path under out_dir.
  fs::path out(const std::string& name) {
    outputs.push_back(name);
    return out_dir / name;
  }

  void write() const {
    ordered_json j;
    j["command"] = command;
    j["library_version"] = std::string(kLibraryVersion);
    if (seed) j["seed"] = *seed;
    j["config"] = config;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    for (const auto& [k, v] : extra.items()) j[k] = v;
    j["timestamp_utc"] = utc_timestamp();
    write_text_file(out_dir / "run.json", j.dump(2) + "\n");
  }
};

void apply_cutout_flags(AugmentOptions& augment, bool standard, bool none) {
  if (standard) augment.mode = CutoutMode::standard;
  if (none) augment.mode = CutoutMode::none;
}

// ---------------------------------------------------------------------------
// synth-generate
// ---------------------------------------------------------------------------

void register_synth_generate(CLI::App& app) {
  struct State {
    std::string spec_path;
    std::string out_dir;
    double gps_duration = 60.0;
    double gps_rate = 1.0;
    double gps_offset = 0.0;
    bool no_images = false;
    bool no_gps = false;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
  };
  auto st = std::make_shared<State>();
  CLI::App* cmd = app.add_subcommand(
      "synth-generate", "Generate a labeled synthetic pasture dataset plus GPS/tracklet files");
  cmd->add_option("--spec", st->spec_path, "Scene spec JSON (see footer)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", st->out_dir, "Output directory (created if absent)")->required();
  cmd->add_option("--gps-duration", st->gps_duration, "GPS capture length in seconds")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--gps-rate", st->gps_rate, "GPS fix rate in Hz")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--gps-offset", st->gps_offset,
                  "Time shift of tracklet frames relative to GPS fixes, seconds")
      ->capture_default_str();
  cmd->add_flag("--no-images", st->no_images,
                "Write manifest and sidecars only (metadata-only run)");
  cmd->add_flag("--no-gps", st->no_gps, "Skip the GPS/tracklet bundle");
  st->seed_opt = cmd->add_option("--seed", st->seed, "Override the spec seed");
  cmd->footer(R"(Spec JSON keys: n_cattle, arena_w_m, arena_h_m, gps_noise_sigma, seed, n_samples,
and class_mix — an object keyed by the four action classes (grazing, standing,
lying, riding) then the four interaction classes (no_interaction, interest,
conflict, mount); the eight probabilities must sum to 1.

Outputs under --out-dir:
  images/*.png     rendered sample crops (omitted with --no-images)
  manifest.jsonl   header line, then one JSON record per sample
  regions.jsonl    {"id","rect":[x0,y0,x1,y1]} per mount sample: the
                   discriminative overlap patch (occlusion-map ground truth)
  gps.csv          noisy fixes, columns cattle_id,t,x_m,y_m (skipped by --no-gps)
  gps_truth.csv    the same times without noise
  tracklets.jsonl  {"track_id","frames":[[t,x0,y0,x1,y1],...]} per animal
  correspondences.csv  x_m,y_m,u_px,v_px pairs that re-fit the homography
  homography.json  {"H": 3x3} ground meters -> image pixels
  run.json         provenance (see top-level help)

The same spec and seed reproduce every output byte (run.json timestamp aside).)");

  cmd->callback([st]() {
    const auto spec_json = load_json_file(st->spec_path, "synth spec");
    SyntheticSceneSpec spec;
    try {
      spec = scene_spec_from_json(spec_json);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    spec.seed = resolve_seed(st->seed_opt->count() ? std::optional<std::uint64_t>(st->seed)
                                                   : std::nullopt,
                             spec.seed);

    RunRecorder run("synth-generate", st->out_dir);
    run.input("spec", st->spec_path);
    run.seed = spec.seed;
    run.config = scene_spec_to_json(spec);
    run.config["write_images"] = !st->no_images;
    if (!st->no_gps) {
      run.config["gps_duration_s"] = st->gps_duration;
      run.config["gps_rate_hz"] = st->gps_rate;
      run.config["gps_frame_offset_s"] = st->gps_offset;
    }

    GenerateOptions gopts;
    gopts.write_images = !st->no_images;
    GeneratedDataset ds;
    try {
      ds = generate_synthetic_dataset(spec, st->out_dir, gopts);
      run.outputs.push_back("manifest.jsonl");
      run.outputs.push_back("regions.jsonl");
      if (gopts.write_images) run.outputs.push_back("images/");

      if (!st->no_gps) {
        const auto bundle =
            generate_synthetic_gps_tracks(spec, st->gps_duration, st->gps_rate, st->gps_offset);
        save_gps_csv(bundle.gps, run.out("gps.csv"));
        save_gps_csv(bundle.truth, run.out("gps_truth.csv"));
        save_tracklets_jsonl(bundle.tracklets, run.out("tracklets.jsonl"));
        save_correspondences_csv(bundle.correspondences, run.out("correspondences.csv"));
        write_text_file(run.out("homography.json"),
                        homography_to_json(bundle.homography).dump(2) + "\n");
      }
    } catch (const Error& e) {
      if (e.code() == Error::Code::InvalidSpec) throw UsageError(e.what());
      throw;
    }

    run.extra["n_records"] = ds.manifest.records.size();
    run.extra["n_mount_regions"] = ds.mount_regions.size();
    run.write();
    std::cout << "generated " << ds.manifest.records.size() << " samples under "
              << st->out_dir << "\n";
  });
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

void register_pretrain(CLI::App& app) {
  struct State {
    std::string config_path;
    std::string manifest_path;
    std::string out_dir;
    bool standard_cutout = false;
    bool no_cutout = false;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
  };
  auto st = std::make_shared<State>();
  CLI::App* cmd = app.add_subcommand(
      "pretrain", "Stage 1: train the action encoder on triplets of action crops");
  cmd->add_option("--config", st->config_path, "Pretrain config JSON (see footer)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--manifest", st->manifest_path, "Dataset manifest (manifest.jsonl)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", st->out_dir, "Output directory (created if absent)")->required();
  auto* std_cut = cmd->add_flag("--standard-cutout", st->standard_cutout,
                                "Ablation: plain cutout without keypoint protection");
  cmd->add_flag("--no-cutout", st->no_cutout, "Disable cutout augmentation entirely")
      ->excludes(std_cut);
  st->seed_opt = cmd->add_option("--seed", st->seed, "Override the config seed");
  cmd->footer(R"(Config JSON keys (all optional; defaults in parentheses):
  epochs (50), learning_rate (1e-05), batch_size (16), alpha (0.5),
  zero_mean_weight (0.01), seed (0), encoder { ... }, augment { mode
  ("skeleton_aware"|"standard"|"none"), probability, n_masks, mask_size_frac,
  protection_radius_frac, max_resample_attempts }.

Outputs under --out-dir:
  action.ckpt       trained model checkpoint (interaction side keeps its
                    seeded initialization)
  pretrain_log.csv  epoch,mean_triplet_loss,mean_batch_norm
  run.json          provenance (see top-level help))");

  cmd->callback([st]() {
    const auto cfg_json = load_json_file(st->config_path, "pretrain config");
    PretrainConfig cfg;
    try {
      cfg = pretrain_config_from_json(cfg_json);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    cfg.seed = resolve_seed(st->seed_opt->count() ? std::optional<std::uint64_t>(st->seed)
                                                  : std::nullopt,
                            cfg.seed);
    apply_cutout_flags(cfg.augment, st->standard_cutout, st->no_cutout);

    const DatasetManifest manifest = load_manifest_checked(st->manifest_path);
    for (const auto& r : manifest.records)
      if (r.kind == ManifestRecord::Kind::action) require_image(manifest, r);

    RunRecorder run("pretrain", st->out_dir);
    run.input("config", st->config_path);
    run.input("manifest", st->manifest_path);
    run.seed = cfg.seed;
    cfg.log_csv = run.out("pretrain_log.csv");
    run.config = pretrain_config_to_json(cfg);

    PretrainResult result = pretrain_action_encoder(manifest, cfg);
    save_checkpoint(result.model, result.meta, run.out("action.ckpt"));
    run.extra["metrics"] = result.meta.metrics;
    run.write();
    std::cout << "pretrained action encoder: " << result.epochs.size()
              << " epochs, final mean triplet loss "
              << result.meta.metrics.at("final_epoch_mean_triplet_loss") << "\n";
  });
}

// ---------------------------------------------------------------------------
// train-joint
// ---------------------------------------------------------------------------

void register_train_joint(CLI::App& app) {
  struct State {
    std::string config_path;
    std::string manifest_path;
    std::string out_dir;
    std::string action_ckpt;
    bool from_scratch = false;
    bool no_alignment = false;
    bool standard_cutout = false;
    bool no_cutout = false;
    bool freeze = false;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
  };
  auto st = std::make_shared<State>();
  CLI::App* cmd = app.add_subcommand(
      "train-joint",
      "Stage 2: joint interaction training (alignment + margin classification)");
  cmd->add_option("--config", st->config_path, "Joint config JSON (see footer)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--manifest", st->manifest_path, "Dataset manifest (manifest.jsonl)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", st->out_dir, "Output directory (created if absent)")->required();
  auto* ckpt_opt = cmd->add_option("--action-checkpoint", st->action_ckpt,
                                   "Stage-1 checkpoint produced by `pretrain`")
                       ->check(CLI::ExistingFile);
  cmd->add_flag("--from-scratch,--no-pretrain", st->from_scratch,
                "Ablation: skip stage 1 and start from a fresh encoder")
      ->excludes(ckpt_opt);
  cmd->add_flag("--no-alignment", st->no_alignment,
                "Ablation: drop the action-interaction alignment loss");
  auto* std_cut = cmd->add_flag("--standard-cutout", st->standard_cutout,
                                "Ablation: plain cutout without keypoint protection");
  cmd->add_flag("--no-cutout", st->no_cutout, "Disable cutout augmentation entirely")
      ->excludes(std_cut);
  cmd->add_flag("--freeze-action-encoder", st->freeze,
                "Keep the pretrained action encoder fixed during stage 2");
  st->seed_opt = cmd->add_option("--seed", st->seed, "Override the config seed");
  cmd->footer(R"(Stage ordering: this command needs either --action-checkpoint (the stage-1
result) or an explicit --from-scratch / --no-pretrain override; with a
checkpoint, its encoder configuration wins over the config file's.

Config JSON keys (all optional; defaults in parentheses):
  epochs (50), learning_rate (1e-05), batch_size (8), freeze_action_encoder
  (false), seed (0), val_fraction (0.2), use_alignment (true), from_scratch
  (false), action_ce_weight (1), schedule_over_run (true), encoder { ... },
  augment { ... }, weights { alpha (0.5), tau (0.03), lambda1 (1),
  lambda2_start (0.1), lambda2_end (0), schedule_steps, ldam_margin_scale (4),
  zero_mean_weight (0.01), decay_target ("classification"|"alignment") }.

Outputs under --out-dir:
  joint_final.ckpt  model after the last step
  joint_best.ckpt   best validation macro-F1 snapshot (= final without a split)
  joint_log.csv     step,loss_total,loss_aln,loss_cls,lambda2
  val_curve.csv     epoch,val_macro_f1 (epoch 0 = before training)
  run.json          provenance (see top-level help))");

  cmd->callback([st]() {
    if (st->action_ckpt.empty() && !st->from_scratch)
      throw UsageError(
          "train-joint: stage ordering — action pretraining comes first; pass "
          "--action-checkpoint <action.ckpt> or override with --from-scratch (--no-pretrain)");

    const auto cfg_json = load_json_file(st->config_path, "joint config");
    JointTrainConfig cfg;
    try {
      cfg = joint_train_config_from_json(cfg_json);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    cfg.seed = resolve_seed(st->seed_opt->count() ? std::optional<std::uint64_t>(st->seed)
                                                  : std::nullopt,
                            cfg.seed);
    cfg.from_scratch = st->from_scratch;
    if (st->no_alignment) cfg.use_alignment = false;
    if (st->freeze) cfg.freeze_action_encoder = true;
    apply_cutout_flags(cfg.augment, st->standard_cutout, st->no_cutout);

    const DatasetManifest manifest = load_manifest_checked(st->manifest_path);
    for (const auto& r : manifest.records)
      if (r.kind == ManifestRecord::Kind::interaction) require_image(manifest, r);

    std::optional<LoadedCheckpoint> pre;
    if (!st->action_ckpt.empty()) pre = load_checkpoint_checked(st->action_ckpt);

    RunRecorder run("train-joint", st->out_dir);
    run.input("config", st->config_path);
    run.input("manifest", st->manifest_path);
    if (!st->action_ckpt.empty()) run.input("action_checkpoint", st->action_ckpt);
    run.seed = cfg.seed;
    cfg.log_csv = run.out("joint_log.csv");
    run.config = joint_train_config_to_json(cfg);

    JointTrainResult result =
        pre ? train_joint(manifest, pre->model, cfg) : train_joint(manifest, cfg);
    save_checkpoint(result.model, result.meta, run.out("joint_final.ckpt"));
    save_checkpoint(result.best_model, result.best_meta, run.out("joint_best.ckpt"));
    {
      std::ostringstream curve;
      curve << "epoch,val_macro_f1\n";
      curve.precision(10);
      for (std::size_t i = 0; i < result.val_macro_f1.size(); ++i)
        curve << i << "," << result.val_macro_f1[i] << "\n";
      write_text_file(run.out("val_curve.csv"), curve.str());
    }
    run.extra["metrics"] = result.meta.metrics;
    run.write();
    std::cout << "joint training done: " << result.steps.size() << " steps, best val macro-F1 "
              << result.meta.metrics.at("best_val_macro_f1") << "\n";
  });
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

void register_evaluate(CLI::App& app) {
  struct State {
    std::string ckpt_path;
    std::string manifest_path;
    std::string train_manifest_path;
    std::string out_dir;
    std::string task = "interaction";
    std::string method = "head";
    int k = 5;
  };
  auto st = std::make_shared<State>();
  CLI::App* cmd = app.add_subcommand(
      "evaluate", "Score a checkpoint on a labeled manifest and write metrics + predictions");
  cmd->add_option("--checkpoint", st->ckpt_path, "Model checkpoint (.ckpt)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--manifest", st->manifest_path, "Evaluation manifest (manifest.jsonl)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", st->out_dir, "Output directory (created if absent)")->required();
  cmd->add_option("--task", st->task, "Which records to score")
      ->capture_default_str()
      ->check(CLI::IsMember({"action", "interaction"}));
  cmd->add_option("--method", st->method,
                  "head = classifier softmax; knn = nearest neighbors in embedding space")
      ->capture_default_str()
      ->check(CLI::IsMember({"head", "knn"}));
  cmd->add_option("--train-manifest", st->train_manifest_path,
                  "Reference manifest embedded as the kNN train set (knn only)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--k", st->k, "Neighbor count for --method knn")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->footer(R"(Outputs under --out-dir:
  metrics.json     accuracy, macro/weighted F1, per-class precision/recall/F1,
                   support, and the confusion matrix (rows = truth)
  predictions.csv  sample_id,truth,pred,score_<class>... — softmax scores for
                   --method head, one-hot predicted class for --method knn
  run.json         provenance (see top-level help)
The per-class table is also printed to stdout.)");

  cmd->callback([st]() {
    const bool is_action = st->task == "action";
    const bool use_knn = st->method == "knn";
    if (use_knn && st->train_manifest_path.empty())
      throw UsageError("evaluate: --method knn requires --train-manifest");
    if (!use_knn && !st->train_manifest_path.empty())
      throw UsageError("evaluate: --train-manifest only applies to --method knn");

    const LoadedCheckpoint loaded = load_checkpoint_checked(st->ckpt_path);
    const DatasetManifest manifest = load_manifest_checked(st->manifest_path);
    const auto task_kind =
        is_action ? ManifestRecord::Kind::action : ManifestRecord::Kind::interaction;
    for (const auto& r : manifest.records)
      if (r.kind == task_kind) require_image(manifest, r);
    std::optional<DatasetManifest> train_manifest;
    if (use_knn) {
      train_manifest = load_manifest_checked(st->train_manifest_path);
      for (const auto& r : train_manifest->records)
        if (r.kind == task_kind) require_image(*train_manifest, r);
    }

    RunRecorder run("evaluate", st->out_dir);
    run.input("checkpoint", st->ckpt_path);
    run.input("manifest", st->manifest_path);
    if (use_knn) run.input("train_manifest", st->train_manifest_path);
    run.config = ordered_json{{"task", st->task}, {"method", st->method}};
    if (use_knn) run.config["k"] = st->k;

    const Model& model = loaded.model;
    const auto order = is_action ? action_class_order() : interaction_class_order();
    std::vector<PredictionRow> rows;
    std::vector<std::string> preds, truths;

    if (!use_knn) {
      for (const auto& r : manifest.records) {
        if (r.kind != task_kind) continue;
        Vec scores;
        if (is_action) {
          const ActionSample s = load_action_sample(manifest, r);
          scores = infer_action_scores(model, crop(s.image, s.box));
        } else {
          const InteractionSample s = load_interaction_sample(manifest, r);
          scores = infer_interaction_scores(model, s);
        }
        Eigen::Index best = 0;
        scores.maxCoeff(&best);
        PredictionRow row;
        row.sample_id = r.id();
        row.truth = r.label;
        row.pred = order[static_cast<std::size_t>(best)];
        row.scores.assign(scores.data(), scores.data() + scores.size());
        preds.push_back(row.pred);
        truths.push_back(row.truth);
        rows.push_back(std::move(row));
      }
    } else {
      const auto embed_task = [&](const DatasetManifest& m) {
        std::vector<std::pair<std::string, ActionSample>> acts;
        std::vector<std::pair<std::string, InteractionSample>> ints;
        for (const auto& r : m.records) {
          if (r.kind != task_kind) continue;
          if (is_action)
            acts.emplace_back(r.id(), load_action_sample(m, r));
          else
            ints.emplace_back(r.id(), load_interaction_sample(m, r));
        }
        return export_embeddings(model, acts, ints);
      };
      const EmbeddingDump train = embed_task(*train_manifest);
      const EmbeddingDump test = embed_task(manifest);
      const std::vector<std::uint8_t> idx = knn_classify(train, test, st->k);
      for (std::size_t i = 0; i < test.rows.size(); ++i) {
        PredictionRow row;
        row.sample_id = test.rows[i].id;
        row.truth = order[test.rows[i].label];
        row.pred = order[idx[i]];
        row.scores.assign(order.size(), 0.0);
        row.scores[idx[i]] = 1.0;
        preds.push_back(row.pred);
        truths.push_back(row.truth);
        rows.push_back(std::move(row));
      }
    }
    if (rows.empty())
      throw Error(Error::Code::EmptyBatch,
                  "evaluate: manifest has no '" + st->task + "' records");

    const auto [cm, rep] = confusion_and_metrics(preds, truths, order);
    save_predictions_csv(rows, order, run.out("predictions.csv"));
    write_text_file(run.out("metrics.json"), metrics_report_to_json(rep, cm).dump(2) + "\n");
    run.extra["accuracy"] = rep.accuracy;
    run.extra["macro_f1"] = rep.macro_f1;
    run.write();
    std::cout << metrics_report_to_table(rep);
  });
}

// ---------------------------------------------------------------------------
// reid-match
// ---------------------------------------------------------------------------

void register_reid_match(CLI::App& app) {
  struct State {
    std::string gps_path;
    std::string tracklets_path;
    std::string homography_path;
    std::string correspondences_path;
    std::string out_dir;
    double tolerance = 2.0;
  };
  auto st = std::make_shared<State>();
  CLI::App* cmd = app.add_subcommand(
      "reid-match", "Assign camera tracklets to GPS collar identities on the ground plane");
  cmd->add_option("--gps", st->gps_path, "GPS fixes CSV (cattle_id,t,x_m,y_m)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--tracklets", st->tracklets_path, "Tracklets JSONL")
      ->required()
      ->check(CLI::ExistingFile);
  auto* hom = cmd->add_option("--homography", st->homography_path,
                              "Homography JSON ({\"H\": 3x3}, ground meters -> pixels)")
                 ->check(CLI::ExistingFile);
  cmd->add_option("--correspondences", st->correspondences_path,
                  "Correspondences CSV (x_m,y_m,u_px,v_px) to fit the homography from")
      ->check(CLI::ExistingFile)
      ->excludes(hom);
  cmd->add_option("--out-dir", st->out_dir, "Output directory (created if absent)")->required();
  cmd->add_option("--time-tolerance", st->tolerance,
                  "Seconds a tracklet frame may fall outside a GPS track's time span")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  cmd->footer(R"(Provide the camera geometry as exactly one of --homography (a saved fit) or
--correspondences (ground control points; the homography is fitted here).

Cost of a (track, identity) pair = mean pixel distance between the tracklet's
bottom-center anchors and the time-interpolated projected GPS positions;
optimal assignment on that matrix. Pairs without temporal overlap (beyond
--time-tolerance) stay unmatched.

Outputs under --out-dir:
  matches.json  {"matches":[{"track_id","cattle_id","mean_px_dist"},...],
                 "unmatched_tracks":[...],"unmatched_gps":[...]}
  run.json      provenance (see top-level help))");

  cmd->callback([st]() {
    if (st->homography_path.empty() && st->correspondences_path.empty())
      throw UsageError("reid-match: provide --homography or --correspondences");

    std::vector<GpsTrack> gps;
    std::vector<Tracklet> tracklets;
    Homography H;
    try {
      gps = load_gps_csv(st->gps_path);
      tracklets = load_tracklets_jsonl(st->tracklets_path);
      if (!st->homography_path.empty())
        H = homography_from_json(load_json_file(st->homography_path, "homography"));
      else
        H = fit_homography(load_correspondences_csv(st->correspondences_path));
    } catch (const Error& e) {
      throw UsageError(e.what());
    }

    RunRecorder run("reid-match", st->out_dir);
    run.input("gps", st->gps_path);
    run.input("tracklets", st->tracklets_path);
    if (!st->homography_path.empty()) run.input("homography", st->homography_path);
    if (!st->correspondences_path.empty())
      run.input("correspondences", st->correspondences_path);
    run.config = ordered_json{{"time_tolerance_s", st->tolerance}};

    MatchConfig mc;
    mc.time_tolerance_s = st->tolerance;
    const MatchResult res = match_gps_to_tracklets(gps, tracklets, H, mc);

    ordered_json j;
    j["matches"] = ordered_json::array();
    for (const auto& m : res.matches)
      j["matches"].push_back(ordered_json{{"track_id", m.track_id},
                                          {"cattle_id", m.cattle_id},
                                          {"mean_px_dist", m.mean_px_dist}});
    j["unmatched_tracks"] = res.unmatched_tracks;
    j["unmatched_gps"] = res.unmatched_gps;
    write_text_file(run.out("matches.json"), j.dump(2) + "\n");
    run.extra["n_matched"] = res.matches.size();
    run.write();
    std::cout << "matched " << res.matches.size() << " of " << tracklets.size()
              << " tracklets (" << res.unmatched_tracks.size() << " tracks, "
              << res.unmatched_gps.size() << " identities unmatched)\n";
  });
}

// ---------------------------------------------------------------------------
// occlusion-map
// ---------------------------------------------------------------------------

void register_occlusion_map(CLI::App& app) {
  struct State {
    std::string ckpt_path;
    std::string manifest_path;
    std::string out_dir;
    std::vector<std::string> ids;
    std::string target;
    int patch = 16;
    int stride = 8;
  };
  auto st = std::make_shared<State>();
  CLI::App* cmd = app.add_subcommand(
      "occlusion-map", "Occlusion sensitivity heatmaps: slide a gray patch, record score drops");
  cmd->add_option("--checkpoint", st->ckpt_path, "Model checkpoint (.ckpt)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--manifest", st->manifest_path, "Dataset manifest (manifest.jsonl)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", st->out_dir, "Output directory (created if absent)")->required();
  cmd->add_option("--ids", st->ids, "Comma-separated sample ids (default: every record)")
      ->delimiter(',');
  cmd->add_option("--target", st->target,
                  "Class whose score is probed (default: each record's truth label)");
  cmd->add_option("--patch", st->patch, "Occluder side length in pixels")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--stride", st->stride, "Grid stride in pixels")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->footer(R"(Action records probe the action head on the sample's crop; interaction
records probe the interaction head on the union image (member crops are re-cut
from each occluded union, so occlusion reaches every input branch).

Outputs under --out-dir, per sample:
  <id>_occlusion.png   grayscale heatmap, one pixel per grid cell, bright =
                       larger score drop
  <id>_occlusion.json  target_class, patch_size, stride, baseline_score, the
                       drops grid, and peak_anchor (x,y of the strongest cell)
plus run.json (see top-level help).)");

  cmd->callback([st]() {
    const LoadedCheckpoint loaded = load_checkpoint_checked(st->ckpt_path);
    const DatasetManifest manifest = load_manifest_checked(st->manifest_path);

    std::vector<const ManifestRecord*> selected;
    if (st->ids.empty()) {
      for (const auto& r : manifest.records) selected.push_back(&r);
    } else {
      std::map<std::string, const ManifestRecord*> by_id;
      for (const auto& r : manifest.records) by_id[r.id()] = &r;
      for (const auto& id : st->ids) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) throw UsageError("occlusion-map: unknown sample id '" + id + "'");
        selected.push_back(it->second);
      }
    }
    if (selected.empty()) throw UsageError("occlusion-map: manifest has no records");

    // Resolve each record's probe class up front so a bad --target is a usage
    // error before any model work starts.
    std::vector<std::uint8_t> targets;
    for (const ManifestRecord* r : selected) {
      require_image(manifest, *r);
      const std::string& name = st->target.empty() ? r->label : st->target;
      if (r->kind == ManifestRecord::Kind::action) {
        const auto cls = action_class_from_string(name);
        if (!cls)
          throw UsageError("occlusion-map: '" + name + "' is not an action class (sample '" +
                           r->id() + "')");
        targets.push_back(static_cast<std::uint8_t>(*cls));
      } else {
        const auto cls = interaction_class_from_string(name);
        if (!cls)
          throw UsageError("occlusion-map: '" + name + "' is not an interaction class (sample '" +
                           r->id() + "')");
        targets.push_back(static_cast<std::uint8_t>(*cls));
      }
    }

    RunRecorder run("occlusion-map", st->out_dir);
    run.input("checkpoint", st->ckpt_path);
    run.input("manifest", st->manifest_path);
    run.config = ordered_json{{"patch", st->patch},
                              {"stride", st->stride},
                              {"target", st->target.empty() ? "truth" : st->target},
                              {"n_samples", selected.size()}};

    OcclusionConfig ocfg;
    ocfg.patch_size = st->patch;
    ocfg.stride = st->stride;
    const Model& model = loaded.model;
    for (std::size_t i = 0; i < selected.size(); ++i) {
      const ManifestRecord& r = *selected[i];
      OcclusionMap map;
      if (r.kind == ManifestRecord::Kind::action) {
        const ActionSample s = load_action_sample(manifest, r);
        map = occlusion_map_action(model, crop(s.image, s.box),
                                   static_cast<ActionClass>(targets[i]), ocfg);
      } else {
        const InteractionSample s = load_interaction_sample(manifest, r);
        map = occlusion_map_interaction(model, s, static_cast<InteractionClass>(targets[i]),
                                        ocfg);
      }
      save_occlusion_map(map, run.out(r.id() + "_occlusion.png"),
                         run.out(r.id() + "_occlusion.json"));
    }
    run.write();
    std::cout << "wrote " << selected.size() << " occlusion maps under " << st->out_dir << "\n";
  });
}

// ---------------------------------------------------------------------------
// augment-preview
// ---------------------------------------------------------------------------

void register_augment_preview(CLI::App& app) {
  struct State {
    std::string manifest_path;
    std::string out_dir;
    std::vector<std::string> ids;
    std::uint64_t seed = 0;
    CutoutConfig cutout;
  };
  auto st = std::make_shared<State>();
  CLI::App* cmd = app.add_subcommand(
      "augment-preview",
      "Visualize skeleton-aware cutout: before/after images plus mask and disc geometry");
  cmd->add_option("--manifest", st->manifest_path, "Dataset manifest (manifest.jsonl)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", st->out_dir, "Output directory (created if absent)")->required();
  cmd->add_option("--ids", st->ids, "Comma-separated sample ids (default: every record)")
      ->delimiter(',');
  cmd->add_option("--seed", st->seed, "Base seed; each sample draws from seed ^ hash(id)")
      ->capture_default_str();
  cmd->add_option("--n-masks", st->cutout.n_masks, "Square masks per image")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--mask-size-frac", st->cutout.mask_size_frac,
                  "Mask side as a fraction of min(H, W)")
      ->capture_default_str();
  cmd->add_option("--protection-radius-frac", st->cutout.protection_radius_frac,
                  "Protected disc radius as a fraction of min(H, W)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--attempts", st->cutout.max_resample_attempts,
                  "Resamples before a conflicting mask is skipped")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  cmd->footer(R"(Action records use the sample crop and protect head + front legs; interaction
records use the union image and protect head, torso center, and buttocks of
both members. Masks that cannot avoid every protected disc are skipped.

Outputs under --out-dir, per sample:
  <id>_before.png   the input crop
  <id>_after.png    the same crop with masks applied
  <id>_preview.json id, seed, masks [{x0,y0,side}], protected discs
                    [{x,y,radius}], and the skipped-mask count
plus run.json (see top-level help).)");

  cmd->callback([st]() {
    const DatasetManifest manifest = load_manifest_checked(st->manifest_path);
    std::vector<const ManifestRecord*> selected;
    if (st->ids.empty()) {
      for (const auto& r : manifest.records) selected.push_back(&r);
    } else {
      std::map<std::string, const ManifestRecord*> by_id;
      for (const auto& r : manifest.records) by_id[r.id()] = &r;
      for (const auto& id : st->ids) {
        const auto it = by_id.find(id);
        if (it == by_id.end())
          throw UsageError("augment-preview: unknown sample id '" + id + "'");
        selected.push_back(it->second);
      }
    }
    if (selected.empty()) throw UsageError("augment-preview: manifest has no records");
    for (const ManifestRecord* r : selected) require_image(manifest, *r);
    try {
      st->cutout.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }

    RunRecorder run("augment-preview", st->out_dir);
    run.input("manifest", st->manifest_path);
    run.seed = st->seed;
    run.config = ordered_json{{"n_masks", st->cutout.n_masks},
                              {"mask_size_frac", st->cutout.mask_size_frac},
                              {"protection_radius_frac", st->cutout.protection_radius_frac},
                              {"max_resample_attempts", st->cutout.max_resample_attempts},
                              {"n_samples", selected.size()}};

    for (const ManifestRecord* rec : selected) {
      const std::string id = rec->id();
      CutoutConfig cc = st->cutout;
      cc.seed = st->seed ^ fnv1a_string(id);  // stable per id, independent of selection order

      Image before;
      CutoutResult res;
      if (rec->kind == ManifestRecord::Kind::action) {
        const ActionSample s = materialize_action_crop(load_action_sample(manifest, *rec));
        before = s.image;
        res = skeleton_aware_cutout_traced(s.image, std::span<const Skeleton>(&s.skeleton, 1),
                                           ProtectedRegionSpec::action_default(), cc);
      } else {
        const InteractionSample s = load_interaction_sample(manifest, *rec);
        before = s.union_image;
        const std::vector<Skeleton> skels{s.member_a.skeleton, s.member_b.skeleton};
        res = skeleton_aware_cutout_traced(s.union_image, skels,
                                           ProtectedRegionSpec::interaction_default(), cc);
      }
      write_png(before, run.out(id + "_before.png").string());
      write_png(res.image, run.out(id + "_after.png").string());

      ordered_json j;
      j["id"] = id;
      j["seed"] = cc.seed;
      j["masks"] = ordered_json::array();
      for (const auto& m : res.masks)
        j["masks"].push_back(ordered_json{{"x0", m.x0}, {"y0", m.y0}, {"side", m.side}});
      j["protected_discs"] = ordered_json::array();
      for (const auto& d : res.discs)
        j["protected_discs"].push_back(
            ordered_json{{"x", d.x}, {"y", d.y}, {"radius", d.radius}});
      j["skipped"] = res.skipped;
      write_text_file(run.out(id + "_preview.json"), j.dump(2) + "\n");
    }
    run.write();
    std::cout << "wrote " << selected.size() << " augmentation previews under " << st->out_dir
              << "\n";
  });
}

// ---------------------------------------------------------------------------
// embed-export
// ---------------------------------------------------------------------------

void register_embed_export(CLI::App& app) {
  struct State {
    std::string ckpt_path;
    std::string manifest_path;
    std::string out_dir;
    std::string include = "both";
  };
  auto st = std::make_shared<State>();
  CLI::App* cmd = app.add_subcommand(
      "embed-export", "Embed every labeled sample and write a binary embedding dump");
  cmd->add_option("--checkpoint", st->ckpt_path, "Model checkpoint (.ckpt)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--manifest", st->manifest_path, "Dataset manifest (manifest.jsonl)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", st->out_dir, "Output directory (created if absent)")->required();
  cmd->add_option("--include", st->include, "Which record kinds to embed")
      ->capture_default_str()
      ->check(CLI::IsMember({"action", "interaction", "both"}));
  cmd->footer(R"(Action records go through the action encoder (on the sample crop);
interaction records go through the interaction encoder (on the union image).

Outputs under --out-dir:
  embeddings.bin  binary dump: magic "CAEM", version, row count, dimension,
                  then per row id, kind (0 action / 1 interaction), class
                  index, float32 vector; rows sorted by id
  run.json        provenance (see top-level help))");

  cmd->callback([st]() {
    const LoadedCheckpoint loaded = load_checkpoint_checked(st->ckpt_path);
    const DatasetManifest manifest = load_manifest_checked(st->manifest_path);
    const bool want_action = st->include != "interaction";
    const bool want_interaction = st->include != "action";
    for (const auto& r : manifest.records) {
      const bool is_action = r.kind == ManifestRecord::Kind::action;
      if ((is_action && want_action) || (!is_action && want_interaction))
        require_image(manifest, r);
    }

    RunRecorder run("embed-export", st->out_dir);
    run.input("checkpoint", st->ckpt_path);
    run.input("manifest", st->manifest_path);
    run.config = ordered_json{{"include", st->include}};

    std::vector<std::pair<std::string, ActionSample>> acts;
    std::vector<std::pair<std::string, InteractionSample>> ints;
    for (const auto& r : manifest.records) {
      if (r.kind == ManifestRecord::Kind::action && want_action)
        acts.emplace_back(r.id(), load_action_sample(manifest, r));
      else if (r.kind == ManifestRecord::Kind::interaction && want_interaction)
        ints.emplace_back(r.id(), load_interaction_sample(manifest, r));
    }
    const EmbeddingDump dump = export_embeddings(loaded.model, acts, ints);
    save_embedding_dump(dump, run.out("embeddings.bin"));
    run.extra["n_rows"] = dump.rows.size();
    run.extra["dim"] = dump.dim;
    run.write();
    std::cout << "wrote " << dump.rows.size() << " embeddings (dim " << dump.dim << ") to "
              << (fs::path(st->out_dir) / "embeddings.bin").string() << "\n";
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "cattleact — synthetic pasture data, two-stage behavior-recognition training,\n"
      "evaluation, and GPS-to-camera re-identification in one reproducible binary."};
  app.set_version_flag("--version", std::string(kLibraryVersion));
  app.require_subcommand(1);
  app.footer(R"(Exit codes:
  0  success (or help/version)
  1  runtime failure (e.g. non-finite training loss, I/O failure mid-run)
  2  usage or config error (bad flags, malformed or missing inputs,
     stage-ordering violations)

Seed precedence: the CATTLEACT_SEED environment variable beats the --seed
flag, which beats the seed in a config file. Commands never modify their
inputs, and identical inputs + seed reproduce identical outputs, except for
the timestamp inside run.json.

Every command creates --out-dir if needed and writes run.json there:
  {"command", "library_version", "seed", "config" (effective, after
   overrides), "inputs" (FNV-1a checksums), "outputs", command summary
   fields, "timestamp_utc"}

Shared file formats:
  manifest.jsonl   first line {"format":"cattleact-manifest",...}; then one
                   JSON record per line — action records carry image path,
                   bounding box, skeleton keypoints, and label; interaction
                   records carry the union image, label, and two members
                   (box/skeleton/optional action label, union-image pixels)
  *.ckpt           binary checkpoint, magic "CACKPT01": JSON header (encoder
                   config, step, metrics) + float32 parameter tensors
  gps.csv          cattle_id,t,x_m,y_m — ground-plane fixes sorted by time
  tracklets.jsonl  {"track_id","frames":[[t,x0,y0,x1,y1],...]} per line
  correspondences.csv  x_m,y_m,u_px,v_px ground-control points
  homography.json  {"H": 3x3 row-major} ground meters -> image pixels
  embeddings.bin   binary dump, magic "CAEM" (see embed-export --help)

Run `cattleact <command> --help` for each command's flags, config keys, and
output files.)");

  register_synth_generate(app);
  register_pretrain(app);
  register_train_joint(app);
  register_evaluate(app);
  register_reid_match(app);
  register_occlusion_map(app);
  register_augment_preview(app);
  register_embed_export(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const cattleact::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
