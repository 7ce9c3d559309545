#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "cattleact/image.hpp"
#include "cattleact/linalg.hpp"
#include "cattleact/nn.hpp"
#include "cattleact/rng.hpp"
#include "cattleact/types.hpp"

namespace cattleact {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct EncoderConfig {
  enum class ActionBackbone { patch_attention, conv };
  enum class InteractionBackbone { conv_large_kernel };

  int input_size = 224;
  int embedding_dim = 256;  // D
  ActionBackbone action_backbone = ActionBackbone::patch_attention;
  InteractionBackbone interaction_backbone = InteractionBackbone::conv_large_kernel;
  int n_attention_heads = 4;
  std::uint64_t seed = 0;

  // backbone sizing
  int patch_size = 16;      // patch-attention action backbone
  int token_width = 64;     // attention width inside the action backbone
  int conv_kernel = 8;      // conv action backbone
  int conv_stride = 4;
  int int_kernel = 32;      // first-layer kernel of the interaction encoder
  int int_channels = 16;
  int hidden_width = 64;

  void validate() const {
    if (input_size < 8) throw Error(Error::Code::InvalidSpec, "EncoderConfig: input_size too small");
    if (embedding_dim <= 0) throw Error(Error::Code::InvalidSpec, "EncoderConfig: embedding_dim must be positive");
    if (n_attention_heads <= 0)
      throw Error(Error::Code::InvalidSpec, "EncoderConfig: n_attention_heads must be positive");
    if (embedding_dim % n_attention_heads != 0)
      throw Error(Error::Code::InvalidSpec,
                  "EncoderConfig: embedding_dim must be divisible by n_attention_heads");
    if (action_backbone == ActionBackbone::patch_attention) {
      if (patch_size <= 0 || input_size % patch_size != 0)
        throw Error(Error::Code::InvalidSpec, "EncoderConfig: patch_size must divide input_size");
      if (token_width <= 0 || token_width % n_attention_heads != 0)
        throw Error(Error::Code::InvalidSpec,
                    "EncoderConfig: token_width must be divisible by n_attention_heads");
    } else {
      if (conv_kernel <= 0 || conv_kernel > input_size || conv_stride <= 0)
        throw Error(Error::Code::InvalidSpec, "EncoderConfig: bad conv kernel/stride");
    }
    if (int_kernel <= 0 || int_kernel > input_size)
      throw Error(Error::Code::InvalidSpec, "EncoderConfig: int_kernel must fit in input_size");
    if (int_channels <= 0 || hidden_width <= 0)
      throw Error(Error::Code::InvalidSpec, "EncoderConfig: channels/hidden must be positive");
  }

  int interaction_stride() const { return std::max(1, int_kernel / 2); }
};

inline std::string to_string(EncoderConfig::ActionBackbone b) {
  return b == EncoderConfig::ActionBackbone::patch_attention ? "patch_attention" : "conv";
}

inline nlohmann::ordered_json encoder_config_to_json(const EncoderConfig& c) {
  return nlohmann::ordered_json{
      {"input_size", c.input_size},
      {"embedding_dim", c.embedding_dim},
      {"action_backbone", to_string(c.action_backbone)},
      {"interaction_backbone", "conv_large_kernel"},
      {"n_attention_heads", c.n_attention_heads},
      {"seed", c.seed},
      {"patch_size", c.patch_size},
      {"token_width", c.token_width},
      {"conv_kernel", c.conv_kernel},
      {"conv_stride", c.conv_stride},
      {"int_kernel", c.int_kernel},
      {"int_channels", c.int_channels},
      {"hidden_width", c.hidden_width},
  };
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  try {
    c.input_size = j.at("input_size").get<int>();
    c.embedding_dim = j.at("embedding_dim").get<int>();
    const std::string ab = j.at("action_backbone").get<std::string>();
    if (ab == "patch_attention")
      c.action_backbone = EncoderConfig::ActionBackbone::patch_attention;
    else if (ab == "conv")
      c.action_backbone = EncoderConfig::ActionBackbone::conv;
    else
      throw Error(Error::Code::SchemaViolation, "unknown action_backbone: " + ab);
    const std::string ib = j.at("interaction_backbone").get<std::string>();
    if (ib != "conv_large_kernel")
      throw Error(Error::Code::SchemaViolation, "unknown interaction_backbone: " + ib);
    c.n_attention_heads = j.at("n_attention_heads").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.patch_size = j.at("patch_size").get<int>();
    c.token_width = j.at("token_width").get<int>();
    c.conv_kernel = j.at("conv_kernel").get<int>();
    c.conv_stride = j.at("conv_stride").get<int>();
    c.int_kernel = j.at("int_kernel").get<int>();
    c.int_channels = j.at("int_channels").get<int>();
    c.hidden_width = j.at("hidden_width").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Error::Code::SchemaViolation, std::string("encoder config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Per-channel standardization applied before either encoder.
struct NormStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stdev{1.0, 1.0, 1.0};

  void validate() const {
    for (double s : stdev)
      if (!(s > 0.0)) throw Error(Error::Code::InvalidSpec, "NormStats: stdev must be positive");
  }
};

// ---------------------------------------------------------------------------
// Action encoder, patch-attention backbone
// ---------------------------------------------------------------------------

namespace detail {

struct VitBackbone {
  int image_size, patch, n_tokens, width;
  nn::Linear patch_embed;
  nn::Param pos;
  nn::LayerNorm ln1, ln2;
  nn::MultiHeadSelfAttention mha;
  nn::Linear mlp1, mlp2;
  nn::Linear out;

  VitBackbone(const std::string& name, const EncoderConfig& cfg)
      : image_size(cfg.input_size),
        patch(cfg.patch_size),
        n_tokens((cfg.input_size / cfg.patch_size) * (cfg.input_size / cfg.patch_size)),
        width(cfg.token_width),
        patch_embed(name + ".patch_embed", cfg.token_width,
                    static_cast<Eigen::Index>(3) * cfg.patch_size * cfg.patch_size),
        pos(name + ".pos", n_tokens, cfg.token_width),
        ln1(name + ".ln1", cfg.token_width),
        ln2(name + ".ln2", cfg.token_width),
        mha(name + ".mha", cfg.token_width, cfg.n_attention_heads),
        mlp1(name + ".mlp1", 2 * cfg.token_width, cfg.token_width),
        mlp2(name + ".mlp2", cfg.token_width, 2 * cfg.token_width),
        out(name + ".out", cfg.embedding_dim, cfg.token_width) {}

  void init(Rng& rng) {
    patch_embed.init(rng);
    for (Eigen::Index j = 0; j < pos.value.cols(); ++j)
      for (Eigen::Index i = 0; i < pos.value.rows(); ++i) pos.value(i, j) = rng.normal(0.0, 0.02);
    mha.init(rng);
    mlp1.init(rng);
    mlp2.init(rng);
    out.init(rng);
  }

  void collect(nn::ParamRefs& p) {
    patch_embed.collect(p);
    p.push_back(&pos);
    ln1.collect(p);
    mha.collect(p);
    ln2.collect(p);
    mlp1.collect(p);
    mlp2.collect(p);
    out.collect(p);
  }

  struct Trace {
    Mat tokens, x1, x2, ln2_out, mlp_pre, mlp_hidden;
    nn::LayerNorm::Cache c_ln1, c_ln2;
    nn::MultiHeadSelfAttention::Cache c_mha;
    Vec pooled;
  };

  Vec forward(const Vec& x, Trace* t) const {
    Mat tokens = nn::patchify(x, image_size, patch);
    Mat x1 = patch_embed.forward_rows(tokens) + pos.value;
    nn::LayerNorm::Cache c_ln1;
    Mat l1 = ln1.forward(x1, t ? &c_ln1 : nullptr);
    nn::MultiHeadSelfAttention::Cache c_mha;
    Mat x2 = x1 + mha.forward(l1, t ? &c_mha : nullptr);
    nn::LayerNorm::Cache c_ln2;
    Mat l2 = ln2.forward(x2, t ? &c_ln2 : nullptr);
    Mat pre = mlp1.forward_rows(l2);
    Mat hidden = nn::relu(pre);
    Mat x3 = x2 + mlp2.forward_rows(hidden);
    Vec pooled = x3.colwise().mean().transpose();
    Vec z = out.forward(pooled);
    if (t) {
      t->tokens = std::move(tokens);
      t->x1 = std::move(x1);
      t->x2 = std::move(x2);
      t->ln2_out = std::move(l2);
      t->mlp_pre = std::move(pre);
      t->mlp_hidden = std::move(hidden);
      t->c_ln1 = std::move(c_ln1);
      t->c_ln2 = std::move(c_ln2);
      t->c_mha = std::move(c_mha);
      t->pooled = std::move(pooled);
    }
    return z;
  }

  void backward(const Trace& t, const Vec& gz) {
    const Vec g_pooled = out.backward(t.pooled, gz);
    const double inv_n = 1.0 / static_cast<double>(n_tokens);
    Mat g_x3 = Mat::Zero(n_tokens, width);
    g_x3.rowwise() += (inv_n * g_pooled).transpose();
    Mat g_hidden = mlp2.backward_rows(t.mlp_hidden, g_x3);
    Mat g_pre = nn::relu_backward(t.mlp_pre, g_hidden);
    Mat g_l2 = mlp1.backward_rows(t.ln2_out, g_pre);
    Mat g_x2 = g_x3 + ln2.backward(t.c_ln2, g_l2);
    Mat g_l1 = mha.backward(t.c_mha, g_x2);
    Mat g_x1 = g_x2 + ln1.backward(t.c_ln1, g_l1);
    pos.grad += g_x1;
    patch_embed.backward_rows(t.tokens, g_x1, false);
  }
};

/// Conv -> ReLU -> Linear -> ReLU -> Linear stack, shared by the conv action
/// backbone and the large-kernel interaction encoder.
struct ConvBackbone {
  int image_size;
  nn::Conv2d conv;
  nn::Linear fc, out;

  ConvBackbone(const std::string& name, int input_size, int kernel, int stride, int channels,
               int hidden, int embedding_dim)
      : image_size(input_size),
        conv(name + ".conv", 3, channels, kernel, stride),
        fc(name + ".fc", hidden,
           static_cast<Eigen::Index>(channels) * nn::Conv2d::out_size(input_size, kernel, stride) *
               nn::Conv2d::out_size(input_size, kernel, stride)),
        out(name + ".out", embedding_dim, hidden) {}

  void init(Rng& rng) {
    conv.init(rng);
    fc.init(rng);
    out.init(rng);
  }

  void collect(nn::ParamRefs& p) {
    conv.collect(p);
    fc.collect(p);
    out.collect(p);
  }

  struct Trace {
    Vec input, conv_pre, conv_act, fc_pre, fc_act;
  };

  Vec forward(const Vec& x, Trace* t) const {
    Vec pre = conv.forward(x, image_size);
    Vec act = nn::relu(pre);
    Vec fpre = fc.forward(act);
    Vec fact = nn::relu(fpre);
    Vec z = out.forward(fact);
    if (t) {
      t->input = x;
      t->conv_pre = std::move(pre);
      t->conv_act = std::move(act);
      t->fc_pre = std::move(fpre);
      t->fc_act = std::move(fact);
    }
    return z;
  }

  void backward(const Trace& t, const Vec& gz) {
    const Vec g_fact = out.backward(t.fc_act, gz);
    const Vec g_fpre = nn::relu_backward(t.fc_pre, g_fact);
    const Vec g_act = fc.backward(t.conv_act, g_fpre);
    const Vec g_pre = nn::relu_backward(t.conv_pre, g_act);
    conv.backward(t.input, image_size, g_pre);
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Fused representation of one interaction: input rows, attended rows, and the
/// flattened vector fed to the interaction head.
struct FusionState {
  Mat z_in;    // 3 x D, rows: interaction, member_a, member_b
  Mat z_out;   // 3 x D
  Vec z_flat;  // 3D, row-major flatten of z_out
};

struct Logits {
  Vec values;
  std::vector<std::string> class_order;
};

class Model {
public:
  /// Traces carry the activations needed for one backward pass.
  struct ActTrace {
    std::optional<detail::VitBackbone::Trace> vit;
    std::optional<detail::ConvBackbone::Trace> conv;
  };
  struct IntTrace {
    detail::ConvBackbone::Trace conv;
  };
  struct FuseTrace {
    nn::MultiHeadSelfAttention::Cache mha;
  };

  explicit Model(const EncoderConfig& cfg)
      : cfg_(cfg),
        fusion_("fusion", cfg.embedding_dim, cfg.n_attention_heads),
        head_int_("head_int", static_cast<Eigen::Index>(kNumInteractionClasses),
                  static_cast<Eigen::Index>(3) * cfg.embedding_dim),
        head_act_("head_act", static_cast<Eigen::Index>(kNumActionClasses), cfg.embedding_dim) {
    cfg_.validate();
    if (cfg_.action_backbone == EncoderConfig::ActionBackbone::patch_attention)
      act_vit_.emplace("f_act", cfg_);
    else
      act_conv_.emplace("f_act", cfg_.input_size, cfg_.conv_kernel, cfg_.conv_stride,
                        cfg_.int_channels, cfg_.hidden_width, cfg_.embedding_dim);
    int_enc_.emplace("f_int", cfg_.input_size, cfg_.int_kernel, cfg_.interaction_stride(),
                     cfg_.int_channels, cfg_.hidden_width, cfg_.embedding_dim);
    Rng rng(cfg_.seed);
    if (act_vit_) act_vit_->init(rng);
    if (act_conv_) act_conv_->init(rng);
    int_enc_->init(rng);
    fusion_.init(rng);
    head_int_.init(rng);
    head_act_.init(rng);
  }

  const EncoderConfig& config() const { return cfg_; }
  NormStats norm;

  // -- preprocessing --------------------------------------------------------

  /// Resize to the model input size and emit a standardized channel-planar vector.
  Vec preprocess(const Image& img) const {
    norm.validate();
    const Image& sized = (img.width == cfg_.input_size && img.height == cfg_.input_size)
                             ? img
                             : resized_(img);
    const int s = cfg_.input_size;
    Vec x(static_cast<Eigen::Index>(3) * s * s);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < s; ++y)
        for (int xx = 0; xx < s; ++xx)
          x[static_cast<Eigen::Index>(c) * s * s + y * s + xx] =
              (static_cast<double>(sized.at(xx, y, c)) - norm.mean[static_cast<std::size_t>(c)]) /
              norm.stdev[static_cast<std::size_t>(c)];
    return x;
  }

  // -- inference ------------------------------------------------------------

  Embedding encode_action(const Image& img) const { return encode_action_input(preprocess(img)); }

  Embedding encode_interaction(const Image& img) const {
    return encode_interaction_input(preprocess(img));
  }

  Embedding encode_action_input(const Vec& x, ActTrace* trace = nullptr) const {
    check_input_(x);
    if (act_vit_) {
      if (trace) {
        trace->vit.emplace();
        return act_vit_->forward(x, &*trace->vit);
      }
      return act_vit_->forward(x, nullptr);
    }
    if (trace) {
      trace->conv.emplace();
      return act_conv_->forward(x, &*trace->conv);
    }
    return act_conv_->forward(x, nullptr);
  }

  Embedding encode_interaction_input(const Vec& x, IntTrace* trace = nullptr) const {
    check_input_(x);
    return int_enc_->forward(x, trace ? &trace->conv : nullptr);
  }

  FusionState fuse(const Embedding& z_int, const Embedding& z_a, const Embedding& z_b,
                   FuseTrace* trace = nullptr) const {
    const Eigen::Index d = cfg_.embedding_dim;
    if (z_int.size() != d || z_a.size() != d || z_b.size() != d)
      throw Error(Error::Code::DimensionMismatch, "fuse: embeddings must match the model width");
    FusionState st;
    st.z_in.resize(3, d);
    st.z_in.row(0) = z_int.transpose();
    st.z_in.row(1) = z_a.transpose();
    st.z_in.row(2) = z_b.transpose();
    st.z_out = fusion_.forward(st.z_in, trace ? &trace->mha : nullptr);
    st.z_flat.resize(3 * d);
    for (Eigen::Index r = 0; r < 3; ++r) st.z_flat.segment(r * d, d) = st.z_out.row(r).transpose();
    return st;
  }

  Logits classify_interaction(const FusionState& st) const {
    if (st.z_flat.size() != 3 * cfg_.embedding_dim)
      throw Error(Error::Code::DimensionMismatch, "classify_interaction: bad fused width");
    Logits lg;
    lg.values = head_int_.forward(st.z_flat);
    lg.class_order = interaction_class_order();
    return lg;
  }

  Logits classify_action(const Embedding& z) const {
    if (z.size() != cfg_.embedding_dim)
      throw Error(Error::Code::DimensionMismatch, "classify_action: bad embedding width");
    Logits lg;
    lg.values = head_act_.forward(z);
    lg.class_order = action_class_order();
    return lg;
  }

  // -- training-side backward ----------------------------------------------

  void encode_action_backward(const ActTrace& t, const Vec& gz) {
    if (act_vit_ && t.vit)
      act_vit_->backward(*t.vit, gz);
    else if (act_conv_ && t.conv)
      act_conv_->backward(*t.conv, gz);
    else
      throw Error(Error::Code::InvalidArgument, "encode_action_backward: trace/backbone mismatch");
  }

  void encode_interaction_backward(const IntTrace& t, const Vec& gz) {
    int_enc_->backward(t.conv, gz);
  }

  struct FuseInputGrads {
    Vec g_int, g_a, g_b;
  };

  /// g_flat is the gradient wrt z_flat; returns grads wrt the three inputs.
  FuseInputGrads fuse_backward(const FuseTrace& t, const Vec& g_flat) {
    const Eigen::Index d = cfg_.embedding_dim;
    if (g_flat.size() != 3 * d)
      throw Error(Error::Code::DimensionMismatch, "fuse_backward: bad gradient width");
    Mat g_out(3, d);
    for (Eigen::Index r = 0; r < 3; ++r) g_out.row(r) = g_flat.segment(r * d, d).transpose();
    Mat g_in = fusion_.backward(t.mha, g_out);
    return {g_in.row(0).transpose(), g_in.row(1).transpose(), g_in.row(2).transpose()};
  }

  /// Backward through the interaction head; returns grad wrt z_flat.
  Vec head_int_backward(const FusionState& st, const Vec& g_logits) {
    return head_int_.backward(st.z_flat, g_logits);
  }

  /// Backward through the action head; returns grad wrt the embedding.
  Vec head_act_backward(const Embedding& z, const Vec& g_logits) {
    return head_act_.backward(z, g_logits);
  }

  // -- parameter registry ----------------------------------------------------

  nn::ParamRefs params_action_encoder() {
    nn::ParamRefs p;
    if (act_vit_) act_vit_->collect(p);
    if (act_conv_) act_conv_->collect(p);
    return p;
  }

  nn::ParamRefs params_interaction_side() {
    nn::ParamRefs p;
    int_enc_->collect(p);
    fusion_.collect(p);
    head_int_.collect(p);
    head_act_.collect(p);
    return p;
  }

  nn::ParamRefs params(bool include_action_encoder = true) {
    nn::ParamRefs p;
    if (include_action_encoder) {
      auto a = params_action_encoder();
      p.insert(p.end(), a.begin(), a.end());
    }
    auto rest = params_interaction_side();
    p.insert(p.end(), rest.begin(), rest.end());
    return p;
  }

private:
  Image resized_(const Image& img) const { return resize_bilinear(img, cfg_.input_size, cfg_.input_size); }

  void check_input_(const Vec& x) const {
    const Eigen::Index want = static_cast<Eigen::Index>(3) * cfg_.input_size * cfg_.input_size;
    if (x.size() != want)
      throw Error(Error::Code::DimensionMismatch, "encoder input has wrong size");
  }

  EncoderConfig cfg_;
  std::optional<detail::VitBackbone> act_vit_;
  std::optional<detail::ConvBackbone> act_conv_;
  std::optional<detail::ConvBackbone> int_enc_;
  nn::MultiHeadSelfAttention fusion_;
  nn::Linear head_int_, head_act_;
};

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'C', 'K', 'P', 'T', '0', '1'};

struct CheckpointMeta {
  std::int64_t step = 0;
  std::map<std::string, double> metrics;
};

/// Snaps parameters to float32 in place, so the in-memory model matches what a
/// reload of the file produces bit for bit, then writes the checkpoint.
inline void save_checkpoint(Model& model, const CheckpointMeta& meta,
                            const std::filesystem::path& path) {
  auto params = model.params();
  for (auto* p : params)
    p->value = p->value.cast<float>().cast<double>();

  nlohmann::ordered_json header;
  header["format"] = "cattleact-checkpoint";
  header["version"] = 1;
  header["config"] = encoder_config_to_json(model.config());
  header["norm"] = {{"mean", model.norm.mean}, {"stdev", model.norm.stdev}};
  header["action_classes"] = action_class_order();
  header["interaction_classes"] = interaction_class_order();
  header["step"] = meta.step;
  header["metrics"] = meta.metrics;
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  for (const auto* p : params)
    tensors.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  header["tensors"] = std::move(tensors);
  const std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Error::Code::IoFailure, "cannot open checkpoint for writing: " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t hlen = htext.size();
  std::array<unsigned char, 8> lenb{};
  for (int i = 0; i < 8; ++i) lenb[static_cast<std::size_t>(i)] = static_cast<unsigned char>((hlen >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(lenb.data()), 8);
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  std::vector<char> buf;
  for (const auto* p : params) {
    buf.resize(static_cast<std::size_t>(p->value.size()) * 4);
    std::size_t off = 0;
    for (Eigen::Index i = 0; i < p->value.rows(); ++i)
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
        const float f = static_cast<float>(p->value(i, j));
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        buf[off++] = static_cast<char>(u & 0xff);
        buf[off++] = static_cast<char>((u >> 8) & 0xff);
        buf[off++] = static_cast<char>((u >> 16) & 0xff);
        buf[off++] = static_cast<char>((u >> 24) & 0xff);
      }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw Error(Error::Code::IoFailure, "failed writing checkpoint: " + path.string());
}

struct LoadedCheckpoint {
  Model model;
  CheckpointMeta meta;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Error::Code::MissingFile, "checkpoint not found: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw Error(Error::Code::CheckpointMismatch, "bad checkpoint magic: " + path.string());
  std::array<unsigned char, 8> lenb{};
  in.read(reinterpret_cast<char*>(lenb.data()), 8);
  if (!in) throw Error(Error::Code::CheckpointMismatch, "truncated checkpoint header");
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i) hlen |= static_cast<std::uint64_t>(lenb[static_cast<std::size_t>(i)]) << (8 * i);
  if (hlen > (1u << 26)) throw Error(Error::Code::CheckpointMismatch, "unreasonable checkpoint header size");
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw Error(Error::Code::CheckpointMismatch, "truncated checkpoint header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Error::Code::CheckpointMismatch, std::string("checkpoint header parse: ") + e.what());
  }
  if (header.value("format", "") != "cattleact-checkpoint" || header.value("version", 0) != 1)
    throw Error(Error::Code::CheckpointMismatch, "unsupported checkpoint format/version");

  const EncoderConfig cfg = encoder_config_from_json(header.at("config"));
  LoadedCheckpoint lc{Model(cfg), {}};
  try {
    lc.model.norm.mean = header.at("norm").at("mean").get<std::array<double, 3>>();
    lc.model.norm.stdev = header.at("norm").at("stdev").get<std::array<double, 3>>();
    lc.meta.step = header.at("step").get<std::int64_t>();
    lc.meta.metrics = header.at("metrics").get<std::map<std::string, double>>();
    const auto act = header.at("action_classes").get<std::vector<std::string>>();
    const auto inter = header.at("interaction_classes").get<std::vector<std::string>>();
    if (act != action_class_order() || inter != interaction_class_order())
      throw Error(Error::Code::CheckpointMismatch, "checkpoint class order differs");
  } catch (const nlohmann::json::exception& e) {
    throw Error(Error::Code::CheckpointMismatch, std::string("checkpoint header: ") + e.what());
  }
  lc.model.norm.validate();

  auto params = lc.model.params();
  const auto& tensors = header.at("tensors");
  if (tensors.size() != params.size())
    throw Error(Error::Code::CheckpointMismatch, "checkpoint tensor count differs from model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& tj = tensors[i];
    if (tj.at("name").get<std::string>() != params[i]->name ||
        tj.at("rows").get<Eigen::Index>() != params[i]->value.rows() ||
        tj.at("cols").get<Eigen::Index>() != params[i]->value.cols())
      throw Error(Error::Code::CheckpointMismatch,
                  "checkpoint tensor mismatch at " + params[i]->name);
  }
  std::vector<char> buf;
  for (auto* p : params) {
    buf.resize(static_cast<std::size_t>(p->value.size()) * 4);
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!in) throw Error(Error::Code::CheckpointMismatch, "truncated checkpoint payload");
    std::size_t off = 0;
    for (Eigen::Index i = 0; i < p->value.rows(); ++i)
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
        std::uint32_t u = static_cast<std::uint8_t>(buf[off]) |
                          (static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[off + 1])) << 8) |
                          (static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[off + 2])) << 16) |
                          (static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[off + 3])) << 24);
        off += 4;
        float f;
        std::memcpy(&f, &u, 4);
        p->value(i, j) = static_cast<double>(f);
      }
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw Error(Error::Code::CheckpointMismatch, "trailing bytes in checkpoint");
  return lc;
}

}  // namespace cattleact
