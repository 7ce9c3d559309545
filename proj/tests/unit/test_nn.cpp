#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>

#include "cattleact/encoders.hpp"
#include "cattleact/nn.hpp"
#include "cattleact/losses.hpp"
#include "cattleact/rng.hpp"

using namespace cattleact;

namespace {

Vec random_vec(Rng& rng, Eigen::Index n, double scale = 1.0) {
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal(0.0, scale);
  return v;
}

Mat random_mat(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = rng.normal(0.0, scale);
  return m;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0e-10, std::abs(a), std::abs(b)});
}

/// FD check of a parameter gradient: perturb sampled entries of each tensor.
void check_param_grads(const std::function<double()>& loss_fn, const nn::ParamRefs& params,
                       Rng& rng, double h = 1e-5, double tol = 1e-4, int probes_per_tensor = 3) {
  for (auto* p : params) {
    for (int k = 0; k < probes_per_tensor; ++k) {
      const Eigen::Index i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(p->value.rows())));
      const Eigen::Index j = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(p->value.cols())));
      const double keep = p->value(i, j);
      p->value(i, j) = keep + h;
      const double up = loss_fn();
      p->value(i, j) = keep - h;
      const double dn = loss_fn();
      p->value(i, j) = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double an = p->grad(i, j);
      INFO(p->name << "(" << i << "," << j << "): analytic " << an << " fd " << fd);
      CHECK(std::abs(an - fd) <= tol * std::max({1.0, std::abs(an), std::abs(fd)}));
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Individual layers
// ---------------------------------------------------------------------------

TEST_CASE("linear forward and backward") {
  nn::Linear lin("lin", 2, 3);
  lin.W.value << 1, 2, 3, 4, 5, 6;
  lin.b.value << 0.5, -0.5;
  Vec x(3);
  x << 1, 0, -1;
  const Vec y = lin.forward(x);
  CHECK(y[0] == Catch::Approx(1 - 3 + 0.5));
  CHECK(y[1] == Catch::Approx(4 - 6 - 0.5));

  Vec gy(2);
  gy << 1, -1;
  const Vec gx = lin.backward(x, gy);
  CHECK(gx[0] == Catch::Approx(1 * 1 + 4 * -1));
  CHECK(gx[2] == Catch::Approx(3 * 1 + 6 * -1));
  CHECK(lin.W.grad(0, 0) == Catch::Approx(1.0));
  CHECK(lin.W.grad(1, 2) == Catch::Approx(1.0));  // gy[1] * x[2] = (-1)(-1)
  CHECK(lin.b.grad(0, 0) == Catch::Approx(1.0));
}

TEST_CASE("linear rows agree with per-vector application") {
  Rng rng(3);
  nn::Linear lin("lin", 4, 5);
  lin.init(rng);
  const Mat X = random_mat(rng, 3, 5);
  const Mat Y = lin.forward_rows(X);
  for (int i = 0; i < 3; ++i) {
    const Vec yi = lin.forward(X.row(i).transpose());
    CHECK((Y.row(i).transpose() - yi).norm() < 1e-14);
  }
}

TEST_CASE("layer norm normalizes rows and backprops") {
  Rng rng(4);
  nn::LayerNorm ln("ln", 6);
  const Mat X = random_mat(rng, 4, 6, 2.0);
  nn::LayerNorm::Cache cache;
  const Mat Y = ln.forward(X, &cache);
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(Y.row(i).mean()) < 1e-12);
    const double var = (Y.row(i).array() - Y.row(i).mean()).square().mean();
    CHECK(var == Catch::Approx(1.0).epsilon(1e-3));  // eps shifts it slightly
  }

  // FD on the input via a scalar probe loss sum(C .* Y)
  const Mat C = random_mat(rng, 4, 6);
  nn::ParamRefs params;
  ln.collect(params);
  nn::zero_grads(params);
  nn::LayerNorm::Cache c2;
  const Mat Y2 = ln.forward(X, &c2);
  const Mat gX = ln.backward(c2, C);
  auto loss_at = [&](const Mat& Xp) { return (C.array() * ln.forward(Xp).array()).sum(); };
  const double h = 1e-5;
  for (int probe = 0; probe < 10; ++probe) {
    const int i = static_cast<int>(probe % 4);
    const int j = static_cast<int>((probe * 7) % 6);
    Mat Xp = X, Xm = X;
    Xp(i, j) += h;
    Xm(i, j) -= h;
    const double fd = (loss_at(Xp) - loss_at(Xm)) / (2 * h);
    CHECK(rel_err(gX(i, j), fd) < 1e-4);
  }
  // parameter grads
  Rng prng(5);
  check_param_grads([&] { return (C.array() * ln.forward(X).array()).sum(); }, params, prng);
}

TEST_CASE("attention is permutation equivariant") {
  Rng rng(6);
  nn::MultiHeadSelfAttention mha("mha", 8, 2);
  mha.init(rng);
  const Mat X = random_mat(rng, 5, 8);
  const Mat Y = mha.forward(X, nullptr);

  // apply a permutation to the token rows
  const std::array<int, 5> perm = {3, 0, 4, 1, 2};
  Mat Xp(5, 8);
  for (int i = 0; i < 5; ++i) Xp.row(i) = X.row(perm[static_cast<std::size_t>(i)]);
  const Mat Yp = mha.forward(Xp, nullptr);
  for (int i = 0; i < 5; ++i)
    CHECK((Yp.row(i) - Y.row(perm[static_cast<std::size_t>(i)])).norm() < 1e-12);
}

TEST_CASE("attention backward matches finite differences") {
  Rng rng(7);
  nn::MultiHeadSelfAttention mha("mha", 6, 2);
  mha.init(rng);
  const Mat X = random_mat(rng, 4, 6);
  const Mat C = random_mat(rng, 4, 6);

  nn::ParamRefs params;
  mha.collect(params);
  nn::zero_grads(params);
  nn::MultiHeadSelfAttention::Cache cache;
  const Mat Y = mha.forward(X, &cache);
  const Mat gX = mha.backward(cache, C);

  auto loss_at = [&](const Mat& Xq) { return (C.array() * mha.forward(Xq, nullptr).array()).sum(); };
  const double h = 1e-5;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; j += 2) {
      Mat Xp = X, Xm = X;
      Xp(i, j) += h;
      Xm(i, j) -= h;
      const double fd = (loss_at(Xp) - loss_at(Xm)) / (2 * h);
      CHECK(std::abs(gX(i, j) - fd) < 1e-4 * std::max(1.0, std::abs(fd)));
    }
  Rng prng(8);
  check_param_grads([&] { return loss_at(X); }, params, prng);
}

TEST_CASE("attention rejects indivisible widths") {
  CHECK_THROWS_AS(nn::MultiHeadSelfAttention("bad", 6, 4), Error);
}

TEST_CASE("conv2d hand-computed output and gradients") {
  nn::Conv2d conv("conv", 1, 1, 2, 1);
  conv.W.value << 1, 2, 3, 4;  // kernel rows (ky,kx): (0,0),(0,1),(1,0),(1,1)
  conv.b.value << 0.5;
  Vec x(9);
  x << 1, 2, 3, 4, 5, 6, 7, 8, 9;  // 3x3 plane
  const Vec y = conv.forward(x, 3);
  REQUIRE(y.size() == 4);
  // window at (0,0): 1+2*2+3*4+4*5 = 37, +bias
  CHECK(y[0] == Catch::Approx(37.5));
  CHECK(y[1] == Catch::Approx(1 * 2 + 2 * 3 + 3 * 5 + 4 * 6 + 0.5));
  CHECK(y[3] == Catch::Approx(1 * 5 + 2 * 6 + 3 * 8 + 4 * 9 + 0.5));

  // FD on parameters
  nn::ParamRefs params;
  conv.collect(params);
  nn::zero_grads(params);
  Vec c(4);
  c << 1, -1, 2, 0.5;
  conv.backward(x, 3, c);
  Rng prng(9);
  check_param_grads([&] { return c.dot(conv.forward(x, 3)); }, params, prng);
}

TEST_CASE("conv2d respects stride and multiple channels") {
  Rng rng(10);
  nn::Conv2d conv("conv", 3, 2, 2, 2);
  conv.init(rng);
  Vec x = random_vec(rng, 3 * 4 * 4);
  const Vec y = conv.forward(x, 4);
  CHECK(y.size() == 2 * 2 * 2);
  CHECK(nn::Conv2d::out_size(32, 16, 8) == 3);
  CHECK_THROWS_AS(conv.forward(random_vec(rng, 3), 1), Error);
}

TEST_CASE("patchify lays out tokens in raster order") {
  // 4x4 image, patch 2 -> 4 tokens of 3*4 values
  const int s = 4, p = 2;
  Vec x(3 * s * s);
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  const Mat T = nn::patchify(x, s, p);
  REQUIRE(T.rows() == 4);
  REQUIRE(T.cols() == 12);
  // token 0 = patch at (0,0): channel 0 pixels (0,0),(1,0),(0,1),(1,1) = 0,1,4,5
  CHECK(T(0, 0) == 0.0);
  CHECK(T(0, 1) == 1.0);
  CHECK(T(0, 2) == 4.0);
  CHECK(T(0, 3) == 5.0);
  // channel 1 of token 0 starts at plane offset 16
  CHECK(T(0, 4) == 16.0);
  // token 3 = patch at (1,1): first pixel channel 0 = (2,2) -> 10
  CHECK(T(3, 0) == 10.0);
}

TEST_CASE("adam takes a bias-corrected first step") {
  nn::Param p("p", 2, 1);
  p.value << 1.0, -2.0;
  p.grad << 0.5, -0.5;
  nn::AdamConfig cfg;
  cfg.lr = 0.1;
  nn::Adam opt(cfg);
  opt.step({&p});
  // first step moves by ~lr * sign(grad)
  CHECK(p.value(0, 0) == Catch::Approx(1.0 - 0.1).epsilon(1e-6));
  CHECK(p.value(1, 0) == Catch::Approx(-2.0 + 0.1).epsilon(1e-6));
}

// ---------------------------------------------------------------------------
// Encoders and fusion
// ---------------------------------------------------------------------------

namespace {

EncoderConfig small_config() {
  EncoderConfig cfg;
  cfg.input_size = 16;
  cfg.embedding_dim = 8;
  cfg.n_attention_heads = 2;
  cfg.patch_size = 8;
  cfg.token_width = 12;
  cfg.int_kernel = 8;
  cfg.int_channels = 4;
  cfg.hidden_width = 10;
  cfg.seed = 11;
  return cfg;
}

Image random_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image img(w, h);
  for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("encoder config validation") {
  EncoderConfig cfg = small_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.embedding_dim = 9;  // not divisible by heads
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = small_config();
  cfg.patch_size = 5;  // does not divide 16
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = small_config();
  cfg.int_kernel = 64;  // larger than input
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = small_config();
  cfg.token_width = 13;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("encoders produce embeddings of the configured width") {
  const Model model(small_config());
  const Image img = random_image(20, 14, 21);
  const Embedding za = model.encode_action(img);
  CHECK(za.size() == 8);
  CHECK(za.allFinite());
  const Embedding zi = model.encode_interaction(img);
  CHECK(zi.size() == 8);

  // default-size config builds and reports the right dimensionality
  EncoderConfig full;
  CHECK(full.input_size == 224);
  CHECK(full.embedding_dim == 256);
  CHECK(full.int_kernel == 32);
  CHECK_NOTHROW(full.validate());
}

TEST_CASE("same input yields identical embeddings across instances with one seed") {
  const Image img = random_image(16, 16, 22);
  const Model m1(small_config());
  const Model m2(small_config());
  CHECK((m1.encode_action(img) - m2.encode_action(img)).norm() == 0.0);
  EncoderConfig other = small_config();
  other.seed = 12;
  const Model m3(other);
  CHECK((m1.encode_action(img) - m3.encode_action(img)).norm() > 0.0);
}

TEST_CASE("conv action backbone is available") {
  EncoderConfig cfg = small_config();
  cfg.action_backbone = EncoderConfig::ActionBackbone::conv;
  cfg.conv_kernel = 8;
  cfg.conv_stride = 4;
  const Model model(cfg);
  const Embedding z = model.encode_action(random_image(16, 16, 23));
  CHECK(z.size() == 8);
  CHECK(z.allFinite());
}

TEST_CASE("fusion stacks three embeddings and is permutation equivariant") {
  Model model(small_config());
  Rng rng(24);
  const Vec zi = random_vec(rng, 8), za = random_vec(rng, 8), zb = random_vec(rng, 8);
  const FusionState st = model.fuse(zi, za, zb);
  CHECK(st.z_in.rows() == 3);
  CHECK(st.z_out.rows() == 3);
  CHECK(st.z_flat.size() == 24);
  CHECK(st.z_in.row(0).transpose().isApprox(zi));
  // flatten is row-major over z_out
  CHECK(st.z_flat.segment(8, 8).transpose().isApprox(st.z_out.row(1)));

  // swapping the two action rows swaps their outputs and fixes the first row
  const FusionState sw = model.fuse(zi, zb, za);
  CHECK((sw.z_out.row(0) - st.z_out.row(0)).norm() < 1e-12);
  CHECK((sw.z_out.row(1) - st.z_out.row(2)).norm() < 1e-12);
  CHECK((sw.z_out.row(2) - st.z_out.row(1)).norm() < 1e-12);

  Vec bad = random_vec(rng, 5);
  CHECK_THROWS_AS(model.fuse(bad, za, zb), Error);
}

TEST_CASE("classifier heads emit four logits in declared order") {
  Model model(small_config());
  Rng rng(25);
  const Vec zi = random_vec(rng, 8), za = random_vec(rng, 8), zb = random_vec(rng, 8);
  const Logits li = model.classify_interaction(model.fuse(zi, za, zb));
  CHECK(li.values.size() == 4);
  CHECK(li.class_order == interaction_class_order());
  const Logits la = model.classify_action(za);
  CHECK(la.values.size() == 4);
  CHECK(la.class_order == action_class_order());
}

TEST_CASE("gradient through fuse and the interaction head matches finite differences") {
  Model model(small_config());
  Rng rng(26);
  Vec zi = random_vec(rng, 8), za = random_vec(rng, 8), zb = random_vec(rng, 8);
  const std::vector<double> margins = {0.5, 0.6, 1.0, 1.2};
  const std::size_t y = 2;

  auto loss_at = [&](const Vec& i, const Vec& a, const Vec& b) {
    return ldam_loss(model.classify_interaction(model.fuse(i, a, b)).values, y, margins);
  };

  Model::FuseTrace trace;
  const FusionState st = model.fuse(zi, za, zb, &trace);
  const auto lg = ldam_loss_grad(model.classify_interaction(st).values, y, margins);
  nn::zero_grads(model.params());
  const Vec g_flat = model.head_int_backward(st, lg.g_logits);
  const auto gin = model.fuse_backward(trace, g_flat);

  const double h = 1e-5;
  auto fd_vec = [&](Vec& target, auto reconstruct) {
    Vec fd(target.size());
    for (Eigen::Index k = 0; k < target.size(); ++k) {
      const double keep = target[k];
      target[k] = keep + h;
      const double up = reconstruct();
      target[k] = keep - h;
      const double dn = reconstruct();
      target[k] = keep;
      fd[k] = (up - dn) / (2 * h);
    }
    return fd;
  };
  const Vec fd_i = fd_vec(zi, [&] { return loss_at(zi, za, zb); });
  const Vec fd_a = fd_vec(za, [&] { return loss_at(zi, za, zb); });
  const Vec fd_b = fd_vec(zb, [&] { return loss_at(zi, za, zb); });
  CHECK((gin.g_int - fd_i).norm() / std::max(1e-12, fd_i.norm()) < 1e-3);
  CHECK((gin.g_a - fd_a).norm() / std::max(1e-12, fd_a.norm()) < 1e-3);
  CHECK((gin.g_b - fd_b).norm() / std::max(1e-12, fd_b.norm()) < 1e-3);
}

TEST_CASE("action encoder backward matches finite differences") {
  Model model(small_config());
  Rng rng(27);
  const Vec x = random_vec(rng, 3 * 16 * 16, 0.5);
  const Vec c = random_vec(rng, 8);

  Model::ActTrace trace;
  const Embedding z = model.encode_action_input(x, &trace);
  nn::zero_grads(model.params());
  model.encode_action_backward(trace, c);

  Rng prng(28);
  check_param_grads([&] { return c.dot(model.encode_action_input(x)); },
                    model.params_action_encoder(), prng, 1e-5, 2e-4);
}

TEST_CASE("interaction encoder backward matches finite differences") {
  Model model(small_config());
  Rng rng(29);
  const Vec x = random_vec(rng, 3 * 16 * 16, 0.5);
  const Vec c = random_vec(rng, 8);

  Model::IntTrace trace;
  const Embedding z = model.encode_interaction_input(x, &trace);
  nn::zero_grads(model.params());
  model.encode_interaction_backward(trace, c);

  Rng prng(30);
  nn::ParamRefs int_only;
  for (auto* p : model.params_interaction_side())
    if (p->name.rfind("f_int.", 0) == 0) int_only.push_back(p);
  REQUIRE(!int_only.empty());
  check_param_grads([&] { return c.dot(model.encode_interaction_input(x)); }, int_only, prng,
                    1e-5, 2e-4);
}

TEST_CASE("conv action backbone backward matches finite differences") {
  EncoderConfig cfg = small_config();
  cfg.action_backbone = EncoderConfig::ActionBackbone::conv;
  Model model(cfg);
  Rng rng(31);
  const Vec x = random_vec(rng, 3 * 16 * 16, 0.5);
  const Vec c = random_vec(rng, 8);
  Model::ActTrace trace;
  model.encode_action_input(x, &trace);
  nn::zero_grads(model.params());
  model.encode_action_backward(trace, c);
  Rng prng(32);
  check_param_grads([&] { return c.dot(model.encode_action_input(x)); },
                    model.params_action_encoder(), prng, 1e-5, 2e-4);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

TEST_CASE("checkpoint round trip preserves behavior exactly") {
  namespace fs = std::filesystem;
  const auto path = fs::temp_directory_path() / "cattleact_ckpt_test.bin";

  Model model(small_config());
  model.norm.mean = {0.4, 0.5, 0.6};
  model.norm.stdev = {0.2, 0.25, 0.3};
  const Image img = random_image(16, 16, 33);

  CheckpointMeta meta;
  meta.step = 1234;
  meta.metrics["val_macro_f1"] = 0.875;
  save_checkpoint(model, meta, path);

  // save() snapped the live model to float32, so outputs must now match a
  // reload bit for bit
  const Embedding before = model.encode_action(img);
  auto loaded = load_checkpoint(path);
  CHECK(loaded.meta.step == 1234);
  CHECK(loaded.meta.metrics.at("val_macro_f1") == 0.875);
  CHECK(loaded.model.norm.mean[0] == 0.4);
  const Embedding after = loaded.model.encode_action(img);
  REQUIRE(after.size() == before.size());
  for (Eigen::Index i = 0; i < after.size(); ++i) CHECK(after[i] == before[i]);

  // save -> load -> save is byte-stable
  const auto path2 = fs::temp_directory_path() / "cattleact_ckpt_test2.bin";
  save_checkpoint(loaded.model, loaded.meta, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  fs::remove(path);
  fs::remove(path2);
}

TEST_CASE("checkpoint rejects corruption and mismatches") {
  namespace fs = std::filesystem;
  const auto path = fs::temp_directory_path() / "cattleact_ckpt_bad.bin";
  Model model(small_config());
  save_checkpoint(model, {}, path);

  // flip the magic
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(0);
    f.write("XXXXXXXX", 8);
  }
  try {
    load_checkpoint(path);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == Error::Code::CheckpointMismatch);
  }

  // truncated payload
  save_checkpoint(model, {}, path);
  const auto size = fs::file_size(path);
  fs::resize_file(path, size - 64);
  CHECK_THROWS_AS(load_checkpoint(path), Error);

  CHECK_THROWS_AS(load_checkpoint(fs::temp_directory_path() / "missing_ckpt.bin"), Error);
  fs::remove(path);
}
