#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cattleact/linalg.hpp"
#include "cattleact/rng.hpp"
#include "cattleact/types.hpp"

namespace cattleact::nn {

/// Named tensor with its gradient accumulator. Vectors are stored as n x 1.
struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}
};

using ParamRefs = std::vector<Param*>;

inline void zero_grads(const ParamRefs& params) {
  for (auto* p : params) p->grad.setZero();
}

/// Xavier-uniform init.
inline void init_uniform(Param& p, Rng& rng, double fan_in, double fan_out) {
  const double s = std::sqrt(6.0 / (fan_in + fan_out));
  for (Eigen::Index j = 0; j < p.value.cols(); ++j)
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) p.value(i, j) = rng.uniform(-s, s);
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

struct Linear {
  Param W;  // out x in
  Param b;  // out x 1

  Linear(const std::string& name, Eigen::Index out, Eigen::Index in)
      : W(name + ".W", out, in), b(name + ".b", out, 1) {}

  void init(Rng& rng) {
    init_uniform(W, rng, static_cast<double>(W.value.cols()), static_cast<double>(W.value.rows()));
    b.value.setZero();
  }

  void collect(ParamRefs& out) {
    out.push_back(&W);
    out.push_back(&b);
  }

  Vec forward(const Vec& x) const { return W.value * x + b.value.col(0); }

  /// Accumulates parameter grads; returns grad wrt x when requested.
  Vec backward(const Vec& cached_x, const Vec& gy, bool need_gx = true) {
    W.grad += gy * cached_x.transpose();
    b.grad.col(0) += gy;
    return need_gx ? Vec(W.value.transpose() * gy) : Vec();
  }

  /// Row-wise application to a token matrix (N x in) -> (N x out).
  Mat forward_rows(const Mat& X) const {
    return (X * W.value.transpose()).rowwise() + b.value.col(0).transpose();
  }

  Mat backward_rows(const Mat& cached_X, const Mat& gY, bool need_gx = true) {
    W.grad += gY.transpose() * cached_X;
    b.grad.col(0) += gY.colwise().sum().transpose();
    return need_gx ? Mat(gY * W.value) : Mat();
  }
};

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

inline Vec relu(const Vec& x) { return x.cwiseMax(0.0); }
inline Mat relu(const Mat& x) { return x.cwiseMax(0.0); }

inline Vec relu_backward(const Vec& cached_x, const Vec& gy) {
  return (cached_x.array() > 0.0).select(gy, Vec::Zero(gy.size()));
}
inline Mat relu_backward(const Mat& cached_x, const Mat& gy) {
  return (cached_x.array() > 0.0).select(gy, Mat::Zero(gy.rows(), gy.cols()));
}

// ---------------------------------------------------------------------------
// LayerNorm (per token row)
// ---------------------------------------------------------------------------

struct LayerNorm {
  Param gain;  // E x 1
  Param bias;  // E x 1
  double eps = 1e-5;

  explicit LayerNorm(const std::string& name, Eigen::Index width)
      : gain(name + ".gain", width, 1), bias(name + ".bias", width, 1) {
    gain.value.setOnes();
  }

  void collect(ParamRefs& out) {
    out.push_back(&gain);
    out.push_back(&bias);
  }

  struct Cache {
    Mat x_hat;      // normalized rows
    Vec inv_sigma;  // per-row 1/sigma
  };

  Mat forward(const Mat& X, Cache* cache = nullptr) const {
    const Eigen::Index n = X.rows(), e = X.cols();
    Mat x_hat(n, e);
    Vec inv_sigma(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = X.row(i).mean();
      const double var = (X.row(i).array() - mu).square().mean();
      const double inv = 1.0 / std::sqrt(var + eps);
      x_hat.row(i) = (X.row(i).array() - mu) * inv;
      inv_sigma[i] = inv;
    }
    Mat y = x_hat.array().rowwise() * gain.value.col(0).transpose().array();
    y.array().rowwise() += bias.value.col(0).transpose().array();
    if (cache) {
      cache->x_hat = std::move(x_hat);
      cache->inv_sigma = std::move(inv_sigma);
    }
    return y;
  }

  Mat backward(const Cache& c, const Mat& gY) {
    const Eigen::Index n = gY.rows(), e = gY.cols();
    gain.grad.col(0) += (gY.array() * c.x_hat.array()).colwise().sum().matrix().transpose();
    bias.grad.col(0) += gY.colwise().sum().transpose();
    Mat gX(n, e);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::ArrayXd gh = gY.row(i).transpose().array() * gain.value.col(0).array();
      const Eigen::ArrayXd xh = c.x_hat.row(i).transpose().array();
      const double m_gh = gh.mean();
      const double m_ghxh = (gh * xh).mean();
      gX.row(i) = (c.inv_sigma[i] * (gh - m_gh - xh * m_ghxh)).transpose();
    }
    return gX;
  }
};

// ---------------------------------------------------------------------------
// Multi-head self-attention over token rows (no positional encoding inside)
// ---------------------------------------------------------------------------

struct MultiHeadSelfAttention {
  Linear q, k, v, o;
  int heads;

  MultiHeadSelfAttention(const std::string& name, Eigen::Index width, int n_heads)
      : q(name + ".q", width, width),
        k(name + ".k", width, width),
        v(name + ".v", width, width),
        o(name + ".o", width, width),
        heads(n_heads) {
    if (width % n_heads != 0)
      throw Error(Error::Code::InvalidSpec,
                  "MultiHeadSelfAttention: width must be divisible by head count");
  }

  void init(Rng& rng) {
    q.init(rng);
    k.init(rng);
    v.init(rng);
    o.init(rng);
  }

  void collect(ParamRefs& out) {
    q.collect(out);
    k.collect(out);
    v.collect(out);
    o.collect(out);
  }

  struct Cache {
    Mat X, Q, K, V, O;
    std::vector<Mat> attn;  // per-head row-softmax matrices (N x N)
  };

  Mat forward(const Mat& X, Cache* cache = nullptr) const {
    const Eigen::Index n = X.rows();
    const Eigen::Index e = X.cols();
    const Eigen::Index dh = e / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Mat Q = q.forward_rows(X);
    Mat K = k.forward_rows(X);
    Mat V = v.forward_rows(X);
    Mat O(n, e);
    std::vector<Mat> attn(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      const auto Qh = Q.middleCols(h * dh, dh);
      const auto Kh = K.middleCols(h * dh, dh);
      const auto Vh = V.middleCols(h * dh, dh);
      Mat S = Qh * Kh.transpose() * scale;
      Mat A(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double m = S.row(i).maxCoeff();
        Eigen::ArrayXd ex = (S.row(i).transpose().array() - m).exp();
        A.row(i) = (ex / ex.sum()).transpose();
      }
      O.middleCols(h * dh, dh) = A * Vh;
      attn[static_cast<std::size_t>(h)] = std::move(A);
    }
    Mat Y = o.forward_rows(O);
    if (cache) {
      cache->X = X;
      cache->Q = std::move(Q);
      cache->K = std::move(K);
      cache->V = std::move(V);
      cache->O = std::move(O);
      cache->attn = std::move(attn);
    }
    return Y;
  }

  Mat backward(const Cache& c, const Mat& gY, bool need_gx = true) {
    const Eigen::Index n = c.X.rows();
    const Eigen::Index e = c.X.cols();
    const Eigen::Index dh = e / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Mat gO = o.backward_rows(c.O, gY, true);
    Mat gQ = Mat::Zero(n, e), gK = Mat::Zero(n, e), gV = Mat::Zero(n, e);
    for (int h = 0; h < heads; ++h) {
      const auto& A = c.attn[static_cast<std::size_t>(h)];
      const auto Qh = c.Q.middleCols(h * dh, dh);
      const auto Kh = c.K.middleCols(h * dh, dh);
      const auto Vh = c.V.middleCols(h * dh, dh);
      const auto gOh = gO.middleCols(h * dh, dh);

      Mat gA = gOh * Vh.transpose();
      gV.middleCols(h * dh, dh) = A.transpose() * gOh;
      // row-wise softmax backward: gS = A .* (gA - rowsum(gA .* A))
      Mat gS(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double dot = gA.row(i).dot(A.row(i));
        gS.row(i) = A.row(i).array() * (gA.row(i).array() - dot);
      }
      gQ.middleCols(h * dh, dh) = gS * Kh * scale;
      gK.middleCols(h * dh, dh) = gS.transpose() * Qh * scale;
    }
    Mat gX1 = q.backward_rows(c.X, gQ, need_gx);
    Mat gX2 = k.backward_rows(c.X, gK, need_gx);
    Mat gX3 = v.backward_rows(c.X, gV, need_gx);
    if (!need_gx) return {};
    return gX1 + gX2 + gX3;
  }
};

// ---------------------------------------------------------------------------
// Conv2d over channel-planar input (valid padding)
// ---------------------------------------------------------------------------

struct Conv2d {
  Param W;  // C_out x (C_in * kh * kw)
  Param b;  // C_out x 1
  int c_in, c_out, kernel, stride;

  Conv2d(const std::string& name, int in_ch, int out_ch, int k, int s)
      : W(name + ".W", out_ch, static_cast<Eigen::Index>(in_ch) * k * k),
        b(name + ".b", out_ch, 1),
        c_in(in_ch),
        c_out(out_ch),
        kernel(k),
        stride(s) {}

  void init(Rng& rng) {
    init_uniform(W, rng, static_cast<double>(W.value.cols()), static_cast<double>(W.value.rows()));
    b.value.setZero();
  }

  void collect(ParamRefs& out) {
    out.push_back(&W);
    out.push_back(&b);
  }

  static int out_size(int in, int k, int s) { return in < k ? 0 : (in - k) / s + 1; }

  /// Input: planar vec of size c_in * S * S. Output: planar vec c_out * OH * OW.
  Vec forward(const Vec& x, int in_size) const {
    const int os = out_size(in_size, kernel, stride);
    if (os <= 0)
      throw Error(Error::Code::ShapeMismatch, "Conv2d: kernel larger than input");
    Vec y(static_cast<Eigen::Index>(c_out) * os * os);
    Vec patch(W.value.cols());
    for (int oy = 0; oy < os; ++oy)
      for (int ox = 0; ox < os; ++ox) {
        Eigen::Index t = 0;
        for (int ci = 0; ci < c_in; ++ci)
          for (int ky = 0; ky < kernel; ++ky)
            for (int kx = 0; kx < kernel; ++kx)
              patch[t++] = x[static_cast<Eigen::Index>(ci) * in_size * in_size +
                             (oy * stride + ky) * in_size + (ox * stride + kx)];
        const Vec vals = W.value * patch + b.value.col(0);
        for (int co = 0; co < c_out; ++co)
          y[static_cast<Eigen::Index>(co) * os * os + oy * os + ox] = vals[co];
      }
    return y;
  }

  /// Accumulates parameter grads only (used as a first layer; no input grad).
  void backward(const Vec& cached_x, int in_size, const Vec& gy) {
    const int os = out_size(in_size, kernel, stride);
    Vec patch(W.value.cols());
    for (int oy = 0; oy < os; ++oy)
      for (int ox = 0; ox < os; ++ox) {
        Eigen::Index t = 0;
        for (int ci = 0; ci < c_in; ++ci)
          for (int ky = 0; ky < kernel; ++ky)
            for (int kx = 0; kx < kernel; ++kx)
              patch[t++] = cached_x[static_cast<Eigen::Index>(ci) * in_size * in_size +
                                    (oy * stride + ky) * in_size + (ox * stride + kx)];
        Vec gvals(c_out);
        for (int co = 0; co < c_out; ++co)
          gvals[co] = gy[static_cast<Eigen::Index>(co) * os * os + oy * os + ox];
        W.grad += gvals * patch.transpose();
        b.grad.col(0) += gvals;
      }
  }
};

// ---------------------------------------------------------------------------
// Patchify (image -> token matrix); pure reshape, no parameters
// ---------------------------------------------------------------------------

/// Planar vec (3 * S * S) -> (n_tokens x 3 * P * P), tokens in raster order.
inline Mat patchify(const Vec& x, int image_size, int patch) {
  const int per_side = image_size / patch;
  Mat tokens(static_cast<Eigen::Index>(per_side) * per_side,
             static_cast<Eigen::Index>(3) * patch * patch);
  for (int py = 0; py < per_side; ++py)
    for (int px = 0; px < per_side; ++px) {
      const Eigen::Index row = static_cast<Eigen::Index>(py) * per_side + px;
      Eigen::Index t = 0;
      for (int c = 0; c < 3; ++c)
        for (int dy = 0; dy < patch; ++dy)
          for (int dx = 0; dx < patch; ++dx)
            tokens(row, t++) = x[static_cast<Eigen::Index>(c) * image_size * image_size +
                                 (py * patch + dy) * image_size + (px * patch + dx)];
    }
  return tokens;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const ParamRefs& params) {
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.emplace_back(Mat::Zero(p->value.rows(), p->value.cols()));
        v_.emplace_back(Mat::Zero(p->value.rows(), p->value.cols()));
      }
    }
    if (m_.size() != params.size())
      throw Error(Error::Code::DimensionMismatch, "Adam: parameter set changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Param& p = *params[i];
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
      const Mat m_hat = m_[i] / bc1;
      const Mat v_hat = v_[i] / bc2;
      p.value -= cfg_.lr * (m_hat.array() / (v_hat.array().sqrt() + cfg_.eps)).matrix();
    }
  }

  const AdamConfig& config() const { return cfg_; }

private:
  AdamConfig cfg_;
  std::vector<Mat> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace cattleact::nn
