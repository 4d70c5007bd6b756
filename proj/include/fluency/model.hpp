#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "fluency/embeddings.hpp"
#include "fluency/error.hpp"
#include "fluency/features.hpp"
#include "fluency/metrics.hpp"
#include "fluency/random.hpp"

namespace fluency {

struct ModelConfig {
  int conv_filters = 128;
  int kernel = 3;
  int stride = 1;
  int lstm_layers = 2;
  int lstm_hidden = 256;
  double dropout = 0.3;
  int classes = 3;
  double learning_rate = 1e-4;
  int epochs = 200;
  int batch_size = 16;
  std::uint64_t seed = 0;
  /// Stop as soon as training macro-F1 reaches this value; 0 disables.
  double target_train_f1 = 0.0;
  /// -1: learn the fusion weights. Otherwise alpha is fixed to this one-hot.
  int single_source = -1;

  void validate() const {
    if (conv_filters <= 0 || kernel <= 0 || lstm_layers <= 0 || lstm_hidden <= 0 || classes <= 1 || epochs <= 0 ||
        batch_size <= 0) {
      throw Error(Errc::InvalidConfig, "model sizes must be positive");
    }
    if (stride != 1) throw Error(Errc::InvalidConfig, "only stride 1 is supported (same padding along chunks)");
    if (kernel % 2 == 0) throw Error(Errc::InvalidConfig, "kernel must be odd for same padding");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(Errc::InvalidConfig, "dropout must lie in [0, 1)");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw Error(Errc::InvalidConfig, "learning rate must be >= 0");
  }
};

/// One utterance ready for the classifier: per-source pooled chunk embeddings
/// (M x d each, already padded to a common d) and raw fluency markers (M x k).
struct Sample {
  std::string id;
  std::vector<Matrix> sources;
  Matrix markers;
  int label = 0;

  Eigen::Index chunks() const { return sources.empty() ? markers.rows() : sources.front().rows(); }
};

// ---------------------------------------------------------------------------
// Parameters

struct LstmDirection {
  Matrix w_ih;  // 4H x in, gate order i, f, g, o
  Matrix w_hh;  // 4H x H
  Matrix b;     // 4H x 1
};

struct Parameters {
  Matrix theta;   // S x 1 fusion logits
  Matrix conv_w;  // F x (K * D); block k multiplies the chunk at offset k - K/2
  Matrix conv_b;  // F x 1
  std::vector<LstmDirection> lstm;  // index 2 * layer + direction (0 forward, 1 backward)
  Matrix dense_w;  // C x 2H
  Matrix dense_b;  // C x 1

  template <class Self, class Fn>
  static void visit(Self& self, Fn&& fn) {
    fn(std::string("theta"), self.theta);
    fn(std::string("conv.w"), self.conv_w);
    fn(std::string("conv.b"), self.conv_b);
    for (std::size_t i = 0; i < self.lstm.size(); ++i) {
      const std::string base = "lstm.l" + std::to_string(i / 2) + (i % 2 == 0 ? ".fwd" : ".bwd");
      fn(base + ".w_ih", self.lstm[i].w_ih);
      fn(base + ".w_hh", self.lstm[i].w_hh);
      fn(base + ".b", self.lstm[i].b);
    }
    fn(std::string("dense.w"), self.dense_w);
    fn(std::string("dense.b"), self.dense_b);
  }
  template <class Fn> void for_each(Fn&& fn) { visit(*this, std::forward<Fn>(fn)); }
  template <class Fn> void for_each(Fn&& fn) const { visit(*this, std::forward<Fn>(fn)); }

  Parameters zeros_like() const {
    Parameters z = *this;
    z.for_each([](const std::string&, Matrix& m) { m.setZero(); });
    return z;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }
};

struct NetworkShape {
  int sources = 3;
  int embed_dim = 0;   // d
  int marker_dim = 0;  // k
  int input_dim() const { return embed_dim + marker_dim; }
};

// ---------------------------------------------------------------------------
// Batches are time-major: column t * B + b holds chunk t of utterance b.
// Positions past an utterance's length are zero and masked.

struct Batch {
  Eigen::Index steps = 0;  // T = max chunk count
  Eigen::Index size = 0;   // B
  std::vector<int> lengths;
  std::vector<Matrix> sources;  // S x (d x TB)
  Matrix markers;               // k x TB, standardized
  Matrix mask;                  // 1 x TB
  std::vector<int> labels;
};

inline Batch make_batch(const std::vector<const Sample*>& samples, const NetworkShape& shape,
                        const MarkerStandardizer& standardizer) {
  Batch batch;
  batch.size = static_cast<Eigen::Index>(samples.size());
  for (const auto* s : samples) {
    if (s->chunks() < 1) throw Error(Errc::EmptyUtterance, s->id + ": no chunks");
    batch.steps = std::max(batch.steps, s->chunks());
  }
  const Eigen::Index cols = batch.steps * batch.size;
  batch.sources.assign(static_cast<std::size_t>(shape.sources), Matrix::Zero(shape.embed_dim, cols));
  batch.markers = Matrix::Zero(shape.marker_dim, cols);
  batch.mask = Matrix::Zero(1, cols);
  for (Eigen::Index b = 0; b < batch.size; ++b) {
    const Sample& s = *samples[static_cast<std::size_t>(b)];
    if (static_cast<int>(s.sources.size()) != shape.sources) {
      throw Error(Errc::InvalidConfig, s.id + ": expected " + std::to_string(shape.sources) + " embedding sources");
    }
    if (s.markers.cols() != shape.marker_dim) throw Error(Errc::InvalidConfig, s.id + ": marker width mismatch");
    batch.lengths.push_back(static_cast<int>(s.chunks()));
    batch.labels.push_back(s.label);
    for (Eigen::Index t = 0; t < s.chunks(); ++t) {
      const Eigen::Index col = t * batch.size + b;
      batch.mask(0, col) = 1.0;
      for (int src = 0; src < shape.sources; ++src) {
        const auto& m = s.sources[static_cast<std::size_t>(src)];
        if (m.cols() != shape.embed_dim || m.rows() != s.chunks()) {
          throw Error(Errc::InvalidConfig, s.id + ": embedding shape mismatch");
        }
        batch.sources[static_cast<std::size_t>(src)].col(col) = m.row(t).transpose();
      }
      if (shape.marker_dim > 0) {
        std::vector<double> raw(static_cast<std::size_t>(shape.marker_dim));
        for (int j = 0; j < shape.marker_dim; ++j) raw[static_cast<std::size_t>(j)] = s.markers(t, j);
        const auto z = standardizer.mean.empty() ? raw : standardizer.apply(raw);
        for (int j = 0; j < shape.marker_dim; ++j) batch.markers(j, col) = z[static_cast<std::size_t>(j)];
      }
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Network

namespace detail {

inline Matrix sigmoid(const Matrix& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

inline Vector softmax(const Vector& z) {
  const double mx = z.maxCoeff();
  Vector e = (z.array() - mx).exp();
  return e / e.sum();
}

}  // namespace detail

/// -log p[label] with p clamped to at least 1e-12.
inline double cross_entropy(const Vector& probs, int label) { return -std::log(std::max(probs(label), 1e-12)); }

namespace detail {

struct LstmCache {
  Matrix gates;   // 4H x TB, post-activation
  Matrix c;       // H x TB, cell state after the step
  Matrix tanh_c;  // H x TB
  Matrix h_prev;  // H x TB, state entering the step
  Matrix c_prev;  // H x TB
  Matrix out;     // H x TB, zero at masked positions
};

}  // namespace detail

struct ForwardCache {
  Vector alpha;
  Matrix input;      // D x TB (fused embedding stacked over markers)
  Matrix conv_pre;   // F x TB
  Matrix conv_drop;  // F x TB dropout multipliers
  Matrix conv_out;   // F x TB
  std::vector<Matrix> layer_in;  // per LSTM layer
  std::vector<detail::LstmCache> dirs;
  Matrix top_drop;  // 2H x TB
  Matrix top;       // 2H x TB after dropout
  Matrix pooled;    // 2H x B
  Matrix probs;     // C x B
  double loss = 0.0;
};

class Network {
 public:
  Network() = default;

  Network(const NetworkShape& shape, const ModelConfig& cfg) : shape_(shape), cfg_(cfg) {
    cfg.validate();
    if (shape.sources <= 0 || shape.embed_dim <= 0 || shape.marker_dim < 0) {
      throw Error(Errc::InvalidConfig, "network needs at least one source and a positive embedding dim");
    }
    if (cfg.single_source >= shape.sources) throw Error(Errc::InvalidConfig, "single_source out of range");
    initialize();
  }

  const NetworkShape& shape() const { return shape_; }
  const ModelConfig& config() const { return cfg_; }
  Parameters& params() { return params_; }
  const Parameters& params() const { return params_; }

  /// Fusion weights: softmax of theta, or the fixed one-hot.
  Vector alpha() const {
    if (cfg_.single_source >= 0) {
      Vector a = Vector::Zero(shape_.sources);
      a(cfg_.single_source) = 1.0;
      return a;
    }
    return detail::softmax(params_.theta.col(0));
  }

  /// Convex combination of per-source vectors (columns of `sources`).
  Vector fuse(const std::vector<Vector>& sources) const {
    const Vector a = alpha();
    Vector out = Vector::Zero(sources.at(0).size());
    for (std::size_t s = 0; s < sources.size(); ++s) out += a(static_cast<Eigen::Index>(s)) * sources[s];
    return out;
  }

  /// Forward pass. Dropout is active only when `rng` is given.
  ForwardCache forward(const Batch& batch, SplitMix64* rng = nullptr) const {
    const Eigen::Index T = batch.steps;
    const Eigen::Index B = batch.size;
    const Eigen::Index TB = T * B;
    const int D = shape_.input_dim();
    const int F = cfg_.conv_filters;
    const int H = cfg_.lstm_hidden;
    const int K = cfg_.kernel;
    ForwardCache cache;
    cache.alpha = alpha();

    cache.input.resize(D, TB);
    Matrix fused = Matrix::Zero(shape_.embed_dim, TB);
    for (int s = 0; s < shape_.sources; ++s) fused += cache.alpha(s) * batch.sources[static_cast<std::size_t>(s)];
    cache.input.topRows(shape_.embed_dim) = fused;
    if (shape_.marker_dim > 0) cache.input.bottomRows(shape_.marker_dim) = batch.markers;

    // Conv along the chunk axis, same padding.
    cache.conv_pre = params_.conv_b.replicate(1, TB);
    for (int k = 0; k < K; ++k) {
      const Eigen::Index off = k - K / 2;
      const Eigen::Index t0 = std::max<Eigen::Index>(0, -off);
      const Eigen::Index t1 = std::min<Eigen::Index>(T, T - off);
      if (t1 <= t0) continue;
      cache.conv_pre.middleCols(t0 * B, (t1 - t0) * B).noalias() +=
          params_.conv_w.middleCols(static_cast<Eigen::Index>(k) * D, D) * cache.input.middleCols((t0 + off) * B, (t1 - t0) * B);
    }
    const Eigen::RowVectorXd mask_row = batch.mask.row(0);
    cache.conv_pre.array().rowwise() *= mask_row.array();
    cache.conv_drop = dropout_mask(F, TB, rng);
    cache.conv_out = (cache.conv_pre.array().max(0.0) * cache.conv_drop.array()).matrix();

    Matrix x = cache.conv_out;
    for (int layer = 0; layer < cfg_.lstm_layers; ++layer) {
      cache.layer_in.push_back(x);
      Matrix out(2 * H, TB);
      for (int dir = 0; dir < 2; ++dir) {
        detail::LstmCache lc = lstm_forward(params_.lstm[static_cast<std::size_t>(2 * layer + dir)], x, batch, dir == 1);
        out.middleRows(dir * H, H) = lc.out;
        cache.dirs.push_back(std::move(lc));
      }
      x = std::move(out);
    }
    cache.top_drop = dropout_mask(2 * H, TB, rng);
    cache.top = (x.array() * cache.top_drop.array()).matrix();

    cache.pooled = Matrix::Zero(2 * H, B);
    for (Eigen::Index t = 0; t < T; ++t) cache.pooled += cache.top.middleCols(t * B, B);
    for (Eigen::Index b = 0; b < B; ++b) cache.pooled.col(b) /= static_cast<double>(batch.lengths[static_cast<std::size_t>(b)]);

    Matrix logits = params_.dense_w * cache.pooled;
    logits.colwise() += params_.dense_b.col(0);
    cache.probs.resize(cfg_.classes, B);
    double loss = 0.0;
    for (Eigen::Index b = 0; b < B; ++b) {
      cache.probs.col(b) = detail::softmax(logits.col(b));
      if (!batch.labels.empty()) {
        loss += cross_entropy(cache.probs.col(b), batch.labels[static_cast<std::size_t>(b)]);
      }
    }
    cache.loss = loss / static_cast<double>(B);
    return cache;
  }

  /// Gradient of the mean cross-entropy of `batch` w.r.t. every parameter.
  Parameters backward(const Batch& batch, const ForwardCache& cache) const {
    const Eigen::Index T = batch.steps;
    const Eigen::Index B = batch.size;
    const Eigen::Index TB = T * B;
    const int D = shape_.input_dim();
    const int H = cfg_.lstm_hidden;
    const int K = cfg_.kernel;
    Parameters g = params_.zeros_like();

    Matrix dlogits = cache.probs;
    for (Eigen::Index b = 0; b < B; ++b) dlogits(batch.labels[static_cast<std::size_t>(b)], b) -= 1.0;
    dlogits /= static_cast<double>(B);
    g.dense_w.noalias() = dlogits * cache.pooled.transpose();
    g.dense_b = dlogits.rowwise().sum();
    Matrix dpooled = params_.dense_w.transpose() * dlogits;

    Matrix dx(2 * H, TB);
    for (Eigen::Index t = 0; t < T; ++t) {
      for (Eigen::Index b = 0; b < B; ++b) {
        const double m = batch.mask(0, t * B + b) / static_cast<double>(batch.lengths[static_cast<std::size_t>(b)]);
        dx.col(t * B + b) = dpooled.col(b) * m;
      }
    }
    dx.array() *= cache.top_drop.array();

    for (int layer = cfg_.lstm_layers - 1; layer >= 0; --layer) {
      const Matrix& x = cache.layer_in[static_cast<std::size_t>(layer)];
      Matrix dinput = Matrix::Zero(x.rows(), TB);
      for (int dir = 0; dir < 2; ++dir) {
        const auto idx = static_cast<std::size_t>(2 * layer + dir);
        lstm_backward(params_.lstm[idx], x, cache.dirs[idx], batch, dir == 1, dx.middleRows(dir * H, H), g.lstm[idx], dinput);
      }
      dx = std::move(dinput);
    }

    // ReLU + dropout + mask.
    Matrix dpre = (dx.array() * cache.conv_drop.array() * (cache.conv_pre.array() > 0.0).cast<double>()).matrix();
    const Eigen::RowVectorXd mask_row = batch.mask.row(0);
    dpre.array().rowwise() *= mask_row.array();
    g.conv_b = dpre.rowwise().sum();
    Matrix dinput = Matrix::Zero(D, TB);
    for (int k = 0; k < K; ++k) {
      const Eigen::Index off = k - K / 2;
      const Eigen::Index t0 = std::max<Eigen::Index>(0, -off);
      const Eigen::Index t1 = std::min<Eigen::Index>(T, T - off);
      if (t1 <= t0) continue;
      const auto out_cols = dpre.middleCols(t0 * B, (t1 - t0) * B);
      const auto in_cols = cache.input.middleCols((t0 + off) * B, (t1 - t0) * B);
      g.conv_w.middleCols(static_cast<Eigen::Index>(k) * D, D).noalias() += out_cols * in_cols.transpose();
      dinput.middleCols((t0 + off) * B, (t1 - t0) * B).noalias() +=
          params_.conv_w.middleCols(static_cast<Eigen::Index>(k) * D, D).transpose() * out_cols;
    }

    if (cfg_.single_source < 0) {
      const auto dfused = dinput.topRows(shape_.embed_dim);
      Vector dalpha(shape_.sources);
      for (int s = 0; s < shape_.sources; ++s) {
        dalpha(s) = (dfused.array() * batch.sources[static_cast<std::size_t>(s)].array()).sum();
      }
      const Vector& a = cache.alpha;
      g.theta.col(0) = (a.array() * (dalpha.array() - a.dot(dalpha))).matrix();
    }
    return g;
  }

  double loss(const Batch& batch) const { return forward(batch).loss; }

  /// Rounds every parameter to float32, the checkpoint storage precision.
  void quantize_to_float() {
    params_.for_each([](const std::string&, Matrix& m) {
      m = m.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
    });
  }

 private:
  Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, SplitMix64* rng) const {
    Matrix m = Matrix::Ones(rows, cols);
    if (rng == nullptr || cfg_.dropout <= 0.0) return m;
    const double keep_scale = 1.0 / (1.0 - cfg_.dropout);
    for (Eigen::Index j = 0; j < cols; ++j) {
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng->uniform() < cfg_.dropout ? 0.0 : keep_scale;
    }
    return m;
  }

  detail::LstmCache lstm_forward(const LstmDirection& p, const Matrix& x, const Batch& batch, bool reverse) const {
    const Eigen::Index T = batch.steps;
    const Eigen::Index B = batch.size;
    const Eigen::Index H = cfg_.lstm_hidden;
    detail::LstmCache lc;
    Matrix pre = p.w_ih * x;
    pre.colwise() += p.b.col(0);
    lc.gates.resize(4 * H, T * B);
    lc.c.resize(H, T * B);
    lc.tanh_c.resize(H, T * B);
    lc.h_prev.resize(H, T * B);
    lc.c_prev.resize(H, T * B);
    lc.out = Matrix::Zero(H, T * B);
    Matrix h = Matrix::Zero(H, B);
    Matrix c = Matrix::Zero(H, B);
    for (Eigen::Index s = 0; s < T; ++s) {
      const Eigen::Index t = reverse ? T - 1 - s : s;
      const Eigen::Index col = t * B;
      Matrix a = pre.middleCols(col, B);
      a.noalias() += p.w_hh * h;
      const Matrix i = detail::sigmoid(a.topRows(H));
      const Matrix f = detail::sigmoid(a.middleRows(H, H));
      const Matrix gg = a.middleRows(2 * H, H).array().tanh().matrix();
      const Matrix o = detail::sigmoid(a.bottomRows(H));
      const Matrix c_new = (f.array() * c.array() + i.array() * gg.array()).matrix();
      const Matrix tc = c_new.array().tanh().matrix();
      lc.gates.block(0, col, H, B) = i;
      lc.gates.block(H, col, H, B) = f;
      lc.gates.block(2 * H, col, H, B) = gg;
      lc.gates.block(3 * H, col, H, B) = o;
      lc.h_prev.middleCols(col, B) = h;
      lc.c_prev.middleCols(col, B) = c;
      lc.c.middleCols(col, B) = c_new;
      lc.tanh_c.middleCols(col, B) = tc;
      for (Eigen::Index b = 0; b < B; ++b) {
        if (batch.mask(0, col + b) == 0.0) continue;
        c.col(b) = c_new.col(b);
        h.col(b) = (o.col(b).array() * tc.col(b).array()).matrix();
        lc.out.col(col + b) = h.col(b);
      }
    }
    return lc;
  }

  template <class DOut>
  void lstm_backward(const LstmDirection& p, const Matrix& x, const detail::LstmCache& lc, const Batch& batch,
                     bool reverse, const DOut& dout, LstmDirection& grad, Matrix& dx) const {
    const Eigen::Index T = batch.steps;
    const Eigen::Index B = batch.size;
    const Eigen::Index H = cfg_.lstm_hidden;
    Matrix dA = Matrix::Zero(4 * H, T * B);
    Matrix dh_next = Matrix::Zero(H, B);
    Matrix dc_next = Matrix::Zero(H, B);
    for (Eigen::Index s = T - 1; s >= 0; --s) {
      const Eigen::Index t = reverse ? T - 1 - s : s;
      const Eigen::Index col = t * B;
      const Matrix dh = dout.middleCols(col, B) + dh_next;
      const auto i = lc.gates.block(0, col, H, B).array();
      const auto f = lc.gates.block(H, col, H, B).array();
      const auto gg = lc.gates.block(2 * H, col, H, B).array();
      const auto o = lc.gates.block(3 * H, col, H, B).array();
      const auto tc = lc.tanh_c.middleCols(col, B).array();
      const auto cp = lc.c_prev.middleCols(col, B).array();

      const Matrix dc = (dc_next.array() + dh.array() * o * (1.0 - tc.square())).matrix();
      Matrix da(4 * H, B);
      da.topRows(H) = (dc.array() * gg * i * (1.0 - i)).matrix();
      da.middleRows(H, H) = (dc.array() * cp * f * (1.0 - f)).matrix();
      da.middleRows(2 * H, H) = (dc.array() * i * (1.0 - gg.square())).matrix();
      da.bottomRows(H) = (dh.array() * tc * o * (1.0 - o)).matrix();
      Matrix dc_prev = (dc.array() * f).matrix();
      for (Eigen::Index b = 0; b < B; ++b) {
        if (batch.mask(0, col + b) != 0.0) continue;
        // Masked step passes state through unchanged.
        da.col(b).setZero();
        dc_prev.col(b) = dc_next.col(b);
      }
      Matrix dh_prev = p.w_hh.transpose() * da;
      for (Eigen::Index b = 0; b < B; ++b) {
        if (batch.mask(0, col + b) == 0.0) dh_prev.col(b) = dh.col(b);
      }
      dA.middleCols(col, B) = da;
      dh_next = std::move(dh_prev);
      dc_next = std::move(dc_prev);
    }
    grad.w_ih.noalias() += dA * x.transpose();
    grad.w_hh.noalias() += dA * lc.h_prev.transpose();
    grad.b += dA.rowwise().sum();
    dx.noalias() += p.w_ih.transpose() * dA;
  }

  void initialize() {
    SplitMix64 rng(cfg_.seed * 0x9E3779B97F4A7C15ULL + 17);
    auto uniform = [&](Eigen::Index r, Eigen::Index c, double fan_in) {
      const double bound = 1.0 / std::sqrt(fan_in);
      Matrix m(r, c);
      for (Eigen::Index j = 0; j < c; ++j) {
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = rng.uniform(-bound, bound);
      }
      return m;
    };
    const int D = shape_.input_dim();
    const int F = cfg_.conv_filters;
    const int H = cfg_.lstm_hidden;
    params_.theta = Matrix::Zero(shape_.sources, 1);
    params_.conv_w = uniform(F, static_cast<Eigen::Index>(cfg_.kernel) * D, static_cast<double>(cfg_.kernel) * D);
    params_.conv_b = uniform(F, 1, static_cast<double>(cfg_.kernel) * D);
    params_.lstm.clear();
    for (int layer = 0; layer < cfg_.lstm_layers; ++layer) {
      const int in = layer == 0 ? F : 2 * H;
      for (int dir = 0; dir < 2; ++dir) {
        LstmDirection d;
        d.w_ih = uniform(4 * H, in, in);
        d.w_hh = uniform(4 * H, H, H);
        d.b = uniform(4 * H, 1, H);
        params_.lstm.push_back(std::move(d));
      }
    }
    params_.dense_w = uniform(cfg_.classes, 2 * H, 2.0 * H);
    params_.dense_b = uniform(cfg_.classes, 1, 2.0 * H);
  }

  NetworkShape shape_;
  ModelConfig cfg_;
  Parameters params_;
};

// ---------------------------------------------------------------------------
// Optimizer

struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;
  Parameters m;
  Parameters v;

  explicit Adam(const Parameters& like) : m(like.zeros_like()), v(like.zeros_like()) {}

  void step(Parameters& params, const Parameters& grad, double lr) {
    ++step_count;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    std::vector<Matrix*> p_list;
    std::vector<const Matrix*> g_list;
    std::vector<Matrix*> m_list;
    std::vector<Matrix*> v_list;
    params.for_each([&](const std::string&, Matrix& x) { p_list.push_back(&x); });
    grad.for_each([&](const std::string&, const Matrix& x) { g_list.push_back(&x); });
    m.for_each([&](const std::string&, Matrix& x) { m_list.push_back(&x); });
    v.for_each([&](const std::string&, Matrix& x) { v_list.push_back(&x); });
    for (std::size_t i = 0; i < p_list.size(); ++i) {
      auto& mm = *m_list[i];
      auto& vv = *v_list[i];
      const auto& gg = *g_list[i];
      mm = beta1 * mm + (1.0 - beta1) * gg;
      vv = beta2 * vv + (1.0 - beta2) * gg.cwiseProduct(gg);
      p_list[i]->array() -= lr * (mm.array() / c1) / ((vv.array() / c2).sqrt() + eps);
    }
  }
};

// ---------------------------------------------------------------------------
// Trained model, training loop, inference

struct TrainedModel {
  ModelConfig config;
  NetworkShape shape;
  Network network;
  MarkerStandardizer standardizer;
  std::vector<std::string> source_names;
  std::string fingerprint;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double train_macro_f1 = 0.0;
  std::vector<double> alpha;
};

struct TrainResult {
  TrainedModel model;
  std::vector<EpochRecord> history;
};

inline NetworkShape infer_shape(const std::vector<Sample>& data) {
  if (data.empty()) throw Error(Errc::EmptyDataset, "no training samples");
  NetworkShape shape;
  const Sample& first = data.front();
  shape.sources = static_cast<int>(first.sources.size());
  shape.embed_dim = first.sources.empty() ? 0 : static_cast<int>(first.sources.front().cols());
  shape.marker_dim = static_cast<int>(first.markers.cols());
  for (const auto& s : data) {
    if (static_cast<int>(s.sources.size()) != shape.sources || s.markers.cols() != shape.marker_dim) {
      throw Error(Errc::InvalidConfig, s.id + ": representation width differs from the rest of the dataset");
    }
    for (const auto& m : s.sources) {
      if (m.cols() != shape.embed_dim) throw Error(Errc::InvalidConfig, s.id + ": embedding dim differs");
    }
  }
  return shape;
}

inline MarkerStandardizer fit_standardizer(const std::vector<Sample>& data) {
  std::vector<std::vector<double>> rows;
  for (const auto& s : data) {
    for (Eigen::Index t = 0; t < s.markers.rows(); ++t) {
      std::vector<double> row(static_cast<std::size_t>(s.markers.cols()));
      for (Eigen::Index j = 0; j < s.markers.cols(); ++j) row[static_cast<std::size_t>(j)] = s.markers(t, j);
      rows.push_back(std::move(row));
    }
  }
  return MarkerStandardizer::fit(rows);
}

/// argmax with ties to the lower class index.
inline int argmax_class(const Vector& probs) {
  int best = 0;
  for (int c = 1; c < probs.size(); ++c) {
    if (probs(c) > probs(best)) best = c;
  }
  return best;
}

struct Prediction {
  int label = 0;
  Vector probs;
};

inline std::vector<Prediction> predict_all(const TrainedModel& model, const std::vector<Sample>& samples,
                                           int batch_size = 32) {
  std::vector<Prediction> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<const Sample*> chunk;
    for (std::size_t i = start; i < std::min(samples.size(), start + static_cast<std::size_t>(batch_size)); ++i) {
      chunk.push_back(&samples[i]);
    }
    Batch batch = make_batch(chunk, model.shape, model.standardizer);
    batch.labels.clear();
    const auto cache = model.network.forward(batch);
    for (Eigen::Index b = 0; b < batch.size; ++b) {
      out.push_back({argmax_class(cache.probs.col(b)), cache.probs.col(b)});
    }
  }
  return out;
}

inline Prediction predict(const TrainedModel& model, const Sample& sample) {
  if (sample.chunks() < 1) throw Error(Errc::EmptyUtterance, sample.id + ": no chunks");
  return predict_all(model, {sample}, 1).front();
}

/// Invoked after every optimizer step; used by tests to observe alpha.
using StepObserver = std::function<void(long step, const Network&)>;

inline void check_simplex(const Vector& alpha) {
  if ((alpha.array() < 0.0).any() || std::abs(alpha.sum() - 1.0) > 1e-12) {
    throw Error(Errc::NonFiniteValue, "fusion weights left the probability simplex");
  }
}

inline TrainResult train(const std::vector<Sample>& data, const ModelConfig& cfg, const StepObserver& observer = {}) {
  cfg.validate();
  if (data.empty()) throw Error(Errc::EmptyDataset, "no training samples");
  for (const auto& s : data) {
    if (s.chunks() < 1) throw Error(Errc::EmptyUtterance, s.id + ": no chunks");
    if (s.label < 0 || s.label >= cfg.classes) throw Error(Errc::OutOfRange, s.id + ": label outside class range");
  }
  TrainResult result;
  TrainedModel& model = result.model;
  model.config = cfg;
  model.shape = infer_shape(data);
  model.standardizer = fit_standardizer(data);
  model.network = Network(model.shape, cfg);
  Adam adam(model.network.params());
  SplitMix64 rng(cfg.seed ^ 0xD1B54A32D192ED03ULL);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> labels;
  for (const auto& s : data) labels.push_back(s.label);
  long step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<const Sample*> members;
      for (std::size_t i = start; i < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++i) {
        members.push_back(&data[order[i]]);
      }
      const Batch batch = make_batch(members, model.shape, model.standardizer);
      const auto cache = model.network.forward(batch, &rng);
      if (!std::isfinite(cache.loss)) {
        throw Error(Errc::NonFiniteLoss, "loss became " + std::to_string(cache.loss) + " at epoch " + std::to_string(epoch) +
                                             ", step " + std::to_string(step));
      }
      loss_sum += cache.loss * static_cast<double>(members.size());
      const Parameters grad = model.network.backward(batch, cache);
      adam.step(model.network.params(), grad, cfg.learning_rate);
      ++step;
      check_simplex(model.network.alpha());
      if (observer) observer(step, model.network);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(data.size());
    const auto preds = predict_all(model, data);
    std::vector<int> predicted;
    for (const auto& p : preds) predicted.push_back(p.label);
    rec.train_macro_f1 = macro_f1(predicted, labels, cfg.classes);
    const Vector a = model.network.alpha();
    rec.alpha.assign(a.data(), a.data() + a.size());
    result.history.push_back(rec);
    if (cfg.target_train_f1 > 0.0 && rec.train_macro_f1 >= cfg.target_train_f1) break;
  }
  model.network.quantize_to_float();
  return result;
}

// ---------------------------------------------------------------------------
// Gradient verification

struct GradCheckEntry {
  std::string tensor;
  Eigen::Index row = 0;
  Eigen::Index col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckOptions {
  int coordinates = 200;
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor: |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  std::uint64_t seed = 1;
  bool throw_on_failure = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = true;

  std::vector<GradCheckEntry> worst(std::size_t n) const {
    auto sorted = entries;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.rel_error > b.rel_error; });
    sorted.resize(std::min(n, sorted.size()));
    return sorted;
  }
  std::vector<std::string> tensors_covered() const {
    std::vector<std::string> names;
    for (const auto& e : entries) {
      if (std::find(names.begin(), names.end(), e.tensor) == names.end()) names.push_back(e.tensor);
    }
    return names;
  }
};

using GradientFn = std::function<Parameters(const Network&, const Batch&)>;

inline Parameters analytic_gradient(const Network& net, const Batch& batch) {
  return net.backward(batch, net.forward(batch));
}

/// Central differences against `gradient` on coordinates spread over every
/// tensor (all of theta; the rest sampled evenly). Dropout is off.
inline GradCheckReport grad_check(Network& net, const Batch& batch, const GradCheckOptions& opts = {},
                                  const GradientFn& gradient = analytic_gradient) {
  const Parameters grad = gradient(net, batch);
  std::vector<std::pair<std::string, Matrix*>> tensors;
  net.params().for_each([&](const std::string& name, Matrix& m) { tensors.emplace_back(name, &m); });
  std::vector<const Matrix*> grads;
  grad.for_each([&](const std::string&, const Matrix& m) { grads.push_back(&m); });

  // Even share per tensor; budget a small tensor cannot use goes to the others.
  std::vector<Eigen::Index> quota(tensors.size(), 0);
  Eigen::Index budget = opts.coordinates;
  for (bool progress = true; budget > 0 && progress;) {
    progress = false;
    for (std::size_t ti = 0; ti < tensors.size() && budget > 0; ++ti) {
      if (quota[ti] < tensors[ti].second->size()) {
        ++quota[ti];
        --budget;
        progress = true;
      }
    }
  }

  SplitMix64 rng(opts.seed);
  GradCheckReport report;
  for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
    Matrix& p = *tensors[ti].second;
    const Eigen::Index size = p.size();
    std::vector<Eigen::Index> picks;
    if (size <= quota[ti]) {
      picks.resize(static_cast<std::size_t>(size));
      std::iota(picks.begin(), picks.end(), 0);
    } else {
      while (static_cast<Eigen::Index>(picks.size()) < quota[ti]) {
        const auto idx = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(size)));
        if (std::find(picks.begin(), picks.end(), idx) == picks.end()) picks.push_back(idx);
      }
    }
    for (const auto idx : picks) {
      const Eigen::Index r = idx % p.rows();
      const Eigen::Index c = idx / p.rows();
      const double saved = p(r, c);
      p(r, c) = saved + opts.step;
      const double up = net.loss(batch);
      p(r, c) = saved - opts.step;
      const double down = net.loss(batch);
      p(r, c) = saved;
      GradCheckEntry e;
      e.tensor = tensors[ti].first;
      e.row = r;
      e.col = c;
      e.numeric = (up - down) / (2.0 * opts.step);
      e.analytic = (*grads[ti])(r, c);
      e.rel_error = std::abs(e.analytic - e.numeric) / std::max({std::abs(e.analytic), std::abs(e.numeric), opts.floor});
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      if (e.rel_error >= opts.tolerance) report.passed = false;
      report.entries.push_back(std::move(e));
    }
  }
  if (!report.passed && opts.throw_on_failure) {
    std::ostringstream msg;
    msg << "max relative error " << report.max_rel_error << "; worst:";
    for (const auto& e : report.worst(5)) {
      msg << ' ' << e.tensor << '[' << e.row << ',' << e.col << "] analytic=" << e.analytic << " numeric=" << e.numeric;
    }
    throw Error(Errc::GradientMismatch, msg.str());
  }
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoints: <dir>/meta.json + <dir>/weights.bin (float32 LE, manifest order)

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"conv_filters", c.conv_filters}, {"kernel", c.kernel},         {"stride", c.stride},
          {"lstm_layers", c.lstm_layers},   {"lstm_hidden", c.lstm_hidden}, {"dropout", c.dropout},
          {"classes", c.classes},           {"learning_rate", c.learning_rate}, {"epochs", c.epochs},
          {"batch_size", c.batch_size},     {"seed", c.seed},             {"target_train_f1", c.target_train_f1},
          {"single_source", c.single_source}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.conv_filters = j.at("conv_filters").get<int>();
  c.kernel = j.at("kernel").get<int>();
  c.stride = j.at("stride").get<int>();
  c.lstm_layers = j.at("lstm_layers").get<int>();
  c.lstm_hidden = j.at("lstm_hidden").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.classes = j.at("classes").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.target_train_f1 = j.value("target_train_f1", 0.0);
  c.single_source = j.value("single_source", -1);
  return c;
}

inline void save_checkpoint(const std::filesystem::path& dir, const TrainedModel& model) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = nlohmann::json::array();
  std::string blob;
  model.network.params().for_each([&](const std::string& name, const Matrix& m) {
    manifest.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", blob.size()}});
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        detail::put_u32le(blob, std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c))));
      }
    }
  });
  const Vector alpha = model.network.alpha();
  nlohmann::json meta = {
      {"format_version", kCheckpointVersion},
      {"config", model_config_to_json(model.config)},
      {"shape", {{"sources", model.shape.sources}, {"embed_dim", model.shape.embed_dim}, {"marker_dim", model.shape.marker_dim}}},
      {"sources", model.source_names},
      {"tensors", manifest},
      {"alpha", std::vector<double>(alpha.data(), alpha.data() + alpha.size())},
      {"marker_stats", {{"mean", model.standardizer.mean}, {"std", model.standardizer.stddev}}},
      {"seed", model.config.seed},
      {"fingerprint", model.fingerprint},
  };
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
  std::ofstream bin(dir / "weights.bin", std::ios::binary);
  if (!bin) throw Error(Errc::Io, "cannot write " + (dir / "weights.bin").string());
  bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

inline TrainedModel load_checkpoint(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  if (!std::filesystem::exists(meta_path)) throw Error(Errc::MissingFile, meta_path.string());
  nlohmann::json meta;
  try {
    std::ifstream in(meta_path);
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::MalformedJson, meta_path.string() + ": " + e.what());
  }
  if (meta.value("format_version", 0) != kCheckpointVersion) {
    throw Error(Errc::VersionMismatch, meta_path.string() + ": unsupported checkpoint version");
  }
  TrainedModel model;
  try {
    model.config = model_config_from_json(meta.at("config"));
    model.shape.sources = meta.at("shape").at("sources").get<int>();
    model.shape.embed_dim = meta.at("shape").at("embed_dim").get<int>();
    model.shape.marker_dim = meta.at("shape").at("marker_dim").get<int>();
    model.source_names = meta.at("sources").get<std::vector<std::string>>();
    model.standardizer.mean = meta.at("marker_stats").at("mean").get<std::vector<double>>();
    model.standardizer.stddev = meta.at("marker_stats").at("std").get<std::vector<double>>();
    model.fingerprint = meta.value("fingerprint", "");
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorruptHeader, meta_path.string() + ": " + e.what());
  }
  model.network = Network(model.shape, model.config);
  const auto blob = detail::slurp(dir / "weights.bin");
  const auto& tensors = meta.at("tensors");
  std::size_t idx = 0;
  model.network.params().for_each([&](const std::string& name, Matrix& m) {
    if (idx >= tensors.size()) throw Error(Errc::CorruptHeader, "tensor manifest too short");
    const auto& t = tensors[idx++];
    const auto rows = t.at("shape").at(0).get<Eigen::Index>();
    const auto cols = t.at("shape").at(1).get<Eigen::Index>();
    if (t.at("name").get<std::string>() != name || rows != m.rows() || cols != m.cols()) {
      throw Error(Errc::CorruptHeader, "tensor manifest mismatch at " + name);
    }
    std::size_t off = t.at("offset").get<std::size_t>();
    if (off + static_cast<std::size_t>(rows * cols) * 4 > blob.size()) throw Error(Errc::TruncatedData, "weights.bin too short for " + name);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c, off += 4) {
        const float v = std::bit_cast<float>(detail::read_u32le(blob.data() + off));
        if (!std::isfinite(v)) throw Error(Errc::NonFiniteValue, "non-finite weight in " + name);
        m(r, c) = v;
      }
    }
  });
  if (idx != tensors.size()) throw Error(Errc::CorruptHeader, "tensor manifest has extra entries");
  return model;
}

}  // namespace fluency
