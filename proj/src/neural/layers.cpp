#include "dstlab/neural/layers.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dstlab::neural {

void init_uniform(Param& p, Eigen::Index fan_in, SplitMix64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < p.value.rows(); ++i)
    for (Eigen::Index j = 0; j < p.value.cols(); ++j) p.value(i, j) = rng.uniform(-bound, bound);
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

Matrix softmax_rows(const Matrix& scores) {
  Matrix out(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double mx = scores.row(i).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      out(i, j) = std::exp(scores(i, j) - mx);
      sum += out(i, j);
    }
    out.row(i) /= sum;
  }
  return out;
}

Matrix sinusoidal_positions(Eigen::Index rows, Eigen::Index dim) {
  Matrix pe(rows, dim);
  for (Eigen::Index pos = 0; pos < rows; ++pos) {
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double expo = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, expo);
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

// ---- Linear ----------------------------------------------------------------

Linear::Linear(const std::string& name, int in, int out, bool bias, SplitMix64& rng)
    : weight_(name + ".weight", in, out), has_bias_(bias) {
  init_uniform(weight_, in, rng);
  if (has_bias_) {
    bias_ = Param(name + ".bias", 1, out);
    init_uniform(bias_, in, rng);
  }
}

Matrix Linear::forward(const Matrix& x) const {
  if (x.cols() != weight_.value.rows())
    throw std::invalid_argument(weight_.name + ": input has " + std::to_string(x.cols()) +
                                " columns, expected " + std::to_string(weight_.value.rows()));
  Matrix y = x * weight_.value;
  if (has_bias_) y.rowwise() += bias_.value.row(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy) {
  weight_.grad.noalias() += x.transpose() * dy;
  if (has_bias_) bias_.grad.row(0) += dy.colwise().sum();
  return dy * weight_.value.transpose();
}

Matrix Linear::backward_input(const Matrix& dy) const { return dy * weight_.value.transpose(); }

void Linear::collect(ParamList& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

// ---- LayerNorm ---------------------------------------------------------------

LayerNorm::LayerNorm(const std::string& name, int dim)
    : gamma_(name + ".gamma", 1, dim), beta_(name + ".beta", 1, dim) {
  gamma_.value.setOnes();
}

Matrix LayerNorm::forward(const Matrix& x, Cache* cache) const {
  const auto d = static_cast<double>(x.cols());
  Matrix xhat(x.rows(), x.cols());
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).sum() / d;
    const RowVector centered = x.row(i).array() - mean;
    const double var = centered.squaredNorm() / d;
    inv_std(i) = 1.0 / std::sqrt(var + kEps);
    xhat.row(i) = centered * inv_std(i);
  }
  Matrix y = xhat.array().rowwise() * gamma_.value.row(0).array();
  y.rowwise() += beta_.value.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Matrix LayerNorm::backward(const Cache& cache, const Matrix& dy) {
  gamma_.grad.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  beta_.grad.row(0) += dy.colwise().sum();

  const auto d = static_cast<double>(dy.cols());
  Matrix dxhat = dy.array().rowwise() * gamma_.value.row(0).array();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double sum_dxhat = dxhat.row(i).sum();
    const double sum_dxhat_xhat = dxhat.row(i).dot(cache.xhat.row(i));
    dx.row(i) = (cache.inv_std(i) / d) *
                (d * dxhat.row(i).array() - sum_dxhat - cache.xhat.row(i).array() * sum_dxhat_xhat)
                    .matrix();
  }
  return dx;
}

void LayerNorm::collect(ParamList& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

// ---- MultiHeadAttention ---------------------------------------------------------

MultiHeadAttention::MultiHeadAttention(const std::string& name, int d_model, int n_heads,
                                       SplitMix64& rng)
    : d_model_(d_model), n_heads_(n_heads) {
  if (n_heads <= 0 || d_model % n_heads != 0)
    throw std::invalid_argument(name + ": d_model must be divisible by n_heads");
  wq_ = Linear(name + ".q", d_model, d_model, true, rng);
  wk_ = Linear(name + ".k", d_model, d_model, false, rng);
  wv_ = Linear(name + ".v", d_model, d_model, true, rng);
  wo_ = Linear(name + ".o", d_model, d_model, true, rng);
}

Matrix MultiHeadAttention::forward(const Matrix& x, const Matrix& memory, Cache* cache) const {
  if (x.cols() != d_model_ || memory.cols() != d_model_)
    throw std::invalid_argument("attention: expected " + std::to_string(d_model_) + " columns");
  if (memory.rows() == 0) throw std::invalid_argument("attention: empty memory");

  const int dh = d_model_ / n_heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix q = wq_.forward(x);
  Matrix k = wk_.forward(memory);
  Matrix v = wv_.forward(memory);

  Matrix concat(x.rows(), d_model_);
  std::vector<Matrix> probs;
  probs.reserve(n_heads_);
  for (int h = 0; h < n_heads_; ++h) {
    const auto qh = q.middleCols(h * dh, dh);
    const auto kh = k.middleCols(h * dh, dh);
    const auto vh = v.middleCols(h * dh, dh);
    Matrix p = softmax_rows((qh * kh.transpose()) * scale);
    concat.middleCols(h * dh, dh) = p * vh;
    probs.push_back(std::move(p));
  }
  Matrix y = wo_.forward(concat);
  if (cache) {
    cache->x = x;
    cache->memory = memory;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->concat = std::move(concat);
  }
  return y;
}

MultiHeadAttention::Grads MultiHeadAttention::backward(const Cache& c, const Matrix& dy) {
  const int dh = d_model_ / n_heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Matrix dconcat = wo_.backward(c.concat, dy);
  Matrix dq(c.q.rows(), d_model_), dk(c.k.rows(), d_model_), dv(c.v.rows(), d_model_);
  for (int h = 0; h < n_heads_; ++h) {
    const Matrix& p = c.probs[h];
    const auto doh = dconcat.middleCols(h * dh, dh);
    const Matrix dp = doh * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh) = p.transpose() * doh;
    // softmax Jacobian, row by row
    const Eigen::VectorXd row_dot = (dp.array() * p.array()).rowwise().sum();
    Matrix ds = p.array() * (dp.array().colwise() - row_dot.array());
    ds *= scale;
    dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  Grads g;
  g.dx = wq_.backward(c.x, dq);
  g.dmemory = wk_.backward(c.memory, dk) + wv_.backward(c.memory, dv);
  return g;
}

void MultiHeadAttention::collect(ParamList& out) {
  wq_.collect(out);
  wk_.collect(out);
  wv_.collect(out);
  wo_.collect(out);
}

// ---- FeedForward ------------------------------------------------------------------

namespace {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

}  // namespace

FeedForward::FeedForward(const std::string& name, int d_model, int hidden, SplitMix64& rng)
    : in_(name + ".in", d_model, hidden, true, rng), out_(name + ".out", hidden, d_model, true, rng) {}

Matrix FeedForward::forward(const Matrix& x, Cache* cache) const {
  Matrix pre = in_.forward(x);
  Matrix act = pre.unaryExpr([](double v) { return gelu(v); });
  Matrix y = out_.forward(act);
  if (cache) {
    cache->x = x;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return y;
}

Matrix FeedForward::backward(const Cache& c, const Matrix& dy) {
  const Matrix dact = out_.backward(c.act, dy);
  const Matrix dpre = dact.array() * c.pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
  return in_.backward(c.x, dpre);
}

void FeedForward::collect(ParamList& out) {
  in_.collect(out);
  out_.collect(out);
}

}  // namespace dstlab::neural
