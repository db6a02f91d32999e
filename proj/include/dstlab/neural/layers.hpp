#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "dstlab/rng.hpp"

namespace dstlab::neural {

/// Row-major so that one row is one token/frame.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;

/// A named trainable tensor with its gradient accumulator.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

using ParamList = std::vector<Param*>;

/// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
void init_uniform(Param& p, Eigen::Index fan_in, SplitMix64& rng);

/// y = x W + b
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, bool bias, SplitMix64& rng);

  Matrix forward(const Matrix& x) const;
  /// Returns dL/dx and accumulates dW, db.
  Matrix backward(const Matrix& x, const Matrix& dy);
  /// Same as backward but does not touch the parameter gradients.
  Matrix backward_input(const Matrix& dy) const;

  void collect(ParamList& out);
  int in_dim() const { return static_cast<int>(weight_.value.rows()); }
  int out_dim() const { return static_cast<int>(weight_.value.cols()); }

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  bool has_bias() const { return has_bias_; }

 private:
  Param weight_;
  Param bias_;
  bool has_bias_ = false;
};

class LayerNorm {
 public:
  struct Cache {
    Matrix xhat;
    Eigen::VectorXd inv_std;
  };

  static constexpr double kEps = 1e-5;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim);

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(ParamList& out);

  Param& gamma() { return gamma_; }
  Param& beta() { return beta_; }

 private:
  Param gamma_;
  Param beta_;
};

/// Multi-head scaled dot-product attention from `x` (queries) to `memory`
/// (keys/values). The key projection has no bias: a key bias only shifts
/// every score of a query row by the same amount and so has zero gradient.
class MultiHeadAttention {
 public:
  struct Cache {
    Matrix x;
    Matrix memory;
    Matrix q, k, v;
    std::vector<Matrix> probs;  // one (n_x × n_mem) matrix per head
    Matrix concat;
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, int d_model, int n_heads, SplitMix64& rng);

  Matrix forward(const Matrix& x, const Matrix& memory, Cache* cache = nullptr) const;

  struct Grads {
    Matrix dx;
    Matrix dmemory;
  };
  Grads backward(const Cache& cache, const Matrix& dy);

  void collect(ParamList& out);
  int n_heads() const { return n_heads_; }
  int d_model() const { return d_model_; }

  Linear& query_proj() { return wq_; }
  Linear& key_proj() { return wk_; }
  Linear& value_proj() { return wv_; }
  Linear& out_proj() { return wo_; }

 private:
  int d_model_ = 0;
  int n_heads_ = 1;
  Linear wq_, wk_, wv_, wo_;
};

/// Position-wise two-layer MLP with exact (erf) GELU.
class FeedForward {
 public:
  struct Cache {
    Matrix x;
    Matrix pre;
    Matrix act;
  };

  FeedForward() = default;
  FeedForward(const std::string& name, int d_model, int hidden, SplitMix64& rng);

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(ParamList& out);

 private:
  Linear in_, out_;
};

/// Numerically stable row-wise softmax.
Matrix softmax_rows(const Matrix& scores);

/// Sinusoidal position table, rows = positions.
Matrix sinusoidal_positions(Eigen::Index rows, Eigen::Index dim);

bool all_finite(const Matrix& m);

}  // namespace dstlab::neural
