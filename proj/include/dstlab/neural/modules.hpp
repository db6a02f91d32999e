#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dstlab/neural/layers.hpp"

namespace dstlab::neural {

/// Keeps frames 0, stride, 2*stride, ...; output has ceil(frames/stride) rows.
Matrix downsample(const Matrix& features, int stride = 6);

/// Per-turn speech representation, one row per (down-sampled) token.
struct SpeechEmbedding {
  Matrix rows;
  std::string dialogue_id;
  int turn_index = 0;

  Eigen::Index n_rows() const { return rows.rows(); }
  /// Throws std::invalid_argument when rows < 1 or any entry is non-finite.
  void validate() const;
};

/// Stand-in for the speech encoder: a frame-wise affine map. In the real
/// system this is the pretrained encoder that gets frozen for DST training.
class EncoderStub {
 public:
  EncoderStub() = default;
  EncoderStub(int feature_dim, int out_dim, std::uint64_t seed);

  Matrix forward(const Matrix& frames) const { return proj_.forward(frames); }
  Matrix backward(const Matrix& frames, const Matrix& dy) { return proj_.backward(frames, dy); }
  void collect(ParamList& out) { proj_.collect(out); }
  int in_dim() const { return proj_.in_dim(); }
  int out_dim() const { return proj_.out_dim(); }

 private:
  Linear proj_;
};

struct ConnectorConfig {
  int d_in = 8;
  int d_model = 16;
  int n_heads = 2;
  int ff_mult = 4;
  std::uint64_t seed = 11;

  void validate() const;
};

/// Input projection + sinusoidal positions, then one pre-norm transformer
/// encoder layer:
///   x0 = in_proj(f) + pe
///   x1 = x0 + SelfAttn(LN1(x0))
///   y  = x1 + FF(LN2(x1))
class Connector {
 public:
  struct Cache {
    Matrix input;
    Matrix x0;
    Matrix a;
    LayerNorm::Cache ln1;
    MultiHeadAttention::Cache attn;
    Matrix x1;
    LayerNorm::Cache ln2;
    FeedForward::Cache ff;
  };

  Connector() = default;
  explicit Connector(const ConnectorConfig& cfg);

  /// Throws std::invalid_argument on non-finite input or wrong width.
  Matrix forward(const Matrix& features, Cache* cache = nullptr) const;
  /// Returns d loss / d features.
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(ParamList& out);

  const ConnectorConfig& config() const { return cfg_; }
  MultiHeadAttention& self_attention() { return attn_; }
  const MultiHeadAttention& self_attention() const { return attn_; }
  LayerNorm& norm1() { return ln1_; }

 private:
  ConnectorConfig cfg_;
  Linear in_proj_;
  LayerNorm ln1_;
  MultiHeadAttention attn_;
  LayerNorm ln2_;
  FeedForward ff_;
};

struct CompressorConfig {
  int d_model = 16;
  int n_heads = 2;
  int n_layers = 1;
  int n_queries = 10;
  int ff_mult = 4;
  std::uint64_t seed = 7;

  /// Full-size setting (1024 hidden, 16 heads, one layer). Documentation only.
  static CompressorConfig published_preset(int n_queries = 10);
  void validate() const;
};

/// Pre-norm transformer decoder layer over an unmasked target:
///   t1 = t + SelfAttn(LN1(t))
///   t2 = t1 + CrossAttn(LN2(t1), memory)
///   y  = t2 + FF(LN3(t2))
class DecoderLayer {
 public:
  struct Cache {
    LayerNorm::Cache ln1, ln2, ln3;
    Matrix a, b, c;
    MultiHeadAttention::Cache self_attn, cross_attn;
    FeedForward::Cache ff;
  };
  struct Grads {
    Matrix dtarget;
    Matrix dmemory;
  };

  DecoderLayer() = default;
  DecoderLayer(const std::string& name, int d_model, int n_heads, int ff_hidden, SplitMix64& rng);

  Matrix forward(const Matrix& target, const Matrix& memory, Cache* cache = nullptr) const;
  Grads backward(const Cache& cache, const Matrix& dy);
  void collect(ParamList& out);

  MultiHeadAttention& self_attention() { return self_attn_; }
  MultiHeadAttention& cross_attention() { return cross_attn_; }
  const MultiHeadAttention& cross_attention() const { return cross_attn_; }

 private:
  LayerNorm ln1_, ln2_, ln3_;
  MultiHeadAttention self_attn_, cross_attn_;
  FeedForward ff_;
};

/// Query-based pooling: a stack of decoder layers whose target sequence is
/// the trainable query bank and whose memory is one turn's embedding. The
/// output always has n_queries rows.
class Compressor {
 public:
  struct Cache {
    std::vector<Matrix> inputs;  // target fed to each layer
    std::vector<DecoderLayer::Cache> layers;
  };

  Compressor() = default;
  explicit Compressor(const CompressorConfig& cfg);

  Matrix forward(const Matrix& memory, Cache* cache = nullptr) const;
  /// Returns d loss / d memory; accumulates into the query bank and layers.
  Matrix backward(const Cache& cache, const Matrix& dz);
  void collect(ParamList& out);

  const CompressorConfig& config() const { return cfg_; }
  Param& query_bank() { return queries_; }
  const Param& query_bank() const { return queries_; }
  DecoderLayer& layer(std::size_t i) { return layers_.at(i); }
  std::size_t n_layers() const { return layers_.size(); }

 private:
  CompressorConfig cfg_;
  Param queries_;
  std::vector<DecoderLayer> layers_;
};

/// encoder stub -> x`stride` down-sampling -> connector. The stub is applied
/// after down-sampling, which is equivalent because it acts frame-wise.
struct SpeechPipeline {
  int stride = 6;
  EncoderStub encoder;
  Connector connector;

  SpeechPipeline() = default;
  SpeechPipeline(int feature_dim, const ConnectorConfig& connector_cfg, int stride,
                 std::uint64_t encoder_seed);

  SpeechEmbedding embed(const Matrix& frames, const std::string& dialogue_id,
                        int turn_index) const;
};

}  // namespace dstlab::neural
