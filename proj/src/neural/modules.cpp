#include "dstlab/neural/modules.hpp"

#include <stdexcept>

namespace dstlab::neural {

Matrix downsample(const Matrix& features, int stride) {
  if (stride < 1) throw std::invalid_argument("downsample: stride must be >= 1");
  if (features.rows() == 0) throw std::invalid_argument("downsample: empty input");
  const Eigen::Index out_rows = (features.rows() + stride - 1) / stride;
  Matrix out(out_rows, features.cols());
  for (Eigen::Index i = 0; i < out_rows; ++i) out.row(i) = features.row(i * stride);
  return out;
}

void SpeechEmbedding::validate() const {
  if (rows.rows() < 1) throw std::invalid_argument("speech embedding must have at least one row");
  if (!rows.allFinite()) throw std::invalid_argument("speech embedding has non-finite entries");
}

EncoderStub::EncoderStub(int feature_dim, int out_dim, std::uint64_t seed) {
  SplitMix64 rng(seed);
  proj_ = Linear("encoder_stub.proj", feature_dim, out_dim, true, rng);
}

// ---- Connector -------------------------------------------------------------------

void ConnectorConfig::validate() const {
  if (d_in < 1 || d_model < 1 || n_heads < 1 || ff_mult < 1)
    throw std::invalid_argument("connector config: dimensions must be >= 1");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("connector config: d_model must be divisible by n_heads");
}

Connector::Connector(const ConnectorConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  SplitMix64 rng(cfg.seed);
  in_proj_ = Linear("connector.in_proj", cfg.d_in, cfg.d_model, true, rng);
  ln1_ = LayerNorm("connector.ln1", cfg.d_model);
  attn_ = MultiHeadAttention("connector.self_attn", cfg.d_model, cfg.n_heads, rng);
  ln2_ = LayerNorm("connector.ln2", cfg.d_model);
  ff_ = FeedForward("connector.ff", cfg.d_model, cfg.ff_mult * cfg.d_model, rng);
}

Matrix Connector::forward(const Matrix& features, Cache* cache) const {
  if (!features.allFinite()) throw std::invalid_argument("connector: non-finite input");
  if (features.rows() == 0) throw std::invalid_argument("connector: empty input");
  Matrix x0 = in_proj_.forward(features) + sinusoidal_positions(features.rows(), cfg_.d_model);
  if (!cache) {
    const Matrix a = ln1_.forward(x0);
    const Matrix x1 = x0 + attn_.forward(a, a);
    return x1 + ff_.forward(ln2_.forward(x1));
  }
  cache->input = features;
  cache->a = ln1_.forward(x0, &cache->ln1);
  cache->x1 = x0 + attn_.forward(cache->a, cache->a, &cache->attn);
  const Matrix b = ln2_.forward(cache->x1, &cache->ln2);
  Matrix y = cache->x1 + ff_.forward(b, &cache->ff);
  cache->x0 = std::move(x0);
  return y;
}

Matrix Connector::backward(const Cache& c, const Matrix& dy) {
  Matrix dx1 = dy + ln2_.backward(c.ln2, ff_.backward(c.ff, dy));
  const auto g = attn_.backward(c.attn, dx1);
  const Matrix dx0 = dx1 + ln1_.backward(c.ln1, g.dx + g.dmemory);
  return in_proj_.backward(c.input, dx0);
}

void Connector::collect(ParamList& out) {
  in_proj_.collect(out);
  ln1_.collect(out);
  attn_.collect(out);
  ln2_.collect(out);
  ff_.collect(out);
}

// ---- Decoder / Compressor ----------------------------------------------------------

CompressorConfig CompressorConfig::published_preset(int n_queries) {
  CompressorConfig cfg;
  cfg.d_model = 1024;
  cfg.n_heads = 16;
  cfg.n_layers = 1;
  cfg.n_queries = n_queries;
  return cfg;
}

void CompressorConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || n_layers < 1 || ff_mult < 1)
    throw std::invalid_argument("compressor config: dimensions must be >= 1");
  if (n_queries < 1) throw std::invalid_argument("compressor config: n_queries must be >= 1");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("compressor config: d_model must be divisible by n_heads");
}

DecoderLayer::DecoderLayer(const std::string& name, int d_model, int n_heads, int ff_hidden,
                           SplitMix64& rng)
    : ln1_(name + ".ln1", d_model),
      ln2_(name + ".ln2", d_model),
      ln3_(name + ".ln3", d_model),
      self_attn_(name + ".self_attn", d_model, n_heads, rng),
      cross_attn_(name + ".cross_attn", d_model, n_heads, rng),
      ff_(name + ".ff", d_model, ff_hidden, rng) {}

Matrix DecoderLayer::forward(const Matrix& target, const Matrix& memory, Cache* cache) const {
  if (!cache) {
    const Matrix a = ln1_.forward(target);
    const Matrix t1 = target + self_attn_.forward(a, a);
    const Matrix t2 = t1 + cross_attn_.forward(ln2_.forward(t1), memory);
    return t2 + ff_.forward(ln3_.forward(t2));
  }
  cache->a = ln1_.forward(target, &cache->ln1);
  const Matrix t1 = target + self_attn_.forward(cache->a, cache->a, &cache->self_attn);
  cache->b = ln2_.forward(t1, &cache->ln2);
  const Matrix t2 = t1 + cross_attn_.forward(cache->b, memory, &cache->cross_attn);
  cache->c = ln3_.forward(t2, &cache->ln3);
  return t2 + ff_.forward(cache->c, &cache->ff);
}

DecoderLayer::Grads DecoderLayer::backward(const Cache& c, const Matrix& dy) {
  const Matrix dt2 = dy + ln3_.backward(c.ln3, ff_.backward(c.ff, dy));
  const auto cross = cross_attn_.backward(c.cross_attn, dt2);
  const Matrix dt1 = dt2 + ln2_.backward(c.ln2, cross.dx);
  const auto self = self_attn_.backward(c.self_attn, dt1);
  Grads g;
  g.dtarget = dt1 + ln1_.backward(c.ln1, self.dx + self.dmemory);
  g.dmemory = cross.dmemory;
  return g;
}

void DecoderLayer::collect(ParamList& out) {
  ln1_.collect(out);
  self_attn_.collect(out);
  ln2_.collect(out);
  cross_attn_.collect(out);
  ln3_.collect(out);
  ff_.collect(out);
}

Compressor::Compressor(const CompressorConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  SplitMix64 rng(cfg.seed);
  queries_ = Param("compressor.queries", cfg.n_queries, cfg.d_model);
  init_uniform(queries_, cfg.d_model, rng);
  for (int l = 0; l < cfg.n_layers; ++l)
    layers_.emplace_back("compressor.layer" + std::to_string(l), cfg.d_model, cfg.n_heads,
                         cfg.ff_mult * cfg.d_model, rng);
}

Matrix Compressor::forward(const Matrix& memory, Cache* cache) const {
  if (memory.cols() != cfg_.d_model)
    throw std::invalid_argument("compressor: memory has " + std::to_string(memory.cols()) +
                                " columns, expected d_model=" + std::to_string(cfg_.d_model));
  if (memory.rows() == 0) throw std::invalid_argument("compressor: empty memory");
  Matrix t = queries_.value;
  if (cache) {
    cache->inputs.clear();
    cache->layers.assign(layers_.size(), {});
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (cache) {
      cache->inputs.push_back(t);
      t = layers_[l].forward(t, memory, &cache->layers[l]);
    } else {
      t = layers_[l].forward(t, memory);
    }
  }
  return t;
}

Matrix Compressor::backward(const Cache& cache, const Matrix& dz) {
  Matrix dt = dz;
  Matrix dmemory;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    auto g = layers_[l].backward(cache.layers[l], dt);
    dmemory = dmemory.size() == 0 ? std::move(g.dmemory) : Matrix(dmemory + g.dmemory);
    dt = std::move(g.dtarget);
  }
  queries_.grad += dt;
  return dmemory;
}

void Compressor::collect(ParamList& out) {
  out.push_back(&queries_);
  for (auto& l : layers_) l.collect(out);
}

// ---- Pipeline --------------------------------------------------------------------

SpeechPipeline::SpeechPipeline(int feature_dim, const ConnectorConfig& connector_cfg, int stride_,
                               std::uint64_t encoder_seed)
    : stride(stride_),
      encoder(feature_dim, connector_cfg.d_in, encoder_seed),
      connector(connector_cfg) {
  if (stride < 1) throw std::invalid_argument("pipeline: stride must be >= 1");
}

SpeechEmbedding SpeechPipeline::embed(const Matrix& frames, const std::string& dialogue_id,
                                      int turn_index) const {
  SpeechEmbedding e;
  e.rows = connector.forward(encoder.forward(downsample(frames, stride)));
  e.dialogue_id = dialogue_id;
  e.turn_index = turn_index;
  e.validate();
  return e;
}

}  // namespace dstlab::neural
