#include "dstlab/neural/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace dstlab::neural {

const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::EncoderStub: return "encoder_stub";
    case ParamGroup::Connector: return "connector";
    case ParamGroup::Compressor: return "compressor";
    case ParamGroup::Readout: return "readout";
  }
  return "?";
}

bool ParameterMask::trainable(ParamGroup g) const {
  switch (g) {
    case ParamGroup::EncoderStub: return encoder_stub;
    case ParamGroup::Connector: return connector;
    case ParamGroup::Compressor: return compressor;
    case ParamGroup::Readout: return readout;
  }
  return false;
}

// ---- ProbeModel ----------------------------------------------------------------------

ProbeModel::ProbeModel(const ModelConfig& cfg) : cfg_(cfg) {
  if (cfg.head_sizes.empty()) throw std::invalid_argument("probe model: no readout heads");
  int stub_out = cfg.compressor.d_model;
  if (cfg.use_connector) {
    if (cfg.connector.d_model != cfg.compressor.d_model)
      throw std::invalid_argument("probe model: connector and compressor d_model differ");
    connector_.emplace(cfg.connector);
    stub_out = cfg.connector.d_in;
  }
  encoder_ = EncoderStub(cfg.feature_dim, stub_out, cfg.encoder_seed);
  compressor_ = Compressor(cfg.compressor);
  int total = 0;
  for (int h : cfg.head_sizes) {
    if (h < 1) throw std::invalid_argument("probe model: head size must be >= 1");
    head_offsets_.push_back(total);
    total += h;
  }
  SplitMix64 rng(cfg.readout_seed);
  const int readout_in = cfg.readout == ReadoutKind::Flatten
                             ? cfg.compressor.n_queries * cfg.compressor.d_model
                             : cfg.compressor.d_model;
  readout_ = Linear("readout", readout_in, total, true, rng);
}

namespace {

RowVector flatten(const Matrix& z) {
  return Eigen::Map<const RowVector>(z.data(), z.size());
}

}  // namespace

RowVector ProbeModel::readout_forward(const Matrix& z, Matrix* scores) const {
  if (cfg_.readout == ReadoutKind::Flatten) return readout_.forward(flatten(z)).row(0);
  Matrix s = readout_.forward(z);  // queries × classes
  RowVector logit(s.cols());
  for (Eigen::Index c = 0; c < s.cols(); ++c) {
    const double mx = s.col(c).maxCoeff();
    logit(c) = mx + std::log((s.col(c).array() - mx).exp().sum());
  }
  if (scores) *scores = std::move(s);
  return logit;
}

Matrix ProbeModel::readout_backward(const Matrix& z, const Matrix& scores, const RowVector& logit,
                                    const RowVector& dlogit, bool accumulate) {
  if (cfg_.readout == ReadoutKind::Flatten) {
    const Matrix flat = flatten(z);
    const Matrix dflat = accumulate ? readout_.backward(flat, dlogit) : readout_.backward_input(dlogit);
    return Eigen::Map<const Matrix>(dflat.data(), z.rows(), z.cols());
  }
  // d logit_c / d s_kc = softmax over k of s_.c
  Matrix ds = (scores.rowwise() - logit).array().exp();
  ds.array().rowwise() *= dlogit.array();
  return accumulate ? readout_.backward(z, ds) : readout_.backward_input(ds);
}

RowVector ProbeModel::logits(const Matrix& frames) const {
  Matrix x = encoder_.forward(downsample(frames, cfg_.stride));
  if (connector_) x = connector_->forward(x);
  return readout_forward(compressor_.forward(x));
}

std::vector<int> ProbeModel::predict(const Matrix& frames) const {
  const RowVector l = logits(frames);
  std::vector<int> out;
  for (std::size_t h = 0; h < cfg_.head_sizes.size(); ++h) {
    Eigen::Index best = 0;
    l.segment(head_offsets_[h], cfg_.head_sizes[h]).maxCoeff(&best);
    out.push_back(static_cast<int>(best));
  }
  return out;
}

double ProbeModel::head_loss(const RowVector& logit, const std::vector<int>& labels,
                             RowVector& dlogit) const {
  if (labels.size() != cfg_.head_sizes.size())
    throw std::invalid_argument("probe model: label count does not match heads");
  double total = 0.0;
  dlogit = RowVector::Zero(logit.size());
  for (std::size_t h = 0; h < cfg_.head_sizes.size(); ++h) {
    const int off = head_offsets_[h];
    const int n = cfg_.head_sizes[h];
    const int label = labels[h];
    if (label < 0 || label >= n) throw std::invalid_argument("probe model: label out of range");
    const auto seg = logit.segment(off, n);
    const double mx = seg.maxCoeff();
    const RowVector e = (seg.array() - mx).exp().matrix();
    const double sum = e.sum();
    total += -(seg(label) - mx - std::log(sum));
    dlogit.segment(off, n) = e / sum;
    dlogit(off + label) -= 1.0;
  }
  return total;
}

Matrix ProbeModel::memory(const Matrix& frames) const {
  Matrix x = encoder_.forward(downsample(frames, cfg_.stride));
  if (connector_) x = connector_->forward(x);
  return x;
}

double ProbeModel::loss_from_memory(const Matrix& memory, const std::vector<int>& labels,
                                    const ParameterMask* mask) {
  Compressor::Cache comp_cache;
  const Matrix z = compressor_.forward(memory, mask ? &comp_cache : nullptr);
  Matrix scores;
  const RowVector logit = readout_forward(z, &scores);
  RowVector dlogit;
  const double total = head_loss(logit, labels, dlogit);
  if (!mask) return total;
  if (mask->connector || mask->encoder_stub)
    throw std::logic_error("loss_from_memory: lower groups must be frozen");
  const Matrix dz = readout_backward(z, scores, logit, dlogit, mask->readout);
  if (mask->compressor) compressor_.backward(comp_cache, dz);
  return total;
}

double ProbeModel::loss(const Example& ex, const ParameterMask* mask) {
  const Matrix down = downsample(ex.frames, cfg_.stride);
  const Matrix stub_out = encoder_.forward(down);
  Connector::Cache conn_cache;
  const Matrix memory = connector_ ? connector_->forward(stub_out, mask ? &conn_cache : nullptr) : stub_out;
  Compressor::Cache comp_cache;
  const Matrix z = compressor_.forward(memory, mask ? &comp_cache : nullptr);
  Matrix scores;
  const RowVector logit = readout_forward(z, &scores);
  RowVector dlogit;
  const double total = head_loss(logit, ex.labels, dlogit);
  if (!mask) return total;

  const bool need_comp = mask->compressor || mask->connector || mask->encoder_stub;
  const bool need_conn = mask->connector || mask->encoder_stub;
  const Matrix dz = readout_backward(z, scores, logit, dlogit, mask->readout);
  if (!need_comp) return total;
  Matrix dmemory = compressor_.backward(comp_cache, dz);
  if (!need_conn) return total;
  if (connector_) dmemory = connector_->backward(conn_cache, dmemory);
  if (mask->encoder_stub) encoder_.backward(down, dmemory);
  return total;
}

ParamList ProbeModel::params(ParamGroup g) {
  ParamList out;
  switch (g) {
    case ParamGroup::EncoderStub: encoder_.collect(out); break;
    case ParamGroup::Connector:
      if (connector_) connector_->collect(out);
      break;
    case ParamGroup::Compressor: compressor_.collect(out); break;
    case ParamGroup::Readout: readout_.collect(out); break;
  }
  return out;
}

ParamList ProbeModel::all_params() {
  ParamList out;
  for (auto g : {ParamGroup::EncoderStub, ParamGroup::Connector, ParamGroup::Compressor,
                 ParamGroup::Readout}) {
    auto p = params(g);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

void ProbeModel::zero_grad() {
  for (Param* p : all_params()) p->zero_grad();
}

// ---- training -------------------------------------------------------------------------

double mean_loss(ProbeModel& model, const std::vector<Example>& data) {
  double total = 0.0;
  for (const auto& ex : data) total += model.loss(ex);
  return total / static_cast<double>(data.size());
}

double accuracy(const ProbeModel& model, const std::vector<Example>& data) {
  std::size_t hit = 0, n = 0;
  for (const auto& ex : data) {
    const auto pred = model.predict(ex.frames);
    for (std::size_t h = 0; h < pred.size(); ++h) {
      if (!ex.scored.empty() && !ex.scored[h]) continue;
      ++n;
      hit += pred[h] == ex.labels[h] ? 1 : 0;
    }
  }
  return n == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(n);
}

TrainResult train(ProbeModel& model, const ParameterMask& mask, const std::vector<Example>& data,
                  const TrainHyper& hyper) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (!mask.any()) throw std::invalid_argument("train: no trainable parameter group");
  if (hyper.epochs < 0 || hyper.lr < 0.0) throw std::invalid_argument("train: bad hyperparameters");

  ParamList trainable;
  for (auto g : {ParamGroup::EncoderStub, ParamGroup::Connector, ParamGroup::Compressor,
                 ParamGroup::Readout}) {
    if (!mask.trainable(g)) continue;
    auto p = model.params(g);
    trainable.insert(trainable.end(), p.begin(), p.end());
  }

  // Adam moments, indexed like `trainable`.
  std::vector<Matrix> m1, m2;
  if (hyper.optimizer == Optimizer::Adam) {
    for (Param* p : trainable) {
      m1.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      m2.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;

  // With the lower stack frozen its output is fixed; compute it once.
  const bool cache_memory = !mask.encoder_stub && !mask.connector;
  std::vector<Matrix> memories;
  if (cache_memory) {
    memories.reserve(data.size());
    for (const auto& ex : data) memories.push_back(model.memory(ex.frames));
  }

  std::size_t step = 0;
  auto apply_update = [&](double scale) {
    ++step;
    for (std::size_t i = 0; i < trainable.size(); ++i) {
      Param& p = *trainable[i];
      if (hyper.optimizer == Optimizer::GradientDescent) {
        p.value -= (hyper.lr * scale) * p.grad;
      } else {
        const Matrix g = p.grad * scale;
        m1[i] = kBeta1 * m1[i] + (1.0 - kBeta1) * g;
        m2[i] = kBeta2 * m2[i] + (1.0 - kBeta2) * g.cwiseProduct(g);
        const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
        p.value.array() -=
            hyper.lr * (m1[i].array() / c1) / ((m2[i].array() / c2).sqrt() + kAdamEps);
      }
    }
  };
  auto example_loss = [&](std::size_t i, const ParameterMask* acc) {
    return cache_memory ? model.loss_from_memory(memories[i], data[i].labels, acc)
                        : model.loss(data[i], acc);
  };

  const bool full_batch = hyper.batch_size <= 0 || static_cast<std::size_t>(hyper.batch_size) >= data.size();
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  SplitMix64 shuffle_rng(hyper.seed);

  TrainResult result;
  const double inv_n = 1.0 / static_cast<double>(data.size());
  for (int epoch = 0; epoch <= hyper.epochs; ++epoch) {
    const bool last = epoch == hyper.epochs;
    if (full_batch || last || hyper.lr == 0.0) {
      model.zero_grad();
      double total = 0.0;
      const ParameterMask* acc = (last || hyper.lr == 0.0) ? nullptr : &mask;
      for (std::size_t i = 0; i < data.size(); ++i) total += example_loss(i, acc);
      const double loss = total * inv_n;
      result.loss_trace.push_back(loss);
      if (!std::isfinite(loss)) throw TrainingDiverged(result.loss_trace);
      if (acc) apply_update(inv_n);
      continue;
    }
    // Minibatch epoch: the recorded loss is the running mean over the epoch.
    shuffle_rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hyper.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hyper.batch_size));
      model.zero_grad();
      for (std::size_t j = start; j < end; ++j) total += example_loss(order[j], &mask);
      apply_update(1.0 / static_cast<double>(end - start));
    }
    result.loss_trace.push_back(total * inv_n);
    if (!std::isfinite(result.loss_trace.back())) throw TrainingDiverged(result.loss_trace);
  }
  model.zero_grad();
  return result;
}

// ---- gradient check -----------------------------------------------------------------

const char* to_string(GradCheckModule m) {
  switch (m) {
    case GradCheckModule::Connector: return "connector";
    case GradCheckModule::Compressor: return "compressor";
    case GradCheckModule::Readout: return "readout";
  }
  return "?";
}

namespace {

/// Uniform harness over the three checked modules: scalar loss is the sum of
/// all outputs, so the upstream gradient is a matrix of ones.
struct CheckTarget {
  GradCheckModule kind;
  std::optional<Connector> connector;
  std::optional<Compressor> compressor;
  std::optional<Linear> readout;
  Matrix input;

  double loss() const {
    switch (kind) {
      case GradCheckModule::Connector: return connector->forward(input).sum();
      case GradCheckModule::Compressor: return compressor->forward(input).sum();
      case GradCheckModule::Readout: return readout->forward(input).sum();
    }
    return 0.0;
  }

  void backward() {
    switch (kind) {
      case GradCheckModule::Connector: {
        Connector::Cache c;
        const Matrix y = connector->forward(input, &c);
        connector->backward(c, Matrix::Ones(y.rows(), y.cols()));
        break;
      }
      case GradCheckModule::Compressor: {
        Compressor::Cache c;
        const Matrix y = compressor->forward(input, &c);
        compressor->backward(c, Matrix::Ones(y.rows(), y.cols()));
        break;
      }
      case GradCheckModule::Readout: {
        const Matrix y = readout->forward(input);
        readout->backward(input, Matrix::Ones(y.rows(), y.cols()));
        break;
      }
    }
  }

  ParamList params() {
    ParamList out;
    if (connector) connector->collect(out);
    if (compressor) compressor->collect(out);
    if (readout) readout->collect(out);
    return out;
  }
};

}  // namespace

GradCheckResult grad_check(const GradCheckSpec& spec) {
  if (!(spec.eps > 0.0)) throw std::invalid_argument("grad_check: eps must be > 0");
  if (spec.rows < 1 || spec.cols < 1) throw std::invalid_argument("grad_check: empty input shape");

  CheckTarget t;
  t.kind = spec.module;
  SplitMix64 rng(combine64(spec.seed, 0x6772616463686bull));
  switch (spec.module) {
    case GradCheckModule::Connector: {
      ConnectorConfig cfg;
      cfg.d_in = spec.cols;
      cfg.d_model = spec.d_model;
      cfg.n_heads = spec.n_heads;
      cfg.seed = spec.seed;
      t.connector.emplace(cfg);
      break;
    }
    case GradCheckModule::Compressor: {
      CompressorConfig cfg;
      cfg.d_model = spec.cols;
      cfg.n_heads = spec.n_heads;
      cfg.n_queries = spec.n_queries;
      cfg.seed = spec.seed;
      t.compressor.emplace(cfg);
      break;
    }
    case GradCheckModule::Readout:
      t.readout.emplace("readout", spec.cols, spec.readout_out, true, rng);
      break;
  }
  t.input = Matrix(spec.rows, spec.cols);
  for (Eigen::Index i = 0; i < t.input.size(); ++i) t.input.data()[i] = rng.uniform(-1.0, 1.0);

  ParamList params = t.params();
  for (Param* p : params) p->zero_grad();
  t.backward();

  GradCheckResult result;
  for (Param* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& w = p->value.data()[i];
      const double orig = w;
      w = orig + spec.eps;
      const double up = t.loss();
      w = orig - spec.eps;
      const double down = t.loss();
      w = orig;
      const double numeric = (up - down) / (2.0 * spec.eps);
      const double analytic = p->grad.data()[i];
      const double rel =
          std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      ++result.n_checked;
      if (rel > result.max_rel_error || !std::isfinite(rel)) {
        result.max_rel_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
        result.worst_param = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

// ---- checkpoints ------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'D', 'S', 'T', 'L', 'A', 'B', 'C', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > s_.size())
      throw std::runtime_error("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ParamList& params) {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const Param* p : params) {
    put_u32(out, static_cast<std::uint32_t>(p->name.size()));
    out += p->name;
    put_u32(out, static_cast<std::uint32_t>(p->value.rows()));
    put_u32(out, static_cast<std::uint32_t>(p->value.cols()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i) put_f64(out, p->value.data()[i]);
  }
  return out;
}

void decode_checkpoint(const std::string& bytes, const ParamList& params) {
  Reader r(bytes);
  if (r.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic))
    throw std::runtime_error("not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto n = r.u32();
  std::map<std::string, Matrix> tensors;
  for (std::uint32_t t = 0; t < n; ++t) {
    const std::string name = r.bytes(r.u32());
    const auto rows = r.u32();
    const auto cols = r.u32();
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64();
    tensors.emplace(name, std::move(m));
  }
  for (Param* p : params) {
    auto it = tensors.find(p->name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint lacks tensor " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw std::runtime_error("checkpoint shape mismatch for " + p->name);
    p->value = it->second;
  }
}

void save_checkpoint(const std::string& path, const ParamList& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path);
  const std::string bytes = encode_checkpoint(params);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void load_checkpoint(const std::string& path, const ParamList& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  decode_checkpoint(ss.str(), params);
}

std::string loss_trace_csv(const std::vector<double>& trace) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) out << i << ',' << trace[i] << '\n';
  return out.str();
}

}  // namespace dstlab::neural
