#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dstlab/neural/modules.hpp"

namespace dstlab::neural {

enum class ParamGroup { EncoderStub, Connector, Compressor, Readout };

const char* to_string(ParamGroup g);

/// Which parameter groups may change during training.
struct ParameterMask {
  bool encoder_stub = false;
  bool connector = true;
  bool compressor = true;
  bool readout = true;

  bool trainable(ParamGroup g) const;
  bool any() const { return encoder_stub || connector || compressor || readout; }

  static ParameterMask readout_only() { return {false, false, false, true}; }
  static ParameterMask none() { return {false, false, false, false}; }
};

/// One training example: raw frames of a turn plus one class label per
/// readout head. `scored[h] == 0` excludes head h from accuracy (it still
/// contributes to the loss).
struct Example {
  Matrix frames;
  std::vector<int> labels;
  std::vector<char> scored;
};

/// Flatten: one linear map over the concatenated query outputs (convex in
/// the readout weights). QueryPooled: a linear scorer shared by all query
/// outputs, pooled per class with log-sum-exp, so the readout does not
/// depend on query order.
enum class ReadoutKind { Flatten, QueryPooled };

struct ModelConfig {
  int feature_dim = 8;
  int stride = 1;
  bool use_connector = true;
  ConnectorConfig connector;
  CompressorConfig compressor;
  std::vector<int> head_sizes;
  ReadoutKind readout = ReadoutKind::Flatten;
  std::uint64_t encoder_seed = 3;
  std::uint64_t readout_seed = 5;
};

/// encoder stub -> [connector] -> compressor -> flatten -> linear readout,
/// with one softmax head per entry of head_sizes.
class ProbeModel {
 public:
  explicit ProbeModel(const ModelConfig& cfg);

  /// Logits for each head concatenated into one row.
  RowVector logits(const Matrix& frames) const;
  std::vector<int> predict(const Matrix& frames) const;

  /// Summed cross-entropy over heads for one example. When `accumulate` is
  /// set, gradients are added for the groups the mask marks trainable.
  double loss(const Example& ex, const ParameterMask* accumulate = nullptr);

  /// Output of encoder stub + connector for a turn (the compressor memory).
  Matrix memory(const Matrix& frames) const;
  /// Loss starting from a precomputed memory. Only valid for accumulation
  /// when the encoder stub and connector are frozen.
  double loss_from_memory(const Matrix& memory, const std::vector<int>& labels,
                          const ParameterMask* accumulate = nullptr);

  ParamList params(ParamGroup g);
  ParamList all_params();
  void zero_grad();

  const ModelConfig& config() const { return cfg_; }
  Compressor& compressor() { return compressor_; }
  EncoderStub& encoder() { return encoder_; }

 private:
  ModelConfig cfg_;
  EncoderStub encoder_;
  std::optional<Connector> connector_;
  Compressor compressor_;
  Linear readout_;
  std::vector<int> head_offsets_;

  RowVector readout_forward(const Matrix& z, Matrix* scores = nullptr) const;
  /// Backprop from d loss/d logits to d loss/d z.
  Matrix readout_backward(const Matrix& z, const Matrix& scores, const RowVector& logit,
                          const RowVector& dlogit, bool accumulate);
  double head_loss(const RowVector& logit, const std::vector<int>& labels, RowVector& dlogit) const;
};

enum class Optimizer { GradientDescent, Adam };

struct TrainHyper {
  double lr = 0.05;
  int epochs = 100;
  Optimizer optimizer = Optimizer::GradientDescent;
  /// 0 = full batch. Otherwise examples are visited in a seeded shuffled
  /// order, one update per batch.
  int batch_size = 0;
  std::uint64_t seed = 0;
};

struct TrainResult {
  /// Mean loss over the whole dataset at the start of each epoch, plus the
  /// final loss.
  std::vector<double> loss_trace;
};

/// Thrown when the loss becomes non-finite. Carries the trace so far.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::vector<double> trace)
      : std::runtime_error("training diverged: loss is not finite"), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

/// Gradient training in 64-bit floats (full batch unless batch_size > 0).
/// Parameters in groups the mask freezes are never written.
TrainResult train(ProbeModel& model, const ParameterMask& mask, const std::vector<Example>& data,
                  const TrainHyper& hyper);

double mean_loss(ProbeModel& model, const std::vector<Example>& data);

/// Fraction of scored (example, head) pairs whose argmax equals the label.
double accuracy(const ProbeModel& model, const std::vector<Example>& data);

// ---- gradient verification ------------------------------------------------------

enum class GradCheckModule { Connector, Compressor, Readout };

const char* to_string(GradCheckModule m);

struct GradCheckSpec {
  GradCheckModule module = GradCheckModule::Compressor;
  int rows = 5;
  int cols = 8;
  int n_queries = 2;
  int d_model = 8;
  int n_heads = 2;
  int readout_out = 3;
  double eps = 1e-5;
  std::uint64_t seed = 1;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t n_checked = 0;
};

/// Compares analytic gradients of sum(outputs) against central differences
/// for every parameter element. Relative error is
/// |a - n| / max(1e-8, |a| + |n|). Throws std::invalid_argument if eps <= 0.
GradCheckResult grad_check(const GradCheckSpec& spec);

// ---- checkpoints ---------------------------------------------------------------------
//
// Layout (all integers little-endian):
//   8 bytes  magic "DSTLABCK"
//   u32      format version (1)
//   u32      number of tensors
//   per tensor:
//     u32 name length, name bytes (UTF-8)
//     u32 rows, u32 cols
//     rows*cols f64 little-endian, row-major

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const ParamList& params);
/// Assigns values by name; every tensor in `params` must be present with
/// matching shape. Throws std::runtime_error otherwise.
void decode_checkpoint(const std::string& bytes, const ParamList& params);

void save_checkpoint(const std::string& path, const ParamList& params);
void load_checkpoint(const std::string& path, const ParamList& params);

/// Loss trace as "epoch,loss" CSV.
std::string loss_trace_csv(const std::vector<double>& trace);

}  // namespace dstlab::neural
