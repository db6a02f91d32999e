#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dstlab/corpus.hpp"
#include "dstlab/neural/modules.hpp"
#include "dstlab/state_codec.hpp"

namespace dstlab {

using neural::Compressor;
using neural::SpeechEmbedding;
using neural::SpeechPipeline;

/// Rows [start, start + rows) of speech_part belong to turn_index.
struct TurnSpan {
  int turn_index = 0;
  Eigen::Index start = 0;
  Eigen::Index rows = 0;
  bool compressed = false;
  bool operator==(const TurnSpan&) const = default;
};

struct AssembledContext {
  Strategy strategy = Strategy::FullSpoken;
  Matrix speech_part;
  std::string text_part;
  std::vector<TurnSpan> spans;

  Eigen::Index total_rows() const { return speech_part.rows(); }
};

/// `turns` holds h_1..h_n in order. multimodal -> h_n; full -> h_1 || ... ||
/// h_n; compressed -> z_1 || ... || z_{n-1} || h_n (z_n too when
/// compress_current is set). Throws std::invalid_argument when turns is
/// empty, or compressed is requested without a compressor.
AssembledContext assemble(Strategy strategy, const std::vector<SpeechEmbedding>& turns,
                          const Compressor* compressor = nullptr, bool compress_current = false);

/// Rows the assembled context has at turn n, from the formulas alone.
/// `turn_rows` are rows(h_1..h_n).
Eigen::Index expected_rows(Strategy strategy, const std::vector<Eigen::Index>& turn_rows, int n_queries,
                           bool compress_current = false);

// ---- predictors -----------------------------------------------------------------------
//
// The predictors stand in for the language model. They read gold states
// (plus seeded noise) rather than embeddings: they exist to exercise the
// harness and the metrics, not to model speech understanding.

struct PredictorInput {
  const Dialogue& dialogue;
  int turn_index;
  const AssembledContext& context;
  const PromptSpec& prompt;
};

class StatePredictor {
 public:
  virtual ~StatePredictor() = default;
  /// Raw model output: the completion that follows prompt.text().
  virtual std::string predict(const PredictorInput& in) const = 0;
  virtual std::string name() const = 0;
};

/// Completion text that makes prompt.text() + completion a full state
/// object. For multimodal prompts the completion starts with the
/// user_last_turn hypothesis.
std::string state_completion(const PromptSpec& prompt, const DialogueState& state, const std::string& hypothesis);

class OracleExact : public StatePredictor {
 public:
  std::string predict(const PredictorInput& in) const override;
  std::string name() const override { return "exact"; }
};

struct NoiseConfig {
  std::uint64_t seed = 0;
  /// Probability that a (slot, value) is omitted.
  double drop_prob = 0.08;
  /// Probability that one character of a value is replaced.
  double typo_prob = 0.08;
  /// Probability that an HH:MM value is written in 12-hour form instead.
  double time_format_prob = 0.15;
  /// Probability that a turn's output is cut short (exercises repair).
  double truncate_prob = 0.03;
  /// Probability that a word of the ASR hypothesis is misspelled.
  double asr_typo_prob = 0.1;
};

/// Seeded perturbations. Each decision is a hash of (seed, dialogue, slot,
/// value), so a corrupted value stays corrupted on every later turn that
/// still carries it.
class OracleNoisy : public StatePredictor {
 public:
  explicit OracleNoisy(NoiseConfig cfg) : cfg_(cfg) {}
  std::string predict(const PredictorInput& in) const override;
  std::string name() const override { return "noisy"; }
  /// The perturbed state without output formatting.
  DialogueState perturb(const std::string& dialogue_id, const DialogueState& gold) const;

 private:
  NoiseConfig cfg_;
};

/// Sees only the longest suffix of context spans whose rows fit in the
/// budget, and predicts only slots whose latest value was set in a visible
/// turn.
class OracleTruncated : public StatePredictor {
 public:
  explicit OracleTruncated(Eigen::Index row_budget) : budget_(row_budget) {}
  std::string predict(const PredictorInput& in) const override;
  std::string name() const override { return "truncated"; }
  /// First turn index inside the budget (n + 1 when nothing fits).
  int first_visible_turn(const AssembledContext& ctx) const;

 private:
  Eigen::Index budget_;
};

/// USER turn at which the current value of `key` (as of turn_index) was
/// last set.
int last_update_turn(const Dialogue& d, int turn_index, const SlotKey& key);

// ---- running dialogues ----------------------------------------------------------------

struct RunOptions {
  Strategy strategy = Strategy::FullSpoken;
  bool compress_current = false;
  /// Used for turns without features.
  std::uint64_t vocab_seed = 0;
  int frames_per_token = 6;
};

struct TurnPrediction {
  int turn_index = 0;
  std::string raw_output;
  DialogueState state;
  bool parse_failed = false;
  std::vector<std::string> diagnostics;
  Eigen::Index context_rows = 0;
};

/// h_i for every turn. Turns without features get transcript_features.
std::vector<SpeechEmbedding> embed_dialogue(const Dialogue& d, const SpeechPipeline& pipeline,
                                            const RunOptions& options);

/// Runs the predictor on every USER turn in order. In multimodal mode the
/// user_last_turn hypothesis produced at turn t becomes the USER text of
/// turn t in later histories. Unparseable outputs yield an empty state and a
/// diagnostic.
std::vector<TurnPrediction> run_dialogue(const Dialogue& d, const StatePredictor& predictor,
                                         const SpeechPipeline& pipeline, const Compressor* compressor,
                                         const RunOptions& options);

struct LengthRow {
  std::string strategy;  // "multimodal", "full", "compressed"
  int n_queries = 0;     // 0 unless compressed
  int turn_index = 0;
  double mean_rows = 0.0;
  long count = 0;
};

/// Mean context rows per USER turn index and strategy, from the formulas,
/// with rows(h_i) = ceil(frames_i / stride). Compressed strategies appear once
/// per entry of n_queries_list.
std::vector<LengthRow> context_length_report(const std::vector<Dialogue>& corpus,
                                             const std::vector<Strategy>& strategies,
                                             const std::vector<int>& n_queries_list, int stride,
                                             const RunOptions& options = {});

std::string length_report_csv(const std::vector<LengthRow>& rows);

}  // namespace dstlab
