#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dstlab/corpus.hpp"

namespace dstlab {

enum class Strategy { Multimodal, FullSpoken, CompressedSpoken };

/// "multimodal", "full", "compressed".
const char* to_string(Strategy s);
/// Accepts the short names above plus "full_spoken" / "compressed_spoken".
Strategy strategy_from_string(std::string_view s);

/// Compact canonical JSON, e.g.
/// {"domains":["hotel"],"predicted_state":{"hotel":{"area":"north"}}}
std::string serialize_state(const DialogueState& state);

class ParseFailure : public std::runtime_error {
 public:
  ParseFailure(const std::string& why, std::string raw)
      : std::runtime_error("unparseable state: " + why), raw_(std::move(raw)) {}
  const std::string& raw() const { return raw_; }

 private:
  std::string raw_;
};

struct ParsedState {
  DialogueState state;
  std::vector<std::string> diagnostics;
  /// Present when the object also carried a "user_last_turn" string
  /// (multimodal completions).
  std::optional<std::string> user_last_turn;
};

/// Best-effort parse of model-like output. Locates the outermost JSON
/// object, repairs trailing commas and output cut off mid-object, lower-cases
/// names. Throws ParseFailure when no object with "domains" or
/// "predicted_state" can be recovered.
ParsedState parse_state(std::string_view text);

// ---- prompts ------------------------------------------------------------------------

struct TextSegment {
  std::string text;
  bool operator==(const TextSegment&) const = default;
};

struct EmbeddingSlot {
  int turn_index = 0;
  int expected_rows = 0;
  bool operator==(const EmbeddingSlot&) const = default;
};

using PromptSegment = std::variant<TextSegment, EmbeddingSlot>;

struct PromptSpec {
  Strategy strategy = Strategy::FullSpoken;
  std::vector<PromptSegment> segments;

  /// Concatenation of all text segments.
  std::string text() const;
  std::vector<EmbeddingSlot> embedding_slots() const;
};

struct AsrHypothesis {
  int turn_index = 0;
  std::string text;
};

struct PromptOptions {
  /// Down-sampling stride used to predict embedding rows from frame counts.
  int stride = 6;
  /// Rows reserved for a compressed prior turn (compressed strategy only).
  int n_queries = 10;
  bool compress_current = false;
  /// AGENT texts for the multimodal history; turns not listed use the gold
  /// transcript.
  std::map<int, std::string> agent_texts;
};

/// Text that opens the model's completion for each layout.
std::string multimodal_prefix(const std::string& history);
inline constexpr std::string_view kSpokenPrefix = "{\"domains\":";

/// "USER: ... ; AGENT: ..." over the turns before `turn_index`. Prior USER
/// turns use their ASR hypothesis; throws std::invalid_argument if one is
/// missing.
std::string history_string(const Dialogue& dialogue, int turn_index,
                           const std::vector<AsrHypothesis>& asr_history,
                           const std::map<int, std::string>& agent_texts = {});

/// Throws std::invalid_argument if turn_index is not a USER turn.
PromptSpec build_prompt(Strategy strategy, const Dialogue& dialogue, int turn_index,
                        const std::vector<AsrHypothesis>& asr_history, const PromptOptions& options = {});

// ---- prediction files ----------------------------------------------------------------

/// One NDJSON line per evaluated turn. parsed_state is absent when the raw
/// output could not be parsed.
struct PredictionRecord {
  std::string dialogue_id;
  int turn_index = 0;
  std::string raw_output;
  std::optional<DialogueState> parsed_state;

  bool operator==(const PredictionRecord&) const = default;
};

std::string prediction_to_line(const PredictionRecord& r);
PredictionRecord prediction_from_line(std::string_view line);

/// Writes records in the given order, one per line.
void write_predictions(std::ostream& out, const std::vector<PredictionRecord>& records);
/// Blank lines are skipped. Throws std::runtime_error naming the line number
/// on malformed records.
std::vector<PredictionRecord> read_predictions(std::istream& in);

}  // namespace dstlab
