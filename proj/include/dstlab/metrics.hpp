#pragma once

#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dstlab/corpus.hpp"
#include "dstlab/postprocess.hpp"
#include "dstlab/state_codec.hpp"

namespace dstlab {

struct TurnKey {
  std::string dialogue_id;
  int turn_index = 0;
  auto operator<=>(const TurnKey&) const = default;
  bool operator==(const TurnKey&) const = default;
};

/// One scored turn. A prediction that failed to parse is scored as the
/// empty state.
struct EvalTurn {
  TurnKey key;
  DialogueState predicted;
  DialogueState reference;
  bool parse_failed = false;
};

class AlignmentError : public std::runtime_error {
 public:
  AlignmentError(std::vector<TurnKey> missing, std::vector<TurnKey> unexpected, std::vector<TurnKey> duplicated);
  const std::vector<TurnKey>& missing() const { return missing_; }
  const std::vector<TurnKey>& unexpected() const { return unexpected_; }
  const std::vector<TurnKey>& duplicated() const { return duplicated_; }

 private:
  std::vector<TurnKey> missing_, unexpected_, duplicated_;
};

/// Pairs every USER-turn gold state with exactly one prediction, sorted by
/// (dialogue id, turn index). Throws AlignmentError listing missing,
/// unexpected and duplicated keys.
std::vector<EvalTurn> align(const std::vector<PredictionRecord>& predictions, const std::vector<Dialogue>& references);

/// Unclassified slots are compared exactly (as categorical).
SlotGroup group_or_exact(const SlotTaxonomy& taxonomy, const SlotKey& key);

/// Same (domain, slot) key sets and every value pair matches.
bool state_matches(const DialogueState& pred, const DialogueState& ref, const SlotTaxonomy& taxonomy,
                   const MatchPolicy& policy);

/// 0 for an empty list.
double jga(const std::vector<EvalTurn>& turns, const SlotTaxonomy& taxonomy, const MatchPolicy& policy);

struct TurnScore {
  long correct = 0;
  long count = 0;
  double jga() const { return count == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(count); }
  bool operator==(const TurnScore&) const = default;
};

std::map<int, TurnScore> jga_per_turn(const std::vector<EvalTurn>& turns, const SlotTaxonomy& taxonomy,
                                      const MatchPolicy& policy);

struct GroupScore {
  long tp = 0, fp = 0, fn = 0;
  double precision() const;
  double recall() const;
  /// 0 when precision or recall is 0.
  double f1() const;
  bool operator==(const GroupScore&) const = default;
};

/// Micro-averaged counts per group, over all turns. Only groups with at
/// least one predicted or reference triple appear. Predicted slots outside
/// the taxonomy belong to no group and are skipped. Throws CorpusError
/// naming an unclassified reference slot.
std::map<SlotGroup, GroupScore> slot_f1_by_group(const std::vector<EvalTurn>& turns, const SlotTaxonomy& taxonomy,
                                                 const MatchPolicy& policy);

struct SlotErrors {
  long insertions = 0;
  long deletions = 0;
  /// Value ratio for every turn where the key is in both prediction and
  /// reference, in turn order.
  std::vector<double> ratios;

  long imperfect() const;
  /// Ranking score: insertions + deletions + imperfect matches.
  long score() const { return insertions + deletions + imperfect(); }
  bool operator==(const SlotErrors&) const = default;
};

/// Slots ranked by score (descending, ties by key). top_k <= 0 keeps all.
std::vector<std::pair<SlotKey, SlotErrors>> error_breakdown(const std::vector<EvalTurn>& turns,
                                                            const SlotTaxonomy& taxonomy,
                                                            const MatchPolicy& policy, int top_k);

/// Fraction of turns whose predicted domain set equals the reference set.
double domain_accuracy(const std::vector<EvalTurn>& turns);

// ---- reports -------------------------------------------------------------------------

/// A results table in the layout: header row of column names, then one row
/// per approach with percentages (blank cells allowed, e.g. group headers).
struct ComparisonTable {
  std::vector<std::string> columns;
  struct Row {
    std::string label;
    std::vector<std::optional<double>> values;  // percent
  };
  std::vector<Row> rows;
};

/// Dev/test JGA of the three context strategies on SpokenWOZ, as published.
ComparisonTable published_context_table();

inline constexpr int kReportSchemaVersion = 1;

struct EvalReport {
  MatchPolicy policy;
  /// Exact-match JGA (no post-processing) and JGA under `policy`.
  double jga = 0.0;
  double jga_post = 0.0;
  double domain_accuracy = 0.0;
  std::map<int, TurnScore> per_turn;
  std::map<SlotGroup, GroupScore> group_f1;
  std::vector<std::pair<SlotKey, SlotErrors>> slot_errors;
  long n_dialogues = 0;
  long n_turns = 0;
  long n_parse_failures = 0;
  std::optional<ComparisonTable> comparison;

  bool empty() const { return n_turns == 0; }
};

/// Per-turn, group and error analyses use `policy`; `jga` always uses the
/// exact policy.
EvalReport evaluate(const std::vector<EvalTurn>& turns, const SlotTaxonomy& taxonomy, const MatchPolicy& policy,
                    int top_k = 6);

enum class ReportFormat { Json, Csv, Svg };
ReportFormat report_format_from_string(std::string_view s);

std::string report_json(const EvalReport& r);
/// Long format: section,key,metric,value.
std::string report_csv(const EvalReport& r);
std::string comparison_csv(const ComparisonTable& t);
std::string svg_group_f1(const EvalReport& r);
std::string svg_per_turn(const EvalReport& r);
std::string svg_slot_errors(const EvalReport& r);

/// Writes report.json, report.csv (+ comparison.csv when the report carries
/// a table), group_f1.svg, per_turn_jga.svg, slot_errors.svg as selected.
/// Returns the written paths. Throws std::runtime_error when a file cannot be
/// written.
std::vector<std::filesystem::path> render_report(const EvalReport& r, const std::set<ReportFormat>& formats,
                                                 const std::filesystem::path& dir);

}  // namespace dstlab
