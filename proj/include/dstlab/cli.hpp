#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dstlab/context.hpp"
#include "dstlab/metrics.hpp"
#include "dstlab/neural/probe.hpp"

namespace dstlab::cli {

namespace fs = std::filesystem;

/// Exit codes shared by all subcommands.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,        // generic error (I/O, validation)
  kAlignment = 2,      // predictions and references do not line up
  kCheckFailed = 3,    // gradient check above tolerance
};

/// Everything a run needs. Loaded from a JSON file; CLI flags override
/// individual fields.
struct RunManifest {
  fs::path corpus;
  CorpusFormat format = CorpusFormat::SyntheticJson;
  Strategy strategy = Strategy::FullSpoken;
  std::string predictor = "exact";  // exact | noisy | truncated
  std::uint64_t seed = 0;
  NoiseConfig noise;
  long row_budget = 120;  // truncated predictor only

  int feature_dim = 8;  // used when the corpus carries no features
  int stride = 6;
  int d_model = 16;
  int n_heads = 2;
  std::uint64_t model_seed = 1;
  std::optional<neural::CompressorConfig> compressor;
  bool compress_current = false;

  MatchPolicy policy;
  /// Path to an id list, or empty for the default list (SpokenWOZ only).
  std::string exclude_ids;
  fs::path out = "out";
  int workers = 1;

  /// Relative paths are resolved against base_dir.
  static RunManifest from_json(const nlohmann::ordered_json& j, const fs::path& base_dir = {});
  static RunManifest load(const fs::path& path);
  nlohmann::ordered_json to_json() const;
  /// Throws std::invalid_argument describing the first problem.
  void validate() const;
};

/// Corpus after applying the exclusion list.
std::vector<Dialogue> load_references(const RunManifest& m);

/// Path of the bundled corrupted-dialogue list.
fs::path default_exclude_list();

struct SynthOptions {
  std::uint64_t seed = 0;
  SynthConfig config;
  fs::path out = "corpus";
};

struct RunFailure {
  std::string dialogue_id;
  std::string error;
};

struct RunSummary {
  long n_dialogues = 0;
  long n_turns = 0;
  long n_parse_failures = 0;
  std::vector<RunFailure> failures;
};

int cmd_synth(const SynthOptions& opt, std::ostream& log);

/// Writes <out>/predictions.ndjson, <out>/context_length.csv and
/// <out>/run_summary.json. Per-dialogue errors are collected, not fatal.
int cmd_run(const RunManifest& m, std::ostream& log, RunSummary* summary = nullptr);

struct EvaluateOptions {
  fs::path predictions;
  RunManifest references;  // corpus, format, exclude_ids, policy
  fs::path out = "report";
  std::vector<ReportFormat> formats{ReportFormat::Json, ReportFormat::Csv, ReportFormat::Svg};
  int top_k = 6;
  /// Taxonomy JSON; empty picks the default for the corpus format.
  fs::path taxonomy;
};

int cmd_evaluate(const EvaluateOptions& opt, std::ostream& log, EvalReport* report = nullptr);

struct GradCheckRow {
  neural::GradCheckSpec spec;
  neural::GradCheckResult result;
  bool pass = false;
};

inline constexpr double kGradTolerance = 1e-4;

/// Connector, compressor with 1 and 10 queries, and readout, three shapes
/// each.
std::vector<neural::GradCheckSpec> gradcheck_suite();
std::vector<GradCheckRow> run_gradcheck_suite();
int cmd_gradcheck(std::ostream& out);

struct ProbeOptions {
  std::vector<int> n_queries{1, 4, 8};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int n_dialogues = 1500;
  int slots_per_turn = 4;
  double noise_sigma = 0.1;
  neural::ProbeConfig config;
  fs::path out = "probe.csv";
};

/// Synthetic corpus used for probing: single-turn dialogues whose USER turn
/// mentions slots_per_turn slots.
std::vector<Dialogue> probe_corpus(std::uint64_t seed, const ProbeOptions& opt);

/// CSV: seed,n_queries,heldout_accuracy,train_accuracy,n_train,n_heldout
std::string probe_csv(const std::vector<std::pair<std::uint64_t, neural::ProbeResult>>& rows);
int cmd_probe(const ProbeOptions& opt, std::ostream& log);

/// Renders the published context-strategy table to <out>/comparison.csv.
int cmd_table(const fs::path& out, std::ostream& log);

/// Full command-line entry point (argv[0] is the program name).
int main_entry(int argc, char** argv);

}  // namespace dstlab::cli
