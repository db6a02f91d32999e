#include <iostream>

#include <CLI11.hpp>

#include "dstlab/cli.hpp"
#include "dstlab/log.hpp"

namespace dstlab::cli {

namespace {

// Flags shared by run and evaluate; each one overrides the manifest field
// only when given.
struct CommonFlags {
  std::string manifest, corpus, format, strategy, predictor, policy, exclude_ids, out;
  int n_queries = 0, workers = 0;
  long row_budget = -1;
  std::uint64_t seed = 0;
  bool compress_current = false;

  CLI::Option* seed_opt = nullptr;
  CLI::Option* cc_opt = nullptr;

  void add_corpus(CLI::App* app) {
    app->add_option("--manifest", manifest, "Run manifest (JSON); flags override its fields")->check(CLI::ExistingFile);
    app->add_option("--corpus", corpus, "Corpus file or directory");
    app->add_option("--format", format, "Corpus format")->check(CLI::IsMember({"synthetic", "spokenwoz"}));
    app->add_option("--exclude-ids", exclude_ids, "JSON id list of dialogues to drop (default: bundled list for spokenwoz)");
    app->add_option("--policy", policy, "Match policy: fuzzy, exact, or a JSON file");
    app->add_option("--out", out, "Output directory");
  }
  void add_run(CLI::App* app) {
    app->add_option("--strategy", strategy, "Context strategy")->check(CLI::IsMember({"multimodal", "full", "compressed"}));
    app->add_option("--n-queries", n_queries, "Queries per compressed turn (enables the compressor)")
        ->check(CLI::PositiveNumber);
    cc_opt = app->add_flag("--compress-current", compress_current, "Also compress the current turn");
    app->add_option("--predictor", predictor, "State predictor")->check(CLI::IsMember({"exact", "noisy", "truncated"}));
    seed_opt = app->add_option("--seed", seed, "Predictor seed");
    app->add_option("--row-budget", row_budget, "Context rows visible to the truncated predictor")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--workers", workers, "Worker threads (output order does not depend on it)")
        ->check(CLI::PositiveNumber);
  }

  RunManifest build() const {
    RunManifest m = manifest.empty() ? RunManifest{} : RunManifest::load(manifest);
    if (!corpus.empty()) m.corpus = corpus;
    if (!format.empty()) m.format = corpus_format_from_string(format);
    if (!strategy.empty()) m.strategy = strategy_from_string(strategy);
    if (!predictor.empty()) m.predictor = predictor;
    if (seed_opt && seed_opt->count() > 0) m.seed = seed;
    if (row_budget >= 0) m.row_budget = row_budget;
    if (n_queries > 0) {
      auto cfg = m.compressor.value_or(neural::CompressorConfig{});
      if (!m.compressor) cfg.seed = combine64(m.model_seed, 3);
      cfg.n_queries = n_queries;
      m.compressor = cfg;
    }
    if (cc_opt && cc_opt->count() > 0) m.compress_current = compress_current;
    if (!policy.empty()) m.policy = MatchPolicy::from_spec(policy);
    if (!exclude_ids.empty()) m.exclude_ids = exclude_ids;
    if (!out.empty()) m.out = out;
    if (workers > 0) m.workers = workers;
    return m;
  }
};

template <class T>
std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const long long v = std::stoll(item, &used);
    if (used != item.size()) throw std::invalid_argument("not an integer: " + item);
    out.push_back(static_cast<T>(v));
  }
  return out;
}

}  // namespace

int main_entry(int argc, char** argv) {
  CLI::App app{"dst_lab: context strategies, query compression and evaluation for spoken dialogue state tracking"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  // synth
  SynthOptions synth;
  auto* s = app.add_subcommand("synth", "Generate a seeded synthetic corpus with feature sidecars");
  s->add_option("--seed", synth.seed, "Corpus seed");
  s->add_option("--out", synth.out, "Output directory")->capture_default_str();
  s->add_option("--n-dialogues", synth.config.n_dialogues, "Number of dialogues")->capture_default_str();
  s->add_option("--turns", synth.config.turns_per_dialogue, "Turns per dialogue")->capture_default_str();
  s->add_option("--feature-dim", synth.config.feature_dim, "Feature dimension")->capture_default_str();
  s->add_option("--slots", synth.config.slots_per_dialogue, "Slots mentioned per dialogue")->capture_default_str();
  s->add_option("--noise", synth.config.noise_sigma, "Feature noise standard deviation")->capture_default_str();
  s->add_option("--overwrite-prob", synth.config.overwrite_prob, "Chance a slot is later changed")
      ->capture_default_str();

  // run
  CommonFlags run_flags;
  auto* r = app.add_subcommand("run", "Run a predictor over a corpus and write NDJSON predictions");
  run_flags.add_corpus(r);
  run_flags.add_run(r);

  // evaluate
  CommonFlags eval_flags;
  std::string predictions, formats = "json,csv,svg", taxonomy;
  int top_k = 6;
  auto* e = app.add_subcommand("evaluate", "Score predictions against the corpus gold states");
  eval_flags.add_corpus(e);
  e->add_option("--predictions", predictions, "predictions.ndjson from run")->required()->check(CLI::ExistingFile);
  e->add_option("--formats", formats, "Comma-separated report formats (json,csv,svg)")->capture_default_str();
  e->add_option("--top-k", top_k, "Slots kept in the error breakdown")->capture_default_str();
  e->add_option("--taxonomy", taxonomy, "Slot taxonomy JSON (default depends on --format)")->check(CLI::ExistingFile);

  // gradcheck
  app.add_subcommand("gradcheck", "Finite-difference check of every hand-written backward pass");

  // probe
  ProbeOptions probe;
  std::string probe_n = "1,4,8", probe_seeds = "1,2,3,4,5";
  auto* p = app.add_subcommand("probe", "Slot-retention probe across query counts");
  p->add_option("--n-queries", probe_n, "Comma-separated query counts (may be empty)")->capture_default_str();
  p->add_option("--seeds", probe_seeds, "Comma-separated seeds")->capture_default_str();
  p->add_option("--dialogues", probe.n_dialogues, "Synthetic turns per seed")->capture_default_str();
  p->add_option("--noise", probe.noise_sigma, "Feature noise")->capture_default_str();
  p->add_option("--epochs", probe.config.hyper.epochs, "Training epochs")->capture_default_str();
  p->add_option("--lr", probe.config.hyper.lr, "Learning rate")->capture_default_str();
  p->add_option("--out", probe.out, "CSV output path")->capture_default_str();

  // table
  std::string table_out = "report";
  auto* t = app.add_subcommand("table", "Render the published context-strategy comparison table");
  t->add_option("--out", table_out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    if (s->parsed()) return cmd_synth(synth, std::cout);
    if (r->parsed()) return cmd_run(run_flags.build(), std::cout);
    if (e->parsed()) {
      EvaluateOptions opt;
      opt.predictions = predictions;
      opt.references = eval_flags.build();
      if (opt.references.corpus.empty()) throw std::invalid_argument("evaluate: --corpus (or a manifest) is required");
      opt.out = eval_flags.out.empty() ? fs::path("report") : fs::path(eval_flags.out);
      opt.formats.clear();
      std::stringstream ss(formats);
      for (std::string f; std::getline(ss, f, ',');)
        if (!f.empty()) opt.formats.push_back(report_format_from_string(f));
      opt.top_k = top_k;
      opt.taxonomy = taxonomy;
      return cmd_evaluate(opt, std::cout);
    }
    if (app.got_subcommand("gradcheck")) return cmd_gradcheck(std::cout);
    if (p->parsed()) {
      probe.n_queries = parse_list<int>(probe_n);
      probe.seeds = parse_list<std::uint64_t>(probe_seeds);
      return cmd_probe(probe, std::cout);
    }
    if (t->parsed()) return cmd_table(table_out, std::cout);
  } catch (const std::exception& ex) {
    log().error("{}", ex.what());
    std::cerr << "error: " << ex.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace dstlab::cli
