#include <algorithm>
#include <atomic>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "dstlab/cli.hpp"
#include "dstlab/log.hpp"
#include "dstlab/neural/probe.hpp"
#include "dstlab/rng.hpp"

#ifndef DSTLAB_CONFIG_DIR
#define DSTLAB_CONFIG_DIR "config"
#endif

namespace dstlab::cli {

using ojson = nlohmann::ordered_json;

namespace {

const char* format_name(CorpusFormat f) { return f == CorpusFormat::SyntheticJson ? "synthetic" : "spokenwoz"; }

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + p.string());
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void check_prob(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string("manifest: ") + name + " must be in [0, 1]");
}

}  // namespace

// ---- manifest -------------------------------------------------------------------------

RunManifest RunManifest::from_json(const ojson& j, const fs::path& base_dir) {
  if (!j.is_object()) throw std::invalid_argument("manifest must be a JSON object");
  RunManifest m;
  if (j.contains("corpus")) m.corpus = resolve(base_dir, j["corpus"].get<std::string>());
  if (j.contains("format")) m.format = corpus_format_from_string(j["format"].get<std::string>());
  if (j.contains("strategy")) m.strategy = strategy_from_string(j["strategy"].get<std::string>());
  if (j.contains("predictor")) m.predictor = j["predictor"].get<std::string>();
  if (j.contains("seed")) m.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("noise")) {
    const auto& n = j["noise"];
    m.noise.drop_prob = n.value("drop_prob", m.noise.drop_prob);
    m.noise.typo_prob = n.value("typo_prob", m.noise.typo_prob);
    m.noise.time_format_prob = n.value("time_format_prob", m.noise.time_format_prob);
    m.noise.truncate_prob = n.value("truncate_prob", m.noise.truncate_prob);
    m.noise.asr_typo_prob = n.value("asr_typo_prob", m.noise.asr_typo_prob);
  }
  if (j.contains("row_budget")) m.row_budget = j["row_budget"].get<long>();
  if (j.contains("model")) {
    const auto& md = j["model"];
    m.feature_dim = md.value("feature_dim", m.feature_dim);
    m.stride = md.value("stride", m.stride);
    m.d_model = md.value("d_model", m.d_model);
    m.n_heads = md.value("n_heads", m.n_heads);
    m.model_seed = md.value("seed", m.model_seed);
  }
  if (j.contains("compressor") && !j["compressor"].is_null()) {
    const auto& c = j["compressor"];
    neural::CompressorConfig cfg;
    cfg.n_queries = c.value("n_queries", cfg.n_queries);
    cfg.n_layers = c.value("n_layers", cfg.n_layers);
    cfg.ff_mult = c.value("ff_mult", cfg.ff_mult);
    cfg.seed = c.value("seed", combine64(m.model_seed, 3));
    m.compressor = cfg;
  }
  if (j.contains("compress_current")) m.compress_current = j["compress_current"].get<bool>();
  if (j.contains("policy")) {
    const auto& p = j["policy"];
    if (!p.is_string()) {
      m.policy = MatchPolicy::from_json(p);
    } else {
      const auto name = p.get<std::string>();
      const bool named = name == "exact" || name == "fuzzy" || name == "default";
      m.policy = MatchPolicy::from_spec(named ? name : resolve(base_dir, name).string());
    }
  }
  if (j.contains("exclude_ids")) m.exclude_ids = resolve(base_dir, j["exclude_ids"].get<std::string>()).string();
  if (j.contains("out")) m.out = resolve(base_dir, j["out"].get<std::string>());
  if (j.contains("workers")) m.workers = j["workers"].get<int>();
  return m;
}

RunManifest RunManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read manifest " + path.string());
  ojson j;
  try {
    j = ojson::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("manifest " + path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

ojson RunManifest::to_json() const {
  ojson j;
  j["corpus"] = corpus.generic_string();
  j["format"] = format_name(format);
  j["strategy"] = to_string(strategy);
  j["predictor"] = predictor;
  j["seed"] = seed;
  j["noise"] = {{"drop_prob", noise.drop_prob},
                {"typo_prob", noise.typo_prob},
                {"time_format_prob", noise.time_format_prob},
                {"truncate_prob", noise.truncate_prob},
                {"asr_typo_prob", noise.asr_typo_prob}};
  j["row_budget"] = row_budget;
  j["model"] = {{"feature_dim", feature_dim}, {"stride", stride}, {"d_model", d_model}, {"n_heads", n_heads},
                {"seed", model_seed}};
  if (compressor)
    j["compressor"] = {{"n_queries", compressor->n_queries}, {"n_layers", compressor->n_layers},
                       {"ff_mult", compressor->ff_mult}, {"seed", compressor->seed}};
  else
    j["compressor"] = nullptr;
  j["compress_current"] = compress_current;
  j["policy"] = policy.to_json();
  j["exclude_ids"] = exclude_ids;
  return j;
}

void RunManifest::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("manifest: " + msg); };
  if (corpus.empty()) fail("no corpus given");
  if (!fs::exists(corpus)) fail("corpus not found: " + corpus.string());
  if (predictor != "exact" && predictor != "noisy" && predictor != "truncated")
    fail("predictor must be exact, noisy or truncated, got " + predictor);
  if (stride < 1) fail("stride must be >= 1");
  if (feature_dim < 1) fail("feature_dim must be >= 1");
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) fail("d_model must be a positive multiple of n_heads");
  if (workers < 1) fail("workers must be >= 1");
  if (row_budget < 0) fail("row_budget must be >= 0");
  check_prob(noise.drop_prob, "noise.drop_prob");
  check_prob(noise.typo_prob, "noise.typo_prob");
  check_prob(noise.time_format_prob, "noise.time_format_prob");
  check_prob(noise.truncate_prob, "noise.truncate_prob");
  check_prob(noise.asr_typo_prob, "noise.asr_typo_prob");
  if (strategy == Strategy::CompressedSpoken && !compressor)
    fail("the compressed strategy needs a compressor configuration (--n-queries or \"compressor\")");
  if (compressor && (compressor->n_queries < 1 || compressor->n_layers < 1))
    fail("compressor n_queries and n_layers must be >= 1");
  if (!exclude_ids.empty() && !fs::exists(exclude_ids)) fail("exclude id list not found: " + exclude_ids);
  policy.validate();
}

fs::path default_exclude_list() { return fs::path(DSTLAB_CONFIG_DIR) / "spokenwoz_corrupted_test_ids.json"; }

std::vector<Dialogue> load_references(const RunManifest& m) {
  auto corpus = load_corpus(m.corpus, m.format);
  std::vector<std::string> ids;
  if (!m.exclude_ids.empty()) {
    ids = load_id_list(m.exclude_ids);
  } else if (m.format == CorpusFormat::SpokenWozJson && fs::exists(default_exclude_list())) {
    ids = load_id_list(default_exclude_list());
    if (ids.empty()) log().warn("the default corrupted-dialogue list is empty; no dialogues excluded");
  }
  return filter_corrupted(corpus, ids);
}

// ---- synth ------------------------------------------------------------------------------

int cmd_synth(const SynthOptions& opt, std::ostream& log_out) {
  const auto corpus = synth_corpus(opt.seed, opt.config);
  const auto path = write_synthetic_corpus(corpus, opt.out);
  log_out << "wrote " << corpus.size() << " dialogues to " << path.generic_string() << "\n";
  return kOk;
}

// ---- run ---------------------------------------------------------------------------------

namespace {

std::unique_ptr<StatePredictor> make_predictor(const RunManifest& m) {
  if (m.predictor == "exact") return std::make_unique<OracleExact>();
  if (m.predictor == "noisy") {
    NoiseConfig n = m.noise;
    n.seed = m.seed;
    return std::make_unique<OracleNoisy>(n);
  }
  return std::make_unique<OracleTruncated>(m.row_budget);
}

int corpus_feature_dim(const std::vector<Dialogue>& corpus, int fallback) {
  for (const auto& d : corpus)
    for (const auto& t : d.turns)
      if (t.features) return static_cast<int>(t.features->cols());
  return fallback;
}

/// Runs fn(i) for i in [0, n) on `workers` threads. Each index is handled
/// by exactly one thread; results are stored by index by the caller.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  for (std::size_t w = 0; w < k; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace

int cmd_run(const RunManifest& m, std::ostream& log_out, RunSummary* summary_out) {
  m.validate();
  auto corpus = load_references(m);
  std::sort(corpus.begin(), corpus.end(), [](const Dialogue& a, const Dialogue& b) { return a.id < b.id; });

  const int feature_dim = corpus_feature_dim(corpus, m.feature_dim);
  neural::ConnectorConfig ccfg;
  ccfg.d_in = m.d_model;
  ccfg.d_model = m.d_model;
  ccfg.n_heads = m.n_heads;
  ccfg.seed = combine64(m.model_seed, 2);
  const SpeechPipeline pipeline(feature_dim, ccfg, m.stride, combine64(m.model_seed, 1));
  std::optional<Compressor> compressor;
  if (m.compressor) {
    auto cfg = *m.compressor;
    cfg.d_model = m.d_model;
    cfg.n_heads = m.n_heads;
    compressor.emplace(cfg);
  }
  const auto predictor = make_predictor(m);
  RunOptions ropt;
  ropt.strategy = m.strategy;
  ropt.compress_current = m.compress_current;
  ropt.vocab_seed = vocab_seed_for(m.model_seed);

  std::vector<std::vector<TurnPrediction>> results(corpus.size());
  std::vector<std::string> errors(corpus.size());
  parallel_for(corpus.size(), m.workers, [&](std::size_t i) {
    try {
      results[i] = run_dialogue(corpus[i], *predictor, pipeline, compressor ? &*compressor : nullptr, ropt);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  RunSummary summary;
  std::vector<PredictionRecord> records;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    ++summary.n_dialogues;
    if (!errors[i].empty()) {
      summary.failures.push_back({corpus[i].id, errors[i]});
      log().error("dialogue {}: {}", corpus[i].id, errors[i]);
      continue;
    }
    for (const auto& p : results[i]) {
      ++summary.n_turns;
      summary.n_parse_failures += p.parse_failed;
      for (const auto& d : p.diagnostics) log().debug("{}/{}: {}", corpus[i].id, p.turn_index, d);
      PredictionRecord r;
      r.dialogue_id = corpus[i].id;
      r.turn_index = p.turn_index;
      r.raw_output = p.raw_output;
      if (!p.parse_failed) r.parsed_state = p.state;
      records.push_back(std::move(r));
    }
  }

  fs::create_directories(m.out);
  std::ostringstream preds;
  write_predictions(preds, records);
  write_text(m.out / "predictions.ndjson", preds.str());

  const int nq = m.compressor ? m.compressor->n_queries : 10;
  RunOptions lopt = ropt;
  write_text(m.out / "context_length.csv",
             length_report_csv(context_length_report(
                 corpus, {Strategy::Multimodal, Strategy::FullSpoken, Strategy::CompressedSpoken}, {nq}, m.stride, lopt)));

  ojson js;
  js["manifest"] = m.to_json();
  js["n_dialogues"] = summary.n_dialogues;
  js["n_turns"] = summary.n_turns;
  js["n_parse_failures"] = summary.n_parse_failures;
  js["failures"] = ojson::array();
  for (const auto& f : summary.failures) js["failures"].push_back({{"dialogue_id", f.dialogue_id}, {"error", f.error}});
  write_text(m.out / "run_summary.json", js.dump(2) + "\n");

  log_out << fmt::format("run: {} dialogues, {} turns, {} parse failures, {} failed dialogues -> {}\n",
                         summary.n_dialogues, summary.n_turns, summary.n_parse_failures, summary.failures.size(),
                         (m.out / "predictions.ndjson").generic_string());
  for (const auto& f : summary.failures) log_out << "  failed " << f.dialogue_id << ": " << f.error << "\n";
  const bool ok = summary.failures.empty();
  if (summary_out) *summary_out = std::move(summary);
  return ok ? kOk : kFailure;
}

// ---- evaluate ----------------------------------------------------------------------------

int cmd_evaluate(const EvaluateOptions& opt, std::ostream& log_out, EvalReport* report_out) {
  const auto refs = load_references(opt.references);
  std::ifstream in(opt.predictions);
  if (!in) throw std::runtime_error("cannot read predictions " + opt.predictions.string());
  const auto preds = read_predictions(in);

  std::vector<EvalTurn> turns;
  try {
    turns = align(preds, refs);
  } catch (const AlignmentError& e) {
    log_out << "alignment failed: " << e.what() << "\n";
    return kAlignment;
  }

  SlotTaxonomy taxonomy;
  if (!opt.taxonomy.empty()) {
    std::ifstream tin(opt.taxonomy);
    if (!tin) throw std::runtime_error("cannot read taxonomy " + opt.taxonomy.string());
    taxonomy = SlotTaxonomy::from_json(ojson::parse(tin));
  } else {
    taxonomy = opt.references.format == CorpusFormat::SyntheticJson ? synthetic_taxonomy() : SlotTaxonomy::spokenwoz();
  }

  EvalReport report = evaluate(turns, taxonomy, opt.references.policy, opt.top_k);
  render_report(report, std::set<ReportFormat>(opt.formats.begin(), opt.formats.end()), opt.out);
  log_out << fmt::format("turns: {} (dialogues: {}, parse failures: {})\n", report.n_turns, report.n_dialogues,
                         report.n_parse_failures);
  log_out << fmt::format("JGA (exact match):     {:.4f}\n", report.jga);
  log_out << fmt::format("JGA (post-processed):  {:.4f}\n", report.jga_post);
  log_out << fmt::format("domain accuracy:       {:.4f}\n", report.domain_accuracy);
  if (report_out) *report_out = std::move(report);
  return kOk;
}

// ---- gradcheck -----------------------------------------------------------------------------

std::vector<neural::GradCheckSpec> gradcheck_suite() {
  using neural::GradCheckModule;
  std::vector<neural::GradCheckSpec> out;
  auto add = [&](GradCheckModule mod, int rows, int cols, int nq, int d, int heads, int ro, std::uint64_t seed) {
    neural::GradCheckSpec s;
    s.module = mod;
    s.rows = rows;
    s.cols = cols;
    s.n_queries = nq;
    s.d_model = d;
    s.n_heads = heads;
    s.readout_out = ro;
    s.seed = seed;
    out.push_back(s);
  };
  add(GradCheckModule::Connector, 3, 4, 1, 8, 2, 3, 11);
  add(GradCheckModule::Connector, 6, 5, 1, 8, 2, 3, 12);
  add(GradCheckModule::Connector, 9, 3, 1, 12, 3, 3, 13);
  for (int nq : {1, 10}) {
    add(GradCheckModule::Compressor, 5, 8, nq, 8, 2, 3, 21);
    add(GradCheckModule::Compressor, 11, 8, nq, 8, 1, 3, 22);
    add(GradCheckModule::Compressor, 3, 12, nq, 12, 3, 3, 23);
  }
  add(GradCheckModule::Readout, 1, 8, 1, 8, 2, 3, 31);
  add(GradCheckModule::Readout, 4, 16, 1, 8, 2, 5, 32);
  add(GradCheckModule::Readout, 7, 5, 1, 8, 2, 2, 33);
  return out;
}

std::vector<GradCheckRow> run_gradcheck_suite() {
  std::vector<GradCheckRow> rows;
  for (const auto& spec : gradcheck_suite()) {
    GradCheckRow r;
    r.spec = spec;
    r.result = neural::grad_check(spec);
    r.pass = r.result.max_rel_error < kGradTolerance;
    rows.push_back(std::move(r));
  }
  return rows;
}

int cmd_gradcheck(std::ostream& out) {
  const auto rows = run_gradcheck_suite();
  out << fmt::format("{:<11} {:>9} {:>8} {:>12}  {:<6} {}\n", "module", "input", "queries", "max_rel_err", "result",
                     "worst parameter");
  bool ok = true;
  for (const auto& r : rows) {
    const bool compressor = r.spec.module == neural::GradCheckModule::Compressor;
    out << fmt::format("{:<11} {:>9} {:>8} {:>12.3e}  {:<6} {}\n", neural::to_string(r.spec.module),
                       fmt::format("{}x{}", r.spec.rows, r.spec.cols), compressor ? std::to_string(r.spec.n_queries) : "-",
                       r.result.max_rel_error, r.pass ? "PASS" : "FAIL", r.result.worst_param);
    ok = ok && r.pass;
  }
  if (!ok) {
    for (const auto& r : rows)
      if (!r.pass) out << "gradient check failed for " << r.result.worst_param << "\n";
    return kCheckFailed;
  }
  return kOk;
}

// ---- probe ------------------------------------------------------------------------------------

std::vector<Dialogue> probe_corpus(std::uint64_t seed, const ProbeOptions& opt) {
  SynthConfig c;
  c.n_dialogues = opt.n_dialogues;
  c.turns_per_dialogue = 1;
  c.slots_per_dialogue = opt.slots_per_turn;
  c.noise_sigma = opt.noise_sigma;
  c.overwrite_prob = 0.0;
  return synth_corpus(seed, c);
}

std::string probe_csv(const std::vector<std::pair<std::uint64_t, neural::ProbeResult>>& rows) {
  std::string out = "seed,n_queries,heldout_accuracy,train_accuracy,n_train,n_heldout\n";
  for (const auto& [seed, r] : rows)
    out += fmt::format("{},{},{:.6f},{:.6f},{},{}\n", seed, r.n_queries, r.heldout_accuracy, r.train_accuracy,
                       r.n_train, r.n_heldout);
  return out;
}

int cmd_probe(const ProbeOptions& opt, std::ostream& log_out) {
  std::vector<std::pair<std::uint64_t, neural::ProbeResult>> rows;
  if (!opt.n_queries.empty()) {
    for (auto seed : opt.seeds) {
      auto cfg = opt.config;
      cfg.model_seed = seed;
      for (auto& [n, r] : neural::probe_retention(probe_corpus(seed, opt), opt.n_queries, cfg)) {
        log_out << fmt::format("seed {} N={} held-out accuracy {:.4f}\n", seed, n, r.heldout_accuracy);
        rows.emplace_back(seed, std::move(r));
      }
    }
  }
  if (opt.out.has_parent_path()) fs::create_directories(opt.out.parent_path());
  write_text(opt.out, probe_csv(rows));
  log_out << "wrote " << rows.size() << " rows to " << opt.out.generic_string() << "\n";
  return kOk;
}

// ---- table -------------------------------------------------------------------------------------

int cmd_table(const fs::path& out, std::ostream& log_out) {
  const std::string csv = comparison_csv(published_context_table());
  fs::create_directories(out);
  write_text(out / "comparison.csv", csv);
  log_out << csv;
  return kOk;
}

}  // namespace dstlab::cli
