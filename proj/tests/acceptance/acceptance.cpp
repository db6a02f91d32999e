// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure.
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <fmt/format.h>

#include "dstlab/cli.hpp"
#include "dstlab/log.hpp"
#include "dstlab/neural/probe.hpp"
#include "dstlab/rng.hpp"
#include "oracles.hpp"
#include "util.hpp"

using namespace dstlab;
namespace cli = dstlab::cli;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects the first few failures of a criterion.
class Checker {
 public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    ++failures_;
    if (failures_ <= 5) msgs_ += (msgs_.empty() ? "" : "; ") + what;
  }
  Outcome done(std::string detail) const {
    if (failures_ == 0) return {true, std::move(detail)};
    return {false, fmt::format("{} failure(s): {}", failures_, msgs_)};
  }

 private:
  long failures_ = 0;
  std::string msgs_;
};

std::vector<oracle::Turn> to_oracle(const std::vector<EvalTurn>& turns) {
  std::vector<oracle::Turn> out;
  for (const auto& t : turns) out.push_back({oracle::triples(t.predicted), oracle::triples(t.reference)});
  return out;
}

oracle::Policy to_oracle(const MatchPolicy& p) {
  if (p == MatchPolicy::exact()) return oracle::Policy::exact();
  return {};
}

SpeechPipeline small_pipeline(int feature_dim) {
  neural::ConnectorConfig cc;
  cc.d_in = 16;
  return SpeechPipeline(feature_dim, cc, 6, 3);
}

// ---- 1 ----------------------------------------------------------------------------------

Outcome metric_oracle_equivalence() {
  SynthConfig c;
  c.n_dialogues = 200;
  c.overwrite_prob = 0.3;
  const auto corpus = synth_corpus(101, c);
  NoiseConfig nc;
  nc.seed = 7;
  nc.drop_prob = 0.15;
  nc.typo_prob = 0.2;
  nc.time_format_prob = 0.3;
  nc.truncate_prob = 0.05;
  const OracleNoisy noisy(nc);
  const auto pipeline = small_pipeline(c.feature_dim);
  RunOptions opt;
  std::vector<PredictionRecord> records;
  for (const auto& d : corpus)
    for (const auto& tp : run_dialogue(d, noisy, pipeline, nullptr, opt)) {
      PredictionRecord r{d.id, tp.turn_index, tp.raw_output, std::nullopt};
      if (!tp.parse_failed) r.parsed_state = tp.state;
      records.push_back(std::move(r));
    }
  const auto turns = align(records, corpus);
  const auto oturns = to_oracle(turns);
  const auto tax = synthetic_taxonomy();

  Checker ck;
  for (const auto& policy : {MatchPolicy::exact(), MatchPolicy::fuzzy()}) {
    const auto op = to_oracle(policy);
    const std::string tag = policy == MatchPolicy::exact() ? "exact" : "fuzzy";
    const long correct = oracle::correct_count(oturns, tax, op);
    const double want = static_cast<double>(correct) / static_cast<double>(oturns.size());
    ck.expect(std::abs(jga(turns, tax, policy) - want) <= 1e-12, tag + " jga");

    const auto groups = slot_f1_by_group(turns, tax, policy);
    const auto counts = oracle::group_counts(oturns, tax, op);
    ck.expect(groups.size() == counts.size(), tag + " group set");
    for (const auto& [g, oc] : counts) {
      const auto it = groups.find(g);
      const bool same = it != groups.end() && it->second.tp == oc.tp && it->second.fp == oc.fp && it->second.fn == oc.fn;
      ck.expect(same, tag + " counts for " + to_string(g));
      if (!same) continue;
      const double p = oc.tp + oc.fp ? static_cast<double>(oc.tp) / static_cast<double>(oc.tp + oc.fp) : 0.0;
      const double r = oc.tp + oc.fn ? static_cast<double>(oc.tp) / static_cast<double>(oc.tp + oc.fn) : 0.0;
      const double f1 = p > 0 && r > 0 ? 2 * p * r / (p + r) : 0.0;
      ck.expect(std::abs(it->second.f1() - f1) <= 1e-12, tag + " f1 for " + to_string(g));
    }

    const auto ranked = error_breakdown(turns, tax, policy, 0);
    const auto oranked = oracle::ranking(oturns, tax, op, 0);
    ck.expect(ranked.size() == oranked.size(), tag + " ranking size");
    for (std::size_t i = 0; i < std::min(ranked.size(), oranked.size()); ++i) {
      const auto& [key, e] = ranked[i];
      const auto& o = oranked[i];
      ck.expect(key.domain == o.key.first && key.slot == o.key.second, tag + " ranking order at " + std::to_string(i));
      ck.expect(e.insertions == o.ins && e.deletions == o.del && e.score() == o.score(),
                tag + " tallies for " + key.domain + "-" + key.slot);
      bool ratios = e.ratios.size() == o.ratios.size();
      for (std::size_t j = 0; ratios && j < e.ratios.size(); ++j) ratios = std::abs(e.ratios[j] - o.ratios[j]) <= 1e-12;
      ck.expect(ratios, tag + " ratios for " + key.domain + "-" + key.slot);
    }
  }
  return ck.done(fmt::format("{} turns, jga exact {:.4f}, fuzzy {:.4f}", turns.size(),
                             jga(turns, tax, MatchPolicy::exact()), jga(turns, tax, MatchPolicy::fuzzy())));
}

// ---- 2 ----------------------------------------------------------------------------------

// 12-hour rendering of an HH:MM value.
std::string twelve_hour(const std::string& hhmm) {
  const int h = std::stoi(hhmm.substr(0, 2));
  const int h12 = h % 12 == 0 ? 12 : h % 12;
  return std::to_string(h12) + ":" + hhmm.substr(3) + (h < 12 ? " am" : " pm");
}

std::string one_typo(std::string v) {
  const std::size_t i = v.size() / 2;
  v[i] = v[i] == 'x' ? 'y' : 'x';
  return v;
}

Outcome post_processing_gain() {
  const auto& ontology = synthetic_ontology();
  const auto tax = synthetic_taxonomy();
  std::vector<const SynthSlot*> times, categorical, long_fuzzy, short_fuzzy;
  for (const auto& s : ontology) {
    if (s.group == SlotGroup::Time) times.push_back(&s);
    if (s.group == SlotGroup::Categorical) categorical.push_back(&s);
    if (s.group == SlotGroup::Open || s.group == SlotGroup::Profile) {
      for (const auto& v : s.values) (v.size() >= 10 ? long_fuzzy : short_fuzzy).push_back(&s);
    }
  }

  // Each turn carries three ontology slots; at most one value is perturbed.
  enum class Kind { Clean, Time, LongTypo, ShortTypo, CategoricalTypo };
  std::vector<Kind> plan(34, Kind::Clean);
  plan.insert(plan.end(), 6, Kind::Time);
  plan.insert(plan.end(), 4, Kind::LongTypo);
  plan.insert(plan.end(), 3, Kind::ShortTypo);
  plan.insert(plan.end(), 3, Kind::CategoricalTypo);

  std::vector<EvalTurn> turns;
  SplitMix64 rng(2);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    DialogueState ref;
    auto add = [&](const SynthSlot& s, const std::string& v) { ref.set_slot(s.key.domain, s.key.slot, v); };
    const SynthSlot* target = nullptr;
    std::string value;
    switch (plan[i]) {
      case Kind::Time:
        target = times[i % times.size()];
        break;
      case Kind::CategoricalTypo:
        target = categorical[i % categorical.size()];
        break;
      case Kind::LongTypo:
      case Kind::ShortTypo: {
        const auto& pool = plan[i] == Kind::LongTypo ? long_fuzzy : short_fuzzy;
        target = pool[i % pool.size()];
        for (const auto& v : target->values)
          if ((v.size() >= 10) == (plan[i] == Kind::LongTypo)) value = v;
        break;
      }
      case Kind::Clean:
        break;
    }
    if (target && value.empty()) value = target->values[rng.below(target->values.size())];
    if (target) add(*target, value);
    while (ref.slots().size() < 3) {
      const auto& s = ontology[rng.below(ontology.size())];
      if (!ref.value(s.key)) add(s, s.values[rng.below(s.values.size())]);
    }
    DialogueState pred = ref;
    if (target) {
      const std::string noisy = plan[i] == Kind::Time ? twelve_hour(value) : one_typo(value);
      pred.set_slot(target->key.domain, target->key.slot, noisy);
    }
    turns.push_back({{"fixture", static_cast<int>(2 * i + 1)}, pred, ref, false});
  }

  const double exact = jga(turns, tax, MatchPolicy::exact());
  const double post = jga(turns, tax, MatchPolicy::fuzzy());
  const auto oturns = to_oracle(turns);
  Checker ck;
  ck.expect(turns.size() == 50, "fixture size");
  ck.expect(std::abs(exact - oracle::correct_count(oturns, tax, oracle::Policy::exact()) / 50.0) <= 1e-12,
            "exact jga disagrees with oracle");
  ck.expect(std::abs(post - oracle::correct_count(oturns, tax, oracle::Policy{}) / 50.0) <= 1e-12,
            "post jga disagrees with oracle");
  ck.expect(post - exact >= 0.02, fmt::format("gain {:.4f} below 0.02", post - exact));
  return ck.done(fmt::format("exact {:.2f}, post-processed {:.2f}, gain {:+.2f}", exact, post, post - exact));
}

// ---- 3 ----------------------------------------------------------------------------------

Outcome fuzzy_matcher() {
  static const char32_t kAlphabet[] = {U'a', U'b', U'c', U'n', U'o', U' ', U'-', U':', U'1',
                                       U'é', U'ß', U'Ж', U'東', U'京', U'😀', U'A'};
  SplitMix64 rng(31337);
  auto random_string = [&] {
    std::u32string s;
    const auto n = rng.below(15);
    for (std::uint64_t i = 0; i < n; ++i) s.push_back(kAlphabet[rng.below(std::size(kAlphabet))]);
    return oracle::encode_utf8(s);
  };
  const MatchPolicy policies[] = {MatchPolicy::fuzzy(), MatchPolicy::exact()};
  Checker ck;
  long matches = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto a = random_string();
    // Every fourth pair is a near copy so the threshold region gets traffic.
    const auto b = i % 4 == 0 && !a.empty() ? oracle::encode_utf8(oracle::decode_utf8(a).substr(1)) : random_string();
    ck.expect(levenshtein_ratio(a, b) == oracle::ratio(a, b), "ratio mismatch for '" + a + "' / '" + b + "'");
    for (const auto& p : policies)
      for (auto g : kAllGroups) {
        const bool ab = values_match(a, b, g, p);
        matches += ab;
        ck.expect(ab == values_match(b, a, g, p), "asymmetric match for '" + a + "' / '" + b + "'");
      }
  }
  return ck.done(fmt::format("10000 pairs, {} matching (pair, group, policy) cases", matches));
}

// ---- 4 ----------------------------------------------------------------------------------

Outcome context_length_law() {
  SynthConfig c;
  c.n_dialogues = 40;
  c.turns_per_dialogue = 14;
  const auto corpus = synth_corpus(44, c);
  const auto pipeline = small_pipeline(c.feature_dim);
  RunOptions opt;
  Checker ck;
  long checked = 0;
  for (int nq : {1, 3, 10}) {
    neural::CompressorConfig cfg;
    cfg.n_queries = nq;
    const Compressor comp(cfg);
    for (const auto& d : corpus) {
      const auto h = embed_dialogue(d, pipeline, opt);
      for (std::size_t n = 1; n <= h.size(); ++n) {
        const std::vector<SpeechEmbedding> prefix(h.begin(), h.begin() + static_cast<long>(n));
        long full = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const long frames = d.turns[i].features->rows();
          full += (frames + 5) / 6;
        }
        const long last = (d.turns[n - 1].features->rows() + 5) / 6;
        const long compressed = static_cast<long>(n - 1) * nq + last;
        const auto where = fmt::format("{} turn {} N={}", d.id, n, nq);
        ck.expect(assemble(Strategy::FullSpoken, prefix).total_rows() == full, "full " + where);
        ck.expect(assemble(Strategy::CompressedSpoken, prefix, &comp).total_rows() == compressed, "compressed " + where);
        ck.expect(assemble(Strategy::CompressedSpoken, prefix, &comp, true).total_rows() == static_cast<long>(n) * nq,
                  "compress_current " + where);
        ck.expect(assemble(Strategy::Multimodal, prefix).total_rows() == last, "multimodal " + where);
        checked += 4;
      }
    }
  }
  return ck.done(fmt::format("{} assembled contexts checked", checked));
}

// ---- 5 ----------------------------------------------------------------------------------

Outcome gradient_verification() {
  const auto rows = cli::run_gradcheck_suite();
  Checker ck;
  double worst = 0.0;
  std::string where;
  for (const auto& r : rows) {
    ck.expect(r.pass, fmt::format("{} {}x{} N={}: {:.3e} at {}", neural::to_string(r.spec.module), r.spec.rows,
                                  r.spec.cols, r.spec.n_queries, r.result.max_rel_error, r.result.worst_param));
    if (r.result.max_rel_error > worst) {
      worst = r.result.max_rel_error;
      where = r.result.worst_param;
    }
  }
  ck.expect(rows.size() == 12, "suite should have 12 cases");
  return ck.done(fmt::format("{} cases, max relative error {:.2e} ({})", rows.size(), worst, where));
}

// ---- 6 ----------------------------------------------------------------------------------

Outcome retention_probe() {
  cli::ProbeOptions po;
  Checker ck;
  double sum1 = 0, sum8 = 0;
  for (auto seed : po.seeds) {
    auto cfg = po.config;
    cfg.model_seed = seed;
    const auto r = neural::probe_retention(cli::probe_corpus(seed, po), {1, 8}, cfg);
    sum1 += r.at(1).heldout_accuracy;
    sum8 += r.at(8).heldout_accuracy;
  }
  const double n = static_cast<double>(po.seeds.size());
  const double mean1 = sum1 / n, mean8 = sum8 / n;
  ck.expect(mean8 - mean1 >= 0.10, fmt::format("N=8 minus N=1 is {:.4f}", mean8 - mean1));

  // Lossless setting: no feature noise and at least one query per turn row.
  cli::ProbeOptions lossless = po;
  lossless.noise_sigma = 0.0;
  const auto corpus = cli::probe_corpus(1, lossless);
  long max_rows = 0;
  for (const auto& d : corpus)
    for (const auto& t : d.turns) max_rows = std::max<long>(max_rows, (t.features->rows() + po.config.stride - 1) / po.config.stride);
  const int nq = static_cast<int>(max_rows);
  auto cfg = po.config;
  cfg.model_seed = 1;
  const double acc = neural::probe_retention(corpus, {nq}, cfg).at(nq).heldout_accuracy;
  ck.expect(acc >= 0.99, fmt::format("lossless accuracy {:.4f}", acc));
  return ck.done(fmt::format("mean held-out N=1 {:.4f}, N=8 {:.4f}; lossless N={} {:.4f}", mean1, mean8, nq, acc));
}

// ---- 7 ----------------------------------------------------------------------------------

Outcome freeze_contract() {
  cli::ProbeOptions po;
  po.n_dialogues = 200;
  const auto examples = neural::probe_examples(cli::probe_corpus(9, po));
  auto cfg = po.config;
  cfg.hyper.epochs = 5;
  neural::ProbeModel model(neural::probe_model_config(cfg, static_cast<int>(examples.front().frames.cols()), 4));
  using neural::ParamGroup;
  const auto stub_before = neural::encode_checkpoint(model.params(ParamGroup::EncoderStub));
  const auto connector_before = neural::encode_checkpoint(model.params(ParamGroup::Connector));
  const auto compressor_before = neural::encode_checkpoint(model.params(ParamGroup::Compressor));
  const auto readout_before = neural::encode_checkpoint(model.params(ParamGroup::Readout));
  const auto mask = neural::probe_mask(cfg);
  neural::train(model, mask, examples, cfg.hyper);

  Checker ck;
  ck.expect(!mask.encoder_stub, "mask leaves the encoder stub trainable");
  ck.expect(neural::encode_checkpoint(model.params(ParamGroup::EncoderStub)) == stub_before,
            "encoder stub bytes changed");
  ck.expect(neural::encode_checkpoint(model.params(ParamGroup::Connector)) == connector_before,
            "frozen connector bytes changed");
  ck.expect(neural::encode_checkpoint(model.params(ParamGroup::Compressor)) != compressor_before,
            "compressor did not train");
  ck.expect(neural::encode_checkpoint(model.params(ParamGroup::Readout)) != readout_before, "readout did not train");
  return ck.done(fmt::format("encoder stub {} bytes unchanged; compressor and readout updated", stub_before.size()));
}

// ---- 8 ----------------------------------------------------------------------------------

fs::path synth_corpus_dir(const fs::path& root, int n, int turns, std::uint64_t seed) {
  cli::SynthOptions so;
  so.seed = seed;
  so.config.n_dialogues = n;
  so.config.turns_per_dialogue = turns;
  so.config.overwrite_prob = 0.3;
  so.out = root / "corpus";
  std::ostringstream log;
  if (cli::cmd_synth(so, log) != cli::kOk) throw std::runtime_error("synth failed");
  return so.out;
}

Outcome oracle_end_to_end() {
  testutil::TempDir dir("accept-e2e");
  const auto corpus = synth_corpus_dir(dir.path(), 40, 12, 8);
  Checker ck;
  std::string detail;
  for (auto s : {Strategy::Multimodal, Strategy::FullSpoken, Strategy::CompressedSpoken}) {
    cli::RunManifest m;
    m.corpus = corpus;
    m.strategy = s;
    m.compressor = neural::CompressorConfig{};
    m.out = dir / to_string(s);
    std::ostringstream log;
    ck.expect(cli::cmd_run(m, log) == cli::kOk, std::string("run failed for ") + to_string(s));
    cli::EvaluateOptions eo;
    eo.predictions = m.out / "predictions.ndjson";
    eo.references = m;
    eo.out = m.out / "report";
    EvalReport report;
    ck.expect(cli::cmd_evaluate(eo, log, &report) == cli::kOk, std::string("evaluate failed for ") + to_string(s));
    ck.expect(report.jga == 1.0, fmt::format("{} jga {}", to_string(s), report.jga));
    detail += fmt::format("{}{} {:.4f} ({} turns)", detail.empty() ? "" : ", ", to_string(s), report.jga, report.n_turns);
  }
  return ck.done("jga " + detail);
}

// ---- 9 ----------------------------------------------------------------------------------

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = testutil::slurp(e.path());
  return out;
}

Outcome determinism() {
  testutil::TempDir dir("accept-det");
  const auto corpus = synth_corpus_dir(dir.path(), 30, 10, 12);
  Checker ck;
  long files = 0;
  for (auto s : {Strategy::Multimodal, Strategy::FullSpoken, Strategy::CompressedSpoken}) {
    std::vector<std::map<std::string, std::string>> outputs;
    for (int workers : {1, 1, 4}) {
      cli::RunManifest m;
      m.corpus = corpus;
      m.strategy = s;
      m.predictor = "noisy";
      m.seed = 99;
      m.noise.truncate_prob = 0.1;
      m.compressor = neural::CompressorConfig{};
      m.workers = workers;
      m.out = dir / fmt::format("{}-{}-{}", to_string(s), workers, outputs.size());
      std::ostringstream log;
      ck.expect(cli::cmd_run(m, log) == cli::kOk, "run failed");
      cli::EvaluateOptions eo;
      eo.predictions = m.out / "predictions.ndjson";
      eo.references = m;
      eo.out = m.out / "report";
      ck.expect(cli::cmd_evaluate(eo, log) == cli::kOk, "evaluate failed");
      outputs.push_back(tree(m.out));
    }
    for (std::size_t i = 1; i < outputs.size(); ++i) {
      ck.expect(outputs[i].size() == outputs[0].size(), "file sets differ");
      for (const auto& [name, bytes] : outputs[0]) {
        const auto it = outputs[i].find(name);
        ck.expect(it != outputs[i].end() && it->second == bytes,
                  fmt::format("{} differs for {} (run {})", name, to_string(s), i));
      }
    }
    files += static_cast<long>(outputs[0].size());
  }
  return ck.done(fmt::format("{} files byte-identical across repeated runs and 1 vs 4 workers", files));
}

// ---- 10 ---------------------------------------------------------------------------------

Outcome table_rendering() {
  testutil::TempDir dir("accept-table");
  EvalReport report;
  report.comparison = published_context_table();
  render_report(report, {ReportFormat::Csv}, dir.path());
  const auto got = testutil::slurp(dir / "comparison.csv");
  const auto want = testutil::slurp(fs::path(DSTLAB_GOLDEN_DIR) / "table2.csv");
  Checker ck;
  ck.expect(!want.empty(), "golden file missing");
  ck.expect(got == want, "comparison.csv differs from golden:\n" + got);
  return ck.done(fmt::format("{} bytes match golden", got.size()));
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
    double budget_s;  // 0 = no runtime bound
  };
  const std::vector<Criterion> criteria = {
      {"metric oracle equivalence", metric_oracle_equivalence, 30},
      {"post-processing gain", post_processing_gain, 0},
      {"fuzzy matcher", fuzzy_matcher, 0},
      {"context-length law", context_length_law, 0},
      {"gradient verification", gradient_verification, 60},
      {"retention probe", retention_probe, 300},
      {"freeze contract", freeze_contract, 0},
      {"oracle end-to-end", oracle_end_to_end, 0},
      {"determinism", determinism, 0},
      {"table rendering", table_rendering, 0},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& c = criteria[i];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs >= c.budget_s) {
      o.pass = false;
      o.detail += fmt::format("; runtime {:.1f} s over the {:.0f} s limit", secs, c.budget_s);
    }
    failed += !o.pass;
    std::cout << fmt::format("{} [{:>2}] {:<26} {:7.2f}s  {}\n", o.pass ? "PASS" : "FAIL", i + 1, c.name, secs,
                             o.detail)
              << std::flush;
  }
  std::cout << fmt::format("{}/{} criteria passed\n", criteria.size() - static_cast<std::size_t>(failed),
                           criteria.size());
  return failed == 0 ? 0 : 1;
}
