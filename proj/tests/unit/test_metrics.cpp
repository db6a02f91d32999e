#include <gtest/gtest.h>

#include "dstlab/context.hpp"
#include "dstlab/metrics.hpp"
#include "oracles.hpp"
#include "util.hpp"

using namespace dstlab;

namespace {

DialogueState state(std::initializer_list<std::tuple<const char*, const char*, const char*>> triples) {
  DialogueState s;
  for (const auto& [d, k, v] : triples) s.set_slot(d, k, v);
  return s;
}

EvalTurn turn(const std::string& id, int idx, DialogueState pred, DialogueState ref) {
  return EvalTurn{{id, idx}, std::move(pred), std::move(ref), false};
}

// Noisy predictions for a synthetic corpus, aligned with the gold states.
std::vector<EvalTurn> noisy_turns(int n_dialogues, std::uint64_t seed) {
  SynthConfig c;
  c.n_dialogues = n_dialogues;
  c.overwrite_prob = 0.3;
  const auto corpus = synth_corpus(seed, c);
  NoiseConfig nc;
  nc.seed = seed;
  nc.drop_prob = 0.15;
  nc.typo_prob = 0.2;
  nc.time_format_prob = 0.3;
  const OracleNoisy noisy(nc);
  std::vector<PredictionRecord> preds;
  for (const auto& d : corpus)
    for (const auto& [idx, gold] : d.gold_states) {
      auto p = noisy.perturb(d.id, gold);
      // Spurious slot now and then, to exercise insertions.
      if ((idx + d.id.back()) % 7 == 0) p.set_slot("hotel", "name", "acorn");
      preds.push_back({d.id, idx, serialize_state(p), p});
    }
  return align(preds, corpus);
}

std::vector<oracle::Turn> to_oracle(const std::vector<EvalTurn>& turns) {
  std::vector<oracle::Turn> out;
  for (const auto& t : turns) out.push_back({oracle::triples(t.predicted), oracle::triples(t.reference)});
  return out;
}

}  // namespace

TEST(Align, PairsAndSorts) {
  Dialogue d;
  d.id = "b";
  d.turns = {{1, Speaker::User, "x", {}}, {2, Speaker::Agent, "y", {}}, {3, Speaker::User, "z", {}}};
  d.gold_states[1] = state({{"hotel", "area", "north"}});
  d.gold_states[3] = state({{"hotel", "area", "south"}});
  const std::vector<PredictionRecord> preds{{"b", 3, "", std::nullopt}, {"b", 1, "", d.gold_states[1]}};
  const auto turns = align(preds, {d});
  ASSERT_EQ(turns.size(), 2u);
  EXPECT_EQ(turns[0].key.turn_index, 1);
  EXPECT_TRUE(turns[1].parse_failed);
  EXPECT_TRUE(turns[1].predicted.empty());
}

TEST(Align, ReportsMissingUnexpectedDuplicated) {
  Dialogue d;
  d.id = "a";
  d.turns = {{1, Speaker::User, "x", {}}};
  d.gold_states[1] = {};
  try {
    align({{"a", 2, "", std::nullopt}, {"a", 2, "", std::nullopt}}, {d});
    FAIL();
  } catch (const AlignmentError& e) {
    EXPECT_EQ(e.missing(), (std::vector<TurnKey>{{"a", 1}}));
    EXPECT_EQ(e.unexpected(), (std::vector<TurnKey>{{"a", 2}}));
    EXPECT_EQ(e.duplicated(), (std::vector<TurnKey>{{"a", 2}}));
  }
  EXPECT_THROW(align({}, {d}), AlignmentError);
}

TEST(Jga, IdentityAndTotalMiss) {
  const auto tax = synthetic_taxonomy();
  const auto s = state({{"hotel", "area", "north"}});
  EXPECT_DOUBLE_EQ(jga({turn("a", 1, s, s), turn("a", 3, s, s)}, tax, MatchPolicy{}), 1.0);
  EXPECT_DOUBLE_EQ(jga({turn("a", 1, {}, s), turn("a", 3, {}, s)}, tax, MatchPolicy{}), 0.0);
  EXPECT_DOUBLE_EQ(jga({}, tax, MatchPolicy{}), 0.0);
}

TEST(Jga, TenTurnFixture) {
  const auto tax = synthetic_taxonomy();
  std::vector<EvalTurn> t;
  const auto ref = state({{"train", "destination", "peterborough"}, {"train", "day", "monday"}});
  for (int i = 0; i < 6; ++i) t.push_back(turn("f", 2 * i + 1, ref, ref));
  // One character off in a 12-character open value: ratio 11/12 >= 0.90.
  t.push_back(turn("f", 13, state({{"train", "destination", "peterborougj"}, {"train", "day", "monday"}}), ref));
  t.push_back(turn("f", 15, state({{"train", "destination", "peterborough"}, {"train", "day", "sunday"}}), ref));
  t.push_back(turn("f", 17, state({{"train", "destination", "peterborough"}}), ref));
  t.push_back(turn("f", 19, state({{"train", "destination", "ely"}, {"train", "day", "monday"}}), ref));
  EXPECT_DOUBLE_EQ(jga(t, tax, MatchPolicy{}), 0.7);
  EXPECT_DOUBLE_EQ(jga(t, tax, MatchPolicy::exact()), 0.6);
}

TEST(Jga, ExtraOrMissingKeyBreaksTurnEvenIfValuesMatch) {
  const auto tax = synthetic_taxonomy();
  const auto ref = state({{"hotel", "area", "north"}});
  const auto extra = state({{"hotel", "area", "north"}, {"hotel", "name", "acorn"}});
  EXPECT_DOUBLE_EQ(jga({turn("a", 1, extra, ref)}, tax, MatchPolicy{}), 0.0);
  EXPECT_DOUBLE_EQ(jga({turn("a", 1, ref, extra)}, tax, MatchPolicy{}), 0.0);
}

TEST(Jga, DomainsDoNotEnterJgaButDomainAccuracy) {
  const auto tax = synthetic_taxonomy();
  auto pred = state({{"hotel", "area", "north"}});
  pred.add_domain("taxi");
  const auto ref = state({{"hotel", "area", "north"}});
  const std::vector<EvalTurn> t{turn("a", 1, pred, ref)};
  EXPECT_DOUBLE_EQ(jga(t, tax, MatchPolicy{}), 1.0);
  EXPECT_DOUBLE_EQ(domain_accuracy(t), 0.0);
}

TEST(Jga, EmptyReferenceCountsWhenPredictedEmpty) {
  const auto tax = synthetic_taxonomy();
  EXPECT_DOUBLE_EQ(jga({turn("a", 1, {}, {})}, tax, MatchPolicy{}), 1.0);
}

TEST(Jga, ExactPolicyEqualsBruteForceOnNoisyData) {
  const auto tax = synthetic_taxonomy();
  const auto turns = noisy_turns(60, 11);
  const long c = oracle::correct_count(to_oracle(turns), tax, oracle::Policy::exact());
  EXPECT_DOUBLE_EQ(jga(turns, tax, MatchPolicy::exact()), static_cast<double>(c) / static_cast<double>(turns.size()));
}

TEST(Jga, RelaxationKeepsExactlyCorrectTurns) {
  const auto tax = synthetic_taxonomy();
  const auto turns = noisy_turns(40, 12);
  for (double th : {1.0, 0.9, 0.5, 0.0}) {
    MatchPolicy p;
    p.fuzzy_threshold = th;
    for (const auto& t : turns)
      if (state_matches(t.predicted, t.reference, tax, MatchPolicy::exact()))
        EXPECT_TRUE(state_matches(t.predicted, t.reference, tax, p));
  }
}

TEST(PerTurn, SumsToOverallAndMatchesRecount) {
  const auto tax = synthetic_taxonomy();
  const auto turns = noisy_turns(50, 13);
  const auto per = jga_per_turn(turns, tax, MatchPolicy{});
  long correct = 0, count = 0;
  for (const auto& [idx, s] : per) {
    correct += s.correct;
    count += s.count;
    std::vector<oracle::Turn> subset;
    for (const auto& t : turns)
      if (t.key.turn_index == idx) subset.push_back({oracle::triples(t.predicted), oracle::triples(t.reference)});
    EXPECT_EQ(s.correct, oracle::correct_count(subset, tax, oracle::Policy{}));
    EXPECT_EQ(s.count, static_cast<long>(subset.size()));
  }
  EXPECT_EQ(count, static_cast<long>(turns.size()));
  EXPECT_DOUBLE_EQ(static_cast<double>(correct) / static_cast<double>(count), jga(turns, tax, MatchPolicy{}));
}

TEST(PerTurn, SingleDialogueCountsAreOne) {
  const auto tax = synthetic_taxonomy();
  const auto s = state({{"hotel", "area", "north"}});
  for (const auto& [idx, score] : jga_per_turn({turn("a", 1, s, s), turn("a", 3, s, s), turn("a", 5, {}, s)}, tax, {}))
    EXPECT_EQ(score.count, 1);
}

TEST(GroupF1, PerfectAndIsolation) {
  const auto tax = synthetic_taxonomy();
  const auto ref = state({{"hotel", "area", "north"},
                          {"profile", "name", "alice"},
                          {"taxi", "arriveby", "10:00"},
                          {"hotel", "name", "acorn"}});
  auto f = slot_f1_by_group({turn("a", 1, ref, ref)}, tax, MatchPolicy{});
  for (auto g : kAllGroups) EXPECT_DOUBLE_EQ(f.at(g).f1(), 1.0);

  auto dropped = ref;
  dropped.erase_slot({"profile", "name"});
  f = slot_f1_by_group({turn("a", 1, dropped, ref)}, tax, MatchPolicy{});
  EXPECT_DOUBLE_EQ(f.at(SlotGroup::Profile).recall(), 0.0);
  EXPECT_DOUBLE_EQ(f.at(SlotGroup::Profile).f1(), 0.0);
  for (auto g : {SlotGroup::Categorical, SlotGroup::Time, SlotGroup::Open}) EXPECT_DOUBLE_EQ(f.at(g).f1(), 1.0);
}

TEST(GroupF1, HarmonicMeanIdentity) {
  const GroupScore s{3, 1, 2};
  EXPECT_DOUBLE_EQ(s.precision(), 0.75);
  EXPECT_DOUBLE_EQ(s.recall(), 0.6);
  EXPECT_NEAR(s.f1(), 2 * 0.75 * 0.6 / 1.35, 1e-15);
  EXPECT_DOUBLE_EQ((GroupScore{0, 4, 0}).f1(), 0.0);
}

TEST(GroupF1, MatchesCountingOracle) {
  const auto tax = synthetic_taxonomy();
  const auto turns = noisy_turns(60, 14);
  for (const auto& [policy, opol] : {std::pair{MatchPolicy{}, oracle::Policy{}}, std::pair{MatchPolicy::exact(), oracle::Policy::exact()}}) {
    const auto got = slot_f1_by_group(turns, tax, policy);
    const auto want = oracle::group_counts(to_oracle(turns), tax, opol);
    ASSERT_EQ(got.size(), want.size());
    for (const auto& [g, c] : want) {
      EXPECT_EQ(got.at(g).tp, c.tp);
      EXPECT_EQ(got.at(g).fp, c.fp);
      EXPECT_EQ(got.at(g).fn, c.fn);
    }
  }
}

TEST(GroupF1, UnclassifiedReferenceSlotIsAnError) {
  const auto ref = state({{"spa", "treatment", "massage"}});
  try {
    slot_f1_by_group({turn("a", 1, ref, ref)}, synthetic_taxonomy(), MatchPolicy{});
    FAIL();
  } catch (const CorpusError& e) {
    EXPECT_NE(e.message().find("spa-treatment"), std::string::npos);
  }
}

TEST(ErrorBreakdown, PerfectAndSingleInsertion) {
  const auto tax = synthetic_taxonomy();
  const auto ref = state({{"hotel", "area", "north"}});
  auto eb = error_breakdown({turn("a", 1, ref, ref)}, tax, MatchPolicy{}, 6);
  ASSERT_EQ(eb.size(), 1u);
  EXPECT_EQ(eb[0].second.score(), 0);
  EXPECT_EQ(eb[0].second.ratios, std::vector<double>{1.0});

  auto pred = ref;
  pred.set_slot("hotel", "name", "acorn");
  eb = error_breakdown({turn("a", 1, pred, ref)}, tax, MatchPolicy{}, 6);
  EXPECT_EQ(eb[0].first, (SlotKey{"hotel", "name"}));
  EXPECT_EQ(eb[0].second.insertions, 1);
  EXPECT_EQ(eb[0].second.deletions, 0);
}

TEST(ErrorBreakdown, TopKMatchesRecountOracle) {
  const auto tax = synthetic_taxonomy();
  const auto turns = noisy_turns(80, 15);
  for (int k : {6, 0}) {
    const auto got = error_breakdown(turns, tax, MatchPolicy{}, k);
    const auto want = oracle::ranking(to_oracle(turns), tax, oracle::Policy{}, k);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].first.domain, want[i].key.first);
      EXPECT_EQ(got[i].first.slot, want[i].key.second);
      EXPECT_EQ(got[i].second.insertions, want[i].ins);
      EXPECT_EQ(got[i].second.deletions, want[i].del);
      EXPECT_EQ(got[i].second.ratios, want[i].ratios);
    }
  }
}

TEST(Evaluate, ReportFields) {
  const auto tax = synthetic_taxonomy();
  auto turns = noisy_turns(20, 16);
  turns[0].parse_failed = true;
  const auto r = evaluate(turns, tax, MatchPolicy{}, 3);
  EXPECT_DOUBLE_EQ(r.jga, jga(turns, tax, MatchPolicy::exact()));
  EXPECT_DOUBLE_EQ(r.jga_post, jga(turns, tax, MatchPolicy{}));
  EXPECT_EQ(r.n_dialogues, 20);
  EXPECT_EQ(r.n_turns, static_cast<long>(turns.size()));
  EXPECT_EQ(r.n_parse_failures, 1);
  EXPECT_EQ(r.slot_errors.size(), 3u);
  long total = 0;
  for (const auto& [i, s] : r.per_turn) total += s.count;
  EXPECT_EQ(total, r.n_turns);
}

TEST(Report, DeterministicFiles) {
  const auto r = evaluate(noisy_turns(20, 17), synthetic_taxonomy(), MatchPolicy{});
  testutil::TempDir a("rep-a"), b("rep-b");
  const std::set<ReportFormat> all{ReportFormat::Json, ReportFormat::Csv, ReportFormat::Svg};
  const auto fa = render_report(r, all, a.path());
  const auto fb = render_report(r, all, b.path());
  ASSERT_EQ(fa.size(), 5u);
  for (std::size_t i = 0; i < fa.size(); ++i) {
    EXPECT_EQ(fa[i].filename(), fb[i].filename());
    EXPECT_EQ(testutil::slurp(fa[i]), testutil::slurp(fb[i]));
  }
  const auto js = nlohmann::json::parse(testutil::slurp(a / "report.json"));
  EXPECT_EQ(js["schema_version"], kReportSchemaVersion);
  EXPECT_DOUBLE_EQ(js["jga_post"].get<double>(), r.jga_post);
  EXPECT_EQ(testutil::slurp(a / "report.csv").rfind("section,key,metric,value\n", 0), 0u);
  EXPECT_EQ(testutil::slurp(a / "group_f1.svg").rfind("<svg", 0), 0u);
}

TEST(Report, EmptyReportSaysNoData) {
  const EvalReport r;
  testutil::TempDir dir("rep-empty");
  render_report(r, {ReportFormat::Json, ReportFormat::Csv, ReportFormat::Svg}, dir.path());
  const auto js = nlohmann::json::parse(testutil::slurp(dir / "report.json"));
  EXPECT_EQ(js["status"], "no data");
  EXPECT_TRUE(js["jga"].is_null());
  EXPECT_NE(testutil::slurp(dir / "report.csv").find("no data"), std::string::npos);
  for (const char* f : {"group_f1.svg", "per_turn_jga.svg", "slot_errors.svg"})
    EXPECT_NE(testutil::slurp(dir / f).find("no data"), std::string::npos) << f;
}

TEST(Report, UnwritableDirectory) {
  testutil::TempDir dir("rep-bad");
  testutil::spit(dir / "file", "x");
  EXPECT_THROW(render_report(EvalReport{}, {ReportFormat::Json}, dir / "file" / "sub"), std::exception);
}

TEST(Report, ComparisonCsvLayout) {
  ComparisonTable t;
  t.columns = {"A", "B"};
  t.rows = {{"x", {1.5, std::nullopt}}};
  EXPECT_EQ(comparison_csv(t), ",A,B\nx,1.50%,\n");
}
