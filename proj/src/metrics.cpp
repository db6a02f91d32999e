#include "dstlab/metrics.hpp"

#include <algorithm>

namespace dstlab {

namespace {

std::string key_list(const std::vector<TurnKey>& keys) {
  std::string out;
  for (std::size_t i = 0; i < keys.size() && i < 10; ++i)
    out += (i ? ", " : "") + keys[i].dialogue_id + "/" + std::to_string(keys[i].turn_index);
  if (keys.size() > 10) out += ", ... (" + std::to_string(keys.size()) + " total)";
  return out;
}

}  // namespace

AlignmentError::AlignmentError(std::vector<TurnKey> missing, std::vector<TurnKey> unexpected,
                               std::vector<TurnKey> duplicated)
    : std::runtime_error([&] {
        std::string what = "predictions do not align with references";
        if (!missing.empty()) what += "; missing: " + key_list(missing);
        if (!unexpected.empty()) what += "; unexpected: " + key_list(unexpected);
        if (!duplicated.empty()) what += "; duplicated: " + key_list(duplicated);
        return what;
      }()),
      missing_(std::move(missing)),
      unexpected_(std::move(unexpected)),
      duplicated_(std::move(duplicated)) {}

std::vector<EvalTurn> align(const std::vector<PredictionRecord>& predictions,
                            const std::vector<Dialogue>& references) {
  std::map<TurnKey, const PredictionRecord*> by_key;
  std::vector<TurnKey> duplicated;
  for (const auto& p : predictions) {
    TurnKey k{p.dialogue_id, p.turn_index};
    if (!by_key.emplace(k, &p).second) duplicated.push_back(k);
  }
  std::vector<EvalTurn> out;
  std::vector<TurnKey> missing;
  std::set<TurnKey> used;
  for (const auto& d : references) {
    for (const auto& [idx, gold] : d.gold_states) {
      TurnKey k{d.id, idx};
      auto it = by_key.find(k);
      if (it == by_key.end()) {
        missing.push_back(k);
        continue;
      }
      used.insert(k);
      EvalTurn t;
      t.key = k;
      t.reference = gold;
      t.parse_failed = !it->second->parsed_state.has_value();
      if (it->second->parsed_state) t.predicted = *it->second->parsed_state;
      out.push_back(std::move(t));
    }
  }
  std::vector<TurnKey> unexpected;
  for (const auto& [k, p] : by_key)
    if (!used.contains(k)) unexpected.push_back(k);
  if (!missing.empty() || !unexpected.empty() || !duplicated.empty()) {
    std::sort(missing.begin(), missing.end());
    std::sort(duplicated.begin(), duplicated.end());
    throw AlignmentError(std::move(missing), std::move(unexpected), std::move(duplicated));
  }
  std::sort(out.begin(), out.end(), [](const EvalTurn& a, const EvalTurn& b) { return a.key < b.key; });
  return out;
}

SlotGroup group_or_exact(const SlotTaxonomy& taxonomy, const SlotKey& key) {
  return taxonomy.group_of(key).value_or(SlotGroup::Categorical);
}

bool state_matches(const DialogueState& pred, const DialogueState& ref, const SlotTaxonomy& taxonomy,
                   const MatchPolicy& policy) {
  const auto& p = pred.slots();
  const auto& r = ref.slots();
  if (p.size() != r.size()) return false;
  // Both maps are sorted by key, so walking them together compares key sets.
  for (auto a = p.begin(), b = r.begin(); a != p.end(); ++a, ++b) {
    if (a->first != b->first) return false;
    if (!values_match(a->second, b->second, group_or_exact(taxonomy, a->first), policy)) return false;
  }
  return true;
}

double jga(const std::vector<EvalTurn>& turns, const SlotTaxonomy& taxonomy, const MatchPolicy& policy) {
  if (turns.empty()) return 0.0;
  long correct = 0;
  for (const auto& t : turns) correct += state_matches(t.predicted, t.reference, taxonomy, policy);
  return static_cast<double>(correct) / static_cast<double>(turns.size());
}

std::map<int, TurnScore> jga_per_turn(const std::vector<EvalTurn>& turns, const SlotTaxonomy& taxonomy,
                                      const MatchPolicy& policy) {
  std::map<int, TurnScore> out;
  for (const auto& t : turns) {
    auto& s = out[t.key.turn_index];
    ++s.count;
    s.correct += state_matches(t.predicted, t.reference, taxonomy, policy);
  }
  return out;
}

double GroupScore::precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp); }
double GroupScore::recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }
double GroupScore::f1() const {
  const double p = precision(), r = recall();
  return p == 0.0 || r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

std::map<SlotGroup, GroupScore> slot_f1_by_group(const std::vector<EvalTurn>& turns, const SlotTaxonomy& taxonomy,
                                                 const MatchPolicy& policy) {
  std::map<SlotGroup, GroupScore> out;
  for (const auto& t : turns) {
    for (const auto& [key, value] : t.reference.slots()) {
      const auto g = taxonomy.group_of(key);
      if (!g) throw CorpusError("unclassified slot " + key.str(), {}, t.key.dialogue_id + "/turn " + std::to_string(t.key.turn_index));
      auto pv = t.predicted.value(key);
      if (!pv || !values_match(*pv, value, *g, policy)) ++out[*g].fn;
    }
    for (const auto& [key, value] : t.predicted.slots()) {
      const auto g = taxonomy.group_of(key);
      if (!g) continue;
      auto rv = t.reference.value(key);
      if (rv && values_match(value, *rv, *g, policy)) ++out[*g].tp;
      else ++out[*g].fp;
    }
  }
  return out;
}

long SlotErrors::imperfect() const {
  return static_cast<long>(std::count_if(ratios.begin(), ratios.end(), [](double r) { return r < 1.0; }));
}

std::vector<std::pair<SlotKey, SlotErrors>> error_breakdown(const std::vector<EvalTurn>& turns,
                                                            const SlotTaxonomy& taxonomy,
                                                            const MatchPolicy& policy, int top_k) {
  std::map<SlotKey, SlotErrors> acc;
  for (const auto& t : turns) {
    for (const auto& [key, value] : t.predicted.slots()) {
      auto rv = t.reference.value(key);
      if (!rv) ++acc[key].insertions;
      else acc[key].ratios.push_back(value_ratio(value, *rv, group_or_exact(taxonomy, key), policy));
    }
    for (const auto& [key, value] : t.reference.slots())
      if (!t.predicted.value(key)) ++acc[key].deletions;
  }
  std::vector<std::pair<SlotKey, SlotErrors>> out(acc.begin(), acc.end());
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second.score() > b.second.score(); });
  if (top_k > 0 && out.size() > static_cast<std::size_t>(top_k)) out.resize(static_cast<std::size_t>(top_k));
  return out;
}

double domain_accuracy(const std::vector<EvalTurn>& turns) {
  if (turns.empty()) return 0.0;
  long ok = 0;
  for (const auto& t : turns) {
    const auto& a = t.predicted.domains();
    const auto& b = t.reference.domains();
    ok += std::set<std::string>(a.begin(), a.end()) == std::set<std::string>(b.begin(), b.end());
  }
  return static_cast<double>(ok) / static_cast<double>(turns.size());
}

ComparisonTable published_context_table() {
  ComparisonTable t;
  t.columns = {"SWOZ Dev", "SWOZ Test"};
  t.rows = {
      {"Multimodal Context (baseline)", {31.85, 32.06}},
      {"Full Spoken Context", {36.89, 36.29}},
      {"Compressed Spoken Context", {std::nullopt, std::nullopt}},
      {"1 query", {31.03, 30.99}},
      {"10 queries", {34.26, 33.51}},
  };
  return t;
}

EvalReport evaluate(const std::vector<EvalTurn>& turns, const SlotTaxonomy& taxonomy, const MatchPolicy& policy,
                    int top_k) {
  EvalReport r;
  r.policy = policy;
  r.jga = jga(turns, taxonomy, MatchPolicy::exact());
  r.jga_post = jga(turns, taxonomy, policy);
  r.domain_accuracy = domain_accuracy(turns);
  r.per_turn = jga_per_turn(turns, taxonomy, policy);
  r.group_f1 = slot_f1_by_group(turns, taxonomy, policy);
  r.slot_errors = error_breakdown(turns, taxonomy, policy, top_k);
  std::set<std::string> dialogues;
  for (const auto& t : turns) {
    dialogues.insert(t.key.dialogue_id);
    r.n_parse_failures += t.parse_failed;
  }
  r.n_dialogues = static_cast<long>(dialogues.size());
  r.n_turns = static_cast<long>(turns.size());
  return r;
}

}  // namespace dstlab
