#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "dstlab/corpus.hpp"
#include "dstlab/rng.hpp"

namespace dstlab {

void SynthConfig::validate() const {
  auto need = [](bool ok, const char* field) {
    if (!ok) throw std::invalid_argument(std::string("synth config: ") + field + " must be >= 1");
  };
  need(n_dialogues >= 1, "n_dialogues");
  need(turns_per_dialogue >= 1, "turns_per_dialogue");
  need(feature_dim >= 1, "feature_dim");
  need(slots_per_dialogue >= 1, "slots_per_dialogue");
  need(frames_per_token >= 1, "frames_per_token");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("synth config: noise_sigma must be >= 0");
  if (!(overwrite_prob >= 0.0 && overwrite_prob <= 1.0))
    throw std::invalid_argument("synth config: overwrite_prob must be in [0, 1]");
}

const std::vector<SynthSlot>& synthetic_ontology() {
  using G = SlotGroup;
  static const std::vector<SynthSlot> ontology = {
      {{"hotel", "area"}, G::Categorical, {"north", "south", "east", "west", "centre"}},
      {{"hotel", "pricerange"}, G::Categorical, {"cheap", "moderate", "expensive"}},
      {{"hotel", "name"}, G::Open, {"acorn", "avalon", "bridgeguest", "cityroomz", "gonville", "lensfield"}},
      {{"restaurant", "food"}, G::Categorical, {"italian", "chinese", "indian", "thai", "french", "korean"}},
      {{"restaurant", "name"}, G::Open, {"nandos", "zizzi", "pizzahut", "curryking", "yippee", "meze"}},
      {{"restaurant", "booktime"}, G::Time, {"12:30", "13:45", "17:00", "18:45", "19:15", "20:00"}},
      {{"train", "leaveat"}, G::Time, {"08:15", "09:30", "11:45", "13:00", "17:30", "19:10"}},
      {{"train", "day"}, G::Categorical, {"monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"}},
      {{"train", "destination"}, G::Open, {"cambridge", "london", "ely", "stevenage", "norwich", "peterborough"}},
      {{"taxi", "arriveby"}, G::Time, {"10:00", "12:15", "14:45", "16:20", "18:05", "21:40"}},
      {{"taxi", "departure"}, G::Open, {"airport", "station", "museum", "castle", "college", "market"}},
      {{"profile", "name"}, G::Profile, {"alice", "bob", "carol", "dave", "erin", "frank"}},
      {{"profile", "idnumber"}, G::Profile, {"id4471", "id9203", "id1188", "id5560", "id3379", "id7042"}},
      {{"profile", "email"}, G::Profile, {"amy@web.com", "ben@web.com", "cat@web.com", "dan@web.com", "eve@web.com", "fay@web.com"}},
      {{"profile", "phonenumber"}, G::Profile, {"07700900111", "07700900222", "07700900333", "07700900444", "07700900555", "07700900666"}},
  };
  return ontology;
}

SlotTaxonomy synthetic_taxonomy() {
  SlotTaxonomy t;
  for (const auto& s : synthetic_ontology())
    t.classify(s.key, s.group, s.group == SlotGroup::Categorical ? s.values : std::vector<std::string>{});
  return t;
}

Eigen::RowVectorXd token_vector(std::string_view token, int dim, std::uint64_t seed) {
  SplitMix64 rng(combine64(seed, hash_string(token)));
  Eigen::RowVectorXd v(dim);
  const double scale = std::sqrt(3.0);  // unit variance
  for (int j = 0; j < dim; ++j) v(j) = rng.uniform(-scale, scale);
  return v;
}

namespace {

const char* const kUserFillers[] = {"nothing else for now", "let me think", "yes that is right",
                                    "okay thank you"};
const char* const kAgentFillers[] = {"sure let me check", "what else can i help with",
                                     "okay i have noted that", "anything else",
                                     "one moment please"};

struct Mention {
  std::size_t slot;
  std::string value;
};

std::vector<std::string> split_tokens(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

Matrix render_features(const std::string& transcript, const SynthConfig& cfg,
                       std::uint64_t vocab_seed, SplitMix64& noise) {
  const auto tokens = split_tokens(transcript);
  Matrix m(static_cast<Eigen::Index>(tokens.size()) * cfg.frames_per_token, cfg.feature_dim);
  Eigen::Index row = 0;
  for (const auto& tok : tokens) {
    const Eigen::RowVectorXd v = token_vector(tok, cfg.feature_dim, vocab_seed);
    for (int f = 0; f < cfg.frames_per_token; ++f, ++row) {
      m.row(row) = v;
      if (cfg.noise_sigma > 0.0)
        for (int j = 0; j < cfg.feature_dim; ++j) m(row, j) += cfg.noise_sigma * noise.normal();
    }
  }
  return m;
}

Dialogue make_dialogue(std::uint64_t seed, int n, const SynthConfig& cfg) {
  const auto& onto = synthetic_ontology();
  const std::uint64_t vocab_seed = vocab_seed_for(seed);
  SplitMix64 rng(combine64(seed, static_cast<std::uint64_t>(n)));

  Dialogue d;
  char id[32];
  std::snprintf(id, sizeof id, "syn-%05d", n);
  d.id = id;

  std::vector<int> user_turns;
  for (int t = 1; t <= cfg.turns_per_dialogue; t += 2) user_turns.push_back(t);

  std::vector<std::size_t> slot_order(onto.size());
  for (std::size_t i = 0; i < slot_order.size(); ++i) slot_order[i] = i;
  rng.shuffle(slot_order.begin(), slot_order.end());
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(cfg.slots_per_dialogue), onto.size());

  std::map<int, std::vector<Mention>> mentions;  // user turn -> mentions
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t s = slot_order[i];
    const auto& values = onto[s].values;
    const auto first = rng.below(user_turns.size());
    const auto v0 = rng.below(values.size());
    mentions[user_turns[first]].push_back({s, values[v0]});
    if (first + 1 < user_turns.size() && rng.bernoulli(cfg.overwrite_prob)) {
      const auto later = first + 1 + rng.below(user_turns.size() - first - 1);
      const auto v1 = (v0 + 1 + rng.below(values.size() - 1)) % values.size();
      mentions[user_turns[later]].push_back({s, values[v1]});
    }
  }
  for (auto& [t, ms] : mentions)
    std::sort(ms.begin(), ms.end(), [](const Mention& a, const Mention& b) { return a.slot < b.slot; });

  DialogueState state;
  for (int t = 1; t <= cfg.turns_per_dialogue; ++t) {
    Turn turn;
    turn.index = t;
    turn.speaker = t % 2 == 1 ? Speaker::User : Speaker::Agent;
    if (turn.speaker == Speaker::User) {
      auto it = mentions.find(t);
      if (it == mentions.end()) {
        turn.transcript = kUserFillers[rng.below(std::size(kUserFillers))];
      } else {
        std::string text = "i need";
        for (std::size_t m = 0; m < it->second.size(); ++m) {
          const auto& mention = it->second[m];
          const auto& key = onto[mention.slot].key;
          text += (m == 0 ? " " : " and ") + key.domain + " " + key.slot + " " + mention.value;
          state.set_slot(key.domain, key.slot, mention.value);
        }
        turn.transcript = std::move(text);
      }
      d.gold_states[t] = state;
    } else {
      turn.transcript = kAgentFillers[rng.below(std::size(kAgentFillers))];
    }
    SplitMix64 noise(combine64(combine64(seed, static_cast<std::uint64_t>(n)),
                               0x1000u + static_cast<std::uint64_t>(t)));
    turn.features = render_features(turn.transcript, cfg, vocab_seed, noise);
    d.turns.push_back(std::move(turn));
  }
  return d;
}

}  // namespace

Matrix transcript_features(const std::string& transcript, int feature_dim, int frames_per_token,
                           std::uint64_t vocab_seed) {
  if (feature_dim < 1 || frames_per_token < 1) throw std::invalid_argument("transcript_features: bad dimensions");
  if (split_tokens(transcript).empty()) return Matrix::Zero(1, feature_dim);
  SynthConfig cfg;
  cfg.feature_dim = feature_dim;
  cfg.frames_per_token = frames_per_token;
  cfg.noise_sigma = 0.0;
  SplitMix64 unused(0);
  return render_features(transcript, cfg, vocab_seed, unused);
}

std::uint64_t vocab_seed_for(std::uint64_t corpus_seed) { return combine64(corpus_seed, hash_string("vocab")); }

std::vector<Dialogue> synth_corpus(std::uint64_t seed, const SynthConfig& cfg) {
  cfg.validate();
  std::vector<Dialogue> out;
  out.reserve(static_cast<std::size_t>(cfg.n_dialogues));
  for (int n = 0; n < cfg.n_dialogues; ++n) out.push_back(make_dialogue(seed, n, cfg));
  return out;
}

std::vector<std::pair<SlotKey, std::string>> state_delta(const Dialogue& d, int turn_index) {
  static const DialogueState kEmpty;
  const DialogueState& cur = d.gold_states.at(turn_index);
  const DialogueState* prev = &kEmpty;
  for (auto it = d.gold_states.begin(); it != d.gold_states.end() && it->first < turn_index; ++it)
    prev = &it->second;
  std::vector<std::pair<SlotKey, std::string>> out;
  for (const auto& [key, value] : cur.slots()) {
    auto old = prev->value(key);
    if (!old || *old != value) out.emplace_back(key, value);
  }
  return out;
}

}  // namespace dstlab
