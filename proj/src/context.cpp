#include "dstlab/context.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <tuple>

#include <fmt/format.h>

#include "dstlab/rng.hpp"

namespace dstlab {

using ojson = nlohmann::ordered_json;

namespace {

/// Shared by assemble() and run_dialogue(), which precomputes z_i once per
/// dialogue instead of once per turn.
AssembledContext build_context(Strategy strategy, const std::vector<SpeechEmbedding>& h,
                               const std::vector<Matrix>* z, std::size_t n, bool compress_current) {
  AssembledContext ctx;
  ctx.strategy = strategy;
  std::vector<const Matrix*> parts;
  std::vector<TurnSpan> spans;
  auto add = [&](std::size_t i, const Matrix& m, bool compressed) {
    parts.push_back(&m);
    spans.push_back({h[i].turn_index, 0, m.rows(), compressed});
  };
  if (strategy == Strategy::Multimodal) {
    add(n - 1, h[n - 1].rows, false);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const bool compress = strategy == Strategy::CompressedSpoken && (i + 1 < n || compress_current);
      if (compress) add(i, (*z)[i], true);
      else add(i, h[i].rows, false);
    }
  }
  Eigen::Index total = 0;
  for (auto& s : spans) {
    s.start = total;
    total += s.rows;
  }
  const Eigen::Index cols = parts.front()->cols();
  ctx.speech_part.resize(total, cols);
  for (std::size_t i = 0; i < parts.size(); ++i) ctx.speech_part.middleRows(spans[i].start, spans[i].rows) = *parts[i];
  ctx.spans = std::move(spans);
  return ctx;
}

}  // namespace

AssembledContext assemble(Strategy strategy, const std::vector<SpeechEmbedding>& turns, const Compressor* compressor,
                          bool compress_current) {
  if (turns.empty()) throw std::invalid_argument("assemble: no turns");
  std::vector<Matrix> z;
  if (strategy == Strategy::CompressedSpoken) {
    if (!compressor) throw std::invalid_argument("assemble: the compressed strategy needs a compressor");
    const std::size_t k = compress_current ? turns.size() : turns.size() - 1;
    for (std::size_t i = 0; i < k; ++i) z.push_back(compressor->forward(turns[i].rows));
    z.resize(turns.size());
  }
  return build_context(strategy, turns, &z, turns.size(), compress_current);
}

Eigen::Index expected_rows(Strategy strategy, const std::vector<Eigen::Index>& turn_rows, int n_queries,
                           bool compress_current) {
  if (turn_rows.empty()) throw std::invalid_argument("expected_rows: no turns");
  const auto n = static_cast<Eigen::Index>(turn_rows.size());
  switch (strategy) {
    case Strategy::Multimodal: return turn_rows.back();
    case Strategy::FullSpoken: {
      Eigen::Index s = 0;
      for (auto r : turn_rows) s += r;
      return s;
    }
    case Strategy::CompressedSpoken:
      return (n - 1) * n_queries + (compress_current ? n_queries : turn_rows.back());
  }
  return 0;
}

// ---- predictors -----------------------------------------------------------------------

std::string state_completion(const PromptSpec& prompt, const DialogueState& state, const std::string& hypothesis) {
  const std::string body = serialize_state(state);
  if (prompt.strategy == Strategy::Multimodal) return ojson(hypothesis).dump() + "," + body.substr(1);
  return body.substr(kSpokenPrefix.size());
}

std::string OracleExact::predict(const PredictorInput& in) const {
  const DialogueState& gold = in.dialogue.gold_states.at(in.turn_index);
  return state_completion(in.prompt, gold, in.dialogue.turn(in.turn_index).transcript);
}

namespace {

std::uint64_t key_hash(std::uint64_t seed, const std::string& dialogue_id, std::string_view a, std::string_view b) {
  return combine64(combine64(combine64(seed, hash_string(dialogue_id)), hash_string(a)), hash_string(b));
}

std::string twelve_hour(const std::string& hhmm) {
  if (hhmm.size() != 5 || hhmm[2] != ':' || !std::isdigit(static_cast<unsigned char>(hhmm[0])) ||
      !std::isdigit(static_cast<unsigned char>(hhmm[1])) || !std::isdigit(static_cast<unsigned char>(hhmm[3])) ||
      !std::isdigit(static_cast<unsigned char>(hhmm[4])))
    return hhmm;
  const int h = std::stoi(hhmm.substr(0, 2));
  if (h > 23) return hhmm;
  const int h12 = h % 12 == 0 ? 12 : h % 12;
  return std::to_string(h12) + ":" + hhmm.substr(3) + (h < 12 ? " am" : " pm");
}

std::string with_typo(const std::string& value, SplitMix64& rng) {
  if (value.empty()) return value;
  std::string out = value;
  const auto pos = rng.below(out.size());
  char c = static_cast<char>('a' + rng.below(26));
  if (c == out[pos]) c = c == 'z' ? 'a' : static_cast<char>(c + 1);
  out[pos] = c;
  return out;
}

}  // namespace

DialogueState OracleNoisy::perturb(const std::string& dialogue_id, const DialogueState& gold) const {
  DialogueState out;
  for (const auto& d : gold.domains()) out.add_domain(d);
  for (const auto& [key, value] : gold.slots()) {
    SplitMix64 rng(key_hash(cfg_.seed, dialogue_id, key.str(), value));
    if (rng.bernoulli(cfg_.drop_prob)) continue;
    std::string v = value;
    const std::string h12 = twelve_hour(v);
    if (h12 != v) {
      if (rng.bernoulli(cfg_.time_format_prob)) v = h12;
    } else if (rng.bernoulli(cfg_.typo_prob)) {
      v = with_typo(v, rng);
    }
    out.set_slot(key.domain, key.slot, v);
  }
  return out;
}

std::string OracleNoisy::predict(const PredictorInput& in) const {
  const DialogueState noisy = perturb(in.dialogue.id, in.dialogue.gold_states.at(in.turn_index));
  const std::string turn_tag = "turn " + std::to_string(in.turn_index);

  std::string hypothesis;
  if (in.prompt.strategy == Strategy::Multimodal) {
    std::istringstream words(in.dialogue.turn(in.turn_index).transcript);
    std::size_t w = 0;
    for (std::string word; words >> word; ++w) {
      SplitMix64 rng(key_hash(cfg_.seed, in.dialogue.id, turn_tag, "asr word " + std::to_string(w)));
      if (rng.bernoulli(cfg_.asr_typo_prob)) word = with_typo(word, rng);
      hypothesis += (hypothesis.empty() ? "" : " ") + word;
    }
  }
  std::string out = state_completion(in.prompt, noisy, hypothesis);
  SplitMix64 rng(key_hash(cfg_.seed, in.dialogue.id, turn_tag, "truncate"));
  if (rng.bernoulli(cfg_.truncate_prob)) out.resize(out.size() * (50 + rng.below(45)) / 100);
  return out;
}

int last_update_turn(const Dialogue& d, int turn_index, const SlotKey& key) {
  const auto v = d.gold_states.at(turn_index).value(key);
  if (!v) throw std::invalid_argument("last_update_turn: " + key.str() + " not set at turn " + std::to_string(turn_index));
  int since = turn_index;
  for (auto it = std::make_reverse_iterator(d.gold_states.upper_bound(turn_index)); it != d.gold_states.rend(); ++it) {
    if (it->second.value(key) != v) break;
    since = it->first;
  }
  return since;
}

int OracleTruncated::first_visible_turn(const AssembledContext& ctx) const {
  Eigen::Index used = 0;
  int first = ctx.spans.empty() ? 1 : ctx.spans.back().turn_index + 1;
  for (auto it = ctx.spans.rbegin(); it != ctx.spans.rend(); ++it) {
    if (used + it->rows > budget_) break;
    used += it->rows;
    first = it->turn_index;
  }
  return first;
}

std::string OracleTruncated::predict(const PredictorInput& in) const {
  const DialogueState& gold = in.dialogue.gold_states.at(in.turn_index);
  const int first = first_visible_turn(in.context);
  DialogueState seen;
  // Walk domains in gold order so the visible state keeps the same domain order.
  for (const auto& d : gold.domains())
    for (const auto& [key, value] : gold.slots())
      if (key.domain == d && last_update_turn(in.dialogue, in.turn_index, key) >= first)
        seen.set_slot(key.domain, key.slot, value);
  const std::string hyp = first <= in.turn_index ? in.dialogue.turn(in.turn_index).transcript : "";
  return state_completion(in.prompt, seen, hyp);
}

// ---- running dialogues ----------------------------------------------------------------

namespace {

Matrix turn_frames(const Turn& t, int feature_dim, const RunOptions& options) {
  if (t.features) return *t.features;
  return transcript_features(t.transcript, feature_dim, options.frames_per_token, options.vocab_seed);
}

}  // namespace

std::vector<SpeechEmbedding> embed_dialogue(const Dialogue& d, const SpeechPipeline& pipeline,
                                            const RunOptions& options) {
  std::vector<SpeechEmbedding> out;
  out.reserve(d.turns.size());
  for (const auto& t : d.turns)
    out.push_back(pipeline.embed(turn_frames(t, pipeline.encoder.in_dim(), options), d.id, t.index));
  return out;
}

std::vector<TurnPrediction> run_dialogue(const Dialogue& d, const StatePredictor& predictor,
                                         const SpeechPipeline& pipeline, const Compressor* compressor,
                                         const RunOptions& options) {
  if (options.strategy == Strategy::CompressedSpoken && !compressor)
    throw std::invalid_argument("run_dialogue: the compressed strategy needs a compressor");
  const auto h = embed_dialogue(d, pipeline, options);
  std::vector<Matrix> z;
  if (options.strategy == Strategy::CompressedSpoken)
    for (const auto& e : h) z.push_back(compressor->forward(e.rows));

  PromptOptions popt;
  popt.stride = pipeline.stride;
  popt.compress_current = options.compress_current;
  if (compressor) popt.n_queries = compressor->config().n_queries;

  std::vector<AsrHypothesis> asr;
  std::vector<TurnPrediction> out;
  for (int t : d.user_turn_indices()) {
    const PromptSpec prompt = build_prompt(options.strategy, d, t, asr, popt);
    AssembledContext ctx = build_context(options.strategy, h, &z, static_cast<std::size_t>(t), options.compress_current);
    ctx.text_part = prompt.text();

    TurnPrediction p;
    p.turn_index = t;
    p.context_rows = ctx.total_rows();
    p.raw_output = predictor.predict({d, t, ctx, prompt});
    std::optional<std::string> hypothesis;
    try {
      ParsedState parsed = parse_state(ctx.text_part + p.raw_output);
      p.state = std::move(parsed.state);
      p.diagnostics = std::move(parsed.diagnostics);
      hypothesis = parsed.user_last_turn;
    } catch (const ParseFailure& e) {
      p.parse_failed = true;
      p.diagnostics.push_back(e.what());
    }
    if (options.strategy == Strategy::Multimodal) {
      if (!hypothesis) p.diagnostics.push_back("no user_last_turn in output; empty hypothesis fed back");
      asr.push_back({t, hypothesis.value_or("")});
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<LengthRow> context_length_report(const std::vector<Dialogue>& corpus,
                                             const std::vector<Strategy>& strategies,
                                             const std::vector<int>& n_queries_list, int stride,
                                             const RunOptions& options) {
  if (stride < 1) throw std::invalid_argument("context_length_report: stride must be >= 1");
  struct Acc {
    double sum = 0.0;
    long count = 0;
  };
  // (strategy position, n_queries, turn) -> sum of rows
  std::map<std::tuple<std::size_t, int, int>, Acc> acc;
  for (const auto& d : corpus) {
    std::vector<Eigen::Index> rows;
    for (const auto& t : d.turns) {
      const Eigen::Index frames =
          t.features ? t.features->rows()
                     : transcript_features(t.transcript, 1, options.frames_per_token, options.vocab_seed).rows();
      rows.push_back((frames + stride - 1) / stride);
    }
    for (int n : d.user_turn_indices()) {
      const std::vector<Eigen::Index> prefix(rows.begin(), rows.begin() + n);
      for (std::size_t s = 0; s < strategies.size(); ++s) {
        if (strategies[s] == Strategy::CompressedSpoken) {
          for (int q : n_queries_list) {
            auto& a = acc[{s, q, n}];
            a.sum += static_cast<double>(expected_rows(strategies[s], prefix, q, options.compress_current));
            ++a.count;
          }
        } else {
          auto& a = acc[{s, 0, n}];
          a.sum += static_cast<double>(expected_rows(strategies[s], prefix, 0));
          ++a.count;
        }
      }
    }
  }
  std::vector<LengthRow> out;
  for (const auto& [k, a] : acc) {
    const auto& [s, q, n] = k;
    out.push_back({to_string(strategies[s]), q, n, a.sum / static_cast<double>(a.count), a.count});
  }
  return out;
}

std::string length_report_csv(const std::vector<LengthRow>& rows) {
  std::string out = "strategy,n_queries,turn_index,mean_rows,count\n";
  for (const auto& r : rows)
    out += fmt::format("{},{},{},{:.4f},{}\n", r.strategy, r.n_queries, r.turn_index, r.mean_rows, r.count);
  return out;
}

}  // namespace dstlab
