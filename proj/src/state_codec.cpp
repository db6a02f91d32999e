#include "dstlab/state_codec.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <ostream>

namespace dstlab {

using ojson = nlohmann::ordered_json;

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::Multimodal: return "multimodal";
    case Strategy::FullSpoken: return "full";
    case Strategy::CompressedSpoken: return "compressed";
  }
  return "?";
}

Strategy strategy_from_string(std::string_view s) {
  if (s == "multimodal") return Strategy::Multimodal;
  if (s == "full" || s == "full_spoken") return Strategy::FullSpoken;
  if (s == "compressed" || s == "compressed_spoken") return Strategy::CompressedSpoken;
  throw std::invalid_argument("unknown strategy: " + std::string(s));
}

std::string serialize_state(const DialogueState& state) { return state_to_json(state).dump(); }

// ---- tolerant parsing -------------------------------------------------------------------

namespace {

struct Cut {
  std::size_t pos;     // keep text[0, pos)
  std::string stack;   // open brackets at that point
};

std::string closers(const std::string& stack) {
  std::string out;
  for (auto it = stack.rbegin(); it != stack.rend(); ++it) out.push_back(*it == '{' ? '}' : ']');
  return out;
}

/// Drops commas that directly precede a closing bracket (outside strings).
std::string strip_trailing_commas(const std::string& s, bool& changed) {
  std::string out;
  out.reserve(s.size());
  bool in_str = false, esc = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (in_str) {
      out.push_back(c);
      if (esc) esc = false;
      else if (c == '\\') esc = true;
      else if (c == '"') in_str = false;
      continue;
    }
    if (c == '"') in_str = true;
    if (c == ',') {
      std::size_t j = i + 1;
      while (j < s.size() && std::isspace(static_cast<unsigned char>(s[j]))) ++j;
      if (j == s.size() || s[j] == '}' || s[j] == ']') {
        changed = true;
        continue;
      }
    }
    out.push_back(c);
  }
  return out;
}

std::optional<ojson> try_parse(const std::string& s) {
  ojson j = ojson::parse(s, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

/// Returns the recovered outermost object and appends repair notes.
std::optional<ojson> recover_object(std::string_view text, std::vector<std::string>& diag) {
  const auto start = text.find('{');
  if (start == std::string_view::npos) return std::nullopt;

  std::string stack;
  std::vector<Cut> cuts;
  bool in_str = false, esc = false;
  std::size_t end = std::string_view::npos;
  for (std::size_t i = start; i < text.size(); ++i) {
    const char c = text[i];
    if (in_str) {
      if (esc) esc = false;
      else if (c == '\\') esc = true;
      else if (c == '"') in_str = false;
      continue;
    }
    if (c == '"') {
      in_str = true;
    } else if (c == '{' || c == '[') {
      stack.push_back(c);
      cuts.push_back({i - start + 1, stack});
    } else if (c == '}' || c == ']') {
      if (stack.empty()) break;
      stack.pop_back();
      if (stack.empty()) {
        end = i + 1;
        break;
      }
      cuts.push_back({i - start + 1, stack});
    } else if (c == ',') {
      cuts.push_back({i - start, stack});
    }
  }

  if (end != std::string_view::npos) {
    if (end < text.size() && text.find_first_not_of(" \t\r\n", end) != std::string_view::npos)
      diag.push_back("ignored text after the closing brace");
    std::string body(text.substr(start, end - start));
    bool changed = false;
    body = strip_trailing_commas(body, changed);
    if (auto j = try_parse(body)) {
      if (changed) diag.push_back("repaired: trailing comma");
      return j;
    }
    return std::nullopt;
  }

  // Cut off before the object closed.
  std::string body(text.substr(start));
  std::string tail;
  if (in_str) {
    if (esc) body.pop_back();
    tail = "\"";
  }
  bool changed = false;
  std::string candidate = strip_trailing_commas(body + tail + closers(stack), changed);
  if (auto j = try_parse(candidate)) {
    diag.push_back(in_str ? "repaired: unterminated string" : "repaired: unterminated object");
    return j;
  }
  for (auto it = cuts.rbegin(); it != cuts.rend(); ++it) {
    candidate = strip_trailing_commas(body.substr(0, it->pos) + closers(it->stack), changed);
    if (auto j = try_parse(candidate)) {
      diag.push_back("repaired: unterminated object, dropped an incomplete trailing field");
      return j;
    }
  }
  return std::nullopt;
}

std::optional<std::string> scalar_text(const ojson& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number() || v.is_boolean()) return v.dump();
  return std::nullopt;
}

}  // namespace

ParsedState parse_state(std::string_view text) {
  ParsedState out;
  auto root = recover_object(text, out.diagnostics);
  if (!root) throw ParseFailure("no JSON object could be recovered", std::string(text));

  const ojson* domains = nullptr;
  const ojson* pred = nullptr;
  for (const auto& [k, v] : root->items()) {
    const std::string key = to_lower(k);
    if (key == "domains") domains = &v;
    else if (key == "predicted_state") pred = &v;
    else if (key == "user_last_turn" && v.is_string()) out.user_last_turn = v.get<std::string>();
  }
  if (!domains && !pred) throw ParseFailure("object has neither \"domains\" nor \"predicted_state\"", std::string(text));

  if (domains) {
    if (domains->is_array()) {
      for (const auto& d : *domains) {
        if (auto s = scalar_text(d)) out.state.add_domain(*s);
        else out.diagnostics.push_back("ignored a non-string domain");
      }
    } else if (domains->is_string()) {
      out.state.add_domain(domains->get<std::string>());
      out.diagnostics.push_back("\"domains\" was a string, not an array");
    } else {
      out.diagnostics.push_back("ignored malformed \"domains\"");
    }
  }
  if (pred) {
    if (!pred->is_object()) {
      out.diagnostics.push_back("ignored malformed \"predicted_state\"");
    } else {
      for (const auto& [domain, slots] : pred->items()) {
        if (!slots.is_object()) {
          out.diagnostics.push_back("ignored non-object domain " + domain);
          continue;
        }
        if (out.state.add_domain(domain) && domains) out.diagnostics.push_back("domain " + to_lower(domain) + " added from predicted_state");
        for (const auto& [slot, value] : slots.items()) {
          auto s = scalar_text(value);
          if (!s) {
            out.diagnostics.push_back("ignored non-scalar value for " + domain + "-" + slot);
            continue;
          }
          out.state.set_slot(domain, slot, *s);
        }
      }
    }
  }
  return out;
}

// ---- prompts --------------------------------------------------------------------------

std::string PromptSpec::text() const {
  std::string out;
  for (const auto& seg : segments)
    if (auto* t = std::get_if<TextSegment>(&seg)) out += t->text;
  return out;
}

std::vector<EmbeddingSlot> PromptSpec::embedding_slots() const {
  std::vector<EmbeddingSlot> out;
  for (const auto& seg : segments)
    if (auto* e = std::get_if<EmbeddingSlot>(&seg)) out.push_back(*e);
  return out;
}

std::string multimodal_prefix(const std::string& history) {
  return "{\"history\":" + ojson(history).dump() + ",\"user_last_turn\":";
}

std::string history_string(const Dialogue& dialogue, int turn_index,
                           const std::vector<AsrHypothesis>& asr_history,
                           const std::map<int, std::string>& agent_texts) {
  std::string out;
  for (int t = 1; t < turn_index; ++t) {
    const Turn& turn = dialogue.turn(t);
    std::string text;
    if (turn.speaker == Speaker::User) {
      auto it = std::find_if(asr_history.begin(), asr_history.end(),
                             [&](const AsrHypothesis& h) { return h.turn_index == t; });
      if (it == asr_history.end())
        throw std::invalid_argument("no ASR hypothesis for USER turn " + std::to_string(t) + " of " + dialogue.id);
      text = it->text;
    } else {
      auto it = agent_texts.find(t);
      text = it == agent_texts.end() ? turn.transcript : it->second;
    }
    if (!out.empty()) out += " ; ";
    out += std::string(to_string(turn.speaker)) + ": " + text;
  }
  return out;
}

PromptSpec build_prompt(Strategy strategy, const Dialogue& dialogue, int turn_index,
                        const std::vector<AsrHypothesis>& asr_history, const PromptOptions& options) {
  if (turn_index < 1 || turn_index > static_cast<int>(dialogue.turns.size()) ||
      dialogue.turn(turn_index).speaker != Speaker::User)
    throw std::invalid_argument("build_prompt: turn " + std::to_string(turn_index) + " of " + dialogue.id +
                                " is not a USER turn");
  auto rows = [&](int t) {
    const Turn& turn = dialogue.turn(t);
    if (!turn.features) return 0;
    return static_cast<int>((turn.features->rows() + options.stride - 1) / options.stride);
  };

  PromptSpec p;
  p.strategy = strategy;
  if (strategy == Strategy::Multimodal) {
    p.segments.push_back(EmbeddingSlot{turn_index, rows(turn_index)});
    p.segments.push_back(TextSegment{
        multimodal_prefix(history_string(dialogue, turn_index, asr_history, options.agent_texts))});
    return p;
  }
  for (int t = 1; t <= turn_index; ++t) {
    const bool compressed = strategy == Strategy::CompressedSpoken && (t < turn_index || options.compress_current);
    p.segments.push_back(EmbeddingSlot{t, compressed ? options.n_queries : rows(t)});
  }
  p.segments.push_back(TextSegment{std::string(kSpokenPrefix)});
  return p;
}

// ---- prediction files --------------------------------------------------------------------

std::string prediction_to_line(const PredictionRecord& r) {
  ojson j;
  j["dialogue_id"] = r.dialogue_id;
  j["turn_index"] = r.turn_index;
  j["raw_output"] = r.raw_output;
  if (r.parsed_state) j["parsed_state"] = state_to_json(*r.parsed_state);
  return j.dump();
}

PredictionRecord prediction_from_line(std::string_view line) {
  const ojson j = ojson::parse(line);
  PredictionRecord r;
  r.dialogue_id = j.at("dialogue_id").get<std::string>();
  r.turn_index = j.at("turn_index").get<int>();
  r.raw_output = j.at("raw_output").get<std::string>();
  if (j.contains("parsed_state") && !j["parsed_state"].is_null()) r.parsed_state = state_from_json(j["parsed_state"]);
  return r;
}

void write_predictions(std::ostream& out, const std::vector<PredictionRecord>& records) {
  for (const auto& r : records) out << prediction_to_line(r) << '\n';
}

std::vector<PredictionRecord> read_predictions(std::istream& in) {
  std::vector<PredictionRecord> out;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(prediction_from_line(line));
    } catch (const std::exception& e) {
      throw std::runtime_error("prediction line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dstlab
