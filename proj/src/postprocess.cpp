#include "dstlab/postprocess.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <regex>
#include <vector>

namespace dstlab {

void MatchPolicy::validate() const {
  if (!(fuzzy_threshold >= 0.0 && fuzzy_threshold <= 1.0))
    throw std::invalid_argument("match policy: fuzzy_threshold must be in [0, 1]");
}

MatchPolicy MatchPolicy::exact() {
  MatchPolicy p;
  p.fuzzy_threshold = 1.0;
  p.fuzzy_groups.clear();
  p.time_canonicalization = false;
  return p;
}

nlohmann::ordered_json MatchPolicy::to_json() const {
  nlohmann::ordered_json j;
  j["fuzzy_threshold"] = fuzzy_threshold;
  j["fuzzy_groups"] = nlohmann::ordered_json::array();
  for (auto g : fuzzy_groups) j["fuzzy_groups"].push_back(to_string(g));
  j["time_canonicalization"] = time_canonicalization;
  return j;
}

MatchPolicy MatchPolicy::from_json(const nlohmann::ordered_json& j) {
  MatchPolicy p;
  if (!j.is_object()) throw std::invalid_argument("match policy must be a JSON object");
  if (j.contains("fuzzy_threshold")) p.fuzzy_threshold = j["fuzzy_threshold"].get<double>();
  if (j.contains("fuzzy_groups")) {
    p.fuzzy_groups.clear();
    for (const auto& g : j["fuzzy_groups"]) p.fuzzy_groups.insert(slot_group_from_string(g.get<std::string>()));
  }
  if (j.contains("time_canonicalization")) p.time_canonicalization = j["time_canonicalization"].get<bool>();
  p.validate();
  return p;
}

MatchPolicy MatchPolicy::from_spec(const std::string& spec) {
  if (spec == "exact") return exact();
  if (spec == "fuzzy" || spec == "default") return fuzzy();
  std::ifstream in(spec);
  if (!in) throw std::invalid_argument("policy must be exact, fuzzy, or a readable JSON file: " + spec);
  return from_json(nlohmann::ordered_json::parse(in));
}

std::string normalize_value(std::string_view value) {
  std::string out;
  bool pending_space = false;
  for (char c : value) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::string canonicalize_time(std::string_view value) {
  const std::string v = normalize_value(value);
  if (v == "noon" || v == "12 noon" || v == "midday") return "12:00";
  if (v == "midnight" || v == "12 midnight") return "00:00";

  static const std::regex re(R"(^(\d{1,2})(?:[:.](\d{2}))?\s*(am|pm|a\.m\.|p\.m\.)?$)");
  std::smatch m;
  if (!std::regex_match(v, m, re)) return std::string(value);
  int hour = std::stoi(m[1].str());
  const int minute = m[2].matched ? std::stoi(m[2].str()) : 0;
  if (minute > 59) return std::string(value);
  if (m[3].matched) {
    if (hour < 1 || hour > 12) return std::string(value);
    const bool pm = m[3].str()[0] == 'p';
    hour %= 12;
    if (pm) hour += 12;
  } else if (hour > 23) {
    return std::string(value);
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%02d:%02d", hour, minute);
  return buf;
}

namespace {

std::vector<char32_t> code_points(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    const auto b = static_cast<unsigned char>(s[i]);
    int len = b < 0x80 ? 1 : (b >> 5) == 0x6 ? 2 : (b >> 4) == 0xe ? 3 : (b >> 3) == 0x1e ? 4 : 0;
    bool ok = len > 0 && i + static_cast<std::size_t>(len) <= s.size();
    char32_t cp = len == 1 ? b : len == 2 ? (b & 0x1f) : len == 3 ? (b & 0x0f) : (b & 0x07);
    for (int k = 1; ok && k < len; ++k) {
      const auto c = static_cast<unsigned char>(s[i + k]);
      if ((c >> 6) != 0x2) ok = false;
      cp = (cp << 6) | (c & 0x3f);
    }
    if (!ok) {
      // Invalid byte: keep it as its own symbol, outside the code point range.
      out.push_back(0x110000u + b);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += static_cast<std::size_t>(len);
  }
  return out;
}

}  // namespace

std::size_t edit_distance(std::string_view a, std::string_view b) {
  const auto x = code_points(a);
  const auto y = code_points(b);
  std::vector<std::size_t> prev(y.size() + 1), cur(y.size() + 1);
  for (std::size_t j = 0; j <= y.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= x.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= y.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x[i - 1] == y[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[y.size()];
}

double levenshtein_ratio(std::string_view a, std::string_view b) {
  const std::size_t n = std::max(code_points(a).size(), code_points(b).size());
  if (n == 0) return 1.0;
  return 1.0 - static_cast<double>(edit_distance(a, b)) / static_cast<double>(n);
}

namespace {

std::string prepared(std::string_view v, SlotGroup group, const MatchPolicy& policy) {
  std::string s = normalize_value(v);
  if (group == SlotGroup::Time && policy.time_canonicalization) s = canonicalize_time(s);
  return s;
}

}  // namespace

double value_ratio(std::string_view pred, std::string_view ref, SlotGroup group, const MatchPolicy& policy) {
  return levenshtein_ratio(prepared(pred, group, policy), prepared(ref, group, policy));
}

bool values_match(std::string_view pred, std::string_view ref, SlotGroup group, const MatchPolicy& policy) {
  const std::string a = prepared(pred, group, policy);
  const std::string b = prepared(ref, group, policy);
  if (a == b) return true;
  if (group == SlotGroup::Time && policy.time_canonicalization) return false;
  if (!policy.fuzzy_groups.contains(group)) return false;
  // Small slack so ratios like 1 - 1/10 are not lost to rounding.
  return levenshtein_ratio(a, b) >= policy.fuzzy_threshold - 1e-12;
}

}  // namespace dstlab
