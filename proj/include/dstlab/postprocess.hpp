#pragma once

#include <set>
#include <string>
#include <string_view>

#include <json.hpp>

#include "dstlab/corpus.hpp"

namespace dstlab {

struct MatchPolicy {
  double fuzzy_threshold = 0.90;
  std::set<SlotGroup> fuzzy_groups{SlotGroup::Open, SlotGroup::Profile};
  bool time_canonicalization = true;

  /// Throws std::invalid_argument unless 0 <= fuzzy_threshold <= 1.
  void validate() const;

  /// Threshold 1, no fuzzy groups, no time canonicalization.
  static MatchPolicy exact();
  /// The defaults: time canonicalization plus ratio >= 0.90 on open and
  /// profile slots.
  static MatchPolicy fuzzy() { return {}; }

  nlohmann::ordered_json to_json() const;
  /// Missing fields keep their defaults.
  static MatchPolicy from_json(const nlohmann::ordered_json& j);
  /// "exact", "fuzzy", or a path to a JSON policy file.
  static MatchPolicy from_spec(const std::string& spec);

  bool operator==(const MatchPolicy&) const = default;
};

/// h, h:mm, h.mm with optional am/pm (also "a.m."/"p.m."), "noon",
/// "midnight" -> "HH:MM". Anything else is returned unchanged.
std::string canonicalize_time(std::string_view value);

/// Lower-case, collapse whitespace runs to one space, trim.
std::string normalize_value(std::string_view value);

/// Unit-cost edit distance over Unicode code points (UTF-8 input; bytes that
/// are not valid UTF-8 count as one symbol each).
std::size_t edit_distance(std::string_view a, std::string_view b);

/// 1 - d(a, b) / max(|a|, |b|) in code points; 1 for two empty strings.
double levenshtein_ratio(std::string_view a, std::string_view b);

/// Both sides are normalized; time slots are canonicalized when the policy
/// says so, fuzzy groups compare by ratio, everything else exactly.
bool values_match(std::string_view pred, std::string_view ref, SlotGroup group, const MatchPolicy& policy);

/// Ratio between the two values after the same normalization values_match
/// applies.
double value_ratio(std::string_view pred, std::string_view ref, SlotGroup group, const MatchPolicy& policy);

}  // namespace dstlab
