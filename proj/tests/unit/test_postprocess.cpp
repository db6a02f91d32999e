#include <gtest/gtest.h>

#include "dstlab/postprocess.hpp"
#include "dstlab/rng.hpp"
#include "oracles.hpp"
#include "util.hpp"

using namespace dstlab;

namespace {

std::string random_word(SplitMix64& rng, std::size_t max_len) {
  static const char32_t kAlphabet[] = {U'a', U'b', U'c', U'd', U' ', U'é', U'ü', U'東'};
  std::u32string s;
  const auto n = rng.below(max_len + 1);
  for (std::uint64_t i = 0; i < n; ++i) s.push_back(kAlphabet[rng.below(std::size(kAlphabet))]);
  return oracle::encode_utf8(s);
}

}  // namespace

TEST(CanonicalizeTime, Definitions) {
  EXPECT_EQ(canonicalize_time("5:30 pm"), "17:30");
  EXPECT_EQ(canonicalize_time("12 am"), "00:00");
  EXPECT_EQ(canonicalize_time("noon"), "12:00");
  EXPECT_EQ(canonicalize_time("the big church"), "the big church");
}

TEST(CanonicalizeTime, EdgeCases) {
  EXPECT_EQ(canonicalize_time("12 pm"), "12:00");
  EXPECT_EQ(canonicalize_time("12:15 a.m."), "00:15");
  EXPECT_EQ(canonicalize_time("7.45"), "07:45");
  EXPECT_EQ(canonicalize_time("7PM"), "19:00");
  EXPECT_EQ(canonicalize_time("  Midnight "), "00:00");
  EXPECT_EQ(canonicalize_time("9"), "09:00");
  EXPECT_EQ(canonicalize_time("23:59"), "23:59");
  EXPECT_EQ(canonicalize_time("24:00"), "24:00");
  EXPECT_EQ(canonicalize_time("13 pm"), "13 pm");
  EXPECT_EQ(canonicalize_time("5:75 pm"), "5:75 pm");
  EXPECT_EQ(canonicalize_time("5:3"), "5:3");
  EXPECT_EQ(canonicalize_time(""), "");
}

TEST(CanonicalizeTime, AgreesWithOracleOnGeneratedForms) {
  const char* suffixes[] = {"", "am", " am", "pm", " p.m.", "a.m.", " PM"};
  for (int h = 0; h <= 25; ++h)
    for (int m : {0, 5, 30, 59, 60})
      for (const char* sep : {":", "."})
        for (const char* suf : suffixes) {
          const std::string v = std::to_string(h) + sep + (m < 10 ? "0" : "") + std::to_string(m) + suf;
          EXPECT_EQ(canonicalize_time(v), oracle::canon_time(v)) << v;
          const std::string bare = std::to_string(h) + suf;
          EXPECT_EQ(canonicalize_time(bare), oracle::canon_time(bare)) << bare;
        }
}

TEST(Normalize, CaseAndWhitespace) {
  EXPECT_EQ(normalize_value("  Pizza\t Hut \n"), "pizza hut");
  EXPECT_EQ(normalize_value(""), "");
}

TEST(Levenshtein, Examples) {
  EXPECT_DOUBLE_EQ(levenshtein_ratio("abc", "abc"), 1.0);
  EXPECT_EQ(edit_distance("kitten", "sitting"), 3u);
  EXPECT_DOUBLE_EQ(levenshtein_ratio("kitten", "sitting"), 1.0 - 3.0 / 7.0);
  EXPECT_NEAR(levenshtein_ratio("kitten", "sitting"), 0.5714, 1e-4);
  EXPECT_DOUBLE_EQ(levenshtein_ratio("a", ""), 0.0);
  EXPECT_DOUBLE_EQ(levenshtein_ratio("", ""), 1.0);
}

TEST(Levenshtein, CountsCodePointsNotBytes) {
  EXPECT_EQ(edit_distance("café", "cafe"), 1u);
  EXPECT_DOUBLE_EQ(levenshtein_ratio("東京", "東"), 0.5);
}

TEST(Levenshtein, MatchesDpOracleAndMetricAxioms) {
  SplitMix64 rng(99);
  for (int i = 0; i < 2000; ++i) {
    const auto a = random_word(rng, 9), b = random_word(rng, 9), c = random_word(rng, 9);
    const auto dab = edit_distance(a, b);
    ASSERT_EQ(dab, oracle::edit_distance(a, b)) << a << " | " << b;
    EXPECT_EQ(dab, edit_distance(b, a));
    EXPECT_LE(edit_distance(a, c), dab + edit_distance(b, c));
    EXPECT_EQ(levenshtein_ratio(a, b) == 1.0, a == b);
  }
}

TEST(ValuesMatch, Examples) {
  const auto policy = MatchPolicy::fuzzy();
  EXPECT_DOUBLE_EQ(levenshtein_ratio("pizza hut fenditton", "pizza hut fen ditton"), 0.95);
  EXPECT_TRUE(values_match("Pizza Hut Fenditton", "pizza hut fen ditton", SlotGroup::Open, policy));
  EXPECT_TRUE(values_match("17:30", "5:30 pm", SlotGroup::Time, policy));
  EXPECT_FALSE(values_match("north", "south", SlotGroup::Categorical, policy));
}

TEST(ValuesMatch, ThresholdBoundaryIsInclusive) {
  const auto policy = MatchPolicy::fuzzy();
  // One edit in ten code points is exactly 0.90.
  EXPECT_TRUE(values_match("abcdefghij", "abcdefghiX", SlotGroup::Profile, policy));
  EXPECT_FALSE(values_match("abcdefghi", "abcdefghX", SlotGroup::Profile, policy));
}

TEST(ValuesMatch, TimeAndCategoricalNeverFuzzy) {
  const auto policy = MatchPolicy::fuzzy();
  EXPECT_FALSE(values_match("17:30", "17:35", SlotGroup::Time, policy));
  EXPECT_FALSE(values_match("peterborough", "peterboroug", SlotGroup::Categorical, policy));
  EXPECT_TRUE(values_match("peterborough", "peterboroug", SlotGroup::Open, policy));
}

TEST(ValuesMatch, ExactPolicyIsCaseInsensitiveEquality) {
  const auto exact = MatchPolicy::exact();
  EXPECT_TRUE(values_match("North ", "north", SlotGroup::Categorical, exact));
  EXPECT_FALSE(values_match("17:30", "5:30 pm", SlotGroup::Time, exact));
  EXPECT_FALSE(values_match("pizza hut fenditton", "pizza hut fen ditton", SlotGroup::Open, exact));
}

TEST(ValuesMatch, SymmetricAndAgreesWithOracle) {
  SplitMix64 rng(5);
  const auto policy = MatchPolicy::fuzzy();
  const oracle::Policy op;
  for (int i = 0; i < 3000; ++i) {
    const auto a = random_word(rng, 12), b = random_word(rng, 12);
    for (auto g : kAllGroups) {
      const bool ab = values_match(a, b, g, policy);
      EXPECT_EQ(ab, values_match(b, a, g, policy));
      EXPECT_EQ(ab, oracle::match(a, b, g, op)) << a << " | " << b;
    }
  }
}

TEST(MatchPolicy, JsonAndValidation) {
  MatchPolicy p;
  p.fuzzy_threshold = 0.8;
  p.fuzzy_groups = {SlotGroup::Open};
  p.time_canonicalization = false;
  EXPECT_EQ(MatchPolicy::from_json(p.to_json()), p);
  EXPECT_EQ(MatchPolicy::from_spec("exact"), MatchPolicy::exact());
  EXPECT_EQ(MatchPolicy::from_spec("fuzzy"), MatchPolicy{});
  p.fuzzy_threshold = 1.5;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  EXPECT_THROW(MatchPolicy::from_json(nlohmann::ordered_json::parse(R"({"fuzzy_threshold": -0.1})")),
               std::invalid_argument);
  EXPECT_THROW(MatchPolicy::from_spec("/no/such/policy.json"), std::invalid_argument);

  testutil::TempDir dir("policy");
  testutil::spit(dir / "p.json", R"({"fuzzy_threshold": 0.75})");
  const auto loaded = MatchPolicy::from_spec((dir / "p.json").string());
  EXPECT_DOUBLE_EQ(loaded.fuzzy_threshold, 0.75);
  EXPECT_EQ(loaded.fuzzy_groups, MatchPolicy{}.fuzzy_groups);
}
