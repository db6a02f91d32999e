#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dstlab/neural/layers.hpp"

namespace dstlab {

using neural::Matrix;

enum class Speaker { User, Agent };

const char* to_string(Speaker s);

struct SlotKey {
  std::string domain;
  std::string slot;

  auto operator<=>(const SlotKey&) const = default;
  bool operator==(const SlotKey&) const = default;
  /// "domain-slot", the usual MultiWOZ-style spelling.
  std::string str() const { return domain + "-" + slot; }
};

/// Active domains plus (domain, slot, value) triples. Names and values are
/// stored lower-cased; a (domain, slot) key has at most one value and every
/// slot's domain is listed in domains().
class DialogueState {
 public:
  /// Appends `domain` if not present. Returns false if already present.
  bool add_domain(std::string_view domain);
  /// Sets or overwrites a slot, adding its domain if needed.
  void set_slot(std::string_view domain, std::string_view slot, std::string_view value);
  bool erase_slot(const SlotKey& key);

  const std::vector<std::string>& domains() const { return domains_; }
  const std::map<SlotKey, std::string>& slots() const { return slots_; }
  std::optional<std::string> value(const SlotKey& key) const;

  bool empty() const { return domains_.empty() && slots_.empty(); }
  /// Throws std::logic_error if an invariant does not hold.
  void validate() const;

  bool operator==(const DialogueState&) const = default;

 private:
  std::vector<std::string> domains_;
  std::map<SlotKey, std::string> slots_;
};

std::string to_lower(std::string_view s);

/// {"domains": [...], "predicted_state": {domain: {slot: value}}} with domains
/// in insertion order and slot names sorted. Domains without slots are
/// omitted from "predicted_state".
nlohmann::ordered_json state_to_json(const DialogueState& s);
/// Strict inverse of state_to_json. Throws std::runtime_error on shape errors.
DialogueState state_from_json(const nlohmann::ordered_json& j);

struct Turn {
  int index = 0;  // 1-based
  Speaker speaker = Speaker::User;
  std::string transcript;
  std::optional<Matrix> features;  // frames × feature_dim

  bool operator==(const Turn& o) const;
};

struct Dialogue {
  std::string id;
  std::vector<Turn> turns;
  std::map<int, DialogueState> gold_states;  // keyed by USER turn index

  std::vector<int> user_turn_indices() const;
  const Turn& turn(int index) const { return turns.at(static_cast<std::size_t>(index - 1)); }
  /// Throws CorpusError when speakers do not alternate starting with USER,
  /// indices are not 1..n, or gold states sit on AGENT turns.
  void validate() const;

  bool operator==(const Dialogue&) const = default;
};

/// Structured load/validation error. `file` and `location` are empty when
/// not applicable; `location` is a byte offset or a JSON path.
class CorpusError : public std::runtime_error {
 public:
  CorpusError(std::string message, std::string file = {}, std::string location = {});
  const std::string& file() const { return file_; }
  const std::string& location() const { return location_; }
  const std::string& message() const { return message_; }

 private:
  std::string message_;
  std::string file_;
  std::string location_;
};

// ---- slot taxonomy --------------------------------------------------------------

enum class SlotGroup { Categorical, Time, Open, Profile };

inline constexpr SlotGroup kAllGroups[] = {SlotGroup::Categorical, SlotGroup::Time,
                                           SlotGroup::Open, SlotGroup::Profile};

const char* to_string(SlotGroup g);
SlotGroup slot_group_from_string(std::string_view s);

class SlotTaxonomy {
 public:
  void classify(const SlotKey& key, SlotGroup group, std::vector<std::string> allowed = {});
  std::optional<SlotGroup> group_of(const SlotKey& key) const;
  const std::vector<std::string>* allowed_values(const SlotKey& key) const;
  const std::map<SlotKey, SlotGroup>& groups() const { return groups_; }

  /// Throws CorpusError naming the first gold-state slot without a group.
  void check_covers(const std::vector<Dialogue>& corpus) const;

  nlohmann::ordered_json to_json() const;
  static SlotTaxonomy from_json(const nlohmann::ordered_json& j);

  /// SpokenWOZ/MultiWOZ-style slots plus the profile domain.
  static SlotTaxonomy spokenwoz();

 private:
  std::map<SlotKey, SlotGroup> groups_;
  std::map<SlotKey, std::vector<std::string>> allowed_;
};

// ---- synthetic corpora ---------------------------------------------------------------

struct SynthConfig {
  int n_dialogues = 20;
  int turns_per_dialogue = 10;
  int feature_dim = 8;
  int slots_per_dialogue = 4;
  double noise_sigma = 0.1;
  /// Each token is rendered as this many identical (pre-noise) frames, so
  /// x6 down-sampling recovers one row per token.
  int frames_per_token = 6;
  /// Chance that an already mentioned slot is re-mentioned later with a
  /// different value.
  double overwrite_prob = 0.2;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// One slot of the synthetic ontology. Values are single tokens and unique
/// across all slots.
struct SynthSlot {
  SlotKey key;
  SlotGroup group;
  std::vector<std::string> values;
};

const std::vector<SynthSlot>& synthetic_ontology();
SlotTaxonomy synthetic_taxonomy();

/// Fixed seed-derived vector for a vocabulary token (counter-based, so it
/// does not depend on generation order).
Eigen::RowVectorXd token_vector(std::string_view token, int dim, std::uint64_t seed);

/// Deterministic given (seed, cfg). USER turns say "i need <domain> <slot>
/// <value> and ..."; AGENT turns carry no slot values. Features are token
/// vectors repeated frames_per_token times plus N(0, noise_sigma^2).
std::vector<Dialogue> synth_corpus(std::uint64_t seed, const SynthConfig& cfg);

/// Noise-free features for arbitrary text with the synthetic vocabulary
/// rendering (each token's vector repeated frames_per_token times). Used for
/// turns that come without feature sidecars. Empty text gives one zero
/// frame.
Matrix transcript_features(const std::string& transcript, int feature_dim, int frames_per_token,
                           std::uint64_t vocab_seed);

/// Vocabulary seed synth_corpus uses for a given corpus seed.
std::uint64_t vocab_seed_for(std::uint64_t corpus_seed);

/// Slots whose value changed (or appeared) at `turn_index` relative to the
/// previous USER turn's gold state.
std::vector<std::pair<SlotKey, std::string>> state_delta(const Dialogue& d, int turn_index);

// ---- I/O ----------------------------------------------------------------------------------

enum class CorpusFormat { SpokenWozJson, SyntheticJson };

CorpusFormat corpus_format_from_string(std::string_view s);

inline constexpr int kSyntheticFormatVersion = 1;
inline constexpr int kSidecarFormatVersion = 1;

/// `path` is a JSON file or a directory holding data.json (SpokenWOZ) or
/// corpus.json (synthetic). Feature sidecars are read from
/// <dir>/features/<dialogue id>/<turn index>.f64 when referenced/present.
std::vector<Dialogue> load_corpus(const std::filesystem::path& path, CorpusFormat format);

/// Writes <dir>/corpus.json plus one sidecar per turn with features.
/// Returns the corpus.json path.
std::filesystem::path write_synthetic_corpus(const std::vector<Dialogue>& corpus,
                                             const std::filesystem::path& dir);

/// Sidecar layout: "DSTF", u32 LE header length, JSON header
/// {"format_version","dialogue_id","turn_index","rows","cols"}, then
/// rows*cols little-endian f64, row-major.
std::string encode_sidecar(const Matrix& m, const std::string& dialogue_id, int turn_index);
Matrix decode_sidecar(const std::string& bytes, const std::string& file = {});

/// Drops dialogues whose id is listed; order preserved. Ids not present in
/// the corpus are logged as warnings.
std::vector<Dialogue> filter_corrupted(const std::vector<Dialogue>& dialogues,
                                       const std::vector<std::string>& exclude_ids);

/// Reads {"ids": [...]} or a plain JSON array of ids.
std::vector<std::string> load_id_list(const std::filesystem::path& path);

}  // namespace dstlab
