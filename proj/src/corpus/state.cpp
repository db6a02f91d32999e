#include <algorithm>
#include <cctype>

#include "dstlab/corpus.hpp"

namespace dstlab {

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

const char* to_string(Speaker s) { return s == Speaker::User ? "USER" : "AGENT"; }

bool DialogueState::add_domain(std::string_view domain) {
  std::string d = to_lower(domain);
  if (std::find(domains_.begin(), domains_.end(), d) != domains_.end()) return false;
  domains_.push_back(std::move(d));
  return true;
}

void DialogueState::set_slot(std::string_view domain, std::string_view slot,
                             std::string_view value) {
  add_domain(domain);
  slots_[SlotKey{to_lower(domain), to_lower(slot)}] = to_lower(value);
}

bool DialogueState::erase_slot(const SlotKey& key) { return slots_.erase(key) > 0; }

std::optional<std::string> DialogueState::value(const SlotKey& key) const {
  auto it = slots_.find(key);
  if (it == slots_.end()) return std::nullopt;
  return it->second;
}

void DialogueState::validate() const {
  for (std::size_t i = 0; i < domains_.size(); ++i)
    for (std::size_t j = i + 1; j < domains_.size(); ++j)
      if (domains_[i] == domains_[j]) throw std::logic_error("duplicate domain " + domains_[i]);
  for (const auto& [key, v] : slots_) {
    if (std::find(domains_.begin(), domains_.end(), key.domain) == domains_.end())
      throw std::logic_error("slot " + key.str() + " has unlisted domain");
  }
}

nlohmann::ordered_json state_to_json(const DialogueState& s) {
  nlohmann::ordered_json j;
  j["domains"] = nlohmann::ordered_json::array();
  for (const auto& d : s.domains()) j["domains"].push_back(d);
  auto& ps = j["predicted_state"] = nlohmann::ordered_json::object();
  // slots_ is a std::map, so slots come out sorted within a domain.
  for (const auto& d : s.domains()) {
    nlohmann::ordered_json dom = nlohmann::ordered_json::object();
    for (const auto& [key, value] : s.slots())
      if (key.domain == d) dom[key.slot] = value;
    if (!dom.empty()) ps[d] = std::move(dom);
  }
  return j;
}

DialogueState state_from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw std::runtime_error("state: expected an object");
  DialogueState s;
  if (j.contains("domains")) {
    if (!j["domains"].is_array()) throw std::runtime_error("state: \"domains\" must be an array");
    for (const auto& d : j["domains"]) {
      if (!d.is_string()) throw std::runtime_error("state: domain names must be strings");
      s.add_domain(d.get<std::string>());
    }
  }
  if (j.contains("predicted_state")) {
    const auto& ps = j["predicted_state"];
    if (!ps.is_object()) throw std::runtime_error("state: \"predicted_state\" must be an object");
    for (const auto& [domain, slots] : ps.items()) {
      if (!slots.is_object()) throw std::runtime_error("state: domain " + domain + " is not an object");
      for (const auto& [slot, value] : slots.items()) {
        if (!value.is_string()) throw std::runtime_error("state: value of " + domain + "-" + slot + " is not a string");
        s.set_slot(domain, slot, value.get<std::string>());
      }
    }
  }
  return s;
}

// ---- Turn / Dialogue ------------------------------------------------------------------

bool Turn::operator==(const Turn& o) const {
  if (index != o.index || speaker != o.speaker || transcript != o.transcript) return false;
  if (features.has_value() != o.features.has_value()) return false;
  if (!features) return true;
  return features->rows() == o.features->rows() && features->cols() == o.features->cols() &&
         *features == *o.features;
}

std::vector<int> Dialogue::user_turn_indices() const {
  std::vector<int> out;
  for (const auto& t : turns)
    if (t.speaker == Speaker::User) out.push_back(t.index);
  return out;
}

void Dialogue::validate() const {
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const Turn& t = turns[i];
    if (t.index != static_cast<int>(i) + 1)
      throw CorpusError("turn indices must be 1..n in order", {}, id + "/turn " + std::to_string(i + 1));
    const Speaker expected = i % 2 == 0 ? Speaker::User : Speaker::Agent;
    if (t.speaker != expected)
      throw CorpusError("speaker alternation violated", {}, id + "/turn " + std::to_string(t.index));
    if (t.features && t.features->rows() < 1)
      throw CorpusError("feature matrix has no frames", {}, id + "/turn " + std::to_string(t.index));
  }
  for (const auto& [idx, state] : gold_states) {
    if (idx < 1 || idx > static_cast<int>(turns.size()) || turns[idx - 1].speaker != Speaker::User)
      throw CorpusError("gold state on a non-USER turn", {}, id + "/turn " + std::to_string(idx));
    state.validate();
  }
}

CorpusError::CorpusError(std::string message, std::string file, std::string location)
    : std::runtime_error([&] {
        std::string what = message;
        if (!file.empty()) what += " [" + file + "]";
        if (!location.empty()) what += " at " + location;
        return what;
      }()),
      message_(std::move(message)),
      file_(std::move(file)),
      location_(std::move(location)) {}

// ---- taxonomy -----------------------------------------------------------------------

const char* to_string(SlotGroup g) {
  switch (g) {
    case SlotGroup::Categorical: return "categorical";
    case SlotGroup::Time: return "time";
    case SlotGroup::Open: return "open";
    case SlotGroup::Profile: return "profile";
  }
  return "?";
}

SlotGroup slot_group_from_string(std::string_view s) {
  for (auto g : kAllGroups)
    if (s == to_string(g)) return g;
  throw std::invalid_argument("unknown slot group: " + std::string(s));
}

void SlotTaxonomy::classify(const SlotKey& key, SlotGroup group, std::vector<std::string> allowed) {
  groups_[key] = group;
  if (!allowed.empty()) allowed_[key] = std::move(allowed);
}

std::optional<SlotGroup> SlotTaxonomy::group_of(const SlotKey& key) const {
  auto it = groups_.find(key);
  if (it == groups_.end()) return std::nullopt;
  return it->second;
}

const std::vector<std::string>* SlotTaxonomy::allowed_values(const SlotKey& key) const {
  auto it = allowed_.find(key);
  return it == allowed_.end() ? nullptr : &it->second;
}

void SlotTaxonomy::check_covers(const std::vector<Dialogue>& corpus) const {
  for (const auto& d : corpus)
    for (const auto& [idx, state] : d.gold_states)
      for (const auto& [key, v] : state.slots())
        if (!groups_.contains(key))
          throw CorpusError("unclassified slot " + key.str(), {}, d.id + "/turn " + std::to_string(idx));
}

nlohmann::ordered_json SlotTaxonomy::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& [key, group] : groups_) {
    nlohmann::ordered_json e;
    e["domain"] = key.domain;
    e["slot"] = key.slot;
    e["group"] = to_string(group);
    if (auto* a = allowed_values(key)) e["values"] = *a;
    j.push_back(std::move(e));
  }
  return j;
}

SlotTaxonomy SlotTaxonomy::from_json(const nlohmann::ordered_json& j) {
  SlotTaxonomy t;
  for (const auto& e : j) {
    std::vector<std::string> allowed;
    if (e.contains("values")) allowed = e["values"].get<std::vector<std::string>>();
    t.classify({e.at("domain").get<std::string>(), e.at("slot").get<std::string>()},
               slot_group_from_string(e.at("group").get<std::string>()), std::move(allowed));
  }
  return t;
}

SlotTaxonomy SlotTaxonomy::spokenwoz() {
  using G = SlotGroup;
  const std::vector<std::string> area{"centre", "east", "north", "south", "west"};
  const std::vector<std::string> price{"cheap", "moderate", "expensive"};
  const std::vector<std::string> yes_no{"yes", "no", "free"};
  const std::vector<std::string> days{"monday", "tuesday", "wednesday", "thursday",
                                      "friday", "saturday", "sunday"};
  SlotTaxonomy t;
  t.classify({"attraction", "area"}, G::Categorical, area);
  t.classify({"attraction", "name"}, G::Open);
  t.classify({"attraction", "type"}, G::Categorical);

  t.classify({"hotel", "area"}, G::Categorical, area);
  t.classify({"hotel", "internet"}, G::Categorical, yes_no);
  t.classify({"hotel", "parking"}, G::Categorical, yes_no);
  t.classify({"hotel", "pricerange"}, G::Categorical, price);
  t.classify({"hotel", "stars"}, G::Categorical, {"0", "1", "2", "3", "4", "5"});
  t.classify({"hotel", "type"}, G::Categorical, {"guesthouse", "hotel"});
  t.classify({"hotel", "name"}, G::Open);
  t.classify({"hotel", "bookday"}, G::Categorical, days);
  t.classify({"hotel", "bookpeople"}, G::Categorical);
  t.classify({"hotel", "bookstay"}, G::Categorical);

  t.classify({"restaurant", "area"}, G::Categorical, area);
  t.classify({"restaurant", "food"}, G::Open);
  t.classify({"restaurant", "pricerange"}, G::Categorical, price);
  t.classify({"restaurant", "name"}, G::Open);
  t.classify({"restaurant", "bookday"}, G::Categorical, days);
  t.classify({"restaurant", "bookpeople"}, G::Categorical);
  t.classify({"restaurant", "booktime"}, G::Time);

  t.classify({"train", "arriveby"}, G::Time);
  t.classify({"train", "leaveat"}, G::Time);
  t.classify({"train", "day"}, G::Categorical, days);
  t.classify({"train", "departure"}, G::Open);
  t.classify({"train", "destination"}, G::Open);
  t.classify({"train", "bookpeople"}, G::Categorical);

  t.classify({"taxi", "arriveby"}, G::Time);
  t.classify({"taxi", "leaveat"}, G::Time);
  t.classify({"taxi", "departure"}, G::Open);
  t.classify({"taxi", "destination"}, G::Open);

  t.classify({"hospital", "department"}, G::Open);

  t.classify({"profile", "name"}, G::Profile);
  t.classify({"profile", "phonenumber"}, G::Profile);
  t.classify({"profile", "idnumber"}, G::Profile);
  t.classify({"profile", "email"}, G::Profile);
  t.classify({"profile", "platenumber"}, G::Profile);
  return t;
}

}  // namespace dstlab
