#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "dstlab/corpus.hpp"
#include "dstlab/log.hpp"

namespace dstlab {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CorpusError("cannot open file", p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + p.string());
}

ojson parse_json(const std::string& text, const std::string& file) {
  try {
    return ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw CorpusError(std::string("malformed JSON: ") + e.what(), file, "byte " + std::to_string(e.byte));
  }
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

double get_f64(const std::string& in, std::size_t pos) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  double d;
  std::memcpy(&d, &bits, sizeof d);
  return d;
}

fs::path sidecar_rel(const std::string& id, int turn) {
  return fs::path("features") / id / (std::to_string(turn) + ".f64");
}

// ---- SpokenWOZ ------------------------------------------------------------------------
//
// Fields read: top-level object id -> {"log": [turn...]}; per turn "tag"
// (speaker), "text" (transcript), "metadata" (state annotation). Everything
// else (audio references, word timings, goals) is ignored.

const std::set<std::string> kAbsentValues = {"", "not mentioned", "none"};

Speaker speaker_from_tag(const std::string& tag, const std::string& file, const std::string& where) {
  const std::string t = to_lower(tag);
  if (t == "user") return Speaker::User;
  if (t == "system" || t == "agent" || t == "sys") return Speaker::Agent;
  throw CorpusError("unknown speaker tag \"" + tag + "\"", file, where);
}

void add_slots(DialogueState& s, const std::string& domain, const ojson& obj, const std::string& prefix) {
  for (const auto& [slot, value] : obj.items()) {
    if (!value.is_string()) continue;  // "booked" lists and the like
    const std::string v = value.get<std::string>();
    if (kAbsentValues.contains(to_lower(v))) continue;
    s.set_slot(domain, prefix + slot, v);
  }
}

DialogueState state_from_metadata(const ojson& meta) {
  DialogueState s;
  if (!meta.is_object()) return s;
  for (const auto& [domain, body] : meta.items()) {
    if (!body.is_object()) continue;
    if (body.contains("semi") || body.contains("book")) {
      if (body.contains("semi") && body["semi"].is_object()) add_slots(s, domain, body["semi"], "");
      if (body.contains("book") && body["book"].is_object()) add_slots(s, domain, body["book"], "book");
    } else {
      add_slots(s, domain, body, "");
    }
  }
  return s;
}

bool has_annotation(const ojson& turn) {
  return turn.contains("metadata") && turn["metadata"].is_object() && !turn["metadata"].empty();
}

std::vector<Dialogue> load_spokenwoz(const fs::path& file, const fs::path& dir) {
  const std::string fname = file.string();
  const ojson root = parse_json(read_file(file), fname);
  if (!root.is_object()) throw CorpusError("expected an object of dialogues", fname, "$");
  std::vector<Dialogue> out;
  for (const auto& [id, body] : root.items()) {
    const std::string where = "$." + id;
    if (!body.is_object() || !body.contains("log") || !body["log"].is_array())
      throw CorpusError("dialogue has no \"log\" array", fname, where);
    const ojson& log_turns = body["log"];
    Dialogue d;
    d.id = id;
    for (std::size_t i = 0; i < log_turns.size(); ++i) {
      const ojson& t = log_turns[i];
      const std::string tw = where + ".log[" + std::to_string(i) + "]";
      if (!t.is_object() || !t.contains("tag") || !t["tag"].is_string())
        throw CorpusError("turn without a speaker tag", fname, tw);
      Turn turn;
      turn.index = static_cast<int>(i) + 1;
      turn.speaker = speaker_from_tag(t["tag"].get<std::string>(), fname, tw);
      if (t.contains("text") && t["text"].is_string()) turn.transcript = t["text"].get<std::string>();
      const fs::path side = dir / sidecar_rel(id, turn.index);
      if (fs::exists(side)) turn.features = decode_sidecar(read_file(side), side.string());
      if (turn.speaker == Speaker::User) {
        const ojson* ann = nullptr;
        if (has_annotation(t)) ann = &t["metadata"];
        else if (i + 1 < log_turns.size() && has_annotation(log_turns[i + 1])) ann = &log_turns[i + 1]["metadata"];
        d.gold_states[turn.index] = ann ? state_from_metadata(*ann) : DialogueState{};
      }
      d.turns.push_back(std::move(turn));
    }
    try {
      d.validate();
    } catch (const CorpusError& e) {
      throw CorpusError(e.message(), fname, e.location());
    }
    out.push_back(std::move(d));
  }
  return out;
}

// ---- synthetic ------------------------------------------------------------------------

std::vector<Dialogue> load_synthetic(const fs::path& file, const fs::path& dir) {
  const std::string fname = file.string();
  const ojson root = parse_json(read_file(file), fname);
  auto fail = [&](const std::string& msg, const std::string& where) { throw CorpusError(msg, fname, where); };
  if (!root.is_object() || root.value("kind", "") != "dstlab-synthetic-corpus") fail("not a synthetic corpus", "$");
  if (root.value("format_version", 0) != kSyntheticFormatVersion)
    fail("unsupported format_version", "$.format_version");
  if (!root.contains("dialogues") || !root["dialogues"].is_array()) fail("missing \"dialogues\" array", "$");

  std::vector<Dialogue> out;
  for (std::size_t n = 0; n < root["dialogues"].size(); ++n) {
    const ojson& jd = root["dialogues"][n];
    const std::string where = "$.dialogues[" + std::to_string(n) + "]";
    try {
      Dialogue d;
      d.id = jd.at("id").get<std::string>();
      for (const auto& jt : jd.at("turns")) {
        Turn t;
        t.index = jt.at("index").get<int>();
        const std::string sp = jt.at("speaker").get<std::string>();
        if (sp == "USER") t.speaker = Speaker::User;
        else if (sp == "AGENT") t.speaker = Speaker::Agent;
        else fail("unknown speaker tag \"" + sp + "\"", where);
        t.transcript = jt.at("transcript").get<std::string>();
        if (jt.contains("features") && !jt["features"].is_null()) {
          const fs::path side = dir / jt["features"].get<std::string>();
          t.features = decode_sidecar(read_file(side), side.string());
        }
        d.turns.push_back(std::move(t));
      }
      for (const auto& [idx, js] : jd.at("gold_states").items()) d.gold_states[std::stoi(idx)] = state_from_json(js);
      d.validate();
      out.push_back(std::move(d));
    } catch (const CorpusError& e) {
      if (!e.file().empty()) throw;
      throw CorpusError(e.message(), fname, e.location().empty() ? where : e.location());
    } catch (const std::exception& e) {
      fail(e.what(), where);
    }
  }
  return out;
}

}  // namespace

CorpusFormat corpus_format_from_string(std::string_view s) {
  if (s == "spokenwoz" || s == "spokenwoz_json") return CorpusFormat::SpokenWozJson;
  if (s == "synthetic" || s == "synthetic_json") return CorpusFormat::SyntheticJson;
  throw std::invalid_argument("unknown corpus format: " + std::string(s));
}

std::vector<Dialogue> load_corpus(const fs::path& path, CorpusFormat format) {
  if (!fs::exists(path)) throw CorpusError("path does not exist", path.string());
  fs::path file = path;
  if (fs::is_directory(path)) file = path / (format == CorpusFormat::SyntheticJson ? "corpus.json" : "data.json");
  const fs::path dir = file.parent_path();
  auto out = format == CorpusFormat::SyntheticJson ? load_synthetic(file, dir) : load_spokenwoz(file, dir);

  std::optional<Eigen::Index> dim;
  for (const auto& d : out)
    for (const auto& t : d.turns) {
      if (!t.features) continue;
      if (dim && *dim != t.features->cols())
        throw CorpusError("feature_dim differs across the corpus", file.string(),
                          d.id + "/turn " + std::to_string(t.index));
      dim = t.features->cols();
    }
  log().debug("loaded {} dialogues from {}", out.size(), file.string());
  return out;
}

std::string encode_sidecar(const Matrix& m, const std::string& dialogue_id, int turn_index) {
  ojson h;
  h["format_version"] = kSidecarFormatVersion;
  h["dtype"] = "f64le";
  h["rows"] = m.rows();
  h["cols"] = m.cols();
  h["dialogue_id"] = dialogue_id;
  h["turn_index"] = turn_index;
  const std::string header = h.dump();
  std::string out = "DSTF";
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  out.reserve(out.size() + static_cast<std::size_t>(m.size()) * 8);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(out, m(r, c));
  return out;
}

Matrix decode_sidecar(const std::string& bytes, const std::string& file) {
  if (bytes.size() < 8 || bytes.compare(0, 4, "DSTF") != 0) throw CorpusError("bad sidecar magic", file, "byte 0");
  const std::uint32_t hlen = get_u32(bytes, 4);
  if (8 + static_cast<std::size_t>(hlen) > bytes.size()) throw CorpusError("truncated sidecar header", file, "byte 4");
  ojson h;
  try {
    h = ojson::parse(bytes.substr(8, hlen));
  } catch (const nlohmann::json::parse_error& e) {
    throw CorpusError("malformed sidecar header", file, "byte " + std::to_string(8 + e.byte));
  }
  const auto rows = h.value("rows", -1);
  const auto cols = h.value("cols", -1);
  if (h.value("format_version", 0) != kSidecarFormatVersion || rows < 1 || cols < 1)
    throw CorpusError("unsupported sidecar header", file, "byte 8");
  const std::size_t start = 8 + hlen;
  const std::size_t need = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * 8;
  if (bytes.size() != start + need)
    throw CorpusError("sidecar payload size does not match header", file, "byte " + std::to_string(start));
  Matrix m(rows, cols);
  std::size_t pos = start;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c, pos += 8) m(r, c) = get_f64(bytes, pos);
  return m;
}

fs::path write_synthetic_corpus(const std::vector<Dialogue>& corpus, const fs::path& dir) {
  fs::create_directories(dir);
  ojson root;
  root["format_version"] = kSyntheticFormatVersion;
  root["kind"] = "dstlab-synthetic-corpus";
  int feature_dim = 0;
  for (const auto& d : corpus)
    for (const auto& t : d.turns)
      if (t.features) feature_dim = static_cast<int>(t.features->cols());
  root["feature_dim"] = feature_dim;
  root["dialogues"] = ojson::array();
  for (const auto& d : corpus) {
    ojson jd;
    jd["id"] = d.id;
    jd["turns"] = ojson::array();
    for (const auto& t : d.turns) {
      ojson jt;
      jt["index"] = t.index;
      jt["speaker"] = to_string(t.speaker);
      jt["transcript"] = t.transcript;
      if (t.features) {
        const fs::path rel = sidecar_rel(d.id, t.index);
        fs::create_directories(dir / rel.parent_path());
        write_file(dir / rel, encode_sidecar(*t.features, d.id, t.index));
        jt["features"] = rel.generic_string();
      }
      jd["turns"].push_back(std::move(jt));
    }
    jd["gold_states"] = ojson::object();
    for (const auto& [idx, s] : d.gold_states) jd["gold_states"][std::to_string(idx)] = state_to_json(s);
    root["dialogues"].push_back(std::move(jd));
  }
  const fs::path file = dir / "corpus.json";
  write_file(file, root.dump(1) + "\n");
  return file;
}

std::vector<Dialogue> filter_corrupted(const std::vector<Dialogue>& dialogues,
                                       const std::vector<std::string>& exclude_ids) {
  const std::set<std::string> excl(exclude_ids.begin(), exclude_ids.end());
  std::set<std::string> seen;
  std::vector<Dialogue> out;
  for (const auto& d : dialogues) {
    if (excl.contains(d.id)) {
      seen.insert(d.id);
      continue;
    }
    out.push_back(d);
  }
  for (const auto& id : excl)
    if (!seen.contains(id)) log().warn("exclude id {} not found in corpus", id);
  return out;
}

std::vector<std::string> load_id_list(const fs::path& path) {
  const ojson j = parse_json(read_file(path), path.string());
  const ojson* arr = &j;
  if (j.is_object()) {
    if (!j.contains("ids")) throw CorpusError("id list object has no \"ids\" field", path.string(), "$");
    arr = &j["ids"];
  }
  if (!arr->is_array()) throw CorpusError("id list must be an array", path.string(), "$");
  std::vector<std::string> out;
  for (const auto& e : *arr) {
    if (!e.is_string()) throw CorpusError("ids must be strings", path.string(), "$.ids");
    out.push_back(e.get<std::string>());
  }
  return out;
}

}  // namespace dstlab
