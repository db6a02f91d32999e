#include <algorithm>
#include <fstream>

#include <fmt/format.h>

#include "dstlab/metrics.hpp"

namespace dstlab {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

ReportFormat report_format_from_string(std::string_view s) {
  if (s == "json") return ReportFormat::Json;
  if (s == "csv") return ReportFormat::Csv;
  if (s == "svg") return ReportFormat::Svg;
  throw std::invalid_argument("unknown report format: " + std::string(s));
}

namespace {

std::string num(double v) { return fmt::format("{:.6f}", v); }

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

ojson comparison_json(const ComparisonTable& t) {
  ojson j;
  j["columns"] = t.columns;
  j["rows"] = ojson::array();
  for (const auto& row : t.rows) {
    ojson r;
    r["label"] = row.label;
    r["values"] = ojson::array();
    for (const auto& v : row.values) r["values"].push_back(v ? ojson(*v) : ojson(nullptr));
    j["rows"].push_back(std::move(r));
  }
  return j;
}

// Minimal SVG canvas shared by the charts.
struct Svg {
  int width, height;
  std::string body;

  Svg(int w, int h, const std::string& title) : width(w), height(h) {
    body += fmt::format("<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>\n", w, h);
    text(w / 2, 24, title, "middle", 16);
  }
  void text(double x, double y, const std::string& s, const char* anchor = "start", int size = 11) {
    body += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-family=\"sans-serif\" font-size=\"{}\" text-anchor=\"{}\">{}</text>\n",
                        x, y, size, anchor, xml_escape(s));
  }
  void rect(double x, double y, double w, double h, const char* fill) {
    body += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"{}\"/>\n", x, y, w, h, fill);
  }
  void line(double x1, double y1, double x2, double y2) {
    body += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#333333\"/>\n", x1, y1, x2, y2);
  }
  void no_data() { text(width / 2.0, height / 2.0, "no data", "middle", 14); }
  std::string str() const {
    return fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
                       width, height, width, height) +
           body + "</svg>\n";
  }
};

constexpr double kLeft = 60, kTop = 40, kPlotH = 220;

void axes(Svg& s, double plot_w, double ymax, bool percent) {
  s.line(kLeft, kTop, kLeft, kTop + kPlotH);
  s.line(kLeft, kTop + kPlotH, kLeft + plot_w, kTop + kPlotH);
  for (int i = 0; i <= 4; ++i) {
    const double v = ymax * i / 4.0;
    const double y = kTop + kPlotH - kPlotH * i / 4.0;
    s.text(kLeft - 6, y + 4, percent ? fmt::format("{:.2f}", v) : fmt::format("{:.0f}", v), "end", 10);
  }
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << bytes;
  if (!out) throw std::runtime_error("write failed: " + p.string());
}

}  // namespace

std::string report_json(const EvalReport& r) {
  ojson j;
  j["schema_version"] = kReportSchemaVersion;
  j["status"] = r.empty() ? "no data" : "ok";
  j["policy"] = r.policy.to_json();
  j["n_dialogues"] = r.n_dialogues;
  j["n_turns"] = r.n_turns;
  j["n_parse_failures"] = r.n_parse_failures;
  auto rate = [&](double v) { return r.empty() ? ojson(nullptr) : ojson(v); };
  j["jga"] = rate(r.jga);
  j["jga_post"] = rate(r.jga_post);
  j["domain_accuracy"] = rate(r.domain_accuracy);
  j["per_turn"] = ojson::array();
  for (const auto& [idx, s] : r.per_turn)
    j["per_turn"].push_back({{"turn_index", idx}, {"jga", s.jga()}, {"correct", s.correct}, {"count", s.count}});
  j["group_f1"] = ojson::array();
  for (const auto& [g, s] : r.group_f1)
    j["group_f1"].push_back({{"group", to_string(g)}, {"precision", s.precision()}, {"recall", s.recall()},
                             {"f1", s.f1()}, {"tp", s.tp}, {"fp", s.fp}, {"fn", s.fn}});
  j["slot_errors"] = ojson::array();
  for (const auto& [k, e] : r.slot_errors)
    j["slot_errors"].push_back({{"slot", k.str()}, {"insertions", e.insertions}, {"deletions", e.deletions},
                                {"imperfect", e.imperfect()}, {"ratios", e.ratios}});
  if (r.comparison) j["comparison"] = comparison_json(*r.comparison);
  return j.dump(2) + "\n";
}

std::string report_csv(const EvalReport& r) {
  std::string out = "section,key,metric,value\n";
  auto row = [&](const std::string& section, const std::string& key, const std::string& metric, const std::string& v) {
    out += section + "," + csv_cell(key) + "," + metric + "," + v + "\n";
  };
  if (r.empty()) {
    row("summary", "all", "status", "no data");
    return out;
  }
  row("summary", "all", "n_dialogues", std::to_string(r.n_dialogues));
  row("summary", "all", "n_turns", std::to_string(r.n_turns));
  row("summary", "all", "n_parse_failures", std::to_string(r.n_parse_failures));
  row("summary", "all", "jga", num(r.jga));
  row("summary", "all", "jga_post", num(r.jga_post));
  row("summary", "all", "domain_accuracy", num(r.domain_accuracy));
  for (const auto& [idx, s] : r.per_turn) {
    row("per_turn", std::to_string(idx), "jga", num(s.jga()));
    row("per_turn", std::to_string(idx), "count", std::to_string(s.count));
  }
  for (const auto& [g, s] : r.group_f1) {
    row("group_f1", to_string(g), "precision", num(s.precision()));
    row("group_f1", to_string(g), "recall", num(s.recall()));
    row("group_f1", to_string(g), "f1", num(s.f1()));
    row("group_f1", to_string(g), "tp", std::to_string(s.tp));
    row("group_f1", to_string(g), "fp", std::to_string(s.fp));
    row("group_f1", to_string(g), "fn", std::to_string(s.fn));
  }
  for (const auto& [k, e] : r.slot_errors) {
    row("slot_errors", k.str(), "insertions", std::to_string(e.insertions));
    row("slot_errors", k.str(), "deletions", std::to_string(e.deletions));
    row("slot_errors", k.str(), "matched", std::to_string(e.ratios.size()));
    row("slot_errors", k.str(), "imperfect", std::to_string(e.imperfect()));
    row("slot_errors", k.str(), "mean_ratio", num(mean(e.ratios)));
  }
  return out;
}

std::string comparison_csv(const ComparisonTable& t) {
  std::string out;
  for (const auto& c : t.columns) out += "," + csv_cell(c);
  out += "\n";
  for (const auto& row : t.rows) {
    out += csv_cell(row.label);
    for (std::size_t i = 0; i < t.columns.size(); ++i) {
      out += ",";
      if (i < row.values.size() && row.values[i]) out += fmt::format("{:.2f}%", *row.values[i]);
    }
    out += "\n";
  }
  return out;
}

std::string svg_group_f1(const EvalReport& r) {
  Svg s(480, 300, "F1 by slot group");
  if (r.group_f1.empty()) {
    s.no_data();
    return s.str();
  }
  const double plot_w = 400, slot_w = plot_w / static_cast<double>(r.group_f1.size());
  axes(s, plot_w, 1.0, true);
  double x = kLeft;
  for (const auto& [g, score] : r.group_f1) {
    const double h = kPlotH * score.f1();
    s.rect(x + slot_w * 0.2, kTop + kPlotH - h, slot_w * 0.6, h, "#4c72b0");
    s.text(x + slot_w / 2, kTop + kPlotH + 16, to_string(g), "middle");
    s.text(x + slot_w / 2, kTop + kPlotH - h - 4, fmt::format("{:.3f}", score.f1()), "middle", 10);
    x += slot_w;
  }
  return s.str();
}

std::string svg_per_turn(const EvalReport& r) {
  Svg s(640, 300, "JGA per turn");
  if (r.per_turn.empty()) {
    s.no_data();
    return s.str();
  }
  const double plot_w = 560;
  axes(s, plot_w, 1.0, true);
  const int first = r.per_turn.begin()->first, last = r.per_turn.rbegin()->first;
  const double span = std::max(1, last - first);
  std::string points;
  for (const auto& [idx, score] : r.per_turn) {
    const double x = kLeft + plot_w * (idx - first) / span;
    const double y = kTop + kPlotH - kPlotH * score.jga();
    points += fmt::format("{}{:.1f},{:.1f}", points.empty() ? "" : " ", x, y);
    s.body += fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"3\" fill=\"#4c72b0\"><title>turn {}: {:.4f} (n={})</title></circle>\n",
                          x, y, idx, score.jga(), score.count);
  }
  s.body += "<polyline fill=\"none\" stroke=\"#4c72b0\" points=\"" + points + "\"/>\n";
  s.text(kLeft, kTop + kPlotH + 16, std::to_string(first), "middle");
  s.text(kLeft + plot_w, kTop + kPlotH + 16, std::to_string(last), "middle");
  s.text(kLeft + plot_w / 2, kTop + kPlotH + 32, "turn index", "middle");
  return s.str();
}

std::string svg_slot_errors(const EvalReport& r) {
  Svg s(720, 320, "Slot errors");
  if (r.slot_errors.empty()) {
    s.no_data();
    return s.str();
  }
  long ymax = 1;
  for (const auto& [k, e] : r.slot_errors) ymax = std::max({ymax, e.insertions, e.deletions, e.imperfect()});
  const double plot_w = 640, slot_w = plot_w / static_cast<double>(r.slot_errors.size());
  axes(s, plot_w, static_cast<double>(ymax), false);
  double x = kLeft;
  const char* colors[] = {"#dd8452", "#c44e52", "#4c72b0"};
  for (const auto& [k, e] : r.slot_errors) {
    const long counts[] = {e.insertions, e.deletions, e.imperfect()};
    for (int b = 0; b < 3; ++b) {
      const double h = kPlotH * static_cast<double>(counts[b]) / static_cast<double>(ymax);
      s.rect(x + slot_w * (0.1 + 0.27 * b), kTop + kPlotH - h, slot_w * 0.25, h, colors[b]);
    }
    s.text(x + slot_w / 2, kTop + kPlotH + 16, k.str(), "middle", 9);
    s.text(x + slot_w / 2, kTop + kPlotH + 30, fmt::format("mean ratio {:.3f}", mean(e.ratios)), "middle", 9);
    x += slot_w;
  }
  s.rect(kLeft, 290, 10, 10, colors[0]);
  s.text(kLeft + 14, 299, "insertions");
  s.rect(kLeft + 100, 290, 10, 10, colors[1]);
  s.text(kLeft + 114, 299, "deletions");
  s.rect(kLeft + 200, 290, 10, 10, colors[2]);
  s.text(kLeft + 214, 299, "ratio < 1");
  return s.str();
}

std::vector<fs::path> render_report(const EvalReport& r, const std::set<ReportFormat>& formats, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  std::vector<fs::path> out;
  auto emit = [&](const char* name, const std::string& bytes) {
    write_file(dir / name, bytes);
    out.push_back(dir / name);
  };
  if (formats.contains(ReportFormat::Json)) emit("report.json", report_json(r));
  if (formats.contains(ReportFormat::Csv)) {
    emit("report.csv", report_csv(r));
    if (r.comparison) emit("comparison.csv", comparison_csv(*r.comparison));
  }
  if (formats.contains(ReportFormat::Svg)) {
    emit("group_f1.svg", svg_group_f1(r));
    emit("per_turn_jga.svg", svg_per_turn(r));
    emit("slot_errors.svg", svg_slot_errors(r));
  }
  return out;
}

}  // namespace dstlab
