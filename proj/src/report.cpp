#include "sleepssl/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace sleepssl::harness {

Layout layout_from_string(const std::string& s) {
  if (s == "table2") return Layout::Table2;
  if (s == "fig2" || s == "fig2_curve") return Layout::Fig2Curve;
  if (s == "fig3" || s == "fig3_bars") return Layout::Fig3Bars;
  if (s == "table3") return Layout::Table3;
  throw std::invalid_argument("unknown report layout '" + s + "'");
}

namespace {

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

struct Row {
  ExperimentConfig cfg;
  const RunResult* result;
};

std::vector<Row> parse_rows(const std::vector<RunResult>& results) {
  std::vector<Row> rows;
  std::set<std::string> datasets;
  for (const auto& r : results) {
    Row row{ExperimentConfig::from_json(r.config_json), &r};
    datasets.insert(row.cfg.dataset_name);
    rows.push_back(std::move(row));
  }
  if (datasets.size() > 1)
    throw std::invalid_argument("aggregate_report: results mix datasets");
  return rows;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::trunc | std::ios::binary);
  if (!f) throw std::runtime_error("report: cannot write " + p.string());
  f << text;
}

// Marks the best (flag 2) and second-best (flag 1) values per column group.
std::vector<int> rank_flags(const std::vector<double>& values) {
  std::vector<int> flags(values.size(), 0);
  if (values.empty()) return flags;
  std::vector<size_t> order(values.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return values[a] > values[b]; });
  flags[order[0]] = 2;
  if (order.size() > 1) flags[order[1]] = 1;
  return flags;
}

// Minimal static SVG: polyline chart with labeled axes.
std::string svg_line_chart(const std::string& title,
                           const std::vector<std::string>& series_names,
                           const std::vector<std::vector<std::pair<double, double>>>& series,
                           const std::string& x_label, const std::string& y_label) {
  const double w = 640, h = 420, ml = 70, mr = 160, mt = 50, mb = 60;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (auto [x, y] : s) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmin >= xmax) xmax = xmin + 1;
  if (ymin >= ymax) ymax = ymin + 1;
  ymin = std::max(0.0, ymin - 0.05 * (ymax - ymin));
  ymax = ymax + 0.05 * (ymax - ymin);
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
  auto py = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(w, 0) +
                    "\" height=\"" + fmt(h, 0) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + fmt(w / 2, 0) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" +
         title + "</text>\n";
  out += "<line x1=\"" + fmt(ml, 0) + "\" y1=\"" + fmt(h - mb, 0) + "\" x2=\"" + fmt(w - mr, 0) +
         "\" y2=\"" + fmt(h - mb, 0) + "\" stroke=\"black\"/>\n";
  out += "<line x1=\"" + fmt(ml, 0) + "\" y1=\"" + fmt(mt, 0) + "\" x2=\"" + fmt(ml, 0) +
         "\" y2=\"" + fmt(h - mb, 0) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = ymin + (ymax - ymin) * i / 4.0;
    out += "<text x=\"" + fmt(ml - 8, 0) + "\" y=\"" + fmt(py(y) + 4, 0) +
           "\" text-anchor=\"end\" font-size=\"11\">" + fmt(y, 2) + "</text>\n";
    const double x = xmin + (xmax - xmin) * i / 4.0;
    out += "<text x=\"" + fmt(px(x), 0) + "\" y=\"" + fmt(h - mb + 18, 0) +
           "\" text-anchor=\"middle\" font-size=\"11\">" + fmt(x, 2) + "</text>\n";
  }
  out += "<text x=\"" + fmt((ml + w - mr) / 2, 0) + "\" y=\"" + fmt(h - 14, 0) +
         "\" text-anchor=\"middle\" font-size=\"13\">" + x_label + "</text>\n";
  out += "<text x=\"18\" y=\"" + fmt((mt + h - mb) / 2, 0) +
         "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 " +
         fmt((mt + h - mb) / 2, 0) + ")\">" + y_label + "</text>\n";
  for (size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % 6];
    std::string pts;
    for (auto [x, y] : series[s]) pts += fmt(px(x), 1) + "," + fmt(py(y), 1) + " ";
    out += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    for (auto [x, y] : series[s])
      out += "<circle cx=\"" + fmt(px(x), 1) + "\" cy=\"" + fmt(py(y), 1) +
             "\" r=\"3\" fill=\"" + color + "\"/>\n";
    out += "<text x=\"" + fmt(w - mr + 14, 0) + "\" y=\"" +
           fmt(mt + 18.0 * static_cast<double>(s) + 10, 0) + "\" font-size=\"12\" fill=\"" +
           color + "\">" + series_names[s] + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& names,
                          const std::vector<double>& values, const std::string& y_label) {
  const double w = 560, h = 400, ml = 70, mr = 30, mt = 50, mb = 80;
  double ymax = 1e-9;
  for (double v : values) ymax = std::max(ymax, v);
  ymax *= 1.15;
  const double bw = (w - ml - mr) / std::max<size_t>(1, values.size());
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(w, 0) +
                    "\" height=\"" + fmt(h, 0) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + fmt(w / 2, 0) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" +
         title + "</text>\n";
  out += "<line x1=\"" + fmt(ml, 0) + "\" y1=\"" + fmt(h - mb, 0) + "\" x2=\"" + fmt(w - mr, 0) +
         "\" y2=\"" + fmt(h - mb, 0) + "\" stroke=\"black\"/>\n";
  out += "<line x1=\"" + fmt(ml, 0) + "\" y1=\"" + fmt(mt, 0) + "\" x2=\"" + fmt(ml, 0) +
         "\" y2=\"" + fmt(h - mb, 0) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = ymax * i / 4.0;
    const double yy = h - mb - y / ymax * (h - mt - mb);
    out += "<text x=\"" + fmt(ml - 8, 0) + "\" y=\"" + fmt(yy + 4, 0) +
           "\" text-anchor=\"end\" font-size=\"11\">" + fmt(y, 3) + "</text>\n";
  }
  out += "<text x=\"18\" y=\"" + fmt((mt + h - mb) / 2, 0) +
         "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 " +
         fmt((mt + h - mb) / 2, 0) + ")\">" + y_label + "</text>\n";
  for (size_t i = 0; i < values.size(); ++i) {
    const double bh = values[i] / ymax * (h - mt - mb);
    const double x = ml + bw * static_cast<double>(i) + bw * 0.15;
    out += "<rect x=\"" + fmt(x, 1) + "\" y=\"" + fmt(h - mb - bh, 1) + "\" width=\"" +
           fmt(bw * 0.7, 1) + "\" height=\"" + fmt(bh, 1) + "\" fill=\"#1f77b4\"/>\n";
    out += "<text x=\"" + fmt(x + bw * 0.35, 1) + "\" y=\"" + fmt(h - mb + 16, 0) +
           "\" text-anchor=\"middle\" font-size=\"12\">" + names[i] + "</text>\n";
    out += "<text x=\"" + fmt(x + bw * 0.35, 1) + "\" y=\"" + fmt(h - mb - bh - 6, 1) +
           "\" text-anchor=\"middle\" font-size=\"11\">" + fmt(values[i], 3) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

// table2: per-class F1 / ACC / MF1 grid, one row per (backbone, algorithm),
// best and second-best flags per (backbone, metric) column.
void emit_table2(const std::vector<Row>& rows, const std::filesystem::path& out_dir) {
  std::string csv =
      "backbone,algorithm,label_fraction,W,N1,N2,N3,REM,ACC,MF1,"
      "flag_W,flag_N1,flag_N2,flag_N3,flag_REM,flag_ACC,flag_MF1\n";
  std::map<std::string, std::vector<const Row*>> by_backbone;
  for (const auto& r : rows)
    by_backbone[models::to_string(r.cfg.model.backbone)].push_back(&r);
  for (auto& [bk, group] : by_backbone) {
    std::sort(group.begin(), group.end(), [](const Row* a, const Row* b) {
      return to_string(a->cfg.algorithm) < to_string(b->cfg.algorithm);
    });
    // Column values: 5 per-class F1 means, then ACC, MF1.
    std::vector<std::vector<double>> cols(7);
    for (const Row* r : group) {
      std::array<double, 5> pcf{};
      int n = 0;
      for (const auto& f : r->result->folds)
        if (f.error.empty()) {
          for (int c = 0; c < 5; ++c) pcf[static_cast<size_t>(c)] += f.metrics.per_class_f1[static_cast<size_t>(c)];
          ++n;
        }
      for (int c = 0; c < 5; ++c)
        cols[static_cast<size_t>(c)].push_back(n ? pcf[static_cast<size_t>(c)] / n : 0.0);
      cols[5].push_back(r->result->mean_acc);
      cols[6].push_back(r->result->mean_mf1);
    }
    std::vector<std::vector<int>> flags;
    for (const auto& c : cols) flags.push_back(rank_flags(c));
    for (size_t i = 0; i < group.size(); ++i) {
      csv += bk + "," + to_string(group[i]->cfg.algorithm) + "," +
             fmt(group[i]->cfg.label_fraction) + ",";
      for (int c = 0; c < 7; ++c) csv += fmt(cols[static_cast<size_t>(c)][i]) + ",";
      for (int c = 0; c < 7; ++c)
        csv += std::to_string(flags[static_cast<size_t>(c)][i]) + (c == 6 ? "" : ",");
      csv += "\n";
    }
  }
  write_file(out_dir / "table2.csv", csv);
}

void emit_fig2(const std::vector<Row>& rows, const std::filesystem::path& out_dir) {
  // algorithm -> fraction -> (mf1 mean, std)
  std::map<std::string, std::map<double, std::pair<double, double>>> curves;
  for (const auto& r : rows)
    curves[to_string(r.cfg.algorithm)][r.cfg.label_fraction] = {r.result->mean_mf1,
                                                                r.result->std_mf1};
  std::string csv = "algorithm,label_fraction,mf1_mean,mf1_std\n";
  std::vector<std::string> names;
  std::vector<std::vector<std::pair<double, double>>> series;
  for (const auto& [algo, pts] : curves) {
    names.push_back(algo);
    std::vector<std::pair<double, double>> line;
    for (const auto& [frac, ms] : pts) {
      csv += algo + "," + fmt(frac) + "," + fmt(ms.first) + "," + fmt(ms.second) + "\n";
      line.push_back({frac * 100.0, ms.first});
    }
    series.push_back(std::move(line));
  }
  write_file(out_dir / "fig2_curve.csv", csv);
  write_file(out_dir / "fig2_curve.svg",
             svg_line_chart("Macro F1 vs labeled fraction", names, series, "labels (%)",
                            "macro F1"));
}

void emit_fig3(const std::vector<Row>& rows, const std::filesystem::path& out_dir) {
  // algorithm -> imbalance mode -> mf1
  std::map<std::string, std::map<std::string, double>> table;
  for (const auto& r : rows)
    table[to_string(r.cfg.algorithm)][to_string(r.cfg.imbalance)] = r.result->mean_mf1;
  std::string csv = "algorithm,mf1_imbalanced,mf1_balanced,abs_delta\n";
  std::vector<std::string> names;
  std::vector<double> deltas;
  for (const auto& [algo, modes] : table) {
    if (!modes.count("none") || !modes.count("oversample_pretext")) continue;
    const double imb = modes.at("none");
    const double bal = modes.at("oversample_pretext");
    csv += algo + "," + fmt(imb) + "," + fmt(bal) + "," + fmt(std::abs(bal - imb)) + "\n";
    names.push_back(algo);
    deltas.push_back(std::abs(bal - imb));
  }
  write_file(out_dir / "fig3_bars.csv", csv);
  write_file(out_dir / "fig3_bars.svg",
             svg_bar_chart("|MF1 balanced - MF1 imbalanced| pretraining", names, deltas,
                           "absolute MF1 gap"));
}

void emit_table3(const std::vector<Row>& rows, const std::filesystem::path& out_dir) {
  // scenario = source->target; rows = algorithm, cols = scenarios + avg
  std::set<std::string> scenarios;
  std::map<std::string, std::map<std::string, double>> table;
  for (const auto& r : rows) {
    if (r.cfg.source_subject.empty()) continue;
    const std::string scen = r.cfg.source_subject + "->" + r.cfg.target_subject;
    scenarios.insert(scen);
    table[to_string(r.cfg.algorithm)][scen] = r.result->mean_mf1;
  }
  std::string csv = "algorithm";
  for (const auto& s : scenarios) csv += "," + s;
  csv += ",avg\n";
  for (const auto& [algo, cells] : table) {
    csv += algo;
    double sum = 0.0;
    int n = 0;
    for (const auto& s : scenarios) {
      auto it = cells.find(s);
      if (it == cells.end()) {
        csv += ",";
      } else {
        csv += "," + fmt(it->second);
        sum += it->second;
        ++n;
      }
    }
    csv += "," + (n ? fmt(sum / n) : std::string()) + "\n";
  }
  write_file(out_dir / "table3.csv", csv);
}

}  // namespace

void aggregate_report(const std::vector<RunResult>& results, Layout layout,
                      const std::filesystem::path& out_dir) {
  if (results.empty()) throw std::invalid_argument("aggregate_report: no results");
  std::filesystem::create_directories(out_dir);
  std::vector<Row> rows = parse_rows(results);
  switch (layout) {
    case Layout::Table2: emit_table2(rows, out_dir); break;
    case Layout::Fig2Curve: emit_fig2(rows, out_dir); break;
    case Layout::Fig3Bars: emit_fig3(rows, out_dir); break;
    case Layout::Table3: emit_table3(rows, out_dir); break;
  }
}

}  // namespace sleepssl::harness
