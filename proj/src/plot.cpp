// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "retlab/plot.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace retlab {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22"};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '&':
        out += "&amp;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw CsvError("cannot write " + path.string());
  out << text;
}

void check_chart(const Chart& chart) {
  if (chart.series.empty()) throw CsvError("nothing to plot: no series");
  for (const auto& s : chart.series) {
    if (s.x.size() != s.y.size()) throw CsvError("series '" + s.name + "' has mismatched x/y lengths");
    if (s.x.empty()) throw CsvError("series '" + s.name + "' is empty");
    if (chart.log_y) {
      for (double y : s.y) {
        if (!(y > 0.0)) throw CsvError("series '" + s.name + "' has non-positive values on a log axis");
      }
    }
  }
}

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  return std::filesystem::path(stem.string() + ext);
}

}  // namespace

size_t CsvTable::column(const std::string& name) const {
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw CsvError("missing column '" + name + "'");
}

bool CsvTable::has_column(const std::string& name) const {
  return std::find(header.begin(), header.end(), name) != header.end();
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw CsvError(path.string() + ":" + std::to_string(n) + ": expected " + std::to_string(t.header.size()) +
                     " fields, found " + std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw CsvError(path.string() + ": empty file");
  return t;
}

double csv_number(const std::string& cell, size_t line, const std::string& column) {
  double v = 0.0;
  const char* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (cell.empty() || ec != std::errc() || ptr != end) {
    throw CsvError("line " + std::to_string(line) + ": column '" + column + "' is not a number: '" + cell + "'");
  }
  return v;
}

std::string render_svg(const Chart& chart) {
  check_chart(chart);
  constexpr double W = 720, H = 440, L = 70, R = 180, T = 40, B = 50;
  auto ty = [&](double y) { return chart.log_y ? std::log10(y) : y; };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : chart.series) {
    for (size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  }
  for (const auto& [name, v] : chart.hlines) {
    if (!chart.log_y || v > 0) {
      y0 = std::min(y0, ty(v));
      y1 = std::max(y1, ty(v));
    }
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (ty(y) - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(chart.title)
    << "</text>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0;
    const double yv = y0 + (y1 - y0) * i / 4.0;
    const double xp = L + (W - L - R) * i / 4.0;
    const double yp = H - B - (H - T - B) * i / 4.0;
    s << "<text x=\"" << fmt(xp) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << fmt(xv, "%.4g")
      << "</text>\n";
    s << "<text x=\"" << L - 6 << "\" y=\"" << fmt(yp + 4) << "\" text-anchor=\"end\">"
      << fmt(chart.log_y ? std::pow(10.0, yv) : yv, "%.3g") << "</text>\n";
  }
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
    << xml_escape(chart.x_label) << "</text>\n";
  s << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (T + H - B) / 2 << ")\">" << xml_escape(chart.y_label) << "</text>\n";
  for (const auto& [name, v] : chart.hlines) {
    if (chart.log_y && !(v > 0)) continue;
    s << "<line x1=\"" << L << "\" y1=\"" << fmt(py(v)) << "\" x2=\"" << W - R << "\" y2=\"" << fmt(py(v))
      << "\" stroke=\"gray\" stroke-dasharray=\"6 4\"/>\n";
    s << "<text x=\"" << W - R + 4 << "\" y=\"" << fmt(py(v) + 4) << "\" fill=\"gray\">" << xml_escape(name)
      << "</text>\n";
  }
  for (size_t k = 0; k < chart.series.size(); ++k) {
    const auto& ser = chart.series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"";
    if (ser.dashed) s << " stroke-dasharray=\"6 4\"";
    s << " points=\"";
    for (size_t i = 0; i < ser.x.size(); ++i) s << (i ? " " : "") << fmt(px(ser.x[i])) << ',' << fmt(py(ser.y[i]));
    s << "\"/>\n";
    const double ly = T + 16.0 * static_cast<double>(k);
    s << "<rect x=\"" << W - R + 10 << "\" y=\"" << ly << "\" width=\"12\" height=\"3\" fill=\"" << color
      << "\"/>\n";
    s << "<text x=\"" << W - R + 26 << "\" y=\"" << ly + 5 << "\">" << xml_escape(ser.name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string render_svg(const BarChart& chart) {
  if (chart.values.empty()) throw CsvError("nothing to plot: no bars");
  if (chart.labels.size() != chart.values.size() ||
      (!chart.baselines.empty() && chart.baselines.size() != chart.values.size())) {
    throw CsvError("bar chart labels, values and baselines differ in length");
  }
  constexpr double W = 640, H = 400, L = 60, T = 40, B = 60;
  double top = 0.0;
  for (double v : chart.values) top = std::max(top, v);
  for (double v : chart.baselines) {
    if (!std::isnan(v)) top = std::max(top, v);
  }
  if (top <= 0) top = 1;
  const double slot = (W - L - 20) / static_cast<double>(chart.values.size());
  auto py = [&](double v) { return H - B - v / top * (H - T - B); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(chart.title)
    << "</text>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - 20 << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  s << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (T + H - B) / 2 << ")\">" << xml_escape(chart.y_label) << "</text>\n";
  for (size_t i = 0; i < chart.values.size(); ++i) {
    const double x = L + slot * static_cast<double>(i) + slot * 0.15;
    const double w = slot * 0.7;
    s << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(py(chart.values[i])) << "\" width=\"" << fmt(w)
      << "\" height=\"" << fmt(H - B - py(chart.values[i])) << "\" fill=\"" << kPalette[0] << "\"/>\n";
    s << "<text x=\"" << fmt(x + w / 2) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">"
      << xml_escape(chart.labels[i]) << "</text>\n";
    s << "<text x=\"" << fmt(x + w / 2) << "\" y=\"" << fmt(py(chart.values[i]) - 4)
      << "\" text-anchor=\"middle\">" << fmt(chart.values[i], "%.3f") << "</text>\n";
    if (!chart.baselines.empty() && !std::isnan(chart.baselines[i])) {
      s << "<line x1=\"" << fmt(x - slot * 0.1) << "\" y1=\"" << fmt(py(chart.baselines[i])) << "\" x2=\""
        << fmt(x + w + slot * 0.1) << "\" y2=\"" << fmt(py(chart.baselines[i]))
        << "\" stroke=\"black\" stroke-dasharray=\"5 3\"/>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

void write_chart(const std::filesystem::path& stem, const Chart& chart) {
  const std::string svg = render_svg(chart);
  std::ostringstream csv;
  csv << "series,x,y\n";
  for (const auto& s : chart.series) {
    const std::string name = csv_field(s.name);
    for (size_t i = 0; i < s.x.size(); ++i) csv << name << ',' << fmt(s.x[i], "%.17g") << ',' << fmt(s.y[i], "%.17g") << '\n';
  }
  write_text(with_ext(stem, ".svg"), svg);
  write_text(with_ext(stem, ".csv"), csv.str());
}

void write_chart(const std::filesystem::path& stem, const BarChart& chart) {
  const std::string svg = render_svg(chart);
  std::ostringstream csv;
  csv << "label,value,baseline\n";
  for (size_t i = 0; i < chart.values.size(); ++i) {
    csv << csv_field(chart.labels[i]) << ',' << fmt(chart.values[i], "%.17g") << ',';
    if (!chart.baselines.empty() && !std::isnan(chart.baselines[i])) csv << fmt(chart.baselines[i], "%.17g");
    csv << '\n';
  }
  write_text(with_ext(stem, ".svg"), svg);
  write_text(with_ext(stem, ".csv"), csv.str());
}

std::vector<PlotSeries> read_series_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const size_t cs = t.column("series"), cx = t.column("x"), cy = t.column("y");
  std::vector<PlotSeries> out;
  std::map<std::string, size_t> index;
  for (size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    auto [it, fresh] = index.try_emplace(row[cs], out.size());
    if (fresh) out.push_back(PlotSeries{row[cs], {}, {}, false});
    out[it->second].x.push_back(csv_number(row[cx], r + 2, "x"));
    out[it->second].y.push_back(csv_number(row[cy], r + 2, "y"));
  }
  return out;
}

PlotKind parse_plot_kind(const std::string& text) {
  if (text == "loss") return PlotKind::Loss;
  if (text == "partial") return PlotKind::Partial;
  if (text == "layers") return PlotKind::Layers;
  if (text == "emergence") return PlotKind::Emergence;
  if (text == "accuracy") return PlotKind::Accuracy;
  throw CsvError("unknown plot kind '" + text + "' (expected loss, partial, layers, emergence or accuracy)");
}

std::vector<std::filesystem::path> emit_plots(PlotKind kind, const std::vector<std::filesystem::path>& inputs,
                                              const std::filesystem::path& stem) {
  if (inputs.empty()) throw CsvError("no input files");
  const bool many = inputs.size() > 1;
  bool same_stem = true;
  for (const auto& p : inputs) same_stem = same_stem && p.stem() == inputs.front().stem();
  // Label series by file stem, or by directory when every input shares a stem.
  auto prefix = [&](const std::filesystem::path& p) {
    if (!many) return std::string();
    const auto dir = std::filesystem::absolute(p).parent_path().filename().string();
    return (same_stem ? dir : p.stem().string()) + " ";
  };
  if (kind == PlotKind::Accuracy) {
    BarChart chart;
    chart.title = "Accuracy by formulation";
    chart.y_label = "accuracy";
    for (const auto& in : inputs) {
      const CsvTable t = read_csv(in);
      const size_t cf = t.column("formulation"), ca = t.column("accuracy"), cb = t.column("random_baseline");
      for (size_t r = 0; r < t.rows.size(); ++r) {
        chart.labels.push_back(prefix(in) + t.rows[r][cf]);
        chart.values.push_back(csv_number(t.rows[r][ca], r + 2, "accuracy"));
        chart.baselines.push_back(csv_number(t.rows[r][cb], r + 2, "random_baseline"));
      }
    }
    write_chart(stem, chart);
    return {with_ext(stem, ".svg"), with_ext(stem, ".csv")};
  }

  Chart chart;
  for (const auto& in : inputs) {
    const CsvTable t = read_csv(in);
    switch (kind) {
      case PlotKind::Loss: {
        chart.title = "Training and validation loss";
        chart.x_label = "step";
        chart.y_label = "MSE";
        chart.log_y = true;
        const size_t cs = t.column("step"), ct = t.column("train_loss"), cv = t.column("val_loss");
        PlotSeries train{prefix(in) + "train", {}, {}, false};
        PlotSeries val{prefix(in) + "validation", {}, {}, false};
        for (size_t r = 0; r < t.rows.size(); ++r) {
          const double step = csv_number(t.rows[r][cs], r + 2, "step");
          if (!t.rows[r][ct].empty()) {
            train.x.push_back(step);
            train.y.push_back(csv_number(t.rows[r][ct], r + 2, "train_loss"));
          }
          if (!t.rows[r][cv].empty()) {
            val.x.push_back(step);
            val.y.push_back(csv_number(t.rows[r][cv], r + 2, "val_loss"));
          }
        }
        if (!train.x.empty()) chart.series.push_back(std::move(train));
        if (!val.x.empty()) chart.series.push_back(std::move(val));
        break;
      }
      case PlotKind::Partial: {
        chart.title = "Partial validation loss by chain position";
        chart.x_label = "step";
        chart.y_label = "MSE";
        chart.log_y = true;
        const size_t cs = t.column("step");
        for (int j = 1; t.has_column("partial_" + std::to_string(j)); ++j) {
          const std::string col = "partial_" + std::to_string(j);
          const size_t cp = t.column(col);
          PlotSeries s{prefix(in) + "x" + std::to_string(j), {}, {}, false};
          for (size_t r = 0; r < t.rows.size(); ++r) {
            if (t.rows[r][cp].empty()) continue;
            s.x.push_back(csv_number(t.rows[r][cs], r + 2, "step"));
            s.y.push_back(csv_number(t.rows[r][cp], r + 2, col));
          }
          if (!s.x.empty()) chart.series.push_back(std::move(s));
        }
        break;
      }
      case PlotKind::Layers: {
        chart.title = "Final validation loss by number of layers";
        chart.x_label = "layers";
        chart.y_label = "final validation MSE";
        const size_t ck = t.column("kind"), cf = t.column("formulation"), cl = t.column("layers"),
                     cv = t.column("final_loss");
        std::map<std::string, std::vector<std::pair<double, double>>> by;
        for (size_t r = 0; r < t.rows.size(); ++r) {
          if (t.rows[r][ck] != "mean" || t.rows[r][cv].empty() || t.rows[r][cv] == "nan") continue;
          by[t.rows[r][cf]].emplace_back(csv_number(t.rows[r][cl], r + 2, "layers"),
                                         csv_number(t.rows[r][cv], r + 2, "final_loss"));
        }
        for (auto& [name, pts] : by) {
          std::sort(pts.begin(), pts.end());
          PlotSeries s{prefix(in) + (name == "ic" ? "IC" : "non-IC"), {}, {}, name != "ic"};
          for (auto [x, y] : pts) {
            s.x.push_back(x);
            s.y.push_back(y);
          }
          chart.series.push_back(std::move(s));
        }
        break;
      }
      case PlotKind::Emergence: {
        chart.title = "Average attention per circuit path";
        chart.x_label = "epoch";
        chart.y_label = "attention";
        chart.hlines = {{"0.5", 0.5}};
        const size_t ce = t.column("epoch"), cp = t.column("path_id"), ca = t.column("attention");
        std::map<std::string, size_t> index;
        for (size_t r = 0; r < t.rows.size(); ++r) {
          auto [it, fresh] = index.try_emplace(t.rows[r][cp], chart.series.size());
          if (fresh) chart.series.push_back(PlotSeries{prefix(in) + t.rows[r][cp], {}, {}, false});
          chart.series[it->second].x.push_back(csv_number(t.rows[r][ce], r + 2, "epoch"));
          chart.series[it->second].y.push_back(csv_number(t.rows[r][ca], r + 2, "attention"));
        }
        break;
      }
      case PlotKind::Accuracy:
        break;
    }
  }
  write_chart(stem, chart);
  return {with_ext(stem, ".svg"), with_ext(stem, ".csv")};
}

}  // namespace retlab
