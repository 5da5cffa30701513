// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Dependency-free SVG charts. Every chart is written together with a long-form
// CSV (series,x,y) of exactly the plotted values.

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace retlab {

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws CsvError when absent.
  size_t column(const std::string& name) const;
  bool has_column(const std::string& name) const;
};

/// Comma-separated with a header row and optional double-quoted fields.
/// Throws CsvError naming the line of any row with the wrong field count.
CsvTable read_csv(const std::filesystem::path& path);

/// Parses a numeric cell; empty cells are rejected. `line` is 1-based.
double csv_number(const std::string& cell, size_t line, const std::string& column);

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  bool dashed = false;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;
  std::vector<PlotSeries> series;
  /// Horizontal reference lines, drawn dashed.
  std::vector<std::pair<std::string, double>> hlines;
};

struct BarChart {
  std::string title;
  std::string y_label;
  std::vector<std::string> labels;
  std::vector<double> values;
  /// Dashed marker per bar (e.g. a random-guess level); NaN for none.
  std::vector<double> baselines;
};

std::string render_svg(const Chart& chart);
std::string render_svg(const BarChart& chart);

/// Writes <stem>.svg and <stem>.csv. Throws before writing anything when a
/// series is empty or x/y lengths differ.
void write_chart(const std::filesystem::path& stem, const Chart& chart);
void write_chart(const std::filesystem::path& stem, const BarChart& chart);

/// Reads a series,x,y CSV back into series (in first-appearance order).
std::vector<PlotSeries> read_series_csv(const std::filesystem::path& path);

enum class PlotKind { Loss, Partial, Layers, Emergence, Accuracy };
PlotKind parse_plot_kind(const std::string& text);

/// Builds a chart of the given kind from tool outputs (metrics, sweep, trace
/// or bench report CSVs) and writes it under `stem`. Returns the files written.
std::vector<std::filesystem::path> emit_plots(PlotKind kind, const std::vector<std::filesystem::path>& inputs,
                                              const std::filesystem::path& stem);

}  // namespace retlab
