// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "retlab/plot.hpp"

using namespace retlab;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("retlab_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

size_t count(const std::string& hay, const std::string& needle) {
  size_t n = 0;
  for (size_t p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("empty series are rejected before anything is written") {
  const fs::path d = temp_dir("plot_empty");
  Chart c;
  c.series.push_back({"a", {}, {}});
  CHECK_THROWS(write_chart(d / "x", c));
  CHECK_FALSE(fs::exists(d / "x.svg"));
  CHECK_FALSE(fs::exists(d / "x.csv"));
  c.series[0] = {"a", {1, 2}, {1}};
  CHECK_THROWS(write_chart(d / "x", c));
  CHECK(fs::is_empty(d));
}

TEST_CASE("one series draws one polyline") {
  const fs::path d = temp_dir("plot_line");
  Chart c;
  c.series.push_back({"train", {0, 10}, {1.0, 0.5}});
  write_chart(d / "loss", c);
  const std::string svg = slurp(d / "loss.svg");
  CHECK(count(svg, "<polyline") == 1);
  const auto pts = svg.find("points=\"");
  REQUIRE(pts != std::string::npos);
  const std::string attr = svg.substr(pts + 8, svg.find('"', pts + 8) - pts - 8);
  CHECK(count(attr, ",") == 2);
}

TEST_CASE("written CSV reads back exactly") {
  const fs::path d = temp_dir("plot_rt");
  Chart c;
  c.log_y = true;
  c.series.push_back({"a", {0, 1, 2}, {0.1, 1.0 / 3.0, 1e-7}});
  c.series.push_back({"b, quoted", {5}, {2.5}, true});
  write_chart(d / "c", c);
  const auto back = read_series_csv(d / "c.csv");
  REQUIRE(back.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(back[i].name == c.series[i].name);
    CHECK(back[i].x == c.series[i].x);
    CHECK(back[i].y == c.series[i].y);
  }
}

TEST_CASE("bar charts") {
  const fs::path d = temp_dir("plot_bar");
  BarChart b;
  b.labels = {"equations", "kingdoms"};
  b.values = {0.9, 0.4};
  b.baselines = {0.25, NAN};
  write_chart(d / "acc", b);
  const std::string svg = slurp(d / "acc.svg");
  CHECK(count(svg, "<rect") >= 2);
  const CsvTable t = read_csv(d / "acc.csv");
  CHECK(t.header == std::vector<std::string>{"label", "value", "baseline"});
  CHECK(t.rows.size() == 2);
  b.values.pop_back();
  CHECK_THROWS(write_chart(d / "bad", b));
}

TEST_CASE("malformed CSV reports the line") {
  const fs::path d = temp_dir("plot_bad");
  std::ofstream(d / "m.csv") << "a,b\n1,2\n\"x,y\",3\n4\n";
  try {
    read_csv(d / "m.csv");
    FAIL("expected CsvError");
  } catch (const CsvError& e) {
    CHECK(std::string(e.what()).find(":4:") != std::string::npos);
  }
  CHECK_THROWS_AS(csv_number("", 2, "x"), CsvError);
  CHECK_THROWS_AS(csv_number("1.5x", 2, "x"), CsvError);
  CHECK(csv_number("-2.5e-3", 2, "x") == -2.5e-3);
}

TEST_CASE("loss plot from a metrics file") {
  const fs::path d = temp_dir("plot_emit");
  std::ofstream(d / "metrics.csv") << "step,epoch,train_loss,val_loss,partial_1\n0,0,,1.0,1.0\n1,0,0.9,,\n2,0,0.8,0.7,0.7\n";
  const auto files = emit_plots(PlotKind::Loss, {d / "metrics.csv"}, d / "loss");
  CHECK(files.size() == 2);
  const auto s = read_series_csv(d / "loss.csv");
  REQUIRE(s.size() == 2);
  CHECK(s[0].x == std::vector<double>{1, 2});
  CHECK(s[1].y == std::vector<double>{1.0, 0.7});
  CHECK(parse_plot_kind("emergence") == PlotKind::Emergence);
  CHECK_THROWS(parse_plot_kind("pie"));
}
