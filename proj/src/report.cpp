#include "fwlab/report.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "fwlab/util.hpp"

namespace fwlab {

namespace {

constexpr int kWidth = 640, kHeight = 420;
constexpr double kLeft = 62, kRight = 620, kTop = 34, kBottom = 370;

const std::vector<std::string>& palette() {
  static const std::vector<std::string> colors = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                                  "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  return colors;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

struct Series {
  std::string label;
  std::vector<double> x, mean, stddev;
};

struct Frame {
  std::ostringstream svg;
  double x_min = 0, x_max = 1;

  double sx(double x) const {
    if (x_max == x_min) return (kLeft + kRight) / 2;
    return kLeft + (x - x_min) / (x_max - x_min) * (kRight - kLeft);
  }
  double sy(double y) const { return kBottom - y * (kBottom - kTop); }  // y in [0,1]
};

void open_frame(Frame& f, const std::string& x_label, const std::string& y_label,
                const std::string& title) {
  f.svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
        << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
  f.svg << "<rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
  f.svg << "<text x=\"" << (kLeft + kRight) / 2 << "\" y=\"20\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  // axes
  f.svg << "<line x1=\"" << kLeft << "\" y1=\"" << kBottom << "\" x2=\"" << kRight
        << "\" y2=\"" << kBottom << "\" stroke=\"black\"/>\n";
  f.svg << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
        << kBottom << "\" stroke=\"black\"/>\n";
  // y ticks every 0.25
  for (int i = 0; i <= 4; ++i) {
    const double y = i * 0.25;
    f.svg << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << fmt(f.sy(y)) << "\" x2=\"" << kLeft
          << "\" y2=\"" << fmt(f.sy(y)) << "\" stroke=\"black\"/>\n";
    f.svg << "<text x=\"" << kLeft - 8 << "\" y=\"" << fmt(f.sy(y) + 4)
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(y)
          << "</text>\n";
  }
  f.svg << "<text x=\"16\" y=\"" << (kTop + kBottom) / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
        << "transform=\"rotate(-90 16 " << (kTop + kBottom) / 2 << ")\">" << y_label
        << "</text>\n";
  f.svg << "<text x=\"" << (kLeft + kRight) / 2 << "\" y=\"" << kHeight - 12
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << x_label
        << "</text>\n";
}

void draw_x_ticks(Frame& f, const std::vector<double>& xs) {
  std::set<long long> drawn;
  for (double x : xs) {
    const long long key = std::llround(x);
    if (drawn.count(key)) continue;
    drawn.insert(key);
    f.svg << "<line x1=\"" << fmt(f.sx(x)) << "\" y1=\"" << kBottom << "\" x2=\""
          << fmt(f.sx(x)) << "\" y2=\"" << kBottom + 4 << "\" stroke=\"black\"/>\n";
    f.svg << "<text x=\"" << fmt(f.sx(x)) << "\" y=\"" << kBottom + 18
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << key
          << "</text>\n";
  }
}

void draw_chance_line(Frame& f) {
  f.svg << "<line x1=\"" << kLeft << "\" y1=\"" << fmt(f.sy(0.5)) << "\" x2=\"" << kRight
        << "\" y2=\"" << fmt(f.sy(0.5))
        << "\" stroke=\"#999999\" stroke-dasharray=\"6,4\"/>\n";
  f.svg << "<text x=\"" << kRight - 4 << "\" y=\"" << fmt(f.sy(0.5) - 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\" "
        << "fill=\"#999999\">chance</text>\n";
}

void draw_series(Frame& f, const Series& s, const std::string& color) {
  if (s.x.empty()) return;
  // +-1 std band
  std::ostringstream pts;
  for (size_t i = 0; i < s.x.size(); ++i)
    pts << fmt(f.sx(s.x[i])) << "," << fmt(f.sy(std::clamp(s.mean[i] + s.stddev[i], 0.0, 1.0)))
        << " ";
  for (size_t i = s.x.size(); i-- > 0;)
    pts << fmt(f.sx(s.x[i])) << "," << fmt(f.sy(std::clamp(s.mean[i] - s.stddev[i], 0.0, 1.0)))
        << " ";
  f.svg << "<polygon points=\"" << pts.str() << "\" fill=\"" << color
        << "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
  // mean line
  f.svg << "<polyline points=\"";
  for (size_t i = 0; i < s.x.size(); ++i)
    f.svg << fmt(f.sx(s.x[i])) << "," << fmt(f.sy(std::clamp(s.mean[i], 0.0, 1.0))) << " ";
  f.svg << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\"/>\n";
}

void draw_legend(Frame& f, const std::vector<Series>& series) {
  double y = kTop + 8;
  for (size_t i = 0; i < series.size(); ++i) {
    const auto& color = palette()[i % palette().size()];
    f.svg << "<rect x=\"" << kRight - 150 << "\" y=\"" << fmt(y - 8)
          << "\" width=\"12\" height=\"12\" fill=\"" << color << "\"/>\n";
    f.svg << "<text x=\"" << kRight - 133 << "\" y=\"" << fmt(y + 2)
          << "\" font-family=\"sans-serif\" font-size=\"11\">" << series[i].label
          << "</text>\n";
    y += 16;
  }
}

std::string finish(Frame& f) {
  f.svg << "</svg>\n";
  return f.svg.str();
}

struct GroupSlice {
  std::string group_key;
  std::string group_value;  // empty = any (label carries value)
};

std::vector<MetricRecord> filter_metrics(const std::vector<MetricRecord>& metrics,
                                         const PlotSpec& spec) {
  std::vector<MetricRecord> out;
  for (const auto& r : metrics) {
    if (!spec.experiment.empty() && r.experiment != spec.experiment) continue;
    out.push_back(r);
  }
  if (out.empty()) throw DataError("no metric rows match experiment filter: " + spec.experiment);
  return out;
}

std::vector<std::string> probes_in(const std::vector<MetricRecord>& metrics,
                                   const PlotSpec& spec) {
  if (!spec.probes.empty()) return spec.probes;
  std::vector<std::string> names;
  for (const auto& r : metrics)
    if (r.probe != "TRAIN" && r.probe != "VALIDATION" &&
        std::find(names.begin(), names.end(), r.probe) == names.end())
      names.push_back(r.probe);
  return names;
}

// Mean/std across seeds of one (probe, group) over epochs.
Series epoch_series(const std::vector<MetricRecord>& metrics, const std::string& probe,
                    const std::string& group_key, const std::string& group_value,
                    const std::string& label) {
  std::vector<MetricRecord> rows;
  for (const auto& r : metrics)
    if (r.probe == probe && r.group_key == group_key && r.group_value == group_value)
      rows.push_back(r);
  if (rows.empty())
    throw DataError("missing metric group: probe=" + probe + " group=" + group_key + "/" +
                    group_value);
  const auto aggregates = aggregate_runs(rows);
  Series s;
  s.label = label;
  std::map<int, std::pair<double, double>> by_epoch;
  for (const auto& a : aggregates) by_epoch[a.epoch] = {a.mean, a.stddev};
  for (const auto& [epoch, ms] : by_epoch) {
    s.x.push_back(epoch);
    s.mean.push_back(ms.first);
    s.stddev.push_back(ms.second);
  }
  return s;
}

// Mean/std across seeds per integer-valued group at one epoch.
Series bin_series(const std::vector<MetricRecord>& metrics, const std::string& probe,
                  const std::string& group_key, int epoch, const std::string& label) {
  std::vector<MetricRecord> rows;
  for (const auto& r : metrics)
    if (r.probe == probe && r.group_key == group_key && r.epoch == epoch) rows.push_back(r);
  if (rows.empty())
    throw DataError("missing metric group: probe=" + probe + " group=" + group_key +
                    " epoch=" + std::to_string(epoch));
  const auto aggregates = aggregate_runs(rows);
  Series s;
  s.label = label;
  std::map<int, std::pair<double, double>> by_bin;
  for (const auto& a : aggregates) by_bin[std::stoi(a.group_value)] = {a.mean, a.stddev};
  for (const auto& [bin, ms] : by_bin) {
    s.x.push_back(bin);
    s.mean.push_back(ms.first);
    s.stddev.push_back(ms.second);
  }
  return s;
}

int last_epoch(const std::vector<MetricRecord>& metrics) {
  int e = 0;
  for (const auto& r : metrics) e = std::max(e, r.epoch);
  return e;
}

}  // namespace

std::string render_plot(const std::vector<MetricRecord>& metrics, const PlotSpec& spec) {
  const auto rows = filter_metrics(metrics, spec);
  const auto probes = probes_in(rows, spec);
  std::vector<Series> series;
  std::string x_label = "epoch", y_label = "accuracy", title = spec.kind;

  if (spec.kind == "accuracy_overall") {
    for (const auto& p : probes) series.push_back(epoch_series(rows, p, "overall", "all", p));
  } else if (spec.kind == "accuracy_by_answer") {
    for (const auto& p : probes)
      for (const char* ans : {"yes", "no"})
        series.push_back(epoch_series(rows, p, "answer_type", ans, p + std::string(" ") + ans));
  } else if (spec.kind == "or_exclusive_proportion") {
    y_label = "exclusive proportion";
    for (const auto& p : probes)
      series.push_back(epoch_series(rows, p, "or_interpretation", "exclusive", p));
  } else if (spec.kind == "accuracy_by_distance" || spec.kind == "accuracy_by_count_diff") {
    const int epoch = spec.epoch >= 0 ? spec.epoch : last_epoch(rows);
    const char* key = spec.kind == "accuracy_by_distance" ? "distance_bin" : "abs_count_diff";
    x_label = spec.kind == "accuracy_by_distance" ? "distance bin" : "absolute count difference";
    title += " (epoch " + std::to_string(epoch) + ")";
    for (const auto& p : probes) series.push_back(bin_series(rows, p, key, epoch, p));
  } else {
    throw UsageError("unknown plot kind: " + spec.kind);
  }

  Frame f;
  f.x_min = series[0].x.front();
  f.x_max = series[0].x.back();
  for (const auto& s : series) {
    f.x_min = std::min(f.x_min, s.x.front());
    f.x_max = std::max(f.x_max, s.x.back());
  }
  open_frame(f, x_label, y_label, title);
  draw_chance_line(f);
  std::vector<double> ticks;
  for (const auto& s : series) ticks.insert(ticks.end(), s.x.begin(), s.x.end());
  std::sort(ticks.begin(), ticks.end());
  draw_x_ticks(f, ticks);
  for (size_t i = 0; i < series.size(); ++i)
    draw_series(f, series[i], palette()[i % palette().size()]);
  draw_legend(f, series);
  return finish(f);
}

std::string render_frequency_table_svg(const FrequencyTable& table) {
  std::ostringstream svg;
  const auto& pairs = function_word_pairs();
  const int rows = static_cast<int>(pairs.size()) * 2;
  const int height = 90 + rows * 24;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"520\" height=\"" << height
      << "\" viewBox=\"0 0 520 " << height << "\">\n";
  svg << "<rect width=\"520\" height=\"" << height << "\" fill=\"white\"/>\n";
  svg << "<text x=\"260\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"14\">function word frequencies</text>\n";
  const char* headers[] = {"word", "raw", "pair %", "yes", "no"};
  const int cols_x[] = {20, 140, 240, 340, 430};
  for (int c = 0; c < 5; ++c)
    svg << "<text x=\"" << cols_x[c]
        << "\" y=\"52\" font-family=\"sans-serif\" font-size=\"12\" font-weight=\"bold\">"
        << headers[c] << "</text>\n";
  int y = 76;
  char buf[32];
  for (const auto& [a, b] : pairs) {
    for (const auto& word : {a, b}) {
      WordStats s;
      auto it = table.words.find(word);
      if (it != table.words.end()) s = it->second;
      const double share = word == a ? table.pair_share(a, b) : 100.0 - table.pair_share(a, b);
      std::snprintf(buf, sizeof(buf), "%.2f", share);
      svg << "<text x=\"" << cols_x[0] << "\" y=\"" << y
          << "\" font-family=\"sans-serif\" font-size=\"12\">" << word << "</text>\n";
      svg << "<text x=\"" << cols_x[1] << "\" y=\"" << y
          << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.raw << "</text>\n";
      svg << "<text x=\"" << cols_x[2] << "\" y=\"" << y
          << "\" font-family=\"sans-serif\" font-size=\"12\">" << buf << "</text>\n";
      svg << "<text x=\"" << cols_x[3] << "\" y=\"" << y
          << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.yes_q << "</text>\n";
      svg << "<text x=\"" << cols_x[4] << "\" y=\"" << y
          << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.no_q << "</text>\n";
      y += 24;
    }
  }
  svg << "<text x=\"20\" y=\"" << y + 6 << "\" font-family=\"sans-serif\" font-size=\"11\">"
      << "tokens: " << table.total_tokens << ", questions: " << table.total_questions
      << "</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace fwlab
