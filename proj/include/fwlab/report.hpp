#pragma once

// Deterministic SVG figures from metric CSVs: mean lines with +-1 std bands,
// a 50% chance guide, and frequency tables.

#include <string>
#include <vector>

#include "fwlab/harness.hpp"
#include "fwlab/question.hpp"

namespace fwlab {

struct PlotSpec {
  // accuracy_overall | accuracy_by_answer | accuracy_by_distance |
  // accuracy_by_count_diff | or_exclusive_proportion
  std::string kind = "accuracy_overall";
  std::vector<std::string> probes;  // empty = every probe present
  std::string experiment;           // empty = no filter
  int epoch = -1;                   // bin plots: epoch to slice (-1 = last)
};

// Throws DataError naming any requested group that is absent from the input.
std::string render_plot(const std::vector<MetricRecord>& metrics, const PlotSpec& spec);

std::string render_frequency_table_svg(const FrequencyTable& table);

}  // namespace fwlab
