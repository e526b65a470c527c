#pragma once

#include <string>
#include <vector>

#include "hallucdet/csv.hpp"

namespace hallucdet {

/// Minimum across-seed AP gain for a hallucination comparison to count as a
/// pass in the rendered report.
inline constexpr double kHallucGainThreshold = 0.02;

/// One cell's across-seed statistics, recomputed from the per-seed rows.
/// The stored AGGREGATE row is cross-checked against the recomputation and a
/// mismatch is a parse error (a corrupt or hand-edited file).
struct CellSummary {
  CellId cell;
  std::string source;
  int num_seeds = 0;
  double mean_ap = 0.0;
  double ap_half_width = 0.0;
  double mean_tp = 0.0;
  double tp_half_width = 0.0;
  double mean_fp = 0.0;
  double fp_half_width = 0.0;
  std::vector<int> novel_class_ids;
  std::vector<double> mean_class_ap;
};

CellSummary summarize_cell(const CsvReport& report, const std::string& source);

std::string cell_label(const CellId& cell);

/// Markdown report: one block per cell (mean ± 95% half-width), a comparison
/// section with pass/fail flags for every directional pair found among the
/// cells, and plot-ready x,y,err columns when the cells form a single-axis
/// sweep.
std::string render_report(const std::vector<CellSummary>& cells);

}  // namespace hallucdet
