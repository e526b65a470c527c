#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hallucdet/pipeline.hpp"

namespace hallucdet {

/// One experiment cell's identity: every column of the CSV that is constant
/// across seeds. em_iters uses 0 to mean joint training (the schema stays
/// numeric and the two training modes stay distinguishable).
struct CellId {
  int shot = 1;
  ProposalMode proposal = ProposalMode::single;
  HeadKind head = HeadKind::cosine;
  HallucinatorVariant variant = HallucinatorVariant::conservative;
  int m = 20;
  int em_iters = 2;
};

CellId cell_from_config(const TrainConfig& config);

/// Header: seed,shot,proposal_mode,head_kind,variant,m,em_iters,
/// mean_novel_ap,tp_count,fp_count,ap_class_<id>... (one per novel class).
std::string csv_header(const std::vector<int>& novel_class_ids);

/// Renders one row per seed (integer counts) followed by a final AGGREGATE
/// row holding across-seed means (counts become means, hence doubles).
std::string report_to_csv(const MultiReport& report, const CellId& cell,
                          const std::vector<int>& novel_class_ids);

struct CsvRow {
  bool is_aggregate = false;
  std::uint64_t seed = 0;
  CellId cell;
  double mean_novel_ap = 0.0;
  double tp = 0.0;
  double fp = 0.0;
  std::vector<double> class_ap;
};

struct CsvReport {
  std::vector<int> novel_class_ids;  // from the header's ap_class_* columns
  std::vector<CsvRow> seed_rows;
  CsvRow aggregate;
};

/// Strict parse of report_to_csv output. Errors name the offending row by
/// line number; a missing or misplaced AGGREGATE row is a parse error.
CsvReport parse_report_csv(const std::string& text);

CsvReport load_report_csv(const std::string& path);

}  // namespace hallucdet
