#include "hallucdet/csv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "hallucdet/errors.hpp"

namespace hallucdet {

namespace {

std::string f64(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[noreturn]] void row_fail(int line, const std::string& message) {
  throw parse_error("csv row " + std::to_string(line) + ": " + message);
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(current);
      current.clear();
    } else if (c != '\r') {
      current.push_back(c);
    }
  }
  fields.push_back(current);
  return fields;
}

double parse_double(const std::string& field, int line, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size()) row_fail(line, what + ": trailing characters in '" + field + "'");
    return v;
  } catch (const parse_error&) {
    throw;
  } catch (const std::exception&) {
    row_fail(line, what + ": expected a number, got '" + field + "'");
  }
}

long long parse_int(const std::string& field, int line, const std::string& what) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(field, &used);
    if (used != field.size()) row_fail(line, what + ": trailing characters in '" + field + "'");
    return v;
  } catch (const parse_error&) {
    throw;
  } catch (const std::exception&) {
    row_fail(line, what + ": expected an integer, got '" + field + "'");
  }
}

}  // namespace

CellId cell_from_config(const TrainConfig& config) {
  CellId cell;
  cell.shot = config.shot;
  cell.proposal = config.proposal;
  cell.head = config.head_kind;
  cell.variant = config.variant;
  cell.m = config.m;
  cell.em_iters = config.train_mode == TrainMode::joint ? 0 : config.em_iterations;
  return cell;
}

std::string csv_header(const std::vector<int>& novel_class_ids) {
  std::string header = "seed,shot,proposal_mode,head_kind,variant,m,em_iters,mean_novel_ap,tp_count,fp_count";
  for (int id : novel_class_ids) header += ",ap_class_" + std::to_string(id);
  return header;
}

namespace {

void emit_cell(std::ostringstream& out, const CellId& cell) {
  out << ',' << cell.shot << ',' << proposal_mode_name(cell.proposal) << ',' << head_kind_name(cell.head)
      << ',' << variant_name(cell.variant) << ',' << cell.m << ',' << cell.em_iters;
}

}  // namespace

std::string report_to_csv(const MultiReport& report, const CellId& cell,
                          const std::vector<int>& novel_class_ids) {
  const std::size_t classes = novel_class_ids.size();
  std::ostringstream out;
  out << csv_header(novel_class_ids) << '\n';
  for (const SeedRow& row : report.rows) {
    if (row.eval.novel_ap.size() != classes)
      throw argument_error("report_to_csv: seed row has " + std::to_string(row.eval.novel_ap.size()) +
                           " class columns, header has " + std::to_string(classes));
    out << row.seed;
    emit_cell(out, cell);
    out << ',' << f64(row.eval.mean_novel_ap) << ',' << row.eval.tp_count << ',' << row.eval.fp_count;
    for (double ap : row.eval.novel_ap) out << ',' << f64(ap);
    out << '\n';
  }
  if (report.aggregate.mean_class_ap.size() != classes)
    throw argument_error("report_to_csv: aggregate has " + std::to_string(report.aggregate.mean_class_ap.size()) +
                         " class columns, header has " + std::to_string(classes));
  out << "AGGREGATE";
  emit_cell(out, cell);
  out << ',' << f64(report.aggregate.mean_novel_ap) << ',' << f64(report.aggregate.mean_tp) << ','
      << f64(report.aggregate.mean_fp);
  for (double ap : report.aggregate.mean_class_ap) out << ',' << f64(ap);
  out << '\n';
  return out.str();
}

CsvReport parse_report_csv(const std::string& text) {
  std::istringstream stream(text);
  std::string line;
  if (!std::getline(stream, line)) throw parse_error("csv: empty input");
  const std::vector<std::string> header = split_row(line);
  static const char* kFixed[] = {"seed",     "shot", "proposal_mode", "head_kind", "variant",
                                 "m",        "em_iters", "mean_novel_ap", "tp_count", "fp_count"};
  constexpr std::size_t kFixedCount = sizeof(kFixed) / sizeof(kFixed[0]);
  if (header.size() < kFixedCount) throw parse_error("csv: header has too few columns");
  for (std::size_t i = 0; i < kFixedCount; ++i)
    if (header[i] != kFixed[i])
      throw parse_error("csv: header column " + std::to_string(i + 1) + " is '" + header[i] +
                        "', expected '" + kFixed[i] + "'");

  CsvReport report;
  for (std::size_t i = kFixedCount; i < header.size(); ++i) {
    const std::string& name = header[i];
    const std::string prefix = "ap_class_";
    if (name.rfind(prefix, 0) != 0)
      throw parse_error("csv: header column '" + name + "' is not an ap_class_* column");
    report.novel_class_ids.push_back(static_cast<int>(parse_int(name.substr(prefix.size()), 1, "header class id")));
  }
  const std::size_t columns = header.size();

  bool saw_aggregate = false;
  int line_number = 1;
  while (std::getline(stream, line)) {
    ++line_number;
    if (line.empty() || line == "\r") continue;
    if (saw_aggregate) row_fail(line_number, "row after the AGGREGATE row");
    const std::vector<std::string> fields = split_row(line);
    if (fields.size() != columns)
      row_fail(line_number, "has " + std::to_string(fields.size()) + " fields, expected " +
                                std::to_string(columns));
    CsvRow row;
    row.is_aggregate = fields[0] == "AGGREGATE";
    if (!row.is_aggregate) {
      const long long seed = parse_int(fields[0], line_number, "seed");
      if (seed < 0) row_fail(line_number, "negative seed");
      row.seed = static_cast<std::uint64_t>(seed);
    }
    row.cell.shot = static_cast<int>(parse_int(fields[1], line_number, "shot"));
    try {
      row.cell.proposal = proposal_mode_from_name(fields[2]);
      row.cell.head = head_kind_from_name(fields[3]);
      row.cell.variant = variant_from_name(fields[4]);
    } catch (const argument_error& e) {
      row_fail(line_number, e.what());
    }
    row.cell.m = static_cast<int>(parse_int(fields[5], line_number, "m"));
    row.cell.em_iters = static_cast<int>(parse_int(fields[6], line_number, "em_iters"));
    row.mean_novel_ap = parse_double(fields[7], line_number, "mean_novel_ap");
    row.tp = parse_double(fields[8], line_number, "tp_count");
    row.fp = parse_double(fields[9], line_number, "fp_count");
    for (std::size_t i = kFixedCount; i < columns; ++i)
      row.class_ap.push_back(parse_double(fields[i], line_number, header[i]));
    if (row.is_aggregate) {
      report.aggregate = row;
      saw_aggregate = true;
    } else {
      report.seed_rows.push_back(row);
    }
  }
  if (!saw_aggregate) throw parse_error("csv: missing AGGREGATE row");
  if (report.seed_rows.empty()) throw parse_error("csv: no per-seed rows");
  return report;
}

CsvReport load_report_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open csv file '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_report_csv(buffer.str());
  } catch (const parse_error& e) {
    throw parse_error(path + ": " + e.what());
  }
}

}  // namespace hallucdet
