#include "hallucdet/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "hallucdet/errors.hpp"

namespace hallucdet {

namespace {

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

CellSummary summarize_cell(const CsvReport& report, const std::string& source) {
  CellSummary s;
  s.cell = report.aggregate.cell;
  s.source = source;
  s.num_seeds = static_cast<int>(report.seed_rows.size());
  s.novel_class_ids = report.novel_class_ids;

  // One file is one cell; disagreeing rows mean a concatenated or edited file.
  for (const CsvRow& row : report.seed_rows) {
    const CellId& c = row.cell;
    if (c.shot != s.cell.shot || c.proposal != s.cell.proposal || c.head != s.cell.head ||
        c.variant != s.cell.variant || c.m != s.cell.m || c.em_iters != s.cell.em_iters)
      throw parse_error(source + ": seed rows disagree on the cell identity");
  }

  std::vector<double> aps, tps, fps;
  for (const CsvRow& row : report.seed_rows) {
    aps.push_back(row.mean_novel_ap);
    tps.push_back(row.tp);
    fps.push_back(row.fp);
  }
  if (aps.size() < 2) {
    s.mean_ap = aps.front();
    s.mean_tp = tps.front();
    s.mean_fp = fps.front();
  } else {
    mean_and_half_width(aps, &s.mean_ap, &s.ap_half_width);
    mean_and_half_width(tps, &s.mean_tp, &s.tp_half_width);
    mean_and_half_width(fps, &s.mean_fp, &s.fp_half_width);
  }
  for (std::size_t c = 0; c < report.novel_class_ids.size(); ++c) {
    double sum = 0.0;
    for (const CsvRow& row : report.seed_rows) sum += row.class_ap[c];
    s.mean_class_ap.push_back(sum / static_cast<double>(report.seed_rows.size()));
  }

  const double tol = 1e-9;
  if (std::fabs(report.aggregate.mean_novel_ap - s.mean_ap) > tol ||
      std::fabs(report.aggregate.tp - s.mean_tp) > tol || std::fabs(report.aggregate.fp - s.mean_fp) > tol)
    throw parse_error(source + ": AGGREGATE row does not match the per-seed rows");
  return s;
}

std::string cell_label(const CellId& cell) {
  std::ostringstream out;
  out << "shot=" << cell.shot << " proposal=" << proposal_mode_name(cell.proposal)
      << " head=" << head_kind_name(cell.head) << " variant=" << variant_name(cell.variant)
      << " m=" << cell.m << " em=";
  if (cell.em_iters == 0) out << "joint";
  else out << cell.em_iters;
  return out.str();
}

namespace {

bool same_ignoring_m(const CellId& a, const CellId& b) {
  return a.shot == b.shot && a.proposal == b.proposal && a.head == b.head && a.variant == b.variant &&
         a.em_iters == b.em_iters;
}

bool same_except_m(const CellId& a, const CellId& b) { return same_ignoring_m(a, b) && a.m != b.m; }

bool same_except_variant(const CellId& a, const CellId& b) {
  return a.shot == b.shot && a.proposal == b.proposal && a.head == b.head && a.m == b.m &&
         a.em_iters == b.em_iters && a.variant != b.variant;
}

bool same_except_em(const CellId& a, const CellId& b) {
  return a.shot == b.shot && a.proposal == b.proposal && a.head == b.head && a.variant == b.variant &&
         a.m == b.m && a.em_iters != b.em_iters;
}

bool same_except_shot_and_m(const CellId& a, const CellId& b) {
  return a.proposal == b.proposal && a.head == b.head && a.variant == b.variant && a.em_iters == b.em_iters;
}

void flag(std::ostringstream& out, const std::string& name, bool pass, const std::string& detail) {
  out << "- [" << (pass ? "PASS" : "FAIL") << "] " << name << ": " << detail << "\n";
}

void compare_pairs(std::ostringstream& out, const std::vector<CellSummary>& cells) {
  bool any = false;
  for (const CellSummary& a : cells) {
    for (const CellSummary& b : cells) {
      if (&a == &b) continue;
      if (same_except_m(a.cell, b.cell) && a.cell.m > 0 && b.cell.m == 0 &&
          a.cell.variant != HallucinatorVariant::none) {
        any = true;
        const double gain = a.mean_ap - b.mean_ap;
        flag(out, "hallucination gain (m=" + std::to_string(a.cell.m) + " vs m=0)",
             gain >= kHallucGainThreshold,
             "gain " + fixed4(gain) + " vs threshold " + fixed4(kHallucGainThreshold));
        flag(out, "false-positive reduction (m=" + std::to_string(a.cell.m) + " vs m=0)",
             a.mean_fp < b.mean_fp, "mean FP " + fixed4(a.mean_fp) + " < " + fixed4(b.mean_fp));
      }
      if (same_except_variant(a.cell, b.cell) && a.cell.variant != HallucinatorVariant::none &&
          b.cell.variant == HallucinatorVariant::none && a.cell.m > 0) {
        any = true;
        const double gain = a.mean_ap - b.mean_ap;
        flag(out, std::string(variant_name(a.cell.variant)) + " vs no hallucination",
             gain >= kHallucGainThreshold,
             "gain " + fixed4(gain) + " vs threshold " + fixed4(kHallucGainThreshold));
      }
      if (same_except_em(a.cell, b.cell)) {
        if (a.cell.em_iters >= 1 && b.cell.em_iters == 0) {
          any = true;
          flag(out, "EM-" + std::to_string(a.cell.em_iters) + " >= joint", a.mean_ap >= b.mean_ap,
               fixed4(a.mean_ap) + " vs " + fixed4(b.mean_ap));
        }
        if (a.cell.em_iters == 2 && b.cell.em_iters == 1) {
          any = true;
          flag(out, "EM-2 >= EM-1", a.mean_ap >= b.mean_ap, fixed4(a.mean_ap) + " vs " + fixed4(b.mean_ap));
        }
      }
    }
  }

  // Diminishing returns: the hallucination gain at the lowest shot count
  // should exceed the gain at the highest, when both pairs are present.
  const CellSummary* lo_h = nullptr;
  const CellSummary* lo_b = nullptr;
  const CellSummary* hi_h = nullptr;
  const CellSummary* hi_b = nullptr;
  int lo = 0, hi = 0;
  for (const CellSummary& c : cells) {
    if (lo == 0 || c.cell.shot < lo) lo = c.cell.shot;
    if (c.cell.shot > hi) hi = c.cell.shot;
  }
  if (lo != hi) {
    for (const CellSummary& c : cells) {
      if (!same_except_shot_and_m(c.cell, cells.front().cell)) continue;
      const bool halluc = c.cell.m > 0 && c.cell.variant != HallucinatorVariant::none;
      if (c.cell.shot == lo && halluc) lo_h = &c;
      if (c.cell.shot == lo && c.cell.m == 0) lo_b = &c;
      if (c.cell.shot == hi && halluc) hi_h = &c;
      if (c.cell.shot == hi && c.cell.m == 0) hi_b = &c;
    }
    if (lo_h && lo_b && hi_h && hi_b) {
      any = true;
      const double lo_gain = lo_h->mean_ap - lo_b->mean_ap;
      const double hi_gain = hi_h->mean_ap - hi_b->mean_ap;
      flag(out, "diminishing returns (gain at shot=" + std::to_string(lo) + " > gain at shot=" + std::to_string(hi) + ")",
           lo_gain > hi_gain, fixed4(lo_gain) + " vs " + fixed4(hi_gain));
    }
  }

  // m-sweep shape: with a baseline plus several m > 0 cells on one axis,
  // every hallucinated mean should be at or above the baseline and the best
  // mean should not be the baseline.
  std::vector<const CellSummary*> sweep;
  for (const CellSummary& c : cells)
    if (same_ignoring_m(c.cell, cells.front().cell)) sweep.push_back(&c);
  if (sweep.size() >= 3 && sweep.size() == cells.size()) {
    const CellSummary* baseline = nullptr;
    for (const CellSummary* c : sweep)
      if (c->cell.m == 0) baseline = c;
    if (baseline) {
      any = true;
      bool dominated = true;
      const CellSummary* best = baseline;
      for (const CellSummary* c : sweep) {
        if (c->cell.m > 0 && c->mean_ap < baseline->mean_ap) dominated = false;
        if (c->mean_ap > best->mean_ap) best = c;
      }
      flag(out, "m-sweep dominates m=0", dominated,
           "baseline " + fixed4(baseline->mean_ap) + ", best " + fixed4(best->mean_ap) + " at m=" +
               std::to_string(best->cell.m));
      flag(out, "m-sweep peak at m >= 1", best->cell.m >= 1, "peak m=" + std::to_string(best->cell.m));
    }
  }

  if (!any) out << "- no comparable cell pairs found\n";
}

/// If exactly one identity field varies across the cells, returns its name
/// and a numeric x per cell; otherwise returns an empty name.
std::string sweep_axis(const std::vector<CellSummary>& cells, std::vector<double>& xs) {
  if (cells.size() < 2) return "";
  const CellId& f = cells.front().cell;
  bool shot = false, m = false, em = false, head = false, variant = false, proposal = false;
  for (const CellSummary& c : cells) {
    shot |= c.cell.shot != f.shot;
    m |= c.cell.m != f.m;
    em |= c.cell.em_iters != f.em_iters;
    head |= c.cell.head != f.head;
    variant |= c.cell.variant != f.variant;
    proposal |= c.cell.proposal != f.proposal;
  }
  const int varying = int(shot) + int(m) + int(em) + int(head) + int(variant) + int(proposal);
  if (varying != 1) return "";
  xs.clear();
  for (const CellSummary& c : cells) {
    if (shot) xs.push_back(c.cell.shot);
    else if (m) xs.push_back(c.cell.m);
    else if (em) xs.push_back(c.cell.em_iters);
    else if (head) xs.push_back(static_cast<double>(c.cell.head));
    else if (variant) xs.push_back(static_cast<double>(c.cell.variant));
    else xs.push_back(static_cast<double>(c.cell.proposal));
  }
  if (shot) return "shot";
  if (m) return "m";
  if (em) return "em_iters";
  if (head) return "head_kind";
  if (variant) return "variant";
  return "proposal_mode";
}

}  // namespace

std::string render_report(const std::vector<CellSummary>& cells) {
  if (cells.empty()) throw argument_error("render_report: no cells");
  std::ostringstream out;
  out << "# Run summary\n\n";
  for (const CellSummary& c : cells) {
    out << "## " << cell_label(c.cell) << "\n";
    out << "source: " << c.source << "\n";
    out << "seeds: " << c.num_seeds << "\n";
    out << "novel AP: " << fixed4(c.mean_ap) << " +/- " << fixed4(c.ap_half_width) << "\n";
    out << "true positives: " << fixed4(c.mean_tp) << " +/- " << fixed4(c.tp_half_width) << "\n";
    out << "false positives: " << fixed4(c.mean_fp) << " +/- " << fixed4(c.fp_half_width) << "\n";
    for (std::size_t i = 0; i < c.novel_class_ids.size(); ++i)
      out << "class " << c.novel_class_ids[i] << " AP: " << fixed4(c.mean_class_ap[i]) << "\n";
    out << "\n";
  }

  out << "## Comparisons\n";
  compare_pairs(out, cells);
  out << "\n";

  std::vector<double> xs;
  const std::string axis = sweep_axis(cells, xs);
  if (!axis.empty()) {
    std::vector<std::size_t> order(cells.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    out << "## Plot data (" << axis << ")\n";
    out << "x,y,err\n";
    for (std::size_t i : order)
      out << full(xs[i]) << ',' << full(cells[i].mean_ap) << ',' << full(cells[i].ap_half_width) << "\n";
  }
  return out.str();
}

}  // namespace hallucdet
