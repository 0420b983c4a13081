#include "pfb/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pfb/errors.hpp"

namespace pfb::metrics {
namespace {

bool selected(Subset s, std::uint8_t domain) {
  switch (s) {
    case Subset::kSource: return domain != 0;
    case Subset::kTarget: return domain == 0;
    case Subset::kOverall: return true;
  }
  return false;
}

const char* subset_name(Subset s) {
  switch (s) {
    case Subset::kSource: return "source";
    case Subset::kTarget: return "target";
    case Subset::kOverall: return "overall";
  }
  return "?";
}

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_num(std::string_view s, const char* what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ValidationError(std::string("report: bad ") + what + " '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

Moments column_moments(const Tensor& pred, const Tensor& truth, int column,
                       const std::vector<std::uint8_t>& domain, Subset subset) {
  if (!pred.same_shape(truth)) {
    throw ValidationError("metrics: prediction and truth shapes differ");
  }
  if (column < 0 || column >= truth.cols()) {
    throw ValidationError("metrics: column " + std::to_string(column) + " out of range");
  }
  if (domain.size() != static_cast<std::size_t>(truth.rows())) {
    throw ValidationError("metrics: domain mask length " + std::to_string(domain.size()) +
                          " != rows " + std::to_string(truth.rows()));
  }
  Moments m;
  for (int r = 0; r < truth.rows(); ++r) {
    if (!selected(subset, domain[static_cast<std::size_t>(r)])) continue;
    ++m.count;
    m.truth_mean += truth.at(r, column);
  }
  if (m.count == 0) {
    throw ValidationError(std::string("metrics: empty ") + subset_name(subset) + " selection");
  }
  m.truth_mean /= m.count;
  for (int r = 0; r < truth.rows(); ++r) {
    if (!selected(subset, domain[static_cast<std::size_t>(r)])) continue;
    const double err = pred.at(r, column) - truth.at(r, column);
    const double dev = truth.at(r, column) - m.truth_mean;
    m.mse += err * err;
    m.truth_var += dev * dev;
  }
  m.mse /= m.count;
  m.truth_var /= m.count;
  return m;
}

double nrmse(const Tensor& pred, const Tensor& truth, int column,
             const std::vector<std::uint8_t>& domain, Subset subset) {
  Moments m = column_moments(pred, truth, column, domain, subset);
  if (!(m.truth_var > 0.0)) {
    throw ValidationError("metrics: truth column " + std::to_string(column) +
                          " has zero variance on the " + subset_name(subset) + " selection");
  }
  return std::sqrt(m.mse / m.truth_var);
}

double r_squared(const Tensor& pred, const Tensor& truth, int column,
                 const std::vector<std::uint8_t>& domain, Subset subset) {
  Moments m = column_moments(pred, truth, column, domain, subset);
  if (!(m.truth_var > 0.0)) {
    throw ValidationError("metrics: truth column " + std::to_string(column) +
                          " has zero variance on the " + subset_name(subset) + " selection");
  }
  return 1.0 - m.mse / m.truth_var;
}

std::vector<GroupSpec> default_groups(int n_y) {
  std::vector<GroupSpec> out;
  if (n_y == 13) {
    GroupSpec pressure{"pressure", {}};
    for (int c = 0; c < 7; ++c) pressure.columns.push_back(c);
    GroupSpec flow{"flow_density", {}};
    for (int c = 7; c < 13; ++c) flow.columns.push_back(c);
    out.push_back(std::move(pressure));
    out.push_back(std::move(flow));
  } else {
    GroupSpec all{"all", {}};
    for (int c = 0; c < n_y; ++c) all.columns.push_back(c);
    out.push_back(std::move(all));
  }
  return out;
}

EvalReport build_report(const Tensor& pred, const Tensor& truth,
                        const std::vector<std::uint8_t>& domain,
                        const std::vector<std::string>& names,
                        const std::vector<GroupSpec>& groups) {
  if (names.size() != static_cast<std::size_t>(truth.cols())) {
    throw ValidationError("report: expected " + std::to_string(truth.cols()) +
                          " variable names, got " + std::to_string(names.size()));
  }
  EvalReport rep;
  const Subset subsets[3] = {Subset::kSource, Subset::kTarget, Subset::kOverall};
  std::vector<ReportRow> var_rows;
  for (int c = 0; c < truth.cols(); ++c) {
    ReportRow row;
    row.name = names[static_cast<std::size_t>(c)];
    row.is_group = false;
    CellMetrics* cells[3] = {&row.source, &row.target, &row.overall};
    for (int s = 0; s < 3; ++s) {
      cells[s]->nrmse = nrmse(pred, truth, c, domain, subsets[s]);
      cells[s]->r2 = r_squared(pred, truth, c, domain, subsets[s]);
    }
    var_rows.push_back(std::move(row));
  }
  rep.rows = var_rows;
  for (const auto& g : groups) {
    if (g.columns.empty()) throw ValidationError("report: group '" + g.name + "' is empty");
    ReportRow row;
    row.name = g.name;
    row.is_group = true;
    for (int c : g.columns) {
      if (c < 0 || c >= truth.cols()) {
        throw ValidationError("report: group '" + g.name + "' references column " +
                              std::to_string(c));
      }
      const ReportRow& v = var_rows[static_cast<std::size_t>(c)];
      row.source.nrmse += v.source.nrmse;
      row.source.r2 += v.source.r2;
      row.target.nrmse += v.target.nrmse;
      row.target.r2 += v.target.r2;
      row.overall.nrmse += v.overall.nrmse;
      row.overall.r2 += v.overall.r2;
    }
    const double k = static_cast<double>(g.columns.size());
    row.source.nrmse /= k;
    row.source.r2 /= k;
    row.target.nrmse /= k;
    row.target.r2 /= k;
    row.overall.nrmse /= k;
    row.overall.r2 /= k;
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

std::string EvalReport::to_csv() const {
  std::string out;
  out += "# seed=" + std::to_string(seed) + "\n";
  out += "# config_hash=" + config_hash + "\n";
  out += "# checkpoint=" + checkpoint_id + "\n";
  out += "name,kind,source_nrmse,source_r2,target_nrmse,target_r2,overall_nrmse,overall_r2\n";
  for (const auto& r : rows) {
    out += r.name;
    out += r.is_group ? ",group," : ",variable,";
    out += fmt17(r.source.nrmse) + "," + fmt17(r.source.r2) + ",";
    out += fmt17(r.target.nrmse) + "," + fmt17(r.target.r2) + ",";
    out += fmt17(r.overall.nrmse) + "," + fmt17(r.overall.r2) + "\n";
  }
  return out;
}

EvalReport EvalReport::from_csv(const std::string& text) {
  EvalReport rep;
  std::istringstream in(text);
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(2, eq - 2);
      std::string val = line.substr(eq + 1);
      if (key == "seed") {
        rep.seed = static_cast<std::uint64_t>(std::stoull(val));
      } else if (key == "config_hash") {
        rep.config_hash = val;
      } else if (key == "checkpoint") {
        rep.checkpoint_id = val;
      }
      continue;
    }
    if (!header_seen) {  // column header line
      header_seen = true;
      continue;
    }
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      auto pos = line.find(',', start);
      if (pos == std::string::npos) {
        cells.push_back(line.substr(start));
        break;
      }
      cells.push_back(line.substr(start, pos - start));
      start = pos + 1;
    }
    if (cells.size() != 8) {
      throw ValidationError("report: row with " + std::to_string(cells.size()) +
                            " cells, expected 8");
    }
    ReportRow row;
    row.name = cells[0];
    if (cells[1] == "group") {
      row.is_group = true;
    } else if (cells[1] == "variable") {
      row.is_group = false;
    } else {
      throw ValidationError("report: unknown row kind '" + cells[1] + "'");
    }
    row.source.nrmse = parse_num(cells[2], "source nrmse");
    row.source.r2 = parse_num(cells[3], "source r2");
    row.target.nrmse = parse_num(cells[4], "target nrmse");
    row.target.r2 = parse_num(cells[5], "target r2");
    row.overall.nrmse = parse_num(cells[6], "overall nrmse");
    row.overall.r2 = parse_num(cells[7], "overall r2");
    rep.rows.push_back(std::move(row));
  }
  if (!header_seen) throw ValidationError("report: missing header line");
  return rep;
}

void EvalReport::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw ValidationError("report: cannot write '" + path + "'");
  f << to_csv();
  if (!f) throw ValidationError("report: write to '" + path + "' failed");
}

EvalReport EvalReport::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("report: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return from_csv(buf.str());
}

std::string EvalReport::to_table() const {
  std::size_t name_w = 8;
  for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-*s  %-9s  %8s %8s  %8s %8s  %8s %8s\n",
                static_cast<int>(name_w), "name", "kind", "src_nrmse", "src_r2", "tgt_nrmse",
                "tgt_r2", "all_nrmse", "all_r2");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-*s  %-9s  %9.4f %8.4f  %9.4f %8.4f  %9.4f %8.4f\n",
                  static_cast<int>(name_w), r.name.c_str(), r.is_group ? "group" : "variable",
                  r.source.nrmse, r.source.r2, r.target.nrmse, r.target.r2, r.overall.nrmse,
                  r.overall.r2);
    out += buf;
  }
  return out;
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace pfb::metrics
