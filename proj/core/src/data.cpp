#include "pfb/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pfb/errors.hpp"
#include "pfb/rng.hpp"

namespace pfb::data {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_cell(std::string_view cell, int row, std::string_view column) {
  std::string_view t = trim(cell);
  double v = 0.0;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || t.empty()) {
    throw ValidationError("csv: non-numeric cell at row " + std::to_string(row) +
                          ", column '" + std::string(column) + "': '" + std::string(t) + "'");
  }
  if (!std::isfinite(v)) {
    throw ValidationError("csv: non-finite value at row " + std::to_string(row) +
                          ", column '" + std::string(column) + "'");
  }
  return v;
}

void format_value(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

}  // namespace

int Schema::n_x() const {
  return static_cast<int>(
      std::count_if(columns.begin(), columns.end(), [](auto& c) { return c.second == Role::kData; }));
}

int Schema::n_y() const { return static_cast<int>(columns.size()) - n_x(); }

std::vector<std::string> Schema::data_names() const {
  std::vector<std::string> out;
  for (const auto& [name, role] : columns)
    if (role == Role::kData) out.push_back(name);
  return out;
}

std::vector<std::string> Schema::label_names() const {
  std::vector<std::string> out;
  for (const auto& [name, role] : columns)
    if (role == Role::kLabel) out.push_back(name);
  return out;
}

void Schema::validate() const {
  if (columns.empty()) throw ValidationError("schema: no columns");
  for (std::size_t i = 0; i < columns.size(); ++i) {
    for (std::size_t j = i + 1; j < columns.size(); ++j) {
      if (columns[i].first == columns[j].first) {
        throw ValidationError("schema: duplicate column name '" + columns[i].first + "'");
      }
    }
  }
  if (n_x() == 0) throw ValidationError("schema: no data columns");
  if (n_y() == 0) throw ValidationError("schema: no label columns");
}

Schema Schema::parse(std::string_view text) {
  Schema s;
  int line_no = 0;
  for (std::string_view line : split(text, '\n')) {
    ++line_no;
    std::string_view body = line.substr(0, line.find('#'));
    body = trim(body);
    if (body.empty()) continue;
    auto parts = split(body, ',');
    if (parts.size() != 2) {
      throw ValidationError("schema: line " + std::to_string(line_no) +
                            " must be 'name,role', got '" + std::string(body) + "'");
    }
    std::string name(trim(parts[0]));
    std::string_view role = trim(parts[1]);
    if (name.empty()) {
      throw ValidationError("schema: empty column name on line " + std::to_string(line_no));
    }
    if (role == "data") {
      s.columns.emplace_back(std::move(name), Role::kData);
    } else if (role == "label") {
      s.columns.emplace_back(std::move(name), Role::kLabel);
    } else {
      throw ValidationError("schema: line " + std::to_string(line_no) + ": role '" +
                            std::string(role) + "' is not 'data' or 'label'");
    }
  }
  s.validate();
  return s;
}

Schema Schema::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("schema: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse(buf.str());
}

std::string Schema::to_text() const {
  std::string out;
  for (const auto& [name, role] : columns) {
    out += name;
    out += role == Role::kData ? ",data\n" : ",label\n";
  }
  return out;
}

void Schema::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw ValidationError("schema: cannot write '" + path + "'");
  f << to_text();
  if (!f) throw ValidationError("schema: write to '" + path + "' failed");
}

TimeSeriesDataset load_csv(const std::string& path, const Schema& schema) {
  schema.validate();
  std::ifstream f(path);
  if (!f) throw ValidationError("csv: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(f, line)) throw ValidationError("csv: '" + path + "' is empty");
  std::vector<std::string> header;
  for (auto cell : split(line, ',')) header.emplace_back(trim(cell));

  // map each schema column to its position in the file
  std::vector<int> file_index;
  for (const auto& [name, role] : schema.columns) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw ValidationError("csv: '" + path + "' is missing column '" + name + "'");
    }
    file_index.push_back(static_cast<int>(it - header.begin()));
  }
  if (header.size() != schema.columns.size()) {
    for (const auto& name : header) {
      bool known = std::any_of(schema.columns.begin(), schema.columns.end(),
                               [&](auto& c) { return c.first == name; });
      if (!known) {
        throw ValidationError("csv: '" + path + "' has column '" + name +
                              "' that the schema does not mention");
      }
    }
    throw ValidationError("csv: '" + path + "' repeats a column");
  }

  const int n_cols = static_cast<int>(schema.columns.size());
  std::vector<double> xbuf, ybuf;
  int rows = 0;
  while (std::getline(f, line)) {
    if (trim(line).empty()) continue;
    ++rows;
    auto cells = split(line, ',');
    if (static_cast<int>(cells.size()) != n_cols) {
      throw ValidationError("csv: row " + std::to_string(rows) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(n_cols));
    }
    for (int c = 0; c < n_cols; ++c) {
      const auto& [name, role] = schema.columns[static_cast<std::size_t>(c)];
      double v = parse_cell(cells[static_cast<std::size_t>(file_index[static_cast<std::size_t>(c)])],
                            rows, name);
      (role == Role::kData ? xbuf : ybuf).push_back(v);
    }
  }
  if (rows == 0) throw ValidationError("csv: '" + path + "' has no data rows");

  TimeSeriesDataset ds;
  ds.x = Tensor(rows, schema.n_x(), std::move(xbuf));
  ds.y = Tensor(rows, schema.n_y(), std::move(ybuf));
  ds.domain.assign(static_cast<std::size_t>(rows), 0);
  ds.x_names = schema.data_names();
  ds.y_names = schema.label_names();
  return ds;
}

void save_csv(const std::string& path, const Schema& schema, const TimeSeriesDataset& ds) {
  schema.validate();
  if (schema.n_x() != ds.x.cols() || schema.n_y() != ds.y.cols()) {
    throw ValidationError("csv: schema widths (" + std::to_string(schema.n_x()) + "," +
                          std::to_string(schema.n_y()) + ") do not match dataset (" +
                          std::to_string(ds.x.cols()) + "," + std::to_string(ds.y.cols()) + ")");
  }
  std::ofstream f(path);
  if (!f) throw ValidationError("csv: cannot write '" + path + "'");
  std::string out;
  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    if (c) out += ',';
    out += schema.columns[c].first;
  }
  out += '\n';
  for (int r = 0; r < ds.length(); ++r) {
    int xi = 0, yi = 0;
    for (std::size_t c = 0; c < schema.columns.size(); ++c) {
      if (c) out += ',';
      if (schema.columns[c].second == Role::kData) {
        format_value(out, ds.x.at(r, xi++));
      } else {
        format_value(out, ds.y.at(r, yi++));
      }
    }
    out += '\n';
    if (out.size() > (1u << 20)) {
      f << out;
      out.clear();
    }
  }
  f << out;
  if (!f) throw ValidationError("csv: write to '" + path + "' failed");
}

namespace {

void fit_columns(const Tensor& t, const std::vector<std::string>& names,
                 std::vector<double>& mean, std::vector<double>& std_dev) {
  const int n = t.cols(), L = t.rows();
  mean.assign(static_cast<std::size_t>(n), 0.0);
  std_dev.assign(static_cast<std::size_t>(n), 0.0);
  for (int c = 0; c < n; ++c) {
    double m = 0.0;
    for (int r = 0; r < L; ++r) m += t.at(r, c);
    m /= L;
    double var = 0.0;
    for (int r = 0; r < L; ++r) {
      double d = t.at(r, c) - m;
      var += d * d;
    }
    var /= L;
    if (!(var > 0.0)) {
      throw ValidationError("normalize: column '" + names[static_cast<std::size_t>(c)] +
                            "' has zero variance on the fitting data");
    }
    mean[static_cast<std::size_t>(c)] = m;
    std_dev[static_cast<std::size_t>(c)] = std::sqrt(var);
  }
}

void scale_columns(Tensor& t, const std::vector<double>& mean, const std::vector<double>& std_dev,
                   bool forward) {
  if (static_cast<std::size_t>(t.cols()) != mean.size()) {
    throw ValidationError("normalize: stats have " + std::to_string(mean.size()) +
                          " columns, data has " + std::to_string(t.cols()));
  }
  for (int r = 0; r < t.rows(); ++r) {
    for (int c = 0; c < t.cols(); ++c) {
      const auto ci = static_cast<std::size_t>(c);
      double& v = t.at(r, c);
      v = forward ? (v - mean[ci]) / std_dev[ci] : v * std_dev[ci] + mean[ci];
    }
  }
}

}  // namespace

NormStats fit_normalization(const TimeSeriesDataset& ds) {
  NormStats s;
  fit_columns(ds.x, ds.x_names, s.x_mean, s.x_std);
  fit_columns(ds.y, ds.y_names, s.y_mean, s.y_std);
  return s;
}

void apply_normalization(TimeSeriesDataset& ds, const NormStats& stats) {
  scale_columns(ds.x, stats.x_mean, stats.x_std, true);
  scale_columns(ds.y, stats.y_mean, stats.y_std, true);
}

void invert_normalization(TimeSeriesDataset& ds, const NormStats& stats) {
  scale_columns(ds.x, stats.x_mean, stats.x_std, false);
  scale_columns(ds.y, stats.y_mean, stats.y_std, false);
}

void denormalize_labels(Tensor& y, const NormStats& stats) {
  scale_columns(y, stats.y_mean, stats.y_std, false);
}

double domain_split(TimeSeriesDataset& ds, std::string_view label_column, double low,
                    double high) {
  auto it = std::find(ds.y_names.begin(), ds.y_names.end(), label_column);
  if (it == ds.y_names.end()) {
    throw ValidationError("domain split: no label column named '" + std::string(label_column) +
                          "'");
  }
  const int c = static_cast<int>(it - ds.y_names.begin());
  ds.domain.assign(static_cast<std::size_t>(ds.length()), 0);
  int source = 0;
  for (int r = 0; r < ds.length(); ++r) {
    double v = ds.y.at(r, c);
    if (v >= low && v <= high) {
      ds.domain[static_cast<std::size_t>(r)] = 1;
      ++source;
    }
  }
  return static_cast<double>(source) / ds.length();
}

std::vector<Window> window(const TimeSeriesDataset& ds, int length) {
  if (length < 1) throw ValidationError("window: length must be positive");
  if (length > ds.length()) {
    throw ValidationError("window: length " + std::to_string(length) +
                          " exceeds dataset length " + std::to_string(ds.length()));
  }
  if (ds.domain.size() != static_cast<std::size_t>(ds.length())) {
    throw ValidationError("window: dataset domain mask is not set");
  }
  std::vector<Window> out;
  const int count = ds.length() / length;
  for (int w = 0; w < count; ++w) {
    Window win;
    win.start = w * length;
    win.x = Tensor(length, ds.x.cols());
    win.y = Tensor(length, ds.y.cols());
    win.domain.resize(static_cast<std::size_t>(length));
    for (int r = 0; r < length; ++r) {
      for (int c = 0; c < ds.x.cols(); ++c) win.x.at(r, c) = ds.x.at(win.start + r, c);
      for (int c = 0; c < ds.y.cols(); ++c) win.y.at(r, c) = ds.y.at(win.start + r, c);
      win.domain[static_cast<std::size_t>(r)] = ds.domain[static_cast<std::size_t>(win.start + r)];
    }
    out.push_back(std::move(win));
  }
  return out;
}

void SynthConfig::validate() const {
  if (n_x < 1 || n_y < 1) throw ValidationError("synth: state widths must be positive");
  if (length < 1) throw ValidationError("synth: length must be positive");
  if (driver1_setpoints.empty() || driver2_setpoints.empty()) {
    throw ValidationError("synth: each driver needs at least one setpoint");
  }
  if (process_noise < 0.0 || observation_noise < 0.0 || label_noise < 0.0) {
    throw ValidationError("synth: noise scales must be nonnegative");
  }
  if (dwell_min < 1 || dwell_max < dwell_min) {
    throw ValidationError("synth: dwell range invalid: [" + std::to_string(dwell_min) + ", " +
                          std::to_string(dwell_max) + "]");
  }
  if (rule_column < 0 || rule_column >= n_y) {
    throw ValidationError("synth: rule column " + std::to_string(rule_column) +
                          " outside labels [0, " + std::to_string(n_y) + ")");
  }
  if (!(source_fraction > 0.0) || !(source_fraction < 1.0)) {
    throw ValidationError("synth: source fraction must lie strictly inside (0, 1)");
  }
  bool has_source = false;
  for (double v : driver1_setpoints) has_source |= v >= source_low && v <= source_high;
  if (!has_source) {
    throw ValidationError(
        "synth: driver-1 setpoints must include a value inside the source range");
  }
}

namespace {

Tensor random_matrix(int rows, int cols, Rng& rng) {
  Tensor t(rows, cols);
  for (double& v : t.flat()) v = rng.gaussian();
  return t;
}

// scale each row so its 1-norm equals gain; with |tanh| <= 1 inputs this
// makes the state map a contraction in the max norm
void row_normalize(Tensor& t, double gain) {
  for (int r = 0; r < t.rows(); ++r) {
    double s = 0.0;
    for (int c = 0; c < t.cols(); ++c) s += std::abs(t.at(r, c));
    double f = s > 0.0 ? gain / s : 0.0;
    for (int c = 0; c < t.cols(); ++c) t.at(r, c) *= f;
  }
}

// piecewise-constant driver track; the chooser picks a setpoint index and the
// dwell sampler the segment length
template <typename Chooser>
std::vector<double> driver_track(int length, const std::vector<double>& setpoints, int dwell_min,
                                 int dwell_max, Rng& rng, Chooser choose) {
  std::vector<double> d(static_cast<std::size_t>(length));
  int n = 0;
  while (n < length) {
    int idx = choose(n);
    int dwell = dwell_min + static_cast<int>(rng.bounded(
                                static_cast<std::uint64_t>(dwell_max - dwell_min + 1)));
    int end = std::min(length, n + dwell);
    for (; n < end; ++n) d[static_cast<std::size_t>(n)] = setpoints[static_cast<std::size_t>(idx)];
  }
  return d;
}

double to_unit(double v, double lo, double hi) {
  return hi > lo ? 2.0 * (v - lo) / (hi - lo) - 1.0 : 0.0;
}

}  // namespace

TimeSeriesDataset synth_generate(const SynthConfig& cfg) {
  cfg.validate();

  Rng mat_rng = Rng::derive(cfg.seed, 0);
  Tensor A = random_matrix(cfg.n_y, cfg.n_y, mat_rng);
  row_normalize(A, cfg.state_gain);
  Tensor B = random_matrix(cfg.n_y, 2, mat_rng);
  row_normalize(B, cfg.drive_gain);
  Tensor D = random_matrix(cfg.n_y, cfg.n_y, mat_rng);
  row_normalize(D, 1.0);
  Tensor C = random_matrix(cfg.n_x, cfg.n_y, mat_rng);
  row_normalize(C, cfg.obs_gain);

  // split driver-1 setpoints into source/target groups for the balancer
  std::vector<int> src_idx, tgt_idx;
  for (std::size_t i = 0; i < cfg.driver1_setpoints.size(); ++i) {
    double v = cfg.driver1_setpoints[i];
    (v >= cfg.source_low && v <= cfg.source_high ? src_idx : tgt_idx).push_back(
        static_cast<int>(i));
  }

  // Feedback balancing: pick the source group while the realized fraction
  // trails the requested one. Deviation is bounded by one dwell length.
  Rng d1_rng = Rng::derive(cfg.seed, 1);
  int source_steps = 0;
  auto choose1 = [&](int n) {
    double f = n > 0 ? static_cast<double>(source_steps) / n : 0.0;
    const auto* group = f < cfg.source_fraction ? &src_idx : &tgt_idx;
    if (group->empty()) group = group == &src_idx ? &tgt_idx : &src_idx;
    int idx = (*group)[static_cast<std::size_t>(d1_rng.bounded(group->size()))];
    return idx;
  };
  // track source_steps while filling: wrap chooser to observe dwell extents
  std::vector<double> d1(static_cast<std::size_t>(cfg.length));
  {
    int n = 0;
    while (n < cfg.length) {
      int idx = choose1(n);
      double v = cfg.driver1_setpoints[static_cast<std::size_t>(idx)];
      bool is_src = v >= cfg.source_low && v <= cfg.source_high;
      int dwell = cfg.dwell_min + static_cast<int>(d1_rng.bounded(
                                      static_cast<std::uint64_t>(cfg.dwell_max - cfg.dwell_min + 1)));
      int end = std::min(cfg.length, n + dwell);
      for (; n < end; ++n) {
        d1[static_cast<std::size_t>(n)] = v;
        if (is_src) ++source_steps;
      }
    }
  }

  Rng d2_rng = Rng::derive(cfg.seed, 2);
  std::vector<double> d2 = driver_track(cfg.length, cfg.driver2_setpoints, cfg.dwell_min,
                                        cfg.dwell_max, d2_rng, [&](int) {
                                          return static_cast<int>(
                                              d2_rng.bounded(cfg.driver2_setpoints.size()));
                                        });

  const double d1_lo = *std::min_element(cfg.driver1_setpoints.begin(), cfg.driver1_setpoints.end());
  const double d1_hi = *std::max_element(cfg.driver1_setpoints.begin(), cfg.driver1_setpoints.end());
  const double d2_lo = *std::min_element(cfg.driver2_setpoints.begin(), cfg.driver2_setpoints.end());
  const double d2_hi = *std::max_element(cfg.driver2_setpoints.begin(), cfg.driver2_setpoints.end());

  Rng proc_rng = Rng::derive(cfg.seed, 3);
  Rng lab_rng = Rng::derive(cfg.seed, 4);
  Rng obs_rng = Rng::derive(cfg.seed, 5);

  TimeSeriesDataset ds;
  ds.x = Tensor(cfg.length, cfg.n_x);
  ds.y = Tensor(cfg.length, cfg.n_y);
  ds.domain.assign(static_cast<std::size_t>(cfg.length), 0);
  Schema sch = make_schema(cfg.n_x, cfg.n_y);
  ds.x_names = sch.data_names();
  ds.y_names = sch.label_names();

  std::vector<double> s(static_cast<std::size_t>(cfg.n_y), 0.0);
  std::vector<double> pre(static_cast<std::size_t>(cfg.n_y));
  std::vector<double> ts(static_cast<std::size_t>(cfg.n_y));
  for (int n = 0; n < cfg.length; ++n) {
    for (int i = 0; i < cfg.n_y; ++i) {
      ds.y.at(n, i) = s[static_cast<std::size_t>(i)] + cfg.label_noise * lab_rng.gaussian();
    }
    ds.y.at(n, cfg.rule_column) = d1[static_cast<std::size_t>(n)];

    // nonlinear observation x = C tanh(D s) + noise
    for (int i = 0; i < cfg.n_y; ++i) {
      double mix = 0.0;
      for (int j = 0; j < cfg.n_y; ++j) mix += D.at(i, j) * s[static_cast<std::size_t>(j)];
      ts[static_cast<std::size_t>(i)] = std::tanh(mix);
    }
    for (int i = 0; i < cfg.n_x; ++i) {
      double acc = 0.0;
      for (int j = 0; j < cfg.n_y; ++j) acc += C.at(i, j) * ts[static_cast<std::size_t>(j)];
      ds.x.at(n, i) = acc + cfg.observation_noise * obs_rng.gaussian();
    }

    const double u1 = to_unit(d1[static_cast<std::size_t>(n)], d1_lo, d1_hi);
    const double u2 = to_unit(d2[static_cast<std::size_t>(n)], d2_lo, d2_hi);
    for (int i = 0; i < cfg.n_y; ++i) {
      double acc = B.at(i, 0) * u1 + B.at(i, 1) * u2;
      for (int j = 0; j < cfg.n_y; ++j) acc += A.at(i, j) * s[static_cast<std::size_t>(j)];
      pre[static_cast<std::size_t>(i)] = std::tanh(acc) + cfg.process_noise * proc_rng.gaussian();
    }
    s.swap(pre);
  }

  domain_split(ds, ds.y_names[static_cast<std::size_t>(cfg.rule_column)], cfg.source_low,
               cfg.source_high);
  return ds;
}

Schema make_schema(int n_x, int n_y) {
  Schema s;
  for (int i = 1; i <= n_x; ++i) s.columns.emplace_back("x" + std::to_string(i), Role::kData);
  for (int i = 1; i <= n_y; ++i) s.columns.emplace_back("y" + std::to_string(i), Role::kLabel);
  s.validate();
  return s;
}

}  // namespace pfb::data
