#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pfb/tensor.hpp"

namespace pfb::data {

enum class Role { kData, kLabel };

// Column roles in CSV order. Text form is one "name,role" line per column,
// role in {data, label}; '#' starts a comment.
struct Schema {
  std::vector<std::pair<std::string, Role>> columns;

  int n_x() const;
  int n_y() const;
  std::vector<std::string> data_names() const;
  std::vector<std::string> label_names() const;
  void validate() const;  // nonempty, unique names, both roles present

  static Schema parse(std::string_view text);
  static Schema load(const std::string& path);
  std::string to_text() const;
  void save(const std::string& path) const;
};

struct TimeSeriesDataset {
  Tensor x{1, 1};  // L x n_x measurements
  Tensor y{1, 1};  // L x n_y labels
  std::vector<std::uint8_t> domain;  // per step, 1 = source; 0 until split
  std::vector<std::string> x_names;
  std::vector<std::string> y_names;

  int length() const { return x.rows(); }
};

// Header must contain exactly the schema's columns (any order). Cells must be
// finite numbers; errors carry the 1-based row and the column name.
TimeSeriesDataset load_csv(const std::string& path, const Schema& schema);

// writes columns in schema order; lossless for finite values
void save_csv(const std::string& path, const Schema& schema, const TimeSeriesDataset& ds);

// Per-column z-score statistics, fitted on a designated dataset and reusable
// on others (population standard deviation).
struct NormStats {
  std::vector<double> x_mean, x_std;
  std::vector<double> y_mean, y_std;
};
NormStats fit_normalization(const TimeSeriesDataset& ds);  // zero variance -> error
void apply_normalization(TimeSeriesDataset& ds, const NormStats& stats);
void invert_normalization(TimeSeriesDataset& ds, const NormStats& stats);

// scale label rows back to raw units
void denormalize_labels(Tensor& y, const NormStats& stats);

// Marks step n source iff y[n, column] lies in [low, high], both bounds
// inclusive. Returns the source fraction.
double domain_split(TimeSeriesDataset& ds, std::string_view label_column, double low,
                    double high);

struct Window {
  Tensor x{1, 1};
  Tensor y{1, 1};
  std::vector<std::uint8_t> domain;
  int start = 0;
};
// non-overlapping contiguous windows in order; trailing remainder dropped
std::vector<Window> window(const TimeSeriesDataset& ds, int length);

// Switching nonlinear state-space generator. Two exogenous drivers move
// between setpoints with random dwell times; the hidden state follows
// s' = tanh(A s + B d) + noise, labels are s plus noise except the rule
// column, which carries the exact driver-1 setpoint, and measurements are
// C tanh(D s) plus noise. Driver-1 alternation is feedback-balanced so the
// realized source fraction tracks source_fraction for any seed.
struct SynthConfig {
  int n_x = 7;
  int n_y = 13;
  int length = 20000;

  std::vector<double> driver1_setpoints = {0.0208, 0.0278, 0.0347, 0.0417};
  std::vector<double> driver2_setpoints = {0.5, 1.0, 2.0, 3.5, 6.0};
  int dwell_min = 200;
  int dwell_max = 600;

  double state_gain = 0.7;   // contraction factor of the state map
  double drive_gain = 0.8;
  double obs_gain = 1.0;
  double process_noise = 0.02;
  double observation_noise = 0.02;
  double label_noise = 0.005;

  double source_low = 0.0278;   // driver-1 range marked source
  double source_high = 0.0347;
  double source_fraction = 0.45;
  int rule_column = 7;  // label column carrying the driver-1 setpoint

  std::uint64_t seed = 1;

  void validate() const;
};

TimeSeriesDataset synth_generate(const SynthConfig& cfg);

// x1..x<n_x> as data, y1..y<n_y> as labels
Schema make_schema(int n_x, int n_y);

}  // namespace pfb::data
