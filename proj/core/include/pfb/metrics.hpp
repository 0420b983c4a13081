#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pfb/tensor.hpp"

namespace pfb::metrics {

enum class Subset { kSource, kTarget, kOverall };

// Sums over the selected rows of one column. mse and truth variance use the
// population convention, so r2 == 1 - nrmse^2 holds exactly per variable and
// count-weighted subset MSEs recombine to the overall MSE exactly.
struct Moments {
  int count = 0;
  double mse = 0.0;
  double truth_mean = 0.0;
  double truth_var = 0.0;
};
Moments column_moments(const Tensor& pred, const Tensor& truth, int column,
                       const std::vector<std::uint8_t>& domain, Subset subset);

// rmse over the selection divided by the truth standard deviation over the
// same selection; errors on empty selection or zero-variance truth
double nrmse(const Tensor& pred, const Tensor& truth, int column,
             const std::vector<std::uint8_t>& domain, Subset subset);
double r_squared(const Tensor& pred, const Tensor& truth, int column,
                 const std::vector<std::uint8_t>& domain, Subset subset);

struct GroupSpec {
  std::string name;
  std::vector<int> columns;  // label column indices
};
// 13 labels split as in the reference process (pressures, then flow rates and
// densities); otherwise one group over everything
std::vector<GroupSpec> default_groups(int n_y);

struct CellMetrics {
  double nrmse = 0.0;
  double r2 = 0.0;
};

struct ReportRow {
  std::string name;
  bool is_group = false;
  CellMetrics source, target, overall;
};

// Table of per-variable and per-group scores for the three step subsets.
// Group scores average the member variables' scores.
struct EvalReport {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string checkpoint_id;
  std::vector<ReportRow> rows;

  std::string to_csv() const;
  static EvalReport from_csv(const std::string& text);
  void save(const std::string& path) const;
  static EvalReport load(const std::string& path);
  std::string to_table() const;  // aligned plain text
};

EvalReport build_report(const Tensor& pred, const Tensor& truth,
                        const std::vector<std::uint8_t>& domain,
                        const std::vector<std::string>& names,
                        const std::vector<GroupSpec>& groups);

// 64-bit FNV-1a over the raw text, hex encoded; identifies configs in reports
std::string fnv1a_hex(std::string_view text);

}  // namespace pfb::metrics
