#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "pfb/data.hpp"
#include "pfb/objective.hpp"
#include "pfb/training.hpp"

namespace pfb::config {

// Minimal INI: [section] headers, key = value lines, '#' comments. Sections
// and keys keep file order; unknown sections and keys are rejected by the
// typed readers below.
using Section = std::vector<std::pair<std::string, std::string>>;
struct Ini {
  std::vector<std::pair<std::string, Section>> sections;

  static Ini parse(std::string_view text);
  static Ini load(const std::string& path);
  const Section* find(std::string_view name) const;
};

// source-domain labeling rule applied to the training data
struct DataRule {
  std::string rule_column = "y8";
  double source_low = 0.0278;
  double source_high = 0.0347;
};

// [model] / [potential] / [flow] / [train] / [data] sections; missing keys
// keep their defaults, the potential's widths are derived from the model
struct RunConfig {
  gen::ModelConfig model;
  flow::PotentialConfig potential;
  flow::FlowConfig flow_cfg;
  train::TrainConfig train_cfg;
  DataRule rule;

  obj::ModelSpec spec() const;
};

RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::string& path);

// [synth] section
data::SynthConfig parse_synth_config(std::string_view text);
data::SynthConfig load_synth_config(const std::string& path);

}  // namespace pfb::config
