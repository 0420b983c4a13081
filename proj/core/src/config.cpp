#include "pfb/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "pfb/errors.hpp"

namespace pfb::config {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// tracks which keys a reader consumed so leftovers can be rejected
class SectionReader {
 public:
  SectionReader(const Ini& ini, std::string name) : name_(std::move(name)) {
    section_ = ini.find(name_);
    if (section_) used_.assign(section_->size(), 0);
  }

  bool has(std::string_view key) const { return find(key) != nullptr; }

  template <typename F>
  void read(std::string_view key, F&& parse) {
    const std::string* raw = find(key);
    if (raw) parse(*raw);
  }

  void integer(std::string_view key, int& out) {
    read(key, [&](const std::string& v) { out = static_cast<int>(parse_ll(key, v)); });
  }
  void u64(std::string_view key, std::uint64_t& out) {
    read(key, [&](const std::string& v) { out = parse_u64(key, v); });
  }
  void real(std::string_view key, double& out) {
    read(key, [&](const std::string& v) { out = parse_double(key, v); });
  }
  void boolean(std::string_view key, bool& out) {
    read(key, [&](const std::string& v) {
      if (v == "true" || v == "1") {
        out = true;
      } else if (v == "false" || v == "0") {
        out = false;
      } else {
        fail(key, v, "a boolean (true/false/1/0)");
      }
    });
  }
  void int_list(std::string_view key, std::vector<int>& out) {
    read(key, [&](const std::string& v) {
      out.clear();
      for (auto item : split_list(v)) out.push_back(static_cast<int>(parse_ll(key, item)));
    });
  }
  void real_list(std::string_view key, std::vector<double>& out) {
    read(key, [&](const std::string& v) {
      out.clear();
      for (auto item : split_list(v)) out.push_back(parse_double(key, item));
    });
  }
  void text(std::string_view key, std::string& out) {
    read(key, [&](const std::string& v) { out = v; });
  }

  void finish() const {
    if (!section_) return;
    for (std::size_t i = 0; i < section_->size(); ++i) {
      if (!used_[i]) {
        throw ValidationError("config: unknown key '" + (*section_)[i].first + "' in section [" +
                              name_ + "]");
      }
    }
  }

 private:
  const std::string* find(std::string_view key) const {
    if (!section_) return nullptr;
    for (std::size_t i = 0; i < section_->size(); ++i) {
      if ((*section_)[i].first == key) {
        used_[i] = 1;
        return &(*section_)[i].second;
      }
    }
    return nullptr;
  }

  [[noreturn]] void fail(std::string_view key, const std::string& v, const char* what) const {
    throw ValidationError("config: key '" + std::string(key) + "' in [" + name_ + "]: '" + v +
                          "' is not " + what);
  }
  long long parse_ll(std::string_view key, std::string_view v) const {
    long long out = 0;
    auto t = trim(v);
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    if (ec != std::errc{} || p != t.data() + t.size()) fail(key, std::string(v), "an integer");
    return out;
  }
  std::uint64_t parse_u64(std::string_view key, std::string_view v) const {
    std::uint64_t out = 0;
    auto t = trim(v);
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    if (ec != std::errc{} || p != t.data() + t.size())

      fail(key, std::string(v), "an unsigned integer");
    return out;
  }
  double parse_double(std::string_view key, std::string_view v) const {
    double out = 0;
    auto t = trim(v);
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    if (ec != std::errc{} || p != t.data() + t.size()) fail(key, std::string(v), "a number");
    return out;
  }
  static std::vector<std::string_view> split_list(std::string_view v) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (start <= v.size()) {
      auto pos = v.find(',', start);
      if (pos == std::string_view::npos) {
        auto item = trim(v.substr(start));
        if (!item.empty()) out.push_back(item);
        break;
      }
      auto item = trim(v.substr(start, pos - start));
      if (!item.empty()) out.push_back(item);
      start = pos + 1;
    }
    return out;
  }

  std::string name_;
  const Section* section_ = nullptr;
  mutable std::vector<std::uint8_t> used_;
};

void check_sections(const Ini& ini, std::initializer_list<std::string_view> allowed) {
  for (const auto& [name, section] : ini.sections) {
    if (std::find(allowed.begin(), allowed.end(), name) == allowed.end()) {
      throw ValidationError("config: unknown section [" + name + "]");
    }
  }
}

}  // namespace

Ini Ini::parse(std::string_view text) {
  Ini ini;
  Section* current = nullptr;
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;

    std::string_view body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']' || body.size() < 3) {
        throw ValidationError("config: malformed section header on line " +
                              std::to_string(line_no));
      }
      std::string name(trim(body.substr(1, body.size() - 2)));
      for (const auto& [existing, s] : ini.sections) {
        if (existing == name) {
          throw ValidationError("config: duplicate section [" + name + "] on line " +
                                std::to_string(line_no));
        }
      }
      ini.sections.emplace_back(std::move(name), Section{});
      current = &ini.sections.back().second;
      continue;
    }
    auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("config: expected 'key = value' on line " + std::to_string(line_no));
    }
    if (!current) {
      throw ValidationError("config: key outside any section on line " + std::to_string(line_no));
    }
    std::string key(trim(body.substr(0, eq)));
    std::string value(trim(body.substr(eq + 1)));
    if (key.empty()) {
      throw ValidationError("config: empty key on line " + std::to_string(line_no));
    }
    for (const auto& [k, v] : *current) {
      if (k == key) {
        throw ValidationError("config: duplicate key '" + key + "' on line " +
                              std::to_string(line_no));
      }
    }
    current->emplace_back(std::move(key), std::move(value));
  }
  return ini;
}

Ini Ini::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse(buf.str());
}

const Section* Ini::find(std::string_view name) const {
  for (const auto& [n, s] : sections) {
    if (n == name) return &s;
  }
  return nullptr;
}

obj::ModelSpec RunConfig::spec() const {
  obj::ModelSpec s;
  s.model = model;
  s.potential = potential;
  s.potential.n_x = model.n_x;
  s.potential.n_state = model.n_z + model.n_h;
  s.flow_cfg = flow_cfg;
  s.particles = train_cfg.particles;
  return s;
}

RunConfig parse_run_config(std::string_view text) {
  Ini ini = Ini::parse(text);
  check_sections(ini, {"model", "potential", "flow", "train", "data"});
  RunConfig rc;

  SectionReader model(ini, "model");
  model.integer("n_x", rc.model.n_x);
  model.integer("n_y", rc.model.n_y);
  model.integer("n_z", rc.model.n_z);
  model.integer("n_h", rc.model.n_h);
  model.integer("latent_embed", rc.model.latent_embed);
  model.int_list("encoder_hidden", rc.model.encoder_hidden);
  model.int_list("prior_hidden", rc.model.prior_hidden);
  model.int_list("decoder_hidden", rc.model.decoder_hidden);
  model.real("sigma_floor", rc.model.sigma_floor);
  model.real("leaky_slope", rc.model.leaky_slope);
  model.finish();

  SectionReader pot(ini, "potential");
  pot.integer("measurement_embed", rc.potential.measurement_embed);
  pot.int_list("encoder_hidden", rc.potential.encoder_hidden);
  pot.int_list("potential_hidden", rc.potential.potential_hidden);
  pot.real("leaky_slope", rc.potential.leaky_slope);
  std::string act;
  pot.text("activation", act);
  if (!act.empty()) {
    if (act == "leaky") {
      rc.potential.activation = nn::Act::kLeakyRelu;
    } else if (act == "softplus") {
      rc.potential.activation = nn::Act::kSoftplus;
    } else {
      throw ValidationError("config: potential activation must be 'leaky' or 'softplus', got '" +
                            act + "'");
    }
  }
  pot.finish();

  SectionReader flow(ini, "flow");
  flow.integer("num_steps", rc.flow_cfg.num_steps);
  flow.real("step_size", rc.flow_cfg.step_size);
  flow.finish();

  SectionReader train(ini, "train");
  train.integer("window_length", rc.train_cfg.window_length);
  train.integer("particles", rc.train_cfg.particles);
  train.integer("batch_size", rc.train_cfg.batch_size);
  train.real("initial_lr", rc.train_cfg.initial_lr);
  train.integer("epochs", rc.train_cfg.epochs);
  train.real("l2", rc.train_cfg.l2);
  train.real("lr_decay", rc.train_cfg.lr_decay);
  train.u64("seed", rc.train_cfg.seed);
  train.integer("checkpoint_every", rc.train_cfg.checkpoint_every);
  train.boolean("update_phi", rc.train_cfg.update_phi);
  train.finish();

  SectionReader rule(ini, "data");
  rule.text("rule_column", rc.rule.rule_column);
  rule.real("source_low", rc.rule.source_low);
  rule.real("source_high", rc.rule.source_high);
  rule.finish();

  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_run_config(buf.str());
}

data::SynthConfig parse_synth_config(std::string_view text) {
  Ini ini = Ini::parse(text);
  check_sections(ini, {"synth"});
  data::SynthConfig sc;
  SectionReader s(ini, "synth");
  s.integer("n_x", sc.n_x);
  s.integer("n_y", sc.n_y);
  s.integer("length", sc.length);
  s.real_list("driver1_setpoints", sc.driver1_setpoints);
  s.real_list("driver2_setpoints", sc.driver2_setpoints);
  s.integer("dwell_min", sc.dwell_min);
  s.integer("dwell_max", sc.dwell_max);
  s.real("state_gain", sc.state_gain);
  s.real("drive_gain", sc.drive_gain);
  s.real("obs_gain", sc.obs_gain);
  s.real("process_noise", sc.process_noise);
  s.real("observation_noise", sc.observation_noise);
  s.real("label_noise", sc.label_noise);
  s.real("source_low", sc.source_low);
  s.real("source_high", sc.source_high);
  s.real("source_fraction", sc.source_fraction);
  s.integer("rule_column", sc.rule_column);
  s.u64("seed", sc.seed);
  s.finish();
  return sc;
}

data::SynthConfig load_synth_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_synth_config(buf.str());
}

}  // namespace pfb::config
