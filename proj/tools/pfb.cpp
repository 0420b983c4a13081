#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "pfb/checkpoint.hpp"
#include "pfb/config.hpp"
#include "pfb/data.hpp"
#include "pfb/errors.hpp"
#include "pfb/flowdemo.hpp"
#include "pfb/gradsuite.hpp"
#include "pfb/metrics.hpp"
#include "pfb/training.hpp"

namespace {

using namespace pfb;

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write '" + path + "'");
  f << text;
  if (!f) throw ValidationError("write to '" + path + "' failed");
}

void run_synth(const std::string& config_path, const std::string& out_path, std::uint64_t seed) {
  data::SynthConfig cfg = config::load_synth_config(config_path);
  cfg.seed = seed;
  data::TimeSeriesDataset ds = data::synth_generate(cfg);
  data::Schema schema = data::make_schema(cfg.n_x, cfg.n_y);
  data::save_csv(out_path, schema, ds);
  const std::string schema_path = out_path + ".schema";
  schema.save(schema_path);

  std::size_t source = 0;
  for (auto d : ds.domain) source += d;
  std::cout << "wrote " << ds.length() << " rows to " << out_path << "\n";
  std::cout << "schema sidecar: " << schema_path << "\n";
  std::cout << "source fraction: " << static_cast<double>(source) / ds.length() << "\n";
}

void run_train(const std::string& data_path, const std::string& schema_path,
               const std::string& config_path, const std::string& out_path,
               const std::string& log_path) {
  const std::string config_text = read_file(config_path);
  config::RunConfig rc = config::parse_run_config(config_text);
  data::Schema schema = data::Schema::load(schema_path);
  data::TimeSeriesDataset ds = data::load_csv(data_path, schema);
  if (ds.x.cols() != rc.model.n_x || ds.y.cols() != rc.model.n_y) {
    throw ValidationError("train: dataset widths (" + std::to_string(ds.x.cols()) + "," +
                          std::to_string(ds.y.cols()) + ") do not match the model config (" +
                          std::to_string(rc.model.n_x) + "," + std::to_string(rc.model.n_y) + ")");
  }

  const double source_fraction =
      data::domain_split(ds, rc.rule.rule_column, rc.rule.source_low, rc.rule.source_high);
  data::NormStats stats = data::fit_normalization(ds);
  data::apply_normalization(ds, stats);
  std::vector<data::Window> windows = data::window(ds, rc.train_cfg.window_length);
  std::cout << "windows: " << windows.size() << ", source fraction: " << source_fraction << "\n";

  obj::ModelSpec spec = rc.spec();
  nn::ParamStore theta, phi;
  Rng theta_rng = Rng::derive(rc.train_cfg.seed, 100);
  Rng phi_rng = Rng::derive(rc.train_cfg.seed, 101);
  gen::init_params(spec.model, theta, theta_rng);
  flow::init_params(spec.potential, phi, phi_rng);

  std::ofstream log(log_path);
  if (!log) throw ValidationError("cannot write '" + log_path + "'");
  log << train::kLossLogHeader << "\n";

  train::TrainHooks hooks;
  hooks.on_epoch = [&](const train::LossRow& row) {
    log << train::loss_row_csv(row);
    log.flush();
    std::cout << "epoch " << row.epoch << "/" << rc.train_cfg.epochs
              << "  loss_theta=" << row.loss_theta << "  loss_phi=" << row.loss_phi
              << "  lr=" << row.lr << "\n";
  };
  hooks.on_checkpoint = [&](int epoch, const nn::ParamStore& th, const nn::ParamStore& ph) {
    ckpt::Checkpoint c;
    c.seed = rc.train_cfg.seed;
    c.config_text = config_text;
    c.norm = stats;
    c.theta = th;
    c.phi = ph;
    c.save(out_path);
    std::cout << "checkpoint written at epoch " << epoch << ": " << out_path << "\n";
  };

  train::train(spec, rc.train_cfg, windows, std::move(theta), std::move(phi), hooks);
  if (!log) throw ValidationError("write to '" + log_path + "' failed");
}

void run_eval(const std::string& ckpt_path, const std::string& data_path,
              const std::string& schema_path, const std::string& report_path,
              const std::string& predictions_path, const std::string& trajectories_path) {
  ckpt::Checkpoint c = ckpt::Checkpoint::load(ckpt_path);
  config::RunConfig rc = config::parse_run_config(c.config_text);
  data::Schema schema = data::Schema::load(schema_path);
  data::TimeSeriesDataset ds = data::load_csv(data_path, schema);
  if (ds.x.cols() != rc.model.n_x || ds.y.cols() != rc.model.n_y) {
    throw ValidationError("eval: dataset widths do not match the checkpoint's model");
  }
  data::domain_split(ds, rc.rule.rule_column, rc.rule.source_low, rc.rule.source_high);

  data::TimeSeriesDataset norm_ds = ds;
  data::apply_normalization(norm_ds, c.norm);

  obj::ModelSpec spec = rc.spec();
  train::InferResult ir =
      train::infer(rc.model, spec.potential, rc.flow_cfg, c.theta, c.phi, norm_ds.x);
  Tensor pred = ir.y_pred;
  data::denormalize_labels(pred, c.norm);

  metrics::EvalReport rep = metrics::build_report(pred, ds.y, ds.domain, ds.y_names,
                                                  metrics::default_groups(ds.y.cols()));
  rep.seed = c.seed;
  rep.config_hash = metrics::fnv1a_hex(c.config_text);
  rep.checkpoint_id = metrics::fnv1a_hex(c.serialize());
  rep.save(report_path);
  std::cout << rep.to_table();

  if (!predictions_path.empty()) {
    std::string out = "step,domain";
    for (int k = 1; k <= ds.y.cols(); ++k) out += ",y_true_" + std::to_string(k);
    for (int k = 1; k <= ds.y.cols(); ++k) out += ",y_pred_" + std::to_string(k);
    out += "\n";
    char buf[40];
    for (int n = 0; n < ds.length(); ++n) {
      out += std::to_string(n);
      out += ds.domain[static_cast<std::size_t>(n)] ? ",source" : ",target";
      for (int k = 0; k < ds.y.cols(); ++k) {
        std::snprintf(buf, sizeof(buf), ",%.17g", ds.y.at(n, k));
        out += buf;
      }
      for (int k = 0; k < pred.cols(); ++k) {
        std::snprintf(buf, sizeof(buf), ",%.17g", pred.at(n, k));
        out += buf;
      }
      out += "\n";
    }
    write_file(predictions_path, out);
    std::cout << "predictions: " << predictions_path << "\n";
  }

  if (!trajectories_path.empty()) {
    std::string out = "step";
    for (int k = 1; k <= ir.z_traj.cols(); ++k) out += ",z_" + std::to_string(k);
    for (int k = 1; k <= ir.h_traj.cols(); ++k) out += ",h_" + std::to_string(k);
    out += "\n";
    char buf[40];
    for (int n = 0; n < ir.z_traj.rows(); ++n) {
      out += std::to_string(n);
      for (int k = 0; k < ir.z_traj.cols(); ++k) {
        std::snprintf(buf, sizeof(buf), ",%.17g", ir.z_traj.at(n, k));
        out += buf;
      }
      for (int k = 0; k < ir.h_traj.cols(); ++k) {
        std::snprintf(buf, sizeof(buf), ",%.17g", ir.h_traj.at(n, k));
        out += buf;
      }
      out += "\n";
    }
    write_file(trajectories_path, out);
    std::cout << "trajectories: " << trajectories_path << "\n";
  }
}

void run_gradcheck(std::uint64_t seed) {
  const std::vector<grad::CheckResult> results = grad::run_gradient_suite(seed);
  std::cout << grad::format_results(results);
  if (!grad::all_pass(results)) {
    throw NumericalError("gradient checks failed");
  }
  std::cout << "all " << results.size() << " gradient checks passed\n";
}

void run_flow_demo(const std::string& case_name) {
  demo::FlowDemoReport rep;
  if (case_name == "gaussian1d") {
    rep = demo::run_gaussian1d(1);
  } else if (case_name == "kalman2d") {
    rep = demo::run_kalman2d(1);
  } else {
    throw ValidationError("flow-demo: unknown case '" + case_name +
                          "' (expected gaussian1d or kalman2d)");
  }
  std::cout << "case " << rep.case_name << "\n" << rep.details;
  if (!rep.pass) throw NumericalError("flow demo thresholds not met");
  std::cout << "all thresholds met\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"particle-flow sequential Bayes soft-sensing toolkit"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic switching dataset");
  std::string synth_config, synth_out;
  std::uint64_t synth_seed = 1;
  synth->add_option("--config", synth_config, "synth config file")->required();
  synth->add_option("--out", synth_out, "output CSV path")->required();
  synth->add_option("--seed", synth_seed, "generator seed")->required();

  auto* train_cmd = app.add_subcommand("train", "train a model on a CSV dataset");
  std::string train_data, train_schema, train_config, train_out, train_log;
  train_cmd->add_option("--data", train_data, "training CSV")->required();
  train_cmd->add_option("--schema", train_schema, "column schema file")->required();
  train_cmd->add_option("--config", train_config, "run config file")->required();
  train_cmd->add_option("--out", train_out, "checkpoint output path")->required();
  train_cmd->add_option("--log", train_log, "loss log CSV path")->required();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a CSV dataset");
  std::string eval_ckpt, eval_data, eval_schema, eval_report, eval_pred, eval_traj;
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--data", eval_data, "evaluation CSV")->required();
  eval_cmd->add_option("--schema", eval_schema, "column schema file")->required();
  eval_cmd->add_option("--report", eval_report, "metrics report CSV path")->required();
  eval_cmd->add_option("--predictions", eval_pred, "per-step truth/prediction CSV");
  eval_cmd->add_option("--trajectories", eval_traj, "latent/hidden trajectory CSV");

  auto* gradcheck = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
  std::uint64_t grad_seed = 1;
  gradcheck->add_option("--seed", grad_seed, "suite seed");

  auto* flow_demo = app.add_subcommand("flow-demo", "run an exact-inference oracle comparison");
  std::string demo_case;
  flow_demo->add_option("--case", demo_case, "gaussian1d or kalman2d")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*synth) {
      run_synth(synth_config, synth_out, synth_seed);
    } else if (*train_cmd) {
      run_train(train_data, train_schema, train_config, train_out, train_log);
    } else if (*eval_cmd) {
      run_eval(eval_ckpt, eval_data, eval_schema, eval_report, eval_pred, eval_traj);
    } else if (*gradcheck) {
      run_gradcheck(grad_seed);
    } else if (*flow_demo) {
      run_flow_demo(demo_case);
    }
  } catch (const pfb::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const pfb::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
