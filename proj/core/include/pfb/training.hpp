#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pfb/data.hpp"
#include "pfb/objective.hpp"

namespace pfb::train {

// Adam with decoupled weight decay: parameters shrink by (1 - lr*l2) before
// the bias-corrected moment update is applied.
class Adam {
 public:
  explicit Adam(const nn::ParamStore& params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void step(nn::ParamStore& params, const std::vector<Tensor>& grads, double lr, double l2);
  long steps() const { return step_; }

 private:
  std::vector<Tensor> m_, v_;
  long step_ = 0;
  double beta1_, beta2_, eps_;
};

struct TrainConfig {
  int window_length = 100;
  int particles = 8;
  int batch_size = 16;
  double initial_lr = 1e-4;
  int epochs = 300;
  double l2 = 0.01;
  double lr_decay = 0.99;  // multiplicative per epoch
  std::uint64_t seed = 1;
  int checkpoint_every = 25;
  bool update_phi = true;  // false freezes the potential (prior-only ablation)

  void validate() const;
};

struct LossRow {
  int epoch = 0;
  double loss_theta = 0.0;
  double loss_phi = 0.0;
  double lr = 0.0;
  double seconds = 0.0;  // wall time of the epoch; excluded from determinism checks
};

inline constexpr const char* kLossLogHeader = "epoch,loss_theta,loss_phi,lr,seconds";
std::string loss_row_csv(const LossRow& row);  // one line, newline-terminated
std::string loss_log_csv(const std::vector<LossRow>& log);
// the csv with the wall-time column blanked, for bitwise run comparison
std::string strip_seconds_column(const std::string& csv);

struct TrainHooks {
  // invoked at every checkpoint_every boundary and after the final epoch
  std::function<void(int epoch, const nn::ParamStore& theta, const nn::ParamStore& phi)>
      on_checkpoint;
  std::function<void(const LossRow&)> on_epoch;
};

struct TrainResult {
  nn::ParamStore theta;
  nn::ParamStore phi;
  std::vector<LossRow> log;
};

// Windows must already be normalized and carry their domain masks. Each epoch
// shuffles windows with a seed-derived stream, consumes them in batches (the
// final partial batch is kept), and steps the two optimizers together: theta
// against d(loss_theta), the potential against d(loss_phi). Reparameterization
// noise is drawn from counter-based streams keyed by (epoch, window, step), so
// results do not depend on batch boundaries or processing order.
TrainResult train(const obj::ModelSpec& spec, const TrainConfig& cfg,
                  const std::vector<data::Window>& windows, nn::ParamStore theta,
                  nn::ParamStore phi, const TrainHooks& hooks = {});

struct InferResult {
  Tensor y_pred{1, 1};  // L x n_z prior-head means, emitted before the flow acts
  Tensor z_traj{1, 1};  // L x n_z post-flow latent trajectory
  Tensor h_traj{1, 1};  // L x n_h post-flow hidden trajectory
};

// Single noise-free particle: z_n is the prior mean, the flow then moves
// (z_n, h_n) using the observed x_n, and the moved state feeds step n+1.
// State carries across the whole sequence.
InferResult infer(const gen::ModelConfig& model, const flow::PotentialConfig& potential,
                  const flow::FlowConfig& flow_cfg, const nn::ParamStore& theta,
                  const nn::ParamStore& phi, const Tensor& x_seq);

}  // namespace pfb::train
