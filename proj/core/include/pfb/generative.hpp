#pragma once

#include <string>
#include <vector>

#include "pfb/nn.hpp"

namespace pfb::gen {

// Latent-state recurrent generative model. Observations never enter the
// recurrence; h_n is driven only by the encoded previous latent sample, so
// the prior head predicts before any measurement is seen at step n.
struct ModelConfig {
  int n_x = 0;  // measurement width
  int n_y = 0;  // label width
  int n_z = 0;  // latent width, equals n_y in the soft-sensing setup
  int n_h = 512;

  int latent_embed = 256;                        // z encoder output width
  std::vector<int> encoder_hidden = {256};
  std::vector<int> prior_hidden = {256, 128};
  std::vector<int> decoder_hidden = {512, 256, 128};
  double sigma_floor = 1e-4;
  double leaky_slope = 0.01;

  void validate() const;

  nn::FcnnSpec encoder_spec() const;        // n_z -> latent_embed
  nn::GruSpec gru_spec() const;             // latent_embed -> n_h
  nn::GaussianHeadSpec prior_spec() const;  // n_h -> (mu, sigma) over n_z
  nn::GaussianHeadSpec decoder_spec() const;  // latent_embed + n_h -> stats over n_x
};

// parameter prefixes inside the theta store
inline constexpr const char* kEncPrefix = "theta.enc_z";
inline constexpr const char* kGruPrefix = "theta.gru";
inline constexpr const char* kPriorPrefix = "theta.prior";
inline constexpr const char* kDecoderPrefix = "theta.dec";

void init_params(const ModelConfig& cfg, nn::ParamStore& theta, Rng& rng);

// P identically shaped particles, one per row
struct Ensemble {
  Tensor z;
  Tensor h;
};
Ensemble initial_ensemble(int particles, const ModelConfig& cfg);  // all zeros

struct PriorStepNodes {
  NodeId h = kNoNode;        // P x n_h, post-recurrence state
  NodeId mu = kNoNode;       // prior stats over the latent
  NodeId sigma = kNoNode;
  NodeId z = kNoNode;        // reparameterized sample
};

// one generative transition: encode z_prev, advance the cell, read the prior
// head, and sample z = mu + sigma * noise
PriorStepNodes prior_step(Graph& g, const ModelConfig& cfg, NodeId z_prev, NodeId h_prev,
                          NodeId noise);

// measurement decoder on the current particle; shares the latent encoder
// parameters with prior_step
nn::GaussianNodes decode(Graph& g, const ModelConfig& cfg, NodeId z, NodeId h);

// per-particle log densities (P x 1); targets broadcast from single rows
NodeId data_log_likelihood(Graph& g, const nn::GaussianNodes& dec, NodeId x_row);
NodeId label_log_likelihood(Graph& g, const nn::GaussianNodes& prior, NodeId y_row);

}  // namespace pfb::gen
