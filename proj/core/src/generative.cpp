#include "pfb/generative.hpp"

#include "pfb/errors.hpp"

namespace pfb::gen {

void ModelConfig::validate() const {
  if (n_x <= 0 || n_y <= 0 || n_z <= 0 || n_h <= 0)
    throw ValidationError("model config: n_x, n_y, n_z, n_h must all be positive");
  if (n_z != n_y)
    throw ValidationError("model config: latent width " + std::to_string(n_z) +
                          " must equal label width " + std::to_string(n_y) +
                          " so the prior mean reads out the labels");
  if (latent_embed <= 0) throw ValidationError("model config: latent_embed must be positive");
  if (!(sigma_floor > 0.0)) throw ValidationError("model config: sigma_floor must be positive");
}

nn::FcnnSpec ModelConfig::encoder_spec() const {
  nn::FcnnSpec s;
  s.widths.push_back(n_z);
  s.widths.insert(s.widths.end(), encoder_hidden.begin(), encoder_hidden.end());
  s.widths.push_back(latent_embed);
  s.leaky_slope = leaky_slope;
  return s;
}

nn::GruSpec ModelConfig::gru_spec() const { return {latent_embed, n_h}; }

nn::GaussianHeadSpec ModelConfig::prior_spec() const {
  nn::GaussianHeadSpec s;
  s.trunk.widths.push_back(n_h);
  s.trunk.widths.insert(s.trunk.widths.end(), prior_hidden.begin(), prior_hidden.end());
  s.trunk.leaky_slope = leaky_slope;
  s.out = n_z;
  s.sigma_floor = sigma_floor;
  return s;
}

nn::GaussianHeadSpec ModelConfig::decoder_spec() const {
  nn::GaussianHeadSpec s;
  s.trunk.widths.push_back(latent_embed + n_h);
  s.trunk.widths.insert(s.trunk.widths.end(), decoder_hidden.begin(), decoder_hidden.end());
  s.trunk.leaky_slope = leaky_slope;
  s.out = n_x;
  s.sigma_floor = sigma_floor;
  return s;
}

void init_params(const ModelConfig& cfg, nn::ParamStore& theta, Rng& rng) {
  cfg.validate();
  nn::fcnn_init(cfg.encoder_spec(), kEncPrefix, theta, rng);
  nn::gru_init(cfg.gru_spec(), kGruPrefix, theta, rng);
  nn::gaussian_head_init(cfg.prior_spec(), kPriorPrefix, theta, rng);
  nn::gaussian_head_init(cfg.decoder_spec(), kDecoderPrefix, theta, rng);
}

Ensemble initial_ensemble(int particles, const ModelConfig& cfg) {
  if (particles <= 0) throw ValidationError("initial_ensemble: particle count must be positive");
  return {Tensor::zeros(particles, cfg.n_z), Tensor::zeros(particles, cfg.n_h)};
}

PriorStepNodes prior_step(Graph& g, const ModelConfig& cfg, NodeId z_prev, NodeId h_prev,
                          NodeId noise) {
  cfg.validate();
  const int particles = g.at(z_prev).rows;
  if (g.at(z_prev).cols != cfg.n_z || g.at(h_prev).cols != cfg.n_h)
    throw ShapeError("prior_step: ensemble widths do not match the config");
  if (g.at(h_prev).rows != particles || g.at(noise).rows != particles ||
      g.at(noise).cols != cfg.n_z)
    throw ShapeError("prior_step: z, h, noise must agree on the particle count");

  const NodeId embedded = nn::fcnn_apply(g, cfg.encoder_spec(), kEncPrefix, z_prev);
  PriorStepNodes out;
  out.h = nn::gru_step(g, cfg.gru_spec(), kGruPrefix, embedded, h_prev);
  const nn::GaussianNodes stats = nn::gaussian_head_apply(g, cfg.prior_spec(), kPriorPrefix, out.h);
  out.mu = stats.mu;
  out.sigma = stats.sigma;
  out.z = nn::reparameterize(g, stats, noise);
  return out;
}

nn::GaussianNodes decode(Graph& g, const ModelConfig& cfg, NodeId z, NodeId h) {
  const NodeId embedded = nn::fcnn_apply(g, cfg.encoder_spec(), kEncPrefix, z);
  return nn::gaussian_head_apply(g, cfg.decoder_spec(), kDecoderPrefix,
                                 g.concat(embedded, h));
}

NodeId data_log_likelihood(Graph& g, const nn::GaussianNodes& dec, NodeId x_row) {
  return nn::gaussian_log_density(g, dec.mu, dec.sigma, x_row);
}

NodeId label_log_likelihood(Graph& g, const nn::GaussianNodes& prior, NodeId y_row) {
  return nn::gaussian_log_density(g, prior.mu, prior.sigma, y_row);
}

}  // namespace pfb::gen
