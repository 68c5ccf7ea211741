#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dncbm/matrix.hpp"
#include "dncbm/numerics.hpp"
#include "dncbm/rng.hpp"

namespace dncbm {

/// Bias-free sparse autoencoder: SAE(a) = W_Dᵀ ReLU(W_Eᵀ a).
struct SaeModel {
  Matrix encoder;  // d × h
  Matrix decoder;  // h × d, row c is the dictionary vector of concept c

  SaeModel() = default;
  SaeModel(Matrix encoder, Matrix decoder);

  std::size_t input_dim() const { return encoder.rows(); }
  std::size_t latent_dim() const { return encoder.cols(); }

  friend bool operator==(const SaeModel&, const SaeModel&) = default;
};

struct SaeConfig {
  std::size_t expansion_factor = 8;
  double lambda1 = 3e-5;
  double lr = 5e-4;
  std::size_t epochs = 200;
  std::size_t batch_size = 4096;
  std::size_t resample_every = 10;  // 0 disables resampling
  RngSeed seed{};
  // Decoder gradients lose their component along each row and the rows are
  // renormalised after every update.
  bool unit_norm_decoder = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct SaeLossReport {
  double recon_l2 = 0.0;
  double sparsity_l1 = 0.0;
  double total = 0.0;
  double mean_active = 0.0;
};

struct SaeForward {
  std::vector<double> latent;
  std::vector<double> recon;
};

struct SaeGradients {
  Matrix encoder;
  Matrix decoder;
};

struct SaeAdam {
  AdamState encoder;
  AdamState decoder;
};

struct ResampleResult {
  SaeModel model;
  SaeAdam adam;
  std::vector<std::size_t> resampled;
};

struct TrainResult {
  SaeModel model;
  std::vector<SaeLossReport> history;
};

/// Weights drawn i.i.d. from U[-1/√d, 1/√d].
SaeModel init_sae(std::size_t d, std::size_t h, RngSeed seed);

SaeForward sae_forward(const SaeModel& model, std::span<const double> a);

/// Non-negative concept activations, one row per sample.
Matrix encode(const SaeModel& model, const Matrix& features);

SaeLossReport sae_loss(const SaeModel& model, const Matrix& batch, double lambda1);

SaeGradients sae_grad(const SaeModel& model, const Matrix& batch, double lambda1);

/// Loss report and gradients from a single forward pass.
std::pair<SaeLossReport, SaeGradients> sae_loss_and_grad(const SaeModel& model, const Matrix& batch,
                                                         double lambda1);

/// A neuron is dead if it is exactly zero on every row of `features`. Dead
/// encoder columns are pointed at a training sample drawn with probability
/// proportional to its squared reconstruction error, scaled to 0.2 × the mean
/// live column norm; the decoder row becomes the same unit vector. Moments of
/// the touched parameters are zeroed.
ResampleResult resample_dead_neurons(const SaeModel& model, const Matrix& features, const SaeAdam& adam,
                                     RngSeed seed);

/// Minibatch Adam on the reconstruction + L1 objective. The last partial batch
/// is kept. Resampling runs after every `resample_every` epochs except the last.
TrainResult train_sae(const Matrix& features, const SaeConfig& config);

}  // namespace dncbm
