#include "dncbm/sae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "dncbm/error.hpp"

namespace dncbm {

namespace {

void check_width(const SaeModel& model, std::size_t width, const char* what) {
  if (width != model.input_dim()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("{}: input width {} does not match SAE input dimension {}", what, width,
                            model.input_dim()));
  }
}

void relu_inplace(Matrix& m) {
  for (double& x : m.data()) x = x > 0.0 ? x : 0.0;
}

void normalize_rows(Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double n = norm2(row);
    if (n > 0.0)
      for (double& x : row) x /= n;
  }
}

// Keeps decoder updates tangent to the unit sphere of each dictionary row.
void remove_parallel_component(Matrix& grad, const Matrix& decoder) {
  for (std::size_t c = 0; c < grad.rows(); ++c) {
    auto g = grad.row(c);
    auto w = decoder.row(c);
    const double along = dot(g, w);
    for (std::size_t j = 0; j < g.size(); ++j) g[j] -= along * w[j];
  }
}

constexpr std::size_t kSweepChunk = 4096;

}  // namespace

SaeModel::SaeModel(Matrix enc, Matrix dec) : encoder(std::move(enc)), decoder(std::move(dec)) {
  if (encoder.rows() != decoder.cols() || encoder.cols() != decoder.rows()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("SAE encoder {} and decoder {} are not transposed shapes", encoder.shape_string(),
                            decoder.shape_string()));
  }
}

void SaeConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidConfig, msg); };
  if (expansion_factor < 1) fail("sae.expansion_factor must be >= 1");
  if (!(lambda1 >= 0.0) || !std::isfinite(lambda1)) fail("sae.lambda1 must be finite and >= 0");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("sae.lr must be finite and > 0");
  if (epochs < 1) fail("sae.epochs must be >= 1");
  if (batch_size < 1) fail("sae.batch_size must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("sae.adam_beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("sae.adam_beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("sae.adam_eps must be > 0");
}

SaeModel init_sae(std::size_t d, std::size_t h, RngSeed seed) {
  if (d == 0 || h == 0) throw Error(ErrorKind::InvalidArgument, "SAE dimensions must be positive");
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  Matrix enc(d, h);
  Matrix dec(h, d);
  for (double& x : enc.data()) x = rng.uniform(-bound, bound);
  for (double& x : dec.data()) x = rng.uniform(-bound, bound);
  return SaeModel(std::move(enc), std::move(dec));
}

SaeForward sae_forward(const SaeModel& model, std::span<const double> a) {
  check_width(model, a.size(), "sae_forward");
  for (double x : a)
    if (!std::isfinite(x)) throw Error(ErrorKind::NonFinite, "sae_forward: non-finite input");
  const std::size_t d = model.input_dim();
  const std::size_t h = model.latent_dim();
  SaeForward out{std::vector<double>(h, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t i = 0; i < d; ++i) {
    auto w = model.encoder.row(i);
    for (std::size_t c = 0; c < h; ++c) out.latent[c] += a[i] * w[c];
  }
  for (double& z : out.latent) z = z > 0.0 ? z : 0.0;
  for (std::size_t c = 0; c < h; ++c) {
    if (out.latent[c] == 0.0) continue;
    auto p = model.decoder.row(c);
    for (std::size_t j = 0; j < d; ++j) out.recon[j] += out.latent[c] * p[j];
  }
  return out;
}

Matrix encode(const SaeModel& model, const Matrix& features) {
  check_width(model, features.cols(), "encode");
  Matrix z = matmul(features, model.encoder);
  relu_inplace(z);
  return z;
}

std::pair<SaeLossReport, SaeGradients> sae_loss_and_grad(const SaeModel& model, const Matrix& batch,
                                                         double lambda1) {
  check_width(model, batch.cols(), "sae_loss");
  if (batch.rows() == 0) throw Error(ErrorKind::InvalidArgument, "sae_loss: empty batch");
  const double n = static_cast<double>(batch.rows());

  Matrix pre = matmul(batch, model.encoder);
  Matrix z = pre;
  relu_inplace(z);
  Matrix err = matmul(z, model.decoder);

  SaeLossReport rep;
  auto e = err.data();
  auto x = batch.data();
  double sq = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    e[i] -= x[i];
    sq += e[i] * e[i];
  }
  double l1 = 0.0;
  std::size_t active = 0;
  for (double v : z.data()) {
    l1 += v;
    active += v > 0.0 ? 1 : 0;
  }
  rep.recon_l2 = sq / n;
  rep.sparsity_l1 = l1 / n;
  rep.total = rep.recon_l2 + lambda1 * rep.sparsity_l1;
  rep.mean_active = static_cast<double>(active) / n;

  // d(total)/d(recon) = 2 (recon - a) / N
  for (double& v : e) v *= 2.0 / n;
  SaeGradients g;
  g.decoder = matmul_tn(z, err);
  // Only active units carry gradient; inactive entries stay exactly zero.
  const double l1_grad = lambda1 / n;
  const std::size_t h = model.latent_dim();
  Matrix dpre(batch.rows(), h);
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    auto pi = pre.row(i);
    auto di = dpre.row(i);
    auto ei = err.row(i);
    for (std::size_t c = 0; c < h; ++c)
      if (pi[c] > 0.0) di[c] = dot(ei, model.decoder.row(c)) + l1_grad;
  }
  g.encoder = matmul_tn(dpre, batch).transposed();
  return {rep, std::move(g)};
}

SaeLossReport sae_loss(const SaeModel& model, const Matrix& batch, double lambda1) {
  check_width(model, batch.cols(), "sae_loss");
  if (batch.rows() == 0) throw Error(ErrorKind::InvalidArgument, "sae_loss: empty batch");
  const double n = static_cast<double>(batch.rows());
  Matrix z = encode(model, batch);
  Matrix recon = matmul(z, model.decoder);
  SaeLossReport rep;
  double sq = 0.0;
  auto r = recon.data();
  auto x = batch.data();
  for (std::size_t i = 0; i < r.size(); ++i) sq += (r[i] - x[i]) * (r[i] - x[i]);
  double l1 = 0.0;
  std::size_t active = 0;
  for (double v : z.data()) {
    l1 += v;
    active += v > 0.0 ? 1 : 0;
  }
  rep.recon_l2 = sq / n;
  rep.sparsity_l1 = l1 / n;
  rep.total = rep.recon_l2 + lambda1 * rep.sparsity_l1;
  rep.mean_active = static_cast<double>(active) / n;
  return rep;
}

SaeGradients sae_grad(const SaeModel& model, const Matrix& batch, double lambda1) {
  return sae_loss_and_grad(model, batch, lambda1).second;
}

ResampleResult resample_dead_neurons(const SaeModel& model, const Matrix& features, const SaeAdam& adam,
                                     RngSeed seed) {
  check_width(model, features.cols(), "resample_dead_neurons");
  const std::size_t h = model.latent_dim();
  const std::size_t d = model.input_dim();
  ResampleResult out{model, adam, {}};

  std::vector<bool> alive(h, false);
  std::vector<double> sq_err(features.rows(), 0.0);
  for (std::size_t start = 0; start < features.rows(); start += kSweepChunk) {
    const std::size_t stop = std::min(features.rows(), start + kSweepChunk);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    Matrix chunk = features.select_rows(idx);
    Matrix z = encode(model, chunk);
    Matrix recon = matmul(z, model.decoder);
    for (std::size_t i = 0; i < chunk.rows(); ++i) {
      auto zi = z.row(i);
      for (std::size_t c = 0; c < h; ++c)
        if (zi[c] > 0.0) alive[c] = true;
      sq_err[start + i] = squared_distance(recon.row(i), chunk.row(i));
    }
  }

  std::vector<std::size_t> dead;
  for (std::size_t c = 0; c < h; ++c)
    if (!alive[c]) dead.push_back(c);
  if (dead.empty()) return out;

  auto column_norm = [&](std::size_t c) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += model.encoder(i, c) * model.encoder(i, c);
    return std::sqrt(s);
  };
  double live_norm = 0.0;
  std::size_t live_count = 0;
  for (std::size_t c = 0; c < h; ++c) {
    if (alive[c]) {
      live_norm += column_norm(c);
      ++live_count;
    }
  }
  live_norm = live_count > 0 ? live_norm / static_cast<double>(live_count) : 1.0;
  const double scale = 0.2 * live_norm;

  Rng rng(seed);
  for (std::size_t c : dead) {
    const std::size_t pick = rng.weighted(sq_err);
    auto sample = features.row(pick);
    const double n = norm2(sample);
    if (n == 0.0) continue;
    for (std::size_t i = 0; i < d; ++i) {
      const double u = sample[i] / n;
      out.model.encoder(i, c) = u * scale;
      out.model.decoder(c, i) = u;
      out.adam.encoder.m(i, c) = 0.0;
      out.adam.encoder.v(i, c) = 0.0;
      out.adam.decoder.m(c, i) = 0.0;
      out.adam.decoder.v(c, i) = 0.0;
    }
    out.resampled.push_back(c);
  }
  return out;
}

TrainResult train_sae(const Matrix& features, const SaeConfig& config) {
  config.validate();
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  if (n == 0 || d == 0) throw Error(ErrorKind::InvalidArgument, "train_sae: empty dataset");
  if (n < config.batch_size) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("train_sae: {} samples is fewer than batch_size {}", n, config.batch_size));
  }
  if (!features.all_finite()) throw Error(ErrorKind::NonFinite, "train_sae: non-finite feature value");

  const std::size_t h = d * config.expansion_factor;
  TrainResult res;
  res.model = init_sae(d, h, derive_seed(config.seed, "sae/init"));
  if (config.unit_norm_decoder) normalize_rows(res.model.decoder);

  const AdamHyper hyper{config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps};
  SaeAdam adam{AdamState::zeros_like(res.model.encoder, hyper), AdamState::zeros_like(res.model.decoder, hyper)};

  Rng shuffler(derive_seed(config.seed, "sae/shuffle"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffler.shuffle(order);
    SaeLossReport acc;
    try {
      for (std::size_t start = 0; start < n; start += config.batch_size) {
        const std::size_t stop = std::min(n, start + config.batch_size);
        std::span<const std::size_t> idx(order.data() + start, stop - start);
        Matrix batch = features.select_rows(idx);
        auto [rep, grad] = sae_loss_and_grad(res.model, batch, config.lambda1);
        const double w = static_cast<double>(idx.size());
        acc.recon_l2 += rep.recon_l2 * w;
        acc.sparsity_l1 += rep.sparsity_l1 * w;
        acc.mean_active += rep.mean_active * w;
        if (config.unit_norm_decoder) remove_parallel_component(grad.decoder, res.model.decoder);
        adam_update(res.model.encoder, grad.encoder, adam.encoder);
        adam_update(res.model.decoder, grad.decoder, adam.decoder);
        if (config.unit_norm_decoder) normalize_rows(res.model.decoder);
      }
    } catch (const Error& e) {
      throw Error(e.kind(), fmt::format("train_sae: epoch {}: {}", epoch, e.what()));
    }
    const double nn = static_cast<double>(n);
    acc.recon_l2 /= nn;
    acc.sparsity_l1 /= nn;
    acc.mean_active /= nn;
    acc.total = acc.recon_l2 + config.lambda1 * acc.sparsity_l1;
    if (!std::isfinite(acc.total)) {
      throw Error(ErrorKind::NonFinite, fmt::format("train_sae: non-finite loss at epoch {}", epoch));
    }
    res.history.push_back(acc);

    if (config.resample_every > 0 && epoch % config.resample_every == 0 && epoch < config.epochs) {
      auto rs = resample_dead_neurons(res.model, features, adam,
                                      derive_seed(config.seed, fmt::format("sae/resample/{}", epoch)));
      res.model = std::move(rs.model);
      adam = std::move(rs.adam);
    }
  }
  return res;
}

}  // namespace dncbm
