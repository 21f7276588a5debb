#include "stcvae/training.hpp"

#include <cmath>
#include <fstream>
#include <random>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "stcvae/errors.hpp"

namespace stcvae {

template <typename S>
PosteriorBatch to_posterior_batch(const Mat<S>& mu, const Mat<S>& log_var, const Mat<S>& z, std::size_t dataset_size) {
  PosteriorBatch b;
  b.mu = mu.template cast<double>();
  b.log_var = log_var.template cast<double>();
  b.z = z.template cast<double>();
  b.dataset_size = dataset_size;
  return b;
}

template <typename S>
StepResult loss_and_gradients(VaeModel<S>& model, const Mat<S>& x, const Mat<S>& noise, LossKind kind,
                              const LossConfig& cfg, std::size_t dataset_size, MarginalNorm norm) {
  std::vector<Mat<S>> enc_trace, dec_trace;
  const Encoded<S> enc = model.encode(x, &enc_trace);
  const Mat<S> z = reparameterize(enc.mu, enc.log_var, noise);
  if (!enc.mu.allFinite() || !enc.log_var.allFinite() || !z.allFinite())
    throw TrainingError("non-finite encoder output");
  const Mat<S> logits = model.decode(z, &dec_trace);

  StepResult r;
  r.recon = bernoulli_loglik(x, logits);

  // d(-recon)/dlogits = (sigmoid(l) - x) / M
  const S inv_m = S(1) / static_cast<S>(x.rows());
  const Mat<S> sig = (S(1) / (S(1) + (-logits.array()).exp())).matrix();
  const Mat<S> d_logits = (sig - x) * inv_m;
  const Mat<S> dz_dec = model.decoder_backward(dec_trace, d_logits);

  const PosteriorBatch batch = to_posterior_batch(enc.mu, enc.log_var, z, dataset_size);
  const ObjectiveGradient pen = evaluate_with_gradient(batch, penalty_objective(kind, cfg), norm);
  r.penalty = pen.value;
  r.objective = r.recon - r.penalty;
  if (!std::isfinite(r.objective)) throw TrainingError("non-finite training objective");

  const Mat<S> dz = dz_dec + pen.d_z.template cast<S>();
  const Mat<S> d_mu = pen.d_mu.template cast<S>() + dz;
  const Mat<S> d_lv = pen.d_log_var.template cast<S>() +
                      (dz.array() * S(0.5) * (S(0.5) * enc.log_var.array()).exp() * noise.array()).matrix();
  model.encoder_backward(enc_trace, d_mu, d_lv);
  return r;
}

template StepResult loss_and_gradients<float>(VaeModel<float>&, const Mat<float>&, const Mat<float>&, LossKind,
                                              const LossConfig&, std::size_t, MarginalNorm);
template StepResult loss_and_gradients<double>(VaeModel<double>&, const Mat<double>&, const Mat<double>&, LossKind,
                                               const LossConfig&, std::size_t, MarginalNorm);
template PosteriorBatch to_posterior_batch<float>(const Mat<float>&, const Mat<float>&, const Mat<float>&, std::size_t);
template PosteriorBatch to_posterior_batch<double>(const Mat<double>&, const Mat<double>&, const Mat<double>&,
                                                   std::size_t);

ElboReport evaluate_elbo(const VaeModel<float>& model, const FactorDataset& ds, std::span<const std::size_t> indices,
                         std::uint64_t noise_seed, std::size_t chunk) {
  if (indices.empty()) throw ModelError("ELBO evaluation needs at least one sample");
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<float> normal;
  const auto n = static_cast<Eigen::Index>(model.spec().latent_dim);
  double recon = 0.0, kl = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const auto part = indices.subspan(start, std::min(chunk, indices.size() - start));
    const Mat<float> x = image_batch(ds, part);
    const auto enc = model.encode(x);
    Mat<float> noise(x.rows(), n);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng);
    const Mat<float> logits = model.decode(reparameterize(enc.mu, enc.log_var, noise));
    const double w = static_cast<double>(part.size());
    recon += w * bernoulli_loglik(x, logits);
    kl += w * analytic_kl(enc.mu, enc.log_var);
  }
  const double total = static_cast<double>(indices.size());
  return {(recon - kl) / total, recon / total, kl / total};
}

Eigen::MatrixXd latent_means(const VaeModel<float>& model, const FactorDataset& ds,
                             std::span<const std::size_t> indices, std::size_t chunk) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(model.spec().latent_dim));
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const auto part = indices.subspan(start, std::min(chunk, indices.size() - start));
    const auto enc = model.encode(image_batch(ds, part));
    out.middleRows(static_cast<Eigen::Index>(start), enc.mu.rows()) = enc.mu.cast<double>();
  }
  return out;
}

GrayImage traversal_strip(const VaeModel<float>& model, std::span<const std::size_t> dims, std::size_t steps,
                          double lo, double hi) {
  const auto& spec = model.spec();
  if (steps < 2) throw ModelError("traversal needs at least two steps");
  for (auto d : dims) {
    if (d >= spec.latent_dim) throw ModelError("traversal dimension " + std::to_string(d) + " out of range");
  }
  const std::size_t th = spec.input.height, tw = spec.input.width, ch = spec.input.channels;
  GrayImage img;
  img.width = steps * tw;
  img.height = dims.size() * th;
  img.pixels.assign(img.width * img.height, 0);

  Mat<float> z = Mat<float>::Zero(static_cast<Eigen::Index>(steps), static_cast<Eigen::Index>(spec.latent_dim));
  for (std::size_t r = 0; r < dims.size(); ++r) {
    z.setZero();
    for (std::size_t s = 0; s < steps; ++s) {
      z(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(dims[r])) =
          static_cast<float>(lo + (hi - lo) * static_cast<double>(s) / static_cast<double>(steps - 1));
    }
    const Mat<float> logits = model.decode(z);
    for (std::size_t s = 0; s < steps; ++s) {
      for (std::size_t y = 0; y < th; ++y) {
        for (std::size_t x = 0; x < tw; ++x) {
          // First channel only; the strip is greyscale.
          const float l = logits(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>((y * tw + x) * ch));
          const float p = 1.0f / (1.0f + std::exp(-l));
          img.pixels[(r * th + y) * img.width + s * tw + x] = static_cast<std::uint8_t>(std::lround(255.0f * p));
        }
      }
    }
  }
  return img;
}

void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw ModelError("cannot write " + path.string());
}

void retain_heap() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace stcvae
