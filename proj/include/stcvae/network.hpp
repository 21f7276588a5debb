#pragma once

// Minimal reverse-mode network substrate: a flat parameter store, dense and
// 4x4/stride-2 convolution layers with hand-written backward passes, and the
// MLP / convolutional VAE encoder-decoder pairs built from them.
//
// Activations are batch-major row-major matrices: one sample per row, images
// flattened height-width-channel.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace stcvae {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Arch { kMlp, kConv };

std::string to_string(Arch arch);
Arch arch_from_string(const std::string& s);

struct ImageShape {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;

  std::size_t pixels() const { return height * width * channels; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

struct ModelSpec {
  Arch arch = Arch::kMlp;
  ImageShape input;
  std::size_t latent_dim = 8;
  std::size_t neuron_num = 100;  // capacity knob
  std::size_t layers = 1;        // hidden-layer repetitions

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Throws ModelError for zero sizes or a conv spec whose input is not 64x64.
void validate(const ModelSpec& spec);

std::size_t parameter_count(const ModelSpec& spec);

template <typename S>
struct ParamStore {
  struct Tensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
  };

  // Packet-aligned so vectorized kernels peel the same way whichever
  // thread's heap the buffers came from.
  using Buffer = std::vector<S, Eigen::aligned_allocator<S>>;

  std::vector<Tensor> tensors;
  Buffer values;
  Buffer grads;
  // Adaptive-moment state, lazily sized on the first step.
  Buffer first_moment;
  Buffer second_moment;
  std::uint64_t step = 0;

  std::size_t add(std::string name, std::vector<std::size_t> shape);
  std::size_t size() const { return values.size(); }
  void zero_grad() { std::fill(grads.begin(), grads.end(), S(0)); }

  Eigen::Map<Mat<S>> value_matrix(std::size_t t, std::size_t rows, std::size_t cols) {
    return {values.data() + tensors[t].offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
  }
  Eigen::Map<const Mat<S>> value_matrix(std::size_t t, std::size_t rows, std::size_t cols) const {
    return {values.data() + tensors[t].offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
  }
  Eigen::Map<Mat<S>> grad_matrix(std::size_t t, std::size_t rows, std::size_t cols) {
    return {grads.data() + tensors[t].offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
  }
};

/// Geometry of a 4x4, stride-2, padding-1 convolution between a "big"
/// image (H x W x big_channels) and a "small" one (H/2 x W/2 x small_channels).
/// A conv maps big -> small, a transposed conv maps small -> big; both use a
/// small_channels x (4*4*big_channels) weight.
struct ConvGeometry {
  std::size_t big_h = 0, big_w = 0, big_c = 0;
  std::size_t small_c = 0;

  static constexpr std::size_t kKernel = 4;
  static constexpr std::size_t kStride = 2;
  static constexpr std::size_t kPad = 1;

  std::size_t small_h() const { return big_h / kStride; }
  std::size_t small_w() const { return big_w / kStride; }
  std::size_t patch() const { return kKernel * kKernel * big_c; }
  std::size_t big_size() const { return big_h * big_w * big_c; }
  std::size_t small_size() const { return small_h() * small_w() * small_c; }
};

template <typename S>
Mat<S> im2col(const S* image, const ConvGeometry& g);
template <typename S>
void col2im(const Mat<S>& cols, const ConvGeometry& g, S* image);

enum class LayerKind { kDense, kReLU, kTanh, kLeakyReLU, kConv, kUpConv };

struct LayerDesc {
  LayerKind kind = LayerKind::kDense;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight = 0;  // tensor index into the store
  std::size_t bias = 0;
  ConvGeometry geom;
};

inline constexpr double kLeakySlope = 0.01;

template <typename S>
class Sequential {
 public:
  void add_dense(ParamStore<S>& store, const std::string& name, std::size_t in, std::size_t out);
  void add_conv(ParamStore<S>& store, const std::string& name, const ConvGeometry& g);
  void add_upconv(ParamStore<S>& store, const std::string& name, const ConvGeometry& g);
  void add_activation(LayerKind kind);

  /// Forward pass; if `trace` is given it receives each layer's input.
  Mat<S> forward(const ParamStore<S>& store, const Mat<S>& x, std::vector<Mat<S>>* trace) const;

  /// Accumulates parameter gradients into store.grads and returns dL/dx.
  Mat<S> backward(ParamStore<S>& store, const std::vector<Mat<S>>& trace, Mat<S> grad_out) const;

  std::size_t input_width() const { return layers_.front().in; }
  std::size_t output_width() const { return layers_.back().out; }
  const std::vector<LayerDesc>& layers() const { return layers_; }

 private:
  std::size_t last_width() const { return layers_.empty() ? 0 : layers_.back().out; }
  std::vector<LayerDesc> layers_;
};

template <typename S>
struct Encoded {
  Mat<S> mu;
  Mat<S> log_var;
};

/// VAE encoder/decoder pair with its parameters.
template <typename S>
class VaeModel {
 public:
  VaeModel(const ModelSpec& spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  ParamStore<S>& params() { return store_; }
  const ParamStore<S>& params() const { return store_; }
  std::size_t param_count() const { return store_.size(); }

  Encoded<S> encode(const Mat<S>& x, std::vector<Mat<S>>* trace = nullptr) const;
  /// Pre-sigmoid logits, one row per latent row.
  Mat<S> decode(const Mat<S>& z, std::vector<Mat<S>>* trace = nullptr) const;

  /// Gradient w.r.t. x is returned but usually ignored.
  Mat<S> encoder_backward(const std::vector<Mat<S>>& trace, const Mat<S>& d_mu, const Mat<S>& d_log_var);
  Mat<S> decoder_backward(const std::vector<Mat<S>>& trace, const Mat<S>& d_logits);

  /// Sign pattern of every ReLU / LeakyReLU input for this batch and noise.
  /// Finite differences are only meaningful between parameter vectors that
  /// share a pattern.
  std::vector<std::uint8_t> kink_pattern(const Mat<S>& x, const Mat<S>& noise) const;

 private:
  ModelSpec spec_;
  ParamStore<S> store_;
  Sequential<S> encoder_;
  Sequential<S> decoder_;
};

/// z = mu + exp(log_var / 2) * noise
template <typename S>
Mat<S> reparameterize(const Mat<S>& mu, const Mat<S>& log_var, const Mat<S>& noise);

/// Bernoulli log-likelihood of x under sigmoid(logits), summed over pixels and
/// averaged over rows.
template <typename S>
double bernoulli_loglik(const Mat<S>& x, const Mat<S>& logits);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One adaptive-moment step using store.grads. Throws TrainingError naming the
/// tensor if any gradient is non-finite; parameters are left untouched then.
template <typename S>
void adam_step(ParamStore<S>& store, double lr, const AdamOptions& opt = {});

struct GradCheckOptions {
  std::size_t coordinates = 200;
  double step = 1e-4;
  double tolerance = 1e-4;
  double floor = 1e-6;  // denominator floor for the relative error
  std::uint64_t seed = 7;
  /// Optional piecewise-smoothness region of a parameter vector. Coordinates
  /// whose +-step leaves the region of the base point are skipped.
  std::function<std::vector<std::uint8_t>(std::span<const double>)> region;
};

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t skipped = 0;  // step crossed a kink
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::vector<std::size_t> failures;

  bool ok() const { return failures.empty(); }
};

/// loss(values, grad) returns the loss at `values` and writes the analytic
/// gradient into `grad` when it is non-empty.
using LossWithGradient = std::function<double(std::span<const double>, std::span<double>)>;

GradCheckReport grad_check(const LossWithGradient& loss, std::span<const double> start,
                           const GradCheckOptions& opt = {});

}  // namespace stcvae
