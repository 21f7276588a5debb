#include "stcvae/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "stcvae/errors.hpp"

namespace stcvae {

std::string to_string(Arch arch) { return arch == Arch::kMlp ? "mlp" : "conv"; }

Arch arch_from_string(const std::string& s) {
  if (s == "mlp") return Arch::kMlp;
  if (s == "conv") return Arch::kConv;
  throw ModelError("unknown architecture '" + s + "' (expected mlp or conv)");
}

void validate(const ModelSpec& spec) {
  if (spec.latent_dim == 0 || spec.neuron_num == 0 || spec.layers == 0) {
    throw ModelError("latent_dim, neuron_num and layers must be positive");
  }
  if (spec.input.pixels() == 0) throw ModelError("input shape has zero size");
  if (spec.arch == Arch::kConv && (spec.input.height != 64 || spec.input.width != 64)) {
    throw ModelError("conv architecture expects 64x64 inputs, got " + std::to_string(spec.input.height) + "x" +
                     std::to_string(spec.input.width));
  }
}

std::size_t parameter_count(const ModelSpec& spec) {
  // Building the store is cheap next to training; keeps one source of truth.
  return VaeModel<float>(spec, 0).param_count();
}

// ---------------------------------------------------------------------------
// ParamStore

template <typename S>
std::size_t ParamStore<S>::add(std::string name, std::vector<std::size_t> shape) {
  std::size_t size = 1;
  for (auto s : shape) size *= s;
  Tensor t{std::move(name), std::move(shape), values.size(), size};
  values.resize(values.size() + size, S(0));
  grads.resize(values.size(), S(0));
  tensors.push_back(std::move(t));
  return tensors.size() - 1;
}

// ---------------------------------------------------------------------------
// im2col / col2im for the 4x4 stride-2 pad-1 geometry.

template <typename S>
Mat<S> im2col(const S* image, const ConvGeometry& g) {
  const std::size_t sh = g.small_h(), sw = g.small_w(), k = ConvGeometry::kKernel;
  Mat<S> cols = Mat<S>::Zero(static_cast<Eigen::Index>(sh * sw), static_cast<Eigen::Index>(g.patch()));
  for (std::size_t oy = 0; oy < sh; ++oy) {
    for (std::size_t ox = 0; ox < sw; ++ox) {
      S* row = cols.data() + (oy * sw + ox) * g.patch();
      for (std::size_t ky = 0; ky < k; ++ky) {
        const long iy = static_cast<long>(oy * ConvGeometry::kStride + ky) - static_cast<long>(ConvGeometry::kPad);
        if (iy < 0 || iy >= static_cast<long>(g.big_h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const long ix = static_cast<long>(ox * ConvGeometry::kStride + kx) - static_cast<long>(ConvGeometry::kPad);
          if (ix < 0 || ix >= static_cast<long>(g.big_w)) continue;
          const S* src = image + (static_cast<std::size_t>(iy) * g.big_w + static_cast<std::size_t>(ix)) * g.big_c;
          std::copy(src, src + g.big_c, row + (ky * k + kx) * g.big_c);
        }
      }
    }
  }
  return cols;
}

template <typename S>
void col2im(const Mat<S>& cols, const ConvGeometry& g, S* image) {
  const std::size_t sh = g.small_h(), sw = g.small_w(), k = ConvGeometry::kKernel;
  std::fill(image, image + g.big_size(), S(0));
  for (std::size_t oy = 0; oy < sh; ++oy) {
    for (std::size_t ox = 0; ox < sw; ++ox) {
      const S* row = cols.data() + (oy * sw + ox) * g.patch();
      for (std::size_t ky = 0; ky < k; ++ky) {
        const long iy = static_cast<long>(oy * ConvGeometry::kStride + ky) - static_cast<long>(ConvGeometry::kPad);
        if (iy < 0 || iy >= static_cast<long>(g.big_h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const long ix = static_cast<long>(ox * ConvGeometry::kStride + kx) - static_cast<long>(ConvGeometry::kPad);
          if (ix < 0 || ix >= static_cast<long>(g.big_w)) continue;
          S* dst = image + (static_cast<std::size_t>(iy) * g.big_w + static_cast<std::size_t>(ix)) * g.big_c;
          const S* src = row + (ky * k + kx) * g.big_c;
          for (std::size_t c = 0; c < g.big_c; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Sequential

template <typename S>
void Sequential<S>::add_dense(ParamStore<S>& store, const std::string& name, std::size_t in, std::size_t out) {
  LayerDesc l;
  l.kind = LayerKind::kDense;
  l.in = in;
  l.out = out;
  l.weight = store.add(name + ".weight", {out, in});
  l.bias = store.add(name + ".bias", {out});
  layers_.push_back(l);
}

template <typename S>
void Sequential<S>::add_conv(ParamStore<S>& store, const std::string& name, const ConvGeometry& g) {
  LayerDesc l;
  l.kind = LayerKind::kConv;
  l.in = g.big_size();
  l.out = g.small_size();
  l.geom = g;
  l.weight = store.add(name + ".weight", {g.small_c, ConvGeometry::kKernel, ConvGeometry::kKernel, g.big_c});
  l.bias = store.add(name + ".bias", {g.small_c});
  layers_.push_back(l);
}

template <typename S>
void Sequential<S>::add_upconv(ParamStore<S>& store, const std::string& name, const ConvGeometry& g) {
  LayerDesc l;
  l.kind = LayerKind::kUpConv;
  l.in = g.small_size();
  l.out = g.big_size();
  l.geom = g;
  l.weight = store.add(name + ".weight", {g.small_c, ConvGeometry::kKernel, ConvGeometry::kKernel, g.big_c});
  l.bias = store.add(name + ".bias", {g.big_c});
  layers_.push_back(l);
}

template <typename S>
void Sequential<S>::add_activation(LayerKind kind) {
  LayerDesc l;
  l.kind = kind;
  l.in = l.out = last_width();
  layers_.push_back(l);
}

template <typename S>
Mat<S> Sequential<S>::forward(const ParamStore<S>& store, const Mat<S>& x, std::vector<Mat<S>>* trace) const {
  if (static_cast<std::size_t>(x.cols()) != input_width()) {
    throw ModelError("input width " + std::to_string(x.cols()) + " does not match layer width " +
                     std::to_string(input_width()));
  }
  if (trace) trace->clear();
  Mat<S> cur = x;
  const auto rows = cur.rows();
  for (const auto& l : layers_) {
    if (trace) trace->push_back(cur);
    switch (l.kind) {
      case LayerKind::kDense: {
        auto w = store.value_matrix(l.weight, l.out, l.in);
        auto b = store.value_matrix(l.bias, 1, l.out);
        Mat<S> y = cur * w.transpose();
        y.rowwise() += b.row(0);
        cur = std::move(y);
        break;
      }
      case LayerKind::kReLU:
        cur = cur.cwiseMax(S(0));
        break;
      case LayerKind::kTanh:
        cur = cur.array().tanh().matrix();
        break;
      case LayerKind::kLeakyReLU:
        cur = cur.unaryExpr([](S v) { return v > S(0) ? v : S(kLeakySlope) * v; });
        break;
      case LayerKind::kConv: {
        const auto& g = l.geom;
        auto w = store.value_matrix(l.weight, g.small_c, g.patch());
        auto b = store.value_matrix(l.bias, 1, g.small_c);
        Mat<S> y(rows, static_cast<Eigen::Index>(l.out));
        for (Eigen::Index r = 0; r < rows; ++r) {
          Mat<S> cols = im2col(cur.row(r).data(), g);
          Mat<S> o = cols * w.transpose();
          o.rowwise() += b.row(0);
          y.row(r) = Eigen::Map<const Mat<S>>(o.data(), 1, o.size());
        }
        cur = std::move(y);
        break;
      }
      case LayerKind::kUpConv: {
        const auto& g = l.geom;
        auto w = store.value_matrix(l.weight, g.small_c, g.patch());
        auto b = store.value_matrix(l.bias, 1, g.big_c);
        Mat<S> y(rows, static_cast<Eigen::Index>(l.out));
        const auto pix = static_cast<Eigen::Index>(g.small_h() * g.small_w());
        const auto big_pix = static_cast<Eigen::Index>(g.big_h * g.big_w);
        for (Eigen::Index r = 0; r < rows; ++r) {
          Eigen::Map<const Mat<S>> xin(cur.row(r).data(), pix, static_cast<Eigen::Index>(g.small_c));
          Mat<S> cols = xin * w;
          col2im(cols, g, y.row(r).data());
          Eigen::Map<Mat<S>> yo(y.row(r).data(), big_pix, static_cast<Eigen::Index>(g.big_c));
          yo.rowwise() += b.row(0);
        }
        cur = std::move(y);
        break;
      }
    }
  }
  return cur;
}

template <typename S>
Mat<S> Sequential<S>::backward(ParamStore<S>& store, const std::vector<Mat<S>>& trace, Mat<S> grad) const {
  if (trace.size() != layers_.size()) throw ModelError("trace does not match the layer stack");
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const auto& l = layers_[i];
    const Mat<S>& x = trace[i];
    const auto rows = x.rows();
    switch (l.kind) {
      case LayerKind::kDense: {
        auto w = store.value_matrix(l.weight, l.out, l.in);
        store.grad_matrix(l.weight, l.out, l.in).noalias() += grad.transpose() * x;
        store.grad_matrix(l.bias, 1, l.out).row(0) += grad.colwise().sum();
        grad = grad * w;
        break;
      }
      case LayerKind::kReLU:
        grad = grad.cwiseProduct(x.unaryExpr([](S v) { return v > S(0) ? S(1) : S(0); }));
        break;
      case LayerKind::kTanh:
        grad = grad.cwiseProduct(x.unaryExpr([](S v) {
          const S t = std::tanh(v);
          return S(1) - t * t;
        }));
        break;
      case LayerKind::kLeakyReLU:
        grad = grad.cwiseProduct(x.unaryExpr([](S v) { return v > S(0) ? S(1) : S(kLeakySlope); }));
        break;
      case LayerKind::kConv: {
        const auto& g = l.geom;
        auto w = store.value_matrix(l.weight, g.small_c, g.patch());
        auto dw = store.grad_matrix(l.weight, g.small_c, g.patch());
        auto db = store.grad_matrix(l.bias, 1, g.small_c);
        const auto pix = static_cast<Eigen::Index>(g.small_h() * g.small_w());
        Mat<S> dx(rows, static_cast<Eigen::Index>(l.in));
        for (Eigen::Index r = 0; r < rows; ++r) {
          Mat<S> cols = im2col(x.row(r).data(), g);
          Eigen::Map<const Mat<S>> dout(grad.row(r).data(), pix, static_cast<Eigen::Index>(g.small_c));
          dw.noalias() += dout.transpose() * cols;
          db.row(0) += dout.colwise().sum();
          Mat<S> dcols = dout * w;
          col2im(dcols, g, dx.row(r).data());
        }
        grad = std::move(dx);
        break;
      }
      case LayerKind::kUpConv: {
        const auto& g = l.geom;
        auto w = store.value_matrix(l.weight, g.small_c, g.patch());
        auto dw = store.grad_matrix(l.weight, g.small_c, g.patch());
        auto db = store.grad_matrix(l.bias, 1, g.big_c);
        const auto pix = static_cast<Eigen::Index>(g.small_h() * g.small_w());
        const auto big_pix = static_cast<Eigen::Index>(g.big_h * g.big_w);
        Mat<S> dx(rows, static_cast<Eigen::Index>(l.in));
        for (Eigen::Index r = 0; r < rows; ++r) {
          Mat<S> dcols = im2col(grad.row(r).data(), g);
          Eigen::Map<const Mat<S>> xin(x.row(r).data(), pix, static_cast<Eigen::Index>(g.small_c));
          dw.noalias() += xin.transpose() * dcols;
          Eigen::Map<const Mat<S>> dout(grad.row(r).data(), big_pix, static_cast<Eigen::Index>(g.big_c));
          db.row(0) += dout.colwise().sum();
          Eigen::Map<Mat<S>> dxin(dx.row(r).data(), pix, static_cast<Eigen::Index>(g.small_c));
          dxin.noalias() = dcols * w.transpose();
        }
        grad = std::move(dx);
        break;
      }
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// VaeModel

namespace {

template <typename S>
void init_uniform(ParamStore<S>& store, std::size_t tensor, double fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  const auto& t = store.tensors[tensor];
  for (std::size_t i = 0; i < t.size; ++i) store.values[t.offset + i] = static_cast<S>(dist(rng));
}

template <typename S>
void init_layers(ParamStore<S>& store, const Sequential<S>& seq, std::mt19937_64& rng) {
  for (const auto& l : seq.layers()) {
    double fan_in = 0.0;
    switch (l.kind) {
      case LayerKind::kDense:
        fan_in = static_cast<double>(l.in);
        break;
      case LayerKind::kConv:
        fan_in = static_cast<double>(l.geom.patch());
        break;
      case LayerKind::kUpConv:
        // Each output pixel sees (kernel/stride)^2 input pixels.
        fan_in = static_cast<double>(l.geom.small_c * 4);
        break;
      default:
        continue;
    }
    init_uniform(store, l.weight, fan_in, rng);
    init_uniform(store, l.bias, fan_in, rng);
  }
}

}  // namespace

template <typename S>
VaeModel<S>::VaeModel(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
  validate(spec);
  const std::size_t n = spec.latent_dim, h = spec.neuron_num;
  if (spec.arch == Arch::kMlp) {
    const std::size_t p = spec.input.pixels();
    encoder_.add_dense(store_, "enc.fc0", p, h);
    encoder_.add_activation(LayerKind::kReLU);
    for (std::size_t i = 1; i <= spec.layers; ++i) {
      encoder_.add_dense(store_, "enc.fc" + std::to_string(i), h, h);
      encoder_.add_activation(LayerKind::kReLU);
    }
    encoder_.add_dense(store_, "enc.head", h, 2 * n);

    decoder_.add_dense(store_, "dec.fc0", n, h);
    decoder_.add_activation(LayerKind::kTanh);
    for (std::size_t i = 1; i <= spec.layers; ++i) {
      decoder_.add_dense(store_, "dec.fc" + std::to_string(i), h, h);
      decoder_.add_activation(LayerKind::kTanh);
    }
    decoder_.add_dense(store_, "dec.out", h, p);
  } else {
    const std::size_t c = spec.input.channels;
    const ConvGeometry g1{64, 64, c, 16}, g2{32, 32, 16, 32}, g3{16, 16, 32, 64};
    encoder_.add_conv(store_, "enc.conv1", g1);
    encoder_.add_activation(LayerKind::kLeakyReLU);
    encoder_.add_conv(store_, "enc.conv2", g2);
    encoder_.add_activation(LayerKind::kLeakyReLU);
    encoder_.add_conv(store_, "enc.conv3", g3);
    encoder_.add_activation(LayerKind::kLeakyReLU);
    std::size_t width = g3.small_size();
    for (std::size_t i = 0; i < spec.layers; ++i) {
      encoder_.add_dense(store_, "enc.fc" + std::to_string(i), width, h);
      encoder_.add_activation(LayerKind::kReLU);
      width = h;
    }
    encoder_.add_dense(store_, "enc.head", width, 2 * n);

    width = n;
    for (std::size_t i = 0; i < spec.layers; ++i) {
      decoder_.add_dense(store_, "dec.fc" + std::to_string(i), width, h);
      decoder_.add_activation(LayerKind::kTanh);
      width = h;
    }
    decoder_.add_dense(store_, "dec.expand", width, g3.small_size());
    decoder_.add_activation(LayerKind::kTanh);
    decoder_.add_upconv(store_, "dec.up1", g3);
    decoder_.add_activation(LayerKind::kLeakyReLU);
    decoder_.add_upconv(store_, "dec.up2", g2);
    decoder_.add_activation(LayerKind::kLeakyReLU);
    decoder_.add_upconv(store_, "dec.up3", g1);
  }
  std::mt19937_64 rng(seed);
  init_layers(store_, encoder_, rng);
  init_layers(store_, decoder_, rng);
}

template <typename S>
std::vector<std::uint8_t> VaeModel<S>::kink_pattern(const Mat<S>& x, const Mat<S>& noise) const {
  std::vector<Mat<S>> enc_trace, dec_trace;
  const Encoded<S> enc = encode(x, &enc_trace);
  decode(reparameterize(enc.mu, enc.log_var, noise), &dec_trace);
  std::vector<std::uint8_t> out;
  auto collect = [&](const Sequential<S>& net, const std::vector<Mat<S>>& trace) {
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
      const LayerKind k = net.layers()[i].kind;
      if (k != LayerKind::kReLU && k != LayerKind::kLeakyReLU) continue;
      for (Eigen::Index j = 0; j < trace[i].size(); ++j) out.push_back(trace[i].data()[j] > S(0) ? 1 : 0);
    }
  };
  collect(encoder_, enc_trace);
  collect(decoder_, dec_trace);
  return out;
}

template <typename S>
Encoded<S> VaeModel<S>::encode(const Mat<S>& x, std::vector<Mat<S>>* trace) const {
  if (static_cast<std::size_t>(x.cols()) != spec_.input.pixels()) {
    throw ModelError("encoder expects " + std::to_string(spec_.input.pixels()) + " pixels per row, got " +
                     std::to_string(x.cols()));
  }
  Mat<S> out = encoder_.forward(store_, x, trace);
  const auto n = static_cast<Eigen::Index>(spec_.latent_dim);
  return {out.leftCols(n), out.rightCols(n)};
}

template <typename S>
Mat<S> VaeModel<S>::decode(const Mat<S>& z, std::vector<Mat<S>>* trace) const {
  if (static_cast<std::size_t>(z.cols()) != spec_.latent_dim) {
    throw ModelError("decoder expects " + std::to_string(spec_.latent_dim) + " latent columns, got " +
                     std::to_string(z.cols()));
  }
  return decoder_.forward(store_, z, trace);
}

template <typename S>
Mat<S> VaeModel<S>::encoder_backward(const std::vector<Mat<S>>& trace, const Mat<S>& d_mu, const Mat<S>& d_log_var) {
  Mat<S> g(d_mu.rows(), d_mu.cols() + d_log_var.cols());
  g << d_mu, d_log_var;
  return encoder_.backward(store_, trace, std::move(g));
}

template <typename S>
Mat<S> VaeModel<S>::decoder_backward(const std::vector<Mat<S>>& trace, const Mat<S>& d_logits) {
  return decoder_.backward(store_, trace, d_logits);
}

// ---------------------------------------------------------------------------

template <typename S>
Mat<S> reparameterize(const Mat<S>& mu, const Mat<S>& log_var, const Mat<S>& noise) {
  if (mu.rows() != log_var.rows() || mu.cols() != log_var.cols() || mu.rows() != noise.rows() ||
      mu.cols() != noise.cols()) {
    throw ModelError("reparameterize: shape mismatch");
  }
  return (mu.array() + (S(0.5) * log_var.array()).exp() * noise.array()).matrix();
}

template <typename S>
double bernoulli_loglik(const Mat<S>& x, const Mat<S>& logits) {
  if (x.rows() != logits.rows() || x.cols() != logits.cols()) {
    throw ModelError("bernoulli_loglik: shape mismatch");
  }
  // x*l - softplus(l), softplus computed without overflow; rows summed in S,
  // rows accumulated in double.
  double acc = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto l = logits.row(r).array();
    const auto softplus = l.cwiseMax(S(0)) + (-l.abs()).exp().log1p();
    acc += static_cast<double>((x.row(r).array() * l - softplus).sum());
  }
  return acc / static_cast<double>(x.rows());
}

template <typename S>
void adam_step(ParamStore<S>& store, double lr, const AdamOptions& opt) {
  for (const auto& t : store.tensors) {
    for (std::size_t i = t.offset; i < t.offset + t.size; ++i) {
      if (!std::isfinite(static_cast<double>(store.grads[i]))) {
        throw TrainingError("non-finite gradient in tensor '" + t.name + "' at element " +
                            std::to_string(i - t.offset) + " (step " + std::to_string(store.step + 1) + ")");
      }
    }
  }
  if (store.first_moment.size() != store.size()) {
    store.first_moment.assign(store.size(), S(0));
    store.second_moment.assign(store.size(), S(0));
  }
  ++store.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(store.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(store.step));
  const S b1 = static_cast<S>(opt.beta1), b2 = static_cast<S>(opt.beta2);
  const S step_size = static_cast<S>(lr / c1);
  const S inv_c2 = static_cast<S>(1.0 / c2);
  const S eps = static_cast<S>(opt.eps);
  for (std::size_t i = 0; i < store.size(); ++i) {
    const S g = store.grads[i];
    store.first_moment[i] = b1 * store.first_moment[i] + (S(1) - b1) * g;
    store.second_moment[i] = b2 * store.second_moment[i] + (S(1) - b2) * g * g;
    store.values[i] -= step_size * store.first_moment[i] / (std::sqrt(store.second_moment[i] * inv_c2) + eps);
  }
}

GradCheckReport grad_check(const LossWithGradient& loss, std::span<const double> start, const GradCheckOptions& opt) {
  std::vector<double> params(start.begin(), start.end());
  std::vector<double> analytic(params.size(), 0.0);
  loss(params, analytic);

  std::vector<std::size_t> coords(params.size());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  std::mt19937_64 rng(opt.seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  coords.resize(std::min(opt.coordinates, coords.size()));
  std::sort(coords.begin(), coords.end());

  GradCheckReport rep;
  const auto base_region = opt.region ? opt.region(params) : std::vector<std::uint8_t>{};
  for (auto i : coords) {
    const double saved = params[i];
    params[i] = saved + opt.step;
    const double up = loss(params, {});
    const bool up_same = !opt.region || opt.region(params) == base_region;
    params[i] = saved - opt.step;
    const double down = loss(params, {});
    const bool down_same = !opt.region || opt.region(params) == base_region;
    params[i] = saved;
    if (!up_same || !down_same) {
      ++rep.skipped;
      continue;
    }
    const double numeric = (up - down) / (2.0 * opt.step);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), opt.floor});
    const double rel = std::abs(numeric - analytic[i]) / denom;
    ++rep.checked;
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_index = i;
    }
    if (!(rel <= opt.tolerance)) rep.failures.push_back(i);
  }
  return rep;
}

#define STCVAE_INSTANTIATE(S)                                                         \
  template struct ParamStore<S>;                                                      \
  template Mat<S> im2col<S>(const S*, const ConvGeometry&);                           \
  template void col2im<S>(const Mat<S>&, const ConvGeometry&, S*);                    \
  template class Sequential<S>;                                                       \
  template class VaeModel<S>;                                                         \
  template Mat<S> reparameterize<S>(const Mat<S>&, const Mat<S>&, const Mat<S>&);     \
  template double bernoulli_loglik<S>(const Mat<S>&, const Mat<S>&);                  \
  template void adam_step<S>(ParamStore<S>&, double, const AdamOptions&);

STCVAE_INSTANTIATE(float)
STCVAE_INSTANTIATE(double)

#undef STCVAE_INSTANTIATE

}  // namespace stcvae
