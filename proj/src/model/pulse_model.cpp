#include <algorithm>
#include <cmath>

#include "pulse/errors.hpp"
#include "pulse/model.hpp"

namespace pulse::model {

using namespace pulse::ad;

void PulseConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(channels, "channels");
  positive(window, "window");
  positive(enc_depth, "enc_depth");
  positive(enc_width, "enc_width");
  positive(enc_kernel, "enc_kernel");
  positive(init_kernel, "init_kernel");
  positive(init_dilation, "init_dilation");
  positive(init_hidden, "init_hidden");
  positive(init_latent, "init_latent");
  positive(dec_layers, "dec_layers");
  positive(dec_hidden, "dec_hidden");
  positive(tv_hidden, "tv_hidden");
  if (tv_dim != 1) throw ConfigError("the time-varying component is one-dimensional (tv_dim = 1)");
  if (tv_segments < 1 || tv_segments > window) throw ConfigError("tv_segments must lie in [1, window]");
  if (pseudo_pairs < 1 || pseudo_pairs > 4) throw ConfigError("pseudo_pairs must lie in [1, 4]");
  if (window < 2) throw ConfigError("window must be at least 2 so that t0 has a valid range");
}

std::size_t PulseConfig::encoder_receptive_field() const {
  std::size_t rf = 1;
  for (std::size_t l = 0; l < enc_depth; ++l) rf += (enc_kernel - 1) * (std::size_t{1} << l);
  return rf;
}

std::size_t PulseConfig::init_receptive_field() const { return 1 + 2 * init_dilation * (init_kernel - 1); }

std::vector<std::string> PulseConfig::warnings() const {
  std::vector<std::string> w;
  if (encoder_receptive_field() > window)
    w.push_back("encoder receptive field (" + std::to_string(encoder_receptive_field()) + ") exceeds window (" +
                std::to_string(window) + ")");
  return w;
}

nlohmann::json PulseConfig::to_json() const {
  return {{"channels", channels},         {"window", window},
          {"enc_depth", enc_depth},       {"enc_width", enc_width},
          {"enc_kernel", enc_kernel},     {"init_kernel", init_kernel},
          {"init_dilation", init_dilation}, {"init_hidden", init_hidden},
          {"init_latent", init_latent},   {"dec_layers", dec_layers},
          {"dec_hidden", dec_hidden},     {"tv_dim", tv_dim},
          {"tv_hidden", tv_hidden},       {"tv_segments", tv_segments},
          {"pseudo_pairs", pseudo_pairs}, {"use_tv_params", use_tv_params},
          {"shared_encoders", shared_encoders}};
}

PulseConfig PulseConfig::from_json(const nlohmann::json& j) {
  PulseConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("channels", c.channels);
  get("window", c.window);
  get("enc_depth", c.enc_depth);
  get("enc_width", c.enc_width);
  get("enc_kernel", c.enc_kernel);
  get("init_kernel", c.init_kernel);
  get("init_dilation", c.init_dilation);
  get("init_hidden", c.init_hidden);
  get("init_latent", c.init_latent);
  get("dec_layers", c.dec_layers);
  get("dec_hidden", c.dec_hidden);
  get("tv_dim", c.tv_dim);
  get("tv_hidden", c.tv_hidden);
  get("tv_segments", c.tv_segments);
  get("pseudo_pairs", c.pseudo_pairs);
  get("use_tv_params", c.use_tv_params);
  get("shared_encoders", c.shared_encoders);
  c.validate();
  return c;
}

PulseModel::PulseModel(const PulseConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  norm_mean_ = Tensor::zeros({config_.channels});
  norm_std_ = Tensor::full({config_.channels}, 1.0);
  init_parameters(seed);
}

Tensor& PulseModel::add_param(const std::string& name, Shape shape, double bound, const Rng& root) {
  Rng rng = root.split(name);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  params_.push_back({name, Tensor::from(std::move(shape), std::move(v), true)});
  return params_.back().tensor;
}

void PulseModel::init_parameters(std::uint64_t seed) {
  const Rng root = Rng(seed).split("init");
  const auto& c = config_;
  const std::size_t D = c.enc_width, M = c.channels, K = c.enc_kernel;
  auto bound = [](std::size_t fan_in) { return std::sqrt(1.0 / static_cast<double>(fan_in)); };

  sys_in_w_ = add_param("sys.in.w", {D, M, 1}, bound(M), root);
  sys_in_b_ = add_param("sys.in.b", {D}, bound(M), root);
  for (std::size_t l = 0; l < c.enc_depth; ++l) {
    const std::string p = "sys.block" + std::to_string(l);
    sys_w_.push_back(add_param(p + ".w", {D, D, K}, bound(D * K), root));
    sys_b_.push_back(add_param(p + ".b", {D}, bound(D * K), root));
  }
  if (c.use_tv_params) {
    tv1_w_ = add_param("tv.conv1.w", {c.tv_hidden, D, 3}, bound(D * 3), root);
    tv1_b_ = add_param("tv.conv1.b", {c.tv_hidden}, bound(D * 3), root);
    tv2_w_ = add_param("tv.conv2.w", {c.tv_dim, c.tv_hidden, 3}, bound(c.tv_hidden * 3), root);
    tv2_b_ = add_param("tv.conv2.b", {c.tv_dim}, bound(c.tv_hidden * 3), root);
  }
  std::size_t x0_dim = D;
  if (!c.shared_encoders) {
    const std::size_t H = c.init_hidden, Ki = c.init_kernel;
    init1_w_ = add_param("init.conv1.w", {H, M, Ki}, bound(M * Ki), root);
    init1_b_ = add_param("init.conv1.b", {H}, bound(M * Ki), root);
    init2_w_ = add_param("init.conv2.w", {c.init_latent, H, Ki}, bound(H * Ki), root);
    init2_b_ = add_param("init.conv2.b", {c.init_latent}, bound(H * Ki), root);
    x0_dim = c.init_latent;
  }
  const std::size_t Hd = c.dec_hidden;
  for (std::size_t l = 0; l < c.dec_layers; ++l) {
    const std::string p = "dec.bridge" + std::to_string(l);
    bridge_w_.push_back(add_param(p + ".w", {Hd, x0_dim}, bound(x0_dim), root));
    bridge_b_.push_back(add_param(p + ".b", {Hd}, bound(x0_dim), root));
  }
  for (std::size_t l = 0; l < c.dec_layers; ++l) {
    const std::string p = "dec.gru" + std::to_string(l);
    const std::size_t in = l == 0 ? c.theta_dim() : Hd;
    GruParams g;
    g.w_ih = add_param(p + ".w_ih", {3 * Hd, in}, bound(Hd), root);
    g.w_hh = add_param(p + ".w_hh", {3 * Hd, Hd}, bound(Hd), root);
    g.b_ih = add_param(p + ".b_ih", {3 * Hd}, bound(Hd), root);
    g.b_hh = add_param(p + ".b_hh", {3 * Hd}, bound(Hd), root);
    gru_.push_back(g);
  }
  out_w_ = add_param("dec.out.w", {M, Hd}, bound(Hd), root);
  out_b_ = add_param("dec.out.b", {M}, bound(Hd), root);
}

std::vector<NamedTensor> PulseModel::parameters() const { return params_; }

std::vector<NamedTensor> PulseModel::buffers() const {
  return {{"norm.mean", norm_mean_}, {"norm.std", norm_std_}};
}

std::size_t PulseModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void PulseModel::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::size_t PulseModel::decoder_input_dim() const { return gru_.front().w_ih.dim(1); }

void PulseModel::set_normalization(std::vector<double> mean, std::vector<double> stddev) {
  if (mean.size() != config_.channels || stddev.size() != config_.channels)
    throw DimensionError("normalization statistics must have one entry per channel");
  for (double s : stddev)
    if (!(s > 0.0) || !std::isfinite(s)) throw ParameterError("normalization scale must be positive");
  auto m = norm_mean_.mutable_data();
  auto s = norm_std_.mutable_data();
  std::copy(mean.begin(), mean.end(), m.begin());
  std::copy(stddev.begin(), stddev.end(), s.begin());
}

void PulseModel::fit_normalization(const Tensor& windows) {
  if (windows.rank() != 3 || windows.dim(2) != config_.channels)
    throw DimensionError("expected windows [N, W, " + std::to_string(config_.channels) + "], got " +
                         shape_str(windows.shape()));
  const std::size_t M = config_.channels;
  const std::size_t rows = windows.numel() / M;
  if (rows == 0) throw DimensionError("cannot fit normalization on an empty set");
  std::vector<double> mean(M, 0.0), var(M, 0.0);
  auto d = windows.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t m = 0; m < M; ++m) mean[m] += d[r * M + m];
  for (auto& v : mean) v /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t m = 0; m < M; ++m) {
      const double e = d[r * M + m] - mean[m];
      var[m] += e * e;
    }
  std::vector<double> sd(M);
  for (std::size_t m = 0; m < M; ++m) {
    sd[m] = std::sqrt(var[m] / static_cast<double>(rows));
    if (!(sd[m] > 1e-12)) sd[m] = 1.0;
  }
  set_normalization(mean, sd);
}

Tensor PulseModel::normalize(const Tensor& windows) const {
  if (windows.rank() != 3 || windows.dim(1) != config_.window || windows.dim(2) != config_.channels)
    throw DimensionError("expected windows [B, " + std::to_string(config_.window) + ", " +
                         std::to_string(config_.channels) + "], got " + shape_str(windows.shape()));
  const std::size_t M = config_.channels;
  std::vector<double> out(windows.values());
  auto m = norm_mean_.data();
  auto s = norm_std_.data();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = (out[k] - m[k % M]) / s[k % M];
  return Tensor::from(windows.shape(), std::move(out));
}

SystemRepresentation PulseModel::f_sys(const Tensor& y) const {
  if (y.rank() != 3 || y.dim(2) != config_.channels)
    throw DimensionError("f_sys expects [B, W, M], got " + shape_str(y.shape()));
  const Tensor x = swap_last_axes(y);
  Tensor h = conv1d(x, sys_in_w_, sys_in_b_, 1);
  for (std::size_t l = 0; l < sys_w_.size(); ++l)
    h = add(h, conv1d(gelu(h), sys_w_[l], sys_b_[l], std::size_t{1} << l));
  SystemRepresentation r;
  r.features = h;
  r.theta = max_pool_time(h);
  Tensor repeated = repeat_time(r.theta, h.dim(2));
  if (config_.use_tv_params) {
    const Tensor mixed = conv1d(gelu(conv1d(h, tv1_w_, tv1_b_, 1)), tv2_w_, tv2_b_, 1);
    r.theta_tv = adaptive_max_pool_assign(mixed, config_.tv_segments);
    r.combined = concat_channels(repeated, r.theta_tv);
  } else {
    r.combined = repeated;
  }
  return r;
}

Tensor PulseModel::f_init_sequence(const Tensor& y) const {
  if (config_.shared_encoders) throw ContractError("f_init is absent when encoders are shared");
  if (y.rank() != 3 || y.dim(2) != config_.channels)
    throw DimensionError("f_init expects [B, W, M], got " + shape_str(y.shape()));
  const Tensor x = swap_last_axes(y);
  const std::size_t d = config_.init_dilation;
  return conv1d(gelu(conv1d(x, init1_w_, init1_b_, d)), init2_w_, init2_b_, d);
}

Tensor PulseModel::f_init(const Tensor& y, std::size_t t0) const {
  if (t0 < 1 || t0 > y.dim(1))
    throw IndexError("t0 = " + std::to_string(t0) + " outside [1, " + std::to_string(y.dim(1)) + "]");
  return select_time(f_init_sequence(y), t0 - 1);
}

Tensor PulseModel::initial_condition(const Tensor& y, const SystemRepresentation& sys, std::size_t t0) const {
  if (t0 < 1 || t0 > y.dim(1))
    throw IndexError("t0 = " + std::to_string(t0) + " outside [1, " + std::to_string(y.dim(1)) + "]");
  if (config_.shared_encoders) return select_time(sys.features, t0 - 1);
  return f_init(y, t0);
}

Tensor PulseModel::decode(const Tensor& x0, const Tensor& theta_seq) const {
  if (theta_seq.rank() != 3 || theta_seq.dim(1) != decoder_input_dim())
    throw DimensionError("decoder expects Theta [B, " + std::to_string(decoder_input_dim()) + ", L], got " +
                         shape_str(theta_seq.shape()));
  if (x0.rank() != 2 || x0.dim(0) != theta_seq.dim(0))
    throw DimensionError("initial condition batch does not match Theta");
  const std::size_t B = theta_seq.dim(0), L = theta_seq.dim(2);
  if (L == 0) return Tensor::zeros({B, 0, config_.channels});
  std::vector<Tensor> hidden;
  for (std::size_t l = 0; l < gru_.size(); ++l) hidden.push_back(linear(x0, bridge_w_[l], bridge_b_[l]));
  std::vector<Tensor> outputs;
  outputs.reserve(L);
  for (std::size_t k = 0; k < L; ++k) {
    try {
      Tensor input = select_time(theta_seq, k);
      for (std::size_t l = 0; l < gru_.size(); ++l) {
        hidden[l] = gru_cell(input, hidden[l], gru_[l]);
        input = hidden[l];
      }
    } catch (const NumericOverflow&) {
      throw NumericOverflow("decoder state is not finite", static_cast<std::ptrdiff_t>(k));
    }
    outputs.push_back(linear(hidden.back(), out_w_, out_b_));
  }
  return stack_steps(outputs);
}

Tensor PulseModel::loss_cross(const Tensor& y_i, const Tensor& y_j) const { return loss_cross(y_i, y_j, y_j); }

Tensor PulseModel::loss_cross(const Tensor& input_i, const Tensor& input_j, const Tensor& target_j) const {
  if (input_i.shape() != input_j.shape() || input_j.shape() != target_j.shape())
    throw DimensionError("cross-reconstruction pair shapes differ: " + shape_str(input_i.shape()) + " vs " +
                         shape_str(input_j.shape()));
  const Tensor yi = normalize(input_i), yj = normalize(input_j), target = normalize(target_j);
  const SystemRepresentation sys = f_sys(yi);
  const Tensor x0 = config_.shared_encoders ? select_time(f_sys(yj).features, 0) : f_init(yj, 1);
  return sequence_mse(decode(x0, sys.combined), target);
}

Tensor PulseModel::loss_pulse(const Tensor& y, const std::vector<std::size_t>& t0_draws) const {
  if (t0_draws.empty()) throw ContractError("loss_pulse needs at least one t0 draw");
  const std::size_t W = config_.window;
  for (auto t0 : t0_draws)
    if (t0 < 1 || t0 > config_.max_t0())
      throw IndexError("t0 = " + std::to_string(t0) + " outside [1, " + std::to_string(config_.max_t0()) + "]");
  const Tensor yn = normalize(y);
  const SystemRepresentation sys = f_sys(yn);
  const Tensor init_seq = config_.shared_encoders ? sys.features : f_init_sequence(yn);
  Tensor total;
  for (auto t0 : t0_draws) {
    const Tensor x0 = select_time(init_seq, t0 - 1);
    const Tensor pred = decode(x0, slice_time(sys.combined, t0, W - t0));
    const Tensor term = sequence_mse(pred, time_window(yn, t0, W - t0));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(t0_draws.size()));
}

Tensor PulseModel::embed(const Tensor& windows, std::size_t batch) const {
  NoTapeScope no_tape;
  const std::size_t N = windows.dim(0), W = windows.dim(1), M = windows.dim(2);
  const std::size_t D = config_.enc_width;
  std::vector<double> out(N * D);
  auto src = windows.data();
  for (std::size_t start = 0; start < N; start += batch) {
    const std::size_t n = std::min(batch, N - start);
    std::vector<double> chunk(src.begin() + start * W * M, src.begin() + (start + n) * W * M);
    const Tensor theta = f_sys(normalize(Tensor::from({n, W, M}, std::move(chunk)))).theta;
    std::copy(theta.data().begin(), theta.data().end(), out.begin() + start * D);
  }
  return Tensor::from({N, D}, std::move(out));
}

Tensor time_window(const Tensor& y, std::size_t start, std::size_t len) {
  if (y.rank() != 3) throw DimensionError("time_window expects [B, T, M]");
  const std::size_t B = y.dim(0), T = y.dim(1), M = y.dim(2);
  if (start + len > T) throw IndexError("time window exceeds sequence length");
  std::vector<double> out(B * len * M);
  auto d = y.data();
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(d.begin() + (b * T + start) * M, len * M, out.begin() + b * len * M);
  return Tensor::from({B, len, M}, std::move(out));
}

}  // namespace pulse::model
