#include "starnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace starnet {

namespace {

Tensor init_bias(int n) { return Tensor::zeros({n}, true); }

void collect(std::vector<Parameter>& out, const std::string& name, const Tensor& t) {
  if (!valid_param_name(name)) throw std::logic_error("bad parameter name: " + name);
  out.push_back({name, t});
}

const Tensor& find_named(const std::vector<Parameter>& in, const std::string& name) {
  for (const auto& p : in)
    if (p.name == name) return p.tensor;
  throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
}

void copy_into(Tensor& dst, const Tensor& src, const std::string& name) {
  if (src.shape() != dst.shape())
    throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': expected " +
                             shape_str(dst.shape()) + ", got " + shape_str(src.shape()));
  auto d = dst.mutable_data();
  auto s = src.data();
  std::copy(s.begin(), s.end(), d.begin());
}

void load_params(std::vector<Parameter> own, const std::vector<Parameter>& in) {
  for (auto& p : own) copy_into(p.tensor, find_named(in, p.name), p.name);
}

void load_stats(RunningStats& st, int c, const std::string& prefix,
                const std::vector<Parameter>& in) {
  const Tensor& m = find_named(in, prefix + ".bn_mean");
  const Tensor& v = find_named(in, prefix + ".bn_var");
  if (m.numel() != c || v.numel() != c)
    throw std::runtime_error("checkpoint: running-stat size mismatch at " + prefix);
  st.mean.assign(m.data().begin(), m.data().end());
  st.var.assign(v.data().begin(), v.data().end());
  st.initialized = true;
}

}  // namespace

Tensor init_weight(int fan_in, int fan_out, std::mt19937_64& rng) {
  double bound = std::sqrt(3.0 / fan_in);
  std::uniform_real_distribution<double> uni(-bound, bound);
  std::vector<double> d(static_cast<size_t>(fan_in) * fan_out);
  for (auto& v : d) v = uni(rng);
  return Tensor::from({fan_in, fan_out}, std::move(d), true);
}

Tensor adain(const Tensor& x, const Tensor& y_s, const Tensor& y_b) {
  if (x.shape().size() != 3) throw std::invalid_argument("adain: expected [B,C,N]");
  const int B = x.shape()[0], C = x.shape()[1], N = x.shape()[2];
  if (y_s.shape() != Shape{B, C} || y_b.shape() != Shape{B, C})
    throw std::invalid_argument("adain: style code must be [B,C]");
  (void)N;
  return instance_affine(x, y_s, y_b);
}

Tensor se_layer(const Tensor& x, const SEParams& p, double slope) {
  const int C = x.shape()[1], N = x.shape()[2];
  if (p.fc1_w.shape()[0] != C || p.fc2_w.shape()[1] != C)
    throw std::invalid_argument("se_layer: channel mismatch");
  Tensor pooled = pool_points(x, PoolKind::kMax);                 // [B,C]
  Tensor h = leaky_relu(affine(pooled, p.fc1_w, p.fc1_b), slope); // [B,C/r]
  Tensor gate = sigmoid_act(affine(h, p.fc2_w, p.fc2_b));         // [B,C]
  return mul(x, expand_axis(gate, 2, N));
}

// ---------------- Encoder ----------------

Encoder::Encoder(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  int cin = 3;
  for (int cout : cfg.enc_widths) {
    ConvBlock b;
    b.w = init_weight(cin, cout, rng);
    b.b = init_bias(cout);
    b.bn_gamma = Tensor::full({cout}, 1.0, true);
    b.bn_beta = Tensor::zeros({cout}, true);
    convs_.push_back(std::move(b));
    cin = cout;
  }
  fc_w_ = init_weight(2 * cin, cfg.latent_dim, rng);
  fc_b_ = init_bias(cfg.latent_dim);
}

Tensor Encoder::forward(const Tensor& x, Mode mode) {
  if (x.shape().size() != 3 || x.shape()[1] != 3)
    throw std::invalid_argument("encoder: expected [B,3,N]");
  Tensor h = x;
  for (auto& blk : convs_) {
    h = pointwise_conv(h, blk.w, blk.b);
    h = batch_norm(h, blk.bn_gamma, blk.bn_beta, blk.bn_stats, mode);
    h = leaky_relu(h, cfg_.leaky_slope);
  }
  Tensor pooled = concat({pool_points(h, PoolKind::kMax), pool_points(h, PoolKind::kAvg)}, 1);
  return affine(pooled, fc_w_, fc_b_);
}

std::vector<Parameter> Encoder::parameters() {
  std::vector<Parameter> out;
  for (size_t i = 0; i < convs_.size(); ++i) {
    std::string p = "enc.conv" + std::to_string(i);
    collect(out, p + ".w", convs_[i].w);
    collect(out, p + ".b", convs_[i].b);
    collect(out, p + ".bn_gamma", convs_[i].bn_gamma);
    collect(out, p + ".bn_beta", convs_[i].bn_beta);
  }
  collect(out, "enc.fc.w", fc_w_);
  collect(out, "enc.fc.b", fc_b_);
  return out;
}

std::vector<Parameter> Encoder::state_tensors() {
  std::vector<Parameter> out = parameters();
  for (size_t i = 0; i < convs_.size(); ++i) {
    auto& st = convs_[i].bn_stats;
    int c = convs_[i].bn_gamma.shape()[0];
    if (!st.initialized) {
      st.mean.assign(c, 0.0);
      st.var.assign(c, 1.0);
      st.initialized = true;
    }
    std::string p = "enc.conv" + std::to_string(i);
    collect(out, p + ".bn_mean", Tensor::from({c}, std::vector<double>(st.mean)));
    collect(out, p + ".bn_var", Tensor::from({c}, std::vector<double>(st.var)));
  }
  return out;
}

void Encoder::load_state(const std::vector<Parameter>& tensors) {
  load_params(parameters(), tensors);
  for (size_t i = 0; i < convs_.size(); ++i)
    load_stats(convs_[i].bn_stats, convs_[i].bn_gamma.shape()[0],
               "enc.conv" + std::to_string(i), tensors);
}

// ---------------- Decoder ----------------

namespace {

// constant decoder input: uniform in the unit cube, or on its z=0 square for
// the surface-input ablation; seeded once and never trained
Tensor make_constant_input(int n, bool surface, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::vector<double> d(static_cast<size_t>(3) * n);
  for (int i = 0; i < n; ++i) {
    d[i] = uni(rng);
    d[n + i] = uni(rng);
    d[2 * n + i] = surface ? 0.0 : uni(rng);
  }
  return Tensor::from({3, n}, std::move(d), false);
}

}  // namespace

Decoder::Decoder(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  if (cfg.mlp_decoder && (cfg.se_off || cfg.surface_input))
    throw std::invalid_argument("decoder: mlp_decoder excludes style ablation flags");
  constant_input_ = make_constant_input(cfg.dec_points, cfg.surface_input, rng);
  if (cfg.mlp_decoder) {
    int cin = 3 + cfg.latent_dim;
    for (int cout : cfg.dec_widths) {
      ConvBlock b;
      b.w = init_weight(cin, cout, rng);
      b.b = init_bias(cout);
      b.bn_gamma = Tensor::full({cout}, 1.0, true);
      b.bn_beta = Tensor::zeros({cout}, true);
      mlp_blocks_.push_back(std::move(b));
      cin = cout;
    }
    head_w_ = init_weight(cin, 3, rng);
    head_b_ = init_bias(3);
    return;
  }
  int cin = 3;
  for (int cout : cfg.dec_widths) {
    DecoderBlock b;
    b.style_w = init_weight(cfg.latent_dim, 2 * cin, rng);
    // style bias: y_s half starts at 1 so the normalized signal passes through
    std::vector<double> sb(static_cast<size_t>(2) * cin, 0.0);
    for (int c = 0; c < cin; ++c) sb[c] = 1.0;
    b.style_b = Tensor::from({2 * cin}, std::move(sb), true);
    b.conv_w = init_weight(cin, cout, rng);
    b.conv_b = init_bias(cout);
    b.bn_gamma = Tensor::full({cout}, 1.0, true);
    b.bn_beta = Tensor::zeros({cout}, true);
    if (!cfg.se_off) {
      if (cout % cfg.se_reduction != 0)
        throw std::invalid_argument("decoder: width not divisible by SE reduction");
      int mid = cout / cfg.se_reduction;
      b.se.fc1_w = init_weight(cout, mid, rng);
      b.se.fc1_b = init_bias(mid);
      b.se.fc2_w = init_weight(mid, cout, rng);
      b.se.fc2_b = init_bias(cout);
    }
    blocks_.push_back(std::move(b));
    cin = cout;
  }
  head_w_ = init_weight(cin, 3, rng);
  head_b_ = init_bias(3);
}

Tensor Decoder::forward_mlp(const Tensor& z, Mode mode) {
  const int B = z.shape()[0], N = cfg_.dec_points;
  Tensor base = expand_axis(constant_input_, 0, B);          // [B,3,N]
  Tensor zt = expand_axis(z, 2, N);                          // [B,latent,N]
  Tensor h = concat({base, zt}, 1);
  for (auto& blk : mlp_blocks_) {
    h = pointwise_conv(h, blk.w, blk.b);
    h = batch_norm(h, blk.bn_gamma, blk.bn_beta, blk.bn_stats, mode);
    h = leaky_relu(h, cfg_.leaky_slope);
  }
  return tanh_act(pointwise_conv(h, head_w_, head_b_));
}

Tensor Decoder::forward(const Tensor& z, Mode mode) {
  if (z.shape().size() != 2 || z.shape()[1] != cfg_.latent_dim)
    throw std::invalid_argument("decoder: expected [B," + std::to_string(cfg_.latent_dim) + "]");
  if (cfg_.mlp_decoder) return forward_mlp(z, mode);
  const int B = z.shape()[0], N = cfg_.dec_points;
  Tensor h = expand_axis(constant_input_, 0, B);  // [B,3,N]
  for (auto& blk : blocks_) {
    const int cin = blk.conv_w.shape()[0];
    Tensor style = affine(z, blk.style_w, blk.style_b);  // [B, 2*Cin]
    Tensor y_s = slice_axis(style, 1, 0, cin);
    Tensor y_b = slice_axis(style, 1, cin, cin);
    h = adain(h, y_s, y_b);
    h = pointwise_conv(h, blk.conv_w, blk.conv_b);
    h = batch_norm(h, blk.bn_gamma, blk.bn_beta, blk.bn_stats, mode);
    if (!cfg_.se_off) h = se_layer(h, blk.se, cfg_.leaky_slope);
    h = leaky_relu(h, cfg_.leaky_slope);
  }
  (void)N;
  return tanh_act(pointwise_conv(h, head_w_, head_b_));
}

std::vector<Parameter> Decoder::parameters() {
  std::vector<Parameter> out;
  if (cfg_.mlp_decoder) {
    for (size_t i = 0; i < mlp_blocks_.size(); ++i) {
      std::string p = "dec.mlp" + std::to_string(i);
      collect(out, p + ".w", mlp_blocks_[i].w);
      collect(out, p + ".b", mlp_blocks_[i].b);
      collect(out, p + ".bn_gamma", mlp_blocks_[i].bn_gamma);
      collect(out, p + ".bn_beta", mlp_blocks_[i].bn_beta);
    }
  } else {
    for (size_t i = 0; i < blocks_.size(); ++i) {
      std::string p = "dec.block" + std::to_string(i);
      collect(out, p + ".style_w", blocks_[i].style_w);
      collect(out, p + ".style_b", blocks_[i].style_b);
      collect(out, p + ".conv_w", blocks_[i].conv_w);
      collect(out, p + ".conv_b", blocks_[i].conv_b);
      collect(out, p + ".bn_gamma", blocks_[i].bn_gamma);
      collect(out, p + ".bn_beta", blocks_[i].bn_beta);
      if (!cfg_.se_off) {
        collect(out, p + ".se_fc1_w", blocks_[i].se.fc1_w);
        collect(out, p + ".se_fc1_b", blocks_[i].se.fc1_b);
        collect(out, p + ".se_fc2_w", blocks_[i].se.fc2_w);
        collect(out, p + ".se_fc2_b", blocks_[i].se.fc2_b);
      }
    }
  }
  collect(out, "dec.head.w", head_w_);
  collect(out, "dec.head.b", head_b_);
  return out;
}

std::vector<Parameter> Decoder::state_tensors() {
  std::vector<Parameter> out = parameters();
  collect(out, "dec.constant_input", constant_input_);
  auto add_stats = [&](const std::string& p, RunningStats& st, int c) {
    if (!st.initialized) {
      st.mean.assign(c, 0.0);
      st.var.assign(c, 1.0);
      st.initialized = true;
    }
    collect(out, p + ".bn_mean", Tensor::from({c}, std::vector<double>(st.mean)));
    collect(out, p + ".bn_var", Tensor::from({c}, std::vector<double>(st.var)));
  };
  if (cfg_.mlp_decoder) {
    for (size_t i = 0; i < mlp_blocks_.size(); ++i)
      add_stats("dec.mlp" + std::to_string(i), mlp_blocks_[i].bn_stats,
                mlp_blocks_[i].bn_gamma.shape()[0]);
  } else {
    for (size_t i = 0; i < blocks_.size(); ++i)
      add_stats("dec.block" + std::to_string(i), blocks_[i].bn_stats,
                blocks_[i].bn_gamma.shape()[0]);
  }
  return out;
}

void Decoder::load_state(const std::vector<Parameter>& tensors) {
  load_params(parameters(), tensors);
  copy_into(constant_input_, find_named(tensors, "dec.constant_input"), "dec.constant_input");
  if (cfg_.mlp_decoder) {
    for (size_t i = 0; i < mlp_blocks_.size(); ++i)
      load_stats(mlp_blocks_[i].bn_stats, mlp_blocks_[i].bn_gamma.shape()[0],
                 "dec.mlp" + std::to_string(i), tensors);
  } else {
    for (size_t i = 0; i < blocks_.size(); ++i)
      load_stats(blocks_[i].bn_stats, blocks_[i].bn_gamma.shape()[0],
                 "dec.block" + std::to_string(i), tensors);
  }
}

void Decoder::freeze() {
  for (auto& p : parameters()) p.tensor.set_requires_grad(false);
  frozen_ = true;
}

// ---------------- Mapper ----------------

Mapper::Mapper(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  for (int i = 0; i < cfg.mapper_layers; ++i) {
    Layer l;
    l.w = init_weight(cfg.latent_dim, cfg.latent_dim, rng);
    l.b = init_bias(cfg.latent_dim);
    l.bn_gamma = Tensor::full({cfg.latent_dim}, 1.0, true);
    l.bn_beta = Tensor::zeros({cfg.latent_dim}, true);
    layers_.push_back(std::move(l));
  }
}

Tensor Mapper::forward(const Tensor& w, Mode mode) {
  if (w.shape().size() != 2 || w.shape()[1] != cfg_.latent_dim)
    throw std::invalid_argument("mapper: expected [B," + std::to_string(cfg_.latent_dim) + "]");
  Tensor h = w;
  for (auto& l : layers_) {
    h = affine(h, l.w, l.b);
    h = batch_norm(h, l.bn_gamma, l.bn_beta, l.bn_stats, mode);
    h = leaky_relu(h, cfg_.leaky_slope);
  }
  return h;
}

std::vector<Parameter> Mapper::parameters() {
  std::vector<Parameter> out;
  for (size_t i = 0; i < layers_.size(); ++i) {
    std::string p = "map.fc" + std::to_string(i);
    collect(out, p + ".w", layers_[i].w);
    collect(out, p + ".b", layers_[i].b);
    collect(out, p + ".bn_gamma", layers_[i].bn_gamma);
    collect(out, p + ".bn_beta", layers_[i].bn_beta);
  }
  return out;
}

std::vector<Parameter> Mapper::state_tensors() {
  std::vector<Parameter> out = parameters();
  for (size_t i = 0; i < layers_.size(); ++i) {
    auto& st = layers_[i].bn_stats;
    int c = cfg_.latent_dim;
    if (!st.initialized) {
      st.mean.assign(c, 0.0);
      st.var.assign(c, 1.0);
      st.initialized = true;
    }
    std::string p = "map.fc" + std::to_string(i);
    collect(out, p + ".bn_mean", Tensor::from({c}, std::vector<double>(st.mean)));
    collect(out, p + ".bn_var", Tensor::from({c}, std::vector<double>(st.var)));
  }
  return out;
}

void Mapper::load_state(const std::vector<Parameter>& tensors) {
  load_params(parameters(), tensors);
  for (size_t i = 0; i < layers_.size(); ++i)
    load_stats(layers_[i].bn_stats, cfg_.latent_dim, "map.fc" + std::to_string(i), tensors);
}

// ---------------- Discriminator ----------------

Discriminator::Discriminator(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  if (cfg.disc_batch_norm)
    throw std::invalid_argument(
        "discriminator: batch norm is unsupported on the gradient-penalty path");
  int cin = 3;
  for (int cout : cfg.disc_widths) {
    ConvBlock b;
    b.w = init_weight(cin, cout, rng);
    b.b = init_bias(cout);
    convs_.push_back(std::move(b));
    cin = cout;
  }
  fc1_w_ = init_weight(cin, cfg.disc_fc, rng);
  fc1_b_ = init_bias(cfg.disc_fc);
  fc2_w_ = init_weight(cfg.disc_fc, 1, rng);
  fc2_b_ = init_bias(1);
}

Tensor Discriminator::forward(const Tensor& x, Mode) {
  if (x.shape().size() != 3 || x.shape()[1] != 3)
    throw std::invalid_argument("discriminator: expected [B,3,N]");
  Tensor h = x;
  for (auto& blk : convs_) {
    h = pointwise_conv(h, blk.w, blk.b);
    h = leaky_relu(h, cfg_.leaky_slope);
  }
  Tensor pooled = pool_points(h, PoolKind::kMax);
  Tensor f = leaky_relu(affine(pooled, fc1_w_, fc1_b_), cfg_.leaky_slope);
  return affine(f, fc2_w_, fc2_b_);  // [B,1]
}

std::vector<Parameter> Discriminator::parameters() {
  std::vector<Parameter> out;
  for (size_t i = 0; i < convs_.size(); ++i) {
    std::string p = "disc.conv" + std::to_string(i);
    collect(out, p + ".w", convs_[i].w);
    collect(out, p + ".b", convs_[i].b);
  }
  collect(out, "disc.fc1.w", fc1_w_);
  collect(out, "disc.fc1.b", fc1_b_);
  collect(out, "disc.fc2.w", fc2_w_);
  collect(out, "disc.fc2.b", fc2_b_);
  return out;
}

std::vector<Parameter> Discriminator::state_tensors() { return parameters(); }

void Discriminator::load_state(const std::vector<Parameter>& tensors) {
  load_params(parameters(), tensors);
}

// ---------------- plumbing ----------------

Tensor clouds_to_tensor(const std::vector<PointCloud>& clouds) {
  if (clouds.empty()) throw std::invalid_argument("clouds_to_tensor: empty batch");
  const int B = static_cast<int>(clouds.size());
  const int N = static_cast<int>(clouds[0].size());
  std::vector<double> d(static_cast<size_t>(B) * 3 * N);
  for (int b = 0; b < B; ++b) {
    if (static_cast<int>(clouds[b].size()) != N)
      throw std::invalid_argument("clouds_to_tensor: ragged batch");
    for (int i = 0; i < N; ++i)
      for (int k = 0; k < 3; ++k)
        d[(static_cast<size_t>(b) * 3 + k) * N + i] = clouds[b][i][k];
  }
  return Tensor::from({B, 3, N}, std::move(d));
}

std::vector<PointCloud> tensor_to_clouds(const Tensor& t) {
  if (t.shape().size() != 3 || t.shape()[1] != 3)
    throw std::invalid_argument("tensor_to_clouds: expected [B,3,N]");
  const int B = t.shape()[0], N = t.shape()[2];
  std::vector<PointCloud> out(B);
  for (int b = 0; b < B; ++b) {
    out[b].points.resize(N);
    for (int i = 0; i < N; ++i)
      for (int k = 0; k < 3; ++k)
        out[b][i][k] = t[(static_cast<int64_t>(b) * 3 + k) * N + i];
  }
  return out;
}

PointCloud generate(const Tensor& w, Mapper& mapper, Decoder& decoder) {
  NoGradGuard ng;
  Tensor z = mapper.forward(w, Mode::kEval);
  Tensor x = decoder.forward(z, Mode::kEval);
  return tensor_to_clouds(x)[0];
}

std::vector<std::vector<double>> interpolate_latent(const std::vector<double>& z_a,
                                                    const std::vector<double>& z_b,
                                                    const std::vector<double>& alphas) {
  if (z_a.size() != z_b.size()) throw std::invalid_argument("interpolate_latent: dim mismatch");
  std::vector<std::vector<double>> out;
  out.reserve(alphas.size());
  for (double a : alphas) {
    std::vector<double> z(z_a.size());
    for (size_t i = 0; i < z.size(); ++i) z[i] = (1.0 - a) * z_a[i] + a * z_b[i];
    out.push_back(std::move(z));
  }
  return out;
}

}  // namespace starnet
