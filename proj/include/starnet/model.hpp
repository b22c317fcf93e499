#pragma once

// The four StarNet networks: PointNet encoder, style-aware decoder
// (per-block affine style transforms + AdaIN + SE gating), mapping network,
// and PointNet critic. All run on the tensor autodiff engine; clouds are
// laid out [B, 3, N].

#include <cstdint>
#include <vector>

#include "starnet/geomdist.hpp"
#include "starnet/tensor.hpp"

namespace starnet {

struct ModelConfig {
  int latent_dim = 128;
  std::vector<int> enc_widths{64, 128, 256, 512};
  std::vector<int> dec_widths{64, 128, 256, 512};
  int dec_points = 2048;     // decoder always emits this many points
  int se_reduction = 4;
  double leaky_slope = 0.2;
  std::vector<int> disc_widths{64, 128, 256, 512};
  int disc_fc = 256;
  int mapper_layers = 4;
  // ablations
  bool mlp_decoder = false;    // plain MLP decoder, z broadcast per point
  bool se_off = false;         // drop SE gating
  bool surface_input = false;  // constant input on a 2D surface instead of the cube
  bool disc_batch_norm = false;  // incompatible with the gradient penalty path
};

// AdaIN per Eq.-style definition: instance-normalize each channel over the
// point axis, then scale/shift by the style code.
Tensor adain(const Tensor& x, const Tensor& y_s, const Tensor& y_b);  // [B,C,N],[B,C],[B,C]

struct SEParams {
  Tensor fc1_w, fc1_b;  // C -> C/r
  Tensor fc2_w, fc2_b;  // C/r -> C
};

Tensor se_layer(const Tensor& x, const SEParams& p, double slope);

struct ConvBlock {
  Tensor w, b;          // [Cin,Cout], [Cout]
  Tensor bn_gamma, bn_beta;
  RunningStats bn_stats;
};

class Encoder {
 public:
  Encoder(const ModelConfig& cfg, std::mt19937_64& rng);

  // [B,3,N] -> [B,latent_dim]; max+avg pooled, concatenated, projected
  Tensor forward(const Tensor& x, Mode mode);

  std::vector<Parameter> parameters();        // trainable
  std::vector<Parameter> state_tensors();     // + BN running stats
  void load_state(const std::vector<Parameter>& tensors);

 private:
  ModelConfig cfg_;
  std::vector<ConvBlock> convs_;
  Tensor fc_w_, fc_b_;
};

struct DecoderBlock {
  Tensor style_w, style_b;  // latent -> y_s ++ y_b (2*Cin)
  Tensor conv_w, conv_b;    // Cin -> Cout
  Tensor bn_gamma, bn_beta;
  RunningStats bn_stats;
  SEParams se;
};

class Decoder {
 public:
  Decoder(const ModelConfig& cfg, std::mt19937_64& rng);

  // [B,latent_dim] -> [B,3,dec_points], coordinates in (-1,1)
  Tensor forward(const Tensor& z, Mode mode);

  std::vector<Parameter> parameters();
  std::vector<Parameter> state_tensors();
  void load_state(const std::vector<Parameter>& tensors);
  Tensor constant_input() const { return constant_input_; }

  void freeze();  // drop requires_grad on every parameter
  bool frozen() const { return frozen_; }

 private:
  Tensor forward_mlp(const Tensor& z, Mode mode);

  ModelConfig cfg_;
  Tensor constant_input_;  // [3, dec_points], fixed at init
  std::vector<DecoderBlock> blocks_;
  std::vector<ConvBlock> mlp_blocks_;  // mlp_decoder ablation path
  Tensor head_w_, head_b_;
  bool frozen_ = false;
};

class Mapper {
 public:
  Mapper(const ModelConfig& cfg, std::mt19937_64& rng);

  // [B,latent_dim] Gaussian prior -> [B,latent_dim] latent codes
  Tensor forward(const Tensor& w, Mode mode);

  std::vector<Parameter> parameters();
  std::vector<Parameter> state_tensors();
  void load_state(const std::vector<Parameter>& tensors);

 private:
  ModelConfig cfg_;
  struct Layer {
    Tensor w, b, bn_gamma, bn_beta;
    RunningStats bn_stats;
  };
  std::vector<Layer> layers_;
};

class Discriminator {
 public:
  Discriminator(const ModelConfig& cfg, std::mt19937_64& rng);

  // [B,3,N] -> [B,1] unbounded critic values. The trunk has no batch norm so
  // the gradient-penalty path stays second-order differentiable.
  Tensor forward(const Tensor& x, Mode mode);

  std::vector<Parameter> parameters();
  std::vector<Parameter> state_tensors();
  void load_state(const std::vector<Parameter>& tensors);

 private:
  ModelConfig cfg_;
  std::vector<ConvBlock> convs_;
  Tensor fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

// --- cloud <-> tensor plumbing ---
Tensor clouds_to_tensor(const std::vector<PointCloud>& clouds);  // [B,3,N]
std::vector<PointCloud> tensor_to_clouds(const Tensor& t);

// decode(map_prior(w)); both nets in eval mode
PointCloud generate(const Tensor& w, Mapper& mapper, Decoder& decoder);

// z(alpha) = (1-alpha) z_a + alpha z_b
std::vector<std::vector<double>> interpolate_latent(const std::vector<double>& z_a,
                                                    const std::vector<double>& z_b,
                                                    const std::vector<double>& alphas);

// fan-in scaled uniform init
Tensor init_weight(int fan_in, int fan_out, std::mt19937_64& rng);

}  // namespace starnet
