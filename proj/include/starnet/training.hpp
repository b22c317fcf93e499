#pragma once

// Adam, the step LR schedule, both training stages (Stage 1 auto-encoding,
// Stage 2 WGAN-GP with a frozen decoder), and checkpoint persistence.

#include <cstdint>
#include <string>
#include <vector>

#include "starnet/data.hpp"
#include "starnet/geomdist.hpp"
#include "starnet/model.hpp"
#include "starnet/tensor.hpp"

namespace starnet {

struct AdamState {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  int64_t step = 0;
  // per-parameter moments, aligned with the parameter list given to adam_step
  std::vector<std::vector<double>> m, v;
};

// Standard bias-corrected Adam update; reads each parameter's .grad().
void adam_step(std::vector<Parameter>& params, AdamState& s);

struct StageOneConfig {
  double lr = 0.001;
  double beta1 = 0.9, beta2 = 0.99;
  int decay_epoch = 400;
  double decay_ratio = 0.1;
  int batch = 128;
  int epochs = 500;
  LossVariant loss_variant = LossVariant::kBoth;
  uint64_t seed = 0;
};

struct StageTwoConfig {
  double lr = 0.0001;
  double beta1 = 0.5, beta2 = 0.9;
  double gp_weight = 10.0;
  int batch = 64;
  int epochs = 500;
  int d_steps_per_g = 5;
  uint64_t seed = 0;
};

double lr_schedule(int epoch, const StageOneConfig& cfg);

struct EpochStats {
  double mean_cd = 0.0;
  double mean_emd = 0.0;
  double mean_loss = 0.0;        // in normalized space (the optimized one)
  double denorm_cd = 0.0;        // reporting-space values
  double denorm_emd = 0.0;
  double wasserstein = 0.0;      // stage 2: E[D(real)] - E[D(fake)]
  double gp = 0.0;               // stage 2: penalty magnitude
  double seconds = 0.0;
  int d_steps = 0;
  int g_steps = 0;
};

struct TrainingSample {
  PointCloud cloud;              // normalized
  NormalizationRecord rec;       // inverse transform for reporting
};

// One shuffled pass over the dataset: encode, decode, L_recon per the
// variant, backprop, Adam. Aborts with std::runtime_error on NaN loss.
EpochStats train_ae_epoch(Encoder& enc, Decoder& dec, const std::vector<TrainingSample>& data,
                          const StageOneConfig& cfg, int epoch, AdamState& opt,
                          std::mt19937_64& rng);

// lambda * mean_b (||grad_xhat D(xhat)||_2 - 1)^2 with xhat = u*real+(1-u)*fake,
// one uniform u per sample. Differentiable wrt discriminator parameters.
Tensor gradient_penalty(Discriminator& disc, const Tensor& real, const Tensor& fake,
                        double lambda, std::mt19937_64& rng);

struct GanTrainerState {
  AdamState opt_d, opt_g;
  int d_steps_since_g = 0;
  int64_t total_d_steps = 0, total_g_steps = 0;
};

// One pass over the real data: a critic update per batch, a mapper update
// after every d_steps_per_g critic updates. The decoder must be frozen.
EpochStats train_gan_epoch(Mapper& mapper, Decoder& decoder, Discriminator& disc,
                           const std::vector<TrainingSample>& data, const StageTwoConfig& cfg,
                           GanTrainerState& state, std::mt19937_64& rng);

// ---------------- checkpoints ----------------

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  uint16_t version = 1;
  uint8_t stage = 0;  // 1 = auto-encoder, 2 = GAN
  std::vector<CheckpointTensor> params;
  std::vector<CheckpointTensor> opt_state;
  std::vector<std::pair<std::string, std::string>> config;  // key-value snapshot

  const CheckpointTensor* find(const std::string& name) const;
  std::string config_value(const std::string& key, const std::string& fallback = "") const;
};

CheckpointTensor to_ckpt_tensor(const std::string& name, const Tensor& t);
std::vector<Parameter> from_ckpt_tensors(const std::vector<CheckpointTensor>& ts);

// Binary format: magic "STNC", u16 version, u8 stage, u32 param count,
// per tensor {u16 name length, name, u8 rank, u32 dims..., f32 data LE},
// u32 optimizer tensor count + same encoding, u32 config byte length +
// UTF-8 `key = value` lines. Writes are atomic (temp file + rename).
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

// Snaps every model tensor to f32 precision so a saved checkpoint reproduces
// the in-memory forward bitwise, then packages it.
Checkpoint make_ae_checkpoint(Encoder& enc, Decoder& dec, const AdamState& opt,
                              const std::vector<std::pair<std::string, std::string>>& config);
Checkpoint make_gan_checkpoint(Mapper& mapper, Decoder& dec, Discriminator& disc,
                               const GanTrainerState& state,
                               const std::vector<std::pair<std::string, std::string>>& config);

void snap_to_f32(std::vector<Parameter> params);

}  // namespace starnet
