#include "starnet/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <thread>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace starnet {

void adam_step(std::vector<Parameter>& params, AdamState& s) {
  if (s.m.empty()) {
    s.m.resize(params.size());
    s.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      s.m[i].assign(static_cast<size_t>(params[i].tensor.numel()), 0.0);
      s.v[i].assign(static_cast<size_t>(params[i].tensor.numel()), 0.0);
    }
  }
  if (s.m.size() != params.size())
    throw std::invalid_argument("adam_step: optimizer state does not match parameter list");
  ++s.step;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& t = params[i].tensor;
    if (s.m[i].size() != static_cast<size_t>(t.numel()))
      throw std::invalid_argument("adam_step: moment shape mismatch at " + params[i].name);
    auto g = t.grad();
    if (g.empty()) continue;  // no gradient this step
    auto d = t.mutable_data();
    for (size_t k = 0; k < d.size(); ++k) {
      s.m[i][k] = s.beta1 * s.m[i][k] + (1.0 - s.beta1) * g[k];
      s.v[i][k] = s.beta2 * s.v[i][k] + (1.0 - s.beta2) * g[k] * g[k];
      double mhat = s.m[i][k] / bc1;
      double vhat = s.v[i][k] / bc2;
      d[k] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
    }
  }
}

double lr_schedule(int epoch, const StageOneConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("lr_schedule: negative epoch");
  return epoch < cfg.decay_epoch ? cfg.lr : cfg.lr * cfg.decay_ratio;
}

namespace {

std::vector<size_t> shuffled_indices(size_t n, std::mt19937_64& rng) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

void zero_grads(std::vector<Parameter>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

}  // namespace

EpochStats train_ae_epoch(Encoder& enc, Decoder& dec, const std::vector<TrainingSample>& data,
                          const StageOneConfig& cfg, int epoch, AdamState& opt,
                          std::mt19937_64& rng) {
  if (data.empty()) throw std::invalid_argument("train_ae_epoch: empty dataset");
  auto t0 = std::chrono::steady_clock::now();
  opt.lr = lr_schedule(epoch, cfg);
  std::vector<Parameter> params = enc.parameters();
  for (auto& p : dec.parameters()) params.push_back(p);

  EpochStats stats;
  auto order = shuffled_indices(data.size(), rng);
  size_t count = 0;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch)) {
    size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch));
    if (end - start < 2) break;  // batch norm needs B >= 2
    std::vector<PointCloud> batch;
    std::vector<const TrainingSample*> samples;
    for (size_t k = start; k < end; ++k) {
      batch.push_back(data[order[k]].cloud);
      samples.push_back(&data[order[k]]);
    }
    const int B = static_cast<int>(batch.size());

    Tensor x = clouds_to_tensor(batch);
    Tensor z = enc.forward(x, Mode::kTrain);
    Tensor recon = dec.forward(z, Mode::kTrain);
    for (double v : recon.data())
      if (!std::isfinite(v))
        throw std::runtime_error("train_ae_epoch: non-finite reconstruction at epoch " +
                                 std::to_string(epoch));
    std::vector<PointCloud> recon_clouds = tensor_to_clouds(recon);

    const int N = recon.shape()[2];
    std::vector<double> seed(static_cast<size_t>(B) * 3 * N, 0.0);
    double batch_loss = 0.0;
    // the per-sample matching problems are independent; solve them on the
    // 4-thread budget shared with the evaluation kernels
    std::vector<ReconLoss> losses(static_cast<size_t>(B));
    {
      std::atomic<int> next{0};
      auto work = [&] {
        int b;
        while ((b = next.fetch_add(1)) < B)
          losses[static_cast<size_t>(b)] =
              recon_loss(recon_clouds[static_cast<size_t>(b)], batch[static_cast<size_t>(b)],
                         cfg.loss_variant);
      };
      std::vector<std::thread> pool;
      for (unsigned w = 1; w < std::min(4u, std::max(1u, std::thread::hardware_concurrency())); ++w)
        pool.emplace_back(work);
      work();
      for (auto& t : pool) t.join();
    }
    for (int b = 0; b < B; ++b) {
      const ReconLoss& rl = losses[static_cast<size_t>(b)];
      if (!std::isfinite(rl.value))
        throw std::runtime_error("train_ae_epoch: NaN loss at epoch " + std::to_string(epoch));
      batch_loss += rl.value;
      stats.mean_cd += rl.cd;
      stats.mean_emd += rl.emd;
      // reporting in de-normalized space: CD scales by s^2, EMD by s
      double s = samples[b]->rec.scale;
      stats.denorm_cd += rl.cd * s * s;
      stats.denorm_emd += rl.emd * s;
      for (int i = 0; i < N; ++i)
        for (int k = 0; k < 3; ++k)
          seed[(static_cast<size_t>(b) * 3 + k) * N + i] = rl.grad_x[static_cast<size_t>(i)][k] / B;
    }
    stats.mean_loss += batch_loss;
    count += static_cast<size_t>(B);

    zero_grads(params);
    backward(recon, Tensor::from(recon.shape(), std::move(seed)));
    adam_step(params, opt);
  }
  if (count > 0) {
    stats.mean_cd /= static_cast<double>(count);
    stats.mean_emd /= static_cast<double>(count);
    stats.mean_loss /= static_cast<double>(count);
    stats.denorm_cd /= static_cast<double>(count);
    stats.denorm_emd /= static_cast<double>(count);
  }
  stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return stats;
}

Tensor gradient_penalty(Discriminator& disc, const Tensor& real, const Tensor& fake,
                        double lambda, std::mt19937_64& rng) {
  if (real.shape() != fake.shape())
    throw std::invalid_argument("gradient_penalty: batch shape mismatch");
  const int B = real.shape()[0];
  const int64_t per = real.numel() / B;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> mix(static_cast<size_t>(real.numel()));
  for (int b = 0; b < B; ++b) {
    double u = uni(rng);
    for (int64_t k = 0; k < per; ++k) {
      int64_t i = b * per + k;
      mix[static_cast<size_t>(i)] = u * real[i] + (1.0 - u) * fake[i];
    }
  }
  Tensor xhat = Tensor::from(real.shape(), std::move(mix), /*requires_grad=*/true);
  Tensor scores = disc.forward(xhat, Mode::kTrain);
  Tensor g = input_gradient_node(sum_all(scores), xhat);        // [B,3,N]
  Tensor sq = sum_axis(sum_axis(mul(g, g), 2), 1);              // [B]
  Tensor norm = sqrt_elem(sq);
  Tensor diff = add_scalar(norm, -1.0);
  return scale(sum_all(mul(diff, diff)), lambda / B);
}

EpochStats train_gan_epoch(Mapper& mapper, Decoder& decoder, Discriminator& disc,
                           const std::vector<TrainingSample>& data, const StageTwoConfig& cfg,
                           GanTrainerState& state, std::mt19937_64& rng) {
  if (!decoder.frozen())
    throw std::runtime_error("train_gan_epoch: decoder must be frozen for stage 2");
  auto t0 = std::chrono::steady_clock::now();
  state.opt_d.lr = cfg.lr;
  state.opt_d.beta1 = cfg.beta1;
  state.opt_d.beta2 = cfg.beta2;
  state.opt_g.lr = cfg.lr;
  state.opt_g.beta1 = cfg.beta1;
  state.opt_g.beta2 = cfg.beta2;

  std::vector<Parameter> d_params = disc.parameters();
  std::vector<Parameter> g_params = mapper.parameters();
  const int latent = mapper.parameters().front().tensor.shape()[0];

  EpochStats stats;
  auto order = shuffled_indices(data.size(), rng);
  int batches = 0;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch)) {
    size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch));
    if (end - start < 2) break;
    std::vector<PointCloud> real_clouds;
    for (size_t k = start; k < end; ++k) real_clouds.push_back(data[order[k]].cloud);
    const int B = static_cast<int>(real_clouds.size());
    Tensor real = clouds_to_tensor(real_clouds);

    // critic update: minimize E[D(fake)] - E[D(real)] + GP
    Tensor w = Tensor::randn({B, latent}, rng);
    Tensor fake;
    {
      NoGradGuard ng;  // generator path contributes no critic gradients
      fake = decoder.forward(mapper.forward(w, Mode::kTrain), Mode::kEval);
    }
    fake = detach(fake);
    zero_grads(d_params);
    Tensor d_fake = disc.forward(fake, Mode::kTrain);
    Tensor d_real = disc.forward(real, Mode::kTrain);
    Tensor gp = gradient_penalty(disc, real, fake, cfg.gp_weight, rng);
    Tensor d_loss =
        add(sub(scale(sum_all(d_fake), 1.0 / B), scale(sum_all(d_real), 1.0 / B)), gp);
    if (!std::isfinite(d_loss.item()))
      throw std::runtime_error("train_gan_epoch: NaN critic loss");
    backward(d_loss);
    adam_step(d_params, state.opt_d);
    ++state.total_d_steps;
    ++state.d_steps_since_g;
    ++stats.d_steps;
    stats.wasserstein +=
        (sum_all(d_real).item() - sum_all(d_fake).item()) / B;
    stats.gp += gp.item();
    ++batches;

    // mapper update after every d_steps_per_g critic updates
    if (state.d_steps_since_g >= cfg.d_steps_per_g) {
      state.d_steps_since_g = 0;
      Tensor w2 = Tensor::randn({B, latent}, rng);
      zero_grads(g_params);
      Tensor fake2 = decoder.forward(mapper.forward(w2, Mode::kTrain), Mode::kEval);
      Tensor g_loss = scale(sum_all(disc.forward(fake2, Mode::kTrain)), -1.0 / B);
      backward(g_loss);
      adam_step(g_params, state.opt_g);
      ++state.total_g_steps;
      ++stats.g_steps;
    }
  }
  if (batches > 0) {
    stats.wasserstein /= batches;
    stats.gp /= batches;
  }
  stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return stats;
}

// ---------------- checkpoints ----------------

namespace {

constexpr char kMagic[4] = {'S', 'T', 'N', 'C'};
constexpr uint16_t kVersion = 1;

template <typename T>
void write_le(std::ostream& os, T v) {
  // host is little-endian on every supported target
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const std::string& path) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw std::runtime_error("checkpoint: " + path + ": truncated file");
  return v;
}

void write_tensor(std::ostream& os, const CheckpointTensor& t) {
  write_le<uint16_t>(os, static_cast<uint16_t>(t.name.size()));
  os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
  write_le<uint8_t>(os, static_cast<uint8_t>(t.shape.size()));
  for (int d : t.shape) write_le<uint32_t>(os, static_cast<uint32_t>(d));
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

CheckpointTensor read_tensor(std::istream& is, const std::string& path) {
  CheckpointTensor t;
  uint16_t name_len = read_le<uint16_t>(is, path);
  t.name.resize(name_len);
  if (!is.read(t.name.data(), name_len))
    throw std::runtime_error("checkpoint: " + path + ": truncated name");
  uint8_t rank = read_le<uint8_t>(is, path);
  int64_t n = 1;
  for (int r = 0; r < rank; ++r) {
    uint32_t d = read_le<uint32_t>(is, path);
    t.shape.push_back(static_cast<int>(d));
    n *= d;
  }
  t.data.resize(static_cast<size_t>(n));
  if (!is.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(float))))
    throw std::runtime_error("checkpoint: " + path + ": truncated tensor data");
  return t;
}

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : params)
    if (t.name == name) return &t;
  return nullptr;
}

std::string Checkpoint::config_value(const std::string& key, const std::string& fallback) const {
  for (const auto& [k, v] : config)
    if (k == key) return v;
  return fallback;
}

CheckpointTensor to_ckpt_tensor(const std::string& name, const Tensor& t) {
  CheckpointTensor ct;
  ct.name = name;
  ct.shape = t.shape();
  ct.data.reserve(static_cast<size_t>(t.numel()));
  for (double v : t.data()) ct.data.push_back(static_cast<float>(v));
  return ct;
}

std::vector<Parameter> from_ckpt_tensors(const std::vector<CheckpointTensor>& ts) {
  std::vector<Parameter> out;
  for (const auto& t : ts) {
    std::vector<double> d(t.data.begin(), t.data.end());
    out.push_back({t.name, Tensor::from(t.shape, std::move(d))});
  }
  return out;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + tmp + " for writing");
    os.write(kMagic, 4);
    write_le<uint16_t>(os, c.version);
    write_le<uint8_t>(os, c.stage);
    write_le<uint32_t>(os, static_cast<uint32_t>(c.params.size()));
    for (const auto& t : c.params) write_tensor(os, t);
    write_le<uint32_t>(os, static_cast<uint32_t>(c.opt_state.size()));
    for (const auto& t : c.opt_state) write_tensor(os, t);
    std::ostringstream cfg;
    for (const auto& [k, v] : c.config) cfg << k << " = " << v << '\n';
    std::string cfg_text = cfg.str();
    write_le<uint32_t>(os, static_cast<uint32_t>(cfg_text.size()));
    os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
    if (!os) throw std::runtime_error("checkpoint: write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: " + path + ": corrupt magic");
  Checkpoint c;
  c.version = read_le<uint16_t>(is, path);
  if (c.version != kVersion)
    throw std::runtime_error("checkpoint: " + path + ": unsupported version " +
                             std::to_string(c.version));
  c.stage = read_le<uint8_t>(is, path);
  uint32_t n_params = read_le<uint32_t>(is, path);
  for (uint32_t i = 0; i < n_params; ++i) c.params.push_back(read_tensor(is, path));
  uint32_t n_opt = read_le<uint32_t>(is, path);
  for (uint32_t i = 0; i < n_opt; ++i) c.opt_state.push_back(read_tensor(is, path));
  uint32_t cfg_len = read_le<uint32_t>(is, path);
  std::string cfg_text(cfg_len, '\0');
  if (!is.read(cfg_text.data(), cfg_len))
    throw std::runtime_error("checkpoint: " + path + ": truncated config");
  std::istringstream ss(cfg_text);
  std::string line;
  while (std::getline(ss, line)) {
    size_t eq = line.find(" = ");
    if (eq != std::string::npos) c.config.emplace_back(line.substr(0, eq), line.substr(eq + 3));
  }
  return c;
}

void snap_to_f32(std::vector<Parameter> params) {
  for (auto& p : params)
    for (auto& v : p.tensor.mutable_data()) v = static_cast<double>(static_cast<float>(v));
}

namespace {

void append_adam(std::vector<CheckpointTensor>& out, const std::string& prefix,
                 const AdamState& opt, const std::vector<Parameter>& params) {
  for (size_t i = 0; i < opt.m.size() && i < params.size(); ++i) {
    CheckpointTensor m, v;
    m.name = prefix + ".m." + params[i].name;
    v.name = prefix + ".v." + params[i].name;
    m.shape = v.shape = params[i].tensor.shape();
    m.data.assign(opt.m[i].begin(), opt.m[i].end());
    v.data.assign(opt.v[i].begin(), opt.v[i].end());
    out.push_back(std::move(m));
    out.push_back(std::move(v));
  }
}

}  // namespace

Checkpoint make_ae_checkpoint(Encoder& enc, Decoder& dec, const AdamState& opt,
                              const std::vector<std::pair<std::string, std::string>>& config) {
  Checkpoint c;
  c.stage = 1;
  std::vector<Parameter> all = enc.state_tensors();
  for (auto& p : dec.state_tensors()) all.push_back(p);
  for (auto& p : all) c.params.push_back(to_ckpt_tensor(p.name, p.tensor));
  // write the f32-quantized values back so the live models reproduce a
  // save -> load -> forward bitwise
  std::vector<Parameter> snapped = from_ckpt_tensors(c.params);
  enc.load_state(snapped);
  dec.load_state(snapped);
  std::vector<Parameter> trainable = enc.parameters();
  for (auto& p : dec.parameters()) trainable.push_back(p);
  append_adam(c.opt_state, "adam", opt, trainable);
  c.config = config;
  c.config.emplace_back("adam.step", std::to_string(opt.step));
  return c;
}

Checkpoint make_gan_checkpoint(Mapper& mapper, Decoder& dec, Discriminator& disc,
                               const GanTrainerState& state,
                               const std::vector<std::pair<std::string, std::string>>& config) {
  Checkpoint c;
  c.stage = 2;
  std::vector<Parameter> all = mapper.state_tensors();
  for (auto& p : dec.state_tensors()) all.push_back(p);
  for (auto& p : disc.state_tensors()) all.push_back(p);
  for (auto& p : all) c.params.push_back(to_ckpt_tensor(p.name, p.tensor));
  std::vector<Parameter> snapped = from_ckpt_tensors(c.params);
  mapper.load_state(snapped);
  dec.load_state(snapped);
  disc.load_state(snapped);
  append_adam(c.opt_state, "adam_d", state.opt_d, disc.parameters());
  append_adam(c.opt_state, "adam_g", state.opt_g, mapper.parameters());
  c.config = config;
  c.config.emplace_back("adam_d.step", std::to_string(state.opt_d.step));
  c.config.emplace_back("adam_g.step", std::to_string(state.opt_g.step));
  return c;
}

}  // namespace starnet
