// Command-line front end: dataset synthesis, both training stages,
// reconstruction, generation, latent interpolation, and evaluation.

#include <algorithm>
#include <cstdlib>
#ifdef __GLIBC__
#include <malloc.h>
#endif
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "starnet/data.hpp"
#include "starnet/genmetrics.hpp"
#include "starnet/model.hpp"
#include "starnet/training.hpp"

namespace fs = std::filesystem;
using namespace starnet;

namespace {

// ---------------- run configuration ----------------

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "profile",     "points",     "dec_points",  "latent_dim",   "batch",
      "epochs",      "lr",         "seed",        "loss_variant", "decay_epoch",
      "decay_ratio", "gp_weight",  "d_steps_per_g", "mlp_decoder", "se_off",
      "surface_input"};
  return keys;
}

using KvMap = std::map<std::string, std::string>;

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

KvMap load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open '" + path + "'");
  KvMap kv;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) + " is not 'key = value'");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (!known_keys().count(key))
      throw std::runtime_error("config: unknown key '" + key + "' on line " +
                               std::to_string(lineno));
    kv[key] = value;
  }
  return kv;
}

struct RunConfig {
  KvMap kv;

  std::string str(const std::string& key, const std::string& fallback) const {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : it->second;
  }
  int num(const std::string& key, int fallback) const {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : std::stoi(it->second);
  }
  double real(const std::string& key, double fallback) const {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : std::stod(it->second);
  }
  bool flag(const std::string& key) const {
    std::string v = str(key, "false");
    return v == "true" || v == "1" || v == "yes";
  }
};

// Precedence: --seed flag, config key, STARNET_SEED environment, 0.
uint64_t resolve_seed(const RunConfig& cfg, int64_t flag_seed) {
  if (flag_seed >= 0) return static_cast<uint64_t>(flag_seed);
  if (cfg.kv.count("seed")) return std::stoull(cfg.kv.at("seed"));
  if (const char* env = std::getenv("STARNET_SEED")) return std::stoull(env);
  return 0;
}

RunConfig make_run_config(const std::string& config_path, const std::string& profile_flag,
                          int stage = 1) {
  RunConfig cfg;
  if (!config_path.empty()) cfg.kv = load_config_file(config_path);
  if (!profile_flag.empty()) cfg.kv["profile"] = profile_flag;
  std::string profile = cfg.str("profile", "desk");
  if (profile != "desk" && profile != "paper")
    throw std::runtime_error("config: profile must be 'desk' or 'paper', got '" + profile + "'");
  cfg.kv["profile"] = profile;
  // profile defaults, overridable by explicit keys
  auto def = [&](const std::string& k, const std::string& v) {
    if (!cfg.kv.count(k)) cfg.kv[k] = v;
  };
  if (profile == "paper") {
    def("points", "2048");
    def("batch", stage == 2 ? "64" : "128");
    def("epochs", "500");
  } else {
    def("points", "256");
    def("batch", "16");
    def("epochs", "100");
  }
  def("dec_points", cfg.kv["points"]);
  def("latent_dim", "128");
  return cfg;
}

void print_resolved(const RunConfig& cfg, uint64_t seed) {
  for (const auto& [k, v] : cfg.kv) std::cout << "config." << k << " = " << v << "\n";
  std::cout << "config.resolved_seed = " << seed << "\n";
}

ModelConfig model_config(const RunConfig& cfg) {
  ModelConfig m;
  m.latent_dim = cfg.num("latent_dim", 128);
  m.dec_points = cfg.num("dec_points", cfg.num("points", 256));
  m.mlp_decoder = cfg.flag("mlp_decoder");
  m.se_off = cfg.flag("se_off");
  m.surface_input = cfg.flag("surface_input");
  return m;
}

LossVariant loss_variant(const RunConfig& cfg) {
  std::string v = cfg.str("loss_variant", "both");
  if (v == "both") return LossVariant::kBoth;
  if (v == "cd") return LossVariant::kChamferOnly;
  if (v == "emd") return LossVariant::kEmdOnly;
  throw std::runtime_error("config: loss_variant must be both|cd|emd, got '" + v + "'");
}

// model hyper-parameters stored in every checkpoint so inference commands can
// rebuild the networks without the original config file
std::vector<std::pair<std::string, std::string>> ckpt_config(const RunConfig& cfg, int epoch) {
  return {{"points", cfg.str("points", "256")},
          {"dec_points", cfg.str("dec_points", cfg.str("points", "256"))},
          {"latent_dim", cfg.str("latent_dim", "128")},
          {"mlp_decoder", cfg.flag("mlp_decoder") ? "true" : "false"},
          {"se_off", cfg.flag("se_off") ? "true" : "false"},
          {"surface_input", cfg.flag("surface_input") ? "true" : "false"},
          {"epoch", std::to_string(epoch)}};
}

ModelConfig model_config_from_ckpt(const Checkpoint& c) {
  ModelConfig m;
  m.latent_dim = std::stoi(c.config_value("latent_dim", "128"));
  m.dec_points = std::stoi(c.config_value("dec_points", "2048"));
  m.mlp_decoder = c.config_value("mlp_decoder", "false") == "true";
  m.se_off = c.config_value("se_off", "false") == "true";
  m.surface_input = c.config_value("surface_input", "false") == "true";
  return m;
}

// ---------------- dataset plumbing ----------------

std::vector<TrainingSample> load_split(const std::string& manifest_path, bool train,
                                       size_t points, uint64_t seed) {
  DatasetManifest m = load_manifest(manifest_path);
  fs::path base = fs::path(manifest_path).parent_path();
  std::vector<TrainingSample> out;
  for (const auto& e : m.split(train)) {
    fs::path p = fs::path(e.path).is_absolute() ? fs::path(e.path) : base / e.path;
    PointCloud raw = load_cloud(p.string());
    PointCloud sampled = points > 0 ? sample_points(raw, points, seed ^ out.size()) : raw;
    auto [norm, rec] = normalize_unit_cube(sampled);
    out.push_back({norm, rec});
  }
  if (out.empty()) throw std::runtime_error("dataset: empty split in '" + manifest_path + "'");
  return out;
}

std::vector<PointCloud> load_cloud_dir(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string ext = e.path().extension().string();
    if (ext == ".xyz" || ext == ".pcb" || ext == ".txt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<PointCloud> out;
  for (const auto& f : files) out.push_back(load_cloud(f.string()));
  if (out.empty()) throw std::runtime_error("evaluate: no cloud files in '" + dir + "'");
  return out;
}

// restores Adam moments saved as <prefix>.m.<param> / <prefix>.v.<param>
void load_adam(AdamState& opt, const Checkpoint& c, const std::string& prefix,
               const std::vector<Parameter>& params) {
  opt.m.clear();
  opt.v.clear();
  for (const auto& p : params) {
    const CheckpointTensor* m = c.find(prefix + ".m." + p.name);
    const CheckpointTensor* v = c.find(prefix + ".v." + p.name);
    if (!m || !v) return;  // fresh optimizer when moments are absent
    opt.m.emplace_back(m->data.begin(), m->data.end());
    opt.v.emplace_back(v->data.begin(), v->data.end());
  }
  opt.step = std::stoll(c.config_value(prefix + ".step", "0"));
}

// ---------------- commands ----------------

int cmd_make_synthetic(const std::string& out_dir, const std::string& families_csv,
                       int count_per_family, int points, int64_t seed_flag) {
  RunConfig cfg;
  uint64_t seed = resolve_seed(cfg, seed_flag);
  std::cout << "command = make-synthetic\n";
  print_resolved(cfg, seed);

  std::vector<ShapeFamily> families;
  std::stringstream ss(families_csv);
  std::string name;
  while (std::getline(ss, name, ',')) {
    auto f = shape_family_from_name(trim(name));
    if (!f) throw std::runtime_error("make-synthetic: unknown family '" + trim(name) + "'");
    families.push_back(*f);
  }
  if (families.empty()) throw std::runtime_error("make-synthetic: no families given");

  fs::create_directories(out_dir);
  std::mt19937_64 rng(seed);
  std::vector<ManifestEntry> entries;
  for (ShapeFamily f : families) {
    for (int i = 0; i < count_per_family; ++i) {
      ShapeParams params = random_shape_params(f, rng);
      PointCloud c = synth_shape(f, params, static_cast<size_t>(points), rng());
      std::string fname = shape_family_name(f) + "_" + std::to_string(i) + ".xyz";
      save_cloud((fs::path(out_dir) / fname).string(), c);
      entries.push_back({fname, shape_family_name(f), true});
    }
  }
  DatasetManifest m = split_manifest(entries, seed);
  save_manifest((fs::path(out_dir) / "manifest.tsv").string(), m);
  std::cout << "wrote " << entries.size() << " clouds, manifest: "
            << m.split(true).size() << " train / " << m.split(false).size() << " test\n";
  return 0;
}

int cmd_train_ae(const std::string& manifest, const std::string& config_path,
                 const std::string& out_ckpt, const std::string& resume,
                 const std::string& profile, int64_t seed_flag) {
  RunConfig cfg = make_run_config(config_path, profile);
  uint64_t seed = resolve_seed(cfg, seed_flag);
  std::cout << "command = train-ae\n";
  print_resolved(cfg, seed);

  size_t points = static_cast<size_t>(cfg.num("points", 256));
  auto data = load_split(manifest, true, points, seed);
  std::cout << "train clouds = " << data.size() << "\n";

  ModelConfig mcfg = model_config(cfg);
  std::mt19937_64 init_rng(seed);
  Encoder enc(mcfg, init_rng);
  Decoder dec(mcfg, init_rng);

  StageOneConfig scfg;
  scfg.batch = cfg.num("batch", 16);
  scfg.epochs = cfg.num("epochs", 100);
  scfg.lr = cfg.real("lr", 0.001);
  scfg.decay_epoch = cfg.num("decay_epoch", 400);
  scfg.decay_ratio = cfg.real("decay_ratio", 0.1);
  scfg.loss_variant = loss_variant(cfg);
  scfg.seed = seed;

  AdamState opt;
  opt.lr = scfg.lr;
  int start_epoch = 0;
  if (!resume.empty()) {
    Checkpoint c = load_checkpoint(resume);
    if (c.stage != 1) throw std::runtime_error("train-ae: '" + resume + "' is not a stage-1 checkpoint");
    auto loaded = from_ckpt_tensors(c.params);
    enc.load_state(loaded);
    dec.load_state(loaded);
    std::vector<Parameter> trainable = enc.parameters();
    for (auto& p : dec.parameters()) trainable.push_back(p);
    load_adam(opt, c, "adam", trainable);
    start_epoch = std::stoi(c.config_value("epoch", "-1")) + 1;
    std::cout << "resumed from epoch " << start_epoch - 1 << "\n";
  }

  std::string csv_path = out_ckpt + ".csv";
  std::ofstream csv(csv_path, start_epoch > 0 ? std::ios::app : std::ios::trunc);
  if (!csv) throw std::runtime_error("train-ae: cannot open log '" + csv_path + "'");
  if (start_epoch == 0) csv << "epoch,cd,emd,loss,denorm_cd,denorm_emd,lr,seconds\n";

  std::mt19937_64 train_rng(seed + 1);
  for (int epoch = start_epoch; epoch < scfg.epochs; ++epoch) {
    EpochStats st = train_ae_epoch(enc, dec, data, scfg, epoch, opt, train_rng);
    csv << epoch << ',' << st.mean_cd << ',' << st.mean_emd << ',' << st.mean_loss << ','
        << st.denorm_cd << ',' << st.denorm_emd << ',' << lr_schedule(epoch, scfg) << ','
        << st.seconds << '\n';
    csv.flush();
    // atomic save each epoch: a NaN abort on the next one keeps this file
    Checkpoint c = make_ae_checkpoint(enc, dec, opt, ckpt_config(cfg, epoch));
    save_checkpoint(out_ckpt, c);
    std::cout << "epoch " << epoch << " loss " << st.mean_loss << " cd " << st.mean_cd
              << " emd " << st.mean_emd << " (" << st.seconds << "s)\n";
  }
  std::cout << "checkpoint: " << out_ckpt << "\nlog: " << csv_path << "\n";
  return 0;
}

int cmd_train_gan(const std::string& manifest, const std::string& ae_ckpt_path,
                  const std::string& config_path, const std::string& out_ckpt,
                  const std::string& profile, int64_t seed_flag) {
  RunConfig cfg = make_run_config(config_path, profile, 2);
  uint64_t seed = resolve_seed(cfg, seed_flag);
  std::cout << "command = train-gan\n";
  print_resolved(cfg, seed);

  Checkpoint ae = load_checkpoint(ae_ckpt_path);
  if (ae.stage != 1)
    throw std::runtime_error("train-gan: '" + ae_ckpt_path + "' is not a stage-1 checkpoint");
  ModelConfig mcfg = model_config_from_ckpt(ae);

  std::mt19937_64 init_rng(seed);
  Decoder dec(mcfg, init_rng);
  dec.load_state(from_ckpt_tensors(ae.params));
  dec.freeze();
  Mapper mapper(mcfg, init_rng);
  Discriminator disc(mcfg, init_rng);

  size_t points = static_cast<size_t>(mcfg.dec_points);
  auto data = load_split(manifest, true, points, seed);

  StageTwoConfig scfg;
  scfg.batch = cfg.num("batch", 16);
  scfg.epochs = cfg.num("epochs", 100);
  scfg.lr = cfg.real("lr", 0.0001);
  scfg.gp_weight = cfg.real("gp_weight", 10.0);
  scfg.d_steps_per_g = cfg.num("d_steps_per_g", 5);
  scfg.seed = seed;

  std::string csv_path = out_ckpt + ".csv";
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("train-gan: cannot open log '" + csv_path + "'");
  csv << "epoch,wasserstein,gp,d_steps,g_steps,seconds\n";

  GanTrainerState state;
  std::mt19937_64 train_rng(seed + 2);
  for (int epoch = 0; epoch < scfg.epochs; ++epoch) {
    EpochStats st = train_gan_epoch(mapper, dec, disc, data, scfg, state, train_rng);
    csv << epoch << ',' << st.wasserstein << ',' << st.gp << ',' << st.d_steps << ','
        << st.g_steps << ',' << st.seconds << '\n';
    csv.flush();
    Checkpoint c = make_gan_checkpoint(mapper, dec, disc, state, ckpt_config(cfg, epoch));
    save_checkpoint(out_ckpt, c);
    std::cout << "epoch " << epoch << " wasserstein " << st.wasserstein << " gp " << st.gp
              << " (" << st.seconds << "s)\n";
  }
  std::cout << "checkpoint: " << out_ckpt << "\nlog: " << csv_path << "\n";
  return 0;
}

// shared encode->decode->denormalize path so interpolation endpoints match
// reconstructions bitwise
PointCloud reconstruct_cloud(Encoder& enc, Decoder& dec, const PointCloud& input,
                             size_t sample_n, uint64_t seed) {
  PointCloud sampled = sample_n > 0 ? sample_points(input, sample_n, seed) : input;
  auto [norm, rec] = normalize_unit_cube(sampled);
  Tensor x = clouds_to_tensor({norm});
  NoGradGuard ng;
  Tensor z = enc.forward(x, Mode::kEval);
  Tensor y = dec.forward(z, Mode::kEval);
  return denormalize(tensor_to_clouds(y)[0], rec);
}

int cmd_reconstruct(const std::string& ckpt_path, const std::string& in_path, int sample_n,
                    const std::string& out_path, int64_t seed_flag) {
  RunConfig cfg;
  uint64_t seed = resolve_seed(cfg, seed_flag);
  std::cout << "command = reconstruct\n";
  print_resolved(cfg, seed);

  Checkpoint c = load_checkpoint(ckpt_path);
  if (c.stage != 1)
    throw std::runtime_error("reconstruct: '" + ckpt_path + "' is not a stage-1 checkpoint");
  ModelConfig mcfg = model_config_from_ckpt(c);
  std::mt19937_64 rng(0);
  Encoder enc(mcfg, rng);
  Decoder dec(mcfg, rng);
  auto loaded = from_ckpt_tensors(c.params);
  enc.load_state(loaded);
  dec.load_state(loaded);

  PointCloud input = load_cloud(in_path);
  PointCloud out = reconstruct_cloud(enc, dec, input, static_cast<size_t>(sample_n), seed);
  save_cloud(out_path, out);
  std::cout << "wrote " << out.size() << " points to " << out_path << "\n";
  return 0;
}

int cmd_generate(const std::string& ckpt_path, int count, const std::string& out_dir,
                 int64_t seed_flag) {
  RunConfig cfg;
  uint64_t seed = resolve_seed(cfg, seed_flag);
  std::cout << "command = generate\n";
  print_resolved(cfg, seed);

  Checkpoint c = load_checkpoint(ckpt_path);
  if (c.stage != 2)
    throw std::runtime_error("generate: '" + ckpt_path + "' is not a stage-2 checkpoint");
  ModelConfig mcfg = model_config_from_ckpt(c);
  std::mt19937_64 rng(0);
  Decoder dec(mcfg, rng);
  Mapper mapper(mcfg, rng);
  auto loaded = from_ckpt_tensors(c.params);
  dec.load_state(loaded);
  mapper.load_state(loaded);

  fs::create_directories(out_dir);
  std::mt19937_64 prior(seed);
  for (int i = 0; i < count; ++i) {
    Tensor w = Tensor::randn({1, mcfg.latent_dim}, prior);
    PointCloud cloud = generate(w, mapper, dec);
    char name[32];
    std::snprintf(name, sizeof(name), "gen_%04d.xyz", i);
    save_cloud((fs::path(out_dir) / name).string(), cloud);
  }
  std::cout << "wrote " << count << " clouds to " << out_dir << "\n";
  return 0;
}

int cmd_interpolate(const std::string& ckpt_path, const std::string& source_path,
                    const std::string& target_path, const std::string& alphas_csv,
                    const std::string& out_dir, int64_t seed_flag) {
  RunConfig cfg;
  uint64_t seed = resolve_seed(cfg, seed_flag);
  std::cout << "command = interpolate\n";
  print_resolved(cfg, seed);

  std::vector<double> alphas;
  std::stringstream ss(alphas_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    size_t used = 0;
    double a;
    try {
      a = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw std::runtime_error("interpolate: bad alpha '" + tok + "'");
    }
    if (used != tok.size()) throw std::runtime_error("interpolate: bad alpha '" + tok + "'");
    alphas.push_back(a);
  }
  if (alphas.empty()) throw std::runtime_error("interpolate: empty alpha list");

  Checkpoint c = load_checkpoint(ckpt_path);
  if (c.stage != 1)
    throw std::runtime_error("interpolate: '" + ckpt_path + "' is not a stage-1 checkpoint");
  ModelConfig mcfg = model_config_from_ckpt(c);
  std::mt19937_64 rng(0);
  Encoder enc(mcfg, rng);
  Decoder dec(mcfg, rng);
  auto loaded = from_ckpt_tensors(c.params);
  enc.load_state(loaded);
  dec.load_state(loaded);

  auto [src_norm, src_rec] = normalize_unit_cube(load_cloud(source_path));
  auto [dst_norm, dst_rec] = normalize_unit_cube(load_cloud(target_path));
  NoGradGuard ng;
  Tensor z_src = enc.forward(clouds_to_tensor({src_norm}), Mode::kEval);
  Tensor z_dst = enc.forward(clouds_to_tensor({dst_norm}), Mode::kEval);
  std::vector<double> za(z_src.data().begin(), z_src.data().end());
  std::vector<double> zb(z_dst.data().begin(), z_dst.data().end());

  fs::create_directories(out_dir);
  auto codes = interpolate_latent(za, zb, alphas);
  for (size_t i = 0; i < alphas.size(); ++i) {
    double a = alphas[i];
    Tensor z = Tensor::from({1, mcfg.latent_dim}, codes[i]);
    Tensor y = dec.forward(z, Mode::kEval);
    // the inverse transform interpolates with the latent so the alpha=0/1
    // outputs coincide with the direct reconstructions
    NormalizationRecord rec;
    rec.scale = (1.0 - a) * src_rec.scale + a * dst_rec.scale;
    for (int k = 0; k < 3; ++k)
      rec.center[static_cast<size_t>(k)] = (1.0 - a) * src_rec.center[static_cast<size_t>(k)] +
                                           a * dst_rec.center[static_cast<size_t>(k)];
    PointCloud cloud = denormalize(tensor_to_clouds(y)[0], rec);
    char name[48];
    std::snprintf(name, sizeof(name), "interp_%+.2f.xyz", a);
    save_cloud((fs::path(out_dir) / name).string(), cloud);
  }
  std::cout << "wrote " << alphas.size() << " clouds to " << out_dir << "\n";
  return 0;
}

int cmd_evaluate(const std::string& ref_path, const std::string& gen_dir,
                 const std::string& out_path, int64_t seed_flag) {
  RunConfig cfg;
  uint64_t seed = resolve_seed(cfg, seed_flag);
  std::cout << "command = evaluate\n";
  print_resolved(cfg, seed);

  CloudSet ref, gen;
  ref.label = "ref";
  gen.label = "gen";
  if (fs::is_directory(ref_path)) {
    ref.clouds = load_cloud_dir(ref_path);
  } else {
    DatasetManifest m = load_manifest(ref_path);
    fs::path base = fs::path(ref_path).parent_path();
    for (const auto& e : m.split(false)) {
      fs::path p = fs::path(e.path).is_absolute() ? fs::path(e.path) : base / e.path;
      ref.clouds.push_back(load_cloud(p.string()));
    }
    if (ref.clouds.empty()) throw std::runtime_error("evaluate: manifest has no test entries");
  }
  gen.clouds = load_cloud_dir(gen_dir);

  if (gen.size() > ref.size()) {
    std::cerr << "warning: generated set (" << gen.size() << ") larger than reference ("
              << ref.size() << "); subsampling\n";
    gen.clouds.resize(ref.size());
  } else if (gen.size() < ref.size()) {
    std::cerr << "warning: generated set (" << gen.size() << ") smaller than reference ("
              << ref.size() << "); padding by repetition\n";
    size_t orig = gen.size();
    while (gen.size() < ref.size()) gen.clouds.push_back(gen.clouds[gen.size() % orig]);
  }

  MetricsReport report = evaluate_generation(ref, gen);
  std::string text = report.serialize();
  std::cout << text;
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw std::runtime_error("evaluate: cannot open report '" + out_path + "'");
    f << text;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // keep large tensor buffers on the heap for reuse instead of mmap/munmap
  // round trips; training allocates multi-megabyte activations per op
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"point-cloud auto-encoding and generation pipeline"};
  app.require_subcommand(1);

  // make-synthetic
  std::string ms_out, ms_families = "sphere,box,cylinder,two_lobe";
  int ms_count = 20, ms_points = 256;
  int64_t ms_seed = -1;
  auto* ms = app.add_subcommand("make-synthetic", "synthesize a shape dataset + manifest");
  ms->add_option("--out", ms_out, "output directory")->required();
  ms->add_option("--families", ms_families, "comma-separated family list");
  ms->add_option("--count-per-family", ms_count, "clouds per family");
  ms->add_option("--points", ms_points, "points per cloud");
  ms->add_option("--seed", ms_seed, "random seed");

  // train-ae
  std::string ta_data, ta_config, ta_out, ta_resume, ta_profile;
  int64_t ta_seed = -1;
  auto* ta = app.add_subcommand("train-ae", "stage 1: train the auto-encoder");
  ta->add_option("--data", ta_data, "dataset manifest")->required();
  ta->add_option("--config", ta_config, "key = value config file");
  ta->add_option("--out", ta_out, "output checkpoint path")->required();
  ta->add_option("--resume", ta_resume, "resume from this stage-1 checkpoint");
  ta->add_option("--profile", ta_profile, "desk|paper");
  ta->add_option("--seed", ta_seed, "random seed");

  // train-gan
  std::string tg_data, tg_ae, tg_config, tg_out, tg_profile;
  int64_t tg_seed = -1;
  auto* tg = app.add_subcommand("train-gan", "stage 2: train mapper + critic, frozen decoder");
  tg->add_option("--data", tg_data, "dataset manifest")->required();
  tg->add_option("--ae-checkpoint", tg_ae, "stage-1 checkpoint")->required();
  tg->add_option("--config", tg_config, "key = value config file");
  tg->add_option("--out", tg_out, "output checkpoint path")->required();
  tg->add_option("--profile", tg_profile, "desk|paper");
  tg->add_option("--seed", tg_seed, "random seed");

  // reconstruct
  std::string rc_ckpt, rc_in, rc_out;
  int rc_sample = 0;
  int64_t rc_seed = -1;
  auto* rc = app.add_subcommand("reconstruct", "encode and decode one cloud");
  rc->add_option("--checkpoint", rc_ckpt, "stage-1 checkpoint")->required();
  rc->add_option("--in", rc_in, "input cloud")->required();
  rc->add_option("--sample-n", rc_sample, "sample the input to N points first (0 = keep all)");
  rc->add_option("--out", rc_out, "output cloud path")->required();
  rc->add_option("--seed", rc_seed, "random seed (sampling)");

  // generate
  std::string gn_ckpt, gn_out;
  int gn_count = 10;
  int64_t gn_seed = -1;
  auto* gn = app.add_subcommand("generate", "sample clouds from the trained generator");
  gn->add_option("--checkpoint", gn_ckpt, "stage-2 checkpoint")->required();
  gn->add_option("--count", gn_count, "number of clouds");
  gn->add_option("--out", gn_out, "output directory")->required();
  gn->add_option("--seed", gn_seed, "random seed");

  // interpolate
  std::string ip_ckpt, ip_src, ip_dst, ip_out;
  std::string ip_alphas = "-0.4,-0.2,0.0,0.2,0.4,0.6,0.8,1.0,1.2,1.4";
  int64_t ip_seed = -1;
  auto* ip = app.add_subcommand("interpolate", "decode a latent path between two clouds");
  ip->add_option("--checkpoint", ip_ckpt, "stage-1 checkpoint")->required();
  ip->add_option("--source", ip_src, "source cloud")->required();
  ip->add_option("--target", ip_dst, "target cloud")->required();
  ip->add_option("--alphas", ip_alphas, "comma-separated interpolation weights");
  ip->add_option("--out", ip_out, "output directory")->required();
  ip->add_option("--seed", ip_seed, "random seed");

  // evaluate
  std::string ev_ref, ev_gen, ev_out;
  int64_t ev_seed = -1;
  auto* ev = app.add_subcommand("evaluate", "compare a generated set against a reference");
  ev->add_option("--ref", ev_ref, "reference manifest (test split) or cloud directory")
      ->required();
  ev->add_option("--gen", ev_gen, "generated cloud directory")->required();
  ev->add_option("--out", ev_out, "report output path");
  ev->add_option("--seed", ev_seed, "random seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (ms->parsed()) return cmd_make_synthetic(ms_out, ms_families, ms_count, ms_points, ms_seed);
    if (ta->parsed()) return cmd_train_ae(ta_data, ta_config, ta_out, ta_resume, ta_profile, ta_seed);
    if (tg->parsed()) return cmd_train_gan(tg_data, tg_ae, tg_config, tg_out, tg_profile, tg_seed);
    if (rc->parsed()) return cmd_reconstruct(rc_ckpt, rc_in, rc_sample, rc_out, rc_seed);
    if (gn->parsed()) return cmd_generate(gn_ckpt, gn_count, gn_out, gn_seed);
    if (ip->parsed())
      return cmd_interpolate(ip_ckpt, ip_src, ip_dst, ip_alphas, ip_out, ip_seed);
    if (ev->parsed()) return cmd_evaluate(ev_ref, ev_gen, ev_out, ev_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
