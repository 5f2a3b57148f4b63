// End-to-end acceptance gates. Each numbered check prints one verdict line;
// the process exits nonzero if any gate fails. Some gates drive the real CLI
// binary, so expect a few minutes of wall time.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "golden_fixtures.hpp"
#include "masm/config.hpp"
#include "masm/errors.hpp"
#include "masm/eval.hpp"
#include "masm/gradcheck.hpp"
#include "masm/io.hpp"
#include "masm/metrics.hpp"
#include "masm/model.hpp"
#include "masm/modality_shift.hpp"
#include "masm/ops.hpp"
#include "masm/rng.hpp"
#include "masm/train.hpp"
#include "masm/volume.hpp"

using namespace masm;
namespace fs = std::filesystem;

namespace {

// Hyperparameters for the learnability gate; the same settings are the
// documented recipe in the README.
constexpr double kLearnLr = 5e-3;
constexpr double kLearnTau = 1.0;
constexpr std::size_t kLearnWarmup = 10;
constexpr std::size_t kLearnSteps = 300;
constexpr std::uint64_t kLearnSeed = 4;

int failures = 0;

void gate(int number, const std::string& name,
          const std::function<std::string()>& body) {
  const auto start = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;
  try {
    detail = body();
  } catch (const std::exception& e) {
    ok = false;
    detail = e.what();
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  std::printf("[%s] %d. %s: %s (%.1fs)\n", ok ? "PASS" : "FAIL", number,
              name.c_str(), detail.c_str(), secs);
  std::fflush(stdout);
  if (!ok) ++failures;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "masm_acceptance";
  fs::create_directories(dir);
  return dir;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = scratch_dir() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(MASM_CLI_PATH) + " " + args + " > " +
                          log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (status == -1 || !WIFEXITED(status)) return -1;
  return WEXITSTATUS(status);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// ---- gate 1: finite-difference gradient suite through the CLI ----

std::string check_gradients() {
  const fs::path log = scratch_dir() / "gradcheck.log";
  const auto start = std::chrono::steady_clock::now();
  const int code = run_cli("gradcheck --tol 1e-3", log);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  require(code == 0, "gradcheck exited with code " + std::to_string(code) +
                         ", see " + log.string());
  require(secs < 600.0, "gradcheck took " + fmt(secs) + "s, over 10 minutes");
  return "all parameter groups < 1e-3 on all four toggle configs";
}

// ---- gate 2: shift algebra ----

void check_roundtrip(std::size_t n, Rng& rng) {
  const std::size_t d = 3;
  const ShiftPattern pattern = build_pattern(n);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      require(pattern.source[i][k] != 3 - i,
              "pattern sources a clinical partner");
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    std::array<bool, 4> seen = {false, false, false, false};
    for (std::size_t i = 0; i < 4; ++i) seen[pattern.source[i][k]] = true;
    require(seen[0] && seen[1] && seen[2] && seen[3],
            "pattern column is not a permutation");
  }
  std::array<Tensor, 4> feats;
  for (auto& f : feats) {
    std::vector<double> v(n * d);
    for (auto& x : v) x = rng.next_uniform(-100.0, 100.0);
    f = Tensor::from({n, d}, v);
  }
  const std::array<Tensor, 4> mixed = shift(feats, pattern);
  const std::array<Tensor, 4> back = unshift(mixed, pattern);
  for (std::size_t i = 0; i < 4; ++i) {
    require(back[i].values() == feats[i].values(),
            "unshift(shift(x)) differs from x");
  }
}

std::string check_shift_algebra() {
  Rng rng(2024);
  for (std::size_t n = 1; n <= 81; ++n) check_roundtrip(n, rng);
  for (std::size_t t = 0; t < 1000; ++t) {
    check_roundtrip(1 + rng.next_below(200), rng);
  }
  return "bit-exact round trip on N=1..81 and 1000 random inputs";
}

// ---- gate 3: patterns carry no parameters; module size ordering ----

std::string check_parameter_freeness() {
  // A mosaic pattern and the identity pattern drive the same parameter set;
  // only the data routing differs.
  const std::size_t n = 27, d = 8;
  Rng rng(31337);
  std::array<Tensor, 4> feats;
  for (auto& f : feats) {
    std::vector<double> v(n * d);
    for (auto& x : v) x = rng.next_uniform(-1.0, 1.0);
    f = Tensor::from({n, d}, v);
  }
  auto make_mha = [&](std::uint64_t salt) {
    auto mat = [&](std::size_t rows, std::size_t cols) {
      std::vector<double> v(rows * cols);
      Rng r(salt++);
      for (auto& x : v) x = r.next_uniform(-0.3, 0.3);
      return Tensor::from({rows, cols}, v);
    };
    MhaParams p{Tensor::full({d}, 1.0), Tensor::zeros({d}),
                mat(d, d), mat(d, d), mat(d, d), mat(d, d), 2};
    return p;
  };
  const MhaParams spatial = make_mha(7);
  const MhaParams modal = make_mha(8);
  ShiftPattern identity;
  identity.positions = n;
  for (std::size_t i = 0; i < 4; ++i) {
    identity.source[i].assign(n, static_cast<std::uint8_t>(i));
  }
  const Tensor with_identity =
      modality_shift_forward(feats, spatial, modal, identity);
  const Tensor with_mosaic =
      modality_shift_forward(feats, spatial, modal, build_pattern(n));
  require(with_identity.shape() == with_mosaic.shape(),
          "pattern changed the output shape");
  require(with_identity.values() != with_mosaic.values(),
          "mosaic pattern did not change the routing");

  // Module cost ordering at the published network width.
  BackboneConfig paper;
  paper.volume = 128;
  paper.depth = 6;
  paper.channels = {96, 128, 192, 256, 384, 512};
  paper.heads = 4;
  const std::size_t base = parameter_count(paper, {false, false});
  const std::size_t aware_inc = parameter_count(paper, {true, false}) - base;
  const std::size_t shift_inc = parameter_count(paper, {false, true}) - base;
  require(aware_inc > shift_inc,
          "pair-fusion increment not larger than mosaic-fusion increment");
  return "identical parameters for identity vs mosaic; pair fusion adds " +
         std::to_string(aware_inc) + " > mosaic fusion adds " +
         std::to_string(shift_inc) + " at full width";
}

// ---- gate 4: gate sampling behavior ----

std::string check_gumbel() {
  Rng rng(99);
  const Tensor logits = Tensor::zeros({1, 2});
  std::size_t first = 0;
  const std::size_t draws = 10000;
  for (std::size_t t = 0; t < draws; ++t) {
    const Tensor sample = gumbel_softmax(logits, 1.0, true, rng);
    const double a = sample.value_at(0), b = sample.value_at(1);
    require((a == 0.0 || a == 1.0) && (b == 0.0 || b == 1.0) && a + b == 1.0,
            "hard sample is not one-hot");
    if (a == 1.0) ++first;
  }
  const double freq = double(first) / double(draws);
  require(0.47 <= freq && freq <= 0.53,
          "symmetric-logit frequency " + fmt(freq) + " outside [0.47, 0.53]");

  // Deterministic inference: same mask twice, no randomness consumed.
  MaskPredictorParams predictor;
  Rng init(4);
  auto mat = [&](Shape shape) {
    std::size_t count = 1;
    for (std::size_t e : shape) count *= e;
    std::vector<double> v(count);
    for (auto& x : v) x = init.next_uniform(-0.8, 0.8);
    return Tensor::from(std::move(shape), std::move(v));
  };
  predictor.local_weight = mat({6, 3});
  predictor.local_bias = mat({3});
  predictor.decide_weight = mat({6, 2});
  predictor.decide_bias = mat({2});
  const Tensor feat = mat({9, 6});
  const MaskResult once =
      predict_mask(feat, predictor, 1.0, nullptr, GateMode::kArgmax);
  const MaskResult twice =
      predict_mask(feat, predictor, 1.0, nullptr, GateMode::kArgmax);
  require(once.bits == twice.bits && once.keep.values() == twice.keep.values(),
          "inference masks are not deterministic");
  return "one-hot samples, pick frequency " + fmt(freq) +
         ", inference deterministic";
}

// ---- gate 5: loss and metric oracles ----

double oracle_soft_dice(const std::vector<double>& p,
                        const std::vector<double>& g, std::size_t classes,
                        double eps) {
  const std::size_t per = p.size() / classes;
  double sum = 0.0;
  for (std::size_t k = 0; k < classes; ++k) {
    double inter = 0.0, pp = 0.0, gg = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      const double pv = p[k * per + i], gv = g[k * per + i];
      inter += pv * gv;
      pp += pv * pv;
      gg += gv * gv;
    }
    sum += (2.0 * inter + eps) / (pp + gg + eps);
  }
  return 1.0 - sum / double(classes);
}

double oracle_dice(const std::vector<std::uint8_t>& a,
                   const std::vector<std::uint8_t>& b) {
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    na += a[i];
    nb += b[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(inter) / double(na + nb);
}

double oracle_directed_p95(const std::vector<Voxel>& a,
                           const std::vector<Voxel>& b) {
  std::vector<double> dists;
  for (const Voxel& va : a) {
    double best = 1e300;
    for (const Voxel& vb : b) {
      const double dz = va[0] - vb[0], dy = va[1] - vb[1], dx = va[2] - vb[2];
      best = std::min(best, dz * dz + dy * dy + dx * dx);
    }
    dists.push_back(std::sqrt(best));
  }
  std::sort(dists.begin(), dists.end());
  const std::size_t rank =
      std::size_t(std::ceil(0.95 * double(dists.size())));
  return dists[rank - 1];
}

std::string check_metric_oracles() {
  std::mt19937 gen(555);
  double worst_loss = 0.0;
  for (std::size_t trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<std::size_t> len(1, 40);
    const std::size_t per = len(gen);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> p(3 * per), g(3 * per);
    for (auto& v : p) v = unit(gen);
    for (auto& v : g) v = unit(gen) < 0.4 ? 1.0 : 0.0;
    const LossReport report = soft_dice_loss(Tensor::from({3, per}, p),
                                             Tensor::from({3, per}, g));
    worst_loss = std::max(
        worst_loss, std::abs(report.total - oracle_soft_dice(p, g, 3, 1e-5)));

    std::vector<std::uint8_t> ma(per), mb(per);
    for (auto& v : ma) v = unit(gen) < 0.3;
    for (auto& v : mb) v = unit(gen) < 0.3;
    require(dice_score(ma, mb) == oracle_dice(ma, mb),
            "dice_score differs from the brute-force oracle");

    const std::array<std::size_t, 3> extents = {5, 6, 7};
    std::vector<std::uint8_t> ra(5 * 6 * 7), rb(5 * 6 * 7);
    for (auto& v : ra) v = unit(gen) < 0.1;
    for (auto& v : rb) v = unit(gen) < 0.1;
    const auto va = mask_to_voxels(ra, extents);
    const auto vb = mask_to_voxels(rb, extents);
    const Hd95 got = hd95(va, vb, extents);
    if (va.empty() && vb.empty()) {
      require(got.value == 0.0 && !got.sentinel, "empty-empty hd95 not 0");
    } else if (va.empty() || vb.empty()) {
      require(got.sentinel &&
                  got.value == std::sqrt(5.0 * 5 + 6 * 6 + 7 * 7),
              "one-empty hd95 sentinel wrong");
    } else {
      const double want =
          std::max(oracle_directed_p95(va, vb), oracle_directed_p95(vb, va));
      require(got.value == want && !got.sentinel,
              "hd95 differs from the brute-force oracle");
    }
  }
  require(worst_loss < 1e-10,
          "soft dice loss differs from oracle by " + fmt(worst_loss));

  // Trivial cases.
  std::vector<double> bin = {1, 0, 1, 0, 1, 1};
  const LossReport perfect = soft_dice_loss(Tensor::from({3, 2}, bin),
                                            Tensor::from({3, 2}, bin));
  require(std::abs(perfect.total) < 1e-12, "perfect prediction loss not 0");
  std::vector<std::uint8_t> same = {1, 0, 0, 1};
  require(dice_score(same, same) == 1.0, "identical masks dice not 1");
  const auto voxels =
      mask_to_voxels({1, 0, 0, 0, 0, 0, 0, 1}, {2, 2, 2});
  const Hd95 zero = hd95(voxels, voxels, {2, 2, 2});
  require(zero.value == 0.0 && !zero.sentinel, "identical sets hd95 not 0");
  return "loss within " + fmt(worst_loss) +
         " of oracle; dice and hd95 match exactly on 50 random instances";
}

// ---- gate 6: shape algebra ----

std::string check_shapes() {
  struct Case {
    BackboneConfig cfg;
    Toggles toggles;
  };
  std::vector<Case> cases;
  cases.push_back({{}, {true, true}});  // desk default 32/{16,32,64,128}
  BackboneConfig small;
  small.volume = 16;
  small.depth = 3;
  small.channels = {8, 16, 24};
  small.heads = 2;
  cases.push_back({small, {true, true}});
  BackboneConfig tiny = gradcheck_config();
  cases.push_back({tiny, {false, false}});

  for (const Case& c : cases) {
    MasmModel model(c.cfg, c.toggles);
    model.init(17);
    const std::size_t vox = c.cfg.volume * c.cfg.volume * c.cfg.volume;
    Rng rng(3);
    std::vector<std::vector<double>> mods(4);
    for (auto& m : mods) {
      m.resize(vox);
      for (auto& v : m) v = rng.next_uniform(-1.0, 1.0);
    }
    ForwardTrace trace;
    Rng gate(5);
    const Tensor out =
        model.forward(mods, &gate, GateMode::kSample, 1.0, &trace);

    require(trace.encoder.size() == c.cfg.depth, "encoder layer count");
    for (std::size_t j = 1; j <= c.cfg.depth; ++j) {
      const std::size_t extent = c.cfg.volume >> j;
      const std::size_t width = c.cfg.channels[j - 1] / 4;
      for (std::size_t m = 0; m < 4; ++m) {
        // Streams are channel-first spatial maps: width C_j/4 over
        // (V/2^j)^3 voxels.
        require(trace.encoder[j - 1][m] == Shape{width, extent, extent, extent},
                "stream shape at layer " + std::to_string(j));
      }
    }
    const std::size_t bottom = c.cfg.volume >> c.cfg.depth;
    require(trace.fused.back() ==
                Shape{c.cfg.channels.back(), bottom, bottom, bottom},
            "fused bottleneck width is not C_L");
    require(out.shape() == Shape{3, c.cfg.volume, c.cfg.volume, c.cfg.volume},
            "output shape");
    for (double v : out.values()) {
      require(v > 0.0 && v < 1.0, "output value outside (0, 1)");
    }
  }
  return "stream width C_j/4 over (V/2^j)^3 voxels, bottleneck width C_L, "
         "output 3 x V^3 in (0,1) on 3 configs";
}

// ---- gate 7: learnability on two phantoms ----

RunConfig learn_config(const std::string& data, const std::string& out) {
  RunConfig cfg;
  cfg.lr = kLearnLr;
  cfg.tau = kLearnTau;
  cfg.warmup = kLearnWarmup;
  cfg.steps = kLearnSteps;
  cfg.batch = 2;
  cfg.seed = kLearnSeed;
  cfg.eval_threads = 1;
  cfg.data_dir = data;
  cfg.out_dir = out;
  return cfg;
}

std::size_t first_step_below(const TrainResult& result, double bar) {
  for (const StepRecord& r : result.steps) {
    if (r.loss < bar) return r.step;
  }
  return 0;
}

std::string check_learnability() {
  const fs::path data = fresh_dir("learn_data");
  const Rng root(kLearnSeed);
  for (std::size_t i = 0; i < 2; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "case_%04zu.mmv", i);
    write_volume((data / name).string(),
                 gen_phantom(default_phantom_spec(32, root.derived(i).seed())));
  }

  const auto start = std::chrono::steady_clock::now();
  RunConfig full = learn_config(data.string(), fresh_dir("learn_full").string());
  const TrainResult full_run = run_training(full);
  const double full_secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();

  const std::size_t full_at = first_step_below(full_run, 0.05);
  require(full_at != 0, "full config never reached loss < 0.05 in " +
                            std::to_string(kLearnSteps) + " steps");
  const auto& dice = full_run.final_eval.mean_dice;
  for (std::size_t k = 0; k < 3; ++k) {
    require(dice[k] > 0.90, "evaluation dice " + fmt(dice[k]) +
                                " not above 0.90 on the training cases");
  }
  require(full_secs < 1800.0, "training exceeded the 30 minute budget");

  RunConfig base = learn_config(data.string(), fresh_dir("learn_base").string());
  base.toggles = {false, false};
  const TrainResult base_run = run_training(base);
  const std::size_t base_at = first_step_below(base_run, 0.05);
  require(base_at == 0 || full_at <= base_at,
          "full config needed " + std::to_string(full_at) +
              " steps vs baseline " + std::to_string(base_at));
  return "loss<0.05 at step " + std::to_string(full_at) + " (baseline " +
         (base_at == 0 ? std::string(">300") : std::to_string(base_at)) +
         "), dice " + fmt(dice[0]) + "/" + fmt(dice[1]) + "/" + fmt(dice[2]) +
         ", " + fmt(full_secs) + "s";
}

// ---- gate 8: format goldens ----

std::string check_formats() {
  const fs::path dir = fresh_dir("golden");
  write_volume((dir / "sample.mmv").string(), golden::sample_volume());
  save_checkpoint((dir / "sample.ckpt").string(), golden::sample_records());
  const fs::path committed = fs::path(MASM_GOLDEN_DIR);
  require(read_file_bytes((dir / "sample.mmv").string()) ==
              read_file_bytes((committed / "sample.mmv").string()),
          "regenerated volume differs from the committed golden");
  require(read_file_bytes((dir / "sample.ckpt").string()) ==
              read_file_bytes((committed / "sample.ckpt").string()),
          "regenerated checkpoint differs from the committed golden");
  bool rejected = false;
  try {
    load_checkpoint((committed / "corrupt.ckpt").string());
  } catch (const IoError& e) {
    rejected = std::string(e.what()).find("digest") != std::string::npos;
  }
  require(rejected, "corrupted checkpoint digest was not rejected");
  return "volume and checkpoint bytes stable; corrupt digest rejected";
}

// ---- gate 9: end-to-end determinism through the CLI ----

std::string check_determinism() {
  const fs::path dir = fresh_dir("determinism");
  const fs::path log = dir / "cli.log";
  require(run_cli("gen-data --out " + (dir / "data").string() +
                      " --count 2 --size 8 --seed 3",
                  log) == 0,
          "gen-data failed");
  const std::string train_args =
      "train --volume 8 --depth 2 --channels 8,16 --heads 2 --steps 5 "
      "--warmup 1 --batch 2 --lr 1e-3 --seed 5 --data " +
      (dir / "data").string() + " --out " + (dir / "run").string();
  require(run_cli(train_args, log) == 0, "first training run failed");

  const char* artifacts[] = {"train.log", "train.tsv",  "eval.tsv",
                             "eval.txt",  "config.txt", "model.ckpt"};
  std::vector<std::vector<unsigned char>> first;
  for (const char* a : artifacts) {
    first.push_back(read_file_bytes((dir / "run" / a).string()));
  }
  require(run_cli(train_args, log) == 0, "second training run failed");
  for (std::size_t i = 0; i < std::size(artifacts); ++i) {
    require(read_file_bytes((dir / "run" / artifacts[i]).string()) == first[i],
            std::string(artifacts[i]) + " changed between identical runs");
  }

  const std::string predict_args =
      "predict --volume 8 --depth 2 --channels 8,16 --heads 2 --ckpt " +
      (dir / "run" / "model.ckpt").string() + " --in " +
      (dir / "data" / "case_0000.mmv").string();
  require(run_cli(predict_args + " --out " + (dir / "p1").string(), log) == 0,
          "first predict failed");
  require(run_cli(predict_args + " --out " + (dir / "p2").string(), log) == 0,
          "second predict failed");
  require(read_file_bytes((dir / "p1" / "case_0000_pred.mmv").string()) ==
              read_file_bytes((dir / "p2" / "case_0000_pred.mmv").string()),
          "predictions changed between identical runs");
  return "logs, checkpoints, and predictions byte-identical across reruns";
}

}  // namespace

int main() {
  std::printf("acceptance gates (cli: %s)\n", MASM_CLI_PATH);
  gate(1, "gradient suite", check_gradients);
  gate(2, "shift algebra", check_shift_algebra);
  gate(3, "pattern parameter-freeness", check_parameter_freeness);
  gate(4, "gate sampling", check_gumbel);
  gate(5, "loss/metric oracles", check_metric_oracles);
  gate(6, "shape algebra", check_shapes);
  gate(7, "learnability", check_learnability);
  gate(8, "format stability", check_formats);
  gate(9, "determinism", check_determinism);
  if (failures == 0) {
    std::printf("all 9 acceptance gates passed\n");
    return 0;
  }
  std::printf("%d acceptance gate(s) failed\n", failures);
  return 1;
}
