/*
 * firereg : joint synthesis and registration networks
 *
 * Copyright 2026 The firereg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// fire: synth | train | register | eval | bench
//
// Exit codes: 0 success, 2 usage or input error, 3 numerical failure,
// 1 anything else.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fire/fire.hpp"

namespace fs = std::filesystem;
using namespace fire;

namespace {

constexpr int kUsage = 2;
constexpr int kNumerical = 3;

std::size_t worker_cap(std::optional<std::size_t> flag) {
  std::size_t cap = 0;
  if (const char* env = std::getenv("FIRE_THREADS")) {
    try {
      cap = std::stoul(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("FIRE_THREADS must be a positive integer, got '") + env + "'");
    }
  }
  std::size_t w = flag.value_or(cap > 0 ? cap : 1);
  if (cap > 0) w = std::min(w, cap);
  return std::max<std::size_t>(w, 1);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write '" + path.string() + "'");
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t count = 1, dim = 2, size = 64;
  std::uint64_t seed = 0;
  bool preview = false;
};

int run_synth(const SynthArgs& a) {
  const auto data = generate_dataset(a.count, a.dim, a.size, a.seed);
  save_dataset(data, a.out, a.dim, a.size, a.seed);
  if (a.preview && a.dim == 2)
    for (const auto& e : data) {
      save_pgm(e.a, (fs::path(a.out) / (e.id + "_a.pgm")).string());
      save_pgm(e.b, (fs::path(a.out) / (e.id + "_b.pgm")).string());
    }
  std::printf("wrote %zu pairs to %s\n", data.size(), a.out.c_str());
  return 0;
}

struct TrainArgs {
  std::string config, data, out;
  std::optional<std::size_t> iters, checkpoint_every;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr_taf, lr_tnr, lr_gf;
  std::optional<std::string> resume;
  std::size_t log_every = 100;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : load_train_config(a.config);
  if (a.iters) cfg.iters = *a.iters;
  if (a.checkpoint_every) cfg.checkpoint_every = *a.checkpoint_every;
  if (a.seed) cfg.seed = *a.seed;
  if (a.lr_taf) cfg.lr_taf = *a.lr_taf;
  if (a.lr_tnr) cfg.lr_tnr = *a.lr_tnr;
  if (a.lr_gf) cfg.lr_gf = *a.lr_gf;
  cfg.validate();

  const auto data = load_dataset(a.data);
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "config.json", to_json(cfg).dump(2) + "\n");

  TrainOptions opts;
  opts.out_dir = a.out;
  opts.resume = a.resume;
  opts.on_step = [&](std::size_t it, const LossBreakdown& b) {
    if (a.log_every > 0 && ((it + 1) % a.log_every == 0 || it + 1 == cfg.iters))
      std::fprintf(stderr, "iter %zu/%zu  loss %.5f\n", it + 1, cfg.iters, b.total);
  };
  train(training_pairs(data), cfg, opts);
  std::printf("checkpoint %s\n", (fs::path(a.out) / "final.ckpt.json").string().c_str());
  return 0;
}

struct RegisterArgs {
  std::string ckpt, moving, fixed, out, field, direction = "ab";
};

int run_register(const RegisterArgs& a) {
  const auto ck = load_checkpoint<float>(a.ckpt);
  const Volume moving = load_volume(a.moving);
  const Volume fixed = load_volume(a.fixed);
  if (moving.dim() != ck.model.config().dim)
    throw ShapeError("volumes are " + std::to_string(moving.dim()) + "-D but the checkpoint model is " +
                     std::to_string(ck.model.config().dim) + "-D");
  const Direction dir = a.direction == "ba" ? Direction::ba : Direction::ab;
  const auto r = register_volumes(moving, fixed, ck.model, dir);
  save_volume(r.warped, a.out);
  if (!a.field.empty()) {
    // Displacement in normalized units at image resolution, one channel per axis.
    Volume f;
    f.image = r.grid;
    const Tensor<float> id = identity_grid<float>(fixed.spatial());
    for (std::size_t i = 0; i < id.size(); ++i) f.image[i] -= id[i];
    f.spacing = fixed.spacing;
    save_volume(f, a.field);
  }
  return 0;
}

struct EvalArgs {
  std::string ckpt, data, report, config;
  std::size_t repeat = 20;
  std::uint64_t seed = 0;
  std::optional<std::size_t> workers;
};

int run_eval(const EvalArgs& a) {
  const auto ck = load_checkpoint<float>(a.ckpt);
  const PerturbationSpec spec = a.config.empty() ? PerturbationSpec{} : load_train_config(a.config).perturbation;
  const auto cases = eval_cases(load_dataset(a.data));
  const EvalReport rep = evaluate(ck.model, cases, spec, a.repeat, a.seed, worker_cap(a.workers));
  write_text(a.report + ".csv", rep.csv());
  write_text(a.report + ".txt", rep.text());
  std::cout << rep.text();
  return 0;
}

struct BenchArgs {
  std::string ckpt, data, report, mode = "both";
  std::size_t runs = 5;
};

int run_bench(const BenchArgs& a) {
  const auto ck = load_checkpoint<float>(a.ckpt);
  const auto cases = eval_cases(load_dataset(a.data));
  std::vector<BenchMode> modes;
  if (a.mode != "nonrigid") modes.push_back(BenchMode::affine);
  if (a.mode != "affine") modes.push_back(BenchMode::nonrigid);
  const BenchTable t = bench(ck.model, cases, modes, a.runs);
  write_text(a.report + ".csv", t.csv());
  write_text(a.report + ".txt", t.text());
  std::cout << t.text();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"firereg: joint synthesis and registration of multi-modal volumes"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a phantom dataset of two-modality pairs");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--count", sa.count, "Number of pairs")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--dim", sa.dim, "Spatial rank")->capture_default_str()->check(CLI::IsMember({2, 3}));
  synth->add_option("--size", sa.size, "Extent per axis")->capture_default_str()->check(CLI::Range(8, 1024));
  synth->add_option("--seed", sa.seed, "Dataset seed")->capture_default_str();
  synth->add_flag("--preview", sa.preview, "Also write PGM previews (2-D only)");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train on a dataset; writes checkpoints and trace.csv");
  tr->add_option("--config", ta.config, "Run configuration JSON")->check(CLI::ExistingFile);
  tr->add_option("--data", ta.data, "Dataset directory")->required();
  tr->add_option("--out", ta.out, "Output directory")->required();
  tr->add_option("--iters", ta.iters, "Override train.iters");
  tr->add_option("--seed", ta.seed, "Override train.seed");
  tr->add_option("--lr-taf", ta.lr_taf, "Override train.lr_taf");
  tr->add_option("--lr-tnr", ta.lr_tnr, "Override train.lr_tnr");
  tr->add_option("--lr-gf", ta.lr_gf, "Override train.lr_gf");
  tr->add_option("--checkpoint-every", ta.checkpoint_every, "Override train.checkpoint_every");
  tr->add_option("--resume", ta.resume, "Continue from this checkpoint");
  tr->add_option("--log-every", ta.log_every, "Progress line interval on stderr (0: quiet)")->capture_default_str();

  RegisterArgs ra;
  auto* reg = app.add_subcommand("register", "Warp a moving volume onto a fixed one");
  reg->add_option("--ckpt", ra.ckpt, "Checkpoint")->required();
  reg->add_option("--moving", ra.moving, "Moving volume")->required();
  reg->add_option("--fixed", ra.fixed, "Fixed volume")->required();
  reg->add_option("--out", ra.out, "Warped output volume")->required();
  reg->add_option("--field", ra.field, "Also write the displacement field");
  reg->add_option("--direction", ra.direction, "Transformation network: ab (A onto B) or ba")
      ->capture_default_str()
      ->check(CLI::IsMember({"ab", "ba"}));

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Dice, inverse consistency and Jacobian report");
  ev->add_option("--ckpt", ea.ckpt, "Checkpoint")->required();
  ev->add_option("--data", ea.data, "Dataset directory with masks")->required();
  ev->add_option("--report", ea.report, "Report path prefix; writes .csv and .txt")->required();
  ev->add_option("--repeat", ea.repeat, "Random perturbations per case")->capture_default_str()->check(CLI::PositiveNumber);
  ev->add_option("--seed", ea.seed, "Perturbation seed")->capture_default_str();
  ev->add_option("--config", ea.config, "Take the perturbation spec from this run configuration")
      ->check(CLI::ExistingFile);
  ev->add_option("--workers", ea.workers, "Parallel cases (capped by FIRE_THREADS)")->check(CLI::PositiveNumber);

  BenchArgs ba;
  auto* be = app.add_subcommand("bench", "Registration timing per dataset and mode");
  be->add_option("--ckpt", ba.ckpt, "Checkpoint")->required();
  be->add_option("--data", ba.data, "Dataset directory")->required();
  be->add_option("--report", ba.report, "Report path prefix; writes .csv and .txt")->required();
  be->add_option("--runs", ba.runs, "Timed runs per case and mode")->capture_default_str()->check(CLI::PositiveNumber);
  be->add_option("--mode", ba.mode, "affine, nonrigid or both")
      ->capture_default_str()
      ->check(CLI::IsMember({"affine", "nonrigid", "both"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*synth) return run_synth(sa);
    if (*tr) return run_train(ta);
    if (*reg) return run_register(ra);
    if (*ev) return run_eval(ea);
    if (*be) return run_bench(ba);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kUsage;
}
