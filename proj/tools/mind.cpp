// Command-line frontend: scene generation, training, interpolation,
// grid matching, evaluation and the numerical self-check.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mind/mind.hpp"

namespace fs = std::filesystem;
using namespace mind;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::string seq_dir_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%04d", i);
  return buf;
}

int run_gen(const std::string& config_path, const std::string& out_dir) {
  ConfigFile cfg = ConfigFile::parse_file(config_path);
  SceneSamplerConfig sc;
  const int num_scenes = cfg.get_int("num_scenes", 20);
  sc.canvas_h = cfg.get_int("canvas_h", sc.canvas_h);
  sc.canvas_w = cfg.get_int("canvas_w", sc.canvas_w);
  sc.sprites_min = cfg.get_int("sprites_min", sc.sprites_min);
  sc.sprites_max = cfg.get_int("sprites_max", sc.sprites_max);
  sc.sprite_size_min = cfg.get_int("sprite_size_min", sc.sprite_size_min);
  sc.sprite_size_max = cfg.get_int("sprite_size_max", sc.sprite_size_max);
  sc.max_speed = cfg.get_double("max_speed", sc.max_speed);
  sc.background_cell = cfg.get_int("background_cell", sc.background_cell);
  sc.sprite_cell = cfg.get_int("sprite_cell", sc.sprite_cell);
  sc.tex_lo = cfg.get_double("tex_lo", sc.tex_lo);
  sc.tex_hi = cfg.get_double("tex_hi", sc.tex_hi);
  sc.rng_seed = cfg.get_u64("rng_seed", 0);
  cfg.finish();

  fs::create_directories(out_dir);
  Rng rng(sc.rng_seed);
  for (int i = 0; i < num_scenes; ++i) {
    const SceneConfig scene = sample_scene(rng, sc);
    const Sequence seq = generate_sequence(scene);
    const fs::path dir = fs::path(out_dir) / seq_dir_name(i);
    fs::create_directories(dir);
    for (int f = 0; f < 3; ++f)
      write_image((dir / ("frame_" + std::to_string(f + 1) + ".ppm")).string(),
                  seq.frames[f]);
    write_flow((dir / "flow.flo").string(), seq.gt_flow);
  }
  std::printf("wrote %d sequences under %s\n", num_scenes, out_dir.c_str());
  return 0;
}

std::vector<std::vector<Tensor>> load_sequences(const std::string& data_dir) {
  std::vector<fs::path> seq_dirs;
  for (const auto& e : fs::directory_iterator(data_dir))
    if (e.is_directory()) seq_dirs.push_back(e.path());
  std::sort(seq_dirs.begin(), seq_dirs.end());
  if (seq_dirs.empty()) throw IoError("no sequence directories under " + data_dir);

  std::vector<std::vector<Tensor>> sequences;
  for (const auto& dir : seq_dirs) {
    std::vector<fs::path> frames;
    for (const auto& e : fs::directory_iterator(dir)) {
      const std::string ext = e.path().extension().string();
      if (ext == ".ppm" || ext == ".pgm") frames.push_back(e.path());
    }
    std::sort(frames.begin(), frames.end());
    if (frames.size() < 3) continue;
    std::vector<Tensor> seq;
    for (const auto& f : frames) seq.push_back(read_image(f.string()));
    sequences.push_back(std::move(seq));
  }
  if (sequences.empty())
    throw IoError("no usable sequences (need >= 3 frames each) under " + data_dir);
  return sequences;
}

int run_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_ckpt, std::string loss_csv) {
  ConfigFile cfg = ConfigFile::parse_file(config_path);
  NetConfig net_cfg = NetConfig::desk_scale();
  net_cfg.input_h = cfg.get_int("input_h", net_cfg.input_h);
  net_cfg.input_w = cfg.get_int("input_w", net_cfg.input_w);
  net_cfg.conv_channels = cfg.get_int_list("conv_channels", net_cfg.conv_channels);
  net_cfg.dconv_channels = cfg.get_int_list("dconv_channels", net_cfg.dconv_channels);
  net_cfg.convs_per_block = cfg.get_int("convs_per_block", net_cfg.convs_per_block);

  TrainConfig tc;
  tc.lr = cfg.get_double("lr", tc.lr);
  tc.beta1 = cfg.get_double("beta1", tc.beta1);
  tc.beta2 = cfg.get_double("beta2", tc.beta2);
  tc.adam_eps = cfg.get_double("adam_eps", tc.adam_eps);
  tc.batch_size = cfg.get_int("batch_size", tc.batch_size);
  tc.charbonnier_eps = cfg.get_double("charbonnier_eps", tc.charbonnier_eps);
  tc.epochs = cfg.get_int("epochs", tc.epochs);
  tc.rng_seed = cfg.get_u64("rng_seed", tc.rng_seed);
  tc.holdout_fraction = cfg.get_double("holdout_fraction", tc.holdout_fraction);
  const bool augment = cfg.get_int("augment", 1) != 0;
  cfg.finish();
  tc.validate();

  auto sequences = load_sequences(data_dir);
  std::vector<Triplet> train_set, held_set;
  for (int s = 0; s < static_cast<int>(sequences.size()); ++s) {
    const auto& frames = sequences[s];
    const int n_windows = static_cast<int>(frames.size()) - 2;
    auto [train_w, held_w] = split_windows(n_windows, tc.holdout_fraction);
    auto keep = [&](const std::vector<int>& wanted, bool aug,
                    std::vector<Triplet>& out) {
      std::vector<Triplet> all = make_triplets(frames, s, aug);
      for (const Triplet& t : all)
        if (std::find(wanted.begin(), wanted.end(), t.prov.frame) != wanted.end())
          out.push_back(t);
    };
    keep(train_w, augment, train_set);
    keep(held_w, false, held_set);
  }
  std::printf("sequences: %zu, training triplets: %zu, held-out: %zu\n",
              sequences.size(), train_set.size(), held_set.size());

  MindNet net = MindNet::build(net_cfg, tc.rng_seed);
  std::printf("network: %zu parameters\n", net.param_count());

  TrainHooks hooks;
  hooks.on_epoch = [&](int epoch, const MindNet& n, const OptimizerState& st) {
    save_checkpoint(out_ckpt, n, &st);
    double held_loss = 0.0;
    if (!held_set.empty()) {
      MindNet probe = n;
      for (const Triplet& t : held_set) {
        Tensor pred = probe.forward(t.i1, t.i3);
        held_loss += charbonnier_loss(pred, t.i2, tc.charbonnier_eps).first;
      }
      held_loss /= static_cast<double>(held_set.size());
    }
    std::printf("epoch %d checkpointed%s\n", epoch,
                held_set.empty()
                    ? ""
                    : (" (held-out loss " + std::to_string(held_loss) + ")").c_str());
    std::fflush(stdout);
  };

  TrainResult res = train(net, train_set, tc, hooks);

  if (loss_csv.empty()) loss_csv = out_ckpt + ".loss.csv";
  std::ofstream f(loss_csv);
  if (!f) throw IoError("cannot open " + loss_csv + " for writing");
  f << "step,loss,lr\n";
  char buf[96];
  for (const LossPoint& p : res.curve) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g\n", p.step, p.loss, p.lr);
    f << buf;
  }

  if (res.diverged) {
    std::fprintf(stderr,
                 "training diverged at step %ld; last epoch checkpoint retained\n",
                 res.steps);
    return kExitNumeric;
  }
  save_checkpoint(out_ckpt, net);
  std::printf("trained %ld steps, final loss %.6f, checkpoint %s, curve %s\n",
              res.steps, res.curve.empty() ? 0.0 : res.curve.back().loss,
              out_ckpt.c_str(), loss_csv.c_str());
  return 0;
}

int run_interp(const std::string& ckpt, const std::string& i1_path,
               const std::string& i3_path, const std::string& out_path) {
  LoadedCheckpoint loaded = load_checkpoint(ckpt);
  Tensor i1 = read_image(i1_path);
  Tensor i3 = read_image(i3_path);
  if (!i1.same_shape(i3))
    throw ShapeError("input images disagree: " + i1.shape_str() + " vs " +
                     i3.shape_str());
  Tensor out = loaded.net.forward(i1, i3);
  for (double& v : out.data) v = std::min(1.0, std::max(0.0, v));
  write_image(out_path, out);
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

int run_match(const std::string& ckpt, const std::string& i1_path,
              const std::string& i3_path, int stride, const std::string& out_csv) {
  LoadedCheckpoint loaded = load_checkpoint(ckpt);
  Tensor i1 = read_image(i1_path);
  Tensor i3 = read_image(i3_path);
  MatchSet ms = match_grid(loaded.net, i1, i3, stride);
  write_matchset_csv(out_csv, ms);
  std::printf("%zu matches (stride %d, %ld backward passes) -> %s\n",
              ms.matches.size(), stride, loaded.net.counters().backward_seeds,
              out_csv.c_str());
  return 0;
}

std::vector<double> parse_thresholds(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  if (out.empty()) throw IoError("empty threshold list");
  return out;
}

int run_eval(const std::string& matches_csv, const std::string& flow_path,
             const std::string& pred_path, const std::string& gt_path,
             const std::string& thresholds_csv, double top_fraction,
             const std::string& out_csv) {
  MatchSet ms = read_matchset_csv(matches_csv);
  FlowField gt = read_flow(flow_path);
  std::vector<double> thresholds = parse_thresholds(thresholds_csv);

  Tensor pred, gt_frame;
  const bool with_images = !pred_path.empty() && !gt_path.empty();
  if (!pred_path.empty() != !gt_path.empty())
    throw IoError("--pred and --gt must be given together");
  if (with_images) {
    pred = read_image(pred_path);
    gt_frame = read_image(gt_path);
  }

  MetricReport rep = evaluate(ms, gt, thresholds, top_fraction,
                              with_images ? &pred : nullptr,
                              with_images ? &gt_frame : nullptr);

  std::ofstream f(out_csv);
  if (!f) throw IoError("cannot open " + out_csv + " for writing");
  f << "metric,value\n";
  char buf[96];
  f << "match_count," << rep.match_count << "\n";
  if (rep.ape) {
    std::snprintf(buf, sizeof buf, "ape,%.17g\n", *rep.ape);
    f << buf;
  }
  for (const auto& [t, frac] : rep.accuracy) {
    std::snprintf(buf, sizeof buf, "accuracy@%g,%.17g\n", t, frac);
    f << buf;
  }
  if (rep.ie) {
    std::snprintf(buf, sizeof buf, "ie,%.17g\nne,%.17g\n", *rep.ie, *rep.ne);
    f << buf;
  }

  std::printf("%-16s %s\n", "metric", "value");
  std::printf("%-16s %d\n", "match_count", rep.match_count);
  if (rep.ape)
    std::printf("%-16s %.4f\n", "ape", *rep.ape);
  else
    std::printf("%-16s (no valid matches)\n", "ape");
  for (const auto& [t, frac] : rep.accuracy) {
    char name[32];
    std::snprintf(name, sizeof name, "accuracy@%g", t);
    std::printf("%-16s %.4f\n", name, frac);
  }
  if (rep.ie) {
    std::printf("%-16s %.4f\n", "ie", *rep.ie);
    std::printf("%-16s %.4f\n", "ne", *rep.ne);
  }
  return 0;
}

int run_gradcheck(std::uint64_t seed) {
  auto results = run_gradcheck_suite(seed, 20);
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-28s max_err %.3e  tol %.0e  %s\n", r.name.c_str(), r.max_err,
                r.tol, r.pass() ? "ok" : "FAIL");
    ok = ok && r.pass();
  }
  if (!ok) {
    std::fprintf(stderr, "gradcheck failed\n");
    return kExitNumeric;
  }
  std::printf("all gradient checks passed (20 seeds from %llu)\n",
              static_cast<unsigned long long>(seed));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unsupervised image matching by inverting a frame-interpolation network"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_dir, ckpt, i1_path, i3_path;
  std::string matches_csv, flow_path, pred_path, gt_path, loss_csv;
  std::string thresholds = "5,10,20,30";
  int stride = 4;
  double top_fraction = 1.0;
  std::uint64_t seed = 0;

  CLI::App* gen = app.add_subcommand("gen", "render synthetic scenes + ground-truth flow");
  gen->add_option("--config", config_path, "scene sampler config")->required();
  gen->add_option("--out", out_path, "output directory")->required();

  CLI::App* train_cmd = app.add_subcommand("train", "train on frame sequences");
  train_cmd->add_option("--data", data_dir, "directory of sequence directories")->required();
  train_cmd->add_option("--config", config_path, "network + optimizer config")->required();
  train_cmd->add_option("--out", out_path, "checkpoint path")->required();
  train_cmd->add_option("--loss", loss_csv, "loss curve CSV (default <out>.loss.csv)");

  CLI::App* interp = app.add_subcommand("interp", "interpolate the middle frame");
  interp->add_option("--ckpt", ckpt)->required();
  interp->add_option("--i1", i1_path)->required();
  interp->add_option("--i3", i3_path)->required();
  interp->add_option("--out", out_path)->required();

  CLI::App* match = app.add_subcommand("match", "semi-dense grid matching");
  match->add_option("--ckpt", ckpt)->required();
  match->add_option("--i1", i1_path)->required();
  match->add_option("--i3", i3_path)->required();
  match->add_option("--stride", stride, "grid stride in pixels")->default_val(4);
  match->add_option("--out", out_path, "match CSV")->required();

  CLI::App* eval_cmd = app.add_subcommand("eval", "score matches against ground truth");
  eval_cmd->add_option("--matches", matches_csv)->required();
  eval_cmd->add_option("--flow", flow_path)->required();
  eval_cmd->add_option("--pred", pred_path, "interpolated frame (for IE/NE)");
  eval_cmd->add_option("--gt", gt_path, "ground-truth middle frame (for IE/NE)");
  eval_cmd->add_option("--thresholds", thresholds, "accuracy thresholds, comma separated");
  eval_cmd->add_option("--top", top_fraction, "fraction of best-scored matches to keep");
  eval_cmd->add_option("--out", out_path, "report CSV")->required();

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference + adjoint suite");
  gradcheck->add_option("--seed", seed, "base seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (gen->parsed()) return run_gen(config_path, out_path);
    if (train_cmd->parsed()) return run_train(data_dir, config_path, out_path, loss_csv);
    if (interp->parsed()) return run_interp(ckpt, i1_path, i3_path, out_path);
    if (match->parsed()) return run_match(ckpt, i1_path, i3_path, stride, out_path);
    if (eval_cmd->parsed())
      return run_eval(matches_csv, flow_path, pred_path, gt_path, thresholds,
                      top_fraction, out_path);
    if (gradcheck->parsed()) return run_gradcheck(seed);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const IoError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
