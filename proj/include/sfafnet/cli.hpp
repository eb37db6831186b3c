#pragma once

// Command-line front end. run_cli() is the whole program; main() only forwards
// argv. Exit codes: 0 success, 1 usage or bad flag value, 2 runtime failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sfafnet/gradcheck.hpp"
#include "sfafnet/trainer.hpp"

namespace sfafnet {

namespace cli_detail {

/// "learned" or "gaussian:SIGMA".
inline std::optional<double> parse_filter(const std::string& text) {
  if (text == "learned") return std::nullopt;
  const std::string prefix = "gaussian:";
  if (text.rfind(prefix, 0) == 0) {
    try {
      std::size_t used = 0;
      const std::string num = text.substr(prefix.size());
      const double sigma = std::stod(num, &used);
      if (used == num.size() && sigma > 0.0) return sigma;
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("--filter must be 'learned' or 'gaussian:SIGMA' with SIGMA > 0, got '" + text + "'");
}

inline std::ofstream open_output(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw FileError(path, "cannot write");
  out << std::setprecision(9);
  return out;
}

inline void write_feature(const std::filesystem::path& dir, const std::string& name, const Tensor<float>& t) {
  const auto bin = dir / (name + ".bin");
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw FileError(bin.string(), "cannot write feature");
  std::vector<std::uint8_t> bytes;
  for (float v : t.data()) detail::put_le(bytes, std::bit_cast<std::uint32_t>(v));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  auto meta = open_output((dir / (name + ".json")).string());
  meta << nlohmann::json{{"name", name}, {"dtype", "float32"}, {"layout", "NCHW"}, {"shape", t.shape()}}.dump(2)
       << '\n';
  if (!out || !meta) throw FileError(bin.string(), "failed writing feature");
}

struct SynthArgs {
  std::string out;
  Index count = 16;
  std::uint64_t seed = 0;
  Index size = 64;
  double sigma = 1.5;
  double motion_length = 0;
  double motion_angle = 0;
  double noise = 0;
  Index train_count = 0;
};

struct TrainArgs {
  std::string data, out, log, val, resume;
  Index channels = 8, naf_blocks = 2, rows = 8, kernel = 3;
  Index steps = 2000, batch = 4, patch = 32, val_every = 200, save_every = 0;
  std::uint64_t seed = 0;
  double lr = 2e-4;
  double clip = 0;
  std::string filter = "learned";
};

struct TheoremArgs {
  Index k = 3, trials = 100, max_p = 64;
  std::uint64_t seed = 0;
  std::string csv;
  bool trajectory = false;
};

inline int synth_data(const SynthArgs& a, std::ostream& out) {
  if (a.count < 1) throw ConfigError("--count must be >= 1");
  if (a.size < 8) throw ConfigError("--size must be >= 8");
  BlurKind kind = GaussianBlur{a.sigma};
  if (a.motion_length > 0) kind = MotionBlur{a.motion_length, a.motion_angle};
  if (a.train_count != 0 && (a.train_count < 1 || a.train_count >= a.count)) {
    throw ConfigError("--split must be between 1 and count - 1");
  }
  auto pairs = synth_corpus(a.count, a.seed, kind, a.size, a.noise);
  if (a.train_count == 0) {
    write_corpus(a.out, pairs);
    out << "wrote " << a.count << " pairs to " << a.out << '\n';
    return 0;
  }
  const auto split = pairs.begin() + a.train_count;
  const auto root = std::filesystem::path(a.out);
  write_corpus((root / "train").string(), {pairs.begin(), split});
  write_corpus((root / "test").string(), {split, pairs.end()});
  out << "wrote " << a.train_count << " train and " << a.count - a.train_count << " test pairs under " << a.out << '\n';
  return 0;
}

inline int train(const TrainArgs& a, std::ostream& out) {
  TrainConfig tc;
  tc.lr_init = a.lr;
  tc.batch_size = a.batch;
  tc.total_steps = a.steps;
  tc.patch_size = a.patch;
  tc.seed = a.seed;
  tc.val_every = a.val.empty() ? 0 : a.val_every;
  tc.save_every = a.save_every;
  tc.clip_grad_norm = a.clip;
  tc.validate();
  ArchConfig arch{a.channels, a.naf_blocks, a.rows, a.kernel, parse_filter(a.filter)};
  arch.validate();

  auto data = load_corpus(a.data);
  std::vector<ImagePair> val;
  if (!a.val.empty()) val = load_corpus(a.val);

  const bool resuming = !a.resume.empty();
  Trainer<float> trainer = resuming ? Trainer<float>::resume(read_checkpoint(a.resume), std::move(data), tc)
                                    : Trainer<float>(SFAFNet<float>::make(arch, a.seed), std::move(data), tc);
  if (resuming && !(trainer.model().config == arch)) {
    throw ConfigError("--resume checkpoint architecture differs from the given flags");
  }
  const std::string log_path = a.log.empty() ? a.out + ".log.csv" : a.log;
  std::ofstream log;
  if (resuming) {
    log.open(log_path, std::ios::app);
    if (!log) throw FileError(log_path, "cannot append to training log");
    log << std::setprecision(9);
  } else {
    log = open_output(log_path);
  }
  trainer.run(&log, val.empty() ? nullptr : &val, a.out);
  out << "trained " << trainer.steps_done() << " steps; checkpoint " << a.out << "; log " << log_path << '\n';
  if (!val.empty()) {
    const auto rows = evaluate(trainer.model(), val);
    out << std::fixed << std::setprecision(3) << "validation PSNR " << mean_psnr(rows) << " dB (degraded "
        << mean_psnr(rows, true) << " dB)\n";
  }
  return 0;
}

inline int infer(const std::string& ckpt, const std::string& in, const std::string& out_path, std::ostream& out) {
  const auto model = SFAFNet<float>::load(ckpt);
  const Image img = read_image(in);
  write_image(out_path, restore(model, img));
  out << "wrote " << out_path << '\n';
  return 0;
}

inline int eval(const std::string& ckpt, const std::string& data, const std::string& csv, std::ostream& out) {
  const auto model = SFAFNet<float>::load(ckpt);
  const auto rows = evaluate(model, load_corpus(data));
  auto f = open_output(csv);
  f << "image_id,psnr,ssim,mae\n";
  for (const auto& r : rows) f << r.id << ',' << r.psnr << ',' << r.ssim << ',' << r.mae << '\n';
  double s = 0;
  for (const auto& r : rows) s += r.ssim;
  out << std::fixed << std::setprecision(4) << "images " << rows.size() << "  PSNR " << mean_psnr(rows)
      << " dB (degraded " << mean_psnr(rows, true) << " dB)  SSIM " << s / static_cast<double>(rows.size()) << '\n';
  return 0;
}

inline int verify_theorem(const TheoremArgs& a, std::ostream& out) {
  if (a.k < 1 || a.trials < 1 || a.max_p < 1) throw ConfigError("--k, --trials and --max-p must be >= 1");
  const auto n = static_cast<std::size_t>(a.k * a.k);
  Rng rng(a.seed);
  std::ofstream csv;
  if (!a.csv.empty()) {
    csv = open_output(a.csv);
    csv << std::setprecision(17) << "trial,p,ratio\n";
  }
  Index below = 0;
  double worst = 0;
  for (Index t = 0; t < a.trials; ++t) {
    const auto W = random_row_softmax(n, rng);
    const auto m = random_unit_vector(n, rng);
    const auto traj = lowpass_trajectory(W, m, static_cast<int>(a.max_p));
    if (csv.is_open()) {
      if (a.trajectory) {
        for (std::size_t p = 0; p < traj.size(); ++p) csv << t << ',' << p + 1 << ',' << traj[p] << '\n';
      } else {
        csv << t << ',' << a.max_p << ',' << traj.back() << '\n';
      }
    }
    worst = std::max(worst, traj.back());
    if (traj.back() < 1e-3) ++below;
  }
  std::vector<double> eye(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
  Rng crng(mix_seed(a.seed, 1));
  const auto m = random_unit_vector(n, crng);
  const auto id_traj = lowpass_trajectory(eye, m, static_cast<int>(a.max_p));
  out << std::setprecision(6) << below << "/" << a.trials << " trials below 1e-3 at p=" << a.max_p
      << " (worst " << worst << "); identity matrix ratio " << id_traj.front() << " -> " << id_traj.back() << '\n';
  return 0;
}

inline int gradcheck(const std::string& module, std::uint64_t seed, std::ostream& out) {
  const auto results = run_gradcheck(module, seed);
  bool ok = true;
  for (const auto& r : results) {
    out << std::left << std::setw(16) << r.name << std::right << std::scientific << std::setprecision(3)
        << std::setw(12) << r.max_rel_error << "  " << std::setw(6) << r.coords_checked << " coords  "
        << (r.passed ? "PASS" : "FAIL") << "  (worst: " << r.worst_tensor << ")\n";
    ok = ok && r.passed;
  }
  return ok ? 0 : 2;
}

inline int dump_features(const std::string& ckpt, const std::string& in, const std::string& out_dir,
                         std::ostream& out) {
  const auto model = SFAFNet<float>::load(ckpt);
  const Image img = read_image(in);
  if (img.height % 4 != 0 || img.width % 4 != 0) {
    throw DimensionError("dump-features: image size must be divisible by 4, got " + std::to_string(img.height) +
                         "x" + std::to_string(img.width));
  }
  std::filesystem::create_directories(out_dir);
  FeatureRecorder<float> rec;
  {
    NoGradGuard ng;
    const Image batch[1] = {img};
    model.forward(images_to_tensor<float>(batch), &rec);
  }
  for (const auto& [name, t] : rec.features) write_feature(out_dir, name, t);
  out << "wrote " << rec.features.size() << " feature maps to " << out_dir << '\n';
  return 0;
}

}  // namespace cli_detail

inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  using namespace cli_detail;
  CLI::App app{"Frequency-aware image deblurring: data synthesis, training, inference and verification."};
  app.name("sfafnet");
  app.require_subcommand(1, 1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth-data", "Write a synthetic blurred/sharp corpus");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--count", synth.count, "Number of pairs")->capture_default_str();
  c_synth->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  c_synth->add_option("--size", synth.size, "Image side length")->capture_default_str();
  c_synth->add_option("--sigma", synth.sigma, "Gaussian blur sigma")->capture_default_str();
  c_synth->add_option("--motion-length", synth.motion_length, "Use linear motion blur of this length");
  c_synth->add_option("--motion-angle", synth.motion_angle, "Motion angle in degrees");
  c_synth->add_option("--noise", synth.noise, "Additive Gaussian noise sigma")->capture_default_str();
  c_synth->add_option("--split", synth.train_count, "Write the first N pairs to OUT/train and the rest to OUT/test");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a model on a corpus directory");
  c_train->add_option("--data", tr.data, "Training corpus directory")->required();
  c_train->add_option("--out", tr.out, "Checkpoint path")->required();
  c_train->add_option("--channels", tr.channels, "Base width C")->capture_default_str();
  c_train->add_option("--naf-blocks", tr.naf_blocks, "NAFBlocks per GSFF block")->capture_default_str();
  c_train->add_option("--rows", tr.rows, "Filter rows r")->capture_default_str();
  c_train->add_option("--kernel", tr.kernel, "Filter size k")->capture_default_str();
  c_train->add_option("--steps", tr.steps, "Optimizer steps")->capture_default_str();
  c_train->add_option("--batch", tr.batch, "Batch size")->capture_default_str();
  c_train->add_option("--patch", tr.patch, "Training patch size")->capture_default_str();
  c_train->add_option("--seed", tr.seed, "Random seed")->capture_default_str();
  c_train->add_option("--lr", tr.lr, "Initial learning rate")->capture_default_str();
  c_train->add_option("--clip-grad-norm", tr.clip, "Clip the global gradient norm (0: off)")->capture_default_str();
  c_train->add_option("--filter", tr.filter, "learned | gaussian:SIGMA")->capture_default_str();
  c_train->add_option("--log", tr.log, "Training log CSV (default: CKPT.log.csv)");
  c_train->add_option("--val", tr.val, "Validation corpus directory");
  c_train->add_option("--val-every", tr.val_every, "Validation interval in steps")->capture_default_str();
  c_train->add_option("--save-every", tr.save_every, "Checkpoint interval in steps (0: end only)");
  c_train->add_option("--resume", tr.resume, "Continue from a checkpoint written by train");

  std::string ckpt, in, out_path, data, csv, module;
  std::uint64_t gc_seed = 0;
  auto* c_infer = app.add_subcommand("infer", "Restore one image");
  c_infer->add_option("--ckpt", ckpt, "Checkpoint")->required();
  c_infer->add_option("--in", in, "Degraded PPM image")->required();
  c_infer->add_option("--out", out_path, "Output PPM image")->required();

  auto* c_eval = app.add_subcommand("eval", "Score a checkpoint on a corpus");
  c_eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
  c_eval->add_option("--data", data, "Corpus directory")->required();
  c_eval->add_option("--csv", csv, "Per-image CSV output")->required();

  TheoremArgs th;
  auto* c_theorem = app.add_subcommand("verify-theorem", "Check that repeated low-pass filtering removes high frequencies");
  c_theorem->add_option("--k", th.k, "Kernel size (matrices are k^2 x k^2)")->capture_default_str();
  c_theorem->add_option("--trials", th.trials, "Random trials")->capture_default_str();
  c_theorem->add_option("--max-p", th.max_p, "Largest power")->capture_default_str();
  c_theorem->add_option("--seed", th.seed, "Random seed")->capture_default_str();
  c_theorem->add_option("--csv", th.csv, "CSV output (trial,p,ratio)");
  c_theorem->add_flag("--trajectory", th.trajectory, "Write every p, not only the last");

  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  c_grad->add_option("--module", module, "Only run this case (or case family)");
  c_grad->add_option("--seed", gc_seed, "Random seed")->capture_default_str();

  auto* c_dump = app.add_subcommand("dump-features", "Write intermediate feature maps as f32 .bin + .json");
  c_dump->add_option("--ckpt", ckpt, "Checkpoint")->required();
  c_dump->add_option("--in", in, "Input PPM image")->required();
  c_dump->add_option("--out", out_path, "Output directory")->required();

  std::vector<std::string> argv_store{"sfafnet"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return 0;
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands();
    err << "error: " << e.what() << "\n\n" << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  try {
    if (*c_synth) return synth_data(synth, out);
    if (*c_train) return train(tr, out);
    if (*c_infer) return infer(ckpt, in, out_path, out);
    if (*c_eval) return eval(ckpt, data, csv, out);
    if (*c_theorem) return verify_theorem(th, out);
    if (*c_grad) return gradcheck(module, gc_seed, out);
    if (*c_dump) return dump_features(ckpt, in, out_path, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace sfafnet
