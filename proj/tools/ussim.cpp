// ussim: command line front end for generating data, training, evaluating and serving.

#include <CLI11.hpp>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ussim/core/runtime.hpp"
#include "ussim/eval/hole_study.hpp"
#include "ussim/eval/quality.hpp"
#include "ussim/eval/timing.hpp"
#include "ussim/service/server.hpp"
#include "ussim/training/synthetic.hpp"
#include "ussim/training/trainer.hpp"

namespace fs = std::filesystem;
using namespace ussim;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

PhantomSpec phantom_from(const std::string& path, std::uint64_t seed) {
  return path.empty() ? default_phantom_spec(seed) : load_phantom_spec(path);
}

Eigen::Vector3d parse_xyz(const std::string& s) {
  Eigen::Vector3d v;
  char c1 = 0, c2 = 0;
  std::istringstream in(s);
  if (!(in >> v.x() >> c1 >> v.y() >> c2 >> v.z()) || c1 != ',' || c2 != ',' || !in.eof())
    throw ConfigError("expected x,y,z in mm, got '" + s + "'");
  return v;
}

void print_epoch(const EpochRecord& e) {
  std::cerr << "epoch " << e.epoch << " train_loss=" << e.train_loss;
  if (e.val_loss) std::cerr << " val_loss=" << *e.val_loss;
  std::cerr << " (" << e.seconds << " s)\n";
}

struct TrainArgs {
  std::string arch = "decoder";
  std::string data, pretrain_data, out, report;
  std::uint64_t seed = 0;
  std::uint64_t shuffle_seed = 0;
  std::size_t epochs = 30, pretrain_epochs = 40, batch = 64;
  std::size_t img_size = 0;
  double k = 1.0, lr = 2e-4;
  std::size_t patience = 0;
};

int run_train(const TrainArgs& a) {
  const auto ds = load_dataset(a.data);
  const std::size_t size = a.img_size ? a.img_size : ds.image_size;
  if (size != ds.image_size)
    throw ConfigError("--img-size " + std::to_string(size) + " does not match the dataset (" +
                      std::to_string(ds.image_size) + ")");
  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.pretrain_epochs = a.pretrain_epochs;
  cfg.batch_size = a.batch;
  cfg.lr = a.lr;
  cfg.k = a.k;
  cfg.shuffle_seed = a.shuffle_seed;
  if (a.patience) cfg.patience = a.patience;
  const auto model_cfg = models::DecoderConfig::for_size(size);

  TrainResult result;
  if (a.arch == "decoder") {
    result = train_decoder(TrainData(ds), cfg, model_cfg, a.seed, print_epoch);
  } else if (a.arch == "autoencoder") {
    result = train_autoencoder(TrainData(ds), cfg, model_cfg, cfg.k > 0, a.seed, print_epoch);
  } else if (a.arch == "pretrained") {
    const auto pre = a.pretrain_data.empty() ? ds : load_dataset(a.pretrain_data);
    result = pretrain_then_finetune(TrainData(pre), TrainData(ds), cfg, model_cfg, a.seed, print_epoch).finetune;
  } else {
    throw ConfigError("--arch must be decoder, autoencoder or pretrained");
  }
  save_checkpoint(result.checkpoint, a.out);
  const auto text = "arch=" + a.arch + "\n" + result.report.to_text();
  std::cout << text;
  if (!a.report.empty()) write_text(a.report, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Pose-to-image ultrasound simulator"};
  app.require_subcommand(1);

  // phantom
  std::string phantom_out = "data/phantom_default.json";
  std::uint64_t phantom_seed = 1;
  auto* phantom = app.add_subcommand("phantom", "Write the default phantom spec as JSON");
  phantom->add_option("--out", phantom_out, "Output path")->capture_default_str();
  phantom->add_option("--seed", phantom_seed, "Phantom seed")->capture_default_str();

  // generate
  GenerateConfig gen;
  std::string gen_phantom, gen_out;
  auto* generate = app.add_subcommand("generate", "Render a synthetic dataset from the phantom oracle");
  generate->add_option("--phantom", gen_phantom, "Phantom spec JSON (default: built-in, --phantom-seed)");
  generate->add_option("--phantom-seed", phantom_seed, "Seed of the built-in phantom")->capture_default_str();
  generate->add_option("--count,-n", gen.count, "Number of frames")->capture_default_str();
  generate->add_option("--img-size", gen.image_size, "Image size (divides 256)")->capture_default_str();
  generate->add_option("--seed", gen.seed, "Pose sampler seed")->capture_default_str();
  generate->add_option("--split-seed", gen.split_seed, "Train/validation split seed")->capture_default_str();
  generate->add_option("--tilt-max", gen.sampler.tilt_max, "Max |tilt| in degrees")->capture_default_str();
  generate->add_option("--roll-max", gen.sampler.roll_max, "Max |roll| in degrees")->capture_default_str();
  generate->add_flag("!--untracked", gen.tracked, "Drop poses (pretraining data)");
  generate->add_option("--out", gen_out, "Manifest path (images go next to it)")->required();

  // train
  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  train->add_option("--arch", ta.arch, "decoder | autoencoder | pretrained")
      ->check(CLI::IsMember({"decoder", "autoencoder", "pretrained"}))
      ->capture_default_str();
  train->add_option("--data", ta.data, "Tracked dataset manifest")->required();
  train->add_option("--pretrain-data", ta.pretrain_data, "Untracked manifest for pretraining (default: --data)");
  train->add_option("--out", ta.out, "Checkpoint path")->required();
  train->add_option("--report", ta.report, "Also write the training report here");
  train->add_option("--seed", ta.seed, "Weight init seed")->capture_default_str();
  train->add_option("--shuffle-seed", ta.shuffle_seed, "Mini-batch shuffle seed")->capture_default_str();
  train->add_option("--epochs", ta.epochs, "Training epochs")->capture_default_str();
  train->add_option("--pretrain-epochs", ta.pretrain_epochs, "Autoencoder pretraining epochs")->capture_default_str();
  train->add_option("--batch-size", ta.batch, "Training batch size")->capture_default_str();
  train->add_option("--lr", ta.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--img-size", ta.img_size, "64 | 128 | 256 (default: dataset size)");
  train->add_option("--k", ta.k, "Tracker loss weight K")->capture_default_str();
  train->add_option("--patience", ta.patience, "Early stop after N epochs without improvement (0: off)");

  // eval
  std::string ev_ckpt, ev_data, ev_out, ev_split = "validation";
  bool ev_range = false;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint against a dataset");
  eval->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
  eval->add_option("--data", ev_data, "Dataset manifest")->required();
  eval->add_option("--out", ev_out, "Report path")->required();
  eval->add_option("--split", ev_split, "validation | train | all")
      ->check(CLI::IsMember({"validation", "train", "all"}))
      ->capture_default_str();
  eval->add_flag("--psnr-dynamic-range", ev_range, "PSNR peak = 1 instead of max(simulated)");

  // holestudy
  std::string hs_data, hs_eval, hs_center, hs_out = "holestudy", hs_full;
  HoleStudyConfig hs;
  double hs_bin = 10;
  auto* hole = app.add_subcommand("holestudy", "Train with and without a spherical hole in the data");
  hole->add_option("--data", hs_data, "Training dataset manifest")->required();
  hole->add_option("--eval-data", hs_eval, "Evaluation manifest (default: validation split of --data)");
  hole->add_option("--center", hs_center, "Hole centre x,y,z in mm")->required();
  hole->add_option("--radius", hs.radius_mm, "Hole radius in mm")->capture_default_str();
  hole->add_option("--epochs", hs.train.epochs, "Epochs per run")->capture_default_str();
  hole->add_option("--seed", hs.seed, "Weight init seed")->capture_default_str();
  hole->add_option("--shuffle-seed", hs.train.shuffle_seed, "Mini-batch shuffle seed")->capture_default_str();
  hole->add_option("--bin", hs_bin, "Loss map bin size in mm")->capture_default_str();
  hole->add_option("--full-ckpt", hs_full, "Reuse this full-data checkpoint instead of training one");
  hole->add_option("--out-dir", hs_out, "Directory for maps and summary")->capture_default_str();

  // bench
  std::string bench_ckpt;
  std::size_t bench_size = 64;
  TimingConfig tc;
  auto* bench = app.add_subcommand("bench", "Inference timing: repeats of N single-pose inferences");
  bench->add_option("--ckpt", bench_ckpt, "Checkpoint (default: untrained decoder of --size)");
  bench->add_option("--size", bench_size, "Image size")->check(CLI::IsMember({64, 128, 256}))->capture_default_str();
  bench->add_option("--n-infer", tc.n_infer, "Inferences per repeat")->capture_default_str();
  bench->add_option("--repeats", tc.n_repeat, "Repeats")->capture_default_str();
  bench->add_option("--warmup", tc.warmup, "Warm-up inferences")->capture_default_str();

  // serve
  std::string sv_ckpt, sv_phantom, sv_bind;
  std::size_t sv_threads = 2;
  auto* serve = app.add_subcommand("serve", "HTTP + WebSocket simulation service");
  serve->add_option("--ckpt", sv_ckpt, "Checkpoint")->required();
  serve->add_option("--phantom", sv_phantom, "Phantom spec JSON for oracle slices (omit to disable)");
  serve->add_option("--bind", sv_bind, std::string("host:port (default: $") + service::kBindEnv + " or " +
                                           service::kDefaultBind + ")");
  serve->add_option("--io-threads", sv_threads, "Network threads")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*phantom) {
      save_phantom_spec(default_phantom_spec(phantom_seed), phantom_out);
      std::cout << "wrote " << phantom_out << '\n';
    } else if (*generate) {
      const auto spec = phantom_from(gen_phantom, phantom_seed);
      const auto vol = build_phantom(spec);
      const auto ds = generate_synthetic(vol, spec, gen);
      if (fs::path(gen_out).has_parent_path()) fs::create_directories(fs::path(gen_out).parent_path());
      save_dataset(ds, gen_out);
      std::cout << "frames=" << ds.size() << " image_size=" << ds.image_size << " train=" << ds.split.train.size()
                << " validation=" << ds.split.validation.size() << " phantom_hash=" << ds.phantom_hash
                << " manifest=" << gen_out << '\n';
    } else if (*train) {
      return run_train(ta);
    } else if (*eval) {
      const auto ckpt = load_checkpoint(ev_ckpt);
      const auto ds = load_dataset(ev_data);
      const auto model = decoder_from_checkpoint(ckpt);
      std::vector<std::size_t> frames;
      if (ev_split == "validation")
        frames = ds.split.validation;
      else if (ev_split == "train")
        frames = ds.split.train;
      else
        for (std::size_t i = 0; i < ds.size(); ++i) frames.push_back(i);
      const auto r = evaluate_model(decoder_simulator(model), ds, frames, ev_split, PsnrOptions{ev_range, 1.0});
      auto j = r.to_json();
      j["checkpoint"] = ckpt.weights_hash();
      if (!ds.split.train.empty()) j["mean_image_baseline_mse"] = mean_image_baseline(ds, ds.split.train, frames);
      write_text(ev_out, j.dump(2) + "\n");
      std::cout << "split=" << ev_split << " frames=" << frames.size() << " mse=" << r.mean_mse
                << " ssim=" << r.mean_ssim << " psnr=" << r.mean_psnr << '\n';
    } else if (*hole) {
      const auto ds = load_dataset(hs_data);
      hs.center = parse_xyz(hs_center);
      hs.model = models::DecoderConfig::for_size(ds.image_size);
      hs.grid = LossMapGrid::covering(100, 100, hs_bin);
      std::optional<TrainResult> full;
      if (!hs_full.empty()) full = TrainResult{load_checkpoint(hs_full), {}};
      const auto eval_ds = hs_eval.empty() ? std::optional<FrameDataset>() : load_dataset(hs_eval);
      std::vector<std::size_t> eval_frames;
      if (eval_ds)
        for (std::size_t i = 0; i < eval_ds->size(); ++i) eval_frames.push_back(i);
      const auto r = eval_ds ? hole_study(ds, *eval_ds, eval_frames, hs, full, print_epoch)
                             : hole_study(ds, hs, full, print_epoch);
      const fs::path dir(hs_out);
      double hi = 0;
      for (std::size_t i = 0; i < r.full.value.size(); ++i)
        if (r.full.count[i]) hi = std::max({hi, r.full.value[i], r.holed.value[i]});
      write_text(dir / "full.txt", r.full.to_text());
      write_text(dir / "holed.txt", r.holed.to_text());
      write_text(dir / "relative.txt", r.relative.to_text());
      write_text(dir / "full.pgm", r.full.to_pgm(0, hi));
      write_text(dir / "holed.pgm", r.holed.to_pgm(0, hi));
      write_text(dir / "relative.pgm", r.relative.to_pgm(-100, 100));
      std::ostringstream s;
      s << "removed=" << r.removed.size() << " kept=" << r.kept.size() << " removed_fraction=" << r.removed_fraction
        << "\nfull_mse=" << r.full_eval.mean_mse << " holed_mse=" << r.holed_eval.mean_mse
        << "\ninside_mean_increase_pct=" << r.inside_mean << " (" << r.inside_bins << " bins)"
        << "\noutside_mean_increase_pct=" << r.outside_mean << " (" << r.outside_bins << " bins)"
        << "\nlocalized=" << (r.localized() ? "yes" : "no") << '\n';
      write_text(dir / "summary.txt", s.str());
      std::cout << s.str();
    } else if (*bench) {
      std::string id = "untrained-" + std::to_string(bench_size);
      models::Decoder<float> d;
      if (!bench_ckpt.empty()) {
        const auto ckpt = load_checkpoint(bench_ckpt);
        d = decoder_from_checkpoint(ckpt);
        if (d.config().output_size != bench_size)
          throw ConfigError("checkpoint is " + std::to_string(d.config().output_size) + "x" +
                            std::to_string(d.config().output_size) + ", not --size " + std::to_string(bench_size));
        id = ckpt.arch + "-" + ckpt.weights_hash().substr(0, 12);
      } else {
        d = models::Decoder<float>(models::DecoderConfig::for_size(bench_size), 0);
      }
      std::cout << timing_bench(d, tc, id).to_text();
    } else if (*serve) {
      const auto ckpt = load_checkpoint(sv_ckpt);
      std::optional<service::Oracle> oracle;
      if (!sv_phantom.empty()) {
        const auto spec = load_phantom_spec(sv_phantom);
        oracle = service::Oracle{std::make_shared<const Volume>(build_phantom(spec)), spec_hash(spec)};
      }
      auto engine = std::make_shared<const service::SimulationEngine>(ckpt, oracle);
      const auto bind = service::resolve_bind(sv_bind);
      service::Server server(engine, service::parse_bind(bind), service::ServerOptions{sv_threads, 1});
      std::cout << "serving " << engine->model_id() << " on " << bind.substr(0, bind.rfind(':')) << ":"
                << server.port() << " (GET /meta, POST /simulate, WS /stream)" << std::endl;
      server.wait();
    }
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
