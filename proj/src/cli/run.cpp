#include "v2m/cli/run.hpp"

#include <algorithm>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "v2m/cli/pipeline.hpp"
#include "v2m/core/error.hpp"
#include "v2m/core/serialize.hpp"
#include "v2m/core/wav.hpp"

namespace v2m::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int exit_code_for(const std::string& kind) {
  if (kind == "config" || kind == "usage") return 2;
  if (kind == "input" || kind == "io" || kind == "dimension") return 3;
  if (kind == "numeric") return 4;
  return 1;
}

int report_error(std::ostream& err, const std::string& kind, const std::string& message) {
  const int code = exit_code_for(kind);
  err << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << "\n";
  return code;
}

fs::path require_out(const std::optional<std::string>& out) {
  if (!out) throw ConfigError("--out is required");
  fs::create_directories(*out);
  return *out;
}

void require_dir(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw InputError(std::string(what) + " does not exist: " + path);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Video-to-music generation toolkit on synthetic paired data", "v2m"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::uint64_t> seed;
  std::optional<std::string> config_file, out_dir;
  std::optional<std::size_t> threads;
  std::vector<std::string> overrides;
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--config", config_file, "Flat JSON config with dotted keys")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--threads", threads, "Worker threads for synthesis, sampling and evaluation");
  app.add_option("--set", overrides, "Config override key=value (repeatable)");

  std::optional<std::size_t> n_clips;
  auto* synth = app.add_subcommand("synth", "Generate a paired synthetic dataset");
  synth->add_option("--clips", n_clips, "Number of clips");

  std::string data_dir;
  std::optional<std::size_t> steps;
  auto* pre = app.add_subcommand("pretrain", "Contrastive pre-training of adaptor and audio head");
  pre->add_option("--data", data_dir, "Dataset directory")->required();
  pre->add_option("--steps", steps, "Optimizer steps");

  std::string pretrained;
  bool from_scratch = false;
  auto* tr = app.add_subcommand("train", "Rectified-flow generator training");
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--pretrained", pretrained, "Contrastive checkpoint (pretrain.mvt)");
  tr->add_flag("--from-scratch", from_scratch, "Randomly initialize the adaptor");
  tr->add_option("--steps", steps, "Conditional training steps");

  std::string model_path;
  std::optional<std::size_t> runs, ode_steps;
  std::optional<double> cfg_scale;
  double prompt_s = 0.0;
  auto* smp = app.add_subcommand("sample", "Generate latents for every clip of a dataset");
  smp->add_option("--model", model_path, "Generator checkpoint (model.mvt)")->required();
  smp->add_option("--data", data_dir, "Dataset directory")->required();
  smp->add_option("--runs", runs, "Independent runs per clip");
  smp->add_option("--ode-steps", ode_steps, "Euler steps");
  smp->add_option("--cfg-scale", cfg_scale, "Guidance scale");
  smp->add_option("--prompt-s", prompt_s, "Seconds of reference music used as in-context prompt");

  std::string wav_path, latent_path;
  auto* bt = app.add_subcommand("beat-track", "Track beats in a WAV file or a latent");
  auto* wav_opt = bt->add_option("--wav", wav_path, "16-bit PCM WAV input");
  auto* lat_opt = bt->add_option("--latent", latent_path, "Latent tensor input (.mvt)");
  wav_opt->excludes(lat_opt);
  bt->require_option(1);

  std::string gen_dir, ref_dir, sim_ckpt;
  auto* ev = app.add_subcommand("eval", "Beat coverage, hit score and SIM");
  ev->add_option("--gen", gen_dir, "Generated items (run subdirectories or files)")->required();
  ev->add_option("--ref", ref_dir, "Reference dataset or beat files")->required();
  ev->add_option("--sim-checkpoint", sim_ckpt, "Contrastive checkpoint for SIM");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    return report_error(err, "usage", e.what());
  }

  try {
    Config cfg;
    if (config_file) cfg.merge_file(*config_file);
    for (const std::string& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) cfg.set_value("seed", *seed);
    if (threads) cfg.set_value("threads", *threads);
    if (cfg.get<std::int64_t>("threads") < 1) throw ConfigError("threads must be at least 1");
    if (n_clips) cfg.set_value("data.clips", *n_clips);
    if (runs) cfg.set_value("sample.runs", *runs);
    if (ode_steps) cfg.set_value("sample.ode_steps", *ode_steps);
    if (cfg_scale) cfg.set_value("sample.cfg_scale", *cfg_scale);

    if (synth->parsed()) {
      const fs::path dir = require_out(out_dir);
      const Dataset ds = synthesize(cfg, cfg.get<std::size_t>("data.clips"), cfg.get<std::uint64_t>("seed"),
                                    cfg.get<std::size_t>("threads"));
      write_dataset(dir, ds);
      cfg.write_resolved(dir);
    } else if (pre->parsed()) {
      if (steps) cfg.set_value("pretrain.steps", *steps);
      require_dir(data_dir, "dataset");
      const Dataset ds = read_dataset(data_dir);
      pretrain(cfg, ds, require_out(out_dir), err);
    } else if (tr->parsed()) {
      if (steps) cfg.set_value("train.steps", *steps);
      if (from_scratch == !pretrained.empty()) {
        throw ConfigError("train needs exactly one of --pretrained or --from-scratch");
      }
      require_dir(data_dir, "dataset");
      if (!pretrained.empty()) require_dir(pretrained, "checkpoint");
      const Dataset ds = read_dataset(data_dir);
      train(cfg, ds, pretrained.empty() ? std::nullopt : std::optional<fs::path>(pretrained), require_out(out_dir), err);
    } else if (smp->parsed()) {
      require_dir(model_path, "checkpoint");
      require_dir(data_dir, "dataset");
      const Dataset ds = read_dataset(data_dir);
      sample(cfg, model_path, ds, require_out(out_dir), prompt_s);
    } else if (bt->parsed()) {
      beat::TrackerConfig tc;
      beat::OnsetEnvelope env;
      if (!wav_path.empty()) {
        const io::Pcm pcm = io::read_wav(wav_path);
        env = beat::onset_envelope(pcm.samples, pcm.sample_rate);
      } else {
        env = beat::latent_envelope(io::read_tensor(latent_path), tc.latent_fps);
      }
      const beat::TempoCurve tempo = beat::estimate_tempo(env, tc);
      const beat::BeatGrid grid = beat::track_beats(env, tempo, tc);
      json curve = json::array();
      for (std::size_t i = 0; i < tempo.times_s.size(); ++i) curve.push_back({{"time_s", tempo.times_s[i]}, {"bpm", tempo.bpm[i]}});
      const json result = {
          {"tempo_curve", curve}, {"beats_s", grid.beat_times}, {"minimal_cycle_frames", grid.minimal_cycle_frames}};
      if (out_dir) {
        fs::create_directories(*out_dir);
        io::write_text(fs::path(*out_dir) / "beats.json", result.dump(2) + "\n");
        cfg.write_resolved(*out_dir);
      } else {
        out << result.dump(2) << "\n";
      }
    } else if (ev->parsed()) {
      require_dir(gen_dir, "generated directory");
      require_dir(ref_dir, "reference directory");
      if (!sim_ckpt.empty()) require_dir(sim_ckpt, "checkpoint");
      const std::optional<fs::path> dir = out_dir ? std::optional<fs::path>(*out_dir) : std::nullopt;
      const eval::Report rep = evaluate(cfg, gen_dir, ref_dir,
                                        sim_ckpt.empty() ? std::nullopt : std::optional<fs::path>(sim_ckpt), dir, err);
      if (!out_dir) out << rep.to_json().dump(2) << "\n";
    }
  } catch (const Error& e) {
    return report_error(err, e.kind(), e.what());
  } catch (const fs::filesystem_error& e) {
    return report_error(err, "io", e.what());
  } catch (const std::exception& e) {
    return report_error(err, "internal", e.what());
  }
  return 0;
}

}  // namespace v2m::cli
