#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

#include "v2m/adaptor/adaptor.hpp"
#include "v2m/beat/beat.hpp"
#include "v2m/cli/config.hpp"
#include "v2m/cli/dataset.hpp"
#include "v2m/contrastive/contrastive.hpp"
#include "v2m/eval/metrics.hpp"
#include "v2m/flowgen/flowgen.hpp"

namespace v2m::cli {

adaptor::AdaptorConfig adaptor_config(const Config& cfg, std::size_t patch_channels);
flowgen::DitConfig dit_config(const Config& cfg, std::size_t latent_channels);
contrastive::EncoderConfig encoder_config(const Config& cfg, std::size_t latent_channels);
AdamWConfig optim_config(const Config& cfg, double lr);

/// Stage-1 models: visual adaptor, audio head on a frozen encoder, and the
/// learnable log temperature.
class ContrastiveModel {
 public:
  ContrastiveModel(const Config& cfg, const synth::WorldConfig& world, std::uint64_t init_seed)
      : ContrastiveModel(cfg, world, Rng(init_seed)) {}
  ContrastiveModel(const ContrastiveModel&) = delete;
  ContrastiveModel& operator=(const ContrastiveModel&) = delete;

  static std::unique_ptr<ContrastiveModel> load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// [N, D] embeddings at the video frame rate.
  Tensor embed_video(const adaptor::PatchFeatureSequence& video, const adaptor::ClsSequence& cls) const;
  Tensor embed_music(const Tensor& latent, std::size_t frames) const;
  /// 100 * SIM(head(encoder(latent)), adaptor(video)).
  double sim_percent(const Tensor& latent, const adaptor::PatchFeatureSequence& video,
                     const adaptor::ClsSequence& cls) const;

  Config config;
  synth::WorldConfig world;
  ParamStore store;
  adaptor::VisualAdaptor adaptor;
  contrastive::AudioHead head;
  contrastive::AudioEncoder encoder;

 private:
  ContrastiveModel(const Config& cfg, const synth::WorldConfig& world, Rng&& rng);
};

/// Stage-2 models: adaptor plus velocity network.
class GeneratorModel {
 public:
  GeneratorModel(const Config& cfg, const synth::WorldConfig& world, std::uint64_t init_seed)
      : GeneratorModel(cfg, world, Rng(init_seed)) {}
  GeneratorModel(const GeneratorModel&) = delete;
  GeneratorModel& operator=(const GeneratorModel&) = delete;

  static std::unique_ptr<GeneratorModel> load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  Config config;
  synth::WorldConfig world;
  ParamStore store;
  adaptor::VisualAdaptor adaptor;
  flowgen::VelocityModel dit;
  bool pretrained = false;

 private:
  GeneratorModel(const Config& cfg, const synth::WorldConfig& world, Rng&& rng);
};

struct LossLog {
  std::vector<std::size_t> steps;
  std::vector<double> losses;
  nlohmann::json to_json() const;
};

/// Contrastive pre-training; writes pretrain.mvt, loss.json and the resolved config.
LossLog pretrain(const Config& cfg, const Dataset& data, const std::filesystem::path& out, std::ostream& log);

/// RFM training. `pretrained` seeds the adaptor and enables the
/// train.uncond_steps warm-up of the velocity model; nullopt trains both from
/// a random initialization with conditional steps only. Writes model.mvt,
/// loss.json and the resolved config.
LossLog train(const Config& cfg, const Dataset& data, const std::optional<std::filesystem::path>& pretrained,
              const std::filesystem::path& out, std::ostream& log);

/// Writes run{r}/<clip>.mvt for every clip and run. With prompt_s > 0 the
/// first round(prompt_s * fps) frames of each clip's reference music are the
/// in-context prompt.
void sample(const Config& cfg, const std::filesystem::path& model, const Dataset& data,
            const std::filesystem::path& out, double prompt_s = 0.0);

/// Beats of a generated or reference item: .json ("beats_s"), .mvt latent or .wav audio.
std::vector<double> beats_from_file(const std::filesystem::path& path, const beat::TrackerConfig& tracker = {});
std::vector<double> beats_from_latent(const Tensor& latent, double fps, const beat::TrackerConfig& tracker = {});

/// Scores `gen` against `ref`. `gen` holds either per-run subdirectories or
/// one run of files; `ref` is a dataset or a directory of beat files. SIM is
/// added when a checkpoint is given, `ref` is a dataset and outputs are latents.
/// Writes report.json, report.csv and the resolved config when `out` is set.
eval::Report evaluate(const Config& cfg, const std::filesystem::path& gen, const std::filesystem::path& ref,
                      const std::optional<std::filesystem::path>& sim_checkpoint,
                      const std::optional<std::filesystem::path>& out, std::ostream& log);

/// Mean SIM percent of positives and of shifted and replaced negatives.
struct ContrastiveProbe {
  double positive = 0.0;
  double shifted = 0.0;
  double replaced = 0.0;
  std::size_t clips = 0;
};
ContrastiveProbe probe_contrastive(const ContrastiveModel& model, const Dataset& data, std::uint64_t seed);

/// Sampled shift magnitude for a latent from its tracked minimal cycle.
long sample_shift(const Tensor& latent, double fps, Rng& rng);

}  // namespace v2m::cli
