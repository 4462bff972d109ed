#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "v2m/cli/config.hpp"
#include "v2m/synth/synth.hpp"

namespace v2m::cli {

/// On disk: manifest.json plus clipNNNN/{video,cls,music}.mvt and beats.json.
struct Dataset {
  synth::WorldConfig world;
  std::uint64_t seed = 0;
  std::vector<std::string> ids;
  std::vector<synth::SyntheticClip> clips;
};

synth::WorldConfig world_from(const Config& cfg);
nlohmann::json world_to_json(const synth::WorldConfig& w);
synth::WorldConfig world_from_json(const nlohmann::json& j);

/// Clip i uses seed derive(seed, i) and a duration uniform in
/// [data.min_s, data.max_s]. Generation runs on `threads` workers.
Dataset synthesize(const Config& cfg, std::size_t clips, std::uint64_t seed, std::size_t threads);

void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& dir);
bool is_dataset(const std::filesystem::path& dir);

/// Runs fn(i) for i in [0, n) on up to `threads` workers; the first
/// exception is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace v2m::cli
