#include "v2m/cli/dataset.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

#include "v2m/core/error.hpp"
#include "v2m/core/serialize.hpp"

namespace v2m::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string clip_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip%04zu", i);
  return buf;
}

}  // namespace

json world_to_json(const synth::WorldConfig& w) {
  return {{"fps", w.fps},
          {"latent_channels", w.latent_channels},
          {"grid", {w.grid.h, w.grid.w}},
          {"patch_channels", w.patch_channels},
          {"period_min", w.period_min},
          {"period_max", w.period_max},
          {"event_prob", w.event_prob},
          {"event_types", w.event_types},
          {"noise", w.noise},
          {"world_seed", w.world_seed}};
}

synth::WorldConfig world_from_json(const json& j) {
  synth::WorldConfig w;
  w.fps = j.at("fps").get<double>();
  w.latent_channels = j.at("latent_channels").get<std::size_t>();
  w.grid = {j.at("grid").at(0).get<std::size_t>(), j.at("grid").at(1).get<std::size_t>()};
  w.patch_channels = j.at("patch_channels").get<std::size_t>();
  w.period_min = j.at("period_min").get<int>();
  w.period_max = j.at("period_max").get<int>();
  w.event_prob = j.at("event_prob").get<double>();
  w.event_types = j.at("event_types").get<std::size_t>();
  w.noise = j.at("noise").get<double>();
  w.world_seed = j.at("world_seed").get<std::uint64_t>();
  return w;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex m;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(m);
          if (!first) first = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

synth::WorldConfig world_from(const Config& cfg) {
  synth::WorldConfig w;
  w.noise = cfg.get<double>("data.noise");
  w.period_min = cfg.get<int>("data.period_min");
  w.period_max = cfg.get<int>("data.period_max");
  w.event_prob = cfg.get<double>("data.event_prob");
  return w;
}

Dataset synthesize(const Config& cfg, std::size_t clips, std::uint64_t seed, std::size_t threads) {
  if (clips == 0) throw ConfigError("need at least one clip");
  const double lo = cfg.get<double>("data.min_s"), hi = cfg.get<double>("data.max_s");
  if (!(lo >= 4.0 && hi <= 30.0 && lo <= hi)) throw ConfigError("data.min_s/max_s must satisfy 4 <= min <= max <= 30");
  Dataset ds;
  ds.world = world_from(cfg);
  ds.seed = seed;
  ds.clips.resize(clips);
  ds.ids.resize(clips);
  parallel_for(clips, threads, [&](std::size_t i) {
    Rng rng(Rng::derive(seed, i));
    const double dur = rng.uniform(lo, hi);
    ds.clips[i] = synth::gen_pair(ds.world, dur, rng);
    ds.clips[i].source = i;
    ds.ids[i] = clip_id(i);
  });
  return ds;
}

bool is_dataset(const fs::path& dir) { return fs::exists(dir / "manifest.json"); }

void write_dataset(const fs::path& dir, const Dataset& ds) {
  json clips = json::array();
  for (std::size_t i = 0; i < ds.clips.size(); ++i) {
    const synth::SyntheticClip& c = ds.clips[i];
    const fs::path d = dir / ds.ids[i];
    io::write_tensor(d / "video.mvt", c.video.data);
    io::write_tensor(d / "cls.mvt", c.cls.data);
    io::write_tensor(d / "music.mvt", c.music);
    json events = json::array();
    for (const synth::Event& e : c.events) events.push_back({{"frame", e.frame}, {"patch", e.patch}, {"type", e.type}});
    json beats = {{"beats_s", c.beat_times(ds.world.fps)},
                  {"beat_frames", c.beat_frames},
                  {"period", c.period},
                  {"events", events}};
    io::write_text(d / "beats.json", beats.dump(2) + "\n");
    clips.push_back({{"id", ds.ids[i]},
                     {"frames", c.frames()},
                     {"duration_s", c.duration(ds.world.fps)},
                     {"seed", Rng::derive(ds.seed, i)}});
  }
  json manifest = {{"format", "v2m-dataset-1"}, {"seed", ds.seed}, {"world", world_to_json(ds.world)}, {"clips", clips}};
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset read_dataset(const fs::path& dir) {
  if (!is_dataset(dir)) throw InputError("no dataset manifest in " + dir.string());
  Dataset ds;
  try {
    const json m = json::parse(io::read_text(dir / "manifest.json"));
    ds.world = world_from_json(m.at("world"));
    ds.seed = m.at("seed").get<std::uint64_t>();
    for (const json& c : m.at("clips")) ds.ids.push_back(c.at("id").get<std::string>());
  } catch (const json::exception& e) {
    throw InputError(dir.string() + "/manifest.json: " + e.what());
  }
  for (std::size_t i = 0; i < ds.ids.size(); ++i) {
    const fs::path d = dir / ds.ids[i];
    synth::SyntheticClip c;
    c.source = i;
    c.video = adaptor::PatchFeatureSequence{ds.world.grid, io::read_tensor(d / "video.mvt")};
    c.video.validate();
    c.cls = adaptor::ClsSequence{io::read_tensor(d / "cls.mvt")};
    c.music = io::read_tensor(d / "music.mvt");
    try {
      const json b = json::parse(io::read_text(d / "beats.json"));
      c.beat_frames = b.at("beat_frames").get<std::vector<std::size_t>>();
      c.period = b.at("period").get<int>();
      for (const json& e : b.at("events")) {
        c.events.push_back({e.at("frame").get<std::size_t>(), e.at("patch").get<std::size_t>(),
                            e.at("type").get<std::size_t>()});
      }
    } catch (const json::exception& e) {
      throw InputError((d / "beats.json").string() + ": " + e.what());
    }
    if (c.music.ndim() != 2 || c.music.dim(0) != c.video.frames() || c.cls.data.dim(0) != c.video.frames()) {
      throw InputError(ds.ids[i] + ": video, CLS and music frame counts differ");
    }
    ds.clips.push_back(std::move(c));
  }
  return ds;
}

}  // namespace v2m::cli
