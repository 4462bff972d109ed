#include "v2m/cli/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <ostream>
#include <set>

#include "v2m/core/error.hpp"
#include "v2m/core/ops.hpp"
#include "v2m/core/serialize.hpp"
#include "v2m/core/wav.hpp"

namespace v2m::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Tensor stack(const std::vector<const Tensor*>& parts) {
  Shape shape = parts.front()->shape();
  shape.insert(shape.begin(), parts.size());
  Tensor out(shape);
  std::size_t off = 0;
  for (const Tensor* t : parts) {
    if (t->shape() != parts.front()->shape()) throw DimensionError("stack: shapes differ");
    std::copy(t->data().begin(), t->data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += t->size();
  }
  return out;
}

json read_meta(const io::Bundle& b, const fs::path& path, const std::string& kind) {
  if (b.meta.value("kind", std::string()) != kind) {
    throw InputError(path.string() + " is not a " + kind + " checkpoint");
  }
  return b.meta;
}

void check_finite(double loss, const char* stage, std::size_t step) {
  if (!std::isfinite(loss)) throw NumericError(std::string(stage) + " loss is not finite at step " + std::to_string(step));
}

struct Batch {
  std::size_t frames = 0;
  Tensor video;  // [B, N, L, C]
  Tensor cls;    // [B, N, C]
  Tensor music;  // [B, N, C_z]
};

Batch assemble(const std::vector<synth::SyntheticClip>& clips) {
  std::vector<const Tensor*> v, c, z;
  for (const synth::SyntheticClip& clip : clips) {
    v.push_back(&clip.video.data);
    c.push_back(&clip.cls.data);
    z.push_back(&clip.music);
  }
  return {clips.front().frames(), stack(v), stack(c), stack(z)};
}

std::optional<Var> cls_input(Graph& g, const adaptor::VisualAdaptor& a, const Tensor& cls) {
  if (!adaptor::needs_cls(a.config().strategy)) return std::nullopt;
  return g.constant(cls);
}

}  // namespace

nlohmann::json LossLog::to_json() const { return {{"steps", steps}, {"loss", losses}}; }

adaptor::AdaptorConfig adaptor_config(const Config& cfg, std::size_t patch_channels) {
  adaptor::AdaptorConfig a;
  a.strategy = adaptor::parse_strategy(cfg.get<std::string>("adaptor.strategy"));
  a.in_channels = patch_channels;
  a.model_dim = cfg.get<std::size_t>("adaptor.dim");
  a.heads = cfg.get<std::size_t>("adaptor.heads");
  a.gate_filters = cfg.get<std::size_t>("adaptor.gate_filters");
  const auto norm = cfg.get<std::string>("adaptor.sigmoid_norm");
  if (norm == "per_group") {
    a.sigmoid_norm = adaptor::SigmoidNorm::kPerGroup;
  } else if (norm == "pooled") {
    a.sigmoid_norm = adaptor::SigmoidNorm::kPooled;
  } else {
    throw ConfigError("adaptor.sigmoid_norm must be per_group or pooled");
  }
  if (a.model_dim == 0 || a.heads == 0 || a.model_dim % a.heads != 0) {
    throw ConfigError("adaptor.dim must be a positive multiple of adaptor.heads");
  }
  return a;
}

flowgen::DitConfig dit_config(const Config& cfg, std::size_t latent_channels) {
  flowgen::DitConfig d;
  d.latent_channels = latent_channels;
  d.cond_dim = cfg.get<std::size_t>("adaptor.dim");
  d.hidden = cfg.get<std::size_t>("model.hidden");
  d.layers = cfg.get<std::size_t>("model.layers");
  d.heads = cfg.get<std::size_t>("model.heads");
  d.ffn = cfg.get<std::size_t>("model.ffn");
  d.time_dim = cfg.get<std::size_t>("model.time_dim");
  if (d.heads == 0 || d.hidden % d.heads != 0 || (d.hidden / d.heads) % 2 != 0) {
    throw ConfigError("model.hidden / model.heads must be a positive even head width");
  }
  if (d.time_dim == 0 || d.time_dim % 2 != 0) throw ConfigError("model.time_dim must be positive and even");
  return d;
}

contrastive::EncoderConfig encoder_config(const Config& cfg, std::size_t latent_channels) {
  contrastive::EncoderConfig e;
  e.latent_channels = latent_channels;
  e.channels = cfg.get<std::size_t>("encoder.channels");
  e.freq_bins = cfg.get<std::size_t>("encoder.freq_bins");
  e.upsample = cfg.get<std::size_t>("encoder.upsample");
  if (e.channels == 0 || e.freq_bins == 0 || e.upsample == 0) throw ConfigError("encoder sizes must be positive");
  return e;
}

AdamWConfig optim_config(const Config& cfg, double lr) {
  AdamWConfig o;
  o.lr = lr;
  o.beta1 = cfg.get<double>("optim.beta1");
  o.beta2 = cfg.get<double>("optim.beta2");
  o.eps = cfg.get<double>("optim.eps");
  o.weight_decay = cfg.get<double>("optim.weight_decay");
  o.grad_clip = cfg.get<double>("optim.grad_clip");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  return o;
}

// ---- models -----------------------------------------------------------------

ContrastiveModel::ContrastiveModel(const Config& cfg, const synth::WorldConfig& w, Rng&& rng)
    : config(cfg),
      world(w),
      adaptor(adaptor_config(cfg, w.patch_channels), w.grid, store, rng),
      head(cfg.get<std::size_t>("encoder.channels"), cfg.get<std::size_t>("adaptor.dim"), store, rng),
      encoder(encoder_config(cfg, w.latent_channels)) {
  const double tau = cfg.get<double>("pretrain.tau_init");
  if (!(tau > 0.0)) throw ConfigError("pretrain.tau_init must be positive");
  store.add("log_tau", Tensor::scalar(std::log(tau)));
}

void ContrastiveModel::save(const fs::path& path) const {
  io::Bundle b;
  store.export_to(b);
  b.meta = {{"kind", "pretrain"}, {"config", config.json()}, {"world", world_to_json(world)}};
  io::write_bundle(path, b);
}

std::unique_ptr<ContrastiveModel> ContrastiveModel::load(const fs::path& path) {
  const io::Bundle b = io::read_bundle(path);
  const json meta = read_meta(b, path, "pretrain");
  Config cfg;
  synth::WorldConfig world;
  try {
    cfg.merge(meta.at("config"));
    world = world_from_json(meta.at("world"));
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  auto m = std::make_unique<ContrastiveModel>(cfg, world, 0);
  m->store.import_from(b);
  return m;
}

Tensor ContrastiveModel::embed_video(const adaptor::PatchFeatureSequence& video, const adaptor::ClsSequence& cls) const {
  return adaptor.adapt(video, &cls, video.frames(), world.fps).data;
}

Tensor ContrastiveModel::embed_music(const Tensor& latent, std::size_t frames) const {
  Tensor enc = encoder.encode(latent);
  Shape s = enc.shape();
  s.insert(s.begin(), 1);
  Graph g;
  Var out = head.forward(g, g.constant(std::move(enc).reshaped(s)), frames);
  return out.value().reshaped({out.dim(1), out.dim(2)});
}

double ContrastiveModel::sim_percent(const Tensor& latent, const adaptor::PatchFeatureSequence& video,
                                     const adaptor::ClsSequence& cls) const {
  const Tensor v = embed_video(video, cls);
  const Tensor m = embed_music(latent, video.frames());
  if (v.shape() != m.shape()) throw DimensionError("SIM: embedding shapes " + shape_str(m.shape()) + " and " + shape_str(v.shape()));
  return 100.0 * contrastive::sim(m, v);
}

GeneratorModel::GeneratorModel(const Config& cfg, const synth::WorldConfig& w, Rng&& rng)
    : config(cfg),
      world(w),
      adaptor(adaptor_config(cfg, w.patch_channels), w.grid, store, rng),
      dit(dit_config(cfg, w.latent_channels), store, rng) {}

void GeneratorModel::save(const fs::path& path) const {
  io::Bundle b;
  store.export_to(b);
  b.meta = {{"kind", "generator"},
            {"config", config.json()},
            {"world", world_to_json(world)},
            {"pretrained_adaptor", pretrained}};
  io::write_bundle(path, b);
}

std::unique_ptr<GeneratorModel> GeneratorModel::load(const fs::path& path) {
  const io::Bundle b = io::read_bundle(path);
  const json meta = read_meta(b, path, "generator");
  Config cfg;
  synth::WorldConfig world;
  try {
    cfg.merge(meta.at("config"));
    world = world_from_json(meta.at("world"));
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  auto m = std::make_unique<GeneratorModel>(cfg, world, 0);
  m->store.import_from(b);
  m->pretrained = meta.value("pretrained_adaptor", false);
  return m;
}

// ---- stage 1 ----------------------------------------------------------------

long sample_shift(const Tensor& latent, double fps, Rng& rng) {
  beat::TrackerConfig tc;
  tc.latent_fps = fps;
  const beat::BeatGrid grid = beat::track(beat::latent_envelope(latent, fps), tc);
  const contrastive::ShiftRule rule{grid.minimal_cycle_frames, static_cast<int>(latent.dim(0))};
  return rule.sample(rng);
}

LossLog pretrain(const Config& cfg, const Dataset& data, const fs::path& out, std::ostream& log) {
  const auto seed = cfg.get<std::uint64_t>("seed");
  const auto steps = cfg.get<std::size_t>("pretrain.steps");
  const auto m = cfg.get<std::size_t>("pretrain.batch");
  const auto log_every = std::max<std::size_t>(1, cfg.get<std::size_t>("pretrain.log_every"));
  const auto loss_kind = cfg.get<std::string>("pretrain.loss");
  const bool symmetric = cfg.get<bool>("pretrain.symmetric");
  if (loss_kind != "temporal" && loss_kind != "semantic") throw ConfigError("pretrain.loss must be temporal or semantic");
  if (m == 0 || m > data.clips.size()) {
    throw ConfigError("pretrain.batch must be between 1 and the number of clips (" + std::to_string(data.clips.size()) + ")");
  }
  const synth::SegmentSpec spec{cfg.get<double>("pretrain.window_min_s"), cfg.get<double>("pretrain.window_max_s")};

  ContrastiveModel model(cfg, data.world, Rng::derive(seed, 11));
  AdamW opt(optim_config(cfg, cfg.get<double>("pretrain.lr")));
  Rng rng(Rng::derive(seed, 12));
  const double fps = data.world.fps;
  LossLog history;

  for (std::size_t step = 1; step <= steps; ++step) {
    const std::vector<synth::SyntheticClip> batch = synth::sample_batch(data.clips, m, data.world, rng, spec);
    const Batch b = assemble(batch);
    const std::size_t n = b.frames;

    std::vector<Tensor> encoded;
    encoded.reserve(3 * m);
    for (const synth::SyntheticClip& c : batch) encoded.push_back(model.encoder.encode(c.music));
    for (const synth::SyntheticClip& c : batch) {
      try {
        encoded.push_back(model.encoder.encode(contrastive::apply_shift(c.music, sample_shift(c.music, fps, rng))));
      } catch (const FeasibilityError&) {
        encoded.push_back(model.encoder.silence(n));
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      try {
        if (m < 2) throw FeasibilityError("no donor");
        encoded.push_back(
            model.encoder.encode(contrastive::random_replacement(batch[i].music, batch[(i + 1) % m].music, rng).music));
      } catch (const FeasibilityError&) {
        encoded.push_back(model.encoder.silence(n));
      }
    }
    std::vector<const Tensor*> ptrs;
    for (const Tensor& t : encoded) ptrs.push_back(&t);

    Graph g;
    Var video = model.adaptor.forward(g, g.constant(b.video), cls_input(g, model.adaptor, b.cls), n);
    Var audio = model.head.forward(g, g.constant(stack(ptrs)), n);
    Var pos = slice(audio, 0, 0, m);
    Var log_tau = g.param(model.store.get("log_tau"));
    const contrastive::LossResult r =
        loss_kind == "temporal"
            ? contrastive::loss_temporal(pos, video, slice(audio, 0, m, 2 * m), slice(audio, 0, 2 * m, 3 * m), log_tau,
                                         symmetric)
            : contrastive::loss_semantic(pos, video, log_tau);
    const double loss = r.loss.value().item();
    check_finite(loss, "pretrain", step);
    g.backward(r.loss);
    opt.step(model.store);
    model.store.zero_grad();

    if (step % log_every == 0 || step == steps) {
      history.steps.push_back(step);
      history.losses.push_back(loss);
      log << "pretrain step " << step << "/" << steps << " loss " << loss << "\n";
    }
  }

  fs::create_directories(out);
  model.save(out / "pretrain.mvt");
  io::write_text(out / "loss.json", history.to_json().dump(2) + "\n");
  cfg.write_resolved(out);
  return history;
}

// ---- stage 2 ----------------------------------------------------------------

LossLog train(const Config& cfg, const Dataset& data, const std::optional<fs::path>& pretrained, const fs::path& out,
              std::ostream& log) {
  const auto seed = cfg.get<std::uint64_t>("seed");
  const auto steps = cfg.get<std::size_t>("train.steps");
  // From scratch means no pre-training of either network.
  const std::size_t uncond_steps = pretrained ? cfg.get<std::size_t>("train.uncond_steps") : 0;
  const auto bsz = cfg.get<std::size_t>("train.batch");
  const auto log_every = std::max<std::size_t>(1, cfg.get<std::size_t>("train.log_every"));
  if (bsz == 0 || bsz > data.clips.size()) {
    throw ConfigError("train.batch must be between 1 and the number of clips (" + std::to_string(data.clips.size()) + ")");
  }
  const synth::SegmentSpec spec{cfg.get<double>("train.window_min_s"), cfg.get<double>("train.window_max_s")};

  GeneratorModel model(cfg, data.world, Rng::derive(seed, 21));
  if (pretrained) {
    const io::Bundle b = io::read_bundle(*pretrained);
    read_meta(b, *pretrained, "pretrain");
    for (auto& [name, p] : model.store) {
      if (name.rfind("adaptor.", 0) != 0) continue;
      auto it = b.tensors.find(name);
      if (it == b.tensors.end() || it->second.shape() != p.value.shape()) {
        throw InputError(pretrained->string() + ": adaptor parameter '" + name + "' is missing or has another shape");
      }
      p.value = it->second;
    }
    model.pretrained = true;
  }

  flowgen::RfmConfig rc;
  rc.cond_drop = cfg.get<double>("train.cond_drop");
  rc.icl_prob = cfg.get<bool>("train.icl") ? cfg.get<double>("train.icl_prob") : 0.0;
  rc.fps = data.world.fps;
  if (rc.cond_drop < 0.0 || rc.cond_drop > 1.0 || rc.icl_prob < 0.0 || rc.icl_prob > 1.0) {
    throw ConfigError("train.cond_drop and train.icl_prob must lie in [0, 1]");
  }

  AdamW opt(optim_config(cfg, cfg.get<double>("train.lr")));
  Rng rng(Rng::derive(seed, 22));
  LossLog history;
  const std::size_t total = uncond_steps + steps;

  for (std::size_t step = 1; step <= total; ++step) {
    const bool uncond = step <= uncond_steps;
    const std::vector<synth::SyntheticClip> batch = synth::sample_batch(data.clips, bsz, data.world, rng, spec);
    const Batch b = assemble(batch);
    Graph g;
    std::optional<Var> cond;
    if (!uncond) cond = model.adaptor.forward(g, g.constant(b.video), cls_input(g, model.adaptor, b.cls), b.frames);
    const flowgen::RfmStep r = flowgen::rfm_loss(model.dit, g, b.music, cond, rc, rng);
    const double loss = r.loss.value().item();
    check_finite(loss, "train", step);
    g.backward(r.loss);
    opt.step(model.store, uncond ? "dit." : "");
    model.store.zero_grad();

    if (step % log_every == 0 || step == total) {
      history.steps.push_back(step);
      history.losses.push_back(loss);
      log << "train step " << step << "/" << total << (uncond ? " (unconditional)" : "") << " loss " << loss << "\n";
    }
  }

  fs::create_directories(out);
  model.save(out / "model.mvt");
  io::write_text(out / "loss.json", history.to_json().dump(2) + "\n");
  cfg.write_resolved(out);
  return history;
}

// ---- sampling ---------------------------------------------------------------

void sample(const Config& cfg, const fs::path& model_path, const Dataset& data, const fs::path& out, double prompt_s) {
  const std::unique_ptr<GeneratorModel> model = GeneratorModel::load(model_path);
  const auto seed = cfg.get<std::uint64_t>("seed");
  const auto runs = cfg.get<std::size_t>("sample.runs");
  const auto threads = cfg.get<std::size_t>("threads");
  flowgen::SamplerConfig sc;
  sc.steps = cfg.get<std::size_t>("sample.ode_steps");
  sc.guidance = cfg.get<double>("sample.cfg_scale");
  if (runs == 0 || sc.steps == 0) throw ConfigError("sample.runs and sample.ode_steps must be positive");
  if (prompt_s < 0.0) throw ConfigError("prompt length must be non-negative");
  const std::size_t cz = model->world.latent_channels;

  for (std::size_t r = 0; r < runs; ++r) {
    const fs::path dir = out / ("run" + std::to_string(r));
    fs::create_directories(dir);
    parallel_for(data.clips.size(), threads, [&](std::size_t i) {
      const synth::SyntheticClip& clip = data.clips[i];
      const std::size_t n = clip.frames();
      const Tensor cond = model->adaptor.adapt(clip.video, &clip.cls, n, data.world.fps).data;
      Rng rng(Rng::derive(Rng::derive(seed, 1000 + r), i));
      Tensor z0({n, cz});
      for (double& v : z0.data()) v = rng.normal();
      const auto p = std::min<std::size_t>(static_cast<std::size_t>(std::lround(prompt_s * data.world.fps)), n - 1);
      Tensor prompt;
      if (p > 0) {
        prompt = Tensor({p, cz});
        std::copy_n(clip.music.data().begin(), p * cz, prompt.data().begin());
      }
      const Tensor z = flowgen::sample(model->dit, cond, sc, z0, p > 0 ? &prompt : nullptr);
      io::write_tensor(dir / (data.ids[i] + ".mvt"), z);
    });
  }
  cfg.write_resolved(out);
}

// ---- evaluation -------------------------------------------------------------

std::vector<double> beats_from_latent(const Tensor& latent, double fps, const beat::TrackerConfig& tracker) {
  beat::TrackerConfig tc = tracker;
  tc.latent_fps = fps;
  return beat::track(beat::latent_envelope(latent, fps), tc).beat_times;
}

std::vector<double> beats_from_file(const fs::path& path, const beat::TrackerConfig& tracker) {
  const std::string ext = path.extension().string();
  if (ext == ".json") {
    std::vector<double> beats;
    try {
      const json j = json::parse(io::read_text(path));
      beats = (j.is_array() ? j : j.at("beats_s")).get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw InputError(path.string() + ": " + e.what());
    }
    eval::validate_beats(beats);
    return beats;
  }
  if (ext == ".mvt") return beats_from_latent(io::read_tensor(path), tracker.latent_fps, tracker);
  if (ext == ".wav") {
    const io::Pcm pcm = io::read_wav(path);
    return beat::track(beat::onset_envelope(pcm.samples, pcm.sample_rate), tracker).beat_times;
  }
  throw InputError(path.string() + ": unsupported beat source (expected .json, .mvt or .wav)");
}

namespace {

bool beat_source(const fs::path& p) {
  const std::string e = p.extension().string();
  return fs::is_regular_file(p) && (e == ".json" || e == ".mvt" || e == ".wav") && p.filename() != "config.resolved.json";
}

std::vector<fs::path> sorted_entries(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

eval::Report evaluate(const Config& cfg, const fs::path& gen, const fs::path& ref,
                      const std::optional<fs::path>& sim_checkpoint, const std::optional<fs::path>& out,
                      std::ostream& log) {
  const double tol = cfg.get<double>("eval.tolerance_s");
  const auto threads = cfg.get<std::size_t>("threads");
  if (!(tol > 0.0)) throw ConfigError("eval.tolerance_s must be positive");

  std::optional<Dataset> data;
  std::map<std::string, std::vector<double>> refs;
  std::map<std::string, std::size_t> clip_index;
  beat::TrackerConfig tracker;
  if (is_dataset(ref)) {
    data = read_dataset(ref);
    tracker.latent_fps = data->world.fps;
    for (std::size_t i = 0; i < data->ids.size(); ++i) {
      refs[data->ids[i]] = data->clips[i].beat_times(data->world.fps);
      clip_index[data->ids[i]] = i;
    }
  } else {
    for (const fs::path& p : sorted_entries(ref))
      if (beat_source(p)) refs[p.stem().string()] = beats_from_file(p, tracker);
  }
  if (refs.empty()) throw InputError("no reference beats in " + ref.string());

  std::unique_ptr<ContrastiveModel> sim_model;
  if (sim_checkpoint) {
    if (!data) throw InputError("SIM needs a dataset reference with video features");
    sim_model = ContrastiveModel::load(*sim_checkpoint);
  }

  std::vector<fs::path> run_dirs;
  for (const fs::path& p : sorted_entries(gen))
    if (fs::is_directory(p)) run_dirs.push_back(p);
  if (run_dirs.empty()) run_dirs.push_back(gen);

  struct Item {
    std::size_t run;
    fs::path path;
  };
  std::vector<Item> items;
  for (std::size_t r = 0; r < run_dirs.size(); ++r) {
    std::size_t count = 0;
    for (const fs::path& p : sorted_entries(run_dirs[r])) {
      if (!beat_source(p)) continue;
      if (!refs.count(p.stem().string())) throw InputError("no reference for generated item " + p.string());
      items.push_back({r, p});
      ++count;
    }
    if (count == 0) throw InputError("no generated items in " + run_dirs[r].string());
  }

  std::vector<std::optional<eval::ClipScore>> scores(items.size());
  std::set<std::string> excluded;
  std::mutex excluded_mutex;
  parallel_for(items.size(), threads, [&](std::size_t k) {
    const Item& it = items[k];
    const std::string id = it.path.stem().string();
    const std::vector<double>& r = refs.at(id);
    if (r.empty()) {
      std::lock_guard lock(excluded_mutex);
      excluded.insert(id);
      return;
    }
    eval::ClipScore s;
    s.clip = id;
    s.run = it.run;
    if (sim_model && it.path.extension() == ".mvt") {
      const Tensor z = io::read_tensor(it.path);
      const synth::SyntheticClip& c = data->clips[clip_index.at(id)];
      s.sim = sim_model->sim_percent(z, c.video, c.cls);
      const std::vector<double> g = beats_from_latent(z, tracker.latent_fps, tracker);
      s.bcs = eval::bcs(g, r);
      s.bhs = eval::bhs(g, r, tol);
    } else {
      const std::vector<double> g = beats_from_file(it.path, tracker);
      s.bcs = eval::bcs(g, r);
      s.bhs = eval::bhs(g, r, tol);
    }
    scores[k] = std::move(s);
  });
  for (const std::string& id : excluded) log << "warning: clip " << id << " has no reference beats; excluded\n";

  std::vector<eval::ClipScore> rows;
  for (auto& s : scores)
    if (s) rows.push_back(std::move(*s));
  eval::Report report = eval::aggregate(std::move(rows), {excluded.begin(), excluded.end()});
  if (out) {
    fs::create_directories(*out);
    io::write_text(*out / "report.json", report.to_json().dump(2) + "\n");
    io::write_text(*out / "report.csv", report.to_csv());
    cfg.write_resolved(*out);
  }
  return report;
}

ContrastiveProbe probe_contrastive(const ContrastiveModel& model, const Dataset& data, std::uint64_t seed) {
  ContrastiveProbe p;
  const std::size_t n = data.clips.size();
  for (std::size_t i = 0; i < n; ++i) {
    const synth::SyntheticClip& c = data.clips[i];
    Rng rng(Rng::derive(seed, i));
    std::optional<Tensor> shifted, replaced;
    try {
      shifted = contrastive::apply_shift(c.music, sample_shift(c.music, data.world.fps, rng));
    } catch (const FeasibilityError&) {
    }
    for (std::size_t d = 1; d < n && !replaced; ++d) {
      try {
        replaced = contrastive::random_replacement(c.music, data.clips[(i + d) % n].music, rng).music;
      } catch (const FeasibilityError&) {
      }
    }
    if (!shifted || !replaced) continue;
    const Tensor v = model.embed_video(c.video, c.cls);
    const std::size_t f = c.frames();
    p.positive += 100.0 * contrastive::sim(model.embed_music(c.music, f), v);
    p.shifted += 100.0 * contrastive::sim(model.embed_music(*shifted, f), v);
    p.replaced += 100.0 * contrastive::sim(model.embed_music(*replaced, f), v);
    ++p.clips;
  }
  if (p.clips == 0) throw FeasibilityError("no clip admits both negatives");
  const auto k = static_cast<double>(p.clips);
  p.positive /= k;
  p.shifted /= k;
  p.replaced /= k;
  return p;
}

}  // namespace v2m::cli
