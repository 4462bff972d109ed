#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "v2m/contrastive/shift.hpp"
#include "v2m/core/error.hpp"
#include "v2m/synth/synth.hpp"

using namespace v2m;
using namespace v2m::synth;

namespace {

WorldConfig clean() {
  WorldConfig w;
  w.noise = 0.0;
  return w;
}

std::vector<double> shifted(const std::vector<double>& x, long s) {
  const auto n = static_cast<long>(x.size());
  std::vector<double> out(x.size());
  for (long t = 0; t < n; ++t) out[static_cast<std::size_t>(t)] = x[static_cast<std::size_t>(((t - s) % n + n) % n)];
  return out;
}

}  // namespace

TEST(GenPair, CleanImpulseTrain) {
  Rng rng(1);
  const SyntheticClip c = gen_pair(clean(), 12.0, rng);
  ASSERT_EQ(c.frames(), 120u);
  ASSERT_GE(c.beat_frames.size(), 2u);
  std::set<std::size_t> beats(c.beat_frames.begin(), c.beat_frames.end());
  for (std::size_t t = 0; t < c.frames(); ++t) EXPECT_EQ(c.music.at({t, 0}), beats.count(t) ? 1.0 : 0.0);
  for (std::size_t i = 1; i < c.beat_frames.size(); ++i) {
    EXPECT_EQ(c.beat_frames[i] - c.beat_frames[i - 1], static_cast<std::size_t>(c.period));
  }
  EXPECT_LT(c.beat_frames.front(), static_cast<std::size_t>(c.period));
}

TEST(GenPair, Deterministic) {
  Rng a(42), b(42);
  const SyntheticClip x = gen_pair(WorldConfig{}, 9.3, a), y = gen_pair(WorldConfig{}, 9.3, b);
  EXPECT_EQ(x.music, y.music);
  EXPECT_EQ(x.video.data, y.video.data);
  EXPECT_EQ(x.cls.data, y.cls.data);
  EXPECT_EQ(x.beat_frames, y.beat_frames);
}

TEST(GenPair, DurationBounds) {
  Rng rng(2);
  EXPECT_THROW(gen_pair(WorldConfig{}, 3.9, rng), InputError);
  EXPECT_THROW(gen_pair(WorldConfig{}, 30.5, rng), InputError);
  EXPECT_EQ(gen_pair(WorldConfig{}, 4.0, rng).frames(), 40u);
  EXPECT_EQ(gen_pair(WorldConfig{}, 30.0, rng).frames(), 300u);
}

TEST(GenPair, EventsInBothModalities) {
  Rng rng(3);
  const WorldConfig w = clean();
  const SyntheticClip c = gen_pair(w, 20.0, rng);
  ASSERT_GE(c.events.size(), 2u);
  for (const Event& e : c.events) {
    EXPECT_GE(c.music.at({e.frame, 1 + e.type}), 1.0);
    // The event patch departs from the other patches at the event frame.
    double diff = 0.0;
    const std::size_t other = (e.patch + 1) % w.grid.patches();
    for (std::size_t ch = 4; ch < w.patch_channels; ++ch) {
      diff += std::abs(c.video.data.at({e.frame, e.patch, ch}) - c.video.data.at({e.frame, other, ch}));
    }
    EXPECT_GT(diff, 0.0);
  }
  // Before any beat, tone channels stay silent.
  for (std::size_t t = 0; t < c.beat_frames.front(); ++t)
    for (std::size_t k = 1; k <= w.event_types; ++k) EXPECT_EQ(c.music.at({t, k}), 0.0);
}

TEST(GenPair, ShiftBy37LowersCorrelation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const SyntheticClip c = gen_pair(WorldConfig{}, 15.0, rng);
    const std::vector<double> m = music_onset_track(c.music, 6), v = event_track(c);
    EXPECT_LT(correlation(shifted(m, 37), v), correlation(m, v)) << "seed " << seed;
  }
}

TEST(GenPair, CleanPairsBeatEveryAdmissibleShift) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const SyntheticClip c = gen_pair(clean(), 6.0 + static_cast<double>(seed), rng);
    const std::vector<double> m = music_onset_track(c.music, 6), v = event_track(c);
    const double base = correlation(m, v);
    const contrastive::ShiftRule rule{c.period, static_cast<int>(c.frames())};
    for (int a : rule.magnitudes()) {
      EXPECT_LT(correlation(shifted(m, a), v), base);
      EXPECT_LT(correlation(shifted(m, -a), v), base);
    }
  }
}

TEST(GenPair, OddGridRejected) {
  WorldConfig w;
  w.grid = {3, 4};
  Rng rng(4);
  EXPECT_THROW(gen_pair(w, 5.0, rng), ConfigError);
}

TEST(Correlation, Basics) {
  const std::vector<double> a{1, 2, 3, 4}, b{2, 4, 6, 8}, c{4, 3, 2, 1}, flat{1, 1, 1, 1};
  EXPECT_NEAR(correlation(a, b), 1.0, 1e-12);
  EXPECT_NEAR(correlation(a, c), -1.0, 1e-12);
  EXPECT_EQ(correlation(a, flat), 0.0);
}

TEST(Crop, RebasesBeatsAndEvents) {
  Rng rng(5);
  const SyntheticClip c = gen_pair(WorldConfig{}, 20.0, rng);
  const SyntheticClip w = crop(c, 30, 50);
  EXPECT_EQ(w.frames(), 50u);
  EXPECT_EQ(w.music.at({0, 3}), c.music.at({30, 3}));
  EXPECT_EQ(w.video.data.at({49, 2, 1}), c.video.data.at({79, 2, 1}));
  for (std::size_t b : w.beat_frames) EXPECT_EQ(c.music.at({b + 30, 0}), w.music.at({b, 0}));
  for (const Event& e : w.events) EXPECT_LT(e.frame, 50u);
  EXPECT_THROW(crop(c, 190, 20), InputError);
}

TEST(Segment, SingleClipPool) {
  Rng rng(6);
  const std::vector<SyntheticClip> pool{gen_pair(WorldConfig{}, 25.0, rng)};
  std::set<std::size_t> lengths;
  for (int i = 0; i < 200; ++i) {
    const SyntheticClip s = sample_segment(pool, WorldConfig{}, rng);
    EXPECT_EQ(s.source, 0u);
    EXPECT_GE(s.frames(), 40u);
    EXPECT_LE(s.frames(), 250u);
    lengths.insert(s.frames());
  }
  EXPECT_GT(lengths.size(), 20u);
}

TEST(Segment, DurationWeightedSelection) {
  Rng rng(7);
  const std::vector<SyntheticClip> pool{gen_pair(WorldConfig{}, 10.0, rng), gen_pair(WorldConfig{}, 30.0, rng)};
  std::size_t first = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) first += sample_segment(pool, WorldConfig{}, rng).source == 0 ? 1 : 0;
  EXPECT_NEAR(static_cast<double>(first) / draws, 0.25, 0.03);
}

TEST(Segment, BatchDistinctSourcesSharedLength) {
  Rng rng(8);
  std::vector<SyntheticClip> pool;
  for (int i = 0; i < 6; ++i) pool.push_back(gen_pair(WorldConfig{}, 4.0 + 4.0 * i, rng));
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<SyntheticClip> b = sample_batch(pool, 5, WorldConfig{}, rng);
    std::set<std::size_t> ids;
    for (const SyntheticClip& c : b) {
      ids.insert(c.source);
      EXPECT_EQ(c.frames(), b.front().frames());
      EXPECT_LE(c.frames(), pool[c.source].frames());
      EXPECT_GE(c.frames(), 40u);
    }
    EXPECT_EQ(ids.size(), 5u);
  }
  EXPECT_THROW(sample_batch(pool, 7, WorldConfig{}, rng), InputError);
}

TEST(Click, TwentyClicksAt120) {
  std::vector<double> beats;
  for (int i = 0; i < 20; ++i) beats.push_back(0.5 * i);
  const int sr = 16000;
  const std::vector<double> pcm = render_click(beats, sr, 10.0);
  ASSERT_EQ(pcm.size(), 160000u);
  // Count runs of non-zero samples.
  std::size_t clicks = 0;
  double peak = 0.0;
  for (std::size_t i = 0; i < pcm.size(); ++i) {
    if (pcm[i] != 0.0 && (i == 0 || pcm[i - 1] == 0.0)) ++clicks;
    peak = std::max(peak, pcm[i]);
  }
  EXPECT_EQ(clicks, 20u);
  EXPECT_NEAR(peak, 0.9, 1e-3);
  // Halfway between two clicks is digital silence.
  for (std::size_t i = 4000; i < 8000; ++i) EXPECT_EQ(pcm[i], 0.0);
}
