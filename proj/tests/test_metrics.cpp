/*
Copyright 2026 The trackdiff Authors. All rights reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "trackdiff/error.hpp"
#include "trackdiff/metrics.hpp"
#include "trackdiff/preprocess.hpp"

namespace trackdiff {
namespace {

TEST(Histogram, Classes) {
  const std::vector<Note> notes = {{TrackRole::piano, 0, 64, 3}, {TrackRole::piano, 6, 7, 16},
                                   {TrackRole::drum, 3, 36, 0}};
  const auto pitch = feature_histogram(notes, Feature::pitch);
  EXPECT_EQ(pitch.bins[8], 1.0);
  EXPECT_EQ(pitch.bins[0], 1.0);
  EXPECT_EQ(pitch.bins[4], 1.0);
  EXPECT_EQ(pitch.count, 3.0);
  const auto dur = feature_histogram(notes, Feature::dur);
  EXPECT_EQ(dur.count, 2.0);
  EXPECT_EQ(dur.bins[2], 1.0);
  EXPECT_EQ(dur.bins[15], 1.0);
}

TEST(Histogram, InterOnsetWithinBar) {
  const std::vector<Note> one = {{TrackRole::melody, 6, 72, 2}, {TrackRole::melody, 0, 70, 2}};
  const auto a = feature_histogram(one, Feature::ioi);
  EXPECT_EQ(a.count, 1.0);
  EXPECT_EQ(a.bins[6], 1.0);
  const std::vector<Note> across = {{TrackRole::melody, 14, 72, 2}, {TrackRole::melody, 18, 70, 2}};
  EXPECT_EQ(feature_histogram(across, Feature::ioi).count, 0.0);
  const std::vector<Note> tracks = {{TrackRole::melody, 0, 72, 2}, {TrackRole::bass, 4, 40, 2}};
  EXPECT_EQ(feature_histogram(tracks, Feature::ioi).count, 0.0);
  EXPECT_EQ(feature_histogram({}, Feature::ioi).count, 0.0);
}

TEST(Histogram, PermutationInvariant) {
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const Song s = testing::random_song(rng, 3);
    std::vector<Note> shuffled = s.notes;
    std::reverse(shuffled.begin(), shuffled.end());
    for (Feature f : {Feature::pitch, Feature::dur, Feature::ioi}) {
      const auto a = feature_histogram(s.notes, f);
      const auto b = feature_histogram(shuffled, f);
      EXPECT_EQ(a.bins, b.bins);
      double sum = 0;
      for (double v : a.bins) sum += v;
      EXPECT_EQ(sum, a.count);
    }
  }
}

// Kernel sum over the expanded sample list.
std::array<double, 16> kde_oracle(const std::vector<int>& samples, double* h_out) {
  const double n = static_cast<double>(samples.size());
  double mean = 0;
  for (int s : samples) mean += s;
  mean /= n;
  double var = 0;
  for (int s : samples) var += (s - mean) * (s - mean);
  const double sigma = samples.size() > 1 ? std::sqrt(var / (n - 1)) : 0.0;
  const double h = std::max(0.5, sigma * std::pow(n, -0.2));
  *h_out = h;
  std::array<double, 16> p{};
  double total = 0;
  for (int x = 0; x < 16; ++x) {
    for (int s : samples) p[x] += std::exp(-0.5 * ((x - s) / h) * ((x - s) / h));
    total += p[x];
  }
  for (double& v : p) v /= total;
  return p;
}

TEST(Kde, MatchesKernelSumOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    FeatureHistogram hist;
    std::vector<int> samples;
    const int n = 1 + static_cast<int>(rng.below(60));
    const int spread = 1 + static_cast<int>(rng.below(16));
    for (int i = 0; i < n; ++i) {
      const int c = static_cast<int>(rng.below(static_cast<std::uint64_t>(spread)));
      samples.push_back(c);
      hist.bins[c] += 1;
      hist.count += 1;
    }
    double h = 0;
    const auto want = kde_oracle(samples, &h);
    const Pdf got = kde_pdf(hist);
    EXPECT_NEAR(got.bandwidth, h, 1e-12);
    for (int i = 0; i < 16; ++i) ASSERT_NEAR(got.p[i], want[i], 1e-12);
  }
}

TEST(Kde, ExamplesAndErrors) {
  FeatureHistogram single;
  single.bins[5] = 10;
  single.count = 10;
  const Pdf p = kde_pdf(single);
  EXPECT_EQ(p.bandwidth, 0.5);
  EXPECT_EQ(std::max_element(p.p.begin(), p.p.end()) - p.p.begin(), 5);

  FeatureHistogram sym;
  sym.bins[4] = 7;
  sym.bins[11] = 7;
  sym.count = 14;
  const Pdf q = kde_pdf(sym);
  double sum = 0;
  for (int i = 0; i < 16; ++i) {
    EXPECT_NEAR(q.p[i], q.p[15 - i], 1e-9);
    sum += q.p[i];
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);

  try {
    kde_pdf(FeatureHistogram{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "empty distribution");
  }
}

TEST(Kde, FixedBandwidthDuplicationInvariant) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    FeatureHistogram h;
    for (int i = 0; i < 20; ++i) {
      h.bins[rng.below(16)] += 1;
      h.count += 1;
    }
    FeatureHistogram twice = h;
    twice.merge(h);
    const Pdf a = kde_pdf(h, 1.3);
    const Pdf b = kde_pdf(twice, 1.3);
    for (int i = 0; i < 16; ++i) EXPECT_NEAR(a.p[i], b.p[i], 1e-15);
  }
}

TEST(Kl, Examples) {
  const std::vector<double> p = {0.75, 0.25}, q = {0.5, 0.5};
  EXPECT_NEAR(kl_divergence(p, q), 0.75 * std::log(1.5) + 0.25 * std::log(0.5), 1e-8);
  EXPECT_NEAR(kl_divergence(p, q), 0.13081, 1e-4);
  EXPECT_NEAR(kl_divergence(p, p), 0.0, 1e-9);
  const std::vector<double> zero = {1.0, 0.0};
  EXPECT_TRUE(std::isfinite(kl_divergence(std::vector<double>{0.5, 0.5}, zero)));
}

TEST(Kl, GibbsInequalityOnRandomPairs) {
  Rng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> p(16), q(16);
    double sp = 0, sq = 0;
    for (int i = 0; i < 16; ++i) {
      p[i] = rng.uniform();
      q[i] = rng.uniform();
      sp += p[i];
      sq += q[i];
    }
    for (int i = 0; i < 16; ++i) {
      p[i] /= sp;
      q[i] /= sq;
    }
    EXPECT_GE(kl_divergence(p, q), -1e-9);
    EXPECT_NEAR(kl_divergence(p, p), 0.0, 1e-9);
  }
}

TEST(ChordAccuracy, CountsMatches) {
  const std::vector<std::vector<Chord>> ref = {{{0, 0}, {5, 0}, {7, 0}, {0, 0}}, {{9, 1}, {2, 1}, {7, 6}, {0, 0}}};
  auto gen = ref;
  EXPECT_EQ(chord_accuracy(gen, ref), 1.0);
  gen[0][1] = Chord{5, 1};   // quality differs
  gen[1][3] = Chord{1, 0};   // root differs
  EXPECT_DOUBLE_EQ(chord_accuracy(gen, ref), 0.75);
  auto short_gen = gen;
  short_gen[1].pop_back();
  EXPECT_THROW(chord_accuracy(short_gen, ref), Error);
  try {
    chord_accuracy(std::vector<std::vector<Chord>>{}, std::vector<std::vector<Chord>>{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "no chords");
  }
}

TEST(ChordAccuracy, IdenticalSongsScoreOne) {
  Rng rng(5);
  const std::vector<TrackRole> tracks = {TrackRole::bass, TrackRole::piano, TrackRole::melody};
  for (int i = 0; i < 10; ++i) {
    const Song s = testing::random_song(rng, 4, true);
    EXPECT_EQ(chord_accuracy(s, s, tracks), 1.0);
    EXPECT_EQ(track_chords(s, TrackRole::piano).size(), 4u);
  }
}

}  // namespace
}  // namespace trackdiff
