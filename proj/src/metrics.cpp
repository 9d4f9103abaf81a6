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

#include "trackdiff/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "trackdiff/error.hpp"

namespace trackdiff {

std::string_view feature_name(Feature f) {
  switch (f) {
    case Feature::pitch: return "pitch";
    case Feature::dur: return "dur";
    case Feature::ioi: return "ioi";
  }
  return "?";
}

void FeatureHistogram::merge(const FeatureHistogram& other) {
  if (other.feature != feature) throw Error("histogram feature mismatch");
  for (int i = 0; i < kFeatureClasses; ++i) bins[i] += other.bins[i];
  count += other.count;
}

FeatureHistogram feature_histogram(std::span<const Note> notes, Feature feature) {
  FeatureHistogram h;
  h.feature = feature;
  auto add = [&h](int cls) {
    h.bins[std::clamp(cls, 0, kFeatureClasses - 1)] += 1.0;
    h.count += 1.0;
  };
  if (feature == Feature::pitch) {
    for (const Note& n : notes) add(n.pitch / 8);
  } else if (feature == Feature::dur) {
    for (const Note& n : notes) {
      if (n.track != TrackRole::drum) add(n.duration - 1);
    }
  } else {
    std::vector<Note> sorted(notes.begin(), notes.end());
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 1; i < sorted.size(); ++i) {
      const Note& a = sorted[i - 1];
      const Note& b = sorted[i];
      if (a.track != b.track || a.onset / kUnitsPerBar != b.onset / kUnitsPerBar) continue;
      add(b.onset - a.onset);
    }
  }
  return h;
}

Pdf kde_pdf(const FeatureHistogram& hist, std::optional<double> bandwidth) {
  if (hist.count <= 0.0) throw Error("empty distribution");
  Pdf out;
  double h;
  if (bandwidth) {
    if (!(*bandwidth > 0.0)) throw Error("bandwidth must be positive");
    h = *bandwidth;
  } else {
    const double n = hist.count;
    double mean = 0.0;
    for (int i = 0; i < kFeatureClasses; ++i) mean += i * hist.bins[i];
    mean /= n;
    double ss = 0.0;
    for (int i = 0; i < kFeatureClasses; ++i) ss += hist.bins[i] * (i - mean) * (i - mean);
    const double sigma = n > 1.0 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    h = std::max(0.5, sigma * std::pow(n, -0.2));
  }
  out.bandwidth = h;
  double total = 0.0;
  for (int x = 0; x < kFeatureClasses; ++x) {
    double s = 0.0;
    for (int c = 0; c < kFeatureClasses; ++c) {
      if (hist.bins[c] == 0.0) continue;
      const double z = (x - c) / h;
      s += hist.bins[c] * std::exp(-0.5 * z * z);
    }
    out.p[x] = s;
    total += s;
  }
  for (double& v : out.p) v /= total;
  return out;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw Error("distribution length mismatch");
  double qsum = 0.0;
  for (double v : q) qsum += v + kKlSmoothing;
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    kl += p[i] * std::log(p[i] / ((q[i] + kKlSmoothing) / qsum));
  }
  return kl;
}

std::vector<Chord> track_chords(const Song& song, TrackRole track, const ChordModel& model) {
  Song only;
  only.bars = song.bars;
  for (const Note& n : song.notes) {
    if (n.track == track) only.notes.push_back(n);
  }
  return infer_chords(only, model);
}

double chord_accuracy(const std::vector<std::vector<Chord>>& generated,
                      const std::vector<std::vector<Chord>>& reference) {
  if (generated.size() != reference.size()) throw Error("track count mismatch");
  std::size_t total = 0, hits = 0;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    if (generated[i].size() != reference[i].size()) throw Error("bar count mismatch");
    for (std::size_t j = 0; j < generated[i].size(); ++j) {
      ++total;
      hits += generated[i][j] == reference[i][j];
    }
  }
  if (total == 0) throw Error("no chords");
  return static_cast<double>(hits) / static_cast<double>(total);
}

double chord_accuracy(const Song& generated, const Song& reference, std::span<const TrackRole> tracks,
                      const ChordModel& model) {
  if (generated.bars != reference.bars) throw Error("bar count mismatch");
  if (generated.bars == 0 || tracks.empty()) throw Error("no chords");
  std::vector<std::vector<Chord>> g, r;
  for (TrackRole t : tracks) {
    g.push_back(track_chords(generated, t, model));
    r.push_back(track_chords(reference, t, model));
  }
  return chord_accuracy(g, r);
}

}  // namespace trackdiff
