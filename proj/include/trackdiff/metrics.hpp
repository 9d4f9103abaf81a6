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

#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trackdiff/preprocess.hpp"
#include "trackdiff/song.hpp"

namespace trackdiff {

inline constexpr int kFeatureClasses = 16;

enum class Feature { pitch, dur, ioi };

std::string_view feature_name(Feature f);

struct FeatureHistogram {
  Feature feature = Feature::pitch;
  std::array<double, kFeatureClasses> bins{};
  double count = 0.0;

  // Adds other's bins; features must agree.
  void merge(const FeatureHistogram& other);
};

// pitch: floor(pitch / 8); dur: duration - 1, drums skipped; ioi: onset gap
// of consecutive notes (sorted by onset, pitch) of one track inside one bar,
// clamped to [0, 15].
FeatureHistogram feature_histogram(std::span<const Note> notes, Feature feature);

struct Pdf {
  std::array<double, kFeatureClasses> p{};
  double bandwidth = 0.0;
};

// Gaussian KDE over class indices, evaluated on the 16 class points and
// renormalized. Without a fixed bandwidth, h = max(0.5, sigma * n^(-1/5)) with
// the sample standard deviation (n - 1 denominator).
Pdf kde_pdf(const FeatureHistogram& hist, std::optional<double> bandwidth = std::nullopt);

inline constexpr double kKlSmoothing = 1e-9;

// sum p_i ln(p_i / q'_i), q' = (q + eps) renormalized. Any equal lengths.
double kl_divergence(std::span<const double> p, std::span<const double> q);

// Chords of one track, detected in isolation.
std::vector<Chord> track_chords(const Song& song, TrackRole track, const ChordModel& model = {});

// Fraction of matching (root and quality) chords over all tracks and bars.
// Throws "no chords" when there is nothing to compare.
double chord_accuracy(const std::vector<std::vector<Chord>>& generated,
                      const std::vector<std::vector<Chord>>& reference);

// Runs the detector on each listed track of both songs.
double chord_accuracy(const Song& generated, const Song& reference, std::span<const TrackRole> tracks,
                      const ChordModel& model = {});

}  // namespace trackdiff
