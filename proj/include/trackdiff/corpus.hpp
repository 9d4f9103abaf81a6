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

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trackdiff/track.hpp"

namespace trackdiff {

enum class Split { train, valid, test };

std::string_view split_name(Split s);

// 80/10/10 by a stable hash of (source, fragment) mixed with the seed.
Split assign_split(const std::string& source, int fragment, std::uint64_t seed);

struct ManifestEntry {
  std::string source;  // relative to the corpus directory
  int fragment = 0;
  std::string score;   // relative to the manifest file
  int bars = 0;
  std::vector<TrackRole> tracks;  // involved tracks
  Split split = Split::train;

  bool operator==(const ManifestEntry&) const = default;
};

struct CorpusManifest {
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;

  std::string to_json() const;
  static CorpusManifest from_json(const std::string& text);

  bool operator==(const CorpusManifest&) const = default;
};

// Training run settings. Optional model fields override the preset.
struct RunConfig {
  std::string manifest;
  std::string vocab;
  std::string out = "checkpoints";
  std::string preset = "toy";
  std::optional<int> d, d_model, n_layers, n_heads, diffusion_steps;
  double lambda = 0.001;
  double lr = 1e-4;
  std::int64_t warmup = 1000;
  std::int64_t decay_steps = 0;  // 0: decay to zero at train_steps
  int batch = 8;
  int epochs = 0;
  std::int64_t train_steps = 0;  // 0: derived from epochs
  std::int64_t valid_every = 1000;
  std::optional<std::uint64_t> seed;
  int threads = 1;

  // Fields present in the JSON object replace the current values.
  void merge_json(const std::string& text);
};

}  // namespace trackdiff
