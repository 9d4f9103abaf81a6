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

#include <algorithm>
#include <string>
#include <vector>

#include "trackdiff/codec.hpp"
#include "trackdiff/diffusion.hpp"
#include "trackdiff/random.hpp"
#include "trackdiff/song.hpp"

namespace trackdiff::testing {

inline int pitch_low(TrackRole t) {
  switch (t) {
    case TrackRole::bass: return 28;
    case TrackRole::drum: return 35;
    case TrackRole::melody: return 60;
    default: return 40;
  }
}

// Random song touching every track kind: compound groups, drums, chords.
inline Song random_song(Rng& rng, int bars, bool all_tracks = false) {
  Song s;
  s.bars = bars;
  if (all_tracks || rng.below(4) != 0) {
    for (int b = 0; b < bars; ++b) {
      s.chords.push_back(Chord{static_cast<int>(rng.below(12)), static_cast<int>(rng.below(8))});
    }
  }
  const int width = bars * kUnitsPerBar;
  for (TrackRole t : kInstrumentTracks) {
    if (!all_tracks && rng.below(5) == 0) continue;
    const int groups = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(width / 2)));
    for (int g = 0; g < groups; ++g) {
      const int onset = static_cast<int>(rng.below(static_cast<std::uint64_t>(width)));
      const int size = 1 + static_cast<int>(rng.below(t == TrackRole::melody ? 1 : 3));
      for (int i = 0; i < size; ++i) {
        Note n;
        n.track = t;
        n.onset = onset;
        n.pitch = pitch_low(t) + static_cast<int>(rng.below(24));
        n.duration = t == TrackRole::drum ? 0 : 1 + static_cast<int>(rng.below(16));
        s.notes.push_back(n);
      }
    }
  }
  if (s.notes.empty()) s.notes.push_back(Note{TrackRole::piano, 0, 60, 4});
  return s;
}

// Random but well-formed grid; every instrument track involved.
inline ScoreGrid random_grid(Rng& rng, int width, int vocab_size) {
  ScoreGrid g(width, vocab_size, kPad);
  for (int r = 0; r < kNumRows; ++r) {
    for (int c = 0; c < width; ++c) g.at(r, c) = 3 + static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab_size - 3)));
  }
  return g;
}

inline RoleMask all_roles(TrackMark m) {
  RoleMask r;
  r.roles.fill(m);
  return r;
}

// Fixed-logit stand-in for the network: logits depend on (row, col, token, t)
// and on the current tokens, so the sampler sees a changing input.
class HashPredictor : public X0Predictor {
 public:
  HashPredictor(int k, std::uint64_t seed) : k_(k), seed_(seed) {}
  int vocab_size() const override { return k_; }
  int max_width() const override { return kMaxWidth; }
  void predict(const ScoreGrid& xt, int t, const FlagGrid& flags, std::vector<double>& logits) const override {
    const int w = xt.width();
    logits.assign(static_cast<std::size_t>(kNumRows) * w * k_, 0.0);
    std::uint64_t ctx = 0;
    for (TokenId id : xt.cells()) ctx = mix64(ctx ^ static_cast<std::uint64_t>(id));
    for (int r = 0; r < kNumRows; ++r) {
      for (int c = 0; c < w; ++c) {
        Rng cell = Rng(seed_).fork({static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(c),
                                    static_cast<std::uint64_t>(t), ctx % 7, flags[r * w + c]});
        for (int j = 0; j < k_; ++j) logits[(static_cast<std::size_t>(r) * w + c) * k_ + j] = 3.0 * cell.uniform();
      }
    }
  }

 private:
  int k_;
  std::uint64_t seed_;
};

}  // namespace trackdiff::testing
