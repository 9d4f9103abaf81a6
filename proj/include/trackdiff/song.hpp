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

#include <compare>
#include <cstdint>
#include <vector>

#include "trackdiff/track.hpp"

namespace trackdiff {

// One quantized note. Time is in 16th-note units; drums carry duration 0.
struct Note {
  TrackRole track = TrackRole::piano;
  int onset = 0;
  int pitch = 0;
  int duration = 1;

  auto operator<=>(const Note&) const = default;
};

inline constexpr int kNumChordRoots = 12;
inline constexpr int kNumChordQualities = 8;

enum class ChordQuality : int {
  major = 0, minor, diminished, augmented, major7, minor7, dominant, half_diminished
};

struct Chord {
  int root = 0;     // 0 = C ... 11 = B
  int quality = 0;  // ChordQuality as int

  auto operator<=>(const Chord&) const = default;
};

// The pre-tokenization form of a fragment or a whole piece (4/4, 16 units per bar).
struct Song {
  std::vector<Note> notes;
  int bars = 0;
  std::vector<Chord> chords;  // one per bar when present
  int key_shift = 0;          // semitones applied by key normalization

  bool operator==(const Song&) const = default;
};

// Merges same-track, same-onset notes per the grouping rule and sorts notes by
// (track, onset, pitch). Chords, bars and key shift are left untouched.
Song canonicalize(const Song& song);

}  // namespace trackdiff
