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
#include <span>
#include <utility>

#include "trackdiff/score.hpp"
#include "trackdiff/song.hpp"
#include "trackdiff/vocabulary.hpp"

namespace trackdiff {

struct NoteGroup {
  PitchTuple pitches;
  int duration = 0;
};

// Collapses simultaneous notes of one track into a compound pitch tuple and
// the modal duration (largest duration wins a frequency tie).
NoteGroup merge_group(std::span<const Note> notes);

// Places merged groups at (track, onset). Tracks without notes are filled with
// EMPTY and marked empty; the chord track is fully filled when chords exist.
ScoreGrid encode(const Song& song, const Vocabulary& vocab, int width);

struct DecodeOptions {
  // Lenient decoding drops malformed cells (generated content) instead of throwing.
  bool lenient = false;
};

Song decode(const ScoreGrid& score, const Vocabulary& vocab, DecodeOptions options = {});

// Number of valid source/target/empty assignments over k tracks: 3^k - 2^k.
std::uint64_t count_combinations(int k);

}  // namespace trackdiff
