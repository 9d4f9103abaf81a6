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
#include <string>
#include <vector>

#include "trackdiff/midi.hpp"
#include "trackdiff/song.hpp"

namespace trackdiff {

// Rounds ticks to 16th-note units, nearest with ties to even.
std::int64_t quantize_ticks(std::int64_t ticks, int ticks_per_beat);

// Onsets and lengths in 16th units (ticks_per_beat of the result is 4);
// lengths clamped to [1, 16].
RawSong quantize(const RawSong& song);

enum class ClassifyStatus { ok, no_melody };

struct TrackAssignment {
  int raw_track = 0;
  std::optional<TrackRole> role;  // nullopt: program outside every mapped range
};

struct ClassifiedSong {
  Song song;
  std::vector<TrackAssignment> assignment;
};

// GM program ranges -> roles; channel index 9 -> drum; melody is the
// highest-mean-pitch non-drum stream among those with monophony ratio >= 0.9.
// Throws "no melody" when no candidate exists. Input must be quantized.
ClassifiedSong classify_tracks(const RawSong& quantized);

// Fraction of onset groups that hold exactly one note.
double monophony_ratio(const std::vector<RawNote>& notes);

std::optional<TrackRole> program_role(int program);

struct KeyEstimate {
  int tonic = 0;  // pitch class
  bool minor = false;
  double correlation = 0.0;
  int shift = 0;  // semitones that move the tonic to C (major) or A (minor)
};

// Pearson correlation against the 24 Krumhansl-Schmuckler profiles over a
// duration-weighted pitch-class histogram of non-drum notes.
KeyEstimate estimate_key(const Song& song);
Song normalize_key(const Song& song);
Song transpose(const Song& song, int semitones);  // drums untouched

struct ChordModel {
  double p_stay = 0.5;
  double out_of_chord_weight = 1.0;
  double template_size_penalty = 1e-3;  // prefers triads over sevenths on exact ties
};

inline constexpr int kNumChordStates = kNumChordRoots * kNumChordQualities;

const std::array<int, 12>& chord_template(int quality);  // 1 where the pitch class is in the chord
Chord chord_state(int index);
int chord_index(const Chord& chord);

// Duration-weighted pitch-class mass per bar (16th units), non-drum notes.
std::vector<std::array<double, 12>> bar_pitch_classes(const Song& song);
double chord_emission(const std::array<double, 12>& histogram, int state, const ChordModel& model);

// Log score of a full path under the emission/transition model used by infer_chords.
double chord_path_score(const Song& song, const std::vector<Chord>& path, const ChordModel& model = {});

// Viterbi over 96 chord states, one chord per bar. Empty bars keep the
// previous chord; leading empty bars are C major. Throws "empty song" for zero bars.
std::vector<Chord> infer_chords(const Song& song, const ChordModel& model = {});

// Non-overlapping windows of at most max_bars bars. Notes crossing a window
// end are shortened to it.
std::vector<Song> segment(const Song& song, int max_bars = 32);

struct FilterConfig {
  int min_notes = 16;
  int min_tracks = 2;
};

enum class FilterReason { kept, too_few_notes, too_few_tracks, multiple_tempos, no_melody, unreadable };

std::string_view filter_reason_name(FilterReason r);

struct IngestResult {
  FilterReason status = FilterReason::kept;
  std::string message;
  std::vector<Song> fragments;  // key-normalized, chords inferred
  int key_shift = 0;
};

struct IngestOptions {
  int max_bars = 32;
  FilterConfig filter;
  ChordModel chords;
};

// Whole per-file pipeline: parse, quantize, classify, filter, key-normalize,
// infer chords (unless the file supplies them), segment. Files ending in
// .mid/.midi are parsed as SMF, everything else as a note list.
IngestResult ingest_file(const std::string& path, const IngestOptions& options = {});
IngestResult ingest_song(Song song, const std::vector<int>& tempos, const IngestOptions& options = {});

}  // namespace trackdiff
