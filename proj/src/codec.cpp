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

#include "trackdiff/codec.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "trackdiff/error.hpp"

namespace trackdiff {

NoteGroup merge_group(std::span<const Note> notes) {
  if (notes.empty()) throw Error("inconsistent group: no notes");
  const Note& first = notes.front();
  std::map<int, int> duration_counts;
  NoteGroup group;
  for (const Note& n : notes) {
    if (n.track != first.track || n.onset != first.onset) throw Error("inconsistent group");
    group.pitches.push_back(n.pitch);
    ++duration_counts[n.duration];
  }
  std::sort(group.pitches.begin(), group.pitches.end());
  group.pitches.erase(std::unique(group.pitches.begin(), group.pitches.end()), group.pitches.end());

  // Ascending iteration with >= keeps the largest duration among tied counts.
  int best_count = 0;
  for (const auto& [duration, count] : duration_counts) {
    if (count >= best_count) {
      best_count = count;
      group.duration = duration;
    }
  }
  return group;
}

namespace {

// Sorted notes -> contiguous (track, onset) runs.
template <typename Fn>
void for_each_group(std::vector<Note> notes, Fn&& fn) {
  std::sort(notes.begin(), notes.end());
  std::size_t i = 0;
  while (i < notes.size()) {
    std::size_t j = i;
    while (j < notes.size() && notes[j].track == notes[i].track && notes[j].onset == notes[i].onset) ++j;
    fn(std::span<const Note>(notes.data() + i, j - i));
    i = j;
  }
}

}  // namespace

Song canonicalize(const Song& song) {
  Song out = song;
  out.notes.clear();
  for_each_group(song.notes, [&](std::span<const Note> group) {
    NoteGroup merged = merge_group(group);
    for (int p : merged.pitches) {
      out.notes.push_back(Note{group.front().track, group.front().onset, p, merged.duration});
    }
  });
  return out;
}

ScoreGrid encode(const Song& song, const Vocabulary& vocab, int width) {
  if (width < 1 || width > kMaxWidth) throw Error("width out of range: " + std::to_string(width));
  ScoreGrid score(width, vocab.size(), kPad);

  std::array<bool, kNumTracks> involved{};
  for (const Note& n : song.notes) {
    if (n.onset < 0 || n.onset >= width) {
      throw Error("out of range: onset " + std::to_string(n.onset) + " on track " +
                  std::string(track_name(n.track)));
    }
    if (n.track == TrackRole::chord) throw Error("notes cannot be placed on the chord track");
    const bool drum = n.track == TrackRole::drum;
    if (drum ? n.duration != 0 : (n.duration < 1 || n.duration > kMaxDuration)) {
      throw Error("bad duration " + std::to_string(n.duration) + " on track " +
                  std::string(track_name(n.track)));
    }
    involved[track_index(n.track)] = true;
  }

  for_each_group(song.notes, [&](std::span<const Note> group) {
    const Note& head = group.front();
    NoteGroup merged = merge_group(group);
    auto token = vocab.pitch_token(head.track, merged.pitches);
    if (!token) {
      throw Error("out-of-vocabulary pitch tuple on track " + std::string(track_name(head.track)) +
                  " at onset " + std::to_string(head.onset));
    }
    score.at(pitch_row(head.track), head.onset) = *token;
    score.at(duration_row(head.track), head.onset) = duration_token(merged.duration);
  });

  for (TrackRole t : kInstrumentTracks) {
    if (!involved[track_index(t)]) {
      score.fill_track(t, kEmpty);
      score.set_mark(t, TrackMark::empty);
    }
  }

  if (song.chords.empty()) {
    score.fill_track(TrackRole::chord, kEmpty);
    score.set_mark(TrackRole::chord, TrackMark::empty);
  } else {
    for (int c = 0; c < width; ++c) {
      std::size_t bar = std::min<std::size_t>(c / kUnitsPerBar, song.chords.size() - 1);
      score.at(pitch_row(TrackRole::chord), c) = chord_root_token(song.chords[bar].root);
      score.at(duration_row(TrackRole::chord), c) = chord_quality_token(song.chords[bar].quality);
    }
  }
  return score;
}

Song decode(const ScoreGrid& score, const Vocabulary& vocab, DecodeOptions options) {
  if (score.vocab_size() != vocab.size()) throw CompatibilityError("vocab mismatch");
  if (score.count(kMask) > 0) throw Error("undenoised score");

  const int width = score.width();
  Song song;
  song.bars = (width + kUnitsPerBar - 1) / kUnitsPerBar;

  auto malformed = [&](const std::string& what, int row, int col) {
    if (!options.lenient) {
      throw Error(what + " at row " + std::to_string(row) + " column " + std::to_string(col));
    }
  };

  if (!score.track_all(TrackRole::chord, kEmpty)) {
    const int root_row = pitch_row(TrackRole::chord);
    const int quality_row = duration_row(TrackRole::chord);
    for (int bar = 0; bar < song.bars; ++bar) {
      const int col = bar * kUnitsPerBar;
      TokenInfo root = vocab.classify(score.at(root_row, col));
      TokenInfo quality = vocab.classify(score.at(quality_row, col));
      if (root.cls != TokenClass::chord_root || quality.cls != TokenClass::chord_quality) {
        malformed("malformed chord", root_row, col);
        song.chords.push_back(song.chords.empty() ? Chord{} : song.chords.back());
        continue;
      }
      song.chords.push_back(Chord{root.value, quality.value});
    }
  }

  for (TrackRole track : kInstrumentTracks) {
    const int prow = pitch_row(track);
    const int drow = duration_row(track);
    for (int c = 0; c < width; ++c) {
      const TokenId p = score.at(prow, c);
      const TokenId d = score.at(drow, c);
      if (p == kEmpty || p == kPad) continue;
      TokenInfo pitch = vocab.classify(p);
      TokenInfo dur = vocab.classify(d);
      if (pitch.cls != TokenClass::pitch || pitch.track != track) {
        malformed("malformed pair: bad pitch token", prow, c);
        continue;
      }
      if (dur.cls != TokenClass::duration) {
        malformed("malformed pair", drow, c);
        continue;
      }
      const bool drum = track == TrackRole::drum;
      if (drum != (dur.value == 0)) {
        malformed("malformed pair: duration class", drow, c);
        continue;
      }
      for (int pitch_value : vocab.pitch_tuple(p)) {
        song.notes.push_back(Note{track, c, pitch_value, dur.value});
      }
    }
  }
  std::sort(song.notes.begin(), song.notes.end());
  return song;
}

std::uint64_t count_combinations(int k) {
  if (k <= 0) throw Error("no tracks");
  if (k > 40) throw Error("too many tracks: " + std::to_string(k));
  std::uint64_t three = 1;
  std::uint64_t two = 1;
  for (int i = 0; i < k; ++i) {
    three *= 3;
    two *= 2;
  }
  return three - two;
}

}  // namespace trackdiff
