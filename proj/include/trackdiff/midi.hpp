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
#include <string>
#include <string_view>
#include <vector>

#include "trackdiff/song.hpp"

namespace trackdiff {

enum class EventKind { note_on, note_off };

struct RawEvent {
  int channel = 0;  // 0-based; channel index 9 is GM percussion
  int program = 0;
  std::int64_t tick = 0;
  EventKind kind = EventKind::note_on;
  int key = 0;
  int velocity = 0;
};

struct RawNote {
  std::int64_t onset = 0;
  std::int64_t length = 0;
  int key = 0;
};

// Notes of one (SMF track, channel) stream with the program active at its first note.
struct RawTrack {
  int channel = 0;
  int program = 0;
  std::vector<RawNote> notes;
};

// Unquantized material as read from a file; times are in ticks.
struct RawSong {
  int ticks_per_beat = 480;
  std::vector<RawTrack> tracks;
  std::vector<int> tempos;  // microseconds per quarter, in file order
};

// Standard MIDI File, formats 0 and 1, ticks-per-quarter division only.
RawSong read_smf(std::span<const std::uint8_t> bytes);

// Writes a format-1 file: one conductor track, then one track per RawTrack.
std::vector<std::uint8_t> write_smf(const RawSong& song);

// Plain note list:
//   note <role> <onset> <pitch> <duration>
//   chord <bar> <root> <quality>
//   bars <n>
// A '#' at the start of a word starts a comment. Roots/qualities accept numbers or names (C#, minor7, ...).
Song read_notelist(std::string_view text);
std::string write_notelist(const Song& song);

// Converts a quantized song back to SMF material (division 4 ticks per beat
// scaled to 480). Roles map to fixed GM programs; drums go to channel index 9.
RawSong song_to_raw(const Song& song);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);

}  // namespace trackdiff
