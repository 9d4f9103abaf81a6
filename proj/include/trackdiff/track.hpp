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
#include <string_view>

namespace trackdiff {

// Canonical track order. Row pair of track i is (2i, 2i + 1).
enum class TrackRole : int { chord = 0, bass, drum, guitar, piano, string, melody };

inline constexpr int kNumTracks = 7;
inline constexpr int kNumRows = 2 * kNumTracks;
inline constexpr int kNumInstrumentTracks = kNumTracks - 1;
inline constexpr int kUnitsPerBar = 16;
inline constexpr int kMaxDuration = 16;
inline constexpr int kMaxWidth = 512;

inline constexpr std::array<TrackRole, kNumTracks> kAllTracks = {
    TrackRole::chord, TrackRole::bass,   TrackRole::drum,  TrackRole::guitar,
    TrackRole::piano, TrackRole::string, TrackRole::melody};

inline constexpr std::array<TrackRole, kNumInstrumentTracks> kInstrumentTracks = {
    TrackRole::bass,  TrackRole::drum,   TrackRole::guitar,
    TrackRole::piano, TrackRole::string, TrackRole::melody};

constexpr int track_index(TrackRole r) { return static_cast<int>(r); }
constexpr int pitch_row(TrackRole r) { return 2 * track_index(r); }
constexpr int duration_row(TrackRole r) { return 2 * track_index(r) + 1; }
constexpr TrackRole track_of_row(int row) { return static_cast<TrackRole>(row / 2); }
constexpr bool is_pitch_row(int row) { return row % 2 == 0; }

std::string_view track_name(TrackRole r);
std::optional<TrackRole> parse_track(std::string_view name);

}  // namespace trackdiff
