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

#include "trackdiff/track.hpp"

#include "trackdiff/score.hpp"

namespace trackdiff {

namespace {
constexpr std::array<std::string_view, kNumTracks> kTrackNames = {
    "chord", "bass", "drum", "guitar", "piano", "string", "melody"};
}

std::string_view track_name(TrackRole r) { return kTrackNames[track_index(r)]; }

std::optional<TrackRole> parse_track(std::string_view name) {
  for (int i = 0; i < kNumTracks; ++i) {
    if (kTrackNames[i] == name) return static_cast<TrackRole>(i);
  }
  return std::nullopt;
}

std::string_view mark_name(TrackMark m) {
  switch (m) {
    case TrackMark::source: return "src";
    case TrackMark::target: return "tgt";
    case TrackMark::empty: return "empty";
  }
  return "?";
}

}  // namespace trackdiff
