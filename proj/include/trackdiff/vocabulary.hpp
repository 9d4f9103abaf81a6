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
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trackdiff/song.hpp"
#include "trackdiff/track.hpp"

namespace trackdiff {

using TokenId = std::int32_t;
using PitchTuple = std::vector<int>;  // sorted, unique

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kMask = 1;
inline constexpr TokenId kEmpty = 2;
inline constexpr TokenId kDurationOffset = 3;
inline constexpr int kNumDurationTokens = kMaxDuration + 1;  // 0..16, 0 is the drum duration
inline constexpr TokenId kChordRootOffset = kDurationOffset + kNumDurationTokens;
inline constexpr TokenId kChordQualityOffset = kChordRootOffset + kNumChordRoots;
inline constexpr TokenId kPitchOffset = kChordQualityOffset + kNumChordQualities;
static_assert(kPitchOffset == 40);

enum class TokenClass { pad, mask, empty, duration, chord_root, chord_quality, pitch };

struct TokenInfo {
  TokenClass cls = TokenClass::pad;
  TrackRole track = TrackRole::chord;  // meaningful for pitch tokens only
  int value = 0;  // duration value, chord root/quality, or index into the track's pitch table
};

// Global token-id space. Per-track pitch tables are laid out after the fixed
// tokens in canonical track order (bass, drum, guitar, piano, string, melody).
class Vocabulary {
 public:
  using Tables = std::array<std::vector<PitchTuple>, kNumTracks>;  // chord entry unused

  Vocabulary() = default;
  explicit Vocabulary(Tables tables);

  int size() const { return size_; }
  const std::vector<PitchTuple>& table(TrackRole track) const { return tables_[track_index(track)]; }
  TokenId table_offset(TrackRole track) const { return offsets_[track_index(track)]; }

  std::optional<TokenId> pitch_token(TrackRole track, const PitchTuple& tuple) const;
  const PitchTuple& pitch_tuple(TokenId id) const;

  // Total over [0, K); throws for ids outside it.
  TokenInfo classify(TokenId id) const;
  bool is_valid_for_row(TokenId id, int row) const;

  std::string to_json() const;
  static Vocabulary from_json(const std::string& text);

  bool operator==(const Vocabulary& o) const { return tables_ == o.tables_; }

 private:
  Tables tables_{};
  std::array<TokenId, kNumTracks> offsets_{};
  std::array<std::map<PitchTuple, TokenId>, kNumTracks> index_{};
  int size_ = kPitchOffset;
};

constexpr TokenId duration_token(int duration) { return kDurationOffset + duration; }
constexpr TokenId chord_root_token(int root) { return kChordRootOffset + root; }
constexpr TokenId chord_quality_token(int quality) { return kChordQualityOffset + quality; }

struct VocabularyReport {
  std::array<int, kNumTracks> unique_tuples{};
  std::array<std::int64_t, kNumTracks> occurrences{};
  int size = 0;
};

// Pitch tuples are ranked per track by descending frequency, ties by
// lexicographic tuple order. Throws "empty corpus" when no note exists.
Vocabulary build_vocabulary(const std::vector<Song>& corpus, VocabularyReport* report = nullptr);

}  // namespace trackdiff
