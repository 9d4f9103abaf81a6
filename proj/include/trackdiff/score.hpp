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
#include <string>
#include <string_view>
#include <vector>

#include "trackdiff/track.hpp"
#include "trackdiff/vocabulary.hpp"

namespace trackdiff {

// How a track takes part in a score: ground truth, to be generated, or unused.
enum class TrackMark : int { source = 0, target, empty };

std::string_view mark_name(TrackMark m);

// A 14 x L grid of token ids, row-major, plus the per-track marks.
class ScoreGrid {
 public:
  ScoreGrid() = default;
  ScoreGrid(int width, int vocab_size, TokenId fill = kPad);

  int width() const { return width_; }
  int vocab_size() const { return vocab_size_; }

  TokenId at(int row, int col) const { return cells_[index(row, col)]; }
  TokenId& at(int row, int col) { return cells_[index(row, col)]; }

  TrackMark mark(TrackRole t) const { return marks_[track_index(t)]; }
  void set_mark(TrackRole t, TrackMark m) { marks_[track_index(t)] = m; }
  const std::array<TrackMark, kNumTracks>& marks() const { return marks_; }

  const std::vector<TokenId>& cells() const { return cells_; }
  std::vector<TokenId>& cells() { return cells_; }

  void fill_track(TrackRole t, TokenId token);
  bool track_all(TrackRole t, TokenId token) const;
  int count(TokenId token) const;

  bool operator==(const ScoreGrid&) const = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(col);
  }

  int width_ = 0;
  int vocab_size_ = 0;
  std::array<TrackMark, kNumTracks> marks_{};
  std::vector<TokenId> cells_;
};

// Line-oriented text format:
//   GETSCORE v1
//   K=<int> L=<int> rows=14
//   chord=src bass=tgt drum=empty ...
//   14 lines of L space-separated ids
std::string write_score(const ScoreGrid& score);
ScoreGrid read_score(std::string_view text);

void save_score(const std::string& path, const ScoreGrid& score);
ScoreGrid load_score(const std::string& path);

}  // namespace trackdiff
