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

#include "trackdiff/score.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "trackdiff/error.hpp"

namespace trackdiff {

ScoreGrid::ScoreGrid(int width, int vocab_size, TokenId fill)
    : width_(width), vocab_size_(vocab_size),
      cells_(static_cast<std::size_t>(kNumRows) * static_cast<std::size_t>(width), fill) {
  if (width < 1 || width > kMaxWidth) throw Error("width out of range: " + std::to_string(width));
  marks_.fill(TrackMark::source);
}

void ScoreGrid::fill_track(TrackRole t, TokenId token) {
  for (int c = 0; c < width_; ++c) {
    at(pitch_row(t), c) = token;
    at(duration_row(t), c) = token;
  }
}

bool ScoreGrid::track_all(TrackRole t, TokenId token) const {
  for (int c = 0; c < width_; ++c) {
    if (at(pitch_row(t), c) != token || at(duration_row(t), c) != token) return false;
  }
  return true;
}

int ScoreGrid::count(TokenId token) const {
  return static_cast<int>(std::count(cells_.begin(), cells_.end(), token));
}

std::string write_score(const ScoreGrid& score) {
  std::ostringstream out;
  out << "GETSCORE v1\n";
  out << "K=" << score.vocab_size() << " L=" << score.width() << " rows=" << kNumRows << "\n";
  for (TrackRole t : kAllTracks) {
    if (t != TrackRole::chord) out << ' ';
    out << track_name(t) << '=' << mark_name(score.mark(t));
  }
  out << "\n";
  for (int r = 0; r < kNumRows; ++r) {
    for (int c = 0; c < score.width(); ++c) {
      if (c) out << ' ';
      out << score.at(r, c);
    }
    out << "\n";
  }
  return out.str();
}

namespace {

class LineReader {
 public:
  explicit LineReader(std::string_view text) : text_(text) {}

  std::string_view next() {
    if (pos_ >= text_.size()) throw ParseError("unexpected end");
    std::size_t end = text_.find('\n', pos_);
    if (end == std::string_view::npos) end = text_.size();
    std::string_view line = text_.substr(pos_, end - pos_);
    pos_ = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
};

int parse_int(std::string_view s, const char* what) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError(std::string("bad integer in ") + what + ": '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string_view field(std::string_view token, std::string_view key) {
  if (token.size() <= key.size() || token.substr(0, key.size()) != key || token[key.size()] != '=') {
    throw ParseError("expected field '" + std::string(key) + "'");
  }
  return token.substr(key.size() + 1);
}

}  // namespace

ScoreGrid read_score(std::string_view text) {
  LineReader lines(text);
  if (lines.next() != "GETSCORE v1") throw ParseError("bad magic");

  auto header = split(lines.next());
  if (header.size() != 3) throw ParseError("bad header line");
  const int k = parse_int(field(header[0], "K"), "K");
  const int width = parse_int(field(header[1], "L"), "L");
  const int rows = parse_int(field(header[2], "rows"), "rows");
  if (rows != kNumRows) throw ParseError("row count: expected 14, got " + std::to_string(rows));
  if (width < 1 || width > kMaxWidth) throw ParseError("width out of range");
  if (k < 3) throw ParseError("vocabulary size out of range");

  ScoreGrid score(width, k);
  auto flags = split(lines.next());
  if (flags.size() != kNumTracks) throw ParseError("bad track flag line");
  for (TrackRole t : kAllTracks) {
    std::string_view value = field(flags[track_index(t)], track_name(t));
    if (value == "src") score.set_mark(t, TrackMark::source);
    else if (value == "tgt") score.set_mark(t, TrackMark::target);
    else if (value == "empty") score.set_mark(t, TrackMark::empty);
    else throw ParseError("bad track flag '" + std::string(value) + "'");
  }

  for (int r = 0; r < kNumRows; ++r) {
    auto ids = split(lines.next());
    if (static_cast<int>(ids.size()) != width) {
      throw ParseError("row " + std::to_string(r) + ": expected " + std::to_string(width) + " ids");
    }
    for (int c = 0; c < width; ++c) {
      const int id = parse_int(ids[c], "grid");
      if (id < 0 || id >= k) throw ParseError("token id out of range: " + std::to_string(id));
      score.at(r, c) = id;
    }
  }
  return score;
}

void save_score(const std::string& path, const ScoreGrid& score) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << write_score(score);
}

ScoreGrid load_score(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return read_score(buf.str());
}

}  // namespace trackdiff
