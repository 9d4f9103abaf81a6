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

#include "trackdiff/vocabulary.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>

#include "trackdiff/codec.hpp"
#include "trackdiff/error.hpp"

namespace trackdiff {

Vocabulary::Vocabulary(Tables tables) : tables_(std::move(tables)) {
  if (!tables_[track_index(TrackRole::chord)].empty()) {
    throw Error("chord track has no pitch table");
  }
  TokenId next = kPitchOffset;
  for (TrackRole t : kAllTracks) {
    const int ti = track_index(t);
    offsets_[ti] = next;
    for (std::size_t i = 0; i < tables_[ti].size(); ++i) {
      const PitchTuple& tuple = tables_[ti][i];
      if (tuple.empty()) throw Error("empty pitch tuple in table " + std::string(track_name(t)));
      if (!std::is_sorted(tuple.begin(), tuple.end()) ||
          std::adjacent_find(tuple.begin(), tuple.end()) != tuple.end()) {
        throw Error("pitch tuple not sorted/unique in table " + std::string(track_name(t)));
      }
      if (tuple.front() < 0 || tuple.back() > 127) throw Error("pitch out of range");
      if (!index_[ti].emplace(tuple, next + static_cast<TokenId>(i)).second) {
        throw Error("duplicate pitch tuple in table " + std::string(track_name(t)));
      }
    }
    next += static_cast<TokenId>(tables_[ti].size());
  }
  size_ = next;
}

std::optional<TokenId> Vocabulary::pitch_token(TrackRole track, const PitchTuple& tuple) const {
  const auto& idx = index_[track_index(track)];
  auto it = idx.find(tuple);
  if (it == idx.end()) return std::nullopt;
  return it->second;
}

const PitchTuple& Vocabulary::pitch_tuple(TokenId id) const {
  TokenInfo info = classify(id);
  if (info.cls != TokenClass::pitch) throw Error("not a pitch token: " + std::to_string(id));
  return tables_[track_index(info.track)][static_cast<std::size_t>(info.value)];
}

TokenInfo Vocabulary::classify(TokenId id) const {
  if (id < 0 || id >= size_) throw Error("token id out of range: " + std::to_string(id));
  if (id == kPad) return {TokenClass::pad};
  if (id == kMask) return {TokenClass::mask};
  if (id == kEmpty) return {TokenClass::empty};
  if (id < kChordRootOffset) return {TokenClass::duration, TrackRole::chord, id - kDurationOffset};
  if (id < kChordQualityOffset) return {TokenClass::chord_root, TrackRole::chord, id - kChordRootOffset};
  if (id < kPitchOffset) return {TokenClass::chord_quality, TrackRole::chord, id - kChordQualityOffset};
  // Offsets are ascending; the owning table is the last one starting at or before id.
  for (int ti = kNumTracks - 1; ti >= 0; --ti) {
    if (!tables_[ti].empty() && id >= offsets_[ti]) {
      return {TokenClass::pitch, static_cast<TrackRole>(ti), id - offsets_[ti]};
    }
  }
  throw Error("token id out of range: " + std::to_string(id));
}

bool Vocabulary::is_valid_for_row(TokenId id, int row) const {
  if (id < 0 || id >= size_) return false;
  if (id == kMask || id == kEmpty) return true;
  const TrackRole track = track_of_row(row);
  const TokenInfo info = classify(id);
  if (track == TrackRole::chord) {
    return is_pitch_row(row) ? info.cls == TokenClass::chord_root : info.cls == TokenClass::chord_quality;
  }
  if (info.cls == TokenClass::pad) return true;
  if (is_pitch_row(row)) return info.cls == TokenClass::pitch && info.track == track;
  if (info.cls != TokenClass::duration) return false;
  return track == TrackRole::drum ? info.value == 0 : info.value >= 1;
}

std::string Vocabulary::to_json() const {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["duration_offset"] = kDurationOffset;
  j["chord_offset"] = kChordRootOffset;
  nlohmann::ordered_json tracks = nlohmann::ordered_json::object();
  for (TrackRole t : kInstrumentTracks) tracks[std::string(track_name(t))] = tables_[track_index(t)];
  j["tracks"] = tracks;
  j["K"] = size_;
  return j.dump(1) + "\n";
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("vocabulary: ") + e.what());
  }
  try {
    if (j.at("version").get<int>() != 1) throw ParseError("vocabulary: unsupported version");
    if (j.at("duration_offset").get<int>() != kDurationOffset || j.at("chord_offset").get<int>() != kChordRootOffset) {
      throw ParseError("vocabulary: unexpected token layout");
    }
    Tables tables;
    for (const auto& [name, list] : j.at("tracks").items()) {
      auto track = parse_track(name);
      if (!track || *track == TrackRole::chord) throw ParseError("vocabulary: unknown track " + name);
      tables[track_index(*track)] = list.get<std::vector<PitchTuple>>();
    }
    Vocabulary vocab(std::move(tables));
    if (vocab.size() != j.at("K").get<int>()) throw ParseError("vocabulary: K does not match tables");
    return vocab;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("vocabulary: ") + e.what());
  }
}

Vocabulary build_vocabulary(const std::vector<Song>& corpus, VocabularyReport* report) {
  std::array<std::map<PitchTuple, std::int64_t>, kNumTracks> counts;
  for (const Song& song : corpus) {
    Song canon = canonicalize(song);
    std::size_t i = 0;
    while (i < canon.notes.size()) {
      std::size_t j = i;
      while (j < canon.notes.size() && canon.notes[j].track == canon.notes[i].track &&
             canon.notes[j].onset == canon.notes[i].onset) {
        ++j;
      }
      PitchTuple tuple;
      for (std::size_t k = i; k < j; ++k) tuple.push_back(canon.notes[k].pitch);
      ++counts[track_index(canon.notes[i].track)][tuple];
      i = j;
    }
  }

  Vocabulary::Tables tables;
  std::size_t total = 0;
  for (TrackRole t : kInstrumentTracks) {
    const auto& c = counts[track_index(t)];
    std::vector<std::pair<PitchTuple, std::int64_t>> ranked(c.begin(), c.end());
    // map order is lexicographic already; stable sort keeps it as the tie-break.
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    auto& table = tables[track_index(t)];
    for (auto& [tuple, n] : ranked) table.push_back(tuple);
    total += table.size();
  }
  if (total == 0) throw Error("empty corpus");

  Vocabulary vocab(std::move(tables));
  if (report) {
    *report = {};
    for (TrackRole t : kInstrumentTracks) {
      const int ti = track_index(t);
      report->unique_tuples[ti] = static_cast<int>(vocab.table(t).size());
      for (const auto& [tuple, n] : counts[ti]) report->occurrences[ti] += n;
    }
    report->size = vocab.size();
  }
  return vocab;
}

}  // namespace trackdiff
