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

#include "trackdiff/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "trackdiff/error.hpp"

namespace trackdiff {

std::int64_t quantize_ticks(std::int64_t ticks, int ticks_per_beat) {
  if (ticks_per_beat <= 0) throw Error("ticks_per_beat must be positive");
  const std::int64_t num = ticks * 4;
  const std::int64_t den = ticks_per_beat;
  std::int64_t q = num / den;
  std::int64_t r = num % den;
  if (r < 0) {
    r += den;
    --q;
  }
  if (2 * r > den || (2 * r == den && (q & 1))) ++q;
  return q;
}

RawSong quantize(const RawSong& song) {
  RawSong out = song;
  out.ticks_per_beat = 4;
  for (RawTrack& track : out.tracks) {
    for (RawNote& n : track.notes) {
      n.onset = quantize_ticks(n.onset, song.ticks_per_beat);
      n.length = std::clamp<std::int64_t>(quantize_ticks(n.length, song.ticks_per_beat), 1, kMaxDuration);
    }
  }
  return out;
}

std::optional<TrackRole> program_role(int program) {
  if (program >= 32 && program <= 39) return TrackRole::bass;
  if (program >= 24 && program <= 31) return TrackRole::guitar;
  if ((program >= 0 && program <= 7) || (program >= 16 && program <= 23)) return TrackRole::piano;
  if (program >= 40 && program <= 51) return TrackRole::string;
  return std::nullopt;
}

double monophony_ratio(const std::vector<RawNote>& notes) {
  if (notes.empty()) return 0.0;
  std::map<std::int64_t, int> per_onset;
  for (const RawNote& n : notes) ++per_onset[n.onset];
  int single = 0;
  for (const auto& [onset, count] : per_onset) single += count == 1;
  return static_cast<double>(single) / static_cast<double>(per_onset.size());
}

ClassifiedSong classify_tracks(const RawSong& quantized) {
  constexpr int kDrumChannel = 9;
  ClassifiedSong result;

  int melody = -1;
  double best_mean = -1.0;
  for (std::size_t i = 0; i < quantized.tracks.size(); ++i) {
    const RawTrack& t = quantized.tracks[i];
    if (t.channel == kDrumChannel || t.notes.empty()) continue;
    if (monophony_ratio(t.notes) < 0.9) continue;
    double mean = 0.0;
    for (const RawNote& n : t.notes) mean += n.key;
    mean /= static_cast<double>(t.notes.size());
    if (mean > best_mean) {
      best_mean = mean;
      melody = static_cast<int>(i);
    }
  }
  if (melody < 0) throw Error("no melody");

  Song& song = result.song;
  std::int64_t end = 0;
  for (std::size_t i = 0; i < quantized.tracks.size(); ++i) {
    const RawTrack& t = quantized.tracks[i];
    std::optional<TrackRole> role;
    if (t.channel == kDrumChannel) role = TrackRole::drum;
    else if (static_cast<int>(i) == melody) role = TrackRole::melody;
    else role = program_role(t.program);
    result.assignment.push_back(TrackAssignment{static_cast<int>(i), role});
    if (!role) continue;
    for (const RawNote& n : t.notes) {
      const bool drum = *role == TrackRole::drum;
      const int duration = drum ? 0 : static_cast<int>(std::clamp<std::int64_t>(n.length, 1, kMaxDuration));
      song.notes.push_back(Note{*role, static_cast<int>(n.onset), n.key, duration});
      end = std::max(end, n.onset + std::max(duration, 1));
    }
  }
  song.bars = static_cast<int>((end + kUnitsPerBar - 1) / kUnitsPerBar);
  std::sort(song.notes.begin(), song.notes.end());
  return result;
}

namespace {

constexpr std::array<double, 12> kMajorProfile = {6.35, 2.23, 3.48, 2.33, 4.38, 4.09,
                                                  2.52, 5.19, 2.39, 3.66, 2.29, 2.88};
constexpr std::array<double, 12> kMinorProfile = {6.33, 2.68, 3.52, 5.38, 2.60, 3.53,
                                                  2.54, 4.75, 3.98, 2.69, 3.34, 3.17};

double pearson(const std::array<double, 12>& x, const std::array<double, 12>& y) {
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / 12.0;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / 12.0;
  double sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < 12; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

int fold_pitch(int p) {
  while (p < 0) p += 12;
  while (p > 127) p -= 12;
  return p;
}

}  // namespace

KeyEstimate estimate_key(const Song& song) {
  std::array<double, 12> hist{};
  double mass = 0.0;
  for (const Note& n : song.notes) {
    if (n.track == TrackRole::drum) continue;
    hist[n.pitch % 12] += n.duration;
    mass += n.duration;
  }
  KeyEstimate best;
  if (mass == 0.0) return best;
  best.correlation = -std::numeric_limits<double>::infinity();
  for (int minor = 0; minor < 2; ++minor) {
    const auto& profile = minor ? kMinorProfile : kMajorProfile;
    for (int tonic = 0; tonic < 12; ++tonic) {
      std::array<double, 12> rotated{};
      for (int pc = 0; pc < 12; ++pc) rotated[pc] = profile[(pc - tonic + 12) % 12];
      const double r = pearson(hist, rotated);
      if (r > best.correlation) best = KeyEstimate{tonic, minor == 1, r, 0};
    }
  }
  const int target = best.minor ? 9 : 0;
  int shift = ((target - best.tonic) % 12 + 12) % 12;
  if (shift > 6) shift -= 12;
  best.shift = shift;
  return best;
}

Song transpose(const Song& song, int semitones) {
  Song out = song;
  for (Note& n : out.notes) {
    if (n.track != TrackRole::drum) n.pitch = fold_pitch(n.pitch + semitones);
  }
  for (Chord& c : out.chords) c.root = ((c.root + semitones) % 12 + 12) % 12;
  out.key_shift = song.key_shift + semitones;
  std::sort(out.notes.begin(), out.notes.end());
  return out;
}

Song normalize_key(const Song& song) { return transpose(song, estimate_key(song).shift); }

namespace {

constexpr std::array<std::array<int, 12>, kNumChordQualities> kTemplates = {{
    {1, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0, 0},  // major
    {1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0},  // minor
    {1, 0, 0, 1, 0, 0, 1, 0, 0, 0, 0, 0},  // diminished
    {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0},  // augmented
    {1, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0, 1},  // major7
    {1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 1, 0},  // minor7
    {1, 0, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0},  // dominant
    {1, 0, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0},  // half-diminished
}};

bool bar_is_empty(const std::array<double, 12>& h) {
  return std::all_of(h.begin(), h.end(), [](double v) { return v == 0.0; });
}

double transition(int from, int to, const ChordModel& m) {
  return from == to ? std::log(m.p_stay) : std::log((1.0 - m.p_stay) / (kNumChordStates - 1));
}

}  // namespace

const std::array<int, 12>& chord_template(int quality) { return kTemplates.at(quality); }

Chord chord_state(int index) { return Chord{index / kNumChordQualities, index % kNumChordQualities}; }
int chord_index(const Chord& c) { return c.root * kNumChordQualities + c.quality; }

std::vector<std::array<double, 12>> bar_pitch_classes(const Song& song) {
  std::vector<std::array<double, 12>> bars(static_cast<std::size_t>(std::max(song.bars, 0)));
  for (const Note& n : song.notes) {
    if (n.track == TrackRole::drum) continue;
    const int end = n.onset + n.duration;
    for (int b = n.onset / kUnitsPerBar; b < song.bars && b * kUnitsPerBar < end; ++b) {
      const int lo = std::max(n.onset, b * kUnitsPerBar);
      const int hi = std::min(end, (b + 1) * kUnitsPerBar);
      if (hi > lo) bars[b][n.pitch % 12] += hi - lo;
    }
  }
  return bars;
}

double chord_emission(const std::array<double, 12>& h, int state, const ChordModel& model) {
  const Chord c = chord_state(state);
  const auto& tmpl = kTemplates[c.quality];
  double in = 0.0, out = 0.0;
  int size = 0;
  for (int pc = 0; pc < 12; ++pc) {
    const bool member = tmpl[(pc - c.root + 12) % 12] != 0;
    (member ? in : out) += h[pc];
    size += tmpl[pc];
  }
  return in - model.out_of_chord_weight * out - model.template_size_penalty * size;
}

double chord_path_score(const Song& song, const std::vector<Chord>& path, const ChordModel& model) {
  const auto bars = bar_pitch_classes(song);
  if (path.size() != bars.size()) throw Error("path length does not match bar count");
  std::size_t first = 0;
  while (first < bars.size() && bar_is_empty(bars[first])) {
    if (path[first] != Chord{}) return -std::numeric_limits<double>::infinity();
    ++first;
  }
  double score = 0.0;
  for (std::size_t b = first; b < bars.size(); ++b) {
    const int s = chord_index(path[b]);
    if (b > first) {
      const int prev = chord_index(path[b - 1]);
      if (bar_is_empty(bars[b]) && prev != s) return -std::numeric_limits<double>::infinity();
      score += transition(prev, s, model);
    }
    if (!bar_is_empty(bars[b])) score += chord_emission(bars[b], s, model);
  }
  return score;
}

std::vector<Chord> infer_chords(const Song& song, const ChordModel& model) {
  if (song.bars <= 0) throw Error("empty song");
  const auto bars = bar_pitch_classes(song);
  const std::size_t n = bars.size();
  std::vector<Chord> path(n, Chord{});

  std::size_t first = 0;
  while (first < n && bar_is_empty(bars[first])) ++first;
  if (first == n) return path;

  std::vector<std::array<int, kNumChordStates>> back(n);
  std::array<double, kNumChordStates> delta{};
  for (int s = 0; s < kNumChordStates; ++s) delta[s] = chord_emission(bars[first], s, model);

  for (std::size_t b = first + 1; b < n; ++b) {
    std::array<double, kNumChordStates> next{};
    if (bar_is_empty(bars[b])) {
      for (int s = 0; s < kNumChordStates; ++s) {
        next[s] = delta[s] + transition(s, s, model);
        back[b][s] = s;
      }
    } else {
      for (int s = 0; s < kNumChordStates; ++s) {
        double best = -std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int p = 0; p < kNumChordStates; ++p) {
          const double v = delta[p] + transition(p, s, model);
          if (v > best) {
            best = v;
            arg = p;
          }
        }
        next[s] = best + chord_emission(bars[b], s, model);
        back[b][s] = arg;
      }
    }
    delta = next;
  }

  int state = static_cast<int>(std::max_element(delta.begin(), delta.end()) - delta.begin());
  for (std::size_t b = n; b-- > first;) {
    path[b] = chord_state(state);
    if (b > first) state = back[b][state];
  }
  return path;
}

std::vector<Song> segment(const Song& song, int max_bars) {
  if (max_bars <= 0) throw Error("max_bars must be positive");
  std::vector<Song> out;
  for (int start_bar = 0; start_bar < song.bars; start_bar += max_bars) {
    const int end_bar = std::min(song.bars, start_bar + max_bars);
    const int start = start_bar * kUnitsPerBar;
    const int end = end_bar * kUnitsPerBar;
    Song frag;
    frag.bars = end_bar - start_bar;
    frag.key_shift = song.key_shift;
    for (const Note& n : song.notes) {
      if (n.onset < start || n.onset >= end) continue;
      Note m = n;
      m.onset -= start;
      if (m.track != TrackRole::drum && n.onset + n.duration > end) m.duration = end - n.onset;
      frag.notes.push_back(m);
    }
    if (!song.chords.empty()) {
      for (int b = start_bar; b < end_bar; ++b) {
        frag.chords.push_back(song.chords[std::min<std::size_t>(b, song.chords.size() - 1)]);
      }
    }
    out.push_back(std::move(frag));
  }
  return out;
}

std::string_view filter_reason_name(FilterReason r) {
  switch (r) {
    case FilterReason::kept: return "kept";
    case FilterReason::too_few_notes: return "too_few_notes";
    case FilterReason::too_few_tracks: return "too_few_tracks";
    case FilterReason::multiple_tempos: return "multiple_tempos";
    case FilterReason::no_melody: return "no_melody";
    case FilterReason::unreadable: return "unreadable";
  }
  return "?";
}

IngestResult ingest_song(Song song, const std::vector<int>& tempos, const IngestOptions& options) {
  IngestResult result;
  if (std::set<int>(tempos.begin(), tempos.end()).size() > 1) {
    result.status = FilterReason::multiple_tempos;
    return result;
  }
  if (static_cast<int>(song.notes.size()) < options.filter.min_notes) {
    result.status = FilterReason::too_few_notes;
    return result;
  }
  std::set<TrackRole> roles;
  for (const Note& n : song.notes) roles.insert(n.track);
  if (!roles.count(TrackRole::melody)) {
    result.status = FilterReason::no_melody;
    return result;
  }
  if (static_cast<int>(roles.size()) < options.filter.min_tracks) {
    result.status = FilterReason::too_few_tracks;
    return result;
  }

  Song normalized = normalize_key(song);
  if (normalized.chords.empty()) normalized.chords = infer_chords(normalized, options.chords);
  result.key_shift = normalized.key_shift;
  result.fragments = segment(normalized, options.max_bars);
  return result;
}

IngestResult ingest_file(const std::string& path, const IngestOptions& options) {
  auto ends_with = [&](std::string_view suffix) {
    return path.size() >= suffix.size() && path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  try {
    if (ends_with(".mid") || ends_with(".midi") || ends_with(".MID")) {
      const auto bytes = read_file_bytes(path);
      const RawSong raw = quantize(read_smf(bytes));
      ClassifiedSong classified;
      try {
        classified = classify_tracks(raw);
      } catch (const Error&) {
        IngestResult r;
        r.status = FilterReason::no_melody;
        return r;
      }
      return ingest_song(std::move(classified.song), raw.tempos, options);
    }
    const auto bytes = read_file_bytes(path);
    Song song = read_notelist(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    return ingest_song(std::move(song), {}, options);
  } catch (const Error& e) {
    IngestResult r;
    r.status = FilterReason::unreadable;
    r.message = e.what();
    return r;
  }
}

}  // namespace trackdiff
