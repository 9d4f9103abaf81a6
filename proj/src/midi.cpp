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

#include "trackdiff/midi.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <deque>
#include <fstream>
#include <map>
#include <sstream>

#include "trackdiff/error.hpp"

namespace trackdiff {

namespace {

constexpr int kDrumChannel = 9;

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool done() const { return pos_ >= bytes_.size(); }
  std::size_t pos() const { return pos_; }

  std::uint8_t u8() {
    if (pos_ >= bytes_.size()) throw ParseError("unexpected end");
    return bytes_[pos_++];
  }
  std::uint8_t peek() const {
    if (pos_ >= bytes_.size()) throw ParseError("unexpected end");
    return bytes_[pos_];
  }
  std::uint32_t be(int n) {
    std::uint32_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 8) | u8();
    return v;
  }
  std::uint32_t vlq() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7F);
      if (!(b & 0x80)) return v;
    }
    throw ParseError("variable-length quantity too long");
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw ParseError("unexpected end");
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<RawEvent> parse_track_events(std::span<const std::uint8_t> chunk, std::vector<int>& tempos) {
  ByteReader in(chunk);
  std::vector<RawEvent> events;
  std::array<int, 16> program{};
  std::int64_t tick = 0;
  std::uint8_t running = 0;
  while (!in.done()) {
    tick += in.vlq();
    std::uint8_t status = in.peek();
    if (status & 0x80) {
      in.u8();
    } else {
      if (!running) throw ParseError("data byte without running status");
      status = running;
    }

    if (status == 0xFF) {
      const std::uint8_t type = in.u8();
      const std::uint32_t len = in.vlq();
      auto data = in.take(len);
      if (type == 0x51 && len == 3) {
        tempos.push_back((data[0] << 16) | (data[1] << 8) | data[2]);
      } else if (type == 0x2F) {
        break;
      }
      continue;
    }
    if (status == 0xF0 || status == 0xF7) {
      in.take(in.vlq());
      continue;
    }
    if (status >= 0xF0) throw ParseError("unsupported system message");

    running = status;
    const int channel = status & 0x0F;
    switch (status & 0xF0) {
      case 0x80:
      case 0x90: {
        const int key = in.u8() & 0x7F;
        const int velocity = in.u8() & 0x7F;
        const bool on = (status & 0xF0) == 0x90 && velocity > 0;
        events.push_back(RawEvent{channel, program[channel], tick,
                                  on ? EventKind::note_on : EventKind::note_off, key, velocity});
        break;
      }
      case 0xA0:
      case 0xB0:
      case 0xE0:
        in.take(2);
        break;
      case 0xC0:
        program[channel] = in.u8() & 0x7F;
        break;
      case 0xD0:
        in.take(1);
        break;
      default:
        throw ParseError("bad status byte");
    }
  }
  return events;
}

}  // namespace

RawSong read_smf(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  if (bytes.size() < 4 || !std::equal(bytes.begin(), bytes.begin() + 4, "MThd")) {
    throw ParseError("bad header");
  }
  in.take(4);
  const std::uint32_t header_len = in.be(4);
  if (header_len < 6) throw ParseError("bad header length");
  auto header = in.take(header_len);
  const int format = (header[0] << 8) | header[1];
  const int ntracks = (header[2] << 8) | header[3];
  const int division = (header[4] << 8) | header[5];
  if (format == 2) throw ParseError("format 2 not supported");
  if (format > 2) throw ParseError("unknown format");
  if (division & 0x8000) throw ParseError("SMPTE division not supported");
  if (division == 0) throw ParseError("zero division");

  RawSong song;
  song.ticks_per_beat = division;
  int track_no = 0;
  while (!in.done() && track_no < ntracks) {
    auto id = in.take(4);
    const std::uint32_t len = in.be(4);
    auto chunk = in.take(len);
    if (!std::equal(id.begin(), id.end(), "MTrk")) continue;

    auto events = parse_track_events(chunk, song.tempos);
    std::map<int, RawTrack> by_channel;
    std::map<std::pair<int, int>, std::deque<RawEvent>> pending;
    for (const RawEvent& e : events) {
      auto key = std::make_pair(e.channel, e.key);
      if (e.kind == EventKind::note_on) {
        pending[key].push_back(e);
        continue;
      }
      auto it = pending.find(key);
      if (it == pending.end() || it->second.empty()) continue;  // stray note_off
      RawEvent on = it->second.front();
      it->second.pop_front();
      auto [slot, inserted] = by_channel.try_emplace(on.channel);
      if (inserted) {
        slot->second.channel = on.channel;
        slot->second.program = on.program;
      }
      slot->second.notes.push_back(RawNote{on.tick, e.tick - on.tick, on.key});
    }
    for (const auto& [key, queue] : pending) {
      if (!queue.empty()) {
        throw ParseError("unpaired note_on: channel " + std::to_string(key.first + 1) + " key " +
                         std::to_string(key.second) + " in track " + std::to_string(track_no));
      }
    }
    for (auto& [channel, track] : by_channel) {
      std::sort(track.notes.begin(), track.notes.end(),
                [](const RawNote& a, const RawNote& b) { return std::tie(a.onset, a.key) < std::tie(b.onset, b.key); });
      song.tracks.push_back(std::move(track));
    }
    ++track_no;
  }
  return song;
}

namespace {

void put_be(std::vector<std::uint8_t>& out, std::uint32_t v, int n) {
  for (int i = n - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t buf[5];
  int n = 0;
  buf[n++] = v & 0x7F;
  while (v >>= 7) buf[n++] = static_cast<std::uint8_t>((v & 0x7F) | 0x80);
  while (n) out.push_back(buf[--n]);
}

void put_chunk(std::vector<std::uint8_t>& out, const char* id, const std::vector<std::uint8_t>& body) {
  out.insert(out.end(), id, id + 4);
  put_be(out, static_cast<std::uint32_t>(body.size()), 4);
  out.insert(out.end(), body.begin(), body.end());
}

}  // namespace

std::vector<std::uint8_t> write_smf(const RawSong& song) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'M', 'T', 'h', 'd'});
  put_be(out, 6, 4);
  put_be(out, 1, 2);
  put_be(out, static_cast<std::uint32_t>(song.tracks.size() + 1), 2);
  put_be(out, static_cast<std::uint32_t>(song.ticks_per_beat), 2);

  std::vector<std::uint8_t> conductor;
  std::vector<int> tempos = song.tempos.empty() ? std::vector<int>{500000} : song.tempos;
  for (int tempo : tempos) {
    put_vlq(conductor, 0);
    conductor.insert(conductor.end(), {0xFF, 0x51, 0x03});
    put_be(conductor, static_cast<std::uint32_t>(tempo), 3);
  }
  conductor.insert(conductor.end(), {0x00, 0xFF, 0x2F, 0x00});
  put_chunk(out, "MTrk", conductor);

  for (const RawTrack& track : song.tracks) {
    struct Ev {
      std::int64_t tick;
      int order;  // note_off (0) sorts before note_on (1) at equal ticks
      int key;
    };
    std::vector<Ev> evs;
    for (const RawNote& n : track.notes) {
      evs.push_back({n.onset, 1, n.key});
      evs.push_back({n.onset + n.length, 0, n.key});
    }
    std::sort(evs.begin(), evs.end(),
              [](const Ev& a, const Ev& b) { return std::tie(a.tick, a.order, a.key) < std::tie(b.tick, b.order, b.key); });
    std::vector<std::uint8_t> body;
    put_vlq(body, 0);
    body.push_back(static_cast<std::uint8_t>(0xC0 | track.channel));
    body.push_back(static_cast<std::uint8_t>(track.program));
    std::int64_t last = 0;
    for (const Ev& e : evs) {
      put_vlq(body, static_cast<std::uint32_t>(e.tick - last));
      last = e.tick;
      body.push_back(static_cast<std::uint8_t>((e.order ? 0x90 : 0x80) | track.channel));
      body.push_back(static_cast<std::uint8_t>(e.key));
      body.push_back(e.order ? 100 : 0);
    }
    body.insert(body.end(), {0x00, 0xFF, 0x2F, 0x00});
    put_chunk(out, "MTrk", body);
  }
  return out;
}

namespace {

constexpr std::array<std::string_view, 12> kRootNames = {"C", "C#", "D", "D#", "E", "F",
                                                          "F#", "G", "G#", "A", "A#", "B"};
constexpr std::array<std::string_view, 8> kQualityNames = {
    "major", "minor", "diminished", "augmented", "major7", "minor7", "dominant", "half-diminished"};

int parse_number(std::string_view s, int line) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError("line " + std::to_string(line) + ": bad integer '" + std::string(s) + "'");
  }
  return v;
}

template <std::size_t N>
int parse_named(std::string_view s, const std::array<std::string_view, N>& names, int line) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<int>(i);
  }
  const int v = parse_number(s, line);
  if (v < 0 || v >= static_cast<int>(N)) throw ParseError("line " + std::to_string(line) + ": value out of range");
  return v;
}

}  // namespace

Song read_notelist(std::string_view text) {
  Song song;
  std::map<int, Chord> chords;
  int declared_bars = 0;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    // A comment starts at a '#' opening a word, so sharp root names like C# survive.
    for (std::size_t h = 0; h < line.size(); ++h) {
      if (line[h] == '#' && (h == 0 || line[h - 1] == ' ' || line[h - 1] == '\t')) {
        line = line.substr(0, h);
        break;
      }
    }

    std::vector<std::string_view> tok;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
      if (j > i) tok.push_back(line.substr(i, j - i));
      i = j;
    }
    if (tok.empty()) continue;

    const std::string where = "line " + std::to_string(line_no);
    if (tok[0] == "note") {
      if (tok.size() != 5) throw ParseError(where + ": expected 'note <role> <onset> <pitch> <duration>'");
      auto role = parse_track(tok[1]);
      if (!role || *role == TrackRole::chord) throw ParseError(where + ": unknown role '" + std::string(tok[1]) + "'");
      Note n{*role, parse_number(tok[2], line_no), parse_number(tok[3], line_no), parse_number(tok[4], line_no)};
      if (n.onset < 0) throw ParseError(where + ": negative onset");
      if (n.pitch < 0 || n.pitch > 127) throw ParseError(where + ": pitch out of range");
      const bool drum = n.track == TrackRole::drum;
      if (drum ? n.duration != 0 : (n.duration < 1 || n.duration > kMaxDuration)) {
        throw ParseError(where + ": duration out of range");
      }
      song.notes.push_back(n);
    } else if (tok[0] == "chord") {
      if (tok.size() != 4) throw ParseError(where + ": expected 'chord <bar> <root> <quality>'");
      const int bar = parse_number(tok[1], line_no);
      if (bar < 0) throw ParseError(where + ": negative bar");
      chords[bar] = Chord{parse_named(tok[2], kRootNames, line_no), parse_named(tok[3], kQualityNames, line_no)};
    } else if (tok[0] == "bars") {
      if (tok.size() != 2) throw ParseError(where + ": expected 'bars <n>'");
      declared_bars = parse_number(tok[1], line_no);
    } else {
      throw ParseError(where + ": unknown directive '" + std::string(tok[0]) + "'");
    }
  }

  int bars = declared_bars;
  for (const Note& n : song.notes) bars = std::max(bars, n.onset / kUnitsPerBar + 1);
  if (!chords.empty()) bars = std::max(bars, chords.rbegin()->first + 1);
  song.bars = bars;
  if (!chords.empty()) {
    for (int b = 0; b < bars; ++b) {
      auto it = chords.find(b);
      if (it == chords.end()) throw ParseError("missing chord for bar " + std::to_string(b));
      song.chords.push_back(it->second);
    }
  }
  std::sort(song.notes.begin(), song.notes.end());
  return song;
}

std::string write_notelist(const Song& song) {
  std::ostringstream out;
  out << "bars " << song.bars << "\n";
  for (std::size_t b = 0; b < song.chords.size(); ++b) {
    out << "chord " << b << ' ' << kRootNames[song.chords[b].root] << ' ' << kQualityNames[song.chords[b].quality]
        << "\n";
  }
  std::vector<Note> notes = song.notes;
  std::sort(notes.begin(), notes.end());
  for (const Note& n : notes) {
    out << "note " << track_name(n.track) << ' ' << n.onset << ' ' << n.pitch << ' ' << n.duration << "\n";
  }
  return out.str();
}

RawSong song_to_raw(const Song& song) {
  constexpr int kTicksPerUnit = 120;
  RawSong raw;
  raw.ticks_per_beat = 4 * kTicksPerUnit;
  for (TrackRole role : kInstrumentTracks) {
    RawTrack track;
    switch (role) {
      case TrackRole::bass: track.program = 33; track.channel = 1; break;
      case TrackRole::drum: track.program = 0; track.channel = kDrumChannel; break;
      case TrackRole::guitar: track.program = 25; track.channel = 2; break;
      case TrackRole::piano: track.program = 0; track.channel = 3; break;
      case TrackRole::string: track.program = 48; track.channel = 4; break;
      case TrackRole::melody: track.program = 73; track.channel = 0; break;
      default: break;
    }
    for (const Note& n : song.notes) {
      if (n.track != role) continue;
      const int units = std::max(n.duration, 1);
      track.notes.push_back(RawNote{static_cast<std::int64_t>(n.onset) * kTicksPerUnit,
                                    static_cast<std::int64_t>(units) * kTicksPerUnit, n.pitch});
    }
    if (!track.notes.empty()) raw.tracks.push_back(std::move(track));
  }
  return raw;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace trackdiff
