#pragma once

// Standard MIDI File ingestion, beat-grid quantization and track handling.

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <deque>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "coflow/core.hpp"

namespace coflow {

struct RawNote {
  std::int64_t onset_ticks = 0;
  std::int64_t duration_ticks = 1;
  int pitch = 0;
  int program = 0;
  int track_index = 0;
  int channel = 0;

  bool operator==(const RawNote&) const = default;
};

// Member order is the canonical note ordering: (beat, position, pitch,
// duration_steps, program). No track identity takes part in it.
struct QuantNote {
  int beat = 0;
  int position = 0;
  int pitch = 0;
  int duration_steps = 1;
  int program = 0;

  std::int64_t onset_steps(int resolution) const {
    return static_cast<std::int64_t>(beat) * resolution + position;
  }
  auto operator<=>(const QuantNote&) const = default;
};

using Track = std::vector<QuantNote>;

struct Piece {
  int ticks_per_beat = 480;
  GridConfig grid;
  std::vector<Track> tracks;
  std::string source_id;
};

struct ParseOptions {
  bool include_drums = false;  // channel 10 (index 9) is skipped otherwise
};

struct ParsedMidi {
  int format = 0;
  int ticks_per_beat = 0;
  std::vector<RawNote> notes;
  int unmatched_notes = 0;  // note-ons closed at their track's end
  int track_chunks = 0;
};

namespace detail {

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool done() const { return pos_ >= bytes_.size(); }

  std::uint8_t peek() const {
    need(1, "unexpected end of data");
    return bytes_[pos_];
  }
  std::uint8_t u8() {
    need(1, "unexpected end of data");
    return bytes_[pos_++];
  }
  std::uint16_t u16be() {
    need(2, "truncated 16-bit field");
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] << 8 | bytes_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32be() {
    need(4, "truncated 32-bit field");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = v << 8 | bytes_[pos_ + i];
    pos_ += 4;
    return v;
  }
  // Variable-length quantity, at most four bytes.
  std::uint32_t vlq() {
    const std::size_t start = pos_;
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      std::uint8_t b = u8();
      v = v << 7 | (b & 0x7F);
      if (!(b & 0x80)) return v;
    }
    throw ParseError("variable-length quantity longer than 4 bytes", start);
  }
  std::string_view tag() {
    need(4, "truncated chunk id");
    std::string_view v(reinterpret_cast<const char*>(bytes_.data() + pos_), 4);
    pos_ += 4;
    return v;
  }
  void skip(std::size_t n, const char* what) {
    need(n, what);
    pos_ += n;
  }
  ByteReader sub(std::size_t n, const char* what) {
    need(n, what);
    ByteReader r(bytes_.subspan(pos_, n));
    r.base_ = base_ + pos_;
    pos_ += n;
    return r;
  }
  std::size_t absolute(std::size_t local) const { return base_ + local; }

 private:
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw ParseError(what, base_ + pos_);
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::size_t base_ = 0;
};

enum class ChannelEventKind { NoteOn, NoteOff, Program };

struct ChannelEvent {
  std::int64_t tick;
  ChannelEventKind kind;
  int channel;
  int a;  // pitch or program
};

struct TrackEvents {
  std::vector<ChannelEvent> events;
  std::int64_t end_tick = 0;
};

inline TrackEvents read_track(ByteReader r) {
  TrackEvents out;
  std::int64_t tick = 0;
  int running = 0;
  while (!r.done()) {
    tick += r.vlq();
    out.end_tick = tick;
    const std::size_t status_at = r.absolute(r.offset());
    int status = r.peek();
    if (status & 0x80) {
      r.u8();
    } else if (running) {
      status = running;
    } else {
      throw ParseError("data byte without running status", status_at);
    }

    if (status == 0xFF) {
      running = 0;
      const int type = r.u8();
      const std::uint32_t len = r.vlq();
      r.skip(len, "truncated meta event");
      if (type == 0x2F) break;
      continue;
    }
    if (status == 0xF0 || status == 0xF7) {
      running = 0;
      r.skip(r.vlq(), "truncated sysex event");
      continue;
    }
    if (status >= 0xF0) throw ParseError("unsupported system message in track", status_at);

    running = status;
    const int kind = status & 0xF0;
    const int channel = status & 0x0F;
    const int data_len = (kind == 0xC0 || kind == 0xD0) ? 1 : 2;
    std::array<int, 2> data{0, 0};
    for (int i = 0; i < data_len; ++i) {
      const std::size_t at = r.absolute(r.offset());
      data[i] = r.u8();
      if (data[i] & 0x80) throw ParseError("status byte where data byte expected", at);
    }
    switch (kind) {
      case 0x90:
        out.events.push_back({tick, data[1] > 0 ? ChannelEventKind::NoteOn : ChannelEventKind::NoteOff,
                              channel, data[0]});
        break;
      case 0x80:
        out.events.push_back({tick, ChannelEventKind::NoteOff, channel, data[0]});
        break;
      case 0xC0:
        out.events.push_back({tick, ChannelEventKind::Program, channel, data[0]});
        break;
      default:
        break;
    }
  }
  return out;
}

}  // namespace detail

// Parses a format 0 or 1 Standard MIDI File into matched notes. A note-off
// closes the earliest still-open note-on of the same channel and pitch. The
// program of a note is the latest program change on its channel, in any
// track, at or before the note-on; ties at the same tick resolve by track
// order then stream order. Format 0 files are split into tracks by channel.
inline ParsedMidi parse_midi(std::span<const std::uint8_t> bytes, const ParseOptions& options = {}) {
  detail::ByteReader r(bytes);
  if (r.remaining() < 14 || r.tag() != "MThd") throw ParseError("missing MThd header", 0);
  const std::uint32_t header_len = r.u32be();
  if (header_len < 6) throw ParseError("MThd chunk shorter than 6 bytes", 4);
  ParsedMidi out;
  out.format = r.u16be();
  const int declared_tracks = r.u16be();
  const std::uint16_t division = r.u16be();
  if (out.format > 1) throw ParseError("only SMF formats 0 and 1 are supported", 8);
  if (division & 0x8000) throw ParseError("SMPTE time division is not supported", 12);
  if (division == 0) throw ParseError("ticks per beat must be positive", 12);
  out.ticks_per_beat = division;
  r.skip(header_len - 6, "truncated MThd chunk");

  std::vector<detail::TrackEvents> tracks;
  while (!r.done()) {
    const std::size_t chunk_at = r.offset();
    if (r.remaining() < 8) throw ParseError("truncated chunk header", chunk_at);
    const std::string_view id = r.tag();
    const std::uint32_t len = r.u32be();
    if (r.remaining() < len) throw ParseError("chunk length exceeds file size", chunk_at);
    if (id == "MTrk") {
      tracks.push_back(detail::read_track(r.sub(len, "truncated track chunk")));
    } else {
      r.skip(len, "truncated chunk");
    }
  }
  if (static_cast<int>(tracks.size()) < declared_tracks)
    throw ParseError("fewer MTrk chunks than declared", bytes.size());
  out.track_chunks = static_cast<int>(tracks.size());

  // Program changes per channel, keyed by (tick, track, stream index).
  using ProgramKey = std::tuple<std::int64_t, int, std::size_t>;
  std::array<std::vector<std::pair<ProgramKey, int>>, 16> programs;
  for (std::size_t t = 0; t < tracks.size(); ++t)
    for (std::size_t i = 0; i < tracks[t].events.size(); ++i) {
      const auto& e = tracks[t].events[i];
      if (e.kind == detail::ChannelEventKind::Program)
        programs[e.channel].push_back({{e.tick, static_cast<int>(t), i}, e.a});
    }
  for (auto& list : programs) std::sort(list.begin(), list.end());
  auto program_at = [&](int channel, const ProgramKey& key) {
    const auto& list = programs[channel];
    auto it = std::lower_bound(list.begin(), list.end(), key,
                               [](const auto& entry, const ProgramKey& k) { return entry.first < k; });
    return it == list.begin() ? 0 : std::prev(it)->second;
  };

  struct Open {
    std::int64_t tick;
    int program;
  };
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    std::map<std::pair<int, int>, std::deque<Open>> open;
    auto emit = [&](int channel, int pitch, const Open& on, std::int64_t off_tick) {
      RawNote n;
      n.onset_ticks = on.tick;
      n.duration_ticks = std::max<std::int64_t>(1, off_tick - on.tick);
      n.pitch = pitch;
      n.program = on.program;
      n.channel = channel;
      n.track_index = out.format == 0 ? channel : static_cast<int>(t);
      out.notes.push_back(n);
    };
    const auto& events = tracks[t].events;
    for (std::size_t i = 0; i < events.size(); ++i) {
      const auto& e = events[i];
      if (e.channel == 9 && !options.include_drums) continue;
      if (e.kind == detail::ChannelEventKind::NoteOn) {
        open[{e.channel, e.a}].push_back({e.tick, program_at(e.channel, {e.tick, static_cast<int>(t), i})});
      } else if (e.kind == detail::ChannelEventKind::NoteOff) {
        auto it = open.find({e.channel, e.a});
        if (it == open.end() || it->second.empty()) continue;  // stray note-off
        emit(e.channel, e.a, it->second.front(), e.tick);
        it->second.pop_front();
      }
    }
    for (auto& [key, queue] : open)
      for (const auto& on : queue) {
        emit(key.first, key.second, on, tracks[t].end_tick);
        ++out.unmatched_notes;
      }
  }

  std::sort(out.notes.begin(), out.notes.end(), [](const RawNote& a, const RawNote& b) {
    return std::tie(a.track_index, a.onset_ticks, a.pitch, a.duration_ticks, a.program, a.channel) <
           std::tie(b.track_index, b.onset_ticks, b.pitch, b.duration_ticks, b.program, b.channel);
  });
  return out;
}

struct QuantizeResult {
  std::vector<QuantNote> notes;  // input order, minus dropped notes
  int dropped = 0;               // notes whose beat reached max_beat
};

inline QuantizeResult quantize(std::span<const RawNote> notes, int ticks_per_beat, const GridConfig& grid = {}) {
  if (ticks_per_beat <= 0 || !grid.valid()) throw Error("quantize: ticks_per_beat and grid bounds must be positive");
  QuantizeResult out;
  out.notes.reserve(notes.size());
  const std::int64_t r = grid.resolution;
  for (const auto& n : notes) {
    const std::int64_t steps = div_round(n.onset_ticks * r, ticks_per_beat);
    const std::int64_t beat = steps / r;
    if (beat >= grid.max_beat) {
      ++out.dropped;
      continue;
    }
    std::int64_t dur = div_round(n.duration_ticks * r, ticks_per_beat);
    dur = std::clamp<std::int64_t>(dur, 1, grid.max_duration);
    out.notes.push_back({static_cast<int>(beat), static_cast<int>(steps % r), n.pitch, static_cast<int>(dur),
                         n.program});
  }
  return out;
}

inline void sort_canonical(Track& track) { std::sort(track.begin(), track.end()); }

struct PieceBuild {
  Piece piece;
  int dropped_notes = 0;
  int unmatched_notes = 0;
};

// Groups parsed notes by track index, quantizes, sorts, and drops tracks
// that end up empty (conductor tracks, drum-only tracks).
inline PieceBuild build_piece(const ParsedMidi& midi, const GridConfig& grid, std::string source_id) {
  PieceBuild out;
  out.piece.ticks_per_beat = midi.ticks_per_beat;
  out.piece.grid = grid;
  out.piece.source_id = std::move(source_id);
  out.unmatched_notes = midi.unmatched_notes;
  std::map<int, std::vector<RawNote>> by_track;
  for (const auto& n : midi.notes) by_track[n.track_index].push_back(n);
  for (auto& [index, raw] : by_track) {
    auto q = quantize(raw, midi.ticks_per_beat, grid);
    out.dropped_notes += q.dropped;
    if (q.notes.empty()) continue;
    sort_canonical(q.notes);
    out.piece.tracks.push_back(std::move(q.notes));
  }
  return out;
}

inline std::pair<Track, Track> split_tracks(const Piece& piece) {
  if (piece.tracks.size() != 2)
    throw IneligiblePieceError("piece '" + piece.source_id + "' has " + std::to_string(piece.tracks.size()) +
                               " tracks, need exactly 2");
  for (std::size_t i = 0; i < 2; ++i)
    if (piece.tracks[i].empty())
      throw IneligiblePieceError("piece '" + piece.source_id + "' has an empty track " + std::to_string(i));
  return {piece.tracks[0], piece.tracks[1]};
}

// Multiset union under the canonical ordering; merge(x, y) == merge(y, x).
inline Track merge_tracks(const Track& x, const Track& y) {
  Track out;
  out.reserve(x.size() + y.size());
  out.insert(out.end(), x.begin(), x.end());
  out.insert(out.end(), y.begin(), y.end());
  sort_canonical(out);
  return out;
}

// Keeps notes with onset at or before the given step.
inline Track truncate_track(const Track& track, std::int64_t last_onset_step, int resolution) {
  Track out;
  for (const auto& n : track)
    if (n.onset_steps(resolution) <= last_onset_step) out.push_back(n);
  return out;
}

// ---------------------------------------------------------------------------
// Line-oriented note text: "beat position pitch duration_steps program".
// A line reading "track" starts a new track; '#' starts a comment.

inline void write_notes(std::ostream& os, const std::vector<Track>& tracks) {
  for (const auto& track : tracks) {
    os << "track\n";
    for (const auto& n : track)
      os << n.beat << ' ' << n.position << ' ' << n.pitch << ' ' << n.duration_steps << ' ' << n.program << '\n';
  }
}

inline std::vector<Track> read_notes(std::istream& is) {
  std::vector<Track> tracks;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;
    if (first == "track") {
      tracks.emplace_back();
      continue;
    }
    QuantNote n;
    std::istringstream all(line);
    if (!(all >> n.beat >> n.position >> n.pitch >> n.duration_steps >> n.program))
      throw FormatError("note text line " + std::to_string(line_no) + ": expected five integers");
    if (tracks.empty()) tracks.emplace_back();
    tracks.back().push_back(n);
  }
  return tracks;
}

}  // namespace coflow
