#pragma once

// Six-field event encoding of one or more quantized tracks.
//
// A sequence is: start (type 0), one instrument event (type 1) per distinct
// program in ascending order, start-of-notes (type 2), the note events
// (type 3) in canonical note order, end (type 4). Non-note events carry zeros
// in every field they do not use.

#include <algorithm>
#include <array>
#include <cstdint>
#include <istream>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "coflow/core.hpp"
#include "coflow/midi.hpp"

namespace coflow {

enum EventType : int { kStart = 0, kInstrument = 1, kStartOfNotes = 2, kNote = 3, kEnd = 4 };

enum Field : int { kType = 0, kBeat, kPosition, kPitch, kDuration, kInstrumentField };
inline constexpr int kFieldCount = 6;
inline constexpr std::array<std::string_view, kFieldCount> kFieldNames{"type",  "beat",     "position",
                                                                       "pitch", "duration", "instrument"};

struct Event {
  int type = 0;
  int beat = 0;
  int position = 0;
  int pitch = 0;
  int duration = 0;
  int instrument = 0;

  int field(int f) const {
    switch (f) {
      case kType: return type;
      case kBeat: return beat;
      case kPosition: return position;
      case kPitch: return pitch;
      case kDuration: return duration;
      default: return instrument;
    }
  }
  int& field(int f) {
    switch (f) {
      case kType: return type;
      case kBeat: return beat;
      case kPosition: return position;
      case kPitch: return pitch;
      case kDuration: return duration;
      default: return instrument;
    }
  }
  bool operator==(const Event&) const = default;

  static Event note(const QuantNote& n) { return {kNote, n.beat, n.position, n.pitch, n.duration_steps, n.program}; }
};

// Size of each field's value range. Duration spans 0..max_duration because
// non-note events carry duration 0.
inline int field_vocab(const GridConfig& grid, int f) {
  switch (f) {
    case kType: return 5;
    case kBeat: return grid.max_beat;
    case kPosition: return grid.resolution;
    case kPitch: return 128;
    case kDuration: return grid.max_duration + 1;
    default: return 128;
  }
}

struct EventSequence {
  std::vector<Event> events;
  GridConfig grid;

  bool operator==(const EventSequence&) const = default;

  std::size_t first_note_index() const {
    for (std::size_t i = 0; i < events.size(); ++i)
      if (events[i].type == kStartOfNotes) return i + 1;
    return events.size();
  }
  std::size_t note_count() const {
    return static_cast<std::size_t>(std::count_if(events.begin(), events.end(),
                                                  [](const Event& e) { return e.type == kNote; }));
  }
};

namespace detail {

inline void check_note(const Event& e, const GridConfig& g, std::size_t i) {
  if (e.beat < 0 || e.beat >= g.max_beat) throw StructureError("note beat out of range", i);
  if (e.position < 0 || e.position >= g.resolution) throw StructureError("note position out of range", i);
  if (e.pitch < 0 || e.pitch >= 128) throw StructureError("note pitch out of range", i);
  if (e.duration < 1 || e.duration > g.max_duration) throw StructureError("note duration out of range", i);
  if (e.instrument < 0 || e.instrument >= 128) throw StructureError("note instrument out of range", i);
}

inline bool note_less(const Event& a, const Event& b) {
  return std::tie(a.beat, a.position, a.pitch, a.duration, a.instrument) <
         std::tie(b.beat, b.position, b.pitch, b.duration, b.instrument);
}

// Checks the header and note section; returns the index after the last
// note. With `complete`, a terminator must follow and end the sequence.
inline std::size_t validate_body(const EventSequence& seq, bool complete) {
  const auto& ev = seq.events;
  const auto& g = seq.grid;
  if (!g.valid()) throw StructureError("grid bounds must be positive", 0);
  auto zero_except = [](const Event& e, int keep) {
    for (int f = 1; f < kFieldCount; ++f)
      if (f != keep && e.field(f) != 0) return false;
    return true;
  };
  std::size_t i = 0;
  if (ev.empty() || ev[0].type != kStart) throw StructureError("sequence must begin with a start event", 0);
  if (!zero_except(ev[0], -1)) throw StructureError("start event fields must be zero", 0);
  ++i;
  std::set<int> header;
  int last_instrument = -1;
  while (i < ev.size() && ev[i].type == kInstrument) {
    if (!zero_except(ev[i], kInstrumentField)) throw StructureError("instrument event has nonzero note fields", i);
    if (ev[i].instrument < 0 || ev[i].instrument >= 128) throw StructureError("instrument out of range", i);
    if (ev[i].instrument <= last_instrument) throw StructureError("instrument list not strictly ascending", i);
    last_instrument = ev[i].instrument;
    header.insert(ev[i].instrument);
    ++i;
  }
  if (header.empty()) throw StructureError("instrument list is empty", i);
  if (i >= ev.size() || ev[i].type != kStartOfNotes) throw StructureError("expected start-of-notes event", i);
  if (!zero_except(ev[i], -1)) throw StructureError("start-of-notes event fields must be zero", i);
  ++i;
  std::set<int> used;
  for (; i < ev.size() && ev[i].type == kNote; ++i) {
    check_note(ev[i], g, i);
    if (i > 0 && ev[i - 1].type == kNote && note_less(ev[i], ev[i - 1]))
      throw StructureError("note events out of canonical order", i);
    used.insert(ev[i].instrument);
  }
  const std::size_t notes_end = i;
  if (complete) {
    if (i >= ev.size() || ev[i].type != kEnd) throw StructureError("expected end event", i);
    if (!zero_except(ev[i], -1)) throw StructureError("end event fields must be zero", i);
    if (i + 1 != ev.size()) throw StructureError("events after end event", i + 1);
    if (used != header) throw StructureError("instrument list differs from the programs used by notes", 1);
  } else if (i != ev.size()) {
    throw StructureError("unexpected event in prefix", i);
  }
  return notes_end;
}

}  // namespace detail

inline void validate(const EventSequence& seq) { detail::validate_body(seq, true); }
inline void validate_prefix(const EventSequence& seq) { detail::validate_body(seq, false); }

inline EventSequence encode(std::span<const Track> tracks, const GridConfig& grid = {}) {
  Track notes;
  for (const auto& t : tracks) notes.insert(notes.end(), t.begin(), t.end());
  if (notes.empty()) throw Error("encode: no notes to encode");
  sort_canonical(notes);
  std::set<int> programs;
  for (const auto& n : notes) programs.insert(n.program);

  EventSequence seq;
  seq.grid = grid;
  seq.events.reserve(notes.size() + programs.size() + 3);
  seq.events.push_back({kStart});
  for (int p : programs) seq.events.push_back({kInstrument, 0, 0, 0, 0, p});
  seq.events.push_back({kStartOfNotes});
  for (const auto& n : notes) seq.events.push_back(Event::note(n));
  seq.events.push_back({kEnd});
  validate(seq);
  return seq;
}

inline EventSequence encode(const Track& track, const GridConfig& grid = {}) {
  return encode(std::span<const Track>(&track, 1), grid);
}

inline EventSequence encode(const Track& x, const Track& y, const GridConfig& grid = {}) {
  const std::array<Track, 2> both{x, y};
  return encode(std::span<const Track>(both), grid);
}

// Optional voice separation: programs of `y` that also occur in `x` move to
// (program + 1) mod 128. Order-dependent by construction.
inline Track remap_shared_programs(const Track& x, const Track& y) {
  std::set<int> taken;
  for (const auto& n : x) taken.insert(n.program);
  Track out = y;
  for (auto& n : out)
    if (taken.count(n.program)) n.program = (n.program + 1) % 128;
  sort_canonical(out);
  return out;
}

inline Track decode(const EventSequence& seq) {
  validate(seq);
  Track out;
  for (const auto& e : seq.events)
    if (e.type == kNote) out.push_back({e.beat, e.position, e.pitch, e.duration, e.instrument});
  return out;
}

// Notes grouped by program, in ascending program order.
inline std::vector<Track> split_by_program(const Track& notes) {
  std::set<int> programs;
  for (const auto& n : notes) programs.insert(n.program);
  std::vector<Track> out;
  for (int p : programs) {
    Track t;
    for (const auto& n : notes)
      if (n.program == p) t.push_back(n);
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text form: one event per line, six space-separated integers. An optional
// "# grid <r> <max_beat> <max_duration>" line records the bounds.

inline void write_events(std::ostream& os, const EventSequence& seq) {
  os << "# grid " << seq.grid.resolution << ' ' << seq.grid.max_beat << ' ' << seq.grid.max_duration << '\n';
  for (const auto& e : seq.events)
    os << e.type << ' ' << e.beat << ' ' << e.position << ' ' << e.pitch << ' ' << e.duration << ' ' << e.instrument
       << '\n';
}

inline EventSequence read_events(std::istream& is, const GridConfig& fallback = {}) {
  EventSequence seq;
  seq.grid = fallback;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.rfind("# grid", 0) == 0) {
      std::istringstream gs(line.substr(6));
      if (!(gs >> seq.grid.resolution >> seq.grid.max_beat >> seq.grid.max_duration))
        throw FormatError("event text line " + std::to_string(line_no) + ": malformed grid line");
      continue;
    }
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Event e;
    std::string extra;
    if (!(ls >> e.type >> e.beat >> e.position >> e.pitch >> e.duration >> e.instrument) || (ls >> extra))
      throw FormatError("event text line " + std::to_string(line_no) + ": expected six integers");
    seq.events.push_back(e);
  }
  return seq;
}

}  // namespace coflow
