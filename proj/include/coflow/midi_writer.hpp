#pragma once

// Minimal SMF writer used to build fixtures for tests and synthetic corpora.

#include <algorithm>
#include <cstdint>
#include <tuple>
#include <vector>

#include "coflow/midi.hpp"

namespace coflow {

struct FixtureNote {
  std::int64_t onset_ticks = 0;
  std::int64_t duration_ticks = 1;
  int pitch = 60;
  int velocity = 64;
};

struct FixtureTrack {
  int channel = 0;
  int program = 0;
  std::vector<FixtureNote> notes;
};

namespace detail {

inline void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t buf[4];
  int n = 0;
  buf[n++] = v & 0x7F;
  while (v >>= 7) buf[n++] = static_cast<std::uint8_t>((v & 0x7F) | 0x80);
  while (n) out.push_back(buf[--n]);
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

}  // namespace detail

// Writes a format-1 file with one MTrk per fixture track. Note-offs sort
// before note-ons at equal ticks.
inline std::vector<std::uint8_t> write_midi(const std::vector<FixtureTrack>& tracks, int ticks_per_beat) {
  std::vector<std::uint8_t> out{'M', 'T', 'h', 'd'};
  detail::put_u32(out, 6);
  out.insert(out.end(), {0, 1});
  out.push_back(static_cast<std::uint8_t>(tracks.size() >> 8));
  out.push_back(static_cast<std::uint8_t>(tracks.size()));
  out.push_back(static_cast<std::uint8_t>(ticks_per_beat >> 8));
  out.push_back(static_cast<std::uint8_t>(ticks_per_beat));

  for (const auto& track : tracks) {
    // (tick, is_on, pitch, velocity)
    std::vector<std::tuple<std::int64_t, int, int, int>> events;
    for (const auto& n : track.notes) {
      events.emplace_back(n.onset_ticks, 1, n.pitch, n.velocity);
      events.emplace_back(n.onset_ticks + n.duration_ticks, 0, n.pitch, 0);
    }
    std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
      return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
    });
    std::vector<std::uint8_t> body;
    const auto ch = static_cast<std::uint8_t>(track.channel & 0x0F);
    detail::put_vlq(body, 0);
    body.push_back(0xC0 | ch);
    body.push_back(static_cast<std::uint8_t>(track.program & 0x7F));
    std::int64_t now = 0;
    for (const auto& [tick, on, pitch, vel] : events) {
      detail::put_vlq(body, static_cast<std::uint32_t>(tick - now));
      now = tick;
      body.push_back(static_cast<std::uint8_t>((on ? 0x90 : 0x80) | ch));
      body.push_back(static_cast<std::uint8_t>(pitch));
      body.push_back(static_cast<std::uint8_t>(on ? vel : 0x40));
    }
    detail::put_vlq(body, 0);
    body.insert(body.end(), {0xFF, 0x2F, 0x00});
    out.insert(out.end(), {'M', 'T', 'r', 'k'});
    detail::put_u32(out, static_cast<std::uint32_t>(body.size()));
    out.insert(out.end(), body.begin(), body.end());
  }
  return out;
}

// Grid-aligned tracks as fixture tracks; ticks = steps * ticks_per_beat / r.
inline std::vector<FixtureTrack> fixture_from_tracks(const std::vector<Track>& tracks, int ticks_per_beat,
                                                     int resolution) {
  std::vector<FixtureTrack> out;
  int channel = 0;
  for (const auto& t : tracks) {
    FixtureTrack ft;
    ft.channel = channel == 9 ? ++channel : channel;
    ++channel;
    ft.program = t.empty() ? 0 : t.front().program;
    for (const auto& n : t)
      ft.notes.push_back({n.onset_steps(resolution) * ticks_per_beat / resolution,
                          static_cast<std::int64_t>(n.duration_steps) * ticks_per_beat / resolution, n.pitch, 80});
    out.push_back(std::move(ft));
  }
  return out;
}

}  // namespace coflow
