#pragma once

// Sliding-window conditional entropies of X, Y and the merged XY sequence,
// and the total information flow H(X|past) + H(Y|past) - H(XY|past).

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "coflow/core.hpp"
#include "coflow/events.hpp"
#include "coflow/midi.hpp"
#include "coflow/model.hpp"
#include "json.hpp"

namespace coflow {

using FieldValues = std::array<double, kFieldCount>;

enum class EntropyMode {
  kNll,         // -log p(realized field value)
  kPredictive,  // entropy of the predicted field distribution
};

// How the three entropy sums become rates.
enum class Normalization {
  // Sum over the beats where both voices are past burn-in and still
  // playing, divided by that span: nats per beat on a shared time base.
  kTime,
  // Mean over each sequence's own scored note events: nats per event.
  kEvent,
};

inline std::string to_string(EntropyMode m) { return m == EntropyMode::kNll ? "nll" : "predictive"; }
inline std::string to_string(Normalization n) { return n == Normalization::kTime ? "time" : "event"; }

inline EntropyMode parse_mode(const std::string& s) {
  if (s == "nll") return EntropyMode::kNll;
  if (s == "predictive") return EntropyMode::kPredictive;
  throw Error("unknown entropy mode '" + s + "' (expected nll or predictive)");
}
inline Normalization parse_normalization(const std::string& s) {
  if (s == "time") return Normalization::kTime;
  if (s == "event") return Normalization::kEvent;
  throw Error("unknown normalization '" + s + "' (expected time or event)");
}

struct FlowParams {
  int context_len = 64;
  int burn_in = 16;
  EntropyMode mode = EntropyMode::kNll;
  Normalization normalization = Normalization::kTime;
  bool remap_shared_programs = false;
};

struct EntropyTrace {
  std::vector<FieldValues> values;  // one row per scored note event
  std::vector<int> beats;           // beat of each scored note event
  EntropyMode mode = EntropyMode::kNll;
  int context_len = 0;
  int burn_in = 0;

  FieldValues means() const {
    FieldValues m{};
    for (const auto& row : values)
      for (int f = 0; f < kFieldCount; ++f) m[f] += row[f];
    for (auto& v : m) v /= static_cast<double>(values.size());
    return m;
  }
  double total_mean() const {
    double s = 0.0;
    for (double v : means()) s += v;
    return s;
  }
};

namespace detail {

// Scores every note event after the first `skip` notes. Header events are
// never scored but serve as context.
inline EntropyTrace score_notes(const ContextModel& model, const EventSequence& seq, int context_len,
                                EntropyMode mode, std::size_t skip) {
  if (context_len < 0) throw Error("context_len must be >= 0");
  EntropyTrace trace;
  trace.mode = mode;
  trace.context_len = context_len;
  const std::span<const Event> events(seq.events);
  std::size_t seen = 0;
  for (std::size_t t = 0; t < events.size(); ++t) {
    if (events[t].type != kNote) continue;
    if (seen++ < skip) continue;
    const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(context_len), t);
    const auto context = events.subspan(t - len, len);
    FieldValues row{};
    if (mode == EntropyMode::kNll) {
      const auto p = model.probability_of(context, events[t]);
      for (int f = 0; f < kFieldCount; ++f) row[f] = -std::log(p[f]);
    } else {
      const auto dist = model.predict_next(context);
      for (int f = 0; f < kFieldCount; ++f) row[f] = dist.entropy(f);
    }
    trace.values.push_back(row);
    trace.beats.push_back(events[t].beat);
  }
  return trace;
}

}  // namespace detail

// Per-step entropies of the note events of `seq` after the first `burn_in`
// notes, given a sliding window of the last `context_len` events.
inline EntropyTrace conditional_entropy(const ContextModel& model, const EventSequence& seq, int context_len,
                                        int burn_in, EntropyMode mode) {
  if (burn_in < 1) throw Error("burn_in must be >= 1");
  validate(seq);
  const std::size_t notes = seq.note_count();
  if (notes <= static_cast<std::size_t>(burn_in))
    throw TooShortError("sequence has " + std::to_string(notes) + " note events, needs more than burn_in = " +
                        std::to_string(burn_in));
  auto trace = detail::score_notes(model, seq, context_len, mode, static_cast<std::size_t>(burn_in));
  trace.burn_in = burn_in;
  return trace;
}

struct FlowReport {
  FieldValues h_x{};
  FieldValues h_y{};
  FieldValues h_xy{};
  FieldValues flow{};
  double total_flow = 0.0;

  std::string units;
  EntropyMode mode = EntropyMode::kNll;
  Normalization normalization = Normalization::kTime;
  int context_len = 0;
  int burn_in = 0;
  int window_first_beat = 0;  // time normalization only
  int window_beats = 0;
  std::size_t scored_x = 0;
  std::size_t scored_y = 0;
  std::size_t scored_xy = 0;
  std::string model_id;
  std::string piece_id;

  double sum(const FieldValues& v) const {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  double total_flow_bits() const { return total_flow / std::numbers::ln2; }
};

namespace detail {

inline std::string hex_id(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

inline void finish_report(FlowReport& r) {
  r.total_flow = 0.0;
  for (int f = 0; f < kFieldCount; ++f) {
    r.flow[f] = r.h_x[f] + r.h_y[f] - r.h_xy[f];
    r.total_flow += r.flow[f];
  }
}

}  // namespace detail

inline FlowReport information_flow(const ContextModel& model, const Track& x, const Track& y,
                                   const FlowParams& params = {}, const std::string& piece_id = {}) {
  if (x.empty() || y.empty()) throw IneligiblePieceError("information_flow: both voices need notes");
  if (params.burn_in < 1) throw Error("burn_in must be >= 1");
  const GridConfig& grid = model.grid();
  const Track y_xy = params.remap_shared_programs ? remap_shared_programs(x, y) : y;
  const EventSequence sx = encode(x, grid);
  const EventSequence sy = encode(y, grid);
  const EventSequence sxy = encode(x, y_xy, grid);

  FlowReport r;
  r.mode = params.mode;
  r.normalization = params.normalization;
  r.context_len = params.context_len;
  r.burn_in = params.burn_in;
  r.model_id = detail::hex_id(model.fingerprint());
  r.piece_id = piece_id;

  auto scored = [&](const EventSequence& s, const char* which) {
    try {
      return conditional_entropy(model, s, params.context_len, params.burn_in, params.mode);
    } catch (const TooShortError& e) {
      throw TooShortError(std::string(which) + ": " + e.what());
    }
  };

  if (params.normalization == Normalization::kEvent) {
    const auto tx = scored(sx, "X");
    const auto ty = scored(sy, "Y");
    const auto txy = scored(sxy, "XY");
    r.h_x = tx.means();
    r.h_y = ty.means();
    r.h_xy = txy.means();
    r.scored_x = tx.values.size();
    r.scored_y = ty.values.size();
    r.scored_xy = txy.values.size();
    r.units = "nats/event";
    detail::finish_report(r);
    return r;
  }

  // Shared beat window [first, last]: both voices past burn-in and sounding.
  for (const auto& [track, which] : {std::pair<const Track*, const char*>{&x, "X"}, {&y, "Y"}})
    if (track->size() <= static_cast<std::size_t>(params.burn_in))
      throw TooShortError(std::string(which) + ": " + std::to_string(track->size()) +
                          " note events, needs more than burn_in = " + std::to_string(params.burn_in));
  const int first = std::max(x[params.burn_in].beat, y[params.burn_in].beat);
  const int last = std::min(x.back().beat, y.back().beat);
  if (last < first) throw TooShortError("XY: voices do not overlap after burn-in");

  auto window_sum = [&](const EventSequence& s, std::size_t& count) {
    const auto trace = detail::score_notes(model, s, params.context_len, params.mode, 0);
    FieldValues sum{};
    count = 0;
    for (std::size_t i = 0; i < trace.values.size(); ++i) {
      if (trace.beats[i] < first || trace.beats[i] > last) continue;
      ++count;
      for (int f = 0; f < kFieldCount; ++f) sum[f] += trace.values[i][f];
    }
    return sum;
  };
  const double span = static_cast<double>(last - first + 1);
  r.h_x = window_sum(sx, r.scored_x);
  r.h_y = window_sum(sy, r.scored_y);
  r.h_xy = window_sum(sxy, r.scored_xy);
  for (int f = 0; f < kFieldCount; ++f) {
    r.h_x[f] /= span;
    r.h_y[f] /= span;
    r.h_xy[f] /= span;
  }
  r.window_first_beat = first;
  r.window_beats = last - first + 1;
  r.units = "nats/beat";
  detail::finish_report(r);
  return r;
}

inline nlohmann::ordered_json to_json(const FlowReport& r) {
  nlohmann::ordered_json j;
  j["piece_id"] = r.piece_id;
  j["model_id"] = r.model_id;
  j["mode"] = to_string(r.mode);
  j["normalization"] = to_string(r.normalization);
  j["units"] = r.units;
  j["context_len"] = r.context_len;
  j["burn_in"] = r.burn_in;
  if (r.normalization == Normalization::kTime) {
    j["window_first_beat"] = r.window_first_beat;
    j["window_beats"] = r.window_beats;
  }
  j["scored_events"] = {{"X", r.scored_x}, {"Y", r.scored_y}, {"XY", r.scored_xy}};
  nlohmann::ordered_json fields;
  for (int f = 0; f < kFieldCount; ++f)
    fields[std::string(kFieldNames[f])] = {
        {"H_X", r.h_x[f]}, {"H_Y", r.h_y[f]}, {"H_XY", r.h_xy[f]}, {"flow", r.flow[f]}};
  j["fields"] = fields;
  j["H_X"] = r.sum(r.h_x);
  j["H_Y"] = r.sum(r.h_y);
  j["H_XY"] = r.sum(r.h_xy);
  j["total_flow"] = r.total_flow;
  j["total_flow_bits"] = r.total_flow_bits();
  return j;
}

}  // namespace coflow
