#pragma once

// Experiment drivers: positive/negative pair construction, batch scoring,
// the positional- and self-enhancement-bias experiments, and report output.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <iterator>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "coflow/core.hpp"
#include "coflow/events.hpp"
#include "coflow/info_flow.hpp"
#include "coflow/midi.hpp"
#include "coflow/model.hpp"
#include "json.hpp"

namespace coflow {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Work is assigned
// by index, so results written by index do not depend on scheduling.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const auto count = static_cast<std::size_t>(std::max(1, workers));
  if (count == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(count, n); ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += count) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// The three views a model should see of a two-voice piece.
inline std::vector<EventSequence> voice_views(const Track& x, const Track& y, const GridConfig& grid) {
  return {encode(x, grid), encode(y, grid), encode(x, y, grid)};
}

// Training corpus from the eligible pieces of a collection; others are skipped.
inline std::vector<EventSequence> training_corpus(std::span<const Piece> pieces, const GridConfig& grid) {
  std::vector<EventSequence> out;
  for (const auto& p : pieces) {
    if (p.tracks.size() != 2 || p.tracks[0].empty() || p.tracks[1].empty()) continue;
    auto views = voice_views(p.tracks[0], p.tracks[1], grid);
    std::move(views.begin(), views.end(), std::back_inserter(out));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pairs

enum class PairLabel { kPositive, kNegative };

inline std::string to_string(PairLabel l) { return l == PairLabel::kPositive ? "positive" : "negative"; }

struct Pair {
  std::string piece_id;
  std::size_t x_piece = 0;  // index into the corpus
  std::size_t y_piece = 0;
  PairLabel label = PairLabel::kPositive;
};

struct PairSet {
  std::vector<Pair> pairs;
  std::uint64_t seed = 0;
  std::size_t eligible = 0;
  std::vector<std::string> skipped;  // "<source_id>: <reason>"
};

// Positives pair each eligible piece's melody (track 0) with its own
// accompaniment (track 1). Each negative keeps the melody and takes the
// accompaniment of another eligible piece drawn uniformly at random.
inline PairSet build_pairs(std::span<const Piece> corpus, std::uint64_t seed) {
  PairSet out;
  out.seed = seed;
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    try {
      auto [x, y] = split_tracks(corpus[i]);
      encode(x, corpus[i].grid);
      encode(y, corpus[i].grid);
      eligible.push_back(i);
    } catch (const Error& e) {
      out.skipped.push_back(corpus[i].source_id + ": " + e.what());
    }
  }
  out.eligible = eligible.size();
  if (eligible.size() < 2) throw Error("build_pairs: need at least 2 eligible pieces, have " +
                                       std::to_string(eligible.size()));
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < eligible.size(); ++k) {
    const std::size_t i = eligible[k];
    out.pairs.push_back({corpus[i].source_id, i, i, PairLabel::kPositive});
  }
  for (std::size_t k = 0; k < eligible.size(); ++k) {
    std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 2);
    std::size_t d = pick(rng);
    if (d >= k) ++d;
    const std::size_t i = eligible[k];
    out.pairs.push_back({corpus[i].source_id, i, eligible[d], PairLabel::kNegative});
  }
  return out;
}

// The (X, Y) tracks of a pair. Mismatched pairs are cut at the earlier of
// the two final-note onsets so the voices overlap in time.
inline std::pair<Track, Track> materialize(std::span<const Piece> corpus, const Pair& pair) {
  Track x = corpus[pair.x_piece].tracks.at(0);
  Track y = corpus[pair.y_piece].tracks.at(1);
  if (pair.x_piece != pair.y_piece && !x.empty() && !y.empty()) {
    const int r = corpus[pair.x_piece].grid.resolution;
    const auto last = std::min(x.back().onset_steps(r), y.back().onset_steps(r));
    x = truncate_track(x, last, r);
    y = truncate_track(y, last, r);
  }
  return {std::move(x), std::move(y)};
}

// ---------------------------------------------------------------------------
// Batch scoring

struct SummaryStats {
  std::size_t count = 0;
  FieldValues mean{}, median{}, stddev{};
  double total_mean = 0.0, total_median = 0.0, total_stddev = 0.0;
};

namespace detail {

inline void describe(std::vector<double> v, double& mean, double& median, double& stddev) {
  mean = median = stddev = 0.0;
  if (v.empty()) return;
  double s = 0.0;
  for (double x : v) s += x;
  mean = s / static_cast<double>(v.size());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  if (n > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    stddev = std::sqrt(ss / static_cast<double>(n - 1));
  }
}

inline SummaryStats summarize(const std::vector<const FlowReport*>& reports) {
  SummaryStats s;
  s.count = reports.size();
  for (int f = 0; f < kFieldCount; ++f) {
    std::vector<double> v;
    for (const auto* r : reports) v.push_back(r->flow[f]);
    describe(std::move(v), s.mean[f], s.median[f], s.stddev[f]);
  }
  std::vector<double> total;
  for (const auto* r : reports) total.push_back(r->total_flow);
  describe(std::move(total), s.total_mean, s.total_median, s.total_stddev);
  return s;
}

}  // namespace detail

struct PairResult {
  Pair pair;
  std::optional<FlowReport> report;
  std::string error;
};

struct ExperimentReport {
  std::vector<PairResult> rows;
  SummaryStats positive;
  SummaryStats negative;
  std::size_t failures = 0;

  // Welch t-statistic of total flow, positive minus negative.
  double total_flow_t() const {
    const double vp = positive.total_stddev * positive.total_stddev / static_cast<double>(positive.count);
    const double vn = negative.total_stddev * negative.total_stddev / static_cast<double>(negative.count);
    return (positive.total_mean - negative.total_mean) / std::sqrt(vp + vn);
  }
};

inline ExperimentReport batch_score(const ContextModel& model, std::span<const Piece> corpus, const PairSet& pairs,
                                    const FlowParams& params, int workers = 1) {
  ExperimentReport out;
  out.rows.resize(pairs.pairs.size());
  parallel_for(pairs.pairs.size(), workers, [&](std::size_t i) {
    auto& row = out.rows[i];
    row.pair = pairs.pairs[i];
    try {
      auto [x, y] = materialize(corpus, row.pair);
      row.report = information_flow(model, x, y, params, row.pair.piece_id);
    } catch (const Error& e) {
      row.error = e.what();
    }
  });
  std::vector<const FlowReport*> pos, neg;
  for (const auto& row : out.rows) {
    if (!row.report) {
      ++out.failures;
      continue;
    }
    (row.pair.label == PairLabel::kPositive ? pos : neg).push_back(&*row.report);
  }
  out.positive = detail::summarize(pos);
  out.negative = detail::summarize(neg);
  return out;
}

// One row per (pair, field), plus a "total" row per pair.
inline void write_csv(std::ostream& os, const ExperimentReport& report) {
  os.precision(17);
  os << "piece_id,label,field,H_X,H_Y,H_XY,flow,mode,context_len\n";
  for (const auto& row : report.rows) {
    if (!row.report) continue;
    const auto& r = *row.report;
    const std::string label = to_string(row.pair.label);
    for (int f = 0; f < kFieldCount; ++f)
      os << row.pair.piece_id << ',' << label << ',' << kFieldNames[f] << ',' << r.h_x[f] << ',' << r.h_y[f] << ','
         << r.h_xy[f] << ',' << r.flow[f] << ',' << to_string(r.mode) << ',' << r.context_len << '\n';
    os << row.pair.piece_id << ',' << label << ",total," << r.sum(r.h_x) << ',' << r.sum(r.h_y) << ','
       << r.sum(r.h_xy) << ',' << r.total_flow << ',' << to_string(r.mode) << ',' << r.context_len << '\n';
  }
}

inline nlohmann::ordered_json to_json(const SummaryStats& s) {
  nlohmann::ordered_json j;
  j["count"] = s.count;
  for (int f = 0; f < kFieldCount; ++f)
    j["fields"][std::string(kFieldNames[f])] = {{"mean", s.mean[f]}, {"median", s.median[f]}, {"std", s.stddev[f]}};
  j["total"] = {{"mean", s.total_mean}, {"median", s.total_median}, {"std", s.total_stddev}};
  return j;
}

inline nlohmann::ordered_json to_json(const ExperimentReport& r) {
  nlohmann::ordered_json j;
  j["pairs"] = r.rows.size();
  j["failures"] = r.failures;
  nlohmann::ordered_json failed = nlohmann::ordered_json::array();
  for (const auto& row : r.rows)
    if (!row.report) failed.push_back({{"piece_id", row.pair.piece_id}, {"label", to_string(row.pair.label)},
                                       {"error", row.error}});
  j["failed"] = failed;
  j["positive"] = to_json(r.positive);
  j["negative"] = to_json(r.negative);
  if (r.positive.count > 1 && r.negative.count > 1) j["total_flow_t"] = r.total_flow_t();
  return j;
}

// ---------------------------------------------------------------------------
// Positional bias: does presenting the voices as (Y, X) change the score?

struct BiasReport {
  FieldValues mse{};
  double total_mse = 0.0;
  std::size_t pieces = 0;
  bool symmetric = true;  // flows and H_XY bit-identical, H_X/H_Y swapped
  std::vector<std::string> skipped;
};

// Exact check that a report computed with swapped voices mirrors `a`.
inline bool mirrored(const FlowReport& a, const FlowReport& b) {
  return a.flow == b.flow && a.total_flow == b.total_flow && a.h_xy == b.h_xy && a.h_x == b.h_y &&
         a.h_y == b.h_x;
}

inline BiasReport positional_bias(const ContextModel& model, std::span<const Piece> pieces, const FlowParams& params,
                                  int workers = 1) {
  struct Item {
    std::optional<std::pair<FlowReport, FlowReport>> reports;
    std::string error;
  };
  std::vector<Item> items(pieces.size());
  parallel_for(pieces.size(), workers, [&](std::size_t i) {
    try {
      auto [x, y] = split_tracks(pieces[i]);
      items[i].reports.emplace(information_flow(model, x, y, params, pieces[i].source_id),
                               information_flow(model, y, x, params, pieces[i].source_id));
    } catch (const Error& e) {
      items[i].error = pieces[i].source_id + ": " + e.what();
    }
  });
  BiasReport out;
  for (const auto& item : items) {
    if (!item.reports) {
      out.skipped.push_back(item.error);
      continue;
    }
    const auto& [a, b] = *item.reports;
    for (int f = 0; f < kFieldCount; ++f) out.mse[f] += (a.flow[f] - b.flow[f]) * (a.flow[f] - b.flow[f]);
    out.total_mse += (a.total_flow - b.total_flow) * (a.total_flow - b.total_flow);
    out.symmetric = out.symmetric && mirrored(a, b);
    ++out.pieces;
  }
  if (out.pieces) {
    for (auto& v : out.mse) v /= static_cast<double>(out.pieces);
    out.total_mse /= static_cast<double>(out.pieces);
  }
  return out;
}

inline nlohmann::ordered_json to_json(const BiasReport& r) {
  nlohmann::ordered_json j;
  j["pieces"] = r.pieces;
  for (int f = 0; f < kFieldCount; ++f) j["mse"][std::string(kFieldNames[f])] = r.mse[f];
  j["total_mse"] = r.total_mse;
  j["symmetric"] = r.symmetric;
  j["skipped"] = r.skipped;
  return j;
}

// ---------------------------------------------------------------------------
// Self-enhancement bias: does a model score its own generations higher?

struct SelfEnhancementReport {
  // mean_flow[scorer][generator], mean total flow
  std::array<std::array<double, 2>, 2> mean_flow{};
  std::array<std::array<FieldValues, 2>, 2> mean_field_flow{};
  std::array<std::array<std::size_t, 2>, 2> scored{};
  std::array<bool, 2> prefers_own{};  // row-wise: diagonal > off-diagonal
  std::size_t primes = 0;
  std::size_t skipped = 0;
  std::vector<std::string> notes;
};

// Each model continues every two-program prime by `steps` notes. The
// generated piece is split by program into X (lower program, the prime's
// melody) and Y, and both models score it.
inline SelfEnhancementReport self_enhancement(std::span<const ContextModel* const> models,
                                              std::span<const EventSequence> primes, int steps,
                                              const FlowParams& params, std::uint64_t seed, int workers = 1) {
  if (models.size() != 2) throw Error("self_enhancement: needs exactly two models");
  SelfEnhancementReport out;
  out.primes = primes.size();
  struct Cell {
    std::array<std::optional<FlowReport>, 2> by_scorer;
    std::string note;
  };
  std::vector<Cell> cells(primes.size() * 2);  // index = prime * 2 + generator
  parallel_for(cells.size(), workers, [&](std::size_t c) {
    const std::size_t p = c / 2, g = c % 2;
    auto& cell = cells[c];
    try {
      EventSequence prime = primes[p];
      if (!prime.events.empty() && prime.events.back().type == kEnd) prime.events.pop_back();
      validate_prefix(prime);
      const auto programs = std::count_if(prime.events.begin(), prime.events.end(),
                                          [](const Event& e) { return e.type == kInstrument; });
      if (programs != 2) throw TooShortError("prime needs exactly two programs");
      const std::uint64_t s = seed * 0x9E3779B97F4A7C15ULL + c;
      const auto piece = generate(*models[g], prime, steps, s);
      const auto voices = split_by_program(decode(piece));
      if (voices.size() != 2) throw TooShortError("generation lost a voice");
      for (std::size_t sc = 0; sc < 2; ++sc)
        cell.by_scorer[sc] = information_flow(*models[sc], voices[0], voices[1], params);
    } catch (const Error& e) {
      cell.by_scorer = {};
      cell.note = "prime " + std::to_string(p) + ", generator " + std::to_string(g) + ": " + e.what();
    }
  });
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const std::size_t g = c % 2;
    if (!cells[c].by_scorer[0] || !cells[c].by_scorer[1]) {
      ++out.skipped;
      out.notes.push_back(cells[c].note);
      continue;
    }
    for (std::size_t sc = 0; sc < 2; ++sc) {
      const auto& r = *cells[c].by_scorer[sc];
      out.mean_flow[sc][g] += r.total_flow;
      for (int f = 0; f < kFieldCount; ++f) out.mean_field_flow[sc][g][f] += r.flow[f];
      ++out.scored[sc][g];
    }
  }
  for (std::size_t sc = 0; sc < 2; ++sc)
    for (std::size_t g = 0; g < 2; ++g) {
      const auto n = static_cast<double>(std::max<std::size_t>(1, out.scored[sc][g]));
      out.mean_flow[sc][g] /= n;
      for (auto& v : out.mean_field_flow[sc][g]) v /= n;
    }
  out.prefers_own = {out.mean_flow[0][0] > out.mean_flow[0][1], out.mean_flow[1][1] > out.mean_flow[1][0]};
  return out;
}

inline nlohmann::ordered_json to_json(const SelfEnhancementReport& r) {
  nlohmann::ordered_json j;
  j["primes"] = r.primes;
  j["skipped"] = r.skipped;
  j["mean_total_flow"] = {{{"scorer", 0}, {"generator_0", r.mean_flow[0][0]}, {"generator_1", r.mean_flow[0][1]}},
                          {{"scorer", 1}, {"generator_0", r.mean_flow[1][0]}, {"generator_1", r.mean_flow[1][1]}}};
  for (int sc = 0; sc < 2; ++sc)
    for (int g = 0; g < 2; ++g)
      for (int f = 0; f < kFieldCount; ++f)
        j["mean_field_flow"]["scorer_" + std::to_string(sc)]["generator_" + std::to_string(g)]
         [std::string(kFieldNames[f])] = r.mean_field_flow[sc][g][f];
  j["scorer_0_prefers_own"] = r.prefers_own[0];
  j["scorer_1_prefers_own"] = r.prefers_own[1];
  j["notes"] = r.notes;
  return j;
}

// ---------------------------------------------------------------------------
// Synthetic two-voice corpora

namespace synth {

inline constexpr std::array<int, 7> kMajor{0, 2, 4, 5, 7, 9, 11};

inline int scale_pitch(int base, int degree) { return base + 12 * (degree / 7) + kMajor[degree % 7]; }

struct EchoStyle {
  int beats = 64;
  int melody_program = 0;
  int echo_program = 33;
  int echo_transpose = -24;  // keeps the echo below the melody
  int echo_delay_beats = 1;
};

// Melody: one note per beat, a random walk of +-1/+-2 scale degrees over two
// octaves from middle C. Accompaniment: the melody repeated one beat later,
// two octaves down.
inline Piece echo_piece(std::mt19937_64& rng, const EchoStyle& style, const GridConfig& grid, std::string id) {
  Piece p;
  p.grid = grid;
  p.ticks_per_beat = 480;
  p.source_id = std::move(id);
  std::uniform_int_distribution<int> step(0, 3);
  constexpr std::array<int, 4> kSteps{-2, -1, 1, 2};
  int degree = std::uniform_int_distribution<int>(3, 10)(rng);
  Track x, y;
  for (int b = 0; b < style.beats; ++b) {
    degree = std::clamp(degree + kSteps[step(rng)], 0, 14);
    x.push_back({b, 0, scale_pitch(60, degree), grid.resolution, style.melody_program});
  }
  for (const auto& n : x)
    if (n.beat + style.echo_delay_beats < style.beats)
      y.push_back({n.beat + style.echo_delay_beats, 0, n.pitch + style.echo_transpose, n.duration_steps,
                   style.echo_program});
  p.tracks = {std::move(x), std::move(y)};
  return p;
}

// A second style: two notes per beat (on the beat and the half beat) moving
// by thirds, doubled at the same onset an octave below.
inline Piece doubling_piece(std::mt19937_64& rng, int beats, const GridConfig& grid, std::string id,
                            int melody_program = 0, int bass_program = 33) {
  Piece p;
  p.grid = grid;
  p.ticks_per_beat = 480;
  p.source_id = std::move(id);
  std::uniform_int_distribution<int> step(0, 2);
  constexpr std::array<int, 3> kSteps{-2, 0, 2};
  int degree = std::uniform_int_distribution<int>(4, 9)(rng);
  const int half = grid.resolution / 2;
  Track x, y;
  for (int b = 0; b < beats; ++b)
    for (int pos : {0, half}) {
      degree = std::clamp(degree + kSteps[step(rng)], 0, 14);
      const int pitch = scale_pitch(60, degree);
      x.push_back({b, pos, pitch, half, melody_program});
      y.push_back({b, pos, pitch - 12, half, bass_program});
    }
  p.tracks = {std::move(x), std::move(y)};
  return p;
}

// An independent-voices piece: both voices are unrelated random walks.
inline Piece independent_piece(std::mt19937_64& rng, int beats, const GridConfig& grid, std::string id) {
  auto a = echo_piece(rng, {beats}, grid, id);
  auto b = echo_piece(rng, {beats}, grid, id);
  a.tracks[1] = b.tracks[1];
  return a;
}

// First `beats` beats of a piece as a generation prime (header plus notes,
// no terminator).
inline EventSequence prime_from(const Piece& piece, int beats) {
  Track notes;
  for (const auto& t : piece.tracks)
    for (const auto& n : t)
      if (n.beat < beats) notes.push_back(n);
  auto seq = encode(notes, piece.grid);
  seq.events.pop_back();
  return seq;
}

}  // namespace synth

}  // namespace coflow
