// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "coflow/coflow.hpp"
#include "support/oracles.hpp"

using namespace coflow;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

const GridConfig kGrid;

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1: total flow = T(X->Y) + T(Y->X) + I(X_t; Y_t | past) on random specs.
Outcome identity() {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int nx = 1 + static_cast<int>(rng() % 4), ny = 1 + static_cast<int>(rng() % 4);
    worst = std::max(worst, std::abs(exact_flow(random_spec(rng, nx, ny)).identity_gap()));
  }
  return {worst < 1e-9, fmt("100 specs, max |gap| = %.3g nats", worst)};
}

// 2: estimator pipeline on sampled paths vs the exact value.
Outcome pipeline() {
  struct Case {
    const char* name;
    JointMarkovSpec spec;
  };
  const std::vector<Case> cases{{"independent", independent_spec()}, {"copy", copy_spec()},
                                {"instantaneous", instantaneous_spec()}};
  bool ok = true;
  std::string detail;
  for (const auto& c : cases) {
    const double target = exact_flow(c.spec).total_flow;
    std::vector<EventSequence> corpus;
    for (const auto& [x, y] : path_tracks(sample_paths(c.spec, 100000, 11), kGrid)) {
      auto views = voice_views(x, y, kGrid);
      std::move(views.begin(), views.end(), std::back_inserter(corpus));
    }
    const auto model = train(corpus, {4, 1.0, kGrid});
    // Held-out path, flows pooled over chunks by window length.
    double weighted = 0.0, beats = 0.0;
    for (const auto& [x, y] : path_tracks(sample_paths(c.spec, 20000, 12), kGrid)) {
      const auto r = information_flow(model, x, y, {});
      weighted += r.total_flow * r.window_beats;
      beats += r.window_beats;
    }
    const double flow = weighted / beats;
    const double tol = std::max(0.1 * std::abs(target), 0.02);
    ok = ok && std::abs(flow - target) <= tol;
    detail += fmt("%s%s %.4f vs %.4f (tol %.3f)", detail.empty() ? "" : "; ", c.name, flow, target, tol);
  }
  return {ok, detail};
}

// 3: positives (echo pairs) beat shuffled negatives.
Outcome discrimination() {
  std::mt19937_64 rng(303);
  std::vector<Piece> train_set, test_set;
  for (int i = 0; i < 100; ++i) train_set.push_back(synth::echo_piece(rng, {}, kGrid, "train" + std::to_string(i)));
  for (int i = 0; i < 100; ++i) test_set.push_back(synth::echo_piece(rng, {}, kGrid, "piece" + std::to_string(i)));
  const auto model = train(training_corpus(train_set, kGrid), {4, 1.0, kGrid});
  const auto report = batch_score(model, test_set, build_pairs(test_set, 5), {}, 2);
  const double t = report.total_flow_t();
  const bool pitch = report.positive.mean[kPitch] > report.negative.mean[kPitch];
  return {report.failures == 0 && t > 3 && pitch,
          fmt("total flow pos %.3f neg %.3f, t = %.1f; pitch flow pos %.3f neg %.3f; failures %zu",
              report.positive.total_mean, report.negative.total_mean, t, report.positive.mean[kPitch],
              report.negative.mean[kPitch], report.failures)};
}

// 4: swapping the voices changes nothing.
Outcome positional() {
  std::mt19937_64 rng(404);
  std::vector<Piece> pieces;
  for (int i = 0; i < 30; ++i) pieces.push_back(synth::echo_piece(rng, {}, kGrid, "echo" + std::to_string(i)));
  for (int i = 0; i < 30; ++i) pieces.push_back(synth::independent_piece(rng, 64, kGrid, "ind" + std::to_string(i)));
  const auto model = train(training_corpus(pieces, kGrid), {4, 1.0, kGrid});
  bool ok = true;
  std::string detail;
  for (auto norm : {Normalization::kTime, Normalization::kEvent}) {
    FlowParams params;
    params.normalization = norm;
    const auto r = positional_bias(model, pieces, params, 2);
    bool zero = r.total_mse == 0.0;
    for (double v : r.mse) zero = zero && v == 0.0;
    ok = ok && zero && r.symmetric && r.pieces >= 50;
    detail += fmt("%s%s: %zu pieces, max mse %g, reports mirrored %s", detail.empty() ? "" : "; ", to_string(norm).c_str(), r.pieces,
                  *std::max_element(r.mse.begin(), r.mse.end()), r.symmetric ? "yes" : "no");
  }
  return {ok, detail};
}

// 5: self-enhancement matrix, deterministic; direction reported only.
Outcome self_bias() {
  std::mt19937_64 rng(505);
  std::vector<Piece> a_set, b_set;
  for (int i = 0; i < 60; ++i) a_set.push_back(synth::echo_piece(rng, {}, kGrid, "a"));
  for (int i = 0; i < 60; ++i) b_set.push_back(synth::doubling_piece(rng, 32, kGrid, "b"));
  const auto ma = train(training_corpus(a_set, kGrid), {4, 1.0, kGrid});
  const auto mb = train(training_corpus(b_set, kGrid), {4, 1.0, kGrid});
  std::vector<EventSequence> primes;
  for (int i = 0; i < 10; ++i) primes.push_back(synth::prime_from(synth::echo_piece(rng, {}, kGrid, "p"), 8));
  for (int i = 0; i < 10; ++i) primes.push_back(synth::prime_from(synth::doubling_piece(rng, 32, kGrid, "p"), 4));
  const std::array<const ContextModel*, 2> models{&ma, &mb};
  const auto r1 = self_enhancement(models, primes, 200, {}, 99, 2);
  const auto r2 = self_enhancement(models, primes, 200, {}, 99, 1);
  const bool same = to_json(r1).dump() == to_json(r2).dump();
  const bool full = r1.skipped == 0 && r1.primes == 20;
  return {same && full,
          fmt("matrix [[%.3f %.3f] [%.3f %.3f]] (scorer x generator); scorer A prefers own: %s, scorer B: %s; "
              "rerun identical %s, skipped %zu",
              r1.mean_flow[0][0], r1.mean_flow[0][1], r1.mean_flow[1][0], r1.mean_flow[1][1],
              r1.prefers_own[0] ? "yes" : "no", r1.prefers_own[1] ? "yes" : "no", same ? "yes" : "no", r1.skipped)};
}

// 6: entropy estimator sanity.
Outcome entropy_sanity() {
  // (a) periodic sequence
  const std::vector<int> cycle{60, 64, 67, 72, 67, 64};
  auto periodic = [&](int notes, int phase) {
    Track t;
    for (int i = 0; i < notes; ++i) t.push_back({i, 0, cycle[(i + phase) % cycle.size()], 12, 0});
    return encode(t, kGrid);
  };
  std::vector<EventSequence> corpus;
  for (int i = 0; i < 10; ++i) corpus.push_back(periodic(1000, i));
  const auto m_periodic = train(corpus, {4, 1.0, kGrid});
  const double h_periodic =
      conditional_entropy(m_periodic, periodic(500, 3), 64, 16, EntropyMode::kNll).total_mean();

  // (b) i.i.d. uniform over 4 pitches
  std::mt19937_64 rng(606);
  std::vector<EventSequence> iid;
  for (int i = 0; i < 200; ++i) iid.push_back(encode(reference::iid_track(rng, 500, {60, 62, 64, 65}, 0, kGrid), kGrid));
  const auto m_iid = train(iid, {4, 1.0, kGrid});
  double nll = 0.0, pred = 0.0;
  for (int i = 0; i < 10; ++i) {
    const auto probe = encode(reference::iid_track(rng, 1000, {60, 62, 64, 65}, 0, kGrid), kGrid);
    nll += conditional_entropy(m_iid, probe, 64, 16, EntropyMode::kNll).means()[kPitch] / 10;
    pred += conditional_entropy(m_iid, probe, 64, 16, EntropyMode::kPredictive).means()[kPitch] / 10;
  }
  const double ln4 = std::log(4.0);

  // (c) untrained, predictive
  const ContextModel blank;
  double worst = 0.0;
  for (const auto& row : conditional_entropy(blank, periodic(100, 0), 64, 16, EntropyMode::kPredictive).values)
    worst = std::max(worst, std::abs(row[kPitch] - std::log(128.0)));

  const bool a = h_periodic < 0.02;
  const bool b = std::abs(nll - ln4) <= 0.03 * ln4 && std::abs(pred - ln4) <= 0.03 * ln4;
  const bool c = worst <= 1e-12;
  return {a && b && c, fmt("(a) periodic %.5f nats/event; (b) iid-4 pitch nll %.4f, predictive %.4f vs ln 4 = %.4f; "
                           "(c) untrained max |H - ln 128| = %.2g",
                           h_periodic, nll, pred, ln4, worst)};
}

// 7: representation round trips and the golden fixture.
Outcome round_trips() {
  std::mt19937_64 rng(707);
  int bad = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto t = reference::random_tracks(rng, 2, 30, kGrid);
    const auto merged = merge_tracks(t[0], t[1]);
    if (merged.empty()) continue;
    const auto seq = encode(t[0], t[1], kGrid);
    try {
      validate(seq);
      if (decode(seq) != merged || encode(decode(seq), kGrid) != seq || encode(t[1], t[0], kGrid) != seq) ++bad;
    } catch (const Error&) {
      ++bad;
    }
  }
  std::ifstream mid(std::string(COFLOW_TEST_DATA) + "/golden_two_track.mid", std::ios::binary);
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(mid), {}};
  std::ifstream notes(std::string(COFLOW_TEST_DATA) + "/golden_two_track.notes");
  const bool golden = build_piece(parse_midi(bytes), kGrid, "golden").piece.tracks == read_notes(notes);
  return {bad == 0 && golden, fmt("10000 random sequences, %d failures; golden fixture %s", bad,
                                  golden ? "matches" : "differs")};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "flow decomposition identity", 10, identity},
      {2, "pipeline vs oracle", 120, pipeline},
      {3, "positive > negative", 300, discrimination},
      {4, "positional bias", 60, positional},
      {5, "self-enhancement report", 300, self_bias},
      {6, "entropy sanity", 60, entropy_sanity},
      {7, "representation round trips", 30, round_trips},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool pass = o.pass && secs < c.limit_s;
    failed += !pass;
    std::printf("[%s] %d %s: %s (%.1fs, limit %.0fs)\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                c.limit_s);
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
