#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "coflow/model.hpp"
#include "support/oracles.hpp"

using namespace coflow;

namespace {

// Small vocabularies so that random contexts actually recur.
const GridConfig kTiny{.resolution = 2, .max_beat = 6, .max_duration = 2};

EventSequence tiny_sequence(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> beat(0, kTiny.max_beat - 1), pos(0, 1), pitch(60, 61), dur(1, 2), prog(0, 1),
      len(1, 8);
  Track t;
  const int n = len(rng);
  for (int i = 0; i < n; ++i) t.push_back({beat(rng), pos(rng), pitch(rng), dur(rng), prog(rng)});
  sort_canonical(t);
  return encode(t, kTiny);
}

std::vector<EventSequence> tiny_corpus(std::mt19937_64& rng, int count) {
  std::vector<EventSequence> out;
  for (int i = 0; i < count; ++i) out.push_back(tiny_sequence(rng));
  return out;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

// Notes one per beat repeating `pattern`, chunked into sequences.
std::vector<EventSequence> pattern_corpus(const std::vector<int>& pattern, int notes, int chunk, const GridConfig& g) {
  std::vector<EventSequence> out;
  for (int start = 0; start < notes; start += chunk) {
    Track t;
    for (int i = start; i < std::min(notes, start + chunk); ++i)
      t.push_back({i - start, 0, pattern[static_cast<std::size_t>(i) % pattern.size()], g.resolution, 0});
    out.push_back(encode(t, g));
  }
  return out;
}

}  // namespace

TEST(ContextModel, UntrainedIsUniform) {
  const ContextModel m;
  const auto d = m.predict_next({});
  for (int f = 0; f < kFieldCount; ++f) {
    ASSERT_EQ(d.probs[f].size(), static_cast<std::size_t>(field_vocab(m.grid(), f)));
    for (double p : d.probs[f]) EXPECT_EQ(p, 1.0 / field_vocab(m.grid(), f));
  }
  EXPECT_NEAR(d.entropy(kPitch), std::log(128.0), 1e-12);
}

TEST(ContextModel, FieldVocabularies) {
  const GridConfig g;
  EXPECT_EQ(field_vocab(g, kType), 5);
  EXPECT_EQ(field_vocab(g, kBeat), 1024);
  EXPECT_EQ(field_vocab(g, kPosition), 12);
  EXPECT_EQ(field_vocab(g, kPitch), 128);
  EXPECT_EQ(field_vocab(g, kDuration), 97);
  EXPECT_EQ(field_vocab(g, kInstrumentField), 128);
}

TEST(ContextModel, MatchesBruteForceBackoff) {
  std::mt19937_64 rng(17);
  const auto corpus = tiny_corpus(rng, 40);
  for (int order : {0, 1, 2, 4}) {
    for (double lambda : {1.0, 0.5}) {
      const auto m = train(corpus, {order, lambda, kTiny});
      for (int q = 0; q < 300; ++q) {
        // Half the queries reuse a corpus window, half come from fresh data.
        const auto src = q % 2 ? tiny_sequence(rng) : corpus[rng() % corpus.size()];
        const std::size_t t = rng() % src.events.size();
        const std::span<const Event> ctx(src.events.data(), t);
        const Event& next = src.events[t];
        const auto expect = reference::brute_force_probability(corpus, ctx, next, order, lambda, kTiny);
        const auto got = m.probability_of(ctx, next);
        const auto dist = m.predict_next(ctx);
        for (int f = 0; f < kFieldCount; ++f) {
          EXPECT_NEAR(got[f], expect[f], 1e-12 * expect[f]) << "order " << order << " field " << f;
          // A non-note's placeholder beat is not where its increment points.
          if (f != kBeat || next.type == kNote) {
            EXPECT_EQ(dist.probs[f][next.field(f)], got[f]);
          }
        }
      }
    }
  }
}

TEST(ContextModel, DistributionsNormalizedAndPositive) {
  std::mt19937_64 rng(19);
  const auto corpus = tiny_corpus(rng, 60);
  const auto m = train(corpus, {3, 1.0, kTiny});
  for (int q = 0; q < 200; ++q) {
    const auto src = tiny_sequence(rng);
    const std::size_t t = rng() % (src.events.size() + 1);
    const auto d = m.predict_next(std::span<const Event>(src.events.data(), t));
    for (int f = 0; f < kFieldCount; ++f) {
      EXPECT_NEAR(sum(d.probs[f]), 1.0, 1e-9);
      for (double p : d.probs[f]) EXPECT_GT(p, 0.0);
    }
  }
}

TEST(ContextModel, UnigramTotalsCountEveryEvent) {
  std::mt19937_64 rng(23);
  const auto corpus = tiny_corpus(rng, 25);
  std::size_t n = 0;
  for (const auto& s : corpus) n += s.events.size();
  const auto m = train(corpus, {2, 1.0, kTiny});
  ASSERT_NE(m.unigram(), nullptr);
  EXPECT_EQ(m.unigram()->total, n);
  EXPECT_EQ(m.trained_events(), n);
  for (const auto& field : m.unigram()->fields) {
    std::uint64_t s = 0;
    for (const auto& [v, c] : field.entries) s += c;
    EXPECT_EQ(s, n);
  }
}

TEST(ContextModel, RepeatedNoteSingleUnigramValuePerNoteField) {
  // One note repeated every beat: in the unigram table pitch takes 0 (header
  // events) and 60 only.
  const auto corpus = pattern_corpus({60}, 50, 50, GridConfig{});
  const auto m = train(corpus, {});
  const auto& pitch = m.unigram()->fields[kPitch].entries;
  ASSERT_EQ(pitch.size(), 2u);
  EXPECT_EQ(pitch[1].first, 60);
  EXPECT_EQ(pitch[1].second, 50u);
}

TEST(ContextModel, RepeatedEventMassAndConsistency) {
  double previous = 0.0;
  for (int n : {8, 32, 128, 512}) {
    const auto corpus = pattern_corpus({60}, n, n, GridConfig{});
    const auto m = train(corpus, {});
    // A long context of the repeated note, deep inside the sequence.
    const auto& ev = corpus[0].events;
    const std::size_t t = ev.size() - 2;
    const std::span<const Event> ctx(ev.data(), t);
    const double p = m.predict_next(ctx).probs[kPitch][60];
    // Context length 4 was observed at least n - 4 times.
    const double floor = static_cast<double>(n - 4) / (n - 3);
    EXPECT_GE(p, floor) << n;
    EXPECT_GE(p, previous) << n;
    previous = p;
  }
  EXPECT_GT(previous, 0.995);
}

TEST(ContextModel, UnseenContextFallsBackToUnigram) {
  const auto corpus = pattern_corpus({60, 62}, 100, 100, GridConfig{});
  const auto m = train(corpus, {});
  const std::vector<Event> unseen{{kNote, 7, 5, 100, 3, 99}};
  const auto a = m.predict_next(unseen);
  const auto b = m.predict_next({});
  for (int f = 0; f < kFieldCount; ++f) {
    if (f == kBeat) {
      // Same increments, anchored at beat 7 instead of 0.
      for (int d = 0; d < 1024; ++d) EXPECT_EQ(a.probs[f][(7 + d) % 1024], b.probs[f][d]);
    } else {
      EXPECT_EQ(a.probs[f], b.probs[f]);
    }
  }
}

TEST(ContextModel, TrainingRejectsMixedBounds) {
  std::vector<EventSequence> corpus{encode(Track{{0, 0, 60, 12, 0}}, GridConfig{}),
                                    encode(Track{{0, 0, 60, 12, 0}}, GridConfig{.resolution = 24})};
  EXPECT_THROW(train(corpus, {}), Error);
  EXPECT_THROW(train(std::vector<EventSequence>{}, {}), Error);
  EXPECT_THROW(ContextModel({-1, 1.0, {}}), Error);
  EXPECT_THROW(ContextModel({4, 0.0, {}}), Error);
}

TEST(ContextModel, SerializationIsDeterministicAndLossless) {
  std::mt19937_64 rng(29);
  const auto corpus = tiny_corpus(rng, 30);
  const auto a = train(corpus, {3, 0.75, kTiny});
  const auto b = train(corpus, {3, 0.75, kTiny});
  EXPECT_EQ(a.to_bytes(), b.to_bytes());
  EXPECT_EQ(a.fingerprint(), b.fingerprint());

  const auto c = ContextModel::from_bytes(a.to_bytes());
  EXPECT_EQ(c.to_bytes(), a.to_bytes());
  EXPECT_EQ(c.config(), a.config());
  EXPECT_EQ(c.fingerprint(), a.fingerprint());
  for (int q = 0; q < 100; ++q) {
    const auto src = tiny_sequence(rng);
    const std::span<const Event> ctx(src.events.data(), rng() % src.events.size());
    const auto pa = a.predict_next(ctx), pc = c.predict_next(ctx);
    for (int f = 0; f < kFieldCount; ++f) EXPECT_EQ(pa.probs[f], pc.probs[f]);
  }

  // Header layout: magic, version 1 little-endian, body length.
  const auto bytes = a.to_bytes();
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "COFLOWCM");
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[9] | bytes[10] | bytes[11], 0);
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = len << 8 | bytes[12 + i];
  EXPECT_EQ(len, bytes.size() - 20);
}

TEST(ContextModel, LoadRejectsDamagedFiles) {
  std::mt19937_64 rng(31);
  const auto bytes = train(tiny_corpus(rng, 5), {2, 1.0, kTiny}).to_bytes();
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(ContextModel::from_bytes(bad), FormatError);
  bad = bytes;
  bad[8] = 2;
  EXPECT_THROW(ContextModel::from_bytes(bad), FormatError);
  bad.assign(bytes.begin(), bytes.end() - 3);
  EXPECT_THROW(ContextModel::from_bytes(bad), FormatError);
  // Change one count so the field no longer sums to its total.
  bad = bytes;
  bad[bad.size() - 1] ^= 0x01;
  EXPECT_THROW(ContextModel::from_bytes(bad), FormatError);
}

TEST(ContextModel, IidPitchEntropyApproachesLogM) {
  // Each length-k context needs enough visits for its plug-in entropy to be
  // unbiased: m^k contexts share the 10^5 events.
  for (auto [m, order] : {std::pair{2, 4}, {4, 4}, {8, 2}}) {
    std::vector<int> pitches;
    for (int i = 0; i < m; ++i) pitches.push_back(60 + 2 * i);
    std::mt19937_64 rng(37 + m);
    const GridConfig g;
    std::vector<EventSequence> corpus;
    for (int i = 0; i < 200; ++i) corpus.push_back(encode(reference::iid_track(rng, 500, pitches, 0, g), g));
    const auto model = train(corpus, {order, 1.0, g});
    const auto probe = encode(reference::iid_track(rng, 1000, pitches, 0, g), g);
    double h = 0.0;
    int count = 0;
    for (std::size_t t = probe.first_note_index() + 16; t + 1 < probe.events.size(); ++t, ++count)
      h += model.predict_next(std::span<const Event>(probe.events.data(), t)).entropy(kPitch);
    EXPECT_NEAR(h / count, std::log(m), 0.02 * std::log(m)) << m;
  }
}

TEST(Generate, ZeroStepsAppendsTerminator) {
  const auto corpus = pattern_corpus({60, 62}, 64, 64, GridConfig{});
  const auto m = train(corpus, {});
  auto prime = corpus[0];
  prime.events.resize(prime.first_note_index() + 5);
  const auto out = generate(m, prime, 0, 1);
  auto expected = prime;
  expected.events.push_back({kEnd});
  EXPECT_EQ(out, expected);
}

TEST(Generate, DeterministicAndValid) {
  std::mt19937_64 rng(41);
  const GridConfig g;
  std::vector<EventSequence> corpus;
  for (int i = 0; i < 20; ++i) corpus.push_back(encode(reference::iid_track(rng, 64, {60, 64, 67}, 0, g), g));
  const auto m = train(corpus, {});
  auto prime = corpus[0];
  prime.events.resize(prime.first_note_index() + 4);
  const auto a = generate(m, prime, 100, 99);
  const auto b = generate(m, prime, 100, 99);
  const auto c = generate(m, prime, 100, 100);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_NO_THROW(validate(a));
  EXPECT_EQ(a.note_count(), 104u);
  for (const auto& e : a.events) {
    if (e.type == kNote) {
      EXPECT_EQ(e.instrument, 0);
    }
  }
}

TEST(Generate, AlternatingPatternBigrams) {
  // Training: 60, 62, 60, 62, ... so P(62 | 60) = P(60 | 62) = 1.
  const GridConfig g{.max_beat = 16384};
  const auto corpus = pattern_corpus({60, 62}, 20000, 1000, g);
  const auto m = train(corpus, {4, 1.0, g});
  auto prime = corpus[0];
  prime.events.resize(prime.first_note_index() + 8);
  const auto out = generate(m, prime, 10000, 7);
  const auto notes = decode(out);
  std::map<std::pair<int, int>, int> bigrams;
  std::map<int, int> from;
  for (std::size_t i = 1; i < notes.size(); ++i) {
    ++bigrams[{notes[i - 1].pitch, notes[i].pitch}];
    ++from[notes[i - 1].pitch];
  }
  ASSERT_GT(from[60], 1000);
  ASSERT_GT(from[62], 1000);
  EXPECT_GE(static_cast<double>(bigrams[{60, 62}]) / from[60], 0.95);
  EXPECT_GE(static_cast<double>(bigrams[{62, 60}]) / from[62], 0.95);
}
