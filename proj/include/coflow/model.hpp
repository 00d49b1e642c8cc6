#pragma once

// Count-based back-off context model over six-field events.
//
// Given the preceding events, each field of the next event gets its own
// distribution (fields are conditionally independent given the context).
// For context lengths j = 0..order the model keeps per-field counts keyed
// by a 64-bit hash of the last j events. A prediction starts from the
// uniform distribution and, for each matched length from short to long,
// applies P_j = (counts_j + lambda * P_{j-1}) / (total_j + lambda).
//
// Beats are relative: context keys store each event's beat as its offset
// back from the newest context event, and the beat field is counted as the
// increment over the previous event's beat (mod max_beat). Non-note events
// count as increment 0; their beat of 0 is a placeholder, and the end
// event would otherwise teach a large backwards jump. Predictions map the
// increment back onto absolute beats, which is a bijection, so the beat
// distribution still sums to one.
//
// Hash collisions between distinct contexts are accepted.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <iterator>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "coflow/core.hpp"
#include "coflow/events.hpp"

namespace coflow {

struct FieldDistributions {
  std::array<std::vector<double>, kFieldCount> probs;

  double entropy(int f) const {
    double h = 0.0;
    for (double p : probs[f])
      if (p > 0.0) h -= p * std::log(p);
    return h;
  }
};

struct ModelConfig {
  int order = 4;
  double lambda = 1.0;
  GridConfig grid;

  bool operator==(const ModelConfig&) const = default;
};

namespace detail {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv_mix(std::uint64_t h, std::int32_t v) {
  auto u = static_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) {
    h ^= (u >> (8 * i)) & 0xFF;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv_bytes(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = kFnvOffset;
  for (auto b : bytes) {
    h ^= b;
    h *= kFnvPrime;
  }
  return h;
}

// Sparse counts for one field, sorted by value.
struct FieldCounts {
  std::vector<std::pair<std::int32_t, std::uint64_t>> entries;

  void add(std::int32_t v) {
    auto it = std::lower_bound(entries.begin(), entries.end(), v,
                               [](const auto& e, std::int32_t key) { return e.first < key; });
    if (it != entries.end() && it->first == v)
      ++it->second;
    else
      entries.insert(it, {v, 1});
  }
  std::uint64_t count(std::int32_t v) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), v,
                               [](const auto& e, std::int32_t key) { return e.first < key; });
    return it != entries.end() && it->first == v ? it->second : 0;
  }
};

struct ContextNode {
  std::uint64_t total = 0;
  std::array<FieldCounts, kFieldCount> fields;
};

// Little-endian primitive IO.
inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>(v >> (8 * i));
  os.write(b, 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(v >> (8 * i));
  os.write(b, 8);
}
inline std::uint64_t get_le(std::istream& is, int n) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), n)) throw FormatError("model file truncated");
  std::uint64_t v = 0;
  for (int i = n - 1; i >= 0; --i) v = v << 8 | b[i];
  return v;
}

}  // namespace detail

class ContextModel {
 public:
  static constexpr char kMagic[8] = {'C', 'O', 'F', 'L', 'O', 'W', 'C', 'M'};
  static constexpr std::uint32_t kVersion = 1;

  explicit ContextModel(ModelConfig config = {}) : config_(config), tables_(std::max(config.order, 0) + 1) {
    if (config.order < 0) throw Error("model order must be >= 0");
    if (!(config.lambda > 0.0) || !std::isfinite(config.lambda)) throw Error("model lambda must be positive");
    if (!config.grid.valid()) throw Error("model grid bounds must be positive");
    refresh_fingerprint();
  }

  const ModelConfig& config() const { return config_; }
  const GridConfig& grid() const { return config_.grid; }
  std::uint64_t trained_events() const { return trained_events_; }
  std::size_t context_count(int length) const { return tables_.at(length).size(); }

  // Adds every sequence's events to the count tables. Sequences must be
  // valid and share the model's grid.
  void train(std::span<const EventSequence> corpus) {
    for (std::size_t s = 0; s < corpus.size(); ++s) {
      if (!(corpus[s].grid == config_.grid))
        throw Error("training sequence " + std::to_string(s) + " has vocabulary bounds different from the model");
      validate(corpus[s]);
    }
    for (const auto& seq : corpus) train_one(seq.events);
    refresh_fingerprint();
  }

  FieldDistributions predict_next(std::span<const Event> context) const {
    const auto nodes = matched_nodes(context);
    const int prev_beat = context.empty() ? 0 : context.back().beat;
    FieldDistributions out;
    for (int f = 0; f < kFieldCount; ++f) {
      const int vocab = field_vocab(config_.grid, f);
      std::vector<double> p(vocab, 1.0 / vocab);
      for (const auto* node : nodes) {
        const double denom = static_cast<double>(node->total) + config_.lambda;
        for (auto& v : p) v *= config_.lambda;
        for (const auto& [value, count] : node->fields[f].entries)
          if (value >= 0 && value < vocab) p[value] += static_cast<double>(count);
        for (auto& v : p) v /= denom;
      }
      if (f == kBeat) {
        std::vector<double> absolute(vocab);
        for (int d = 0; d < vocab; ++d) absolute[(prev_beat + d) % vocab] = p[d];
        p = std::move(absolute);
      }
      out.probs[f] = std::move(p);
    }
    return out;
  }

  // Per-field probability of `next` under predict_next(context), computed
  // without materializing the distributions.
  std::array<double, kFieldCount> probability_of(std::span<const Event> context, const Event& next) const {
    const auto nodes = matched_nodes(context);
    const Event obs = observation(context.empty() ? nullptr : &context.back(), next);
    std::array<double, kFieldCount> out{};
    for (int f = 0; f < kFieldCount; ++f) {
      double p = 1.0 / field_vocab(config_.grid, f);
      for (const auto* node : nodes)
        p = (static_cast<double>(node->fields[f].count(obs.field(f))) + config_.lambda * p) /
            (static_cast<double>(node->total) + config_.lambda);
      out[f] = p;
    }
    return out;
  }

  const detail::ContextNode* unigram() const {
    auto it = tables_[0].find(0);
    return it == tables_[0].end() ? nullptr : &it->second;
  }

  // --- serialization --------------------------------------------------------
  // magic[8] | u32 version | u64 body length | body
  // body: i32 order | f64 lambda | i32 r | i32 max_beat | i32 max_duration |
  //       u64 trained events | per length j: u64 node count, nodes sorted by
  //       key: u64 key | u64 total | per field: u32 n, n x (i32 value, u64 count)
  void save(std::ostream& os) const {
    std::ostringstream body;
    detail::put_u32(body, static_cast<std::uint32_t>(config_.order));
    detail::put_u64(body, std::bit_cast<std::uint64_t>(config_.lambda));
    detail::put_u32(body, static_cast<std::uint32_t>(config_.grid.resolution));
    detail::put_u32(body, static_cast<std::uint32_t>(config_.grid.max_beat));
    detail::put_u32(body, static_cast<std::uint32_t>(config_.grid.max_duration));
    detail::put_u64(body, trained_events_);
    for (const auto& table : tables_) {
      std::vector<std::uint64_t> keys;
      keys.reserve(table.size());
      for (const auto& kv : table) keys.push_back(kv.first);
      std::sort(keys.begin(), keys.end());
      detail::put_u64(body, keys.size());
      for (auto key : keys) {
        const auto& node = table.at(key);
        detail::put_u64(body, key);
        detail::put_u64(body, node.total);
        for (const auto& field : node.fields) {
          detail::put_u32(body, static_cast<std::uint32_t>(field.entries.size()));
          for (const auto& [value, count] : field.entries) {
            detail::put_u32(body, static_cast<std::uint32_t>(value));
            detail::put_u64(body, count);
          }
        }
      }
    }
    const std::string bytes = std::move(body).str();
    os.write(kMagic, sizeof kMagic);
    detail::put_u32(os, kVersion);
    detail::put_u64(os, bytes.size());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }

  std::vector<std::uint8_t> to_bytes() const {
    std::ostringstream os;
    save(os);
    const std::string s = std::move(os).str();
    return {s.begin(), s.end()};
  }

  static ContextModel load(std::istream& is) {
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw FormatError("not a context model file");
    const auto version = static_cast<std::uint32_t>(detail::get_le(is, 4));
    if (version != kVersion) throw FormatError("unsupported model version " + std::to_string(version));
    const std::uint64_t length = detail::get_le(is, 8);
    std::string body(length, '\0');
    if (!is.read(body.data(), static_cast<std::streamsize>(length))) throw FormatError("model body truncated");
    std::istringstream bs(body);

    ModelConfig cfg;
    cfg.order = static_cast<std::int32_t>(detail::get_le(bs, 4));
    cfg.lambda = std::bit_cast<double>(detail::get_le(bs, 8));
    cfg.grid.resolution = static_cast<std::int32_t>(detail::get_le(bs, 4));
    cfg.grid.max_beat = static_cast<std::int32_t>(detail::get_le(bs, 4));
    cfg.grid.max_duration = static_cast<std::int32_t>(detail::get_le(bs, 4));
    if (cfg.order < 0 || cfg.order > 64) throw FormatError("model order out of range");
    if (!(cfg.lambda > 0.0) || !std::isfinite(cfg.lambda)) throw FormatError("model lambda must be positive");
    if (!cfg.grid.valid()) throw FormatError("model grid bounds must be positive");
    ContextModel m(cfg);
    m.trained_events_ = detail::get_le(bs, 8);
    for (auto& table : m.tables_) {
      const std::uint64_t nodes = detail::get_le(bs, 8);
      for (std::uint64_t n = 0; n < nodes; ++n) {
        const std::uint64_t key = detail::get_le(bs, 8);
        detail::ContextNode node;
        node.total = detail::get_le(bs, 8);
        for (int f = 0; f < kFieldCount; ++f) {
          const auto entries = static_cast<std::uint32_t>(detail::get_le(bs, 4));
          std::uint64_t sum = 0;
          std::int32_t last = -1;
          for (std::uint32_t e = 0; e < entries; ++e) {
            const auto value = static_cast<std::int32_t>(detail::get_le(bs, 4));
            const std::uint64_t count = detail::get_le(bs, 8);
            if (value <= last || value >= field_vocab(cfg.grid, f))
              throw FormatError("model counts out of order or out of vocabulary");
            last = value;
            sum += count;
            node.fields[f].entries.push_back({value, count});
          }
          if (sum != node.total) throw FormatError("model field counts do not sum to the context total");
        }
        if (!table.emplace(key, std::move(node)).second) throw FormatError("duplicate context key in model");
      }
    }
    if (bs.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in model body");
    m.refresh_fingerprint();
    return m;
  }

  static ContextModel from_bytes(std::span<const std::uint8_t> bytes) {
    std::istringstream is(std::string(bytes.begin(), bytes.end()));
    return load(is);
  }

  // Hash of the serialized form, refreshed whenever the counts change.
  std::uint64_t fingerprint() const { return fingerprint_; }

 private:
  // Field values as counted: a note's beat becomes the increment over `prev`.
  Event observation(const Event* prev, const Event& e) const {
    Event obs = e;
    if (e.type != kNote) {
      obs.beat = 0;
      return obs;
    }
    const int m = config_.grid.max_beat;
    const int prev_beat = prev ? prev->beat : 0;
    obs.beat = ((e.beat - prev_beat) % m + m) % m;
    return obs;
  }

  // keys[j] identifies the last j events of `window` (j <= order).
  std::vector<std::uint64_t> context_keys(std::span<const Event> window) const {
    const std::size_t longest = std::min<std::size_t>(config_.order, window.size());
    std::vector<std::uint64_t> keys(longest + 1);
    std::uint64_t h = detail::kFnvOffset;
    keys[0] = 0;
    if (longest == 0) return keys;
    const int anchor = window.back().beat;
    for (std::size_t j = 1; j <= longest; ++j) {
      const Event& e = window[window.size() - j];
      h = detail::fnv_mix(h, e.type);
      h = detail::fnv_mix(h, anchor - e.beat);
      h = detail::fnv_mix(h, e.position);
      h = detail::fnv_mix(h, e.pitch);
      h = detail::fnv_mix(h, e.duration);
      h = detail::fnv_mix(h, e.instrument);
      keys[j] = h;
    }
    return keys;
  }

  std::vector<const detail::ContextNode*> matched_nodes(std::span<const Event> context) const {
    const auto keys = context_keys(context);
    std::vector<const detail::ContextNode*> nodes;
    for (std::size_t j = 0; j < keys.size(); ++j) {
      auto it = tables_[j].find(keys[j]);
      if (it == tables_[j].end()) break;
      nodes.push_back(&it->second);
    }
    return nodes;
  }

  void train_one(const std::vector<Event>& events) {
    for (std::size_t t = 0; t < events.size(); ++t) {
      const std::span<const Event> window(events.data(), t);
      const Event obs = observation(t ? &events[t - 1] : nullptr, events[t]);
      const auto keys = context_keys(window);
      for (std::size_t j = 0; j < keys.size(); ++j) {
        auto& node = tables_[j][keys[j]];
        ++node.total;
        for (int f = 0; f < kFieldCount; ++f) node.fields[f].add(obs.field(f));
      }
      ++trained_events_;
    }
  }

  void refresh_fingerprint() { fingerprint_ = detail::fnv_bytes(to_bytes()); }

  ModelConfig config_;
  std::uint64_t fingerprint_ = 0;
  std::vector<std::unordered_map<std::uint64_t, detail::ContextNode>> tables_;
  std::uint64_t trained_events_ = 0;
};

// Trains a fresh model. Deterministic: same corpus and config give
// byte-identical serialized models.
inline ContextModel train(std::span<const EventSequence> corpus, const ModelConfig& config) {
  if (corpus.empty()) throw Error("training corpus is empty");
  ContextModel m(config);
  m.train(corpus);
  return m;
}

// ---------------------------------------------------------------------------
// Sampling

namespace detail {

// Inverse-CDF draw over nonnegative weights; portable given the engine.
inline int sample_index(const std::vector<double>& weights, std::mt19937_64& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * total;
  double acc = 0.0;
  int last_positive = -1;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last_positive = static_cast<int>(i);
    if (u < acc) return last_positive;
  }
  return last_positive;
}

}  // namespace detail

// Continues `prime` (a complete header plus optional notes) by `steps`
// sampled note events. Every field is drawn from predict_next over the
// last `order` events, with values a note cannot take masked out: type is
// forced to note, duration to >= 1, instrument to the header programs, and
// beat to >= the previous note's beat. The result has its notes sorted and
// a terminator appended.
inline EventSequence generate(const ContextModel& model, EventSequence prime, int steps, std::uint64_t seed) {
  if (!prime.events.empty() && prime.events.back().type == kEnd) prime.events.pop_back();
  if (!(prime.grid == model.grid())) throw Error("generate: prime grid differs from the model grid");
  validate_prefix(prime);
  std::set<int> header;
  for (const auto& e : prime.events)
    if (e.type == kInstrument) header.insert(e.instrument);

  std::mt19937_64 rng(seed);
  std::vector<Event> events = prime.events;
  int last_beat = 0;
  for (const auto& e : events)
    if (e.type == kNote) last_beat = e.beat;
  const std::size_t order = static_cast<std::size_t>(model.config().order);

  for (int s = 0; s < steps; ++s) {
    const std::size_t from = events.size() > order ? events.size() - order : 0;
    auto dist = model.predict_next(std::span<const Event>(events).subspan(from));
    Event e;
    e.type = kNote;
    for (int b = 0; b < last_beat; ++b) dist.probs[kBeat][b] = 0.0;
    dist.probs[kDuration][0] = 0.0;
    for (int i = 0; i < 128; ++i)
      if (!header.count(i)) dist.probs[kInstrumentField][i] = 0.0;
    for (int f = kBeat; f < kFieldCount; ++f) e.field(f) = detail::sample_index(dist.probs[f], rng);
    last_beat = e.beat;
    events.push_back(e);
  }

  Track notes;
  for (const auto& e : events)
    if (e.type == kNote) notes.push_back({e.beat, e.position, e.pitch, e.duration, e.instrument});
  if (notes.empty()) {
    EventSequence out = prime;
    out.events.push_back({kEnd});
    return out;
  }
  return encode(notes, model.grid());
}

}  // namespace coflow
