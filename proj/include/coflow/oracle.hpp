#pragma once

// Exact transfer entropies for small order-1 joint Markov chains over
// (X, Y), and path sampling that feeds the estimator pipeline.
//
// State s = x * ny + y. The transition table row s_prev holds
// P(x_t, y_t | x_{t-1}, y_{t-1}).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <queue>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "coflow/core.hpp"
#include "coflow/events.hpp"
#include "coflow/midi.hpp"
#include "coflow/model.hpp"

namespace coflow {

struct JointMarkovSpec {
  int nx = 2;
  int ny = 2;
  std::vector<double> transition;  // states() x states(), row-major
  std::vector<double> initial;     // states()

  int states() const { return nx * ny; }
  int state(int x, int y) const { return x * ny + y; }
  double p(int xp, int yp, int x, int y) const {
    return transition[static_cast<std::size_t>(state(xp, yp)) * states() + state(x, y)];
  }

  void validate() const {
    if (nx < 1 || ny < 1 || nx > 8 || ny > 8) throw Error("alphabet sizes must be in [1, 8]");
    const auto n = static_cast<std::size_t>(states());
    if (transition.size() != n * n) throw Error("transition table must be states x states");
    if (initial.size() != n) throw Error("initial distribution must have one entry per state");
    auto check = [](auto first, auto last, const std::string& what) {
      double sum = 0.0;
      for (auto it = first; it != last; ++it) {
        if (!(*it >= 0.0) || !std::isfinite(*it)) throw Error(what + " has a negative or non-finite entry");
        sum += *it;
      }
      if (std::abs(sum - 1.0) > 1e-12) throw Error(what + " does not sum to 1");
    };
    for (std::size_t s = 0; s < n; ++s)
      check(transition.begin() + static_cast<std::ptrdiff_t>(s * n),
            transition.begin() + static_cast<std::ptrdiff_t>((s + 1) * n), "transition row " + std::to_string(s));
    check(initial.begin(), initial.end(), "initial distribution");
  }
};

// Independent chains: P((x,y)|(xp,yp)) = PX(x|xp) * PY(y|yp).
inline JointMarkovSpec product_spec(const std::vector<std::vector<double>>& px,
                                    const std::vector<std::vector<double>>& py) {
  JointMarkovSpec s;
  s.nx = static_cast<int>(px.size());
  s.ny = static_cast<int>(py.size());
  const int n = s.states();
  s.transition.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int xp = 0; xp < s.nx; ++xp)
    for (int yp = 0; yp < s.ny; ++yp)
      for (int x = 0; x < s.nx; ++x)
        for (int y = 0; y < s.ny; ++y)
          s.transition[static_cast<std::size_t>(s.state(xp, yp)) * n + s.state(x, y)] = px[xp][x] * py[yp][y];
  s.initial.assign(n, 1.0 / n);
  return s;
}

// Two binary chains that each flip with probabilities 0.3 / 0.4.
inline JointMarkovSpec independent_spec() {
  return product_spec({{0.7, 0.3}, {0.3, 0.7}}, {{0.6, 0.4}, {0.4, 0.6}});
}

// X i.i.d. uniform on {0,1}; Y_t = X_{t-1}.
inline JointMarkovSpec copy_spec() {
  JointMarkovSpec s;
  s.transition.assign(16, 0.0);
  for (int xp = 0; xp < 2; ++xp)
    for (int yp = 0; yp < 2; ++yp)
      for (int x = 0; x < 2; ++x) s.transition[s.state(xp, yp) * 4 + s.state(x, xp)] = 0.5;
  s.initial.assign(4, 0.25);
  return s;
}

// X i.i.d. uniform on {0,1}; Y_t = X_t.
inline JointMarkovSpec instantaneous_spec() {
  JointMarkovSpec s;
  s.transition.assign(16, 0.0);
  for (int prev = 0; prev < 4; ++prev)
    for (int x = 0; x < 2; ++x) s.transition[prev * 4 + s.state(x, x)] = 0.5;
  s.initial = {0.5, 0.0, 0.0, 0.5};
  return s;
}

// Random dense spec; rows drawn from a flat Dirichlet, so every entry is
// positive and the chain is primitive.
inline JointMarkovSpec random_spec(std::mt19937_64& rng, int nx, int ny) {
  JointMarkovSpec s;
  s.nx = nx;
  s.ny = ny;
  const int n = s.states();
  std::exponential_distribution<double> expo(1.0);
  auto simplex = [&](std::vector<double>& out) {
    double sum = 0.0;
    for (auto& v : out) sum += (v = expo(rng) + 1e-12);
    for (auto& v : out) v /= sum;
  };
  s.transition.resize(static_cast<std::size_t>(n) * n);
  for (int r = 0; r < n; ++r) {
    std::vector<double> row(n);
    simplex(row);
    std::copy(row.begin(), row.end(), s.transition.begin() + static_cast<std::ptrdiff_t>(r) * n);
  }
  s.initial.resize(n);
  simplex(s.initial);
  return s;
}

namespace detail {

// Requires exactly one closed communicating class, and that class to be
// aperiodic. Transient states are allowed.
inline void check_unique_aperiodic(const JointMarkovSpec& spec) {
  const int n = spec.states();
  auto edge = [&](int a, int b) { return spec.transition[static_cast<std::size_t>(a) * n + b] > 0.0; };
  std::vector<std::vector<char>> reach(n, std::vector<char>(n, 0));
  for (int a = 0; a < n; ++a) {
    reach[a][a] = 1;
    for (int b = 0; b < n; ++b)
      if (edge(a, b)) reach[a][b] = 1;
  }
  for (int k = 0; k < n; ++k)
    for (int a = 0; a < n; ++a)
      if (reach[a][k])
        for (int b = 0; b < n; ++b)
          if (reach[k][b]) reach[a][b] = 1;
  // A state is recurrent iff everything it reaches reaches it back.
  std::vector<int> closed_rep;
  std::vector<char> assigned(n, 0);
  for (int a = 0; a < n; ++a) {
    if (assigned[a]) continue;
    bool closed = true;
    for (int b = 0; b < n; ++b)
      if (reach[a][b] && !reach[b][a]) closed = false;
    if (!closed) continue;
    for (int b = 0; b < n; ++b)
      if (reach[a][b]) assigned[b] = 1;
    closed_rep.push_back(a);
  }
  if (closed_rep.size() != 1)
    throw ConvergenceError("chain has " + std::to_string(closed_rep.size()) +
                           " closed classes; the stationary distribution is not unique");
  const int root = closed_rep[0];
  std::vector<int> level(n, -1);
  level[root] = 0;
  std::queue<int> q;
  q.push(root);
  int period = 0;
  while (!q.empty()) {
    const int a = q.front();
    q.pop();
    for (int b = 0; b < n; ++b) {
      if (!edge(a, b)) continue;
      if (level[b] < 0) {
        level[b] = level[a] + 1;
        q.push(b);
      } else {
        period = std::gcd(period, std::abs(level[a] + 1 - level[b]));
      }
    }
  }
  if (period != 1) throw ConvergenceError("chain is periodic with period " + std::to_string(period));
}

inline double entropy_of(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

}  // namespace detail

// Stationary joint distribution over states, by power iteration from the
// uniform distribution until the L1 change drops below 1e-12.
inline std::vector<double> stationary(const JointMarkovSpec& spec) {
  spec.validate();
  detail::check_unique_aperiodic(spec);
  const int n = spec.states();
  std::vector<double> pi(n, 1.0 / n), next(n);
  for (int iter = 0; iter < 1'000'000; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) next[b] += pi[a] * spec.transition[static_cast<std::size_t>(a) * n + b];
    double residual = 0.0;
    for (int s = 0; s < n; ++s) residual += std::abs(next[s] - pi[s]);
    pi.swap(next);
    if (residual < 1e-12) return pi;
  }
  throw ConvergenceError("power iteration did not converge in 10^6 iterations");
}

struct ExactFlowResult {
  double te_x_to_y = 0.0;      // I(Y_t; X_{t-1} | Y_{t-1})
  double te_y_to_x = 0.0;      // I(X_t; Y_{t-1} | X_{t-1})
  double instantaneous = 0.0;  // I(X_t; Y_t | X_{t-1}, Y_{t-1})
  double total_flow = 0.0;      // H(X_t|X_{t-1}) + H(Y_t|Y_{t-1}) - H(X_t Y_t | X_{t-1} Y_{t-1})
  double h_x = 0.0;
  double h_y = 0.0;
  double h_xy = 0.0;

  double identity_gap() const { return total_flow - (te_x_to_y + te_y_to_x + instantaneous); }
};

// All quantities at stationarity, in nats per step. The transfer entropies
// and the instantaneous term are summed directly as conditional mutual
// informations; total_flow comes from entropy differences, so the identity
// total flow = T(X->Y) + T(Y->X) + instantaneous checks two separate routes.
inline ExactFlowResult exact_flow(const JointMarkovSpec& spec) {
  const auto pi = stationary(spec);
  const int nx = spec.nx, ny = spec.ny;
  auto idx4 = [&](int xp, int yp, int x, int y) { return ((xp * ny + yp) * nx + x) * ny + y; };
  std::vector<double> joint(static_cast<std::size_t>(nx * ny * nx * ny));
  for (int xp = 0; xp < nx; ++xp)
    for (int yp = 0; yp < ny; ++yp)
      for (int x = 0; x < nx; ++x)
        for (int y = 0; y < ny; ++y) joint[idx4(xp, yp, x, y)] = pi[spec.state(xp, yp)] * spec.p(xp, yp, x, y);

  // Marginals.
  std::vector<double> past(nx * ny, 0.0), xp_x(nx * nx, 0.0), yp_y(ny * ny, 0.0), xp_only(nx, 0.0),
      yp_only(ny, 0.0), past_x(nx * ny * nx, 0.0), past_y(nx * ny * ny, 0.0);
  for (int xp = 0; xp < nx; ++xp)
    for (int yp = 0; yp < ny; ++yp)
      for (int x = 0; x < nx; ++x)
        for (int y = 0; y < ny; ++y) {
          const double j = joint[idx4(xp, yp, x, y)];
          past[xp * ny + yp] += j;
          xp_x[xp * nx + x] += j;
          yp_y[yp * ny + y] += j;
          xp_only[xp] += j;
          yp_only[yp] += j;
          past_x[(xp * ny + yp) * nx + x] += j;
          past_y[(xp * ny + yp) * ny + y] += j;
        }

  ExactFlowResult r;
  for (int xp = 0; xp < nx; ++xp)
    for (int yp = 0; yp < ny; ++yp) {
      const double pp = past[xp * ny + yp];
      for (int y = 0; y < ny; ++y) {
        const double a = past_y[(xp * ny + yp) * ny + y];
        if (a > 0.0) r.te_x_to_y += a * std::log(a * yp_only[yp] / (pp * yp_y[yp * ny + y]));
      }
      for (int x = 0; x < nx; ++x) {
        const double a = past_x[(xp * ny + yp) * nx + x];
        if (a > 0.0) r.te_y_to_x += a * std::log(a * xp_only[xp] / (pp * xp_x[xp * nx + x]));
      }
      for (int x = 0; x < nx; ++x)
        for (int y = 0; y < ny; ++y) {
          const double j = joint[idx4(xp, yp, x, y)];
          if (j > 0.0)
            r.instantaneous +=
                j * std::log(j * pp / (past_x[(xp * ny + yp) * nx + x] * past_y[(xp * ny + yp) * ny + y]));
        }
    }

  r.h_x = detail::entropy_of(xp_x) - detail::entropy_of(xp_only);
  r.h_y = detail::entropy_of(yp_y) - detail::entropy_of(yp_only);
  r.h_xy = detail::entropy_of(joint) - detail::entropy_of(past);
  r.total_flow = r.h_x + r.h_y - r.h_xy;
  return r;
}

// ---------------------------------------------------------------------------
// Sampling into the event pipeline

struct SamplePath {
  std::vector<int> xs;
  std::vector<int> ys;
};

inline SamplePath sample_paths(const JointMarkovSpec& spec, std::size_t length, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const int n = spec.states();
  SamplePath out;
  out.xs.reserve(length);
  out.ys.reserve(length);
  int s = detail::sample_index(spec.initial, rng);
  for (std::size_t t = 0; t < length; ++t) {
    if (t > 0) {
      const auto row = spec.transition.begin() + static_cast<std::ptrdiff_t>(s) * n;
      s = detail::sample_index(std::vector<double>(row, row + n), rng);
    }
    out.xs.push_back(s / spec.ny);
    out.ys.push_back(s % spec.ny);
  }
  return out;
}

// How symbols become notes: one note per beat at position 0, lasting one
// beat. X and Y sit in disjoint registers (X below Y) with distinct
// programs, so within a beat the X note always sorts first.
struct SymbolEmbedding {
  int x_pitch_base = 48;
  int y_pitch_base = 72;
  int x_program = 0;
  int y_program = 1;
  int chunk_beats = 512;
};

// Splits a path into consecutive chunks of at most `chunk_beats` steps and
// embeds each as an (X, Y) pair of tracks.
inline std::vector<std::pair<Track, Track>> path_tracks(const SamplePath& path, const GridConfig& grid,
                                                        const SymbolEmbedding& emb = {}) {
  if (emb.chunk_beats < 1 || emb.chunk_beats > grid.max_beat) throw Error("chunk_beats must be in [1, max_beat]");
  const int dur = std::min(grid.resolution, grid.max_duration);
  std::vector<std::pair<Track, Track>> out;
  for (std::size_t start = 0; start < path.xs.size(); start += static_cast<std::size_t>(emb.chunk_beats)) {
    const std::size_t end = std::min(path.xs.size(), start + static_cast<std::size_t>(emb.chunk_beats));
    Track x, y;
    for (std::size_t t = start; t < end; ++t) {
      const int beat = static_cast<int>(t - start);
      x.push_back({beat, 0, emb.x_pitch_base + path.xs[t], dur, emb.x_program});
      y.push_back({beat, 0, emb.y_pitch_base + path.ys[t], dur, emb.y_program});
    }
    out.emplace_back(std::move(x), std::move(y));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text form: "nx ny", then the transition table row by row, then optionally
// the initial distribution (uniform when omitted). '#' starts a comment.

inline JointMarkovSpec read_spec(std::istream& is) {
  std::vector<double> nums;
  std::string line;
  while (std::getline(is, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        nums.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw FormatError("spec file: '" + tok + "' is not a number");
      }
    }
  }
  if (nums.size() < 2) throw FormatError("spec file: missing alphabet sizes");
  JointMarkovSpec s;
  s.nx = static_cast<int>(nums[0]);
  s.ny = static_cast<int>(nums[1]);
  if (s.nx != nums[0] || s.ny != nums[1] || s.nx < 1 || s.ny < 1 || s.nx > 8 || s.ny > 8)
    throw FormatError("spec file: alphabet sizes must be integers in [1, 8]");
  const auto n = static_cast<std::size_t>(s.states());
  if (nums.size() != 2 + n * n && nums.size() != 2 + n * n + n)
    throw FormatError("spec file: expected " + std::to_string(n * n) + " transition entries (plus optional " +
                      std::to_string(n) + " initial entries), got " + std::to_string(nums.size() - 2));
  s.transition.assign(nums.begin() + 2, nums.begin() + 2 + static_cast<std::ptrdiff_t>(n * n));
  if (nums.size() == 2 + n * n + n)
    s.initial.assign(nums.begin() + 2 + static_cast<std::ptrdiff_t>(n * n), nums.end());
  else
    s.initial.assign(n, 1.0 / static_cast<double>(n));
  try {
    s.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("spec file: ") + e.what());
  }
  return s;
}

inline void write_spec(std::ostream& os, const JointMarkovSpec& s) {
  os.precision(17);
  os << s.nx << ' ' << s.ny << '\n';
  const int n = s.states();
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) os << (c ? " " : "") << s.transition[static_cast<std::size_t>(r) * n + c];
    os << '\n';
  }
  for (int c = 0; c < n; ++c) os << (c ? " " : "") << s.initial[c];
  os << '\n';
}

}  // namespace coflow
