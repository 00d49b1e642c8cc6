// coflow command-line front end.
//
// Exit codes: 0 success, 1 usage or other error, 2 unreadable or malformed
// input (MIDI, model, event or spec files), 3 ineligible or too-short piece,
// 4 oracle chain without a unique stationary distribution.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "coflow/coflow.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace coflow;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kBadInput = 2, kIneligible = 3, kNoConvergence = 4 };

// An error tied to one input file, already carrying its exit code.
class InputError : public std::runtime_error {
 public:
  InputError(int code, const std::string& what) : std::runtime_error(what), code(code) {}
  int code;
};

struct Config {
  GridConfig grid;
  int order = 4;
  double lambda = 1.0;
  FlowParams flow;
  std::string mode = "nll";
  std::string normalization = "time";
  std::uint64_t seed = 0;
  int workers = 1;
  bool include_drums = false;
  int melody_track = 0;
};

json to_json(const Config& c) {
  return {{"resolution", c.grid.resolution}, {"max_beat", c.grid.max_beat},
          {"max_duration", c.grid.max_duration}, {"order", c.order},
          {"lambda", c.lambda}, {"context_len", c.flow.context_len},
          {"burn_in", c.flow.burn_in}, {"mode", to_string(c.flow.mode)},
          {"normalization", to_string(c.flow.normalization)}, {"seed", c.seed},
          {"workers", c.workers}, {"remap_shared_programs", c.flow.remap_shared_programs},
          {"include_drums", c.include_drums}, {"melody_track", c.melody_track}};
}

void write_atomic(const fs::path& path, const std::string& data) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

// JSON to a file, or standard output when the path is empty.
void emit(const json& j, const std::string& path) {
  const std::string text = j.dump(2) + "\n";
  if (path.empty())
    std::cout << text;
  else
    write_atomic(path, text);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(kBadInput, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

Piece load_piece(const fs::path& path, const Config& cfg) {
  const std::string raw = read_file(path);
  const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size());
  try {
    auto built = build_piece(parse_midi(bytes, {cfg.include_drums}), cfg.grid, path.filename().string());
    if (cfg.melody_track == 1 && built.piece.tracks.size() == 2) std::swap(built.piece.tracks[0], built.piece.tracks[1]);
    return std::move(built.piece);
  } catch (const ParseError& e) {
    throw InputError(kBadInput, path.string() + ": " + e.what());
  }
}

std::vector<fs::path> list_files(const fs::path& dir, const std::vector<std::string>& extensions) {
  if (!fs::is_directory(dir)) throw InputError(kBadInput, dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (std::find(extensions.begin(), extensions.end(), ext) != extensions.end()) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Every MIDI file in `dir`; unreadable files are skipped with a reason.
std::vector<Piece> load_corpus(const fs::path& dir, const Config& cfg, std::vector<std::string>& skipped) {
  std::vector<Piece> out;
  for (const auto& path : list_files(dir, {".mid", ".midi"})) {
    try {
      out.push_back(load_piece(path, cfg));
    } catch (const InputError& e) {
      skipped.push_back(e.what());
    }
  }
  return out;
}

ContextModel load_model(const fs::path& path, Config& cfg) {
  std::istringstream in(read_file(path));
  try {
    auto model = ContextModel::load(in);
    // Pieces must be quantized onto the grid the model was trained with.
    cfg.grid = model.grid();
    cfg.order = model.config().order;
    cfg.lambda = model.config().lambda;
    return model;
  } catch (const FormatError& e) {
    throw InputError(kBadInput, path.string() + ": " + e.what());
  }
}

EventSequence load_events(const fs::path& path, const Config& cfg) {
  std::istringstream in(read_file(path));
  try {
    auto seq = read_events(in, cfg.grid);
    return seq;
  } catch (const FormatError& e) {
    throw InputError(kBadInput, path.string() + ": " + e.what());
  }
}

std::string events_text(const EventSequence& seq) {
  std::ostringstream os;
  write_events(os, seq);
  return os.str();
}

// ---------------------------------------------------------------------------

int cmd_tokenize(const Config& cfg, const std::vector<std::string>& inputs, const std::string& out_dir,
                 bool voices) {
  json summary = json::array();
  for (const auto& in : inputs) {
    const auto piece = load_piece(in, cfg);
    Track all;
    for (const auto& t : piece.tracks) all.insert(all.end(), t.begin(), t.end());
    if (all.empty()) throw InputError(kIneligible, in + ": no notes");
    const fs::path stem = fs::path(out_dir) / fs::path(in).stem();
    write_atomic(stem.string() + ".events", events_text(encode(piece.tracks, cfg.grid)));
    json entry{{"input", in}, {"tracks", piece.tracks.size()}, {"notes", all.size()}};
    if (voices) {
      if (piece.tracks.size() == 2) {
        write_atomic(stem.string() + ".x.events", events_text(encode(piece.tracks[0], cfg.grid)));
        write_atomic(stem.string() + ".y.events", events_text(encode(piece.tracks[1], cfg.grid)));
      } else {
        entry["voices"] = "skipped: " + std::to_string(piece.tracks.size()) + " tracks";
      }
    }
    summary.push_back(entry);
  }
  std::cout << json{{"tokenized", summary}, {"config", to_json(cfg)}}.dump(2) << "\n";
  return kOk;
}

int cmd_train(const Config& cfg, const std::string& corpus_dir, const std::string& out) {
  std::vector<EventSequence> corpus;
  for (const auto& path : list_files(corpus_dir, {".events"})) {
    auto seq = load_events(path, cfg);
    if (!(seq.grid == cfg.grid))
      throw InputError(kBadInput, path.string() + ": grid differs from the configured grid");
    try {
      validate(seq);
    } catch (const StructureError& e) {
      throw InputError(kBadInput, path.string() + ": " + e.what());
    }
    corpus.push_back(std::move(seq));
  }
  if (corpus.empty()) throw InputError(kBadInput, corpus_dir + ": no .events files");
  const auto model = train(corpus, {cfg.order, cfg.lambda, cfg.grid});
  const auto bytes = model.to_bytes();
  write_atomic(out, std::string(bytes.begin(), bytes.end()));
  std::ostringstream id;
  id << std::hex << model.fingerprint();
  std::cout << json{{"model", out}, {"model_id", id.str()}, {"sequences", corpus.size()},
                    {"events", model.trained_events()}, {"config", to_json(cfg)}}
                   .dump(2)
            << "\n";
  return kOk;
}

int cmd_score(Config cfg, const std::string& model_path, const std::string& midi, const std::string& out) {
  const auto model = load_model(model_path, cfg);
  const auto piece = load_piece(midi, cfg);
  const auto [x, y] = split_tracks(piece);
  auto j = to_json(information_flow(model, x, y, cfg.flow, piece.source_id));
  j["config"] = to_json(cfg);
  emit(j, out);
  return kOk;
}

json pairs_json(const PairSet& set, const std::vector<Piece>& corpus) {
  json pairs = json::array();
  for (const auto& p : set.pairs)
    pairs.push_back({{"piece_id", p.piece_id}, {"label", to_string(p.label)},
                     {"x_source", corpus[p.x_piece].source_id}, {"y_source", corpus[p.y_piece].source_id}});
  return {{"seed", set.seed}, {"eligible", set.eligible}, {"skipped", set.skipped}, {"pairs", pairs}};
}

int cmd_pairs(const Config& cfg, const std::string& dir, const std::string& out) {
  std::vector<std::string> unreadable;
  const auto corpus = load_corpus(dir, cfg, unreadable);
  const auto set = build_pairs(corpus, cfg.seed);
  auto j = pairs_json(set, corpus);
  j["unreadable"] = unreadable;
  j["config"] = to_json(cfg);
  emit(j, out);
  return kOk;
}

int cmd_batch(Config cfg, const std::string& model_path, const std::string& dir, const std::string& csv,
              const std::string& out) {
  const auto model = load_model(model_path, cfg);
  std::vector<std::string> unreadable;
  const auto corpus = load_corpus(dir, cfg, unreadable);
  const auto set = build_pairs(corpus, cfg.seed);
  const auto report = batch_score(model, corpus, set, cfg.flow, cfg.workers);
  if (!csv.empty()) {
    std::ostringstream os;
    write_csv(os, report);
    write_atomic(csv, os.str());
  }
  auto j = to_json(report);
  j["eligible"] = set.eligible;
  j["skipped"] = set.skipped;
  j["unreadable"] = unreadable;
  j["config"] = to_json(cfg);
  emit(j, out);
  return kOk;
}

int cmd_bias(Config cfg, const std::string& model_path, const std::string& dir, const std::string& out) {
  const auto model = load_model(model_path, cfg);
  std::vector<std::string> unreadable;
  const auto corpus = load_corpus(dir, cfg, unreadable);
  auto j = to_json(positional_bias(model, corpus, cfg.flow, cfg.workers));
  j["unreadable"] = unreadable;
  j["config"] = to_json(cfg);
  emit(j, out);
  return kOk;
}

int cmd_selfbias(Config cfg, const std::string& model_a, const std::string& model_b, const std::string& dir,
                 int steps, int prime_beats, const std::string& out) {
  const auto a = load_model(model_a, cfg);
  const auto b = load_model(model_b, cfg);
  if (!(a.grid() == b.grid())) throw InputError(kBadInput, "the two models use different grids");
  std::vector<std::string> unreadable;
  const auto corpus = load_corpus(dir, cfg, unreadable);
  std::vector<EventSequence> primes;
  std::vector<std::string> prime_ids;
  for (const auto& piece : corpus) {
    try {
      primes.push_back(synth::prime_from(piece, prime_beats));
      prime_ids.push_back(piece.source_id);
    } catch (const Error& e) {
      unreadable.push_back(piece.source_id + ": " + e.what());
    }
  }
  const std::array<const ContextModel*, 2> models{&a, &b};
  auto j = to_json(self_enhancement(models, primes, steps, cfg.flow, cfg.seed, cfg.workers));
  j["models"] = {model_a, model_b};
  j["prime_sources"] = prime_ids;
  j["unreadable"] = unreadable;
  j["steps"] = steps;
  j["prime_beats"] = prime_beats;
  j["config"] = to_json(cfg);
  emit(j, out);
  return kOk;
}

int cmd_generate(Config cfg, const std::string& model_path, const std::string& prime_path, int steps,
                 int prime_beats, const std::string& out, const std::string& midi_out) {
  const auto model = load_model(model_path, cfg);
  EventSequence prime;
  const std::string ext = fs::path(prime_path).extension().string();
  if (ext == ".events")
    prime = load_events(prime_path, cfg);
  else
    prime = synth::prime_from(load_piece(prime_path, cfg), prime_beats);
  const auto seq = generate(model, prime, steps, cfg.seed);
  write_atomic(out, events_text(seq));
  if (!midi_out.empty()) {
    const auto bytes = write_midi(fixture_from_tracks(split_by_program(decode(seq)), 480, cfg.grid.resolution), 480);
    write_atomic(midi_out, std::string(bytes.begin(), bytes.end()));
  }
  std::cout << json{{"output", out}, {"notes", seq.note_count()}, {"steps", steps}, {"config", to_json(cfg)}}.dump(2)
            << "\n";
  return kOk;
}

JointMarkovSpec canonical(const std::string& name) {
  if (name == "independent") return independent_spec();
  if (name == "copy") return copy_spec();
  if (name == "instantaneous") return instantaneous_spec();
  throw InputError(kFailure, "unknown canonical spec '" + name + "' (independent, copy, instantaneous)");
}

int cmd_oracle(const Config& cfg, const std::string& spec_path, const std::string& canonical_name,
               std::size_t sample_steps, const std::string& midi_dir, const std::string& out) {
  JointMarkovSpec spec;
  if (!canonical_name.empty()) {
    spec = canonical(canonical_name);
  } else {
    std::istringstream in(read_file(spec_path));
    try {
      spec = read_spec(in);
    } catch (const FormatError& e) {
      throw InputError(kBadInput, spec_path + ": " + e.what());
    }
  }
  const auto r = exact_flow(spec);
  json j{{"spec", canonical_name.empty() ? spec_path : canonical_name},
         {"nx", spec.nx},
         {"ny", spec.ny},
         {"stationary", stationary(spec)},
         {"T_x_to_y", r.te_x_to_y},
         {"T_y_to_x", r.te_y_to_x},
         {"instantaneous", r.instantaneous},
         {"H_X", r.h_x},
         {"H_Y", r.h_y},
         {"H_XY", r.h_xy},
         {"total_flow", r.total_flow},
         {"identity_gap", r.identity_gap()}};
  if (!midi_dir.empty()) {
    // Sampled path as two-track MIDI files, one per chunk.
    const auto chunks = path_tracks(sample_paths(spec, sample_steps, cfg.seed), cfg.grid);
    json files = json::array();
    for (std::size_t c = 0; c < chunks.size(); ++c) {
      char name[32];
      std::snprintf(name, sizeof name, "path%04zu.mid", c);
      const auto bytes =
          write_midi(fixture_from_tracks({chunks[c].first, chunks[c].second}, 480, cfg.grid.resolution), 480);
      write_atomic(fs::path(midi_dir) / name, std::string(bytes.begin(), bytes.end()));
      files.push_back(name);
    }
    j["sampled_steps"] = sample_steps;
    j["midi_files"] = files;
  }
  j["config"] = to_json(cfg);
  emit(j, out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Musical information flow between two voices"};
  app.set_config("--config", "", "Read options from an INI/TOML file; command-line flags take precedence");
  app.require_subcommand(1);
  app.fallthrough();

  Config cfg;
  app.add_option("--resolution", cfg.grid.resolution, "Grid positions per beat")->capture_default_str();
  app.add_option("--max-beat", cfg.grid.max_beat, "Beat vocabulary size")->capture_default_str();
  app.add_option("--max-duration", cfg.grid.max_duration, "Longest duration in steps")->capture_default_str();
  app.add_option("--order", cfg.order, "Model context order k")->capture_default_str()->check(CLI::NonNegativeNumber);
  app.add_option("--lambda", cfg.lambda, "Back-off weight")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--context-len", cfg.flow.context_len, "Scoring context window in events")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  app.add_option("--burn-in", cfg.flow.burn_in, "Unscored leading notes")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  app.add_option("--mode", cfg.mode, "nll or predictive")->capture_default_str()->check(
      CLI::IsMember({"nll", "predictive"}));
  app.add_option("--normalization", cfg.normalization, "time (nats/beat) or event (nats/event)")
      ->capture_default_str()
      ->check(CLI::IsMember({"time", "event"}));
  app.add_option("--seed", cfg.seed, "Seed for pairing, sampling and generation")->capture_default_str();
  app.add_option("--workers", cfg.workers, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_flag("--remap-shared-programs", cfg.flow.remap_shared_programs,
               "Give Y's programs that X also uses a distinct id in the merged sequence");
  app.add_flag("--include-drums", cfg.include_drums, "Keep MIDI channel 10");
  app.add_option("--melody-track", cfg.melody_track, "Which of the two tracks is X")
      ->capture_default_str()
      ->check(CLI::IsMember({0, 1}));

  std::string out;
  std::vector<std::string> inputs;
  std::string a, b, c;
  bool voices = false;
  int steps = 200, prime_beats = 8;
  std::size_t sample_steps = 100000;
  std::string csv, midi_out, canonical_name;

  auto* tokenize = app.add_subcommand("tokenize", "MIDI files to event-sequence text");
  tokenize->add_option("inputs", inputs, "MIDI files")->required()->check(CLI::ExistingFile);
  tokenize->add_option("-o,--out-dir", out, "Output directory")->required();
  tokenize->add_flag("--voices", voices, "Also write each voice of two-track pieces");

  auto* train_cmd = app.add_subcommand("train", "Train a model on a directory of .events files");
  train_cmd->add_option("corpus", a, "Directory of .events files")->required();
  train_cmd->add_option("-o,--out", out, "Model file")->required();

  auto* score = app.add_subcommand("score", "Information flow of one two-track MIDI file");
  score->add_option("model", a, "Model file")->required();
  score->add_option("midi", b, "MIDI file")->required();
  score->add_option("-o,--out", out, "Report file (default: standard output)");

  auto* pairs = app.add_subcommand("pairs", "Positive and negative pairs for a MIDI directory");
  pairs->add_option("corpus", a, "MIDI directory")->required();
  pairs->add_option("-o,--out", out, "Output file (default: standard output)");

  auto* batch = app.add_subcommand("batch", "Score every positive and negative pair of a MIDI directory");
  batch->add_option("model", a, "Model file")->required();
  batch->add_option("corpus", b, "MIDI directory")->required();
  batch->add_option("--csv", csv, "Per-pair, per-field CSV");
  batch->add_option("-o,--out", out, "Summary file (default: standard output)");

  auto* bias = app.add_subcommand("bias", "Positional bias: score with voices in both orders");
  bias->add_option("model", a, "Model file")->required();
  bias->add_option("corpus", b, "MIDI directory")->required();
  bias->add_option("-o,--out", out, "Report file (default: standard output)");

  auto* selfbias = app.add_subcommand("selfbias", "Self-enhancement bias of two models");
  selfbias->add_option("model_a", a, "First model")->required();
  selfbias->add_option("model_b", b, "Second model")->required();
  selfbias->add_option("primes", c, "MIDI directory of two-track primes")->required();
  selfbias->add_option("--steps", steps, "Notes to generate per prime")->capture_default_str();
  selfbias->add_option("--prime-beats", prime_beats, "Beats of each piece used as prime")->capture_default_str();
  selfbias->add_option("-o,--out", out, "Report file (default: standard output)");

  auto* gen = app.add_subcommand("generate", "Continue a prime with sampled notes");
  gen->add_option("model", a, "Model file")->required();
  gen->add_option("prime", b, "Prime: .events file or MIDI file")->required()->check(CLI::ExistingFile);
  gen->add_option("--steps", steps, "Notes to generate")->capture_default_str();
  gen->add_option("--prime-beats", prime_beats, "Beats of a MIDI prime to keep")->capture_default_str();
  gen->add_option("-o,--out", out, "Output .events file")->required();
  gen->add_option("--midi", midi_out, "Also write the result as MIDI");

  auto* oracle = app.add_subcommand("oracle", "Exact flows of a joint Markov spec");
  auto* spec_opt = oracle->add_option("spec", a, "Spec file");
  auto* canon_opt = oracle->add_option("--canonical", canonical_name, "independent, copy or instantaneous");
  spec_opt->excludes(canon_opt);
  oracle->add_option("--write-midi", c, "Write a sampled path as two-track MIDI files here");
  oracle->add_option("--steps", sample_steps, "Path length for --write-midi")->capture_default_str();
  oracle->add_option("-o,--out", out, "Report file (default: standard output)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kFailure;
  }

  try {
    cfg.flow.mode = parse_mode(cfg.mode);
    cfg.flow.normalization = parse_normalization(cfg.normalization);
    if (!cfg.grid.valid()) throw Error("grid bounds must be positive");
    if (app.got_subcommand(tokenize)) return cmd_tokenize(cfg, inputs, out, voices);
    if (app.got_subcommand(train_cmd)) return cmd_train(cfg, a, out);
    if (app.got_subcommand(score)) return cmd_score(cfg, a, b, out);
    if (app.got_subcommand(pairs)) return cmd_pairs(cfg, a, out);
    if (app.got_subcommand(batch)) return cmd_batch(cfg, a, b, csv, out);
    if (app.got_subcommand(bias)) return cmd_bias(cfg, a, b, out);
    if (app.got_subcommand(selfbias)) return cmd_selfbias(cfg, a, b, c, steps, prime_beats, out);
    if (app.got_subcommand(gen)) return cmd_generate(cfg, a, b, steps, prime_beats, out, midi_out);
    if (app.got_subcommand(oracle)) {
      if (a.empty() && canonical_name.empty()) throw Error("oracle: give a spec file or --canonical");
      return cmd_oracle(cfg, a, canonical_name, sample_steps, c, out);
    }
  } catch (const InputError& e) {
    std::cerr << "coflow: " << e.what() << "\n";
    return e.code;
  } catch (const ParseError& e) {
    std::cerr << "coflow: " << e.what() << "\n";
    return kBadInput;
  } catch (const FormatError& e) {
    std::cerr << "coflow: " << e.what() << "\n";
    return kBadInput;
  } catch (const StructureError& e) {
    std::cerr << "coflow: " << e.what() << "\n";
    return kBadInput;
  } catch (const IneligiblePieceError& e) {
    std::cerr << "coflow: " << e.what() << "\n";
    return kIneligible;
  } catch (const TooShortError& e) {
    std::cerr << "coflow: " << e.what() << "\n";
    return kIneligible;
  } catch (const ConvergenceError& e) {
    std::cerr << "coflow: " << e.what() << "\n";
    return kNoConvergence;
  } catch (const std::exception& e) {
    std::cerr << "coflow: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
