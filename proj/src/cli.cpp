/*
Copyright 2026 The trackdiff Authors. All rights reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

#include "trackdiff/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "trackdiff/codec.hpp"
#include "trackdiff/corpus.hpp"
#include "trackdiff/denoiser.hpp"
#include "trackdiff/error.hpp"
#include "trackdiff/metrics.hpp"
#include "trackdiff/midi.hpp"
#include "trackdiff/parallel.hpp"
#include "trackdiff/preprocess.hpp"
#include "trackdiff/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace trackdiff {
namespace {

struct ExitError : std::runtime_error {
  ExitError(int c, const std::string& m) : std::runtime_error(m), code(c) {}
  int code;
};

[[noreturn]] void usage(const std::string& msg) { throw ExitError(kExitUsage, msg); }
[[noreturn]] void state_error(const std::string& msg) { throw ExitError(kExitState, msg); }

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  bool quiet = false;
  int threads = 1;
  bool threads_given = false;
};

std::string read_text(const std::string& path, int missing_code) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ExitError(missing_code, "cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) usage("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) usage("cannot write '" + path + "'");
}

void write_text(const std::string& path, const std::string& text) {
  write_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

bool has_ext(const fs::path& p, std::initializer_list<std::string_view> exts) {
  const std::string e = p.extension().string();
  return std::find(exts.begin(), exts.end(), e) != exts.end();
}

Vocabulary load_vocab(const std::string& path, int missing_code) {
  if (path.empty()) throw ExitError(missing_code, "a vocabulary file is required (--vocab)");
  const std::string text = read_text(path, missing_code);
  try {
    return Vocabulary::from_json(text);
  } catch (const Error& e) {
    throw ExitError(missing_code, std::string("bad vocabulary: ") + e.what());
  }
}

DenoiserParams load_model(const std::string& path, int expected_vocab) {
  if (path.empty()) usage("a checkpoint is required (--ckpt)");
  if (!fs::exists(path)) state_error("checkpoint not found: '" + path + "'");
  const auto bytes = read_file_bytes(path);
  try {
    return load_checkpoint(bytes, expected_vocab);
  } catch (const Error& e) {
    state_error(std::string("checkpoint '") + path + "': " + e.what());
  }
}

std::uint64_t require_seed(const Globals& g) {
  if (!g.seed) usage("--seed is required for this command");
  return *g.seed;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<TrackRole> parse_tracks(const std::vector<std::string>& items, bool allow_chord) {
  std::vector<TrackRole> out;
  for (const std::string& raw : items) {
    for (const std::string& name : split_list(raw)) {
      const auto t = parse_track(name);
      if (!t) usage("unknown track '" + name + "'");
      if (!allow_chord && *t == TrackRole::chord) usage("'chord' is not an instrument track");
      if (std::find(out.begin(), out.end(), *t) == out.end()) out.push_back(*t);
    }
  }
  return out;
}

json roles_json(const std::array<TrackMark, kNumTracks>& marks) {
  json j;
  for (TrackRole t : kAllTracks) j[std::string(track_name(t))] = std::string(mark_name(marks[track_index(t)]));
  return j;
}

void write_song(const std::string& path, const Song& song) {
  if (has_ext(fs::path(path), {".mid", ".midi", ".MID"})) {
    write_bytes(path, write_smf(song_to_raw(song)));
  } else {
    write_text(path, write_notelist(song));
  }
}

ScoreGrid load_score_file(const std::string& path, int missing_code) {
  return read_score(read_text(path, missing_code));
}

void print_json(std::ostream& out, const Globals& g, const json& j) {
  if (!g.quiet) out << j.dump(2) << "\n";
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------- build-vocab

struct BuildVocabArgs {
  std::string corpus;
  std::string out;
  std::string report;
  std::string scores;
  int max_bars = 32;
  int min_notes = 16;
  int min_tracks = 2;
};

std::vector<fs::path> list_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) usage("no input files: '" + dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && has_ext(e.path(), {".mid", ".midi", ".MID", ".notes", ".txt"})) {
      files.push_back(fs::relative(e.path(), dir));
    }
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.generic_string() < b.generic_string(); });
  return files;
}

std::vector<TrackRole> involved_tracks(const Song& song) {
  std::vector<TrackRole> out;
  if (!song.chords.empty()) out.push_back(TrackRole::chord);
  for (TrackRole t : kInstrumentTracks) {
    if (std::any_of(song.notes.begin(), song.notes.end(), [t](const Note& n) { return n.track == t; })) {
      out.push_back(t);
    }
  }
  return out;
}

std::string score_file_name(const std::string& source, int fragment) {
  std::string s = source;
  for (char& c : s) {
    if (c == '/' || c == '\\' || c == ' ') c = '_';
  }
  return s + ".f" + std::to_string(fragment) + ".score";
}

int cmd_build_vocab(const BuildVocabArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  const fs::path dir(a.corpus);
  const auto files = list_corpus(dir);
  if (files.empty()) usage("no input files in '" + a.corpus + "'");
  if (!a.scores.empty()) require_seed(g);

  IngestOptions opts;
  opts.max_bars = a.max_bars;
  opts.filter.min_notes = a.min_notes;
  opts.filter.min_tracks = a.min_tracks;
  std::vector<IngestResult> results(files.size());
  parallel_for(static_cast<int>(files.size()), g.threads,
               [&](int i) { results[i] = ingest_file((dir / files[i]).string(), opts); });

  std::map<std::string, int> filtered;
  std::vector<Song> fragments;
  std::vector<std::pair<std::string, int>> origin;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const IngestResult& r = results[i];
    if (r.status != FilterReason::kept) {
      ++filtered[std::string(filter_reason_name(r.status))];
      continue;
    }
    for (std::size_t f = 0; f < r.fragments.size(); ++f) {
      fragments.push_back(r.fragments[f]);
      origin.emplace_back(files[i].generic_string(), static_cast<int>(f));
    }
  }
  json filter_stats = json::object();
  for (const auto& [k, v] : filtered) filter_stats[k] = v;
  if (fragments.empty()) {
    err << "all files filtered out: " << filter_stats.dump() << "\n";
    return kExitUsage;
  }

  VocabularyReport vr;
  const Vocabulary vocab = build_vocabulary(fragments, &vr);
  write_text(a.out, vocab.to_json());

  json report;
  report["files"] = files.size();
  report["kept_files"] = files.size() - std::accumulate(filtered.begin(), filtered.end(), std::size_t{0},
                                                        [](std::size_t s, const auto& kv) { return s + kv.second; });
  report["fragments"] = fragments.size();
  report["filtered"] = filter_stats;
  report["K"] = vocab.size();
  json tracks;
  for (TrackRole t : kInstrumentTracks) {
    tracks[std::string(track_name(t))] = {{"unique", vr.unique_tuples[track_index(t)]},
                                          {"occurrences", vr.occurrences[track_index(t)]}};
  }
  report["tracks"] = tracks;

  if (!a.scores.empty()) {
    CorpusManifest manifest;
    manifest.seed = *g.seed;
    for (std::size_t i = 0; i < fragments.size(); ++i) {
      const Song& s = fragments[i];
      ManifestEntry e;
      e.source = origin[i].first;
      e.fragment = origin[i].second;
      e.score = score_file_name(e.source, e.fragment);
      e.bars = s.bars;
      e.tracks = involved_tracks(s);
      e.split = assign_split(e.source, e.fragment, manifest.seed);
      write_text((fs::path(a.scores) / e.score).string(), write_score(encode(s, vocab, s.bars * kUnitsPerBar)));
      manifest.entries.push_back(std::move(e));
    }
    write_text((fs::path(a.scores) / "manifest.json").string(), manifest.to_json());
    std::map<std::string, int> split_counts;
    for (const auto& e : manifest.entries) ++split_counts[std::string(split_name(e.split))];
    report["splits"] = split_counts;
  }
  if (!a.report.empty()) write_text(a.report, report.dump(2) + "\n");
  print_json(out, g, report);
  return kExitOk;
}

// ---------------------------------------------------------------- encode / decode

struct EncodeArgs {
  std::string input;
  std::string vocab;
  std::string out;
  int fragment = 0;
  int width = 0;
  int max_bars = 32;
};

int cmd_encode(const EncodeArgs& a, const Globals& g, std::ostream& out) {
  const Vocabulary vocab = load_vocab(a.vocab, kExitState);
  if (!fs::exists(a.input)) usage("cannot read '" + a.input + "'");
  IngestOptions opts;
  opts.max_bars = a.max_bars;
  const IngestResult r = ingest_file(a.input, opts);
  if (r.status != FilterReason::kept) {
    usage("input filtered: " + std::string(filter_reason_name(r.status)) + (r.message.empty() ? "" : " (" + r.message + ")"));
  }
  if (a.fragment < 0 || a.fragment >= static_cast<int>(r.fragments.size())) {
    usage("fragment out of range: input has " + std::to_string(r.fragments.size()) + " fragments");
  }
  const Song& s = r.fragments[a.fragment];
  const int width = a.width > 0 ? a.width : s.bars * kUnitsPerBar;
  const ScoreGrid score = encode(s, vocab, width);
  write_text(a.out, write_score(score));
  print_json(out, g, json{{"fragments", r.fragments.size()}, {"bars", s.bars}, {"width", width},
                          {"key_shift", s.key_shift}, {"roles", roles_json(score.marks())}});
  return kExitOk;
}

struct DecodeArgs {
  std::string input;
  std::string vocab;
  std::string out;
  bool lenient = false;
};

int cmd_decode(const DecodeArgs& a, const Globals&) {
  const Vocabulary vocab = load_vocab(a.vocab, kExitState);
  const ScoreGrid score = load_score_file(a.input, kExitUsage);
  if (score.vocab_size() != vocab.size()) state_error("vocab mismatch: score K differs from vocabulary K");
  DecodeOptions opts;
  opts.lenient = a.lenient;
  write_song(a.out, decode(score, vocab, opts));
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  RunConfig cli;
  bool resume = false;
};

struct TrainProgress {
  double best_valid = std::numeric_limits<double>::infinity();
  std::int64_t best_step = -1;
};

std::vector<int> batch_indices(std::uint64_t seed, std::int64_t step, int n, int batch) {
  const int per_epoch = (n + batch - 1) / batch;
  const std::int64_t epoch = step / per_epoch;
  const int slot = static_cast<int>(step % per_epoch);
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  Rng rng = Rng(seed).fork({0xBA7C4ULL, static_cast<std::uint64_t>(epoch)});
  for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(static_cast<std::uint64_t>(i) + 1)]);
  const int lo = slot * batch;
  const int hi = std::min(n, lo + batch);
  return {perm.begin() + lo, perm.begin() + hi};
}

int cmd_train(const TrainArgs& a, const CLI::App& sub, const Globals& g, std::ostream& out) {
  RunConfig cfg;
  if (!g.config.empty()) cfg.merge_json(read_text(g.config, kExitUsage));
  // Explicit flags win over the config file.
  const RunConfig& c = a.cli;
  auto given = [&sub](const char* name) { return sub.count(name) > 0; };
  if (given("--manifest")) cfg.manifest = c.manifest;
  if (given("--vocab")) cfg.vocab = c.vocab;
  if (given("--out")) cfg.out = c.out;
  if (given("--preset")) cfg.preset = c.preset;
  if (given("--d")) cfg.d = c.d;
  if (given("--d-model")) cfg.d_model = c.d_model;
  if (given("--layers")) cfg.n_layers = c.n_layers;
  if (given("--heads")) cfg.n_heads = c.n_heads;
  if (given("--diffusion-steps")) cfg.diffusion_steps = c.diffusion_steps;
  if (given("--lambda")) cfg.lambda = c.lambda;
  if (given("--lr")) cfg.lr = c.lr;
  if (given("--warmup")) cfg.warmup = c.warmup;
  if (given("--decay-steps")) cfg.decay_steps = c.decay_steps;
  if (given("--batch")) cfg.batch = c.batch;
  if (given("--epochs")) cfg.epochs = c.epochs;
  if (given("--steps")) cfg.train_steps = c.train_steps;
  if (given("--valid-every")) cfg.valid_every = c.valid_every;
  if (g.seed) cfg.seed = g.seed;
  if (g.threads_given || cfg.threads < 1) cfg.threads = g.threads;
  if (!cfg.seed) usage("--seed is required for this command");
  if (cfg.manifest.empty()) usage("a corpus manifest is required (--manifest)");
  if (cfg.batch < 1) usage("batch must be >= 1");
  if (cfg.valid_every < 1) usage("valid_every must be >= 1");
  const std::uint64_t seed = *cfg.seed;

  const Vocabulary vocab = load_vocab(cfg.vocab, kExitState);
  const CorpusManifest manifest = CorpusManifest::from_json(read_text(cfg.manifest, kExitState));
  const fs::path base = fs::path(cfg.manifest).parent_path();
  std::vector<ScoreGrid> train, valid;
  for (const ManifestEntry& e : manifest.entries) {
    if (e.split == Split::test) continue;
    ScoreGrid s = load_score_file((base / e.score).string(), kExitState);
    if (s.vocab_size() != vocab.size()) {
      state_error("vocab mismatch: '" + e.score + "' has K=" + std::to_string(s.vocab_size()) +
                  ", vocabulary K=" + std::to_string(vocab.size()));
    }
    (e.split == Split::train ? train : valid).push_back(std::move(s));
  }
  if (train.empty()) state_error("manifest has no training scores");

  DenoiserConfig mc;
  try {
    mc = DenoiserConfig::preset(cfg.preset, vocab.size());
  } catch (const Error& e) {
    usage(e.what());
  }
  if (cfg.d) mc.d = *cfg.d;
  if (cfg.d_model) mc.d_model = *cfg.d_model;
  if (cfg.n_layers) mc.n_layers = *cfg.n_layers;
  if (cfg.n_heads) mc.n_heads = *cfg.n_heads;
  if (cfg.diffusion_steps) mc.steps = *cfg.diffusion_steps;
  try {
    mc.validate();
  } catch (const Error& e) {
    usage(e.what());
  }
  for (const ScoreGrid& s : train) {
    if (s.width() > mc.max_width) usage("score wider than max_L");
  }

  const int n = static_cast<int>(train.size());
  const std::int64_t per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const std::int64_t total = cfg.train_steps > 0 ? cfg.train_steps : cfg.epochs * per_epoch;
  if (total <= 0) usage("set train_steps or epochs");

  TrainConfig tc;
  tc.steps = mc.steps;
  tc.lambda = cfg.lambda;
  tc.optimizer.lr = cfg.lr;
  tc.optimizer.warmup_steps = cfg.warmup;
  tc.optimizer.total_steps = cfg.decay_steps > 0 ? cfg.decay_steps : total;
  tc.seed = seed;
  tc.threads = cfg.threads;

  const fs::path dir(cfg.out);
  fs::create_directories(dir);
  const std::string last_ckpt = (dir / "last.ckpt").string();
  const std::string last_opt = (dir / "last.opt").string();
  const std::string best_ckpt = (dir / "best.ckpt").string();
  const std::string progress_path = (dir / "progress.json").string();
  const std::string log_path = (dir / "loss.csv").string();

  DenoiserParams params;
  OptimizerState opt;
  TrainProgress progress;
  if (a.resume) {
    params = load_model(last_ckpt, vocab.size());
    if (!(params.config() == mc)) state_error("checkpoint config differs from the run config");
    try {
      opt = load_optimizer_state(read_file_bytes(last_opt));
    } catch (const Error& e) {
      state_error(std::string("optimizer state: ") + e.what());
    }
    if (opt.m.size() != params.size()) state_error("optimizer state does not match the checkpoint");
    const auto pj = nlohmann::json::parse(read_text(progress_path, kExitState));
    progress.best_valid = pj.at("best_valid").is_null() ? std::numeric_limits<double>::infinity()
                                                        : pj.at("best_valid").get<double>();
    progress.best_step = pj.at("best_step").get<std::int64_t>();
  } else {
    params = DenoiserParams(mc);
    params.initialize(mix64(seed ^ 0x1417ULL));
    write_text(log_path, "step,train_loss,valid_loss\n");
  }

  std::ofstream log(log_path, std::ios::app);
  if (!log) state_error("cannot append to '" + log_path + "'");
  const std::uint64_t valid_seed = mix64(seed ^ 0x7A11DULL);
  double first_loss = std::numeric_limits<double>::quiet_NaN(), last_loss = first_loss;

  auto save_state = [&] {
    write_bytes(last_ckpt, save_checkpoint(params));
    write_bytes(last_opt, save_optimizer_state(opt));
    json pj;
    pj["step"] = opt.step;
    pj["best_valid"] = std::isfinite(progress.best_valid) ? json(progress.best_valid) : json(nullptr);
    pj["best_step"] = progress.best_step;
    write_text(progress_path, pj.dump(2) + "\n");
  };

  while (opt.step < total) {
    const auto idx = batch_indices(seed, opt.step, n, cfg.batch);
    std::vector<ScoreGrid> batch;
    for (int i : idx) batch.push_back(train[i]);
    LossTerms loss;
    try {
      loss = train_step(params, opt, batch, tc);
    } catch (const Error& e) {
      state_error(e.what());
    }
    if (std::isnan(first_loss)) first_loss = loss.total;
    last_loss = loss.total;
    const std::int64_t step = opt.step;
    const bool checkpoint = step % cfg.valid_every == 0 || step == total;
    std::string valid_field;
    if (checkpoint && !valid.empty()) {
      const double v = evaluate_loss(params, valid, tc, valid_seed).total;
      valid_field = format_double(v);
      if (v < progress.best_valid) {
        progress.best_valid = v;
        progress.best_step = step;
        write_bytes(best_ckpt, save_checkpoint(params));
      }
    }
    log << step << "," << format_double(loss.total) << "," << valid_field << "\n";
    log.flush();
    if (checkpoint) save_state();
  }
  if (valid.empty()) {
    progress.best_step = opt.step;
    write_bytes(best_ckpt, save_checkpoint(params));
    save_state();
  }

  json summary;
  summary["steps"] = opt.step;
  summary["train_scores"] = train.size();
  summary["valid_scores"] = valid.size();
  summary["parameters"] = params.size();
  summary["first_loss"] = std::isnan(first_loss) ? json(nullptr) : json(first_loss);
  summary["last_loss"] = std::isnan(last_loss) ? json(nullptr) : json(last_loss);
  summary["best_valid"] = std::isfinite(progress.best_valid) ? json(progress.best_valid) : json(nullptr);
  summary["best_step"] = progress.best_step;
  print_json(out, g, summary);
  return kExitOk;
}

// ---------------------------------------------------------------- generate / infill

struct SampleArgs {
  std::string input;
  std::string ckpt;
  std::string vocab;
  std::string out;
  std::string report;
  std::string decode_to;
  double temperature = 1.0;
  bool sample_x0 = false;
};

struct GenerateArgs {
  SampleArgs s;
  std::vector<std::string> source;
  std::vector<std::string> target;
  bool from_scratch = false;
  int length = kMaxWidth;
  bool chord_as_target = false;
};

struct Model {
  std::optional<Vocabulary> vocab;
  std::optional<RowSupport> support;
  DenoiserParams params;
};

Model load_for_sampling(const SampleArgs& a) {
  Model m;
  if (!a.vocab.empty()) {
    m.vocab = load_vocab(a.vocab, kExitState);
    m.support = vocabulary_support(*m.vocab);
  }
  m.params = load_model(a.ckpt, m.vocab ? m.vocab->size() : -1);
  return m;
}

void finish_sampling(const SampleArgs& a, const Model& m, const GenerationResult& r, json report, const Globals& g,
                     std::ostream& out) {
  if (r.score.count(kMask) != 0) throw Error("internal: generated score still holds MASK tokens");
  write_text(a.out, write_score(r.score));
  if (!a.decode_to.empty()) {
    if (!m.vocab) usage("--decode needs --vocab");
    write_song(a.decode_to, decode(r.score, *m.vocab, DecodeOptions{true}));
  }
  report["masked_per_step"] = r.masked_per_step;
  if (!a.report.empty()) write_text(a.report, report.dump(2) + "\n");
  print_json(out, g, report);
}

SamplingOptions sampling_options(const SampleArgs& a, const Model& m, const Globals& g) {
  SamplingOptions o;
  o.seed = require_seed(g);
  o.temperature = a.temperature;
  if (a.temperature < 0.0) usage("temperature must be >= 0");
  o.sample_x0 = a.sample_x0;
  o.threads = g.threads;
  o.support = m.support ? &*m.support : nullptr;
  return o;
}

int cmd_generate(const GenerateArgs& a, const Globals& g, std::ostream& out) {
  const auto sources = parse_tracks(a.source, false);
  const auto targets = parse_tracks(a.target, false);
  for (TrackRole t : sources) {
    if (std::find(targets.begin(), targets.end(), t) != targets.end()) {
      usage("overlap: '" + std::string(track_name(t)) + "' is both source and target");
    }
  }
  if (targets.empty() && !a.chord_as_target) usage("empty target");
  require_seed(g);
  if (a.from_scratch && !sources.empty()) usage("from-scratch generation takes no source tracks");
  if (!a.from_scratch && a.s.input.empty()) usage("an input score is required unless --from-scratch is set");

  ScoreGrid input;
  if (!a.from_scratch) input = load_score_file(a.s.input, kExitUsage);
  const Model m = load_for_sampling(a.s);
  const int k = m.params.config().vocab_size;
  if (a.from_scratch) {
    if (a.length < 1 || a.length > m.params.config().max_width) usage("length out of range");
    input = ScoreGrid(a.length, k, kPad);
  } else if (input.vocab_size() != k) {
    state_error("vocab mismatch: score K=" + std::to_string(input.vocab_size()) + ", model K=" + std::to_string(k));
  }

  RoleMask roles;
  roles.roles.fill(TrackMark::empty);
  for (TrackRole t : sources) {
    if (input.track_all(t, kEmpty)) usage("source track '" + std::string(track_name(t)) + "' is empty in the input");
    roles[t] = TrackMark::source;
  }
  for (TrackRole t : targets) roles[t] = TrackMark::target;
  if (a.chord_as_target) {
    roles[TrackRole::chord] = TrackMark::target;
  } else if (!a.from_scratch && !input.track_all(TrackRole::chord, kEmpty)) {
    roles[TrackRole::chord] = TrackMark::source;
  }

  const Schedule schedule(m.params.config().steps);
  const Denoiser model(m.params, g.threads);
  const SamplingOptions opts = sampling_options(a.s, m, g);
  const GenerationResult r = generate(model, input, roles, schedule, opts);

  json report;
  report["seed"] = opts.seed;
  report["temperature"] = opts.temperature;
  report["sample_x0"] = opts.sample_x0;
  report["steps"] = schedule.steps();
  report["width"] = r.score.width();
  report["K"] = k;
  report["roles"] = roles_json(roles.roles);
  finish_sampling(a.s, m, r, std::move(report), g, out);
  return kExitOk;
}

struct InfillArgs {
  SampleArgs s;
  std::vector<std::string> masks;
};

int cmd_infill(const InfillArgs& a, const Globals& g, std::ostream& out) {
  if (a.masks.empty()) usage("at least one --mask region is required");
  require_seed(g);
  const ScoreGrid input = load_score_file(a.s.input, kExitUsage);
  const int width = input.width();
  std::vector<std::uint8_t> mask(input.cells().size(), 0);
  json regions = json::array();
  for (const std::string& spec : a.masks) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() != 3) usage("bad mask '" + spec + "': expected track:start:end");
    const auto t = parse_track(parts[0]);
    if (!t) usage("unknown track '" + parts[0] + "'");
    int lo = 0, hi = 0;
    try {
      std::size_t u1 = 0, u2 = 0;
      lo = std::stoi(parts[1], &u1);
      hi = std::stoi(parts[2], &u2);
      if (u1 != parts[1].size() || u2 != parts[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      usage("bad mask '" + spec + "': start and end must be integers");
    }
    if (lo < 0 || hi > width || lo >= hi) {
      usage("out of range: mask '" + spec + "' on a score of width " + std::to_string(width));
    }
    for (int row : {pitch_row(*t), duration_row(*t)}) {
      for (int c = lo; c < hi; ++c) mask[static_cast<std::size_t>(row) * width + c] = 1;
    }
    regions.push_back({{"track", track_name(*t)}, {"start", lo}, {"end", hi}});
  }

  const Model m = load_for_sampling(a.s);
  if (input.vocab_size() != m.params.config().vocab_size) state_error("vocab mismatch: score K differs from model K");
  const Schedule schedule(m.params.config().steps);
  const Denoiser model(m.params, g.threads);
  const SamplingOptions opts = sampling_options(a.s, m, g);
  const GenerationResult r = infill(model, input, mask, schedule, opts);

  json report;
  report["seed"] = opts.seed;
  report["temperature"] = opts.temperature;
  report["sample_x0"] = opts.sample_x0;
  report["steps"] = schedule.steps();
  report["regions"] = regions;
  report["masked_cells"] = std::count(mask.begin(), mask.end(), 1);
  finish_sampling(a.s, m, r, std::move(report), g, out);
  return kExitOk;
}

// ---------------------------------------------------------------- eval / stats

constexpr std::array<Feature, 3> kFeatures = {Feature::pitch, Feature::dur, Feature::ioi};

json histogram_json(const FeatureHistogram& h) {
  return json{{"bins", h.bins}, {"count", h.count}};
}

FeatureHistogram histogram_from_json(const nlohmann::json& j, Feature f) {
  FeatureHistogram h;
  h.feature = f;
  const auto bins = j.at("bins").get<std::vector<double>>();
  if (bins.size() != kFeatureClasses) throw ParseError("histogram needs 16 bins");
  std::copy(bins.begin(), bins.end(), h.bins.begin());
  h.count = j.at("count").get<double>();
  return h;
}

struct LoadedSong {
  Song song;
  std::optional<std::array<TrackMark, kNumTracks>> marks;
};

LoadedSong load_song(const fs::path& path, const std::optional<Vocabulary>& vocab) {
  LoadedSong out;
  if (path.extension() == ".score") {
    if (!vocab) usage("--vocab is required to read '" + path.string() + "'");
    const ScoreGrid s = load_score_file(path.string(), kExitUsage);
    if (s.vocab_size() != vocab->size()) state_error("vocab mismatch: '" + path.string() + "'");
    out.song = decode(s, *vocab, DecodeOptions{true});
    out.marks = s.marks();
  } else {
    out.song = read_notelist(read_text(path.string(), kExitUsage));
  }
  return out;
}

std::vector<TrackRole> eval_tracks(const std::vector<TrackRole>& explicit_tracks, const LoadedSong& generated,
                                   const Song* reference) {
  if (!explicit_tracks.empty()) return explicit_tracks;
  std::vector<TrackRole> out;
  if (generated.marks) {
    for (TrackRole t : kInstrumentTracks) {
      if ((*generated.marks)[track_index(t)] == TrackMark::target) out.push_back(t);
    }
  }
  if (!out.empty()) return out;
  const Song& s = reference ? *reference : generated.song;
  for (TrackRole t : kInstrumentTracks) {
    if (std::any_of(s.notes.begin(), s.notes.end(), [t](const Note& n) { return n.track == t; })) out.push_back(t);
  }
  return out;
}

std::vector<Note> notes_of(const Song& s, const std::vector<TrackRole>& tracks) {
  std::vector<Note> out;
  for (const Note& n : s.notes) {
    if (std::find(tracks.begin(), tracks.end(), n.track) != tracks.end()) out.push_back(n);
  }
  return out;
}

struct EvalArgs {
  std::string generated;
  std::string reference;
  std::string train_dist;
  std::string metrics = "ca,kl_pitch,kl_dur,kl_ioi";
  std::string vocab;
  std::vector<std::string> tracks;
  std::string out;
};

std::vector<fs::path> list_songs(const std::string& dir) {
  if (!fs::is_directory(dir)) usage("not a directory: '" + dir + "'");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && has_ext(e.path(), {".score", ".notes", ".txt"})) files.push_back(e.path().filename());
  }
  std::sort(files.begin(), files.end());
  return files;
}

int cmd_eval(const EvalArgs& a, const Globals& g, std::ostream& out) {
  if (a.reference.empty() == a.train_dist.empty()) usage("give exactly one of --reference or --train-dist");
  std::vector<std::string> metrics;
  const std::set<std::string> known = {"ca", "kl_pitch", "kl_dur", "kl_ioi"};
  for (const std::string& m : split_list(a.metrics)) {
    if (!known.count(m)) usage("unknown metric '" + m + "'");
    if (std::find(metrics.begin(), metrics.end(), m) == metrics.end()) metrics.push_back(m);
  }
  if (metrics.empty()) usage("no metrics requested");
  const bool want_ca = std::find(metrics.begin(), metrics.end(), "ca") != metrics.end();
  if (want_ca && !a.train_dist.empty()) usage("ca requires references");

  std::optional<Vocabulary> vocab;
  if (!a.vocab.empty()) vocab = load_vocab(a.vocab, kExitState);
  const auto explicit_tracks = parse_tracks(a.tracks, false);
  const auto gen_files = list_songs(a.generated);
  if (gen_files.empty()) usage("no input files in '" + a.generated + "'");

  std::array<FeatureHistogram, 3> gen_h, ref_h;
  for (int f = 0; f < 3; ++f) gen_h[f].feature = ref_h[f].feature = kFeatures[f];
  std::size_t ca_hits = 0, ca_total = 0;

  if (!a.reference.empty()) {
    const auto ref_files = list_songs(a.reference);
    std::vector<std::string> unpaired;
    std::set_symmetric_difference(gen_files.begin(), gen_files.end(), ref_files.begin(), ref_files.end(),
                                  std::back_inserter(unpaired),
                                  [](const fs::path& x, const fs::path& y) { return x.string() < y.string(); });
    if (!unpaired.empty()) {
      std::string list;
      for (const auto& u : unpaired) list += (list.empty() ? "" : ", ") + u;
      usage("unpaired files: " + list);
    }
    struct PairResult {
      std::array<FeatureHistogram, 3> gen, ref;
      std::size_t hits = 0, total = 0;
    };
    std::vector<PairResult> parts(gen_files.size());
    std::vector<std::string> errors(gen_files.size());
    std::vector<LoadedSong> gens(gen_files.size()), refs(gen_files.size());
    for (std::size_t i = 0; i < gen_files.size(); ++i) {
      gens[i] = load_song(fs::path(a.generated) / gen_files[i], vocab);
      refs[i] = load_song(fs::path(a.reference) / gen_files[i], vocab);
      if (gens[i].song.bars != refs[i].song.bars) usage("bar count mismatch: '" + gen_files[i].string() + "'");
    }
    parallel_for(static_cast<int>(gen_files.size()), g.threads, [&](int i) {
      try {
        const auto tracks = eval_tracks(explicit_tracks, gens[i], &refs[i].song);
        const auto gn = notes_of(gens[i].song, tracks);
        const auto rn = notes_of(refs[i].song, tracks);
        for (int f = 0; f < 3; ++f) {
          parts[i].gen[f] = feature_histogram(gn, kFeatures[f]);
          parts[i].ref[f] = feature_histogram(rn, kFeatures[f]);
        }
        if (want_ca && gens[i].song.bars > 0) {
          for (TrackRole t : tracks) {
            if (t == TrackRole::drum) continue;
            const auto cg = track_chords(gens[i].song, t);
            const auto cr = track_chords(refs[i].song, t);
            for (std::size_t j = 0; j < cg.size(); ++j) parts[i].hits += cg[j] == cr[j];
            parts[i].total += cg.size();
          }
        }
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    });
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (!errors[i].empty()) usage("'" + gen_files[i].string() + "': " + errors[i]);
      for (int f = 0; f < 3; ++f) {
        gen_h[f].merge(parts[i].gen[f]);
        ref_h[f].merge(parts[i].ref[f]);
      }
      ca_hits += parts[i].hits;
      ca_total += parts[i].total;
    }
  } else {
    const auto dist = nlohmann::json::parse(read_text(a.train_dist, kExitUsage));
    for (int f = 0; f < 3; ++f) ref_h[f] = histogram_from_json(dist.at(std::string(feature_name(kFeatures[f]))), kFeatures[f]);
    for (const auto& name : gen_files) {
      const LoadedSong s = load_song(fs::path(a.generated) / name, vocab);
      const auto gn = notes_of(s.song, eval_tracks(explicit_tracks, s, nullptr));
      for (int f = 0; f < 3; ++f) gen_h[f].merge(feature_histogram(gn, kFeatures[f]));
    }
  }

  json values, samples, bandwidths;
  for (const std::string& m : metrics) {
    if (m == "ca") {
      if (ca_total == 0) usage("no chords to compare");
      values["ca"] = static_cast<double>(ca_hits) / static_cast<double>(ca_total);
      samples["ca"] = ca_total;
      continue;
    }
    const int f = m == "kl_pitch" ? 0 : m == "kl_dur" ? 1 : 2;
    Pdf p, q;
    try {
      p = kde_pdf(gen_h[f]);
      q = kde_pdf(ref_h[f]);
    } catch (const Error& e) {
      usage(m + ": " + e.what());
    }
    values[m] = kl_divergence(p.p, q.p);
    samples[m] = {{"generated", gen_h[f].count}, {"reference", ref_h[f].count}};
    bandwidths[m] = {{"generated", p.bandwidth}, {"reference", q.bandwidth}};
  }
  json report;
  report["metrics"] = values;
  report["pairs"] = a.reference.empty() ? json(nullptr) : json(gen_files.size());
  report["files"] = gen_files.size();
  report["samples"] = samples;
  report["bandwidths"] = bandwidths;
  if (!a.out.empty()) write_text(a.out, report.dump(2) + "\n");
  print_json(out, g, report);
  return kExitOk;
}

struct StatsArgs {
  std::string manifest;
  std::string vocab;
  std::string split = "train";
  std::string out;
};

int cmd_stats(const StatsArgs& a, const Globals& g, std::ostream& out) {
  const Vocabulary vocab = load_vocab(a.vocab, kExitState);
  if (a.manifest.empty()) usage("a corpus manifest is required (--manifest)");
  const CorpusManifest manifest = CorpusManifest::from_json(read_text(a.manifest, kExitState));
  const fs::path base = fs::path(a.manifest).parent_path();
  std::array<FeatureHistogram, 3> hist;
  for (int f = 0; f < 3; ++f) hist[f].feature = kFeatures[f];
  std::array<std::int64_t, kNumTracks> notes{};
  int scores = 0;
  for (const ManifestEntry& e : manifest.entries) {
    if (a.split != "all" && split_name(e.split) != a.split) continue;
    const ScoreGrid s = load_score_file((base / e.score).string(), kExitState);
    if (s.vocab_size() != vocab.size()) state_error("vocab mismatch: '" + e.score + "'");
    const Song song = decode(s, vocab);
    for (int f = 0; f < 3; ++f) hist[f].merge(feature_histogram(song.notes, kFeatures[f]));
    for (const Note& n : song.notes) ++notes[track_index(n.track)];
    ++scores;
  }
  json report;
  report["split"] = a.split;
  report["scores"] = scores;
  json per_track;
  for (TrackRole t : kInstrumentTracks) per_track[std::string(track_name(t))] = notes[track_index(t)];
  report["notes"] = per_track;
  for (int f = 0; f < 3; ++f) report[std::string(feature_name(kFeatures[f]))] = histogram_json(hist[f]);
  if (!a.out.empty()) write_text(a.out, report.dump(2) + "\n");
  print_json(out, g, report);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-track symbolic music generation with a discrete diffusion model"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Random seed (required where sampling or splitting happens)");
  app.add_option("--config", g.config, "JSON run configuration");
  app.add_flag("--quiet", g.quiet, "Suppress the JSON summary on stdout");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

  BuildVocabArgs bv;
  auto* c_bv = app.add_subcommand("build-vocab", "Ingest a corpus and build the token vocabulary");
  c_bv->add_option("corpus", bv.corpus, "Directory of .mid/.midi/.notes files")->required();
  c_bv->add_option("-o,--out", bv.out, "Vocabulary JSON output")->required();
  c_bv->add_option("--report", bv.report, "Write the vocabulary report here");
  c_bv->add_option("--scores", bv.scores, "Also encode every fragment into this directory with a manifest");
  c_bv->add_option("--max-bars", bv.max_bars, "Fragment length in bars")->check(CLI::Range(1, 32));
  c_bv->add_option("--min-notes", bv.min_notes, "Drop files with fewer notes");
  c_bv->add_option("--min-tracks", bv.min_tracks, "Drop files with fewer tracks");

  EncodeArgs en;
  auto* c_en = app.add_subcommand("encode", "Ingest one file and write a score");
  c_en->add_option("input", en.input, "Input .mid or note list")->required();
  c_en->add_option("--vocab", en.vocab, "Vocabulary JSON")->required();
  c_en->add_option("-o,--out", en.out, "Score output")->required();
  c_en->add_option("--fragment", en.fragment, "Fragment index");
  c_en->add_option("--width", en.width, "Score width L (default: bars * 16)");
  c_en->add_option("--max-bars", en.max_bars, "Fragment length in bars")->check(CLI::Range(1, 32));

  DecodeArgs de;
  auto* c_de = app.add_subcommand("decode", "Convert a score back to notes (.mid or note list)");
  c_de->add_option("input", de.input, "Score file")->required();
  c_de->add_option("--vocab", de.vocab, "Vocabulary JSON")->required();
  c_de->add_option("-o,--out", de.out, "Output .mid/.midi or note list")->required();
  c_de->add_flag("--lenient", de.lenient, "Skip malformed cells instead of failing");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train the denoiser");
  c_tr->add_option("--manifest", tr.cli.manifest, "Corpus manifest from build-vocab --scores");
  c_tr->add_option("--vocab", tr.cli.vocab, "Vocabulary JSON");
  c_tr->add_option("--out", tr.cli.out, "Checkpoint directory");
  c_tr->add_option("--preset", tr.cli.preset, "Model preset: toy or full");
  c_tr->add_option("--d", tr.cli.d, "Per-cell embedding width");
  c_tr->add_option("--d-model", tr.cli.d_model, "Transformer width");
  c_tr->add_option("--layers", tr.cli.n_layers, "Transformer layers");
  c_tr->add_option("--heads", tr.cli.n_heads, "Attention heads");
  c_tr->add_option("--diffusion-steps", tr.cli.diffusion_steps, "Diffusion steps T");
  c_tr->add_option("--lambda", tr.cli.lambda, "Auxiliary loss weight");
  c_tr->add_option("--lr", tr.cli.lr, "Peak learning rate");
  c_tr->add_option("--warmup", tr.cli.warmup, "Warmup steps");
  c_tr->add_option("--decay-steps", tr.cli.decay_steps, "Step at which the learning rate reaches zero");
  c_tr->add_option("--batch", tr.cli.batch, "Batch size");
  c_tr->add_option("--epochs", tr.cli.epochs, "Epochs (when --steps is not given)");
  c_tr->add_option("--steps", tr.cli.train_steps, "Optimizer steps");
  c_tr->add_option("--valid-every", tr.cli.valid_every, "Validation and checkpoint interval");
  c_tr->add_flag("--resume", tr.resume, "Continue from <out>/last.ckpt");

  GenerateArgs ge;
  auto add_sampling = [](CLI::App* c, SampleArgs& s) {
    c->add_option("--ckpt", s.ckpt, "Model checkpoint")->required();
    c->add_option("--vocab", s.vocab, "Vocabulary JSON (restricts sampling to valid tokens per row)");
    c->add_option("-o,--out", s.out, "Score output")->required();
    c->add_option("--report", s.report, "Write the JSON report here");
    c->add_option("--decode", s.decode_to, "Also write the decoded notes (.mid or note list)");
    c->add_option("--temperature", s.temperature, "Sampling temperature; 0 is greedy");
    c->add_flag("--sample-x0", s.sample_x0, "Draw x0 first, then step through the exact posterior");
  };
  auto* c_ge = app.add_subcommand("generate", "Generate target tracks given source tracks");
  c_ge->add_option("input", ge.s.input, "Input score");
  add_sampling(c_ge, ge.s);
  c_ge->add_option("--source", ge.source, "Source tracks (comma separated)");
  c_ge->add_option("--target", ge.target, "Target tracks (comma separated)");
  c_ge->add_flag("--from-scratch", ge.from_scratch, "Generate without an input score");
  c_ge->add_option("--length", ge.length, "Score width for --from-scratch");
  c_ge->add_flag("--chord-as-target", ge.chord_as_target, "Generate the chord track too");

  InfillArgs in;
  auto* c_in = app.add_subcommand("infill", "Regenerate masked regions of a score");
  c_in->add_option("input", in.s.input, "Input score")->required();
  add_sampling(c_in, in.s);
  c_in->add_option("--mask", in.masks, "Region track:start:end (end exclusive), repeatable");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Chord accuracy and feature KL metrics");
  c_ev->add_option("--generated", ev.generated, "Directory of generated files")->required();
  c_ev->add_option("--reference", ev.reference, "Directory of reference files with the same names");
  c_ev->add_option("--train-dist", ev.train_dist, "Training distribution from the stats command");
  c_ev->add_option("--metrics", ev.metrics, "Comma list of ca, kl_pitch, kl_dur, kl_ioi");
  c_ev->add_option("--vocab", ev.vocab, "Vocabulary JSON (needed for .score files)");
  c_ev->add_option("--tracks", ev.tracks, "Tracks to evaluate (default: the generated targets)");
  c_ev->add_option("-o,--out", ev.out, "Report output");

  StatsArgs st;
  auto* c_st = app.add_subcommand("stats", "Feature histograms of a manifest split");
  c_st->add_option("--manifest", st.manifest, "Corpus manifest")->required();
  c_st->add_option("--vocab", st.vocab, "Vocabulary JSON")->required();
  c_st->add_option("--split", st.split, "train, valid, test or all");
  c_st->add_option("-o,--out", st.out, "Report output");

  std::vector<const char*> argv = {"trackdiff"};
  for (const std::string& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (app.count("--seed")) g.seed = seed;
  g.threads_given = app.count("--threads") > 0;

  try {
    if (*c_bv) return cmd_build_vocab(bv, g, out, err);
    if (*c_en) return cmd_encode(en, g, out);
    if (*c_de) return cmd_decode(de, g);
    if (*c_tr) return cmd_train(tr, *c_tr, g, out);
    if (*c_ge) return cmd_generate(ge, g, out);
    if (*c_in) return cmd_infill(in, g, out);
    if (*c_ev) return cmd_eval(ev, g, out);
    if (*c_st) return cmd_stats(st, g, out);
  } catch (const ExitError& e) {
    err << "error: " << e.what() << "\n";
    return e.code;
  } catch (const CompatibilityError& e) {
    err << "error: " << e.what() << "\n";
    return kExitState;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace trackdiff
