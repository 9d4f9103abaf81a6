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

#include "trackdiff/corpus.hpp"

#include <nlohmann/json.hpp>

#include "trackdiff/denoiser.hpp"
#include "trackdiff/error.hpp"
#include "trackdiff/random.hpp"

namespace trackdiff {

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

namespace {

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw ParseError("unknown split '" + s + "'");
}

}  // namespace

Split assign_split(const std::string& source, int fragment, std::uint64_t seed) {
  const std::string key = source + "#" + std::to_string(fragment);
  const auto* p = reinterpret_cast<const std::uint8_t*>(key.data());
  const std::uint64_t h = mix64(fnv1a64({p, key.size()}) ^ mix64(seed));
  const std::uint64_t bucket = h % 10;
  if (bucket < 8) return Split::train;
  return bucket == 8 ? Split::valid : Split::test;
}

std::string CorpusManifest::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  auto& arr = j["entries"] = nlohmann::ordered_json::array();
  for (const ManifestEntry& e : entries) {
    nlohmann::ordered_json o;
    o["source"] = e.source;
    o["fragment"] = e.fragment;
    o["score"] = e.score;
    o["bars"] = e.bars;
    std::vector<std::string> names;
    for (TrackRole t : e.tracks) names.emplace_back(track_name(t));
    o["tracks"] = names;
    o["split"] = split_name(e.split);
    arr.push_back(o);
  }
  return j.dump(2) + "\n";
}

CorpusManifest CorpusManifest::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    CorpusManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& o : j.at("entries")) {
      ManifestEntry e;
      e.source = o.at("source").get<std::string>();
      e.fragment = o.at("fragment").get<int>();
      e.score = o.at("score").get<std::string>();
      e.bars = o.at("bars").get<int>();
      for (const auto& name : o.at("tracks")) {
        const auto t = parse_track(name.get<std::string>());
        if (!t) throw ParseError("unknown track '" + name.get<std::string>() + "'");
        e.tracks.push_back(*t);
      }
      e.split = parse_split(o.at("split").get<std::string>());
      m.entries.push_back(std::move(e));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
}

void RunConfig::merge_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("config: expected a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const auto& v = it.value();
      if (k == "manifest") manifest = v.get<std::string>();
      else if (k == "vocab") vocab = v.get<std::string>();
      else if (k == "out") out = v.get<std::string>();
      else if (k == "preset") preset = v.get<std::string>();
      else if (k == "d") d = v.get<int>();
      else if (k == "d_model") d_model = v.get<int>();
      else if (k == "n_layers") n_layers = v.get<int>();
      else if (k == "n_heads") n_heads = v.get<int>();
      else if (k == "diffusion_steps") diffusion_steps = v.get<int>();
      else if (k == "lambda") lambda = v.get<double>();
      else if (k == "lr") lr = v.get<double>();
      else if (k == "warmup") warmup = v.get<std::int64_t>();
      else if (k == "decay_steps") decay_steps = v.get<std::int64_t>();
      else if (k == "batch") batch = v.get<int>();
      else if (k == "epochs") epochs = v.get<int>();
      else if (k == "train_steps") train_steps = v.get<std::int64_t>();
      else if (k == "valid_every") valid_every = v.get<std::int64_t>();
      else if (k == "seed") seed = v.get<std::uint64_t>();
      else if (k == "threads") threads = v.get<int>();
      else throw ParseError("config: unknown key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
}

}  // namespace trackdiff
