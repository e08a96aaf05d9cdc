// SPDX-License-Identifier: Apache-2.0
#include "depthrnn/eval/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>

#include "depthrnn/errors.hpp"
#include "depthrnn/numerics/rng.hpp"
#include "json.hpp"

namespace depthrnn::eval {
namespace {

using nlohmann::json;

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::vector<std::size_t> absent_objects(std::size_t n_objects, std::span<const std::size_t> scene) {
  std::vector<bool> present(n_objects, false);
  for (std::size_t o : scene) present[o] = true;
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o < n_objects; ++o) {
    if (!present[o]) out.push_back(o);
  }
  return out;
}

template <typename Score>
std::vector<std::size_t> top_absent(std::size_t n_objects, std::span<const std::size_t> scene,
                                    std::size_t k, Score score) {
  std::vector<std::size_t> absent = absent_objects(n_objects, scene);
  std::stable_sort(absent.begin(), absent.end(),
                   [&](std::size_t a, std::size_t b) { return score(a) > score(b); });
  if (absent.size() > k) absent.resize(k);
  return absent;
}

// Object rank permutation, topic membership and base weights.
struct World {
  std::vector<double> weight;
  std::vector<std::size_t> topic;
};

World make_world(const DatasetSpec& spec) {
  Rng rng(mix_seed(spec.world_seed, "world"));
  std::vector<std::size_t> by_rank(spec.n_objects);
  std::iota(by_rank.begin(), by_rank.end(), 0);
  shuffle(by_rank, rng);
  World w{std::vector<double>(spec.n_objects), std::vector<std::size_t>(spec.n_objects)};
  for (std::size_t r = 0; r < spec.n_objects; ++r) {
    w.weight[by_rank[r]] = std::pow(static_cast<double>(r + 1), -spec.zipf_exponent);
    w.topic[by_rank[r]] = r % spec.n_topics;
  }
  return w;
}

std::vector<std::size_t> draw_scene(const DatasetSpec& spec, const World& world, Rng& rng) {
  const std::size_t topic = rng.below(spec.n_topics);
  std::vector<double> w(spec.n_objects);
  for (std::size_t o = 0; o < spec.n_objects; ++o) {
    w[o] = world.weight[o] * (world.topic[o] == topic ? spec.topic_boost : 1.0);
  }
  std::vector<std::size_t> scene;
  for (std::size_t k = 0; k < spec.scene_len; ++k) {
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    double u = rng.uniform() * total;
    std::size_t pick = spec.n_objects - 1;
    for (std::size_t o = 0; o < spec.n_objects; ++o) {
      if (w[o] <= 0.0) continue;
      if (u < w[o]) {
        pick = o;
        break;
      }
      u -= w[o];
    }
    // Floating-point slack can leave u past the end; fall back to the last
    // object still available.
    while (w[pick] <= 0.0) --pick;
    scene.push_back(pick);
    w[pick] = 0.0;
  }
  shuffle(scene, rng);
  return scene;
}

std::vector<std::size_t> split_counts(const DatasetSpec& spec) {
  const double f[3] = {spec.split_mix.random, spec.split_mix.popular, spec.split_mix.adversarial};
  const double total = f[0] + f[1] + f[2];
  std::vector<std::size_t> counts(3);
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    counts[s] = static_cast<std::size_t>(std::floor(f[s] / total * spec.n_examples));
    assigned += counts[s];
  }
  // Remainder goes to the splits with the largest fractional share.
  std::vector<int> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const double fa = f[a] / total * spec.n_examples - counts[a];
    const double fb = f[b] / total * spec.n_examples - counts[b];
    return fa > fb;
  });
  for (std::size_t i = 0; assigned < spec.n_examples; ++i, ++assigned) {
    int s = order[i % 3];
    while (f[s] <= 0.0) s = order[++i % 3];
    ++counts[s];
  }
  return counts;
}

}  // namespace

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kRandom:
      return "random";
    case Split::kPopular:
      return "popular";
    case Split::kAdversarial:
      return "adversarial";
  }
  return "unknown";
}

Split parse_split(std::string_view name) {
  for (Split s : kAllSplits) {
    if (split_name(s) == name) return s;
  }
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

std::string_view answer_name(Answer a) { return a == Answer::kYes ? "yes" : "no"; }

Answer parse_answer(std::string_view name) {
  if (name == "yes") return Answer::kYes;
  if (name == "no") return Answer::kNo;
  throw ConfigError("unknown answer '" + std::string(name) + "'");
}

std::vector<std::size_t> SceneQAExample::prompt_tokens(const Vocabulary& vocab) const {
  std::vector<std::size_t> t;
  t.reserve(scene.size() + 4);
  t.push_back(vocab.bos());
  t.insert(t.end(), scene.begin(), scene.end());
  t.push_back(vocab.sep());
  t.push_back(query);
  t.push_back(vocab.question());
  return t;
}

std::vector<std::size_t> SceneQAExample::tokens(const Vocabulary& vocab) const {
  std::vector<std::size_t> t = prompt_tokens(vocab);
  t.push_back(label == Answer::kYes ? vocab.yes() : vocab.no());
  return t;
}

bool SceneQAExample::query_in_scene() const {
  return std::find(scene.begin(), scene.end(), query) != scene.end();
}

SceneQAExample parse_tokens(std::span<const std::size_t> tokens, const Vocabulary& vocab,
                            Split split) {
  const std::size_t n = tokens.size();
  if (n < 5 || tokens[0] != vocab.bos() || tokens[n - 4] != vocab.sep() ||
      tokens[n - 2] != vocab.question() ||
      (tokens[n - 1] != vocab.yes() && tokens[n - 1] != vocab.no()) ||
      !vocab.is_object(tokens[n - 3])) {
    throw ConfigError("token sequence is not [BOS, scene..., SEP, query, Q, answer]");
  }
  SceneQAExample ex;
  ex.scene.assign(tokens.begin() + 1, tokens.end() - 4);
  for (std::size_t o : ex.scene) {
    if (!vocab.is_object(o)) throw ConfigError("scene token " + std::to_string(o) + " is not an object");
  }
  ex.query = tokens[n - 3];
  ex.label = tokens[n - 1] == vocab.yes() ? Answer::kYes : Answer::kNo;
  ex.split = split;
  ex.flipped = ex.label == Answer::kYes && !ex.query_in_scene();
  return ex;
}

void DatasetSpec::validate() const {
  if (scene_len == 0) throw ConfigError("data.scene_len must be positive");
  if (scene_len >= n_objects) {
    throw ConfigError("data.scene_len (" + std::to_string(scene_len) +
                      ") must be smaller than data.n_objects (" + std::to_string(n_objects) + ")");
  }
  if (n_topics == 0) throw ConfigError("data.n_topics must be positive");
  if (negative_pool == 0) throw ConfigError("data.negative_pool must be positive");
  if (split_mix.random < 0 || split_mix.popular < 0 || split_mix.adversarial < 0 ||
      split_mix.random + split_mix.popular + split_mix.adversarial <= 0) {
    throw ConfigError("data.split_mix must be non-negative with a positive sum");
  }
  if (bias.flip_fraction < 0.0 || bias.flip_fraction > 1.0) {
    throw ConfigError("data.bias.flip_fraction must lie in [0, 1]");
  }
  if (!(zipf_exponent >= 0.0) || !(topic_boost > 0.0)) {
    throw ConfigError("data.zipf_exponent must be >= 0 and data.topic_boost > 0");
  }
}

CorpusStats CorpusStats::from_scenes(const std::vector<std::vector<std::size_t>>& scenes,
                                     std::size_t n_objects) {
  CorpusStats s;
  s.frequency.assign(n_objects, 0);
  s.cooccurrence.assign(n_objects, std::vector<std::size_t>(n_objects, 0));
  for (const auto& scene : scenes) {
    for (std::size_t a : scene) {
      ++s.frequency[a];
      for (std::size_t b : scene) {
        if (a != b) ++s.cooccurrence[a][b];
      }
    }
  }
  return s;
}

std::size_t CorpusStats::scene_affinity(std::size_t object,
                                        std::span<const std::size_t> scene) const {
  std::size_t total = 0;
  for (std::size_t s : scene) total += cooccurrence[object][s];
  return total;
}

std::vector<std::size_t> popular_candidates(const CorpusStats& stats,
                                            std::span<const std::size_t> scene, std::size_t k) {
  return top_absent(stats.frequency.size(), scene, k,
                    [&](std::size_t o) { return stats.frequency[o]; });
}

std::vector<std::size_t> adversarial_candidates(const CorpusStats& stats,
                                                std::span<const std::size_t> scene,
                                                std::size_t k) {
  return top_absent(stats.frequency.size(), scene, k,
                    [&](std::size_t o) { return stats.scene_affinity(o, scene); });
}

std::vector<SceneQAExample> generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  const World world = make_world(spec);
  Rng rng(mix_seed(spec.seed, "dataset"));

  std::vector<std::vector<std::size_t>> scenes;
  scenes.reserve(spec.n_examples);
  for (std::size_t i = 0; i < spec.n_examples; ++i) scenes.push_back(draw_scene(spec, world, rng));
  const CorpusStats stats = CorpusStats::from_scenes(scenes, spec.n_objects);

  // (split, label) plan with exact per-split balance, then shuffled onto
  // scenes.
  std::vector<std::pair<Split, Answer>> plan;
  const std::vector<std::size_t> counts = split_counts(spec);
  for (int s = 0; s < 3; ++s) {
    for (std::size_t j = 0; j < counts[s]; ++j) {
      plan.emplace_back(kAllSplits[s], j < (counts[s] + 1) / 2 ? Answer::kYes : Answer::kNo);
    }
  }
  shuffle(plan, rng);

  std::vector<SceneQAExample> out(spec.n_examples);
  std::vector<std::size_t> popular_negatives;
  for (std::size_t i = 0; i < spec.n_examples; ++i) {
    SceneQAExample& ex = out[i];
    ex.scene = std::move(scenes[i]);
    ex.split = plan[i].first;
    ex.label = plan[i].second;
    if (ex.label == Answer::kYes) {
      ex.query = ex.scene[rng.below(ex.scene.size())];
      continue;
    }
    std::vector<std::size_t> pool;
    switch (ex.split) {
      case Split::kRandom:
        pool = absent_objects(spec.n_objects, ex.scene);
        break;
      case Split::kPopular:
        pool = popular_candidates(stats, ex.scene, spec.negative_pool);
        popular_negatives.push_back(i);
        break;
      case Split::kAdversarial:
        pool = adversarial_candidates(stats, ex.scene, spec.negative_pool);
        break;
    }
    ex.query = pool[rng.below(pool.size())];
  }

  const auto n_flip = static_cast<std::size_t>(
      std::llround(spec.bias.flip_fraction * static_cast<double>(popular_negatives.size())));
  shuffle(popular_negatives, rng);
  for (std::size_t j = 0; j < n_flip; ++j) {
    out[popular_negatives[j]].label = Answer::kYes;
    out[popular_negatives[j]].flipped = true;
  }
  return out;
}

void write_jsonl(std::ostream& out, const std::vector<SceneQAExample>& data,
                 const Vocabulary& vocab) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    const SceneQAExample& ex = data[i];
    json line = {{"id", i},
                 {"split", split_name(ex.split)},
                 {"scene", ex.scene},
                 {"query", ex.query},
                 {"label", answer_name(ex.label)},
                 {"flipped", ex.flipped},
                 {"tokens", ex.tokens(vocab)}};
    out << line.dump() << '\n';
  }
}

std::vector<SceneQAExample> read_jsonl(std::istream& in, const Vocabulary& vocab) {
  std::vector<SceneQAExample> data;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      SceneQAExample ex;
      ex.scene = j.at("scene").get<std::vector<std::size_t>>();
      ex.query = j.at("query").get<std::size_t>();
      ex.label = parse_answer(j.at("label").get<std::string>());
      ex.split = parse_split(j.at("split").get<std::string>());
      ex.flipped = j.value("flipped", false);
      for (std::size_t o : ex.scene) {
        if (!vocab.is_object(o)) throw ConfigError("scene object out of vocabulary");
      }
      if (!vocab.is_object(ex.query)) throw ConfigError("query object out of vocabulary");
      if (j.contains("tokens") && j.at("tokens").get<std::vector<std::size_t>>() != ex.tokens(vocab)) {
        throw ConfigError("tokens disagree with scene/query/label");
      }
      data.push_back(std::move(ex));
    } catch (const json::exception& e) {
      throw ConfigError("dataset line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return data;
}

std::string vocabulary_manifest(const Vocabulary& vocab) {
  json j = {{"n_objects", vocab.n_objects}, {"bos", vocab.bos()},   {"sep", vocab.sep()},
            {"question", vocab.question()}, {"yes", vocab.yes()},   {"no", vocab.no()},
            {"size", vocab.size()}};
  return j.dump(2) + "\n";
}

Vocabulary parse_vocabulary_manifest(std::string_view text) {
  try {
    const json j = json::parse(text);
    Vocabulary v{j.at("n_objects").get<std::size_t>()};
    if (j.value("size", v.size()) != v.size() || j.value("yes", v.yes()) != v.yes() ||
        j.value("no", v.no()) != v.no()) {
      throw ConfigError("vocabulary manifest layout is inconsistent");
    }
    return v;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("vocabulary manifest: ") + e.what());
  }
}

}  // namespace depthrnn::eval
