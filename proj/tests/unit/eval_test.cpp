// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <sstream>

#include <gtest/gtest.h>

#include "depthrnn/errors.hpp"
#include "depthrnn/eval/evaluator.hpp"
#include "depthrnn/numerics/rng.hpp"

namespace depthrnn::eval {
namespace {

DatasetSpec spec_with(SplitMix mix, std::size_t n, std::uint64_t seed) {
  DatasetSpec s;
  s.n_examples = n;
  s.split_mix = mix;
  s.world_seed = seed;
  s.seed = seed + 1;
  return s;
}

TEST(Dataset, RandomOnlyIsExactlyBalanced) {
  const auto data = generate_dataset(spec_with({1.0, 0.0, 0.0}, 1000, 3));
  ASSERT_EQ(data.size(), 1000u);
  const auto yes = std::count_if(data.begin(), data.end(),
                                 [](const SceneQAExample& e) { return e.label == Answer::kYes; });
  EXPECT_EQ(yes, 500);
}

TEST(Dataset, SplitSoundnessAndScenes) {
  DatasetSpec s = spec_with({}, 3000, 5);
  s.bias.flip_fraction = 0.0;
  for (const SceneQAExample& e : generate_dataset(s)) {
    EXPECT_EQ(e.scene.size(), s.scene_len);
    std::vector<std::size_t> sorted = e.scene;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
    EXPECT_EQ(e.query_in_scene(), e.label == Answer::kYes);
  }
}

TEST(Dataset, BiasFlipsOnlyPopularNegatives) {
  DatasetSpec s = spec_with({}, 3000, 6);
  s.bias.flip_fraction = 0.5;
  std::size_t flipped = 0, popular_neg = 0;
  for (const SceneQAExample& e : generate_dataset(s)) {
    if (e.flipped) {
      ++flipped;
      EXPECT_EQ(e.split, Split::kPopular);
      EXPECT_EQ(e.label, Answer::kYes);
      EXPECT_FALSE(e.query_in_scene());
    }
    if (e.split == Split::kPopular && !e.query_in_scene()) ++popular_neg;
  }
  EXPECT_EQ(flipped, (popular_neg + 1) / 2);
}

// Adversarial negatives co-occur with their scene more than random ones.
TEST(Dataset, AdversarialNegativesCooccurMore) {
  const DatasetSpec s = spec_with({}, 10000, 7);
  const auto data = generate_dataset(s);
  std::vector<std::vector<std::size_t>> scenes;
  for (const SceneQAExample& e : data) scenes.push_back(e.scene);
  const CorpusStats stats = CorpusStats::from_scenes(scenes, s.n_objects);
  double adv = 0.0, rnd = 0.0;
  std::size_t n_adv = 0, n_rnd = 0;
  for (const SceneQAExample& e : data) {
    if (e.label != Answer::kNo) continue;
    const double a = static_cast<double>(stats.scene_affinity(e.query, e.scene));
    if (e.split == Split::kAdversarial) {
      adv += a;
      ++n_adv;
    } else if (e.split == Split::kRandom) {
      rnd += a;
      ++n_rnd;
    }
  }
  ASSERT_GT(n_adv, 0u);
  ASSERT_GT(n_rnd, 0u);
  EXPECT_GT(adv / n_adv, rnd / n_rnd);
}

TEST(Dataset, DeterministicAndInfeasible) {
  const DatasetSpec s = spec_with({}, 200, 8);
  std::ostringstream a, b;
  write_jsonl(a, generate_dataset(s), Vocabulary{s.n_objects});
  write_jsonl(b, generate_dataset(s), Vocabulary{s.n_objects});
  EXPECT_EQ(a.str(), b.str());
  DatasetSpec bad = s;
  bad.scene_len = bad.n_objects;
  EXPECT_THROW(generate_dataset(bad), ConfigError);
}

TEST(Dataset, JsonlAndTokenRoundTrip) {
  const Vocabulary vocab{64};
  const auto data = generate_dataset(spec_with({}, 50, 9));
  std::stringstream io;
  write_jsonl(io, data, vocab);
  const auto back = read_jsonl(io, vocab);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back[i].tokens(vocab), data[i].tokens(vocab));
    EXPECT_EQ(back[i].split, data[i].split);
    EXPECT_EQ(back[i].flipped, data[i].flipped);
    const auto tokens = data[i].tokens(vocab);
    const SceneQAExample parsed = parse_tokens(tokens, vocab, data[i].split);
    EXPECT_EQ(parsed.scene, data[i].scene);
    EXPECT_EQ(parsed.query, data[i].query);
  }
  EXPECT_EQ(parse_vocabulary_manifest(vocabulary_manifest(vocab)).n_objects, 64u);
  const std::vector<std::size_t> malformed = {vocab.bos(), 1, 2, vocab.yes()};
  EXPECT_THROW(parse_tokens(malformed, vocab, Split::kRandom), ConfigError);
}

TEST(Metrics, HandCases) {
  const Answer Y = Answer::kYes, N = Answer::kNo;
  const std::vector<Answer> labels = {Y, N, Y, N};
  EvalReport r = accuracy_f1(labels, labels);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.f1, 1.0);
  const std::vector<Answer> mixed = {Y, Y, N, N};
  r = accuracy_f1(mixed, labels);
  EXPECT_EQ(r.tp, 1u);
  EXPECT_EQ(r.fp, 1u);
  EXPECT_EQ(r.fn, 1u);
  EXPECT_EQ(r.tn, 1u);
  EXPECT_EQ(r.accuracy, 0.5);
  EXPECT_EQ(r.precision, 0.5);
  EXPECT_EQ(r.recall, 0.5);
  EXPECT_EQ(r.f1, 0.5);
  const std::vector<Answer> no = {N, N, N, N};
  r = accuracy_f1(no, labels);
  EXPECT_EQ(r.accuracy, 0.5);
  EXPECT_EQ(r.f1, 0.0);
  EXPECT_THROW(accuracy_f1(no, std::vector<Answer>{Y}), DimensionError);
  EXPECT_THROW(accuracy_f1(std::vector<Answer>{}, std::vector<Answer>{}), ContractError);
}

TEST(Metrics, ChairHandCases) {
  ChairReport r = chair_scores({{"dog", "cat"}}, {{"cat", "dog"}});
  EXPECT_EQ(r.chair_s, 0.0);
  EXPECT_EQ(r.chair_i, 0.0);
  r = chair_scores({{"dog", "kite"}, {"cat", "tree"}}, {{"dog"}, {"cat", "tree"}});
  EXPECT_EQ(r.chair_s, 0.5);
  EXPECT_EQ(r.chair_i, 0.25);
  r = chair_scores({{"puppy"}}, {{"dog"}}, {{"puppy", "dog"}});
  EXPECT_EQ(r.chair_i, 0.0);
  EXPECT_THROW(chair_scores({{"a"}}, {}), DimensionError);
}

TEST(Eval, OracleDecoderScoresOne) {
  const Vocabulary vocab{64};
  const auto data = generate_dataset(spec_with({}, 300, 10));
  auto oracle = [&](const SceneQAExample& e) {
    return e.label == Answer::kYes ? vocab.yes() : vocab.no();
  };
  const EvalResult r = run_eval(oracle, data, vocab);
  ASSERT_EQ(r.per_split.size(), 3u);
  for (const auto& [split, report] : r.per_split) EXPECT_EQ(report.accuracy, 1.0);
  EXPECT_EQ(r.overall.accuracy, 1.0);
}

TEST(Eval, InvalidTokensCountAsErrors) {
  const Vocabulary vocab{64};
  const auto data = generate_dataset(spec_with({1.0, 0.0, 0.0}, 10, 11));
  const EvalResult r = run_eval([&](const SceneQAExample&) { return vocab.bos(); }, data, vocab);
  EXPECT_EQ(r.overall.invalid, 10u);
  EXPECT_EQ(r.overall.accuracy, 0.0);
  EXPECT_EQ(r.overall.total(), 10u);
}

TEST(Eval, ForcedVanillaReportEqualsVanilla) {
  const Vocabulary vocab{16};
  DatasetSpec s = spec_with({}, 60, 12);
  s.n_objects = 16;
  s.scene_len = 4;
  s.n_topics = 4;
  const auto data = generate_dataset(s);
  backbone::BackboneConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.vocab = vocab.size();
  c.max_seq = 10;
  Rng rng(12);
  const backbone::BackboneWeights w = backbone::BackboneWeights::init(c, rng);
  const depth::CellMode fv = depth::CellMode::forced_vanilla();
  const EvalResult a = run_eval(w, nullptr, data, vocab), b = run_eval(w, &fv, data, vocab);
  EXPECT_EQ(a.decoded, b.decoded);
  std::ostringstream ca, cb;
  write_report_csv_rows(ca, a, "m");
  write_report_csv_rows(cb, b, "m");
  EXPECT_EQ(ca.str(), cb.str());
}

// Brute-force oracles: counts by explicit enumeration of every pair.
TEST(Metrics, MatchBruteForceOracles) {
  Rng rng(13);
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 1 + rng.below(30);
    std::vector<Answer> p(n), l(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.below(2) ? Answer::kYes : Answer::kNo;
      l[i] = rng.below(2) ? Answer::kYes : Answer::kNo;
    }
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool py = p[i] == Answer::kYes, ly = l[i] == Answer::kYes;
      tp += py && ly;
      fp += py && !ly;
      tn += !py && !ly;
      fn += !py && ly;
    }
    const EvalReport r = accuracy_f1(p, l);
    EXPECT_EQ(r.tp, tp);
    EXPECT_EQ(r.fp, fp);
    EXPECT_EQ(r.tn, tn);
    EXPECT_EQ(r.fn, fn);
    EXPECT_EQ(r.accuracy, static_cast<double>(tp + tn) / static_cast<double>(n));
  }
}

}  // namespace
}  // namespace depthrnn::eval
