// SPDX-License-Identifier: Apache-2.0
#ifndef DEPTHRNN_EVAL_DATASET_HPP_
#define DEPTHRNN_EVAL_DATASET_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Synthetic grounded yes/no QA. A scene (the grounding evidence) is a set of
// object ids; the question asks whether a query object is in the scene.
//
//   tokens = [BOS, scene..., SEP, query, Q, answer]
namespace depthrnn::eval {

struct Vocabulary {
  std::size_t n_objects = 64;

  std::size_t bos() const { return n_objects; }
  std::size_t sep() const { return n_objects + 1; }
  std::size_t question() const { return n_objects + 2; }
  std::size_t yes() const { return n_objects + 3; }
  std::size_t no() const { return n_objects + 4; }
  std::size_t size() const { return n_objects + 5; }
  bool is_object(std::size_t token) const { return token < n_objects; }
};

enum class Split { kRandom, kPopular, kAdversarial };
enum class Answer { kYes, kNo };

inline constexpr Split kAllSplits[] = {Split::kRandom, Split::kPopular, Split::kAdversarial};

std::string_view split_name(Split s);
Split parse_split(std::string_view name);
std::string_view answer_name(Answer a);
Answer parse_answer(std::string_view name);

struct SceneQAExample {
  std::vector<std::size_t> scene;
  std::size_t query = 0;
  Answer label = Answer::kNo;
  Split split = Split::kRandom;
  // True when bias injection turned a negative into a "yes" label.
  bool flipped = false;

  // Prompt only: [BOS, scene..., SEP, query, Q].
  std::vector<std::size_t> prompt_tokens(const Vocabulary& vocab) const;
  // Prompt followed by the answer token.
  std::vector<std::size_t> tokens(const Vocabulary& vocab) const;
  bool query_in_scene() const;
};

// Inverse of SceneQAExample::tokens. Throws ConfigError on malformed input.
SceneQAExample parse_tokens(std::span<const std::size_t> tokens, const Vocabulary& vocab,
                            Split split);

struct SplitMix {
  double random = 1.0 / 3.0;
  double popular = 1.0 / 3.0;
  double adversarial = 1.0 / 3.0;
};

struct BiasSpec {
  // Fraction of popular-split negatives relabelled "yes".
  double flip_fraction = 0.0;
};

struct DatasetSpec {
  std::size_t n_objects = 64;
  std::size_t scene_len = 6;
  std::size_t n_examples = 1000;
  SplitMix split_mix;
  BiasSpec bias;
  // Negatives for popular/adversarial queries are drawn from the k best
  // absent candidates.
  std::size_t negative_pool = 3;
  // Object frequencies follow rank^-zipf_exponent.
  double zipf_exponent = 1.0;
  // Each scene is drawn around one topic; members of that topic get their
  // weight multiplied by topic_boost.
  std::size_t n_topics = 8;
  double topic_boost = 8.0;
  // Object ranks and topics; shared by every dataset of one experiment.
  std::uint64_t world_seed = 0;
  std::uint64_t seed = 0;

  // Throws ConfigError on infeasible settings (e.g. scene_len >= n_objects).
  void validate() const;
};

// Per-object statistics of a generated corpus.
struct CorpusStats {
  std::vector<std::size_t> frequency;               // scenes containing object o
  std::vector<std::vector<std::size_t>> cooccurrence;  // scenes containing both

  static CorpusStats from_scenes(const std::vector<std::vector<std::size_t>>& scenes,
                                 std::size_t n_objects);
  // Sum of co-occurrence counts between `object` and each scene member.
  std::size_t scene_affinity(std::size_t object, std::span<const std::size_t> scene) const;
};

// Scenes first, then statistics over all scenes, then questions. Each split
// receives its share of n_examples with exactly half (rounded up) positives.
// Bias flips round(flip_fraction * popular negatives) labels.
std::vector<SceneQAExample> generate_dataset(const DatasetSpec& spec);

// Popular candidates: absent objects ordered by corpus frequency. Adversarial
// candidates: absent objects ordered by scene affinity. Ties break toward the
// smaller id. Returns up to k objects.
std::vector<std::size_t> popular_candidates(const CorpusStats& stats,
                                            std::span<const std::size_t> scene, std::size_t k);
std::vector<std::size_t> adversarial_candidates(const CorpusStats& stats,
                                                std::span<const std::size_t> scene,
                                                std::size_t k);

// JSON-lines: one example per line with fields id, split, scene, query,
// label, flipped, tokens. The manifest is a JSON object describing the
// vocabulary layout.
void write_jsonl(std::ostream& out, const std::vector<SceneQAExample>& data,
                 const Vocabulary& vocab);
std::vector<SceneQAExample> read_jsonl(std::istream& in, const Vocabulary& vocab);
std::string vocabulary_manifest(const Vocabulary& vocab);
Vocabulary parse_vocabulary_manifest(std::string_view json);

}  // namespace depthrnn::eval

#endif  // DEPTHRNN_EVAL_DATASET_HPP_
