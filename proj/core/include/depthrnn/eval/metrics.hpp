// SPDX-License-Identifier: Apache-2.0
#ifndef DEPTHRNN_EVAL_METRICS_HPP_
#define DEPTHRNN_EVAL_METRICS_HPP_

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "depthrnn/eval/dataset.hpp"

namespace depthrnn::eval {

// Binary confusion metrics with "yes" as the positive class.
struct EvalReport {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  // Decoded tokens outside {yes, no}. Already counted as errors in fp/fn.
  std::size_t invalid = 0;
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;

  std::size_t total() const { return tp + fp + tn + fn; }
  // Recomputes the rates from the counts; precision, recall and F1 are 0
  // when their denominators vanish.
  void finalize();
  // Commutative merge of counts.
  EvalReport& operator+=(const EvalReport& other);
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

EvalReport from_confusion(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn);

// Throws DimensionError on a length mismatch, ContractError on empty input.
EvalReport accuracy_f1(std::span<const Answer> predictions, std::span<const Answer> labels);

struct ChairReport {
  double chair_s = 0.0;  // captions with >= 1 hallucinated mention / captions
  double chair_i = 0.0;  // hallucinated mentions / mentions
  std::size_t captions = 0, hallucinated_captions = 0;
  std::size_t mentions = 0, hallucinated_mentions = 0;
};

// Mention -> canonical object name. Names missing from the map are their own
// canonical form.
using SynonymMap = std::map<std::string, std::string>;

// A mention is hallucinated iff its canonical form is not among the
// canonicalized ground-truth objects of its caption. Both rates are 0 when
// there is nothing to count. Throws DimensionError when captions and
// ground_truth differ in length.
ChairReport chair_scores(const std::vector<std::vector<std::string>>& captions,
                         const std::vector<std::vector<std::string>>& ground_truth,
                         const SynonymMap& synonyms = {});

}  // namespace depthrnn::eval

#endif  // DEPTHRNN_EVAL_METRICS_HPP_
