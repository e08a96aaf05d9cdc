// SPDX-License-Identifier: Apache-2.0
#include "depthrnn/eval/metrics.hpp"

#include <set>

#include "depthrnn/errors.hpp"

namespace depthrnn::eval {
namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

const std::string& canonical(const std::string& word, const SynonymMap& synonyms) {
  auto it = synonyms.find(word);
  return it == synonyms.end() ? word : it->second;
}

}  // namespace

void EvalReport::finalize() {
  accuracy = ratio(tp + tn, total());
  precision = ratio(tp, tp + fp);
  recall = ratio(tp, tp + fn);
  f1 = precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

EvalReport& EvalReport::operator+=(const EvalReport& other) {
  tp += other.tp;
  fp += other.fp;
  tn += other.tn;
  fn += other.fn;
  invalid += other.invalid;
  finalize();
  return *this;
}

EvalReport from_confusion(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
  EvalReport r;
  r.tp = tp;
  r.fp = fp;
  r.tn = tn;
  r.fn = fn;
  r.finalize();
  return r;
}

EvalReport accuracy_f1(std::span<const Answer> predictions, std::span<const Answer> labels) {
  if (predictions.size() != labels.size()) {
    throw DimensionError("accuracy_f1: " + std::to_string(predictions.size()) +
                         " predictions for " + std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw ContractError("accuracy_f1: empty input");
  EvalReport r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pred_yes = predictions[i] == Answer::kYes;
    const bool label_yes = labels[i] == Answer::kYes;
    if (pred_yes && label_yes) ++r.tp;
    else if (pred_yes) ++r.fp;
    else if (label_yes) ++r.fn;
    else ++r.tn;
  }
  r.finalize();
  return r;
}

ChairReport chair_scores(const std::vector<std::vector<std::string>>& captions,
                         const std::vector<std::vector<std::string>>& ground_truth,
                         const SynonymMap& synonyms) {
  if (captions.size() != ground_truth.size()) {
    throw DimensionError("chair_scores: " + std::to_string(captions.size()) + " captions for " +
                         std::to_string(ground_truth.size()) + " ground-truth sets");
  }
  ChairReport r;
  r.captions = captions.size();
  for (std::size_t c = 0; c < captions.size(); ++c) {
    std::set<std::string> truth;
    for (const auto& obj : ground_truth[c]) truth.insert(canonical(obj, synonyms));
    bool any = false;
    for (const auto& mention : captions[c]) {
      ++r.mentions;
      if (!truth.contains(canonical(mention, synonyms))) {
        ++r.hallucinated_mentions;
        any = true;
      }
    }
    if (any) ++r.hallucinated_captions;
  }
  r.chair_s = ratio(r.hallucinated_captions, r.captions);
  r.chair_i = ratio(r.hallucinated_mentions, r.mentions);
  return r;
}

}  // namespace depthrnn::eval
