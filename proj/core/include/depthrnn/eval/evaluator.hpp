// SPDX-License-Identifier: Apache-2.0
#ifndef DEPTHRNN_EVAL_EVALUATOR_HPP_
#define DEPTHRNN_EVAL_EVALUATOR_HPP_

#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "depthrnn/backbone/backbone.hpp"
#include "depthrnn/depth/hallurnn.hpp"
#include "depthrnn/eval/dataset.hpp"
#include "depthrnn/eval/metrics.hpp"

namespace depthrnn::eval {

struct EvalResult {
  std::map<Split, EvalReport> per_split;  // splits present in the dataset
  EvalReport overall;
  std::vector<std::size_t> decoded;  // greedy answer token per example
};

// Maps an example to the token decoded after its prompt.
using AnswerDecoder = std::function<std::size_t(const SceneQAExample&)>;

// Classifies each decoded token as yes/no; any other token is an error and
// is tallied in `invalid`. Examples are decoded in parallel; the result does
// not depend on the worker count.
EvalResult run_eval(const AnswerDecoder& decode, const std::vector<SceneQAExample>& dataset,
                    const Vocabulary& vocab);

// Greedy single-token decode through the HalluRNN path, or through
// vanilla_forward when `mode` is null.
std::size_t decode_answer(const backbone::BackboneWeights& w, const depth::CellMode* mode,
                          const SceneQAExample& example, const Vocabulary& vocab);

EvalResult run_eval(const backbone::BackboneWeights& w, const depth::CellMode* mode,
                    const std::vector<SceneQAExample>& dataset, const Vocabulary& vocab);

std::string report_json(const EvalResult& result, std::string_view mode_name);
// Columns: mode,split,tp,fp,tn,fn,invalid,accuracy,precision,recall,f1. One
// row per split present, then an "all" row.
void write_report_csv_header(std::ostream& out);
void write_report_csv_rows(std::ostream& out, const EvalResult& result,
                           std::string_view mode_name);

}  // namespace depthrnn::eval

#endif  // DEPTHRNN_EVAL_EVALUATOR_HPP_
