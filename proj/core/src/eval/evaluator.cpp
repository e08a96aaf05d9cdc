// SPDX-License-Identifier: Apache-2.0
#include "depthrnn/eval/evaluator.hpp"

#include <algorithm>

#include "depthrnn/errors.hpp"
#include "depthrnn/io/format.hpp"
#include "depthrnn/parallel.hpp"
#include "json.hpp"

namespace depthrnn::eval {
namespace {

nlohmann::ordered_json report_to_json(const EvalReport& r) {
  return {{"tp", r.tp},
          {"fp", r.fp},
          {"tn", r.tn},
          {"fn", r.fn},
          {"invalid", r.invalid},
          {"accuracy", r.accuracy},
          {"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1}};
}

void write_row(std::ostream& out, std::string_view mode, std::string_view split,
               const EvalReport& r) {
  out << mode << ',' << split << ',' << r.tp << ',' << r.fp << ',' << r.tn << ',' << r.fn << ','
      << r.invalid << ',' << io::format_double(r.accuracy) << ','
      << io::format_double(r.precision) << ',' << io::format_double(r.recall) << ','
      << io::format_double(r.f1) << '\n';
}

}  // namespace

EvalResult run_eval(const AnswerDecoder& decode, const std::vector<SceneQAExample>& dataset,
                    const Vocabulary& vocab) {
  EvalResult result;
  result.decoded.assign(dataset.size(), 0);
  parallel_for(dataset.size(), [&](std::size_t i) { result.decoded[i] = decode(dataset[i]); });

  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const SceneQAExample& ex = dataset[i];
    const std::size_t tok = result.decoded[i];
    const bool label_yes = ex.label == Answer::kYes;
    EvalReport& r = result.per_split[ex.split];
    if (tok == vocab.yes()) {
      ++(label_yes ? r.tp : r.fp);
    } else if (tok == vocab.no()) {
      ++(label_yes ? r.fn : r.tn);
    } else {
      ++r.invalid;
      ++(label_yes ? r.fn : r.fp);
    }
  }
  for (auto& [split, r] : result.per_split) {
    r.finalize();
    result.overall += r;
  }
  result.overall.finalize();
  return result;
}

std::size_t decode_answer(const backbone::BackboneWeights& w, const depth::CellMode* mode,
                          const SceneQAExample& example, const Vocabulary& vocab) {
  const std::vector<std::size_t> prompt = example.prompt_tokens(vocab);
  Tensor logits;
  if (mode == nullptr) {
    logits = backbone::vanilla_forward(prompt, w).logits;
  } else {
    if (mode->dim() != 0 && mode->dim() != w.config().d_model) {
      throw ConfigError("cell width does not match backbone d_model");
    }
    Tape tape;
    const backbone::BoundBackbone bw = backbone::bind(tape, w);
    const auto cell = depth::bind(tape, *mode);
    logits = depth::hallurnn_logits(prompt, bw, *cell).logits.value();
  }
  const std::size_t v = logits.cols();
  const double* last = logits.data() + (logits.rows() - 1) * v;
  return static_cast<std::size_t>(std::max_element(last, last + v) - last);
}

EvalResult run_eval(const backbone::BackboneWeights& w, const depth::CellMode* mode,
                    const std::vector<SceneQAExample>& dataset, const Vocabulary& vocab) {
  if (vocab.size() != w.config().vocab) {
    throw ConfigError("dataset vocabulary (" + std::to_string(vocab.size()) +
                      ") does not match backbone vocab (" + std::to_string(w.config().vocab) +
                      ")");
  }
  return run_eval(
      [&](const SceneQAExample& ex) { return decode_answer(w, mode, ex, vocab); }, dataset,
      vocab);
}

std::string report_json(const EvalResult& result, std::string_view mode_name) {
  nlohmann::ordered_json j;
  j["mode"] = mode_name;
  j["splits"] = nlohmann::ordered_json::object();
  for (const auto& [split, r] : result.per_split) j["splits"][split_name(split)] = report_to_json(r);
  j["overall"] = report_to_json(result.overall);
  return j.dump(2) + "\n";
}

void write_report_csv_header(std::ostream& out) {
  out << "mode,split,tp,fp,tn,fn,invalid,accuracy,precision,recall,f1\n";
}

void write_report_csv_rows(std::ostream& out, const EvalResult& result,
                           std::string_view mode_name) {
  for (const auto& [split, r] : result.per_split) write_row(out, mode_name, split_name(split), r);
  write_row(out, mode_name, "all", result.overall);
}

}  // namespace depthrnn::eval
