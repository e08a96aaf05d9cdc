// SPDX-License-Identifier: Apache-2.0
#include "depthrnn/cli/run_config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "depthrnn/errors.hpp"
#include "json.hpp"

namespace depthrnn::cli {
namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& path, const std::string& reason) {
  throw ConfigError(path + ": " + reason);
}

// Strict view of one JSON object: every key must be consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  const json* find(std::string_view key) {
    const std::string k(key);
    seen_.insert(k);
    auto it = j_.find(k);
    return it == j_.end() ? nullptr : &*it;
  }

  void number(std::string_view key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(field(key), "expected a number");
      out = v->get<double>();
      if (!std::isfinite(out)) fail(field(key), "must be finite");
    }
  }

  void count(std::string_view key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0)) {
        fail(field(key), "expected a non-negative integer");
      }
      out = v->get<std::size_t>();
    }
  }

  void u64(std::string_view key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0)) {
        fail(field(key), "expected a non-negative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }

  void string(std::string_view key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(field(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  void counts(std::string_view key, std::vector<std::size_t>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(field(key), "expected an array");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        const json& e = (*v)[i];
        if (!e.is_number_unsigned() && !(e.is_number_integer() && e.get<long long>() >= 0)) {
          fail(field(key) + "[" + std::to_string(i) + "]", "expected a non-negative integer");
        }
        out.push_back(e.get<std::size_t>());
      }
    }
  }

  // Calls fn(Section&) when the key is present.
  template <typename Fn>
  void section(std::string_view key, Fn&& fn) {
    if (const json* v = find(key)) {
      Section s(*v, field(key));
      fn(s);
      s.finish();
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(field(it.key()), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_mix(Section& s, eval::SplitMix& mix) {
  s.number("random", mix.random);
  s.number("popular", mix.popular);
  s.number("adversarial", mix.adversarial);
}

void read_train(Section& s, training::TrainConfig& t) {
  s.number("learning_rate", t.learning_rate);
  s.count("batch_size", t.batch_size);
  s.count("epochs", t.epochs);
  std::string opt = t.optimizer == training::OptimizerKind::kAdam ? "adam" : "sgd";
  s.string("optimizer", opt);
  if (opt == "adam") {
    t.optimizer = training::OptimizerKind::kAdam;
  } else if (opt == "sgd") {
    t.optimizer = training::OptimizerKind::kSgd;
  } else {
    fail(s.field("optimizer"), "expected \"adam\" or \"sgd\", got \"" + opt + "\"");
  }
  std::string mask =
      t.loss_mask == training::LossMask::kAllTokens ? "all_tokens" : "answer_tokens_only";
  s.string("loss_mask", mask);
  if (mask == "all_tokens") {
    t.loss_mask = training::LossMask::kAllTokens;
  } else if (mask == "answer_tokens_only") {
    t.loss_mask = training::LossMask::kAnswerTokensOnly;
  } else {
    fail(s.field("loss_mask"), "expected \"answer_tokens_only\" or \"all_tokens\"");
  }
  s.number("adam_beta1", t.adam_beta1);
  s.number("adam_beta2", t.adam_beta2);
  s.number("adam_eps", t.adam_eps);
  s.number("grad_clip", t.grad_clip);
}

void check_train(const training::TrainConfig& t, const std::string& section) {
  try {
    t.validate();
  } catch (const ConfigError& e) {
    fail(section, e.what());
  }
}

void check_mix(const eval::SplitMix& m, const std::string& path) {
  for (double p : {m.random, m.popular, m.adversarial}) {
    if (p < 0.0) fail(path, "split shares must be non-negative");
  }
  if (m.random + m.popular + m.adversarial <= 0.0) fail(path, "split shares sum to zero");
}

ojson train_json(const training::TrainConfig& t) {
  ojson j;
  j["learning_rate"] = t.learning_rate;
  j["batch_size"] = t.batch_size;
  j["epochs"] = t.epochs;
  j["optimizer"] = t.optimizer == training::OptimizerKind::kAdam ? "adam" : "sgd";
  j["loss_mask"] =
      t.loss_mask == training::LossMask::kAllTokens ? "all_tokens" : "answer_tokens_only";
  j["adam_beta1"] = t.adam_beta1;
  j["adam_beta2"] = t.adam_beta2;
  j["adam_eps"] = t.adam_eps;
  j["grad_clip"] = t.grad_clip;
  return j;
}

ojson mix_json(const eval::SplitMix& m) {
  return ojson{{"random", m.random}, {"popular", m.popular}, {"adversarial", m.adversarial}};
}

}  // namespace

void RunConfig::validate() const {
  const backbone::BackboneConfig m = model();
  try {
    m.validate();
  } catch (const ConfigError& e) {
    fail("backbone", e.what());
  }
  if (backbone.vocab != 0 && backbone.vocab != vocabulary().size()) {
    fail("backbone.vocab", "must equal data.n_objects + 5 (" +
                               std::to_string(vocabulary().size()) + "), got " +
                               std::to_string(backbone.vocab));
  }
  // BOS, scene, SEP, query, Q; the answer is predicted at the last position.
  if (data.scene_len + 4 > m.max_seq) {
    fail("backbone.max_seq", "must be at least data.scene_len + 4");
  }
  check_train(pretrain, "pretrain");
  check_train(finetune, "finetune");
  check_mix(data.pretrain_split_mix, "data.pretrain_split_mix");
  check_mix(data.split_mix, "data.split_mix");
  if (data.flip_fraction < 0.0 || data.flip_fraction > 1.0) {
    fail("data.flip_fraction", "must be in [0, 1]");
  }
  for (const char* role : {"pretrain", "finetune", "eval"}) {
    try {
      dataset_spec(role).validate();
    } catch (const ConfigError& e) {
      fail("data", e.what());
    }
  }
  if (!mode.is_vanilla()) {
    try {
      (void)mode.cell_variant();
    } catch (const ConfigError&) {
      fail("mode.variant", "unknown variant \"" + mode.variant + "\"");
    }
  }
  if (!(mode.gate_target > 0.5 && mode.gate_target < 1.0)) {
    fail("mode.gate_target", "must be in (0.5, 1)");
  }
  if (gradcheck.dims.empty()) fail("gradcheck.dims", "must not be empty");
  for (std::size_t i = 0; i < gradcheck.dims.size(); ++i) {
    if (gradcheck.dims[i] == 0) fail("gradcheck.dims[" + std::to_string(i) + "]", "must be positive");
  }
}

backbone::BackboneConfig RunConfig::model() const {
  backbone::BackboneConfig m = backbone;
  m.vocab = vocabulary().size();
  return m;
}

eval::DatasetSpec RunConfig::dataset_spec(std::string_view role) const {
  eval::DatasetSpec s;
  s.n_objects = data.n_objects;
  s.scene_len = data.scene_len;
  s.negative_pool = data.negative_pool;
  s.zipf_exponent = data.zipf_exponent;
  s.n_topics = data.n_topics;
  s.topic_boost = data.topic_boost;
  s.world_seed = derived_seed("world");
  s.seed = derived_seed("data/" + std::string(role));
  if (role == "pretrain") {
    s.n_examples = data.pretrain_examples;
    s.split_mix = data.pretrain_split_mix;
    s.bias.flip_fraction = data.flip_fraction;
  } else if (role == "finetune") {
    s.n_examples = data.finetune_examples;
    s.split_mix = data.split_mix;
  } else if (role == "eval") {
    s.n_examples = data.eval_examples;
    s.split_mix = data.split_mix;
  } else {
    throw ContractError("dataset_spec: unknown role '" + std::string(role) + "'");
  }
  return s;
}

std::uint64_t RunConfig::derived_seed(std::string_view label) const {
  return mix_seed(seed, label);
}

RunConfig default_run_config() {
  RunConfig c;
  c.backbone.vocab = 0;
  return c;
}

RunConfig parse_run_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("<root>: invalid JSON: ") + e.what());
  }
  RunConfig c = default_run_config();
  Section s(root, "");
  s.u64("seed", c.seed);
  s.section("backbone", [&](Section& b) {
    b.count("n_layers", c.backbone.n_layers);
    b.count("d_model", c.backbone.d_model);
    b.count("n_heads", c.backbone.n_heads);
    b.count("vocab", c.backbone.vocab);
    b.count("max_seq", c.backbone.max_seq);
    b.count("ff_mult", c.backbone.ff_mult);
  });
  s.section("data", [&](Section& d) {
    d.count("n_objects", c.data.n_objects);
    d.count("scene_len", c.data.scene_len);
    d.count("negative_pool", c.data.negative_pool);
    d.number("zipf_exponent", c.data.zipf_exponent);
    d.count("n_topics", c.data.n_topics);
    d.number("topic_boost", c.data.topic_boost);
    d.count("pretrain_examples", c.data.pretrain_examples);
    d.count("finetune_examples", c.data.finetune_examples);
    d.count("eval_examples", c.data.eval_examples);
    d.number("flip_fraction", c.data.flip_fraction);
    d.section("pretrain_split_mix", [&](Section& m) { read_mix(m, c.data.pretrain_split_mix); });
    d.section("split_mix", [&](Section& m) { read_mix(m, c.data.split_mix); });
  });
  s.section("pretrain", [&](Section& t) { read_train(t, c.pretrain); });
  s.section("finetune", [&](Section& t) { read_train(t, c.finetune); });
  s.section("mode", [&](Section& m) {
    m.string("variant", c.mode.variant);
    std::string init = c.mode.init == cells::CellInit::kNearVanilla ? "near_vanilla" : "xavier";
    m.string("init", init);
    if (init == "xavier") {
      c.mode.init = cells::CellInit::kXavier;
    } else if (init == "near_vanilla") {
      c.mode.init = cells::CellInit::kNearVanilla;
    } else {
      fail(m.field("init"), "expected \"xavier\" or \"near_vanilla\", got \"" + init + "\"");
    }
    m.number("gate_target", c.mode.gate_target);
    m.count("calibration_examples", c.mode.calibration_examples);
  });
  s.section("paths", [&](Section& p) {
    p.string("backbone", c.paths.backbone);
    p.string("cell", c.paths.cell);
    p.string("data", c.paths.data);
  });
  s.section("trace", [&](Section& t) {
    t.counts("prompts", c.trace.prompts);
    t.count("max_prompts", c.trace.max_prompts);
  });
  s.section("gradcheck", [&](Section& g) {
    g.count("instances", c.gradcheck.instances);
    g.counts("dims", c.gradcheck.dims);
  });
  s.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string to_json(const RunConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  j["backbone"] = {{"n_layers", c.backbone.n_layers}, {"d_model", c.backbone.d_model},
                   {"n_heads", c.backbone.n_heads},   {"vocab", c.model().vocab},
                   {"max_seq", c.backbone.max_seq},   {"ff_mult", c.backbone.ff_mult}};
  ojson d;
  d["n_objects"] = c.data.n_objects;
  d["scene_len"] = c.data.scene_len;
  d["negative_pool"] = c.data.negative_pool;
  d["zipf_exponent"] = c.data.zipf_exponent;
  d["n_topics"] = c.data.n_topics;
  d["topic_boost"] = c.data.topic_boost;
  d["pretrain_examples"] = c.data.pretrain_examples;
  d["finetune_examples"] = c.data.finetune_examples;
  d["eval_examples"] = c.data.eval_examples;
  d["flip_fraction"] = c.data.flip_fraction;
  d["pretrain_split_mix"] = mix_json(c.data.pretrain_split_mix);
  d["split_mix"] = mix_json(c.data.split_mix);
  j["data"] = d;
  j["pretrain"] = train_json(c.pretrain);
  j["finetune"] = train_json(c.finetune);
  j["mode"] = {{"variant", c.mode.variant},
               {"init", c.mode.init == cells::CellInit::kNearVanilla ? "near_vanilla" : "xavier"},
               {"gate_target", c.mode.gate_target},
               {"calibration_examples", c.mode.calibration_examples}};
  j["paths"] = {{"backbone", c.paths.backbone}, {"cell", c.paths.cell}, {"data", c.paths.data}};
  j["trace"] = {{"prompts", c.trace.prompts}, {"max_prompts", c.trace.max_prompts}};
  j["gradcheck"] = {{"instances", c.gradcheck.instances}, {"dims", c.gradcheck.dims}};
  return j.dump(2) + "\n";
}

}  // namespace depthrnn::cli
