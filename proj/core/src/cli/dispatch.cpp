// SPDX-License-Identifier: Apache-2.0
#include "depthrnn/cli/dispatch.hpp"

#include <fstream>
#include <sstream>

#include "depthrnn/cli/pipeline.hpp"
#include "depthrnn/errors.hpp"
#include "depthrnn/io/format.hpp"
#include "depthrnn/training/gradcheck_suite.hpp"
#include "json.hpp"

namespace depthrnn::cli {
namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class HookFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Context {
  const RunConfig& config;
  fs::path out;
  std::ostream& log;

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : out / path;
  }
  fs::path cell_path(depth::CellVariant v) const {
    return resolve(config.paths.cell.empty()
                       ? "cell_" + std::string(depth::variant_name(v)) + ".ckpt"
                       : config.paths.cell);
  }
};

void write_text(const fs::path& path, const std::string& text) { io::write_file(path, text); }

template <typename Fn>
void write_stream(const fs::path& path, Fn&& fn) {
  std::ostringstream s;
  fn(s);
  io::write_file(path, s.str());
}

std::string require(const fs::path& path, const char* what) {
  if (!fs::exists(path)) {
    throw MissingArtifact(std::string(what) + " not found: " + path.string());
  }
  return io::read_file(path);
}

backbone::BackboneWeights load_backbone(const Context& ctx) {
  const fs::path path = ctx.resolve(ctx.config.paths.backbone);
  const std::string bytes = require(path, "backbone checkpoint");
  // The sidecar written at pretrain time pins the checkpoint digest.
  const fs::path sidecar = fs::path(path).replace_extension(".json");
  if (fs::exists(sidecar)) {
    const auto meta = nlohmann::json::parse(io::read_file(sidecar), nullptr, false);
    if (meta.is_discarded() || !meta.contains("sha256") || !meta["sha256"].is_string()) {
      throw ConfigError(sidecar.string() + ": sidecar lacks a sha256 string");
    }
    if (meta["sha256"].get<std::string>() != io::sha256_hex(bytes)) {
      throw IntegrityError(path.string() + ": sha256 disagrees with " + sidecar.string());
    }
  }
  backbone::BackboneWeights w = backbone::BackboneWeights::from_checkpoint(io::deserialize(bytes));
  if (!w.frozen()) throw ConfigError(path.string() + ": backbone checkpoint is not frozen");
  if (!(w.config() == ctx.config.model())) {
    throw ConfigError("backbone: checkpoint config disagrees with the run config");
  }
  return w;
}

depth::CellMode load_cell(const Context& ctx, depth::CellVariant v) {
  if (v == depth::CellVariant::kForcedVanilla) return depth::CellMode::forced_vanilla();
  const fs::path path = ctx.cell_path(v);
  depth::CellMode mode = depth::CellMode::from_checkpoint(io::deserialize(require(path, "cell checkpoint")));
  if (mode.variant() != v) {
    throw ConfigError("mode.variant: checkpoint " + path.string() + " holds a " +
                      std::string(depth::variant_name(mode.variant())) + " cell");
  }
  return mode;
}

std::vector<eval::SceneQAExample> read_split(const Context& ctx, const char* name,
                                             const eval::Vocabulary& vocab) {
  const fs::path path = ctx.resolve(ctx.config.paths.data) / (std::string(name) + ".jsonl");
  std::istringstream in(require(path, "dataset"));
  return eval::read_jsonl(in, vocab);
}

Datasets load_datasets(const Context& ctx) {
  const fs::path manifest = ctx.resolve(ctx.config.paths.data) / "vocab.json";
  Datasets d;
  d.vocab = eval::parse_vocabulary_manifest(require(manifest, "vocabulary manifest"));
  if (d.vocab.size() != ctx.config.vocabulary().size()) {
    throw ConfigError("data.n_objects: dataset manifest has " + std::to_string(d.vocab.n_objects) +
                      " objects");
  }
  d.finetune = read_split(ctx, "finetune", d.vocab);
  d.eval = read_split(ctx, "eval", d.vocab);
  return d;
}

void write_datasets(const Context& ctx, const Datasets& d) {
  const fs::path dir = ctx.resolve(ctx.config.paths.data);
  write_text(dir / "vocab.json", eval::vocabulary_manifest(d.vocab));
  const std::pair<const char*, const std::vector<eval::SceneQAExample>*> sets[] = {
      {"pretrain", &d.pretrain}, {"finetune", &d.finetune}, {"eval", &d.eval}};
  for (const auto& [name, set] : sets) {
    write_stream(dir / (std::string(name) + ".jsonl"),
                 [&](std::ostream& s) { eval::write_jsonl(s, *set, d.vocab); });
  }
}

std::string backbone_sidecar(const backbone::BackboneWeights& w) {
  const backbone::BackboneConfig& c = w.config();
  ojson j;
  j["n_layers"] = c.n_layers;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["vocab"] = c.vocab;
  j["max_seq"] = c.max_seq;
  j["ff_mult"] = c.ff_mult;
  j["frozen"] = w.frozen();
  j["parameter_count"] = w.parameter_count();
  j["sha256"] = w.sha256();
  return j.dump(2) + "\n";
}

void write_eval(const Context& ctx, const eval::EvalResult& r, const std::string& name,
                const std::string& stem) {
  write_text(ctx.out / (stem + ".json"), eval::report_json(r, name));
  write_stream(ctx.out / (stem + ".csv"), [&](std::ostream& s) {
    eval::write_report_csv_header(s);
    eval::write_report_csv_rows(s, r, name);
  });
}

std::string accuracy_line(const eval::EvalResult& r) {
  std::ostringstream s;
  for (const auto& [split, rep] : r.per_split) {
    s << eval::split_name(split) << '=' << io::format_double(rep.accuracy) << ' ';
  }
  s << "all=" << io::format_double(r.overall.accuracy);
  return s.str();
}

int cmd_pretrain(const Context& ctx) {
  const Datasets data = make_datasets(ctx.config);
  write_datasets(ctx, data);
  ctx.log << "pretrain: " << data.pretrain.size() << " examples, " << ctx.config.pretrain.epochs
          << " epochs\n";
  training::TrainRecord rec;
  const backbone::BackboneWeights w = run_pretrain(ctx.config, data, &rec);
  const fs::path path = ctx.resolve(ctx.config.paths.backbone);
  io::write_file(path, w.serialize());
  write_text(fs::path(path).replace_extension(".json"), backbone_sidecar(w));
  write_stream(ctx.out / "pretrain_record.csv", [&](std::ostream& s) { rec.write_csv(s); });
  write_text(ctx.out / "run_config.json", to_json(ctx.config));
  ctx.log << "pretrain: wrote " << path.string() << " (sha256 " << w.sha256() << ")\n";
  return kOk;
}

int cmd_finetune(const Context& ctx) {
  if (ctx.config.mode.is_vanilla()) {
    throw ConfigError("mode.variant: finetune needs a cell variant, got \"vanilla\"");
  }
  const depth::CellVariant v = ctx.config.mode.cell_variant();
  if (!depth::is_trainable(v)) {
    throw ConfigError("mode.variant: " + std::string(depth::variant_name(v)) +
                      " has no trainable parameters");
  }
  const backbone::BackboneWeights w = load_backbone(ctx);
  const Datasets data = load_datasets(ctx);
  depth::CellMode mode = make_cell(ctx.config, v, w, data);
  const training::TrainRecord rec = run_finetune(ctx.config, w, mode, data);
  const std::string name(depth::variant_name(v));
  io::write_file(ctx.cell_path(v), mode.serialize());
  write_stream(ctx.out / ("finetune_" + name + ".csv"), [&](std::ostream& s) { rec.write_csv(s); });
  ctx.log << "finetune: " << name << " trained " << mode.parameter_count()
          << " parameters; backbone sha256 unchanged (" << rec.backbone_sha_after << ")\n";
  return kOk;
}

int cmd_eval(const Context& ctx) {
  const backbone::BackboneWeights w = load_backbone(ctx);
  const Datasets data = load_datasets(ctx);
  const std::string name = ctx.config.mode.variant;
  eval::EvalResult r;
  if (ctx.config.mode.is_vanilla()) {
    r = eval::run_eval(w, nullptr, data.eval, data.vocab);
  } else {
    const depth::CellMode mode = load_cell(ctx, ctx.config.mode.cell_variant());
    r = eval::run_eval(w, &mode, data.eval, data.vocab);
  }
  write_eval(ctx, r, name, "eval_" + name);
  ctx.log << "eval: " << name << ' ' << accuracy_line(r) << '\n';
  return kOk;
}

int cmd_trace(const Context& ctx) {
  if (ctx.config.mode.is_vanilla()) {
    throw ConfigError("mode.variant: trace compares vanilla against a cell variant");
  }
  const backbone::BackboneWeights w = load_backbone(ctx);
  const Datasets data = load_datasets(ctx);
  const depth::CellMode mode = load_cell(ctx, ctx.config.mode.cell_variant());

  std::vector<std::size_t> prompts = ctx.config.trace.prompts;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (prompts[i] >= data.eval.size()) {
      throw ConfigError("trace.prompts[" + std::to_string(i) + "]: index " +
                        std::to_string(prompts[i]) + " outside the eval set");
    }
  }
  if (prompts.empty()) {
    prompts = find_disagreements(w, mode, data.eval, data.vocab, ctx.config.trace.max_prompts);
    if (prompts.empty()) {
      throw HookFailed("trace: no eval prompt where vanilla and " + ctx.config.mode.variant +
                       " answers differ");
    }
  }

  std::ostringstream van_csv, rnn_csv;
  depth::write_trace_header(van_csv);
  depth::write_trace_header(rnn_csv);
  ojson summary;
  summary["mode"] = ctx.config.mode.variant;
  summary["prompts"] = ojson::array();
  for (std::size_t idx : prompts) {
    const eval::SceneQAExample& ex = data.eval[idx];
    const std::vector<std::size_t> tokens = ex.prompt_tokens(data.vocab);
    // Lens probabilities track the correct answer token at every layer.
    const std::size_t answer = ex.label == eval::Answer::kYes ? data.vocab.yes() : data.vocab.no();
    const depth::TracedForward van = depth::vanilla_traced(tokens, w, answer);
    const depth::TracedForward rnn = depth::hallurnn_forward(tokens, w, mode, answer);
    for (const depth::TracedForward* t : {&van, &rnn}) {
      for (const depth::TraceEntry& e : t->trace.entries) {
        if (std::abs(e.lens_mass - 1.0) > 1e-9) {
          throw HookFailed("trace: lens distribution mass " + io::format_double(e.lens_mass) +
                           " at prompt " + std::to_string(idx));
        }
      }
    }
    const std::string id = "eval-" + std::to_string(idx);
    depth::write_trace_rows(van_csv, id, van.trace);
    depth::write_trace_rows(rnn_csv, id, rnn.trace);
    const std::size_t last = tokens.size() - 1;
    summary["prompts"].push_back(
        {{"prompt_id", id},
         {"tokens", tokens},
         {"label", eval::answer_name(ex.label)},
         {"split", eval::split_name(ex.split)},
         {"vanilla_answer", eval::decode_answer(w, nullptr, ex, data.vocab)},
         {"hallurnn_answer", eval::decode_answer(w, &mode, ex, data.vocab)},
         {"vanilla_final_prob", van.trace.at(last, w.config().n_layers - 1).lens_prob},
         {"hallurnn_final_prob", rnn.trace.at(last, w.config().n_layers - 1).lens_prob}});
  }
  write_text(ctx.out / "trace_vanilla.csv", van_csv.str());
  write_text(ctx.out / "trace_hallurnn.csv", rnn_csv.str());
  write_text(ctx.out / "trace_prompts.json", summary.dump(2) + "\n");
  ctx.log << "trace: " << prompts.size() << " prompt(s) traced\n";
  return kOk;
}

// random,popular,adversarial,overall accuracy and overall F1; absent splits stay empty.
std::string split_accuracies(const eval::EvalResult& r) {
  auto acc = [&](eval::Split s) {
    auto it = r.per_split.find(s);
    return it == r.per_split.end() ? std::string() : io::format_double(it->second.accuracy);
  };
  return acc(eval::Split::kRandom) + ',' + acc(eval::Split::kPopular) + ',' +
         acc(eval::Split::kAdversarial) + ',' + io::format_double(r.overall.accuracy) + ',' +
         io::format_double(r.overall.f1);
}

int cmd_ablate(const Context& ctx) {
  const backbone::BackboneWeights w = load_backbone(ctx);
  const Datasets data = load_datasets(ctx);
  std::ostringstream csv;
  csv << "variant,trainable_parameters,random_accuracy,popular_accuracy,adversarial_accuracy,"
         "overall_accuracy,overall_f1\n";
  const depth::CellVariant variants[] = {depth::CellVariant::kDgDpu, depth::CellVariant::kGru,
                                         depth::CellVariant::kConstraintOnly,
                                         depth::CellVariant::kCorrectionOnly};
  for (depth::CellVariant v : variants) {
    const std::string name(depth::variant_name(v));
    depth::CellMode mode = make_cell(ctx.config, v, w, data);
    run_finetune(ctx.config, w, mode, data);
    const eval::EvalResult r = eval::run_eval(w, &mode, data.eval, data.vocab);
    write_eval(ctx, r, name, "ablate_" + name);
    csv << name << ',' << mode.parameter_count() << ',' << split_accuracies(r) << '\n';
    ctx.log << "ablate: " << name << ' ' << accuracy_line(r) << '\n';
  }
  write_text(ctx.out / "ablate.csv", csv.str());
  return kOk;
}

int cmd_gradcheck(const Context& ctx) {
  training::GradcheckOptions opt;
  opt.instances = ctx.config.gradcheck.instances;
  opt.dims = ctx.config.gradcheck.dims;
  const training::GradcheckReport r = training::run_gradcheck_suite(ctx.config.seed, opt);
  write_text(ctx.out / "gradcheck.json", r.to_json());
  ctx.log << "gradcheck: max relative error " << io::format_double(r.max_rel_error())
          << (r.passed() ? " (pass)" : " (FAIL)") << '\n';
  return r.passed() ? kOk : kFailure;
}

}  // namespace

int dispatch(std::string_view command, const RunConfig& config, const fs::path& out,
             std::ostream& log) {
  const Context ctx{config, out, log};
  try {
    if (command == "pretrain") return cmd_pretrain(ctx);
    if (command == "finetune") return cmd_finetune(ctx);
    if (command == "eval") return cmd_eval(ctx);
    if (command == "trace") return cmd_trace(ctx);
    if (command == "ablate") return cmd_ablate(ctx);
    if (command == "gradcheck") return cmd_gradcheck(ctx);
    log << "error: unknown command '" << command << "'\n";
    return kConfigInvalid;
  } catch (const MissingArtifact& e) {
    log << "error: " << e.what() << '\n';
    return kMissingArtifact;
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << '\n';
    return kConfigInvalid;
  } catch (const NumericError& e) {
    log << "error: " << e.what() << '\n';
    return kDiverged;
  } catch (const IntegrityError& e) {
    log << "error: " << e.what() << '\n';
    return kIntegrity;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kFailure;
  }
}

int run(std::string_view command, const fs::path& config_path,
        const std::optional<std::uint64_t>& seed_override, const fs::path& out, std::ostream& log) {
  RunConfig config;
  try {
    if (!fs::exists(config_path)) {
      log << "error: config file not found: " << config_path.string() << '\n';
      return kConfigInvalid;
    }
    config = load_run_config(config_path.string());
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << '\n';
    return kConfigInvalid;
  }
  if (seed_override) config.seed = *seed_override;
  return dispatch(command, config, out, log);
}

}  // namespace depthrnn::cli
