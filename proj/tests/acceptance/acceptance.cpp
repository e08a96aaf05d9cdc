// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.
//
//   depthrnn_acceptance [--config desk.json] [--only 1,2,...]
//
// Criteria 5, 6 and 8 share one desk-scale run over seeds 1..3.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "depthrnn/cli/dispatch.hpp"
#include "depthrnn/cli/pipeline.hpp"
#include "depthrnn/errors.hpp"
#include "depthrnn/eval/metrics.hpp"
#include "depthrnn/io/checkpoint.hpp"
#include "depthrnn/io/format.hpp"
#include "depthrnn/training/gradcheck_suite.hpp"
#include "json.hpp"

#ifndef DEPTHRNN_DESK_CONFIG
#define DEPTHRNN_DESK_CONFIG "configs/desk.json"
#endif

namespace {

using namespace depthrnn;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double x) {
  std::ostringstream s;
  s.precision(4);
  s << x;
  return s.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// 1. forced_vanilla equals vanilla on 100 prompts, <= 1e-12, < 10 s.
Outcome vanilla_reduction(const cli::RunConfig& desk) {
  const auto t0 = Clock::now();
  Rng rng(mix_seed(desk.seed, "acceptance/reduction"));
  const backbone::BackboneConfig cfg = desk.model();
  const backbone::BackboneWeights w = backbone::BackboneWeights::init(cfg, rng);
  const depth::CellMode fv = depth::CellMode::forced_vanilla();
  double worst = 0.0;
  std::size_t identical = 0;
  for (int p = 0; p < 100; ++p) {
    std::vector<std::size_t> tokens(1 + rng.below(cfg.max_seq));
    for (std::size_t& t : tokens) t = rng.below(cfg.vocab);
    const Tensor a = depth::hallurnn_forward(tokens, w, fv).logits;
    const Tensor b = backbone::vanilla_forward(tokens, w).logits;
    const double d = max_abs_diff(a, b);
    worst = std::max(worst, d);
    identical += a == b;
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-12 && secs < 10.0,
          "max |dlogit| " + fmt(worst) + " (" + std::to_string(identical) +
              "/100 bit-identical), " + fmt(secs) + " s"};
}

// 2. Central differences vs analytic gradients, max rel error <= 1e-5, < 60 s.
Outcome gradient_fidelity(const cli::RunConfig& desk) {
  const auto t0 = Clock::now();
  training::GradcheckOptions opt;
  opt.instances = 20;
  opt.dims = {2, 4, 8};
  const training::GradcheckReport r = training::run_gradcheck_suite(desk.seed, opt);
  const double secs = seconds_since(t0);
  std::string detail;
  for (const training::GradcheckTarget& t : r.targets) {
    detail += t.name + "=" + fmt(t.max_rel_error) + " ";
  }
  return {r.max_rel_error() <= 1e-5 && secs < 60.0,
          "max " + fmt(r.max_rel_error()) + " [" + detail + "], " + fmt(secs) + " s"};
}

// 3. Gate ranges, exact m = v fixed point, coordinate-wise convexity on 1e4
//    random inputs and parameter draws.
Outcome gate_invariants() {
  Rng rng(mix_seed(0, "acceptance/gates"));
  std::size_t range = 0, fixed = 0, convex = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t d = 1 + rng.below(16);
    cells::DgDpuParams p = cells::DgDpuParams::init(d, rng);
    const double scale = std::exp(rng.uniform(-3.0, 3.0));
    for (Parameter* q : p.parameters())
      for (double& x : q->value.values()) x *= scale;
    Tape t;
    const cells::BoundDgDpu b = cells::bind(t, std::as_const(p));
    const Tensor m = normal_tensor({d}, std::exp(rng.uniform(-3.0, 3.0)), rng);
    const Tensor v = normal_tensor({d}, std::exp(rng.uniform(-3.0, 3.0)), rng);
    const cells::StepResult s = cells::dgdpu_step(t.constant(m), t.constant(v), b);
    bool ok = true;
    for (double g : s.g_a.value().values()) ok = ok && g > 0.0 && g < 1.0;
    const double ge = s.g_e.value().item();
    ok = ok && ge > 0.0 && ge < 1.0;
    range += !ok;
    const Tensor& c = s.c_tilde.value();
    const Tensor& vn = s.v_next.value();
    bool cv = true;
    for (std::size_t i = 0; i < d; ++i) {
      cv = cv && c[i] >= std::min(m[i], v[i]) && c[i] <= std::max(m[i], v[i]);
      cv = cv && vn[i] >= std::min(m[i], c[i]) && vn[i] <= std::max(m[i], c[i]);
    }
    convex += !cv;
    fixed += !(cells::dgdpu_step(t.constant(m), t.constant(m), b).v_next.value() == m);
  }
  return {range == 0 && fixed == 0 && convex == 0,
          "10000 draws: range violations " + std::to_string(range) + ", fixed-point " +
              std::to_string(fixed) + ", convexity " + std::to_string(convex)};
}

// 4. Backbone checkpoint SHA-256 unchanged by finetune_cell on 5 seeds;
//    DG-DPU trainable count = 3d^2 + d.
Outcome frozen_integrity(const cli::RunConfig& desk) {
  const fs::path dir = fs::temp_directory_path() / "depthrnn_acceptance_integrity";
  fs::create_directories(dir);
  const std::size_t d = desk.backbone.d_model;
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    cli::RunConfig c = desk;
    c.seed = seed;
    c.data.finetune_examples = 60;
    c.finetune.epochs = 1;
    Rng rng(c.derived_seed("acceptance/integrity"));
    backbone::BackboneWeights w = backbone::BackboneWeights::init(c.model(), rng);
    w.freeze();
    const fs::path ckpt = dir / ("backbone_" + std::to_string(seed) + ".ckpt");
    io::write_file(ckpt, w.serialize());
    const std::string before = io::sha256_hex(io::read_file(ckpt));

    const eval::Vocabulary vocab = c.vocabulary();
    const auto data = eval::generate_dataset(c.dataset_spec("finetune"));
    depth::CellMode mode = depth::CellMode::create(depth::CellVariant::kDgDpu, d, rng);
    std::size_t trainable = 0;
    for (const Parameter* p : std::as_const(mode).parameters())
      if (p->requires_grad) trainable += p->value.size();
    training::TrainConfig tc = c.finetune;
    tc.seed = seed;
    const std::string cell_before = mode.serialize();
    training::finetune_cell(w, mode, training::to_sequences(data, vocab), tc);

    io::write_file(ckpt, w.serialize());
    const std::string after = io::sha256_hex(io::read_file(ckpt));
    const bool seed_ok = before == after && trainable == 3 * d * d + d &&
                         mode.parameter_count() == 3 * d * d + d &&
                         mode.serialize() != cell_before;
    ok = ok && seed_ok;
    detail += "seed " + std::to_string(seed) + (seed_ok ? " ok" : " MISMATCH") + "; ";
  }
  fs::remove_all(dir);
  return {ok, detail + "trainable " + std::to_string(3 * d * d + d) + " = 3d^2+d at d=" +
                  std::to_string(d)};
}

// 7. accuracy_f1 and chair_scores against brute-force oracles.
Outcome metric_oracles() {
  using eval::Answer;
  Rng rng(mix_seed(0, "acceptance/metrics"));
  std::size_t mismatches = 0;
  auto rate = [](std::size_t a, std::size_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<Answer> pred(n), label(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = rng.below(2) ? Answer::kYes : Answer::kNo;
      label[i] = rng.below(2) ? Answer::kYes : Answer::kNo;
    }
    // Tally a 2x2 table by enumerating every (prediction, label) cell.
    std::size_t cell[2][2] = {{0, 0}, {0, 0}};
    for (int pc = 0; pc < 2; ++pc)
      for (int lc = 0; lc < 2; ++lc)
        for (std::size_t i = 0; i < n; ++i)
          cell[pc][lc] += (pred[i] == Answer::kYes) == (pc == 1) &&
                          (label[i] == Answer::kYes) == (lc == 1);
    const std::size_t tp = cell[1][1], fp = cell[1][0], tn = cell[0][0], fn = cell[0][1];
    const double p = rate(tp, tp + fp), r = rate(tp, tp + fn);
    const double f1 = p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
    const eval::EvalReport got = eval::accuracy_f1(pred, label);
    mismatches += !(got.tp == tp && got.fp == fp && got.tn == tn && got.fn == fn &&
                    got.accuracy == rate(tp + tn, n) && got.precision == p && got.recall == r &&
                    got.f1 == f1);
  }
  const std::vector<std::string> names = {"dog", "cat", "car", "tree", "kite", "cup", "puppy"};
  const eval::SynonymMap syn = {{"puppy", "dog"}};
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 1 + rng.below(6);
    std::vector<std::vector<std::string>> caps(n), truth(n);
    for (std::size_t c = 0; c < n; ++c) {
      for (std::size_t k = rng.below(5); k > 0; --k) caps[c].push_back(names[rng.below(names.size())]);
      for (std::size_t k = rng.below(4); k > 0; --k) truth[c].push_back(names[rng.below(names.size())]);
    }
    // Brute force: every mention scanned against every ground-truth object.
    auto canon = [&](const std::string& s) {
      auto it = syn.find(s);
      return it == syn.end() ? s : it->second;
    };
    std::size_t mentions = 0, bad = 0, bad_caps = 0;
    for (std::size_t c = 0; c < n; ++c) {
      bool any = false;
      for (const std::string& m : caps[c]) {
        bool grounded = false;
        for (const std::string& g : truth[c]) grounded = grounded || canon(g) == canon(m);
        ++mentions;
        bad += !grounded;
        any = any || !grounded;
      }
      bad_caps += any;
    }
    const eval::ChairReport got = eval::chair_scores(caps, truth, syn);
    mismatches += !(got.chair_s == rate(bad_caps, n) && got.chair_i == rate(bad, mentions) &&
                    got.mentions == mentions && got.hallucinated_mentions == bad);
  }
  const eval::EvalReport hand = eval::from_confusion(1, 1, 1, 1);
  const bool hand_ok = hand.accuracy == 0.5 && hand.precision == 0.5 && hand.recall == 0.5 &&
                       hand.f1 == 0.5;
  const eval::ChairReport chair =
      eval::chair_scores({{"dog", "kite"}, {"cat", "tree"}}, {{"dog"}, {"cat", "tree"}});
  const bool chair_ok = chair.chair_s == 0.5 && chair.chair_i == 0.25;
  return {mismatches == 0 && hand_ok && chair_ok,
          "200 random instances, " + std::to_string(mismatches) + " mismatches; hand cases " +
              (hand_ok && chair_ok ? "ok" : "WRONG")};
}

// Desk-scale runs behind criteria 5, 6 and 8.
struct SeedRun {
  std::uint64_t seed = 0;
  std::map<std::string, eval::EvalResult> results;  // "vanilla" and each variant
  cli::Datasets data;
  backbone::BackboneWeights backbone;
  std::optional<depth::CellMode> dgdpu;
  double core_seconds = 0.0;      // pretrain + vanilla eval + DG-DPU finetune/eval
  double ablation_seconds = 0.0;  // the other three variants
};

double split_acc(const eval::EvalResult& r, eval::Split s) { return r.per_split.at(s).accuracy; }

SeedRun desk_run(const cli::RunConfig& desk, std::uint64_t seed, bool with_ablation) {
  SeedRun run;
  run.seed = seed;
  cli::RunConfig c = desk;
  c.seed = seed;
  auto t0 = Clock::now();
  run.data = cli::make_datasets(c);
  run.backbone = cli::run_pretrain(c, run.data);
  run.results["vanilla"] = eval::run_eval(run.backbone, nullptr, run.data.eval, run.data.vocab);
  depth::CellMode mode = cli::make_cell(c, depth::CellVariant::kDgDpu, run.backbone, run.data);
  cli::run_finetune(c, run.backbone, mode, run.data);
  run.results["dgdpu"] = eval::run_eval(run.backbone, &mode, run.data.eval, run.data.vocab);
  run.dgdpu = std::move(mode);
  run.core_seconds = seconds_since(t0);
  if (!with_ablation) return run;
  t0 = Clock::now();
  for (depth::CellVariant v : {depth::CellVariant::kGru, depth::CellVariant::kConstraintOnly,
                               depth::CellVariant::kCorrectionOnly}) {
    depth::CellMode m = cli::make_cell(c, v, run.backbone, run.data);
    cli::run_finetune(c, run.backbone, m, run.data);
    run.results[std::string(depth::variant_name(v))] =
        eval::run_eval(run.backbone, &m, run.data.eval, run.data.vocab);
  }
  run.ablation_seconds = seconds_since(t0);
  return run;
}

void print_table(const std::vector<SeedRun>& runs) {
  std::cout << "  seed variant          random  popular adversarial\n";
  for (const SeedRun& r : runs) {
    for (const auto& [name, res] : r.results) {
      std::printf("  %-4llu %-16s %.4f  %.4f  %.4f\n", static_cast<unsigned long long>(r.seed),
                  name.c_str(), split_acc(res, eval::Split::kRandom),
                  split_acc(res, eval::Split::kPopular), split_acc(res, eval::Split::kAdversarial));
    }
  }
}

double mean_over(const std::vector<SeedRun>& runs, const std::string& name, eval::Split s) {
  double sum = 0.0;
  for (const SeedRun& r : runs) sum += split_acc(r.results.at(name), s);
  return sum / static_cast<double>(runs.size());
}

// 5. DG-DPU vs frozen vanilla, averaged over seeds.
Outcome desk_correction(const std::vector<SeedRun>& runs) {
  using eval::Split;
  const double d_pop = mean_over(runs, "dgdpu", Split::kPopular) -
                       mean_over(runs, "vanilla", Split::kPopular);
  const double d_adv = mean_over(runs, "dgdpu", Split::kAdversarial) -
                       mean_over(runs, "vanilla", Split::kAdversarial);
  const double d_rnd = mean_over(runs, "dgdpu", Split::kRandom) -
                       mean_over(runs, "vanilla", Split::kRandom);
  double secs = 0.0;
  for (const SeedRun& r : runs) secs += r.core_seconds;
  const bool ok = d_pop >= 0.02 && d_adv >= 0.02 && d_rnd >= -0.01 && secs <= 15 * 60;
  return {ok, "mean delta popular " + fmt(100 * d_pop) + " pt, adversarial " +
                  fmt(100 * d_adv) + " pt, random " + fmt(100 * d_rnd) + " pt; " +
                  std::to_string(runs.size()) + " seeds in " + fmt(secs) + " s"};
}

// 6. DG-DPU mean adversarial accuracy >= each ablation variant.
Outcome ablation_ordering(const std::vector<SeedRun>& runs) {
  const double dg = mean_over(runs, "dgdpu", eval::Split::kAdversarial);
  bool ok = true;
  std::string detail = "adversarial mean dgdpu " + fmt(dg);
  for (const char* v : {"gru", "constraint_only", "correction_only"}) {
    const double a = mean_over(runs, v, eval::Split::kAdversarial);
    ok = ok && dg >= a;
    detail += std::string(", ") + v + " " + fmt(a);
  }
  return {ok, detail};
}

// 8. The trace command on a seed's artifacts: a disagreement prompt exists,
//    N rows per position in both CSVs, every lens distribution sums to 1.
Outcome trace_reproduction(const cli::RunConfig& desk, const SeedRun& run) {
  const fs::path dir = fs::temp_directory_path() / "depthrnn_acceptance_trace";
  fs::remove_all(dir);
  fs::create_directories(dir / "data");
  cli::RunConfig c = desk;
  c.seed = run.seed;
  io::write_file(dir / "backbone.ckpt", run.backbone.serialize());
  io::write_file(dir / "cell_dgdpu.ckpt", run.dgdpu->serialize());
  io::write_file(dir / "data/vocab.json", eval::vocabulary_manifest(run.data.vocab));
  for (const auto& [name, set] : {std::pair{"finetune", &run.data.finetune},
                                  std::pair{"eval", &run.data.eval}}) {
    std::ostringstream s;
    eval::write_jsonl(s, *set, run.data.vocab);
    io::write_file(dir / "data" / (std::string(name) + ".jsonl"), s.str());
  }
  std::ostringstream log;
  const int code = cli::dispatch("trace", c, dir, log);
  if (code != cli::kOk) return {false, "trace exited " + std::to_string(code) + ": " + log.str()};

  const auto summary = nlohmann::json::parse(io::read_file(dir / "trace_prompts.json"));
  const std::size_t n_layers = run.backbone.config().n_layers;
  std::size_t prompts = 0, differing = 0;
  std::map<std::string, std::size_t> positions;
  for (const auto& p : summary["prompts"]) {
    ++prompts;
    differing += p["vanilla_answer"] != p["hallurnn_answer"];
    positions[p["prompt_id"].get<std::string>()] = p["tokens"].size();
  }
  bool rows_ok = true;
  for (const char* file : {"trace_vanilla.csv", "trace_hallurnn.csv"}) {
    std::ifstream in(dir / file);
    std::string line;
    std::getline(in, line);
    std::map<std::string, std::map<std::string, std::size_t>> rows;  // prompt -> position -> rows
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string id, pos;
      std::getline(ls, id, ',');
      std::getline(ls, pos, ',');
      ++rows[id][pos];
    }
    for (const auto& [id, n_pos] : positions) {
      rows_ok = rows_ok && rows[id].size() == n_pos;
      for (const auto& [pos, n] : rows[id]) rows_ok = rows_ok && n == n_layers;
    }
  }
  // Independent lens-mass check on the traced prompts.
  double worst_mass = 0.0;
  for (const auto& p : summary["prompts"]) {
    const std::vector<std::size_t> tokens = p["tokens"].get<std::vector<std::size_t>>();
    for (const depth::TracedForward& f :
         {depth::vanilla_traced(tokens, run.backbone), depth::hallurnn_forward(tokens, run.backbone, *run.dgdpu)}) {
      for (const depth::TraceEntry& e : f.trace.entries)
        worst_mass = std::max(worst_mass, std::abs(e.lens_mass - 1.0));
    }
  }
  fs::remove_all(dir);
  const bool ok = differing >= 1 && rows_ok && worst_mass <= 1e-9;
  return {ok, std::to_string(prompts) + " prompt(s), " + std::to_string(differing) +
                  " with differing answers; " + (rows_ok ? "N rows per position" : "ROW COUNT WRONG") +
                  "; max |mass-1| " + fmt(worst_mass)};
}

}  // namespace

int main(int argc, char** argv) {
  std::string config_path = DEPTHRNN_DESK_CONFIG;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) {
      config_path = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::istringstream s(argv[++i]);
      for (std::string tok; std::getline(s, tok, ',');) only.insert(std::stoi(tok));
    } else {
      std::cerr << "usage: depthrnn_acceptance [--config path] [--only 1,2,...]\n";
      return 2;
    }
  }
  auto wanted = [&](int n) { return only.empty() || only.contains(n); };

  cli::RunConfig desk;
  try {
    desk = cli::load_run_config(config_path);
  } catch (const std::exception& e) {
    std::cerr << "cannot load " << config_path << ": " << e.what() << '\n';
    return 2;
  }

  int failures = 0;
  auto report = [&](int n, const char* name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << n << "] " << name << ": " << o.detail
              << std::endl;
  };

  if (wanted(1)) report(1, "exact vanilla reduction", [&] { return vanilla_reduction(desk); });
  if (wanted(2)) report(2, "gradient fidelity", [&] { return gradient_fidelity(desk); });
  if (wanted(3)) report(3, "gate invariants", [] { return gate_invariants(); });
  if (wanted(4)) report(4, "frozen-backbone integrity", [&] { return frozen_integrity(desk); });

  if (wanted(5) || wanted(6) || wanted(8)) {
    std::vector<SeedRun> runs;
    std::string error;
    try {
      const std::vector<std::uint64_t> seeds =
          wanted(5) || wanted(6) ? std::vector<std::uint64_t>{1, 2, 3}
                                 : std::vector<std::uint64_t>{1};
      for (std::uint64_t s : seeds) runs.push_back(desk_run(desk, s, wanted(6)));
      print_table(runs);
    } catch (const std::exception& e) {
      error = e.what();
    }
    auto guarded = [&](std::function<Outcome()> fn) {
      return [fn, &error]() -> Outcome {
        if (!error.empty()) return {false, "desk run failed: " + error};
        return fn();
      };
    };
    if (wanted(5))
      report(5, "desk-scale hallucination correction", guarded([&] { return desk_correction(runs); }));
    if (wanted(6)) report(6, "ablation ordering", guarded([&] { return ablation_ordering(runs); }));
    if (wanted(8))
      report(8, "trace reproduction", guarded([&] { return trace_reproduction(desk, runs.front()); }));
  }
  if (wanted(7)) report(7, "metric oracles", [] { return metric_oracles(); });

  std::cout << (failures == 0 ? "acceptance: all criteria passed"
                              : "acceptance: " + std::to_string(failures) + " criterion(s) failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
