// SPDX-License-Identifier: Apache-2.0
#include "depthrnn/depth/hallurnn.hpp"

#include <algorithm>
#include <limits>

#include "depthrnn/errors.hpp"
#include "depthrnn/io/format.hpp"

namespace depthrnn::depth {
namespace {

using backbone::BoundBackbone;
using backbone::TokenSpan;

class ForcedVanillaCell final : public BoundCell {
 public:
  cells::StepResult step(Var m, Var) const override { return {m, Var(), Var(), Var()}; }
};

class DgDpuCell final : public BoundCell {
 public:
  DgDpuCell(CellVariant variant, cells::BoundDgDpu params)
      : variant_(variant), params_(params) {}

  cells::StepResult step(Var m, Var v) const override {
    switch (variant_) {
      case CellVariant::kDgDpu:
        return cells::dgdpu_step(m, v, params_);
      case CellVariant::kConstraintOnly:
        return cells::ablated_step(cells::Ablation::kConstraintOnly, m, v, params_);
      case CellVariant::kCorrectionOnly:
        return cells::ablated_step(cells::Ablation::kCorrectionOnly, m, v, params_);
      default:
        throw ContractError("DgDpuCell: variant without DG-DPU parameters");
    }
  }

 private:
  CellVariant variant_;
  cells::BoundDgDpu params_;
};

class GruCell final : public BoundCell {
 public:
  explicit GruCell(cells::BoundGru params) : params_(params) {}
  cells::StepResult step(Var m, Var v) const override {
    return {cells::gru_step(m, v, params_), Var(), Var(), Var()};
  }

 private:
  cells::BoundGru params_;
};

template <typename Mode>
std::unique_ptr<BoundCell> bind_mode(Tape& tape, Mode& mode) {
  switch (mode.variant()) {
    case CellVariant::kForcedVanilla:
      return std::make_unique<ForcedVanillaCell>();
    case CellVariant::kGru:
      return std::make_unique<GruCell>(cells::bind(tape, mode.gru()));
    default:
      return std::make_unique<DgDpuCell>(mode.variant(), cells::bind(tape, mode.dgdpu()));
  }
}

void check_width(const CellMode& mode, const backbone::BackboneConfig& config) {
  if (mode.dim() != 0 && mode.dim() != config.d_model) {
    throw ConfigError("cell width " + std::to_string(mode.dim()) +
                      " does not match backbone d_model " + std::to_string(config.d_model));
  }
}

std::size_t argmax(const double* row, std::size_t n) {
  return static_cast<std::size_t>(std::max_element(row, row + n) - row);
}

void summarize_gates(const cells::StepResult& step, CellVariant variant, std::size_t position,
                     TraceEntry& e) {
  if (step.g_a.valid()) {
    const Tensor& g = step.g_a.value();
    const std::size_t c = g.cols();
    double sum = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t j = 0; j < c; ++j) {
      const double x = g[position * c + j];
      sum += x;
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    e.g_a_mean = sum / static_cast<double>(c);
    e.g_a_min = lo;
    e.g_a_max = hi;
  }
  if (step.g_e.valid()) {
    e.g_e = step.g_e.value()[position];
  } else if (variant == CellVariant::kForcedVanilla) {
    e.g_e = 1.0;
  }
}

// Fills lens columns of a trace from the stack; gate columns are set by the
// caller.
DepthTrace lens_trace(const backbone::HiddenStack& stack, const backbone::BackboneWeights& w,
                      const Tensor& logits, std::optional<std::size_t> lens_token) {
  const std::size_t seq = logits.rows(), vocab = logits.cols();
  std::vector<std::size_t> interest(seq);
  for (std::size_t t = 0; t < seq; ++t) {
    interest[t] = lens_token ? *lens_token : argmax(logits.data() + t * vocab, vocab);
  }
  const LensReadout lens = logit_lens(stack, w, interest);
  DepthTrace trace;
  trace.n_layers = stack.h.size() - 1;
  trace.seq_len = seq;
  for (std::size_t t = 0; t < seq; ++t) {
    for (std::size_t i = 0; i < trace.n_layers; ++i) {
      TraceEntry e;
      e.position = t;
      e.layer = i;
      e.lens_prob = lens.prob.at(i + 1, t);
      e.lens_mass = lens.mass.at(i + 1, t);
      e.lens_top_token = lens.top_token[(i + 1) * seq + t];
      trace.entries.push_back(e);
    }
  }
  return trace;
}

void write_optional(std::ostream& out, const std::optional<double>& x) {
  if (x) out << io::format_double(*x);
}

}  // namespace

std::string_view variant_name(CellVariant v) {
  switch (v) {
    case CellVariant::kDgDpu:
      return "dgdpu";
    case CellVariant::kGru:
      return "gru";
    case CellVariant::kConstraintOnly:
      return "constraint_only";
    case CellVariant::kCorrectionOnly:
      return "correction_only";
    case CellVariant::kForcedVanilla:
      return "forced_vanilla";
  }
  return "unknown";
}

CellVariant parse_variant(std::string_view name) {
  for (CellVariant v : {CellVariant::kDgDpu, CellVariant::kGru, CellVariant::kConstraintOnly,
                        CellVariant::kCorrectionOnly, CellVariant::kForcedVanilla}) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown cell variant '" + std::string(name) + "'");
}

CellMode CellMode::forced_vanilla() { return CellMode(); }

CellMode CellMode::create(CellVariant variant, std::size_t d, Rng& rng, cells::CellInit init) {
  switch (variant) {
    case CellVariant::kForcedVanilla:
      return forced_vanilla();
    case CellVariant::kGru:
      return from_gru(cells::GruParams::init(d, rng));
    default:
      return from_dgdpu(variant, cells::DgDpuParams::init(d, rng, init));
  }
}

CellMode CellMode::from_dgdpu(CellVariant variant, cells::DgDpuParams params) {
  if (variant == CellVariant::kGru || variant == CellVariant::kForcedVanilla) {
    throw ContractError("from_dgdpu: variant '" + std::string(variant_name(variant)) +
                        "' does not use DG-DPU parameters");
  }
  params.validate();
  CellMode m;
  m.variant_ = variant;
  m.dgdpu_ = std::move(params);
  return m;
}

CellMode CellMode::from_gru(cells::GruParams params) {
  params.validate();
  CellMode m;
  m.variant_ = CellVariant::kGru;
  m.gru_ = std::move(params);
  return m;
}

CellMode CellMode::from_checkpoint(const io::Checkpoint& ckpt) {
  auto kind = ckpt.metadata.find("kind");
  auto var = ckpt.metadata.find("variant");
  if (kind == ckpt.metadata.end() || kind->second != "cell" || var == ckpt.metadata.end()) {
    throw ConfigError("checkpoint is not a cell checkpoint");
  }
  const CellVariant variant = parse_variant(var->second);
  if (variant == CellVariant::kForcedVanilla) return forced_vanilla();
  const std::size_t d = std::stoull(ckpt.metadata.at("d_model"));
  CellMode m = variant == CellVariant::kGru
                   ? from_gru(cells::GruParams::zeros(d))
                   : from_dgdpu(variant, cells::DgDpuParams::zeros(d));
  io::assign(ckpt, m.parameters());
  for (const Parameter* p : m.parameters()) {
    if (!p->value.all_finite()) throw ConfigError("cell checkpoint holds non-finite values");
  }
  return m;
}

std::size_t CellMode::dim() const {
  if (dgdpu_) return dgdpu_->dim();
  if (gru_) return gru_->dim();
  return 0;
}

std::vector<Parameter*> CellMode::parameters() {
  if (dgdpu_) return dgdpu_->parameters();
  if (gru_) return gru_->parameters();
  return {};
}

std::vector<const Parameter*> CellMode::parameters() const {
  if (dgdpu_) return dgdpu_->parameters();
  if (gru_) return gru_->parameters();
  return {};
}

std::size_t CellMode::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

cells::DgDpuParams& CellMode::dgdpu() {
  if (!dgdpu_) throw ContractError("cell mode has no DG-DPU parameters");
  return *dgdpu_;
}
const cells::DgDpuParams& CellMode::dgdpu() const {
  if (!dgdpu_) throw ContractError("cell mode has no DG-DPU parameters");
  return *dgdpu_;
}
cells::GruParams& CellMode::gru() {
  if (!gru_) throw ContractError("cell mode has no GRU parameters");
  return *gru_;
}
const cells::GruParams& CellMode::gru() const {
  if (!gru_) throw ContractError("cell mode has no GRU parameters");
  return *gru_;
}

std::string CellMode::serialize() const {
  io::Metadata meta{{"kind", "cell"},
                    {"variant", std::string(variant_name(variant_))},
                    {"d_model", std::to_string(dim())}};
  return io::serialize(parameters(), meta);
}

std::unique_ptr<BoundCell> bind(Tape& tape, CellMode& mode) { return bind_mode(tape, mode); }
std::unique_ptr<BoundCell> bind(Tape& tape, const CellMode& mode) {
  return bind_mode(tape, mode);
}

std::unique_ptr<BoundCell> bind_leaves(Tape& tape, const CellMode& mode, std::vector<Var>& leaves) {
  leaves.clear();
  for (const Parameter* p : mode.parameters()) leaves.push_back(tape.leaf_ref(p->value));
  switch (mode.variant()) {
    case CellVariant::kForcedVanilla:
      return std::make_unique<ForcedVanillaCell>();
    case CellVariant::kGru:
      return std::make_unique<GruCell>(cells::BoundGru{leaves[0], leaves[1], leaves[2], leaves[3],
                                                       leaves[4], leaves[5], leaves[6], leaves[7],
                                                       leaves[8]});
    default:
      return std::make_unique<DgDpuCell>(mode.variant(),
                                         cells::BoundDgDpu{leaves[0], leaves[1], leaves[2]});
  }
}

RecurrenceResult hallurnn_logits(TokenSpan tokens, const BoundBackbone& w, const BoundCell& cell) {
  return hallurnn_logits(tokens, w, [&](std::size_t) -> const BoundCell& { return cell; });
}

RecurrenceResult hallurnn_logits(TokenSpan tokens, const BoundBackbone& w,
                                 const CellAtLayer& cell_at) {
  RecurrenceResult out;
  Var h = backbone::embed(tokens, w);
  Tape& tape = *h.tape();
  Var v = tape.constant(Tensor(h.shape()));
  out.hidden.push_back(h);
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    Var m = backbone::layer_forward(i, h, w);
    cells::StepResult step = cell_at(i).step(m, v);
    v = step.v_next;
    h = h + v;
    out.hidden.push_back(h);
    out.steps.push_back(step);
  }
  out.logits = backbone::predict_head(h, w);
  return out;
}

LensReadout logit_lens(const backbone::HiddenStack& stack, const backbone::BackboneWeights& w,
                       std::span<const std::size_t> token_of_interest) {
  const std::size_t vocab = w.config().vocab;
  for (std::size_t tok : token_of_interest) {
    if (tok >= vocab) {
      throw IndexError("logit_lens: token " + std::to_string(tok) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
  }
  const std::size_t states = stack.h.size();
  const std::size_t seq = states == 0 ? 0 : stack.h.front().rows();
  if (token_of_interest.size() != seq) {
    throw DimensionError("logit_lens: " + std::to_string(token_of_interest.size()) +
                         " tokens of interest for " + std::to_string(seq) + " positions");
  }
  LensReadout r{Tensor(Shape{states, seq}), Tensor(Shape{states, seq}),
                std::vector<std::size_t>(states * seq)};
  Tape tape;
  const BoundBackbone bw = backbone::bind(tape, w);
  for (std::size_t i = 0; i < states; ++i) {
    const Tensor logits = backbone::predict_head(tape.constant(stack.h[i]), bw).value();
    for (std::size_t t = 0; t < seq; ++t) {
      const Tensor p = softmax(std::span<const double>(logits.data() + t * vocab, vocab));
      double mass = 0.0;
      for (double x : p.values()) mass += x;
      r.prob.at(i, t) = p[token_of_interest[t]];
      r.mass.at(i, t) = mass;
      r.top_token[i * seq + t] = argmax(p.data(), vocab);
    }
  }
  return r;
}

TracedForward hallurnn_forward(TokenSpan tokens, const backbone::BackboneWeights& w,
                               const CellMode& mode, std::optional<std::size_t> lens_token) {
  check_width(mode, w.config());
  Tape tape;
  const BoundBackbone bw = backbone::bind(tape, w);
  const std::unique_ptr<BoundCell> cell = bind(tape, mode);
  RecurrenceResult rec = hallurnn_logits(tokens, bw, *cell);

  TracedForward out;
  out.logits = rec.logits.value();
  for (const Var& h : rec.hidden) out.stack.h.push_back(h.value());
  out.trace = lens_trace(out.stack, w, out.logits, lens_token);
  for (TraceEntry& e : out.trace.entries) {
    summarize_gates(rec.steps[e.layer], mode.variant(), e.position, e);
  }
  return out;
}

TracedForward vanilla_traced(TokenSpan tokens, const backbone::BackboneWeights& w,
                             std::optional<std::size_t> lens_token) {
  backbone::ForwardResult fwd = backbone::vanilla_forward(tokens, w);
  TracedForward out;
  out.logits = std::move(fwd.logits);
  out.stack = std::move(fwd.stack);
  out.trace = lens_trace(out.stack, w, out.logits, lens_token);
  for (TraceEntry& e : out.trace.entries) e.g_e = 1.0;
  return out;
}

void write_trace_header(std::ostream& out) {
  out << "prompt_id,position,layer,g_a_mean,g_a_min,g_a_max,g_e,lens_prob,lens_top_token\n";
}

void write_trace_rows(std::ostream& out, std::string_view prompt_id, const DepthTrace& trace) {
  for (const TraceEntry& e : trace.entries) {
    out << prompt_id << ',' << e.position << ',' << e.layer << ',';
    write_optional(out, e.g_a_mean);
    out << ',';
    write_optional(out, e.g_a_min);
    out << ',';
    write_optional(out, e.g_a_max);
    out << ',';
    write_optional(out, e.g_e);
    out << ',' << io::format_double(e.lens_prob) << ',' << e.lens_top_token << '\n';
  }
}

}  // namespace depthrnn::depth
