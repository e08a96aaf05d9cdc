// SPDX-License-Identifier: Apache-2.0
#ifndef DEPTHRNN_DEPTH_HALLURNN_HPP_
#define DEPTHRNN_DEPTH_HALLURNN_HPP_

#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "depthrnn/backbone/backbone.hpp"
#include "depthrnn/cells/cells.hpp"

// Depth recurrence: one shared cell threads a recurrent state v through the
// layers of a frozen backbone, per position:
//
//   v[0] = 0
//   m[i] = layer_forward(i, h[i])
//   v[i+1] = cell(m[i], v[i])
//   h[i+1] = h[i] + v[i+1]
//
// The state never crosses positions.
namespace depthrnn::depth {

enum class CellVariant { kDgDpu, kGru, kConstraintOnly, kCorrectionOnly, kForcedVanilla };

std::string_view variant_name(CellVariant v);
// Throws ConfigError on an unknown name.
CellVariant parse_variant(std::string_view name);
inline bool is_trainable(CellVariant v) { return v != CellVariant::kForcedVanilla; }

// A cell variant together with the parameters it owns. forced_vanilla owns
// none and passes the block delta through unchanged (g_e pinned to 1).
class CellMode {
 public:
  static CellMode forced_vanilla();
  static CellMode create(CellVariant variant, std::size_t d, Rng& rng,
                         cells::CellInit init = cells::CellInit::kXavier);
  static CellMode from_dgdpu(CellVariant variant, cells::DgDpuParams params);
  static CellMode from_gru(cells::GruParams params);
  // Throws ConfigError when the checkpoint is not a cell checkpoint.
  static CellMode from_checkpoint(const io::Checkpoint& ckpt);

  CellVariant variant() const { return variant_; }
  // Width of the cell; 0 for forced_vanilla, which fits any backbone.
  std::size_t dim() const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;

  cells::DgDpuParams& dgdpu();
  const cells::DgDpuParams& dgdpu() const;
  cells::GruParams& gru();
  const cells::GruParams& gru() const;

  std::string serialize() const;

 private:
  CellVariant variant_ = CellVariant::kForcedVanilla;
  std::optional<cells::DgDpuParams> dgdpu_;
  std::optional<cells::GruParams> gru_;
};

// A cell whose parameters are recorded on a tape.
class BoundCell {
 public:
  virtual ~BoundCell() = default;
  virtual cells::StepResult step(Var m, Var v) const = 0;
};

// Trainable parameters become differentiable leaves.
std::unique_ptr<BoundCell> bind(Tape& tape, CellMode& mode);
std::unique_ptr<BoundCell> bind(Tape& tape, const CellMode& mode);
// Parameters recorded as differentiable views with gradients kept on the
// tape; `leaves` receives them in CellMode::parameters() order.
std::unique_ptr<BoundCell> bind_leaves(Tape& tape, const CellMode& mode, std::vector<Var>& leaves);

// Layer i -> the cell used at layer i.
using CellAtLayer = std::function<const BoundCell&(std::size_t layer)>;

struct RecurrenceResult {
  Var logits;                           // [seq x V]
  std::vector<Var> hidden;              // h[0..N]
  std::vector<cells::StepResult> steps;  // one per layer
};

// Throws ConfigError when the cell width disagrees with the backbone.
RecurrenceResult hallurnn_logits(backbone::TokenSpan tokens, const backbone::BoundBackbone& w,
                                 const BoundCell& cell);
// Same recurrence with a possibly different cell per layer; used to isolate
// per-layer gradient contributions.
RecurrenceResult hallurnn_logits(backbone::TokenSpan tokens, const backbone::BoundBackbone& w,
                                 const CellAtLayer& cell_at);

// Logit-lens readout of every hidden state: softmax(head(ln_f(h[i]))).
struct LensReadout {
  // [n_states x seq]: probability of the token of interest at each position.
  Tensor prob;
  // [n_states x seq]: total probability mass of the lens distribution.
  Tensor mass;
  // Argmax token per state and position, row-major [n_states x seq].
  std::vector<std::size_t> top_token;
};

// `token_of_interest` holds one token per position. Throws IndexError on an
// id outside the vocabulary.
LensReadout logit_lens(const backbone::HiddenStack& stack, const backbone::BackboneWeights& w,
                       std::span<const std::size_t> token_of_interest);

struct TraceEntry {
  std::size_t position = 0;
  std::size_t layer = 0;
  // Absent for cells without the corresponding gate.
  std::optional<double> g_a_mean, g_a_min, g_a_max, g_e;
  double lens_prob = 0.0;  // of the token of interest under the lens at h[layer+1]
  double lens_mass = 0.0;
  std::size_t lens_top_token = 0;
};

// Entries ordered by position, then layer; N entries per position.
struct DepthTrace {
  std::size_t n_layers = 0;
  std::size_t seq_len = 0;
  std::vector<TraceEntry> entries;

  const TraceEntry& at(std::size_t position, std::size_t layer) const {
    return entries[position * n_layers + layer];
  }
};

struct TracedForward {
  Tensor logits;  // [seq x V]
  backbone::HiddenStack stack;
  DepthTrace trace;
};

// Forward pass with instrumentation. Without `lens_token` the token of
// interest at each position is that position's final argmax.
TracedForward hallurnn_forward(backbone::TokenSpan tokens, const backbone::BackboneWeights& w,
                               const CellMode& mode,
                               std::optional<std::size_t> lens_token = std::nullopt);

// Same trace layout for the unmodified backbone; g_e is reported as 1.
TracedForward vanilla_traced(backbone::TokenSpan tokens, const backbone::BackboneWeights& w,
                             std::optional<std::size_t> lens_token = std::nullopt);

// CSV columns: prompt_id,position,layer,g_a_mean,g_a_min,g_a_max,g_e,
// lens_prob,lens_top_token. Absent gate values are left empty.
void write_trace_header(std::ostream& out);
void write_trace_rows(std::ostream& out, std::string_view prompt_id, const DepthTrace& trace);

}  // namespace depthrnn::depth

#endif  // DEPTHRNN_DEPTH_HALLURNN_HPP_
