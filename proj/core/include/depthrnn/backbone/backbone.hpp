// SPDX-License-Identifier: Apache-2.0
#ifndef DEPTHRNN_BACKBONE_BACKBONE_HPP_
#define DEPTHRNN_BACKBONE_BACKBONE_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "depthrnn/io/checkpoint.hpp"
#include "depthrnn/numerics/ops.hpp"
#include "depthrnn/numerics/rng.hpp"

// Toy decoder-only transformer: learned token and absolute position
// embeddings, N pre-norm blocks, final layer norm and a linear head.
namespace depthrnn::backbone {

using TokenSpan = std::span<const std::size_t>;

struct BackboneConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t vocab = 64;
  std::size_t max_seq = 16;
  std::size_t ff_mult = 4;

  // n_layers may be 0 (embedding straight into the head); everything else
  // must be positive and d_model divisible by n_heads. Throws ConfigError.
  void validate() const;
  std::size_t head_dim() const { return d_model / n_heads; }

  io::Metadata to_metadata() const;
  static BackboneConfig from_metadata(const io::Metadata& meta);
  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

struct LayerWeights {
  Parameter ln1_gain, ln1_offset;
  Parameter w_q, w_k, w_v, w_o;  // [d x d]
  Parameter ln2_gain, ln2_offset;
  Parameter w_up;    // [d x ff_mult*d]
  Parameter w_down;  // [ff_mult*d x d]
};

class BackboneWeights {
 public:
  BackboneWeights() = default;
  // All matrices zero, layer-norm gains one.
  static BackboneWeights zeros(const BackboneConfig& config);
  static BackboneWeights init(const BackboneConfig& config, Rng& rng);
  static BackboneWeights from_checkpoint(const io::Checkpoint& ckpt);

  const BackboneConfig& config() const { return config_; }

  // Marks every tensor as non-trainable and drops gradient buffers.
  void freeze();
  bool frozen() const { return frozen_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;

  // Checkpoint bytes; the config and frozen flag travel in the metadata.
  std::string serialize() const;
  std::string sha256() const;

  Parameter tok_emb;  // [V x d]
  Parameter pos_emb;  // [max_seq x d]
  std::vector<LayerWeights> layers;
  Parameter lnf_gain, lnf_offset;
  Parameter head;  // [d x V]

 private:
  BackboneConfig config_;
  bool frozen_ = false;
};

struct BoundLayer {
  Var ln1_gain, ln1_offset, w_q, w_k, w_v, w_o, ln2_gain, ln2_offset, w_up, w_down;
};

struct BoundBackbone {
  BackboneConfig config;
  Var tok_emb, pos_emb;
  std::vector<BoundLayer> layers;
  Var lnf_gain, lnf_offset, head;
};

// Trainable tensors become differentiable leaves.
BoundBackbone bind(Tape& tape, BackboneWeights& weights);
// Every tensor recorded as a constant view.
BoundBackbone bind(Tape& tape, const BackboneWeights& weights);
// Every tensor recorded as a differentiable view whose gradient stays on the
// tape; `leaves` receives the Vars in parameters() order.
BoundBackbone bind_leaves(Tape& tape, const BackboneWeights& weights, std::vector<Var>& leaves);

// Per-layer hidden states h[0..N], each [seq x d]. h[0] is the embedded input.
struct HiddenStack {
  std::vector<Tensor> h;
};

// Token plus position embedding, [seq x d]. Throws IndexError on an id >= V
// or a sequence longer than max_seq.
Var embed(TokenSpan tokens, const BoundBackbone& w);

// Block delta m = block_i(h) - h for a pre-norm block with causal
// self-attention and a GELU MLP: m = a + f with a = attn(ln1(h)) and
// f = mlp(ln2(h + a)).
Var layer_forward(std::size_t layer, Var h, const BoundBackbone& w);

// Final layer norm then the linear head; [d] -> [V] or [seq x d] -> [seq x V].
Var predict_head(Var h, const BoundBackbone& w);

// h[i+1] = h[i] + layer_forward(i, h[i]); returns [seq x V] logits. When
// `stack` is given it receives every h[i].
Var vanilla_logits(TokenSpan tokens, const BoundBackbone& w, HiddenStack* stack = nullptr);

struct ForwardResult {
  Tensor logits;  // [seq x V]
  HiddenStack stack;
};

ForwardResult vanilla_forward(TokenSpan tokens, const BackboneWeights& weights);

}  // namespace depthrnn::backbone

#endif  // DEPTHRNN_BACKBONE_BACKBONE_HPP_
