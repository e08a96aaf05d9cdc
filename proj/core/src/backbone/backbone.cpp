// SPDX-License-Identifier: Apache-2.0
#include "depthrnn/backbone/backbone.hpp"

#include <cmath>
#include <string>

#include "depthrnn/errors.hpp"

namespace depthrnn::backbone {
namespace {

std::size_t parse_size(const io::Metadata& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw ConfigError("backbone metadata lacks '" + key + "'");
  try {
    return static_cast<std::size_t>(std::stoull(it->second));
  } catch (const std::exception&) {
    throw ConfigError("backbone metadata '" + key + "' is not an integer");
  }
}

std::string layer_prefix(std::size_t i) { return "layers." + std::to_string(i) + "."; }

template <typename Weights, typename Binder>
BoundBackbone bind_with(Weights& w, Binder&& leaf) {
  BoundBackbone b;
  b.config = w.config();
  b.tok_emb = leaf(w.tok_emb);
  b.pos_emb = leaf(w.pos_emb);
  for (auto& l : w.layers) {
    b.layers.push_back({leaf(l.ln1_gain), leaf(l.ln1_offset), leaf(l.w_q), leaf(l.w_k),
                        leaf(l.w_v), leaf(l.w_o), leaf(l.ln2_gain), leaf(l.ln2_offset),
                        leaf(l.w_up), leaf(l.w_down)});
  }
  b.lnf_gain = leaf(w.lnf_gain);
  b.lnf_offset = leaf(w.lnf_offset);
  b.head = leaf(w.head);
  return b;
}

}  // namespace

void BackboneConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || vocab == 0 || max_seq == 0 || ff_mult == 0) {
    throw ConfigError("backbone: d_model, n_heads, vocab, max_seq and ff_mult must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("backbone: d_model " + std::to_string(d_model) +
                      " is not divisible by n_heads " + std::to_string(n_heads));
  }
}

io::Metadata BackboneConfig::to_metadata() const {
  return {{"n_layers", std::to_string(n_layers)}, {"d_model", std::to_string(d_model)},
          {"n_heads", std::to_string(n_heads)},   {"vocab", std::to_string(vocab)},
          {"max_seq", std::to_string(max_seq)},   {"ff_mult", std::to_string(ff_mult)}};
}

BackboneConfig BackboneConfig::from_metadata(const io::Metadata& meta) {
  BackboneConfig c;
  c.n_layers = parse_size(meta, "n_layers");
  c.d_model = parse_size(meta, "d_model");
  c.n_heads = parse_size(meta, "n_heads");
  c.vocab = parse_size(meta, "vocab");
  c.max_seq = parse_size(meta, "max_seq");
  c.ff_mult = parse_size(meta, "ff_mult");
  c.validate();
  return c;
}

BackboneWeights BackboneWeights::zeros(const BackboneConfig& config) {
  config.validate();
  const std::size_t d = config.d_model, ff = config.ff_mult * d;
  BackboneWeights w;
  w.config_ = config;
  w.tok_emb = Parameter("tok_emb", Tensor(Shape{config.vocab, d}));
  w.pos_emb = Parameter("pos_emb", Tensor(Shape{config.max_seq, d}));
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    const std::string p = layer_prefix(i);
    LayerWeights l;
    l.ln1_gain = Parameter(p + "ln1.gain", Tensor(Shape{d}, 1.0));
    l.ln1_offset = Parameter(p + "ln1.offset", Tensor(Shape{d}));
    l.w_q = Parameter(p + "attn.w_q", Tensor(Shape{d, d}));
    l.w_k = Parameter(p + "attn.w_k", Tensor(Shape{d, d}));
    l.w_v = Parameter(p + "attn.w_v", Tensor(Shape{d, d}));
    l.w_o = Parameter(p + "attn.w_o", Tensor(Shape{d, d}));
    l.ln2_gain = Parameter(p + "ln2.gain", Tensor(Shape{d}, 1.0));
    l.ln2_offset = Parameter(p + "ln2.offset", Tensor(Shape{d}));
    l.w_up = Parameter(p + "mlp.w_up", Tensor(Shape{d, ff}));
    l.w_down = Parameter(p + "mlp.w_down", Tensor(Shape{ff, d}));
    w.layers.push_back(std::move(l));
  }
  w.lnf_gain = Parameter("lnf.gain", Tensor(Shape{d}, 1.0));
  w.lnf_offset = Parameter("lnf.offset", Tensor(Shape{d}));
  w.head = Parameter("head", Tensor(Shape{d, config.vocab}));
  return w;
}

BackboneWeights BackboneWeights::init(const BackboneConfig& config, Rng& rng) {
  BackboneWeights w = zeros(config);
  const std::size_t d = config.d_model, ff = config.ff_mult * d;
  // Residual-branch outputs are shrunk with depth.
  const double out_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(1, config.n_layers)));
  w.tok_emb.value = normal_tensor(Shape{config.vocab, d}, 0.1, rng);
  w.pos_emb.value = normal_tensor(Shape{config.max_seq, d}, 0.1, rng);
  for (auto& l : w.layers) {
    l.w_q.value = xavier_uniform(d, d, rng);
    l.w_k.value = xavier_uniform(d, d, rng);
    l.w_v.value = xavier_uniform(d, d, rng);
    l.w_o.value = xavier_uniform(d, d, rng);
    for (double& x : l.w_o.value.values()) x *= out_scale;
    l.w_up.value = xavier_uniform(d, ff, rng);
    l.w_down.value = xavier_uniform(ff, d, rng);
    for (double& x : l.w_down.value.values()) x *= out_scale;
  }
  w.head.value = xavier_uniform(d, config.vocab, rng);
  return w;
}

BackboneWeights BackboneWeights::from_checkpoint(const io::Checkpoint& ckpt) {
  BackboneWeights w = zeros(BackboneConfig::from_metadata(ckpt.metadata));
  io::assign(ckpt, w.parameters());
  auto it = ckpt.metadata.find("frozen");
  if (it != ckpt.metadata.end() && it->second == "true") w.freeze();
  return w;
}

void BackboneWeights::freeze() {
  for (Parameter* p : parameters()) {
    p->requires_grad = false;
    p->grad = Tensor(Shape{0});
  }
  frozen_ = true;
}

std::vector<Parameter*> BackboneWeights::parameters() {
  std::vector<Parameter*> out{&tok_emb, &pos_emb};
  for (auto& l : layers) {
    for (Parameter* p : {&l.ln1_gain, &l.ln1_offset, &l.w_q, &l.w_k, &l.w_v, &l.w_o,
                         &l.ln2_gain, &l.ln2_offset, &l.w_up, &l.w_down}) {
      out.push_back(p);
    }
  }
  out.insert(out.end(), {&lnf_gain, &lnf_offset, &head});
  return out;
}

std::vector<const Parameter*> BackboneWeights::parameters() const {
  auto mut = const_cast<BackboneWeights*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t BackboneWeights::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

std::string BackboneWeights::serialize() const {
  io::Metadata meta = config_.to_metadata();
  meta["kind"] = "backbone";
  meta["frozen"] = frozen_ ? "true" : "false";
  return io::serialize(parameters(), meta);
}

std::string BackboneWeights::sha256() const { return io::sha256_hex(serialize()); }

BoundBackbone bind(Tape& tape, BackboneWeights& weights) {
  return bind_with(weights, [&](Parameter& p) { return tape.parameter(p); });
}

BoundBackbone bind(Tape& tape, const BackboneWeights& weights) {
  return bind_with(weights, [&](const Parameter& p) { return tape.constant_ref(p.value); });
}

BoundBackbone bind_leaves(Tape& tape, const BackboneWeights& weights, std::vector<Var>& leaves) {
  BoundBackbone b = bind_with(weights, [&](const Parameter& p) { return tape.leaf_ref(p.value); });
  leaves.clear();
  leaves.push_back(b.tok_emb);
  leaves.push_back(b.pos_emb);
  for (const BoundLayer& l : b.layers) {
    leaves.insert(leaves.end(), {l.ln1_gain, l.ln1_offset, l.w_q, l.w_k, l.w_v, l.w_o,
                                 l.ln2_gain, l.ln2_offset, l.w_up, l.w_down});
  }
  leaves.insert(leaves.end(), {b.lnf_gain, b.lnf_offset, b.head});
  return b;
}

Var embed(TokenSpan tokens, const BoundBackbone& w) {
  const BackboneConfig& c = w.config;
  if (tokens.empty()) throw ContractError("embed: empty token sequence");
  if (tokens.size() > c.max_seq) {
    throw IndexError("embed: sequence length " + std::to_string(tokens.size()) +
                     " exceeds max_seq " + std::to_string(c.max_seq));
  }
  for (std::size_t id : tokens) {
    if (id >= c.vocab) {
      throw IndexError("embed: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(c.vocab));
    }
  }
  std::vector<std::size_t> positions(tokens.size());
  for (std::size_t t = 0; t < positions.size(); ++t) positions[t] = t;
  return ops::gather_rows(w.tok_emb, tokens) + ops::gather_rows(w.pos_emb, positions);
}

Var layer_forward(std::size_t layer, Var h, const BoundBackbone& w) {
  if (layer >= w.layers.size()) {
    throw IndexError("layer_forward: layer " + std::to_string(layer) + " of " +
                     std::to_string(w.layers.size()));
  }
  const BoundLayer& l = w.layers[layer];
  const std::size_t heads = w.config.n_heads, dh = w.config.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Var x = ops::layer_norm(h, l.ln1_gain, l.ln1_offset);
  Var q = ops::matmul(x, l.w_q);
  Var k = ops::matmul(x, l.w_k);
  Var v = ops::matmul(x, l.w_v);
  std::vector<Var> head_out;
  head_out.reserve(heads);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    Var qh = ops::slice_cols(q, hd * dh, dh);
    Var kh = ops::slice_cols(k, hd * dh, dh);
    Var vh = ops::slice_cols(v, hd * dh, dh);
    Var scores = ops::affine(ops::matmul(qh, ops::transpose(kh)), inv_sqrt_dh, 0.0);
    head_out.push_back(ops::matmul(ops::causal_softmax(scores), vh));
  }
  Var attn = heads == 1 ? head_out.front() : ops::concat(head_out);
  Var a = ops::matmul(attn, l.w_o);

  Var x2 = ops::layer_norm(h + a, l.ln2_gain, l.ln2_offset);
  Var f = ops::matmul(ops::gelu(ops::matmul(x2, l.w_up)), l.w_down);
  return a + f;
}

Var predict_head(Var h, const BoundBackbone& w) {
  return ops::matmul(ops::layer_norm(h, w.lnf_gain, w.lnf_offset), w.head);
}

Var vanilla_logits(TokenSpan tokens, const BoundBackbone& w, HiddenStack* stack) {
  Var h = embed(tokens, w);
  if (stack != nullptr) stack->h.assign(1, h.value());
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    h = h + layer_forward(i, h, w);
    if (stack != nullptr) stack->h.push_back(h.value());
  }
  return predict_head(h, w);
}

ForwardResult vanilla_forward(TokenSpan tokens, const BackboneWeights& weights) {
  Tape tape;
  BoundBackbone w = bind(tape, weights);
  ForwardResult out;
  out.logits = vanilla_logits(tokens, w, &out.stack).value();
  return out;
}

}  // namespace depthrnn::backbone
