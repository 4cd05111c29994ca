#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gpvs/gp.hpp"
#include "gpvs/rng.hpp"
#include "gpvs/tensor.hpp"
#include "gpvs/variational.hpp"

namespace gpvs {

// Toy recurrent encoder-decoder with additive attention over latent context
// variables, in three variants: deterministic (z = h), normal prior and GP
// prior. Single-layer unidirectional GRUs on both sides; row-vector
// convention throughout ({1,H} states, {n,H} stacked sequences).

enum class Variant { deterministic, normal, gp };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::deterministic: return "deterministic";
    case Variant::normal: return "normal";
    case Variant::gp: return "gp";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "deterministic") return Variant::deterministic;
  if (s == "normal") return Variant::normal;
  if (s == "gp") return Variant::gp;
  throw std::invalid_argument("unknown variant: " + s);
}

struct ModelConfig {
  std::size_t vocab_size = 0;   // V
  std::size_t embed_dim = 32;   // E
  std::size_t hidden_dim = 64;  // H
  std::size_t latent_dim = 64;  // D
  Variant variant = Variant::gp;
  GpPriorSpec gp;
  bool projection = false;  // learned H->D map ahead of the GP layer when D != H

  void validate() const {
    if (vocab_size < 4) throw std::invalid_argument("model: vocab must hold reserved ids");
    if (variant == Variant::gp && latent_dim != hidden_dim && !projection)
      throw std::invalid_argument(
          "model: gp variant needs latent dim == hidden dim unless a projection is "
          "configured");
  }
};

/// Single GRU cell. Candidate state follows the reset-then-transform form:
///   r = σ(x W_xr + h W_hr + b_r), u = σ(x W_xu + h W_hu + b_u)
///   c = tanh(x W_xc + (r∘h) W_hc + b_c),  h' = (1−u)∘c + u∘h
struct GruCell {
  ad::Tensor w_xr, w_xu, w_xc;  // in×hidden
  ad::Tensor w_hr, w_hu, w_hc;  // hidden×hidden
  ad::Tensor b_r, b_u, b_c;     // hidden
  std::size_t in_dim = 0, hidden_dim = 0;

  static GruCell init(std::size_t in_dim, std::size_t hidden_dim, std::uint64_t seed,
                      const std::string& prefix) {
    using detail_init::uniform_param;
    using detail_init::zero_param;
    GruCell c;
    c.in_dim = in_dim;
    c.hidden_dim = hidden_dim;
    auto s = [&](const std::string& n) { return derive_seed(seed, "init/" + prefix + n); };
    c.w_xr = uniform_param({in_dim, hidden_dim}, prefix + ".w_xr", s(".w_xr"));
    c.w_xu = uniform_param({in_dim, hidden_dim}, prefix + ".w_xu", s(".w_xu"));
    c.w_xc = uniform_param({in_dim, hidden_dim}, prefix + ".w_xc", s(".w_xc"));
    c.w_hr = uniform_param({hidden_dim, hidden_dim}, prefix + ".w_hr", s(".w_hr"));
    c.w_hu = uniform_param({hidden_dim, hidden_dim}, prefix + ".w_hu", s(".w_hu"));
    c.w_hc = uniform_param({hidden_dim, hidden_dim}, prefix + ".w_hc", s(".w_hc"));
    c.b_r = zero_param({hidden_dim}, prefix + ".b_r");
    c.b_u = zero_param({hidden_dim}, prefix + ".b_u");
    c.b_c = zero_param({hidden_dim}, prefix + ".b_c");
    return c;
  }

  std::vector<ad::Tensor> params() const {
    return {w_xr, w_xu, w_xc, w_hr, w_hu, w_hc, b_r, b_u, b_c};
  }

  ad::Tensor step(ad::Tape& t, const ad::Tensor& x, const ad::Tensor& h) const {
    const ad::Tensor r = t.sigmoid(t.broadcast_add_rows(
        t.add(t.matmul(x, w_xr), t.matmul(h, w_hr)), b_r));
    const ad::Tensor u = t.sigmoid(t.broadcast_add_rows(
        t.add(t.matmul(x, w_xu), t.matmul(h, w_hu)), b_u));
    const ad::Tensor c = t.tanh(t.broadcast_add_rows(
        t.add(t.matmul(x, w_xc), t.matmul(t.mul(r, h), w_hc)), b_c));
    const ad::Tensor keep = t.mul(u, h);
    const ad::Tensor fresh = t.mul(t.sub(ad::Tensor::scalar(1.0), u), c);
    return t.add(fresh, keep);
  }
};

struct Seq2SeqModel {
  ModelConfig cfg;
  ad::Tensor embedding;  // V×E, shared by encoder and decoder
  GruCell encoder;       // E -> H
  PosteriorNet posterior;
  ad::Tensor w_att_s;  // H×H, acts on the previous decoder state
  ad::Tensor w_att_z;  // D×H, acts on each latent context vector
  ad::Tensor v_att;    // H×1 score head
  GruCell decoder;     // (E+D) -> H
  ad::Tensor w_out;    // H×V output projection
  ad::Tensor w_proj;   // H×D, present only when cfg.projection

  static Seq2SeqModel init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    using detail_init::uniform_param;
    Seq2SeqModel m;
    m.cfg = cfg;
    auto s = [&](const std::string& n) { return derive_seed(seed, "init/" + n); };
    m.embedding = uniform_param({cfg.vocab_size, cfg.embed_dim}, "embedding", s("embedding"));
    m.encoder = GruCell::init(cfg.embed_dim, cfg.hidden_dim, seed, "encoder");
    m.posterior = PosteriorNet::init(cfg.hidden_dim, cfg.hidden_dim, cfg.latent_dim, seed);
    m.w_att_s = uniform_param({cfg.hidden_dim, cfg.hidden_dim}, "attention.w_s",
                              s("attention.w_s"));
    m.w_att_z = uniform_param({cfg.latent_dim, cfg.hidden_dim}, "attention.w_z",
                              s("attention.w_z"));
    m.v_att = uniform_param({cfg.hidden_dim, 1}, "attention.v", s("attention.v"));
    m.decoder =
        GruCell::init(cfg.embed_dim + cfg.latent_dim, cfg.hidden_dim, seed, "decoder");
    m.w_out = uniform_param({cfg.hidden_dim, cfg.vocab_size}, "output.w", s("output.w"));
    if (cfg.projection)
      m.w_proj = uniform_param({cfg.hidden_dim, cfg.latent_dim}, "projection.w",
                               s("projection.w"));
    return m;
  }

  /// All learnable tensors in a fixed order; the checkpoint table follows it.
  std::vector<ad::Tensor> params() const {
    std::vector<ad::Tensor> out;
    out.push_back(embedding);
    for (auto& p : encoder.params()) out.push_back(p);
    for (auto& p : posterior.params()) out.push_back(p);
    out.push_back(w_att_s);
    out.push_back(w_att_z);
    out.push_back(v_att);
    for (auto& p : decoder.params()) out.push_back(p);
    out.push_back(w_out);
    if (cfg.projection) out.push_back(w_proj);
    return out;
  }
};

/// Run the encoder over source ids; returns the n×H stack of hidden states.
inline ad::Tensor encode(ad::Tape& tape, const Seq2SeqModel& model,
                         const std::vector<int>& src_ids) {
  if (src_ids.empty()) throw std::invalid_argument("encode: empty source");
  for (int id : src_ids)
    if (id < 0 || static_cast<std::size_t>(id) >= model.cfg.vocab_size)
      throw std::invalid_argument("encode: token id " + std::to_string(id) +
                                  " outside vocabulary of size " +
                                  std::to_string(model.cfg.vocab_size));
  ad::Tensor h = ad::Tensor::zeros({1, model.cfg.hidden_dim});
  std::vector<ad::Tensor> states;
  states.reserve(src_ids.size());
  for (int id : src_ids) {
    const ad::Tensor x =
        tape.gather_rows(model.embedding, {static_cast<std::size_t>(id)});
    h = model.encoder.step(tape, x, h);
    states.push_back(h);
  }
  return tape.concat_rows(states);
}

struct AttendResult {
  ad::Tensor alpha;    // 1×n attention weights
  ad::Tensor context;  // 1×D
};

/// Additive attention: score_i = vᵀ tanh(W_s s_prev + W_z z_i), weights by
/// softmax over positions, context as the weighted sum of latents.
inline AttendResult attend(ad::Tape& tape, const Seq2SeqModel& model,
                           const ad::Tensor& s_prev, const ad::Tensor& z) {
  const ad::Tensor zw = tape.matmul(z, model.w_att_z);          // n×H
  const ad::Tensor sw = tape.matmul(s_prev, model.w_att_s);     // 1×H
  const ad::Tensor pre = tape.tanh(tape.broadcast_add_rows(zw, sw));
  const ad::Tensor scores = tape.transpose(tape.matmul(pre, model.v_att));  // 1×n
  AttendResult out;
  out.alpha = tape.softmax(scores);
  out.context = tape.matmul(out.alpha, z);
  return out;
}

struct DecodeStep {
  ad::Tensor state;   // 1×H
  ad::Tensor logits;  // 1×V
  AttendResult att;
};

/// One decoder step: attend with the previous state, feed [embed(y); c] to
/// the GRU, project the new state to vocabulary logits.
inline DecodeStep decode_step(ad::Tape& tape, const Seq2SeqModel& model,
                              const ad::Tensor& s_prev, int y_prev, const ad::Tensor& z) {
  if (y_prev < 0 || static_cast<std::size_t>(y_prev) >= model.cfg.vocab_size)
    throw std::invalid_argument("decode_step: token id out of range");
  DecodeStep out;
  out.att = attend(tape, model, s_prev, z);
  const ad::Tensor emb =
      tape.gather_rows(model.embedding, {static_cast<std::size_t>(y_prev)});
  const ad::Tensor x = tape.concat_cols(emb, out.att.context);
  out.state = model.decoder.step(tape, x, s_prev);
  out.logits = tape.matmul(out.state, model.w_out);
  return out;
}

struct TeacherForcedNll {
  ad::Tensor total;       // scalar, sum over predicted positions
  std::size_t n_tokens = 0;
};

/// Teacher-forced negative log-likelihood of `tgt` (BOS ... EOS) given the
/// latent stack z. Sum form; divide by n_tokens for the per-token mean.
inline TeacherForcedNll teacher_forced_nll(ad::Tape& tape, const Seq2SeqModel& model,
                                           const std::vector<int>& tgt,
                                           const ad::Tensor& z) {
  if (tgt.size() < 2)
    throw std::invalid_argument("teacher_forced_nll: target needs BOS and at least one "
                                "token to predict");
  ad::Tensor s = ad::Tensor::zeros({1, model.cfg.hidden_dim});
  ad::Tensor total = ad::Tensor::scalar(0.0);
  const std::size_t v = model.cfg.vocab_size;
  for (std::size_t t = 1; t < tgt.size(); ++t) {
    DecodeStep step = decode_step(tape, model, s, tgt[t - 1], z);
    s = step.state;
    const ad::Tensor logp = tape.log_softmax(step.logits);
    std::vector<double> onehot(v, 0.0);
    onehot[static_cast<std::size_t>(tgt[t])] = 1.0;
    const ad::Tensor picked =
        tape.sum(tape.mul(logp, ad::Tensor::constant({1, v}, std::move(onehot))));
    total = tape.sub(total, picked);
  }
  return {total, tgt.size() - 1};
}

/// Mean per-token NLL over the target positions.
inline ad::Tensor forward_teacher_forced(ad::Tape& tape, const Seq2SeqModel& model,
                                         const std::vector<int>& src,
                                         const std::vector<int>& tgt, const ad::Tensor& z) {
  (void)src;  // z already encodes the source; kept for call-site symmetry
  TeacherForcedNll nll = teacher_forced_nll(tape, model, tgt, z);
  return tape.scale(nll.total, 1.0 / static_cast<double>(nll.n_tokens));
}

}  // namespace gpvs
