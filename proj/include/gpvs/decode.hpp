#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gpvs/corpus.hpp"
#include "gpvs/seq2seq.hpp"
#include "gpvs/variational.hpp"

namespace gpvs {

// Generation: mean decoding, prior-function sampling, posterior sampling with
// covariance scaling, and plain beam search over log-probabilities (no length
// normalization; ties broken by lexicographically smaller token sequence).

enum class GenMode { mean, prior_sample, posterior_sample };

inline std::string to_string(GenMode m) {
  switch (m) {
    case GenMode::mean: return "mean";
    case GenMode::prior_sample: return "prior_sample";
    case GenMode::posterior_sample: return "posterior_sample";
  }
  return "?";
}

inline GenMode gen_mode_from_string(const std::string& s) {
  if (s == "mean") return GenMode::mean;
  if (s == "prior_sample") return GenMode::prior_sample;
  if (s == "posterior_sample") return GenMode::posterior_sample;
  throw std::invalid_argument("unknown generation mode: " + s);
}

struct GenerationConfig {
  GenMode mode = GenMode::mean;
  double tau = 1.0;       // covariance scale for posterior_sample
  int beam = 10;
  int max_len = 16;
  std::uint64_t seed = 0;
  int num_samples = 1;
};

struct Hypothesis {
  std::vector<int> tokens;  // ends with EOS unless max_len was reached
  double logprob = 0.0;
  int latent_id = 0;
};

namespace detail_decode {

struct Partial {
  std::vector<int> tokens;
  double logprob = 0.0;
  ad::Tensor state;
  bool done = false;
};

inline bool better(const Partial& a, const Partial& b) {
  if (a.logprob != b.logprob) return a.logprob > b.logprob;
  return a.tokens < b.tokens;
}

inline void log_softmax_row(const std::vector<double>& logits, std::vector<double>& out) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  out.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

}  // namespace detail_decode

/// Beam search over a frozen model and latent stack. Returns up to `beam`
/// finalized hypotheses sorted by log-probability (descending).
inline std::vector<Hypothesis> beam_search(const Seq2SeqModel& model, const ad::Tensor& z,
                                           int beam, int max_len) {
  if (beam < 1) throw std::invalid_argument("beam_search: beam must be >= 1");
  if (max_len < 1) throw std::invalid_argument("beam_search: max_len must be >= 1");
  using detail_decode::Partial;
  ad::Tape tape(false);

  std::vector<Partial> live(1);
  live[0].state = ad::Tensor::zeros({1, model.cfg.hidden_dim});
  std::vector<Partial> finished;
  std::vector<double> logp;

  for (int step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<Partial> candidates;
    candidates.reserve(live.size() * model.cfg.vocab_size);
    for (const Partial& p : live) {
      const int y_prev = p.tokens.empty() ? Vocabulary::BOS : p.tokens.back();
      const DecodeStep ds = decode_step(tape, model, p.state, y_prev, z);
      detail_decode::log_softmax_row(ds.logits.value(), logp);
      for (std::size_t v = 0; v < logp.size(); ++v) {
        if (v == static_cast<std::size_t>(Vocabulary::PAD) ||
            v == static_cast<std::size_t>(Vocabulary::BOS))
          continue;
        Partial c;
        c.tokens = p.tokens;
        c.tokens.push_back(static_cast<int>(v));
        c.logprob = p.logprob + logp[v];
        c.state = ds.state;
        c.done = (v == Vocabulary::EOS);
        candidates.push_back(std::move(c));
      }
    }
    std::sort(candidates.begin(), candidates.end(), detail_decode::better);
    if (candidates.size() > static_cast<std::size_t>(beam)) candidates.resize(beam);
    live.clear();
    for (Partial& c : candidates) {
      if (c.done)
        finished.push_back(std::move(c));
      else
        live.push_back(std::move(c));
    }
  }
  // length-capped partials finalize as they stand
  for (Partial& p : live) finished.push_back(std::move(p));
  std::sort(finished.begin(), finished.end(), detail_decode::better);
  if (finished.size() > static_cast<std::size_t>(beam)) finished.resize(beam);

  std::vector<Hypothesis> out;
  out.reserve(finished.size());
  for (Partial& p : finished) out.push_back({std::move(p.tokens), p.logprob, 0});
  return out;
}

namespace detail_decode {

inline GpJoint joint_for_hidden_values(const Seq2SeqModel& model, const ad::Tensor& hidden,
                                       ad::Tape& tape) {
  const std::size_t n = hidden.rows();
  if (model.cfg.projection) {
    const std::vector<double> mean_vals = tape.matmul(hidden, model.w_proj).value();
    return build_joint(model.cfg.gp, hidden.value(), n, hidden.cols(), true, &mean_vals,
                       model.cfg.latent_dim);
  }
  return build_joint(model.cfg.gp, hidden.value(), n, hidden.cols(), true);
}

/// Draw the latent stacks for one source per the generation mode. Mean mode
/// produces a single distinct latent repeated num_samples times.
inline std::vector<ad::Tensor> draw_latents(const Seq2SeqModel& model,
                                            const std::vector<int>& src,
                                            const GenerationConfig& cfg) {
  ad::Tape tape(false);
  const ad::Tensor hidden = encode(tape, model, src);
  const std::size_t n = hidden.rows();
  std::vector<ad::Tensor> latents;
  latents.reserve(cfg.num_samples);

  if (model.cfg.variant == Variant::deterministic) {
    if (cfg.mode != GenMode::mean)
      throw std::invalid_argument("generate: deterministic variant only supports mean mode");
    for (int k = 0; k < cfg.num_samples; ++k) latents.push_back(hidden);
    return latents;
  }

  switch (cfg.mode) {
    case GenMode::mean: {
      const LatentPosterior post = infer_posterior(tape, model.posterior, hidden);
      for (int k = 0; k < cfg.num_samples; ++k) latents.push_back(post.mu);
      break;
    }
    case GenMode::posterior_sample: {
      const LatentPosterior post = infer_posterior(tape, model.posterior, hidden);
      for (int k = 0; k < cfg.num_samples; ++k) {
        Rng rng(derive_seed(cfg.seed, "draw", static_cast<std::uint64_t>(k)));
        latents.push_back(reparam_sample(tape, post, cfg.tau, rng));
      }
      break;
    }
    case GenMode::prior_sample: {
      if (model.cfg.variant != Variant::gp)
        throw std::invalid_argument("generate: prior_sample requires the gp variant");
      const GpJoint joint = joint_for_hidden_values(model, hidden, tape);
      for (int k = 0; k < cfg.num_samples; ++k) {
        Rng rng(derive_seed(cfg.seed, "draw", static_cast<std::uint64_t>(k)));
        std::vector<double> zvals = sample_prior_function(joint, rng);
        latents.push_back(ad::Tensor::constant({n, model.cfg.latent_dim}, std::move(zvals)));
      }
      break;
    }
  }
  return latents;
}

}  // namespace detail_decode

/// Algorithm-style generation: draw num_samples latent stacks per the mode,
/// run beam search on each, return the top hypothesis per draw (latent_id
/// records the draw index). Deterministic given cfg.seed.
inline std::vector<Hypothesis> generate(const Seq2SeqModel& model, const std::vector<int>& src,
                                        const GenerationConfig& cfg) {
  if (cfg.num_samples < 1) throw std::invalid_argument("generate: num_samples must be >= 1");
  const std::vector<ad::Tensor> latents = detail_decode::draw_latents(model, src, cfg);
  std::vector<Hypothesis> out;
  out.reserve(latents.size());
  for (std::size_t k = 0; k < latents.size(); ++k) {
    std::vector<Hypothesis> hyps = beam_search(model, latents[k], cfg.beam, cfg.max_len);
    if (hyps.empty()) throw std::logic_error("generate: beam search returned nothing");
    hyps[0].latent_id = static_cast<int>(k);
    out.push_back(std::move(hyps[0]));
  }
  return out;
}

/// The diverse-generation protocol: independent posterior draws at covariance
/// scale tau, one output per draw.
inline std::vector<Hypothesis> diverse_generate(const Seq2SeqModel& model,
                                                const std::vector<int>& src,
                                                GenerationConfig cfg) {
  if (cfg.mode != GenMode::posterior_sample)
    throw std::invalid_argument("diverse_generate: mode must be posterior_sample");
  return generate(model, src, cfg);
}

}  // namespace gpvs
