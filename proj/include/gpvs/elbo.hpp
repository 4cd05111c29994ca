#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

#include "gpvs/corpus.hpp"
#include "gpvs/seq2seq.hpp"
#include "gpvs/variational.hpp"

namespace gpvs {

// ELBO assembly. The optimized loss is the negative per-sequence ELBO
// averaged over the batch:
//
//   loss = mean over sequences of [ sum-over-tokens NLL + 1.0·KL ]
//
// which keeps reconstruction and KL at their natural 1:1 weighting per
// position. (Normalizing the reconstruction per token while summing the KL
// over positions would scale the effective KL weight by the sequence length
// and the latent path collapses before attention can learn.) The reported
// recon_nll is the per-token mean so values are comparable across batch
// shapes; the reported kl is the per-sequence mean. The latent is drawn once
// per sequence via the reparameterization trick (tau = 1); the deterministic
// variant sets z = h and kl = 0.
//
// The prior is held constant on the tape: neither the Gram matrix nor the
// prior mean m(h) = h carries gradient into the encoder. The encoder learns
// through the posterior networks only; the KL shapes mu and s. (With the
// mean on the tape, the KL quadratic dominates every encoder update at any
// kernel scale whose sampling noise is small enough for attention to learn,
// and end-to-end training stalls at the unigram level.) The projection, when
// configured, is part of the parametric prior mean and does receive the KL
// gradient, against detached hidden values.

struct ElboResult {
  ad::Tensor loss;        // scalar, on tape: mean over sequences of (nll_sum + kl)
  double recon_nll = 0.0; // per-token mean, for reporting
  double kl = 0.0;        // per-sequence mean
};

/// Build the per-sequence GP joint the way training does: the Gram over the
/// standardized hidden values, the mean from the raw hidden values (through
/// the projection when configured). `prior_mean_out` receives the mean as a
/// tape tensor that is constant in the encoder.
inline GpJoint joint_for_hidden(const Seq2SeqModel& model, const ad::Tensor& hidden,
                                ad::Tape& tape, ad::Tensor* prior_mean_out) {
  const std::size_t n = hidden.rows(), h_dim = hidden.cols();
  const ad::Tensor h_const = ad::Tensor::constant(hidden.shape(), hidden.value());
  if (model.cfg.projection) {
    ad::Tensor projected = tape.matmul(h_const, model.w_proj);
    if (prior_mean_out) *prior_mean_out = projected;
    const std::vector<double> mean_vals = projected.value();
    return build_joint(model.cfg.gp, hidden.value(), n, h_dim, true, &mean_vals,
                       model.cfg.latent_dim);
  }
  if (prior_mean_out) *prior_mean_out = h_const;
  return build_joint(model.cfg.gp, hidden.value(), n, h_dim, true);
}

/// ELBO over a padded batch. `frozen_joints`, when provided, supplies one
/// prebuilt GP joint per sequence so that finite differencing against a fixed
/// Gram matrix is possible; production training passes none and the joint is
/// rebuilt from the current hidden states (off tape) every call.
inline ElboResult elbo_loss(ad::Tape& tape, const Seq2SeqModel& model, const Batch& batch,
                            Variant mode, Rng& rng,
                            const std::vector<GpJoint>* frozen_joints = nullptr) {
  if (batch.size() == 0) throw std::invalid_argument("elbo_loss: empty batch");
  if (mode != model.cfg.variant)
    throw std::invalid_argument("elbo_loss: mode " + to_string(mode) +
                                " does not match model variant " +
                                to_string(model.cfg.variant));
  if (frozen_joints && frozen_joints->size() != batch.size())
    throw std::invalid_argument("elbo_loss: frozen joint count mismatch");

  ad::Tensor nll_total = ad::Tensor::scalar(0.0);
  ad::Tensor kl_total = ad::Tensor::scalar(0.0);
  std::size_t token_total = 0;

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::vector<int> src = batch.src_sequence(i);
    const std::vector<int> tgt = batch.tgt_sequence(i);
    const ad::Tensor hidden = encode(tape, model, src);

    ad::Tensor z;
    if (mode == Variant::deterministic) {
      z = hidden;
    } else {
      const LatentPosterior post = infer_posterior(tape, model.posterior, hidden);
      z = reparam_sample(tape, post, 1.0, rng);
      if (mode == Variant::normal) {
        kl_total = tape.add(kl_total, kl_diag_vs_standard_normal(tape, post));
      } else {
        ad::Tensor prior_mean;
        GpJoint local;
        const GpJoint* joint;
        if (frozen_joints) {
          joint = &(*frozen_joints)[i];
          const ad::Tensor h_const = ad::Tensor::constant(hidden.shape(), hidden.value());
          if (model.cfg.projection)
            prior_mean = tape.matmul(h_const, model.w_proj);
          else
            prior_mean = h_const;
        } else {
          local = joint_for_hidden(model, hidden, tape, &prior_mean);
          joint = &local;
        }
        kl_total = tape.add(kl_total, kl_diag_vs_gp(tape, post, *joint, &prior_mean));
      }
    }

    const TeacherForcedNll nll = teacher_forced_nll(tape, model, tgt, z);
    nll_total = tape.add(nll_total, nll.total);
    token_total += nll.n_tokens;
  }

  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  ElboResult out;
  out.loss = tape.scale(tape.add(nll_total, kl_total), inv_batch);
  out.recon_nll = nll_total.item() / static_cast<double>(token_total);
  out.kl = kl_total.item() * inv_batch;
  return out;
}

}  // namespace gpvs
