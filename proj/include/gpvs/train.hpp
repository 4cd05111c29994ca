#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "gpvs/checkpoint.hpp"
#include "gpvs/config.hpp"
#include "gpvs/corpus.hpp"
#include "gpvs/decode.hpp"
#include "gpvs/elbo.hpp"
#include "gpvs/metrics.hpp"
#include "gpvs/optim.hpp"

namespace gpvs {

enum class TrainStatus { ok, numerical_failure };

struct TrainResult {
  TrainStatus status = TrainStatus::ok;
  int epochs_run = 0;
  int best_epoch = -1;
  double best_dev_loss = std::numeric_limits<double>::infinity();
  double dev_recon_first = 0.0;  // before any update
  double dev_recon_best = 0.0;
  bool stopped_early = false;
  Seq2SeqModel model;  // best-dev weights, reloaded from the checkpoint
};

namespace detail_train {

inline std::string fmtg(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace detail_train

/// Deterministic validation objective on the training scale: per-sequence
/// (sum-NLL + KL) averaged over the set, with the posterior mean (tau = 0) as
/// the latent. No sampling, so reruns agree bit for bit. recon is reported as
/// the per-token mean.
struct DevMetrics {
  double loss = 0.0;
  double recon = 0.0;
  double kl = 0.0;
};

inline DevMetrics dev_metrics(const Seq2SeqModel& model, const Corpus& dev,
                              const Vocabulary& vocab) {
  DevMetrics out;
  double nll_total = 0.0, kl_total = 0.0;
  std::size_t tokens = 0;
  for (const ParallelPair& pair : dev) {
    ad::Tape tape(false);
    const std::vector<int> src = vocab.encode(pair.src);
    std::vector<int> tgt;
    tgt.push_back(Vocabulary::BOS);
    for (int id : vocab.encode(pair.refs[0])) tgt.push_back(id);
    tgt.push_back(Vocabulary::EOS);

    const ad::Tensor hidden = encode(tape, model, src);
    ad::Tensor z = hidden;
    if (model.cfg.variant != Variant::deterministic) {
      const LatentPosterior post = infer_posterior(tape, model.posterior, hidden);
      z = post.mu;
      if (model.cfg.variant == Variant::normal) {
        kl_total += kl_diag_vs_standard_normal(tape, post).item();
      } else {
        ad::Tensor prior_mean;
        const GpJoint joint = joint_for_hidden(model, hidden, tape, &prior_mean);
        kl_total += kl_diag_vs_gp(tape, post, joint, &prior_mean).item();
      }
    }
    const TeacherForcedNll nll = teacher_forced_nll(tape, model, tgt, z);
    nll_total += nll.total.item();
    tokens += nll.n_tokens;
  }
  out.recon = nll_total / static_cast<double>(tokens);
  out.kl = kl_total / static_cast<double>(dev.size());
  out.loss = (nll_total + kl_total) / static_cast<double>(dev.size());
  return out;
}

/// Teacher-forced greedy token accuracy: the fraction of target positions
/// whose argmax prediction under the gold prefix matches the gold token,
/// with the mean latent (tau = 0). First reference per pair.
inline double token_accuracy(const Seq2SeqModel& model, const Corpus& corpus,
                             const Vocabulary& vocab, int max_len) {
  (void)max_len;
  std::size_t match = 0, total = 0;
  for (const ParallelPair& pair : corpus) {
    ad::Tape tape(false);
    const std::vector<int> src = vocab.encode(pair.src);
    std::vector<int> tgt;
    tgt.push_back(Vocabulary::BOS);
    for (int id : vocab.encode(pair.refs[0])) tgt.push_back(id);
    tgt.push_back(Vocabulary::EOS);

    const ad::Tensor hidden = encode(tape, model, src);
    ad::Tensor z = hidden;
    if (model.cfg.variant != Variant::deterministic)
      z = infer_posterior(tape, model.posterior, hidden).mu;

    ad::Tensor state = ad::Tensor::zeros({1, model.cfg.hidden_dim});
    for (std::size_t t = 1; t < tgt.size(); ++t) {
      const DecodeStep step = decode_step(tape, model, state, tgt[t - 1], z);
      state = step.state;
      const auto& logits = step.logits.value();
      std::size_t best = 0;
      for (std::size_t v = 1; v < logits.size(); ++v)
        if (logits[v] > logits[best]) best = v;
      if (static_cast<int>(best) == tgt[t]) ++match;
      ++total;
    }
  }
  return static_cast<double>(match) / static_cast<double>(total);
}

/// Train with Adam and early stopping on dev loss. The best-dev checkpoint is
/// written to `checkpoint_path` whenever it improves; on a non-finite loss
/// training aborts with the last good checkpoint still on disk. The log gets
/// one tab-separated line per optimizer step: step, epoch, loss, recon_nll,
/// kl, lr, seed.
inline TrainResult train_model(const RunConfig& cfg, const Corpus& train_set,
                               const Corpus& dev_set, const Vocabulary& vocab,
                               const std::string& checkpoint_path, std::ostream& log) {
  const ModelConfig mc = cfg.model_config(vocab.size());
  Seq2SeqModel model = Seq2SeqModel::init(mc, cfg.seed);
  const Variant mode = mc.variant;
  std::vector<ad::Tensor> params = model.params();
  Adam opt(params);
  Rng sample_rng(derive_seed(cfg.seed, "train_sampling"));

  TrainResult result;
  const DevMetrics first = dev_metrics(model, dev_set, vocab);
  result.dev_recon_first = first.recon;
  result.best_dev_loss = first.loss;
  result.dev_recon_best = first.recon;
  result.best_epoch = 0;
  save_checkpoint(model, checkpoint_path);

  log << "step\tepoch\tloss\trecon_nll\tkl\tlr\tseed\n";

  std::size_t step = 0;
  int epochs_since_best = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    BatchIter iter(train_set, vocab, static_cast<std::size_t>(cfg.batch_size),
                   derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    Batch batch;
    while (iter.next(batch)) {
      ad::Tape tape;
      const ElboResult elbo = elbo_loss(tape, model, batch, mode, sample_rng);
      const double loss_val = elbo.loss.item();
      if (!std::isfinite(loss_val)) {
        result.status = TrainStatus::numerical_failure;
        result.epochs_run = epoch;
        result.model = load_checkpoint(checkpoint_path);
        return result;
      }
      tape.backward(elbo.loss);
      opt.step(params, cfg.lr);
      ++step;
      log << step << '\t' << epoch << '\t' << detail_train::fmtg(loss_val) << '\t'
          << detail_train::fmtg(elbo.recon_nll) << '\t' << detail_train::fmtg(elbo.kl)
          << '\t' << detail_train::fmtg(cfg.lr) << '\t' << cfg.seed << '\n';
    }
    result.epochs_run = epoch;

    const DevMetrics dm = dev_metrics(model, dev_set, vocab);
    if (!std::isfinite(dm.loss)) {
      result.status = TrainStatus::numerical_failure;
      result.model = load_checkpoint(checkpoint_path);
      return result;
    }
    if (dm.loss < result.best_dev_loss) {
      result.best_dev_loss = dm.loss;
      result.dev_recon_best = dm.recon;
      result.best_epoch = epoch;
      save_checkpoint(model, checkpoint_path);
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= cfg.patience) {
        result.stopped_early = true;
        break;
      }
    }
  }
  result.model = load_checkpoint(checkpoint_path);
  return result;
}

}  // namespace gpvs
