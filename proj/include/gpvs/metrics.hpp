#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gpvs/corpus.hpp"
#include "gpvs/decode.hpp"

namespace gpvs {

// Quality and diversity metrics. BLEU is computed up to bigrams with add-half
// smoothing applied only to zero-count precisions (a zero-count precision for
// denominator d becomes 1/(2d)); an order with no n-grams at all contributes
// a neutral precision of 1. Tokens are compared case-sensitively.

using TokenSeq = std::vector<std::string>;

namespace detail_metrics {

inline std::map<std::string, int> ngram_counts(const TokenSeq& toks, std::size_t n) {
  std::map<std::string, int> counts;
  if (toks.size() < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key;
    for (std::size_t j = 0; j < n; ++j) {
      if (j) key += '\x1f';
      key += toks[i + j];
    }
    ++counts[key];
  }
  return counts;
}

struct BleuCounts {
  std::size_t clipped[2] = {0, 0};
  std::size_t total[2] = {0, 0};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;  // closest reference length, ties to the shorter
};

inline BleuCounts bleu_counts(const TokenSeq& hyp, const std::vector<TokenSeq>& refs) {
  BleuCounts c;
  c.hyp_len = hyp.size();
  std::size_t best_ref = refs[0].size();
  for (const TokenSeq& r : refs) {
    const auto dist = [&](std::size_t len) {
      return len > c.hyp_len ? len - c.hyp_len : c.hyp_len - len;
    };
    if (dist(r.size()) < dist(best_ref) || (dist(r.size()) == dist(best_ref) && r.size() < best_ref))
      best_ref = r.size();
  }
  c.ref_len = best_ref;
  for (std::size_t n = 1; n <= 2; ++n) {
    const auto hyp_counts = ngram_counts(hyp, n);
    std::map<std::string, int> max_ref;
    for (const TokenSeq& r : refs)
      for (const auto& [key, cnt] : ngram_counts(r, n))
        max_ref[key] = std::max(max_ref[key], cnt);
    for (const auto& [key, cnt] : hyp_counts) {
      c.total[n - 1] += static_cast<std::size_t>(cnt);
      const auto it = max_ref.find(key);
      if (it != max_ref.end())
        c.clipped[n - 1] += static_cast<std::size_t>(std::min(cnt, it->second));
    }
  }
  return c;
}

inline double bleu_from_counts(const BleuCounts& c) {
  if (c.hyp_len == 0) return 0.0;
  double logp = 0.0;
  for (int n = 0; n < 2; ++n) {
    double p;
    if (c.total[n] == 0)
      p = 1.0;
    else if (c.clipped[n] == 0)
      p = 1.0 / (2.0 * static_cast<double>(c.total[n]));
    else
      p = static_cast<double>(c.clipped[n]) / static_cast<double>(c.total[n]);
    logp += 0.5 * std::log(p);
  }
  const double bp = std::exp(std::min(
      0.0, 1.0 - static_cast<double>(c.ref_len) / static_cast<double>(c.hyp_len)));
  return bp * std::exp(logp);
}

}  // namespace detail_metrics

/// Sentence BLEU with up to bigrams. Empty hypothesis scores 0.
inline double bleu2(const TokenSeq& hyp, const std::vector<TokenSeq>& refs) {
  if (refs.empty()) throw std::invalid_argument("bleu2: no references");
  return detail_metrics::bleu_from_counts(detail_metrics::bleu_counts(hyp, refs));
}

/// Corpus BLEU-2: clipped counts and lengths are summed across pairs before
/// the precisions and brevity penalty are applied once.
inline double corpus_bleu2(
    const std::vector<std::pair<TokenSeq, std::vector<TokenSeq>>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("corpus_bleu2: no pairs");
  detail_metrics::BleuCounts agg;
  for (const auto& [hyp, refs] : pairs) {
    if (refs.empty()) throw std::invalid_argument("corpus_bleu2: pair without references");
    const auto c = detail_metrics::bleu_counts(hyp, refs);
    for (int n = 0; n < 2; ++n) {
      agg.clipped[n] += c.clipped[n];
      agg.total[n] += c.total[n];
    }
    agg.hyp_len += c.hyp_len;
    agg.ref_len += c.ref_len;
  }
  return detail_metrics::bleu_from_counts(agg);
}

/// Mean over outputs of BLEU-2 against the other outputs; 1.0 means the set
/// repeats itself, lower means more mutual diversity.
inline double self_bleu2(const std::vector<TokenSeq>& outputs) {
  if (outputs.size() < 2) throw std::invalid_argument("self_bleu2: needs at least 2 outputs");
  double acc = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    std::vector<TokenSeq> others;
    others.reserve(outputs.size() - 1);
    for (std::size_t j = 0; j < outputs.size(); ++j)
      if (j != i) others.push_back(outputs[j]);
    acc += bleu2(outputs[i], others);
  }
  return acc / static_cast<double>(outputs.size());
}

/// Distinct 4-grams over the output set divided by total 4-grams; 1.0 when no
/// output reaches four tokens.
inline double div4(const std::vector<TokenSeq>& outputs) {
  std::map<std::string, int> seen;
  std::size_t total = 0;
  for (const TokenSeq& out : outputs)
    for (const auto& [key, cnt] : detail_metrics::ngram_counts(out, 4)) {
      seen[key] += cnt;
      total += static_cast<std::size_t>(cnt);
    }
  if (total == 0) return 1.0;
  return static_cast<double>(seen.size()) / static_cast<double>(total);
}

/// Fraction of distinct sequences in the output set.
inline double uniqueness(const std::vector<TokenSeq>& outputs) {
  if (outputs.empty()) throw std::invalid_argument("uniqueness: no outputs");
  std::vector<std::string> joined;
  joined.reserve(outputs.size());
  for (const TokenSeq& o : outputs) joined.push_back(detail_corpus::join_ws(o));
  std::sort(joined.begin(), joined.end());
  const std::size_t distinct =
      static_cast<std::size_t>(std::unique(joined.begin(), joined.end()) - joined.begin());
  return static_cast<double>(distinct) / static_cast<double>(outputs.size());
}

/// Evaluation protocol: 10 generations per source; self-BLEU and Div-4 on a
/// seeded 5-subset; uniqueness on all 10.
struct EvalProtocol {
  int num_generate = 10;
  int subset_for_overlap = 5;
  std::uint64_t subset_seed = 0;

  void validate() const {
    if (subset_for_overlap > num_generate || subset_for_overlap < 2)
      throw std::invalid_argument("EvalProtocol: subset must be in [2, num_generate]");
  }
};

struct DiversityRow {
  std::size_t source_id = 0;
  double avg_bleu2 = 0.0;
  double self_bleu2 = 0.0;
  double div4 = 0.0;
  double uniqueness = 0.0;
};

struct GenerationRecord {
  std::string src;
  std::vector<Hypothesis> hypotheses;
};

struct DiversityReport {
  std::vector<DiversityRow> rows;
  std::vector<GenerationRecord> generations;
  double avg_bleu2 = 0.0;
  double self_bleu2 = 0.0;
  double div4 = 0.0;
  double uniqueness = 0.0;
  double tau = 0.0;
  std::uint64_t seed = 0;

  nlohmann::json aggregate_json() const {
    nlohmann::json j;
    j["avg_bleu2"] = avg_bleu2;
    j["self_bleu2"] = self_bleu2;
    j["div4"] = div4;
    j["uniqueness"] = uniqueness;
    j["n_sources"] = rows.size();
    j["tau"] = tau;
    j["seed"] = seed;
    return j;
  }
};

/// Strip framing ids and map the rest back to token strings.
inline TokenSeq detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
  TokenSeq out;
  for (int id : ids) {
    if (id == Vocabulary::PAD || id == Vocabulary::BOS || id == Vocabulary::EOS) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

/// Full diversity protocol over a corpus: per source, num_generate posterior
/// draws at covariance scale tau, metrics per the protocol, aggregates as
/// plain means. Per-source randomness is derived from (seed, source index).
inline DiversityReport diversity_report(const Seq2SeqModel& model, const Corpus& corpus,
                                        const Vocabulary& vocab, double tau, int beam,
                                        int max_len, std::uint64_t seed,
                                        const EvalProtocol& protocol) {
  protocol.validate();
  if (model.cfg.variant == Variant::deterministic)
    throw std::invalid_argument("diversity_report: deterministic variant cannot sample");
  DiversityReport report;
  report.tau = tau;
  report.seed = seed;
  for (std::size_t si = 0; si < corpus.size(); ++si) {
    const ParallelPair& pair = corpus[si];
    GenerationConfig cfg;
    cfg.mode = GenMode::posterior_sample;
    cfg.tau = tau;
    cfg.beam = beam;
    cfg.max_len = max_len;
    cfg.num_samples = protocol.num_generate;
    cfg.seed = derive_seed(seed, "gen", si);
    const std::vector<Hypothesis> hyps =
        diverse_generate(model, vocab.encode(pair.src), cfg);

    std::vector<TokenSeq> outputs;
    outputs.reserve(hyps.size());
    for (const Hypothesis& h : hyps) outputs.push_back(detokenize(h.tokens, vocab));

    // seeded 5-subset for the overlap metrics
    std::vector<std::size_t> idx(outputs.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng srng(derive_seed(protocol.subset_seed, "subset", si));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[srng.below(i)]);
    std::vector<TokenSeq> subset;
    for (int i = 0; i < protocol.subset_for_overlap; ++i) subset.push_back(outputs[idx[i]]);

    DiversityRow row;
    row.source_id = si;
    double bleu_acc = 0.0;
    for (const TokenSeq& out : outputs) bleu_acc += bleu2(out, pair.refs);
    row.avg_bleu2 = bleu_acc / static_cast<double>(outputs.size());
    row.self_bleu2 = self_bleu2(subset);
    row.div4 = div4(subset);
    row.uniqueness = uniqueness(outputs);
    report.rows.push_back(row);
    report.generations.push_back({detail_corpus::join_ws(pair.src), hyps});
  }
  const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(report.rows.size(), 1));
  for (const DiversityRow& r : report.rows) {
    report.avg_bleu2 += r.avg_bleu2 * inv;
    report.self_bleu2 += r.self_bleu2 * inv;
    report.div4 += r.div4 * inv;
    report.uniqueness += r.uniqueness * inv;
  }
  return report;
}

struct QualityReport {
  double corpus_bleu2 = 0.0;
  std::size_t n_sources = 0;
  int beam = 0;
  std::vector<GenerationRecord> generations;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["corpus_bleu2"] = corpus_bleu2;
    j["n_sources"] = n_sources;
    j["beam"] = beam;
    j["mode"] = "mean";
    return j;
  }
};

/// Mean-decoding quality protocol: one beam-search output per source from the
/// posterior mean, scored as corpus BLEU-2 against all references.
inline QualityReport quality_report(const Seq2SeqModel& model, const Corpus& corpus,
                                    const Vocabulary& vocab, int beam, int max_len) {
  QualityReport report;
  report.beam = beam;
  report.n_sources = corpus.size();
  std::vector<std::pair<TokenSeq, std::vector<TokenSeq>>> pairs;
  for (const ParallelPair& pair : corpus) {
    GenerationConfig cfg;
    cfg.mode = GenMode::mean;
    cfg.beam = beam;
    cfg.max_len = max_len;
    cfg.num_samples = 1;
    const std::vector<Hypothesis> hyps = generate(model, vocab.encode(pair.src), cfg);
    pairs.emplace_back(detokenize(hyps[0].tokens, vocab), pair.refs);
    report.generations.push_back({detail_corpus::join_ws(pair.src), hyps});
  }
  report.corpus_bleu2 = corpus_bleu2(pairs);
  return report;
}

}  // namespace gpvs
