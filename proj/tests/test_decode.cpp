#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "gpvs/decode.hpp"
#include "gpvs/seq2seq.hpp"
#include "testutil.hpp"

using namespace gpvs;
using gpvs::ad::Tape;
using gpvs::ad::Tensor;

namespace {

ModelConfig micro_config(Variant variant, std::size_t vocab) {
  ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.embed_dim = 3;
  cfg.hidden_dim = 4;
  cfg.latent_dim = 4;
  cfg.variant = variant;
  cfg.gp = GpPriorSpec{1.0, 1.0, 0.1, MeanMode::identity};
  return cfg;
}

struct Scored {
  std::vector<int> tokens;
  double logprob;
};

/// Exhaustive enumeration of every finalized sequence of content length up to
/// max_len, scored with the same per-step log-softmax chain. PAD and BOS are
/// excluded from expansion the way the search is.
void enumerate(const Seq2SeqModel& model, const Tensor& z, Tape& tape, Tensor state,
               std::vector<int> prefix, double logprob, int max_len,
               std::vector<Scored>& out) {
  if (!prefix.empty() && prefix.back() == Vocabulary::EOS) {
    out.push_back({prefix, logprob});
    return;
  }
  if (static_cast<int>(prefix.size()) == max_len) {
    out.push_back({prefix, logprob});
    return;
  }
  const int y_prev = prefix.empty() ? Vocabulary::BOS : prefix.back();
  const DecodeStep step = decode_step(tape, model, state, y_prev, z);
  const Tensor lp = tape.log_softmax(step.logits);
  for (std::size_t v = 0; v < model.cfg.vocab_size; ++v) {
    if (v == static_cast<std::size_t>(Vocabulary::PAD) ||
        v == static_cast<std::size_t>(Vocabulary::BOS))
      continue;
    std::vector<int> next = prefix;
    next.push_back(static_cast<int>(v));
    enumerate(model, z, tape, step.state, std::move(next), logprob + lp.value()[v],
              max_len, out);
  }
}

bool better(const Scored& a, const Scored& b) {
  if (a.logprob != b.logprob) return a.logprob > b.logprob;
  return a.tokens < b.tokens;
}

}  // namespace

TEST_CASE("beam search against exhaustive enumeration") {
  const Seq2SeqModel model = Seq2SeqModel::init(micro_config(Variant::deterministic, 6), 7);
  Tape tape(false);
  const Tensor h = encode(tape, model, {4, 5});

  std::vector<Scored> all;
  enumerate(model, h, tape, Tensor::zeros({1, 4}), {}, 0.0, 3, all);
  std::sort(all.begin(), all.end(), better);
  REQUIRE_FALSE(all.empty());

  SECTION("full-width beam equals the exhaustive argmax") {
    const int full = static_cast<int>(all.size());
    const std::vector<Hypothesis> hyps = beam_search(model, h, full, 3);
    REQUIRE_FALSE(hyps.empty());
    CHECK(hyps[0].tokens == all[0].tokens);
    CHECK(hyps[0].logprob == Catch::Approx(all[0].logprob).margin(1e-12));
  }
  SECTION("narrow beams never report a score above the true optimum") {
    for (int b : {1, 2, 3, 10}) {
      const std::vector<Hypothesis> hyps = beam_search(model, h, b, 3);
      REQUIRE_FALSE(hyps.empty());
      CHECK(hyps[0].logprob <= all[0].logprob + 1e-12);
    }
  }
  SECTION("monotone beam property") {
    double prev = -1e300;
    for (int b = 1; b <= 8; ++b) {
      const std::vector<Hypothesis> hyps = beam_search(model, h, b, 3);
      REQUIRE_FALSE(hyps.empty());
      CHECK(hyps[0].logprob >= prev - 1e-12);
      prev = hyps[0].logprob;
    }
  }
}

TEST_CASE("beam width one is greedy argmax decoding") {
  const Seq2SeqModel model = Seq2SeqModel::init(micro_config(Variant::deterministic, 7), 19);
  Tape tape(false);
  const Tensor h = encode(tape, model, {4, 6, 5});

  // greedy rollout by hand
  std::vector<int> greedy;
  Tensor s = Tensor::zeros({1, 4});
  for (int t = 0; t < 5; ++t) {
    const int y_prev = greedy.empty() ? Vocabulary::BOS : greedy.back();
    const DecodeStep step = decode_step(tape, model, s, y_prev, h);
    s = step.state;
    const auto& logits = step.logits.value();
    std::size_t best = 2;
    for (std::size_t v = 2; v < logits.size(); ++v)
      if (logits[v] > logits[best]) best = v;
    greedy.push_back(static_cast<int>(best));
    if (best == Vocabulary::EOS) break;
  }
  const std::vector<Hypothesis> hyps = beam_search(model, h, 1, 5);
  REQUIRE(hyps.size() == 1);
  CHECK(hyps[0].tokens == greedy);
}

TEST_CASE("beam scores audit against independent recomputation") {
  const Seq2SeqModel model = Seq2SeqModel::init(micro_config(Variant::deterministic, 6), 29);
  Tape tape(false);
  const Tensor h = encode(tape, model, {4, 5, 4});
  const std::vector<Hypothesis> hyps = beam_search(model, h, 5, 4);
  for (const Hypothesis& hyp : hyps) {
    Tensor s = Tensor::zeros({1, 4});
    long double acc = 0.0;
    for (std::size_t t = 0; t < hyp.tokens.size(); ++t) {
      const int y_prev = t == 0 ? Vocabulary::BOS : hyp.tokens[t - 1];
      const DecodeStep step = decode_step(tape, model, s, y_prev, h);
      s = step.state;
      const auto& logits = step.logits.value();
      long double mx = logits[0];
      for (double v : logits) mx = std::max<long double>(mx, v);
      long double z = 0.0;
      for (double v : logits) z += std::exp(static_cast<long double>(v) - mx);
      acc += logits[static_cast<std::size_t>(hyp.tokens[t])] - (mx + std::log(z));
    }
    CHECK(hyp.logprob == Catch::Approx(static_cast<double>(acc)).margin(1e-9));
    CHECK(hyp.logprob <= 0.0);
  }
}

TEST_CASE("output invariants") {
  const Seq2SeqModel model = Seq2SeqModel::init(micro_config(Variant::deterministic, 9), 31);
  Tape tape(false);
  const Tensor h = encode(tape, model, {5, 6});
  for (int beam : {1, 3, 10}) {
    for (const Hypothesis& hyp : beam_search(model, h, beam, 6)) {
      CHECK(hyp.tokens.size() <= 6);
      for (int id : hyp.tokens) CHECK(id < 9);
      if (hyp.tokens.size() < 6) CHECK(hyp.tokens.back() == Vocabulary::EOS);
    }
  }
}

TEST_CASE("generate modes") {
  SECTION("mean mode repeats one latent and is run-to-run stable") {
    const Seq2SeqModel model = Seq2SeqModel::init(micro_config(Variant::gp, 8), 37);
    GenerationConfig cfg;
    cfg.mode = GenMode::mean;
    cfg.beam = 3;
    cfg.max_len = 5;
    cfg.num_samples = 4;
    const auto a = generate(model, {4, 5}, cfg);
    const auto b = generate(model, {4, 5}, cfg);
    REQUIRE(a.size() == 4);
    for (std::size_t k = 1; k < a.size(); ++k) CHECK(a[k].tokens == a[0].tokens);
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(a[k].tokens == b[k].tokens);
      CHECK(a[k].logprob == b[k].logprob);
      CHECK(a[k].latent_id == static_cast<int>(k));
    }
  }
  SECTION("posterior sampling at tau 0 equals mean mode") {
    const Seq2SeqModel model = Seq2SeqModel::init(micro_config(Variant::gp, 8), 41);
    GenerationConfig mean_cfg;
    mean_cfg.mode = GenMode::mean;
    mean_cfg.beam = 3;
    mean_cfg.max_len = 5;
    GenerationConfig samp_cfg = mean_cfg;
    samp_cfg.mode = GenMode::posterior_sample;
    samp_cfg.tau = 0.0;
    samp_cfg.seed = 7;
    const auto a = generate(model, {4, 6}, mean_cfg);
    const auto b = generate(model, {4, 6}, samp_cfg);
    CHECK(a[0].tokens == b[0].tokens);
  }
  SECTION("prior sampling needs the gp variant") {
    const Seq2SeqModel model = Seq2SeqModel::init(micro_config(Variant::normal, 8), 43);
    GenerationConfig cfg;
    cfg.mode = GenMode::prior_sample;
    CHECK_THROWS_AS(generate(model, {4}, cfg), std::invalid_argument);
  }
  SECTION("prior sampling is deterministic per seed") {
    const Seq2SeqModel model = Seq2SeqModel::init(micro_config(Variant::gp, 8), 47);
    GenerationConfig cfg;
    cfg.mode = GenMode::prior_sample;
    cfg.beam = 2;
    cfg.max_len = 5;
    cfg.num_samples = 3;
    cfg.seed = 11;
    const auto a = generate(model, {4, 5, 6}, cfg);
    const auto b = generate(model, {4, 5, 6}, cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(a[k].tokens == b[k].tokens);
      CHECK(a[k].logprob == b[k].logprob);
    }
  }
  SECTION("deterministic variant rejects sampling modes") {
    const Seq2SeqModel model =
        Seq2SeqModel::init(micro_config(Variant::deterministic, 8), 51);
    GenerationConfig cfg;
    cfg.mode = GenMode::posterior_sample;
    CHECK_THROWS_AS(generate(model, {4}, cfg), std::invalid_argument);
  }
}

TEST_CASE("diverse generation") {
  const Seq2SeqModel model = Seq2SeqModel::init(micro_config(Variant::gp, 8), 53);
  GenerationConfig cfg;
  cfg.mode = GenMode::posterior_sample;
  cfg.tau = 1.0;
  cfg.beam = 3;
  cfg.max_len = 5;
  cfg.num_samples = 10;
  cfg.seed = 17;

  SECTION("requires the posterior sampling mode") {
    GenerationConfig bad = cfg;
    bad.mode = GenMode::mean;
    CHECK_THROWS_AS(diverse_generate(model, {4, 5}, bad), std::invalid_argument);
  }
  SECTION("tau 0 collapses all draws") {
    GenerationConfig zero = cfg;
    zero.tau = 0.0;
    const auto hyps = diverse_generate(model, {4, 5}, zero);
    REQUIRE(hyps.size() == 10);
    for (const auto& h : hyps) CHECK(h.tokens == hyps[0].tokens);
  }
  SECTION("fixed seed reproduces the full list with draw indices") {
    const auto a = diverse_generate(model, {4, 5}, cfg);
    const auto b = diverse_generate(model, {4, 5}, cfg);
    REQUIRE(a.size() == 10);
    for (std::size_t k = 0; k < 10; ++k) {
      CHECK(a[k].tokens == b[k].tokens);
      CHECK(a[k].latent_id == static_cast<int>(k));
    }
  }
}
