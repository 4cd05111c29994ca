#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "gpvs/rng.hpp"

namespace gpvs {

// Deterministic synthetic corpora with multiple valid targets, vocabulary
// management, JSONL round-tripping and padded batch iteration.

struct Vocabulary {
  static constexpr int PAD = 0;
  static constexpr int BOS = 1;
  static constexpr int EOS = 2;
  static constexpr int UNK = 3;

  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> index;

  static Vocabulary with_content(const std::vector<std::string>& content) {
    Vocabulary v;
    v.tokens = {"<pad>", "<bos>", "<eos>", "<unk>"};
    v.tokens.insert(v.tokens.end(), content.begin(), content.end());
    for (std::size_t i = 0; i < v.tokens.size(); ++i)
      if (!v.index.emplace(v.tokens[i], static_cast<int>(i)).second)
        throw std::invalid_argument("vocabulary: duplicate token " + v.tokens[i]);
    return v;
  }

  std::size_t size() const { return tokens.size(); }

  int id(const std::string& tok, bool strict = false) const {
    auto it = index.find(tok);
    if (it != index.end()) return it->second;
    if (strict) throw std::invalid_argument("unknown token: " + tok);
    return UNK;
  }

  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens.size())
      throw std::invalid_argument("token id out of range: " + std::to_string(id));
    return tokens[static_cast<std::size_t>(id)];
  }

  std::vector<int> encode(const std::vector<std::string>& toks, bool strict = false) const {
    std::vector<int> out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(id(t, strict));
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write vocabulary file: " + path);
    for (const auto& t : tokens) f << t << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read vocabulary file: " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(f, line)) v.tokens.push_back(line);
    if (v.tokens.size() < 4 || v.tokens[0] != "<pad>" || v.tokens[1] != "<bos>" ||
        v.tokens[2] != "<eos>" || v.tokens[3] != "<unk>")
      throw std::runtime_error("vocabulary file missing reserved tokens: " + path);
    for (std::size_t i = 0; i < v.tokens.size(); ++i)
      v.index.emplace(v.tokens[i], static_cast<int>(i));
    return v;
  }
};

struct ParallelPair {
  std::vector<std::string> src;
  std::vector<std::vector<std::string>> refs;  // 1..K valid targets
};

using Corpus = std::vector<ParallelPair>;

namespace detail_corpus {

inline std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline std::string join_ws(const std::vector<std::string>& toks) {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

}  // namespace detail_corpus

/// Copy task: reference equals the source. Sanity task for reconstruction.
inline Corpus gen_copy_task(std::size_t n_pairs, std::size_t vocab_size, std::size_t len_lo,
                            std::size_t len_hi, std::uint64_t seed, Vocabulary* vocab_out) {
  if (vocab_size < 10) throw std::invalid_argument("gen_copy_task: vocab_size must be >= 10");
  if (len_lo < 1 || len_hi < len_lo)
    throw std::invalid_argument("gen_copy_task: bad length range");
  std::vector<std::string> content;
  for (std::size_t i = 0; i + 4 < vocab_size; ++i) content.push_back("w" + std::to_string(i));
  Vocabulary vocab = Vocabulary::with_content(content);
  Rng rng(derive_seed(seed, "copy_task"));
  Corpus corpus;
  corpus.reserve(n_pairs);
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const std::size_t len = len_lo + rng.below(len_hi - len_lo + 1);
    ParallelPair pair;
    pair.src.reserve(len);
    for (std::size_t i = 0; i < len; ++i)
      pair.src.push_back(content[rng.below(content.size())]);
    pair.refs = {pair.src};
    corpus.push_back(std::move(pair));
  }
  if (vocab_out) *vocab_out = std::move(vocab);
  return corpus;
}

/// Synonym task: the vocabulary is partitioned into classes of interchangeable
/// tokens. Sources use class representatives (member 0); each reference
/// replaces every token independently by a uniform member of its class.
struct SynonymTask {
  Corpus corpus;
  Vocabulary vocab;
  std::size_t n_classes = 0;
  std::size_t class_size = 0;

  static std::string member_token(std::size_t cls, std::size_t member) {
    return "c" + std::to_string(cls) + "m" + std::to_string(member);
  }

  /// True when every ref token sits in the same class as the aligned source
  /// token; the same predicate later scores generated hypotheses.
  bool valid_reference(const std::vector<std::string>& src,
                       const std::vector<std::string>& ref) const {
    if (src.size() != ref.size()) return false;
    for (std::size_t i = 0; i < src.size(); ++i)
      if (class_of(src[i]) < 0 || class_of(src[i]) != class_of(ref[i])) return false;
    return true;
  }

  int class_of(const std::string& tok) const {
    if (tok.size() < 4 || tok[0] != 'c') return -1;
    const auto m = tok.find('m');
    if (m == std::string::npos) return -1;
    try {
      const int cls = std::stoi(tok.substr(1, m - 1));
      const int mem = std::stoi(tok.substr(m + 1));
      if (cls < 0 || static_cast<std::size_t>(cls) >= n_classes) return -1;
      if (mem < 0 || static_cast<std::size_t>(mem) >= class_size) return -1;
      return cls;
    } catch (const std::exception&) {
      return -1;
    }
  }
};

inline SynonymTask gen_synonym_task(std::size_t n_pairs, std::size_t n_classes,
                                    std::size_t class_size, std::size_t len_lo,
                                    std::size_t len_hi, std::size_t refs_per_src,
                                    std::uint64_t seed) {
  if (n_classes == 0 || class_size == 0)
    throw std::invalid_argument("gen_synonym_task: empty class layout");
  if (len_lo < 1 || len_hi < len_lo)
    throw std::invalid_argument("gen_synonym_task: bad length range");
  if (refs_per_src < 1 || refs_per_src > 8)
    throw std::invalid_argument("gen_synonym_task: refs_per_src must be in 1..8");
  SynonymTask task;
  task.n_classes = n_classes;
  task.class_size = class_size;
  std::vector<std::string> content;
  for (std::size_t c = 0; c < n_classes; ++c)
    for (std::size_t m = 0; m < class_size; ++m)
      content.push_back(SynonymTask::member_token(c, m));
  task.vocab = Vocabulary::with_content(content);

  Rng rng(derive_seed(seed, "synonym_task"));
  task.corpus.reserve(n_pairs);
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const std::size_t len = len_lo + rng.below(len_hi - len_lo + 1);
    std::vector<std::size_t> classes(len);
    ParallelPair pair;
    pair.src.reserve(len);
    for (std::size_t i = 0; i < len; ++i) {
      classes[i] = rng.below(n_classes);
      pair.src.push_back(SynonymTask::member_token(classes[i], 0));
    }
    std::set<std::vector<std::string>> seen;
    for (std::size_t r = 0; r < refs_per_src; ++r) {
      std::vector<std::string> ref(len);
      for (std::size_t i = 0; i < len; ++i)
        ref[i] = SynonymTask::member_token(classes[i], rng.below(class_size));
      if (seen.insert(ref).second) pair.refs.push_back(std::move(ref));
    }
    task.corpus.push_back(std::move(pair));
  }
  return task;
}

/// JSONL: one {"src": "tok tok", "refs": ["tok ...", ...]} object per line.
inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write corpus file: " + path);
  for (const auto& pair : corpus) {
    nlohmann::json j;
    j["src"] = detail_corpus::join_ws(pair.src);
    auto refs = nlohmann::json::array();
    for (const auto& r : pair.refs) refs.push_back(detail_corpus::join_ws(r));
    j["refs"] = std::move(refs);
    f << j.dump() << '\n';
  }
}

/// Load a JSONL corpus. With a vocabulary, token coverage is checked: strict
/// raises on unknown tokens, otherwise they map to <unk> in later encoding.
inline Corpus load_corpus(const std::string& path, const Vocabulary* vocab = nullptr,
                          bool strict = false) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read corpus file: " + path);
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + ": malformed JSON at line " + std::to_string(line_no) +
                               ": " + e.what());
    }
    if (!j.contains("src") || !j.contains("refs") || !j["refs"].is_array() ||
        j["refs"].empty())
      throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                               " is missing src/refs");
    ParallelPair pair;
    pair.src = detail_corpus::split_ws(j["src"].get<std::string>());
    for (const auto& r : j["refs"])
      pair.refs.push_back(detail_corpus::split_ws(r.get<std::string>()));
    if (vocab && strict) {
      for (const auto& t : pair.src) vocab->id(t, true);
      for (const auto& r : pair.refs)
        for (const auto& t : r) vocab->id(t, true);
    }
    corpus.push_back(std::move(pair));
  }
  return corpus;
}

/// Seeded train/dev/test partition; dev and test each take `holdout_ratio`.
struct CorpusSplit {
  Corpus train, dev, test;
};

inline CorpusSplit split_corpus(const Corpus& corpus, double holdout_ratio,
                                std::uint64_t seed) {
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);
  const std::size_t n_hold = static_cast<std::size_t>(
      static_cast<double>(corpus.size()) * holdout_ratio + 0.5);
  CorpusSplit split;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const ParallelPair& p = corpus[order[i]];
    if (i < n_hold)
      split.dev.push_back(p);
    else if (i < 2 * n_hold)
      split.test.push_back(p);
    else
      split.train.push_back(p);
  }
  return split;
}

/// Padded id matrices with masks. Targets are framed BOS ... EOS; sources are
/// unframed. One uniformly chosen reference per pair per epoch.
struct Batch {
  std::vector<std::vector<int>> src_ids, tgt_ids;          // rows padded to batch width
  std::vector<std::vector<std::uint8_t>> src_mask, tgt_mask;

  std::size_t size() const { return src_ids.size(); }

  std::vector<int> src_sequence(std::size_t row) const { return unpad(src_ids, src_mask, row); }
  std::vector<int> tgt_sequence(std::size_t row) const { return unpad(tgt_ids, tgt_mask, row); }

 private:
  static std::vector<int> unpad(const std::vector<std::vector<int>>& ids,
                                const std::vector<std::vector<std::uint8_t>>& mask,
                                std::size_t row) {
    std::vector<int> out;
    for (std::size_t i = 0; i < ids[row].size(); ++i)
      if (mask[row][i]) out.push_back(ids[row][i]);
    return out;
  }
};

class BatchIter {
 public:
  BatchIter(const Corpus& corpus, const Vocabulary& vocab, std::size_t batch_size,
            std::uint64_t shuffle_seed)
      : corpus_(corpus), vocab_(vocab), batch_size_(batch_size),
        rng_(derive_seed(shuffle_seed, "batch_iter")) {
    if (batch_size_ < 1) throw std::invalid_argument("batch_iter: batch_size must be >= 1");
    order_.resize(corpus.size());
    std::iota(order_.begin(), order_.end(), 0);
    for (std::size_t i = order_.size(); i > 1; --i)
      std::swap(order_[i - 1], order_[rng_.below(i)]);
  }

  bool next(Batch& out) {
    if (cursor_ >= order_.size()) return false;
    const std::size_t end = std::min(cursor_ + batch_size_, order_.size());
    std::vector<std::vector<int>> srcs, tgts;
    for (std::size_t i = cursor_; i < end; ++i) {
      const ParallelPair& pair = corpus_[order_[i]];
      srcs.push_back(vocab_.encode(pair.src));
      const std::size_t pick = rng_.below(pair.refs.size());
      std::vector<int> tgt;
      tgt.push_back(Vocabulary::BOS);
      for (int id : vocab_.encode(pair.refs[pick])) tgt.push_back(id);
      tgt.push_back(Vocabulary::EOS);
      tgts.push_back(std::move(tgt));
    }
    cursor_ = end;
    out = pad(srcs, tgts);
    return true;
  }

 private:
  static Batch pad(const std::vector<std::vector<int>>& srcs,
                   const std::vector<std::vector<int>>& tgts) {
    Batch b;
    std::size_t sw = 0, tw = 0;
    for (const auto& s : srcs) sw = std::max(sw, s.size());
    for (const auto& t : tgts) tw = std::max(tw, t.size());
    for (std::size_t i = 0; i < srcs.size(); ++i) {
      std::vector<int> sr(sw, Vocabulary::PAD), tr(tw, Vocabulary::PAD);
      std::vector<std::uint8_t> sm(sw, 0), tm(tw, 0);
      std::copy(srcs[i].begin(), srcs[i].end(), sr.begin());
      std::fill(sm.begin(), sm.begin() + static_cast<long>(srcs[i].size()), 1);
      std::copy(tgts[i].begin(), tgts[i].end(), tr.begin());
      std::fill(tm.begin(), tm.begin() + static_cast<long>(tgts[i].size()), 1);
      b.src_ids.push_back(std::move(sr));
      b.src_mask.push_back(std::move(sm));
      b.tgt_ids.push_back(std::move(tr));
      b.tgt_mask.push_back(std::move(tm));
    }
    return b;
  }

  const Corpus& corpus_;
  const Vocabulary& vocab_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace gpvs
