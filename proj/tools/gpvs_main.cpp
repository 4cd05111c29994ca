// gpvs: training, evaluation and demo driver for the GP-prior variational
// sequence-to-sequence toolkit.
//
// Subcommands: corpus-gen, train, grid, eval-quality, eval-diversity, gp-demo.
// Exit codes: 0 success, 2 usage/config error, 3 numerical failure.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gpvs/checkpoint.hpp"
#include "gpvs/config.hpp"
#include "gpvs/corpus.hpp"
#include "gpvs/decode.hpp"
#include "gpvs/elbo.hpp"
#include "gpvs/gp_demo.hpp"
#include "gpvs/metrics.hpp"
#include "gpvs/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

std::string fmtg(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", std::gmtime(&now));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

void write_json_file(const fs::path& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

struct LoadedCorpus {
  gpvs::Vocabulary vocab;
  gpvs::Corpus train, dev, test;
};

LoadedCorpus load_corpus_dir(const std::string& dir) {
  LoadedCorpus out;
  out.vocab = gpvs::Vocabulary::load((fs::path(dir) / "vocab.txt").string());
  out.train = gpvs::load_corpus((fs::path(dir) / "train.jsonl").string(), &out.vocab, true);
  out.dev = gpvs::load_corpus((fs::path(dir) / "dev.jsonl").string(), &out.vocab, true);
  out.test = gpvs::load_corpus((fs::path(dir) / "test.jsonl").string(), &out.vocab, true);
  return out;
}

void write_generations_jsonl(const fs::path& path,
                             const std::vector<gpvs::GenerationRecord>& records,
                             const gpvs::Vocabulary& vocab, const std::string& mode,
                             double tau) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  for (const auto& rec : records) {
    json j;
    j["src"] = rec.src;
    j["mode"] = mode;
    j["tau"] = tau;
    auto hyps = json::array();
    for (const auto& h : rec.hypotheses) {
      json hj;
      hj["tokens"] = gpvs::detail_corpus::join_ws(gpvs::detokenize(h.tokens, vocab));
      hj["logprob"] = h.logprob;
      hj["latent_id"] = h.latent_id;
      hyps.push_back(std::move(hj));
    }
    j["hypotheses"] = std::move(hyps);
    f << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------- corpus-gen

struct CorpusGenArgs {
  std::string task = "copy";
  std::string out_dir;
  std::size_t n_pairs = 2000;
  std::size_t vocab_size = 50;
  std::size_t len_lo = 4, len_hi = 10;
  std::size_t n_classes = 24, class_size = 3, refs_per_src = 4;
  double holdout = 0.1;
  std::uint64_t seed = 1;
};

int cmd_corpus_gen(const CorpusGenArgs& a) {
  gpvs::Vocabulary vocab;
  gpvs::Corpus corpus;
  if (a.task == "copy") {
    corpus = gpvs::gen_copy_task(a.n_pairs, a.vocab_size, a.len_lo, a.len_hi, a.seed, &vocab);
  } else if (a.task == "synonym") {
    gpvs::SynonymTask task = gpvs::gen_synonym_task(a.n_pairs, a.n_classes, a.class_size,
                                                    a.len_lo, a.len_hi, a.refs_per_src, a.seed);
    vocab = std::move(task.vocab);
    corpus = std::move(task.corpus);
  } else {
    throw gpvs::ConfigError("task must be copy|synonym");
  }
  const gpvs::CorpusSplit split = gpvs::split_corpus(corpus, a.holdout, a.seed);

  fs::create_directories(a.out_dir);
  vocab.save((fs::path(a.out_dir) / "vocab.txt").string());
  gpvs::save_corpus(split.train, (fs::path(a.out_dir) / "train.jsonl").string());
  gpvs::save_corpus(split.dev, (fs::path(a.out_dir) / "dev.jsonl").string());
  gpvs::save_corpus(split.test, (fs::path(a.out_dir) / "test.jsonl").string());

  json manifest;
  manifest["task"] = a.task;
  manifest["n_pairs"] = a.n_pairs;
  manifest["vocab_size"] = vocab.size();
  manifest["len_lo"] = a.len_lo;
  manifest["len_hi"] = a.len_hi;
  if (a.task == "synonym") {
    manifest["n_classes"] = a.n_classes;
    manifest["class_size"] = a.class_size;
    manifest["refs_per_src"] = a.refs_per_src;
  }
  manifest["holdout"] = a.holdout;
  manifest["seed"] = a.seed;
  manifest["splits"] = {{"train", split.train.size()},
                        {"dev", split.dev.size()},
                        {"test", split.test.size()}};
  write_json_file(fs::path(a.out_dir) / "manifest.json", manifest);
  std::cout << "wrote " << corpus.size() << " pairs to " << a.out_dir << "\n";
  return kExitOk;
}

// --------------------------------------------------------------------- train

int cmd_train(const gpvs::RunConfig& cfg, const json& effective) {
  if (cfg.corpus_dir.empty() || cfg.out_dir.empty())
    throw gpvs::ConfigError("train needs corpus_dir and out_dir");
  const LoadedCorpus data = load_corpus_dir(cfg.corpus_dir);
  fs::create_directories(cfg.out_dir);
  write_json_file(fs::path(cfg.out_dir) / "effective_config.json", effective);

  std::ofstream log(fs::path(cfg.out_dir) / "train_log.tsv");
  if (!log) throw std::runtime_error("cannot write training log");
  log << "# started " << timestamp() << '\n';

  const std::string ckpt = (fs::path(cfg.out_dir) / "model.ckpt").string();
  const gpvs::TrainResult result =
      gpvs::train_model(cfg, data.train, data.dev, data.vocab, ckpt, log);

  json summary;
  summary["status"] = result.status == gpvs::TrainStatus::ok ? "ok" : "numerical_failure";
  summary["epochs_run"] = result.epochs_run;
  summary["best_epoch"] = result.best_epoch;
  summary["best_dev_loss"] = result.best_dev_loss;
  summary["dev_recon_first"] = result.dev_recon_first;
  summary["dev_recon_best"] = result.dev_recon_best;
  summary["stopped_early"] = result.stopped_early;
  write_json_file(fs::path(cfg.out_dir) / "train_summary.json", summary);

  if (result.status != gpvs::TrainStatus::ok) {
    std::cerr << "training aborted on non-finite loss; last good checkpoint kept\n";
    return kExitNumerical;
  }
  std::cout << "best dev loss " << fmtg(result.best_dev_loss) << " at epoch "
            << result.best_epoch << "; checkpoint " << ckpt << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------- grid

int cmd_grid(const gpvs::RunConfig& base, const json& effective,
             const std::vector<double>& v_list, const std::vector<double>& r_list) {
  if (base.corpus_dir.empty() || base.out_dir.empty())
    throw gpvs::ConfigError("grid needs corpus_dir and out_dir");
  if (base.variant != "gp") throw gpvs::ConfigError("grid searches the gp variant only");
  for (double v : v_list)
    if (v < 0.01 || v > 100.0) throw gpvs::ConfigError("grid v outside [0.01, 100]");
  for (double r : r_list)
    if (r < 0.0001 || r > 10.0) throw gpvs::ConfigError("grid r outside [0.0001, 10]");

  const LoadedCorpus data = load_corpus_dir(base.corpus_dir);
  fs::create_directories(base.out_dir);
  write_json_file(fs::path(base.out_dir) / "effective_config.json", effective);

  struct Cell {
    double v, r;
    double dev_loss = std::numeric_limits<double>::quiet_NaN();
    double dev_bleu2 = std::numeric_limits<double>::quiet_NaN();
    bool failed = false;
  };
  std::vector<Cell> cells;
  for (double v : v_list)
    for (double r : r_list) cells.push_back({v, r});

  std::size_t workers = 1;
  if (const char* env = std::getenv("GPVSEQ_THREADS")) {
    const long parsed = std::strtol(env, nullptr, 10);
    if (parsed >= 1) workers = static_cast<std::size_t>(parsed);
  }
  workers = std::min<std::size_t>(workers, cells.size());

  std::atomic<std::size_t> next{0};
  auto run_cell = [&](Cell& cell) {
    gpvs::RunConfig cfg = base;
    cfg.v = cell.v;
    cfg.r = cell.r;
    const fs::path cell_dir =
        fs::path(base.out_dir) / ("cell_v" + fmtg(cell.v) + "_r" + fmtg(cell.r));
    fs::create_directories(cell_dir);
    std::ofstream log(cell_dir / "train_log.tsv");
    log << "# started " << timestamp() << '\n';
    try {
      const gpvs::TrainResult res = gpvs::train_model(
          cfg, data.train, data.dev, data.vocab, (cell_dir / "model.ckpt").string(), log);
      if (res.status != gpvs::TrainStatus::ok) {
        cell.failed = true;
        return;
      }
      cell.dev_loss = res.best_dev_loss;
      const gpvs::QualityReport q =
          gpvs::quality_report(res.model, data.dev, data.vocab, cfg.beam, cfg.max_len);
      cell.dev_bleu2 = q.corpus_bleu2;
    } catch (const gpvs::linalg::NotPositiveDefinite&) {
      cell.failed = true;
    }
  };
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      run_cell(cells[i]);
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::size_t best = 0;
  bool any_ok = false;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].failed) continue;
    if (!any_ok || cells[i].dev_loss < cells[best].dev_loss) {
      best = i;
      any_ok = true;
    }
  }
  std::ofstream csv(fs::path(base.out_dir) / "grid.csv");
  csv << "v,r,dev_loss,dev_bleu2,best\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const Cell& c = cells[i];
    csv << fmtg(c.v) << ',' << fmtg(c.r) << ','
        << (c.failed ? "failed" : fmtg(c.dev_loss)) << ','
        << (c.failed ? "failed" : fmtg(c.dev_bleu2)) << ','
        << ((any_ok && i == best) ? 1 : 0) << '\n';
  }
  std::cout << "grid complete: " << cells.size() << " cells -> "
            << (fs::path(base.out_dir) / "grid.csv").string() << "\n";
  return kExitOk;
}

// -------------------------------------------------------------- eval-quality

int cmd_eval_quality(const std::string& checkpoint, const std::string& corpus_path,
                     const std::string& vocab_path, const std::string& out_dir, int beam,
                     int max_len) {
  const gpvs::Seq2SeqModel model = gpvs::load_checkpoint(checkpoint);
  const gpvs::Vocabulary vocab = gpvs::Vocabulary::load(vocab_path);
  if (vocab.size() != model.cfg.vocab_size)
    throw gpvs::ConfigError("vocabulary size does not match checkpoint");
  const gpvs::Corpus corpus = gpvs::load_corpus(corpus_path, &vocab, true);

  const gpvs::QualityReport report =
      gpvs::quality_report(model, corpus, vocab, beam, max_len);
  fs::create_directories(out_dir);
  write_json_file(fs::path(out_dir) / "quality.json", report.to_json());
  write_generations_jsonl(fs::path(out_dir) / "generations.jsonl", report.generations,
                          vocab, "mean", 0.0);
  json args;
  args["checkpoint"] = checkpoint;
  args["corpus"] = corpus_path;
  args["beam"] = beam;
  args["max_len"] = max_len;
  write_json_file(fs::path(out_dir) / "effective_config.json", args);
  std::cout << "corpus BLEU-2 " << fmtg(report.corpus_bleu2) << " over "
            << report.n_sources << " sources\n";
  return kExitOk;
}

// ------------------------------------------------------------ eval-diversity

int cmd_eval_diversity(const std::string& checkpoint, const std::string& corpus_path,
                       const std::string& vocab_path, const std::string& out_dir,
                       double tau, std::uint64_t seed, std::uint64_t subset_seed, int beam,
                       int max_len, std::size_t limit) {
  const gpvs::Seq2SeqModel model = gpvs::load_checkpoint(checkpoint);
  if (model.cfg.variant == gpvs::Variant::deterministic)
    throw gpvs::ConfigError("eval-diversity needs a normal or gp checkpoint");
  const gpvs::Vocabulary vocab = gpvs::Vocabulary::load(vocab_path);
  if (vocab.size() != model.cfg.vocab_size)
    throw gpvs::ConfigError("vocabulary size does not match checkpoint");
  gpvs::Corpus corpus = gpvs::load_corpus(corpus_path, &vocab, true);
  if (limit > 0 && corpus.size() > limit) corpus.resize(limit);

  gpvs::EvalProtocol protocol;
  protocol.subset_seed = subset_seed;
  const gpvs::DiversityReport report =
      gpvs::diversity_report(model, corpus, vocab, tau, beam, max_len, seed, protocol);

  fs::create_directories(out_dir);
  std::ofstream csv(fs::path(out_dir) / "diversity.csv");
  csv << "source_id,avg_bleu2,self_bleu2,div4,uniqueness\n";
  for (const auto& row : report.rows)
    csv << row.source_id << ',' << fmtg(row.avg_bleu2) << ',' << fmtg(row.self_bleu2)
        << ',' << fmtg(row.div4) << ',' << fmtg(row.uniqueness) << '\n';
  write_json_file(fs::path(out_dir) / "diversity.json", report.aggregate_json());
  write_generations_jsonl(fs::path(out_dir) / "generations.jsonl", report.generations,
                          vocab, "posterior_sample", tau);
  json args;
  args["checkpoint"] = checkpoint;
  args["corpus"] = corpus_path;
  args["tau"] = tau;
  args["seed"] = seed;
  args["subset_seed"] = subset_seed;
  args["beam"] = beam;
  args["max_len"] = max_len;
  args["limit"] = limit;
  write_json_file(fs::path(out_dir) / "effective_config.json", args);
  std::cout << "self-BLEU " << fmtg(report.self_bleu2) << ", Div-4 " << fmtg(report.div4)
            << ", uniqueness " << fmtg(report.uniqueness) << " over "
            << report.rows.size() << " sources\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GP-prior variational sequence-to-sequence toolkit"};
  app.require_subcommand(1);

  // corpus-gen
  CorpusGenArgs cg;
  CLI::App* sc_gen = app.add_subcommand("corpus-gen", "generate a synthetic corpus");
  sc_gen->add_option("--task", cg.task, "copy|synonym");
  sc_gen->add_option("--out", cg.out_dir, "output directory")->required();
  sc_gen->add_option("--n-pairs", cg.n_pairs);
  sc_gen->add_option("--vocab-size", cg.vocab_size, "copy task vocabulary size");
  sc_gen->add_option("--len-lo", cg.len_lo);
  sc_gen->add_option("--len-hi", cg.len_hi);
  sc_gen->add_option("--n-classes", cg.n_classes, "synonym task classes");
  sc_gen->add_option("--class-size", cg.class_size);
  sc_gen->add_option("--refs-per-src", cg.refs_per_src);
  sc_gen->add_option("--holdout", cg.holdout, "dev and test ratio each");
  sc_gen->add_option("--seed", cg.seed);

  // train
  std::string train_config;
  std::vector<std::string> train_sets;
  CLI::App* sc_train = app.add_subcommand("train", "train a model");
  sc_train->add_option("--config", train_config, "JSON config file");
  sc_train->add_option("--set", train_sets, "key=value overrides");

  // grid
  std::string grid_config;
  std::vector<std::string> grid_sets;
  std::vector<double> grid_v, grid_r;
  CLI::App* sc_grid = app.add_subcommand("grid", "grid search over kernel v and r");
  sc_grid->add_option("--config", grid_config, "JSON config file");
  sc_grid->add_option("--set", grid_sets, "key=value overrides");
  sc_grid->add_option("--v-list", grid_v, "signal scales")->required();
  sc_grid->add_option("--r-list", grid_r, "length scales")->required();

  // eval-quality
  std::string eq_ckpt, eq_corpus, eq_vocab, eq_out;
  int eq_beam = 10, eq_max_len = 16;
  CLI::App* sc_eq = app.add_subcommand("eval-quality", "mean-decoding BLEU-2");
  sc_eq->add_option("--checkpoint", eq_ckpt)->required();
  sc_eq->add_option("--corpus", eq_corpus)->required();
  sc_eq->add_option("--vocab", eq_vocab)->required();
  sc_eq->add_option("--out", eq_out)->required();
  sc_eq->add_option("--beam", eq_beam);
  sc_eq->add_option("--max-len", eq_max_len);

  // eval-diversity
  std::string ed_ckpt, ed_corpus, ed_vocab, ed_out;
  double ed_tau = 1.0;
  std::uint64_t ed_seed = 1, ed_subset_seed = 1;
  int ed_beam = 10, ed_max_len = 16;
  std::size_t ed_limit = 0;
  CLI::App* sc_ed = app.add_subcommand("eval-diversity", "sampled diversity metrics");
  sc_ed->add_option("--checkpoint", ed_ckpt)->required();
  sc_ed->add_option("--corpus", ed_corpus)->required();
  sc_ed->add_option("--vocab", ed_vocab)->required();
  sc_ed->add_option("--out", ed_out)->required();
  sc_ed->add_option("--tau", ed_tau, "covariance scale");
  sc_ed->add_option("--seed", ed_seed);
  sc_ed->add_option("--subset-seed", ed_subset_seed);
  sc_ed->add_option("--beam", ed_beam);
  sc_ed->add_option("--max-len", ed_max_len);
  sc_ed->add_option("--limit", ed_limit, "evaluate only the first N sources (0 = all)");

  // gp-demo
  double gd_v = 1.0, gd_r = 1.0, gd_sigma2 = 0.0;
  std::string gd_mean_mode = "zero", gd_out = "gp_demo.csv";
  std::size_t gd_n_train = 5;
  std::uint64_t gd_seed = 1;
  CLI::App* sc_gd = app.add_subcommand("gp-demo", "sample prior/posterior functions to CSV");
  sc_gd->add_option("--v", gd_v);
  sc_gd->add_option("--r", gd_r);
  sc_gd->add_option("--sigma2", gd_sigma2);
  sc_gd->add_option("--mean-mode", gd_mean_mode, "identity|zero");
  sc_gd->add_option("--n-train", gd_n_train);
  sc_gd->add_option("--seed", gd_seed);
  sc_gd->add_option("--out", gd_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (sc_gen->parsed()) return cmd_corpus_gen(cg);
    if (sc_train->parsed()) {
      json effective;
      const gpvs::RunConfig cfg = gpvs::load_config(train_config, train_sets, &effective);
      return cmd_train(cfg, effective);
    }
    if (sc_grid->parsed()) {
      json effective;
      const gpvs::RunConfig cfg = gpvs::load_config(grid_config, grid_sets, &effective);
      return cmd_grid(cfg, effective, grid_v, grid_r);
    }
    if (sc_eq->parsed())
      return cmd_eval_quality(eq_ckpt, eq_corpus, eq_vocab, eq_out, eq_beam, eq_max_len);
    if (sc_ed->parsed())
      return cmd_eval_diversity(ed_ckpt, ed_corpus, ed_vocab, ed_out, ed_tau, ed_seed,
                                ed_subset_seed, ed_beam, ed_max_len, ed_limit);
    if (sc_gd->parsed()) {
      const gpvs::GpPriorSpec spec = gpvs::GpPriorSpec::checked(
          gd_v, gd_r, gd_sigma2, gpvs::mean_mode_from_string(gd_mean_mode));
      const gpvs::GpDemoResult demo = gpvs::run_gp_demo(spec, gd_n_train, gd_seed);
      gpvs::write_gp_demo_csv(demo, gd_out);
      std::cout << "wrote " << demo.rows.size() << " rows to " << gd_out << "\n";
      return kExitOk;
    }
  } catch (const gpvs::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const gpvs::linalg::NotPositiveDefinite& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
