// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ciffuse/checkpoint.hpp"
#include "ciffuse/data.hpp"
#include "ciffuse/encoders.hpp"
#include "ciffuse/errors.hpp"
#include "ciffuse/fusion.hpp"
#include "ciffuse/grad_suite.hpp"
#include "ciffuse/metrics.hpp"
#include "ciffuse/text_io.hpp"
#include "ciffuse/training.hpp"

namespace fs = std::filesystem;
using namespace ciffuse;

namespace {

constexpr int kOk = 0;
constexpr int kNumeric = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw UsageError(what + " not found: " + path);
}

std::string join_tokens(const std::vector<int>& t) {
  std::string s;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(t[i]);
  }
  return s;
}

training::ExperimentConfig config_from_checkpoint(const checkpoint::Checkpoint& ck) {
  training::ExperimentConfig cfg;
  for (const auto& [k, v] : ck.config) cfg.apply(k, v);
  cfg.validate();
  return cfg;
}

// id -> tokens, from a hypothesis file (`id<TAB>tokens`) or a dataset file.
std::vector<std::pair<std::string, std::vector<int>>> read_transcripts(const std::string& path) {
  require_file(path, "transcript file");
  std::ifstream is(path);
  std::string first;
  std::getline(is, first);
  if (first.rfind("cif-fuse-data", 0) == 0) {
    std::vector<std::pair<std::string, std::vector<int>>> out;
    for (auto& u : data::load_dataset(path).utterances) out.emplace_back(u.id, u.tokens);
    return out;
  }
  is.clear();
  is.seekg(0);
  std::vector<std::pair<std::string, std::vector<int>>> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(is, line)) {
    ++no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError(path + " line " + std::to_string(no) + ": expected 'id<TAB>tokens'");
    std::vector<int> toks;
    for (auto s : text::split_ws(std::string_view(line).substr(tab + 1))) {
      auto v = text::parse_int(s);
      if (!v) throw ParseError(path + " line " + std::to_string(no) + ": bad token '" + std::string(s) + "'");
      toks.push_back(static_cast<int>(*v));
    }
    out.emplace_back(line.substr(0, tab), std::move(toks));
  }
  return out;
}

int cmd_gen_data(const std::string& spec_path, std::size_t count, const std::string& out,
                 std::uint64_t seed) {
  data::TaskSpec spec;
  if (!spec_path.empty()) {
    require_file(spec_path, "task spec");
    spec = data::load_task_spec(spec_path);
  }
  if (count == 0) throw UsageError("--count must be positive");
  const auto ds = data::generate_dataset(spec, count, seed);
  data::save_dataset(out, ds);
  double frames = 0, tokens = 0;
  for (const auto& u : ds.utterances) {
    frames += static_cast<double>(u.frames);
    tokens += static_cast<double>(u.tokens.size());
  }
  std::printf("wrote %zu utterances to %s: mean T %.3f, mean n* %.3f\n", count, out.c_str(),
              frames / static_cast<double>(count), tokens / static_cast<double>(count));
  return kOk;
}

struct PretrainArgs {
  std::string corpus, out, config;
  std::size_t steps = 1000;
  std::uint64_t seed = 1;
  double mask_rate = 0.15;
  std::size_t batch_size = 16;
  double lr = 3e-3;
  double heldout = 0.1;
};

int cmd_pretrain_lm(const PretrainArgs& a) {
  require_file(a.corpus, "corpus");
  training::ExperimentConfig cfg;
  if (!a.config.empty()) {
    require_file(a.config, "config");
    cfg = training::load_config(a.config);
  }
  const auto ds = data::load_dataset(a.corpus);
  cfg.model.linguistic.vocab_size = ds.vocab_size;
  auto seqs = ds.token_sequences();
  std::size_t n_held = static_cast<std::size_t>(a.heldout * static_cast<double>(seqs.size()));
  if (seqs.size() >= 2 && n_held == 0) n_held = 1;
  std::vector<std::vector<int>> held(seqs.end() - static_cast<long>(n_held), seqs.end());
  seqs.resize(seqs.size() - n_held);

  encoders::LanguageModel lm(cfg.model.linguistic, a.seed);
  encoders::PretrainConfig pc;
  pc.steps = a.steps;
  pc.mask_rate = a.mask_rate;
  pc.batch_size = a.batch_size;
  pc.lr = a.lr;
  pc.seed = a.seed;
  pc.parallel = cfg.train.parallel;
  const auto losses = encoders::pretrain_mask_predict(lm, seqs, pc);
  if (!losses.empty()) std::printf("final train masked CE %.6f after %zu steps\n", losses.back(), losses.size());

  if (!held.empty()) {
    const auto ev = encoders::evaluate_mask_predict(lm, held, a.mask_rate, a.seed ^ 0x68656c64);
    std::printf("held-out masked accuracy %.4f (CE %.6f over %zu masked tokens, %zu sequences)\n",
                ev.accuracy, ev.loss, ev.masked, held.size());
  }
  checkpoint::save(a.out, checkpoint::capture(cfg.entries(), a.steps, "pretrained", lm.store, nullptr));
  std::printf("wrote %s\n", a.out.c_str());
  return kOk;
}

struct TrainArgs {
  std::string data, dev, config, lm_init = "none", out;
  std::optional<std::uint64_t> seed;
  bool resume = false;
};

int cmd_train(const TrainArgs& a) {
  require_file(a.data, "training data");
  if (!a.dev.empty()) require_file(a.dev, "dev data");
  training::ExperimentConfig cfg;
  if (!a.config.empty()) {
    require_file(a.config, "config");
    cfg = training::load_config(a.config);
  }
  if (a.seed) cfg.train.seed = *a.seed;
  fs::create_directories(a.out);
  const fs::path ckpt_path = fs::path(a.out) / "model.ckpt";
  const fs::path metrics_path = fs::path(a.out) / "metrics.tsv";

  const auto train_set = data::load_dataset(a.data);
  std::optional<data::Dataset> dev_set;
  if (!a.dev.empty()) dev_set = data::load_dataset(a.dev);

  training::TrainState state;
  std::optional<fusion::FusionModel> model;
  const bool resuming = a.resume && fs::exists(ckpt_path);
  if (resuming) {
    const auto ck = checkpoint::load(ckpt_path);
    if (ck.config != cfg.entries())
      throw ConfigError("--resume: configuration differs from the one stored in " + ckpt_path.string());
    model.emplace(cfg.model, cfg.train.seed);
    checkpoint::restore_params(ck, model->params());
    state.step = ck.step;
    state.adam = checkpoint::restore_adam(ck, model->params());
    std::printf("resuming from step %llu\n", static_cast<unsigned long long>(state.step));
  } else {
    model.emplace(cfg.model, cfg.train.seed);
    if (a.lm_init != "none") {
      require_file(a.lm_init, "LM checkpoint");
      nn::ParamStore pre;
      checkpoint::fill_store(checkpoint::load(a.lm_init), pre);
      model->load_linguistic(pre);
    }
  }
  training::check_compatible(*model, train_set);
  if (dev_set) training::check_compatible(*model, *dev_set);

  std::ofstream metrics(metrics_path, resuming ? std::ios::app : std::ios::trunc);
  if (!metrics) throw UsageError("cannot write " + metrics_path.string());
  if (!resuming) training::write_metrics_header(metrics, cfg);

  training::TrainHooks hooks;
  hooks.metrics = &metrics;
  hooks.checkpoint = [&](const training::TrainState& st) {
    const char* phase = training::phase_name(training::phase_at(cfg.lr, st.step));
    checkpoint::save(ckpt_path,
                     checkpoint::capture(cfg.entries(), st.step, phase, model->params(), &st.adam));
  };
  const auto res = training::train(*model, state, train_set, dev_set ? &*dev_set : nullptr, cfg, hooks);
  metrics.flush();
  if (!res.log.empty() && res.log.back().cer)
    std::printf("step %llu dev CER %.3f%%\n", static_cast<unsigned long long>(res.log.back().step),
                *res.log.back().cer);
  std::printf("wrote %s and %s\n", ckpt_path.c_str(), metrics_path.c_str());
  return kOk;
}

int cmd_decode(const std::string& ckpt, const std::string& data_path, double th,
               const std::string& out) {
  require_file(ckpt, "checkpoint");
  require_file(data_path, "data");
  const auto ck = checkpoint::load(ckpt);
  const auto cfg = config_from_checkpoint(ck);
  fusion::FusionModel model(cfg.model, cfg.train.seed);
  checkpoint::restore_params(ck, model.params());
  const auto ds = data::load_dataset(data_path);
  training::check_compatible(model, ds);
  const auto rep = training::evaluate(model, ds, th, cfg.train.parallel);
  std::ofstream os(out);
  if (!os) throw UsageError("cannot write " + out);
  for (std::size_t i = 0; i < ds.utterances.size(); ++i)
    os << ds.utterances[i].id << '\t' << join_tokens(rep.hyps[i]) << '\n';
  std::printf("decoded %zu utterances (TH %s), CER against stored references %.3f%%\n",
              ds.utterances.size(), text::format_double(th).c_str(), rep.cer);
  return kOk;
}

int cmd_eval(const std::string& hyp_path, const std::string& ref_path) {
  const auto hyps = read_transcripts(hyp_path);
  const auto refs = read_transcripts(ref_path);
  std::map<std::string, const std::vector<int>*> by_id;
  for (const auto& [id, toks] : hyps)
    if (!by_id.emplace(id, &toks).second) throw ParseError("duplicate hypothesis id " + id);
  std::vector<metrics::Pair> pairs;
  for (const auto& [id, toks] : refs) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ParseError("no hypothesis for reference id " + id);
    pairs.push_back({*it->second, toks});
  }
  if (pairs.size() != hyps.size()) throw ParseError("hypothesis file has ids without a reference");
  std::size_t errs = 0, len = 0;
  for (const auto& p : pairs) {
    errs += metrics::edit_distance(p.hyp, p.ref);
    len += p.ref.size();
  }
  const double cer = metrics::corpus_error_rate(pairs);
  std::printf("CER %.4f%% (%zu edits / %zu reference tokens, %zu utterances)\n", cer, errs, len,
              pairs.size());
  return kOk;
}

int cmd_grad_check(std::uint64_t seed, std::size_t instances) {
  const auto entries = run_gradient_suite(seed, instances);
  bool ok = true;
  for (const auto& e : entries) {
    std::printf("%-26s %s  instances %zu  coords %zu  max rel err %.3e\n", e.op.c_str(),
                e.passed ? "PASS" : "FAIL", e.instances, e.coords, e.max_rel_err);
    ok = ok && e.passed;
  }
  std::printf("%s\n", ok ? "all gradients agree with finite differences" : "gradient check FAILED");
  return ok ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fused CIF speech recognizer on synthetic tasks"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  std::string gen_spec, gen_out;
  std::size_t gen_count = 0;
  std::uint64_t gen_seed = 1;
  gen->add_option("--spec", gen_spec, "Task spec file (key = value)");
  gen->add_option("--count", gen_count, "Number of utterances")->required();
  gen->add_option("--out", gen_out, "Output dataset file")->required();
  gen->add_option("--seed", gen_seed, "Sampling seed");

  auto* pre = app.add_subcommand("pretrain-lm", "Mask-predict pretraining of the linguistic encoder");
  PretrainArgs pa;
  pre->add_option("--corpus", pa.corpus, "Dataset whose transcripts form the corpus")->required();
  pre->add_option("--steps", pa.steps, "Update steps");
  pre->add_option("--out", pa.out, "Output checkpoint")->required();
  pre->add_option("--config", pa.config, "Experiment config (linguistic model keys)");
  pre->add_option("--seed", pa.seed, "Seed");
  pre->add_option("--mask-rate", pa.mask_rate, "Masking probability");
  pre->add_option("--batch-size", pa.batch_size, "Sequences per step");
  pre->add_option("--lr", pa.lr, "Peak learning rate");
  pre->add_option("--heldout", pa.heldout, "Fraction of the corpus held out for the report");

  auto* tr = app.add_subcommand("train", "Train the fused model");
  TrainArgs ta;
  std::uint64_t train_seed = 0;
  tr->add_option("--data", ta.data, "Training dataset")->required();
  tr->add_option("--dev", ta.dev, "Dev dataset");
  tr->add_option("--config", ta.config, "Experiment config");
  tr->add_option("--lm-init", ta.lm_init, "Pretrained LM checkpoint or 'none'");
  tr->add_option("--out", ta.out, "Output directory")->required();
  auto* seed_opt = tr->add_option("--seed", train_seed, "Overrides the config seed");
  tr->add_flag("--resume", ta.resume, "Continue from <out>/model.ckpt if present");

  auto* dec = app.add_subcommand("decode", "Greedy decoding with anchor tokens");
  std::string dec_ckpt, dec_data, dec_out;
  double dec_th = 0.8;
  dec->add_option("--ckpt", dec_ckpt, "Model checkpoint")->required();
  dec->add_option("--data", dec_data, "Dataset to decode")->required();
  dec->add_option("--th", dec_th, "Anchor confidence threshold");
  dec->add_option("--out", dec_out, "Hypothesis file")->required();

  auto* ev = app.add_subcommand("eval", "Corpus error rate of hypotheses");
  std::string ev_hyp, ev_ref;
  ev->add_option("--hyp", ev_hyp, "Hypothesis file")->required();
  ev->add_option("--ref", ev_ref, "Reference dataset or hypothesis-format file")->required();

  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient suite");
  std::uint64_t gc_seed = 1;
  std::size_t gc_instances = 10;
  gc->add_option("--seed", gc_seed, "Seed");
  gc->add_option("--instances", gc_instances, "Instances per op");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(gen_spec, gen_count, gen_out, gen_seed);
    if (*pre) return cmd_pretrain_lm(pa);
    if (*tr) {
      if (*seed_opt) ta.seed = train_seed;
      return cmd_train(ta);
    }
    if (*dec) return cmd_decode(dec_ckpt, dec_data, dec_th, dec_out);
    if (*ev) return cmd_eval(ev_hyp, ev_ref);
    if (*gc) return cmd_grad_check(gc_seed, gc_instances);
  } catch (const NumericDomainError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
  return kUsage;
}
