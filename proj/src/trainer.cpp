#include "zhmt/trainer.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "zhmt/errors.hpp"
#include "zhmt/parallel.hpp"

namespace zhmt {

namespace {

constexpr TokenId kByteBase = 4;
const ReservedIds kIds{};

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

void append_bytes(std::vector<TokenId>& ids, std::string_view s) {
  for (unsigned char c : s) ids.push_back(kByteBase + c);
}

// Fingerprint of everything that shapes the training trajectory.
std::uint64_t trajectory_hash(const RunConfig& cfg) {
  RunConfig c = cfg.effective();
  c.workers = 1;
  c.checkpoint_every = 0;
  c.data = {};
  c.eval_template = 0;
  c.eval_max_new = 0;
  return fnv1a(c.serialize() + serialize_model_config(c.model));
}

std::map<std::string, std::string> run_meta(const RunConfig& cfg) {
  return {{"stage", std::string(to_string(cfg.stage))},
          {"ablation", std::string(to_string(cfg.ablation))},
          {"seed", std::to_string(cfg.seed)},
          {"init_mode", std::string(to_string(cfg.model.init_mode))},
          {"total_steps", std::to_string(cfg.optimizer.total_steps)},
          {"trajectory", hex64(trajectory_hash(cfg))}};
}

void check_vocab(const ModelConfig& m) {
  if (m.vocab_size < kByteBase + 256)
    throw ConfigError("model vocab_size must be at least 260 for the byte tokenizer");
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << s;
  if (!out) throw IoError("write failed for " + p.string());
}

void save_state(const TrainState& s, const std::filesystem::path& dir, const std::string& name) {
  save_checkpoint(to_checkpoint(s), dir / name);
  write_text(dir / "train_log.tsv", s.log.to_tsv());
}

struct StepOutcome {
  double loss;
  std::size_t tokens;
};

StepOutcome apply_step(TrainState& s, const std::vector<TrainSequence>& batch, const std::vector<double>& coeff) {
  TensorMap grads = zero_grads(s.params);
  const std::vector<double> losses =
      batch_gradients(batch, coeff, s.params, s.config.model, s.config.workers, grads);
  double loss = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    loss += coeff[i] * losses[i];
    for (TokenId t : batch[i].targets) tokens += t >= 0;
  }
  if (s.config.optimizer.clip_gradients) clip_by_global_norm(grads, s.config.optimizer.grad_clip_norm);
  adamw_step(s.params.trainable, grads, s.adam, s.config.optimizer, lr_at(s.step, s.config.optimizer));
  return {loss, tokens};
}

void finish_step(TrainState& s, double loss, std::size_t tokens, std::string active, const TrainOptions& opt) {
  TrainLogRow row;
  row.step = s.step;
  row.lr = lr_at(s.step, s.config.optimizer);
  row.loss = loss;
  row.active_pairs = std::move(active);
  row.tokens = (s.log.rows.empty() ? 0 : s.log.rows.back().tokens) + tokens;
  row.frozen_checksum = s.params.frozen_checksum();
  s.log.rows.push_back(row);
  if (opt.progress)
    *opt.progress << "step " << row.step << " lr " << format_double(row.lr) << " loss " << format_double(row.loss)
                  << "\n";
  if (!opt.out_dir.empty() && s.config.checkpoint_every && s.step % s.config.checkpoint_every == 0)
    save_state(s, opt.out_dir, "step-" + std::to_string(s.step) + ".ckpt");
}

std::size_t last_step(const TrainState& s, const TrainOptions& opt) {
  const std::size_t total = s.config.optimizer.total_steps;
  return opt.stop_after ? std::min(opt.stop_after, total) : total;
}

TrainState begin(const RunConfig& cfg, Stage stage, const TrainOptions& opt) {
  if (cfg.stage != stage)
    throw ConfigError(std::string("config stage is '") + std::string(to_string(cfg.stage)) + "', expected '" +
                      std::string(to_string(stage)) + "'");
  cfg.validate();
  check_vocab(cfg.model);
  TrainState s = opt.resume ? resume_state(load_checkpoint(*opt.resume), cfg) : init_state(cfg);
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    cfg.save(opt.out_dir / "run_config.ini");
  }
  return s;
}

void end(TrainState& s, const TrainOptions& opt) {
  if (!opt.out_dir.empty()) save_state(s, opt.out_dir, "final.ckpt");
}

}  // namespace

std::string TrainLog::to_tsv() const {
  std::string out = "step\tlr\tloss\tactive_pairs\ttokens\tfrozen_checksum\n";
  for (const auto& r : rows)
    out += std::to_string(r.step) + "\t" + format_double(r.lr) + "\t" + format_double(r.loss) + "\t" + r.active_pairs +
           "\t" + std::to_string(r.tokens) + "\t" + hex64(r.frozen_checksum) + "\n";
  return out;
}

TrainLog TrainLog::parse(std::string_view tsv) {
  TrainLog log;
  std::istringstream in{std::string(tsv)};
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      f.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (f.size() != 6) throw Error("malformed train log row: " + line);
    TrainLogRow r;
    r.step = std::stoull(f[0]);
    r.lr = std::strtod(f[1].c_str(), nullptr);
    r.loss = std::strtod(f[2].c_str(), nullptr);
    r.active_pairs = f[3];
    r.tokens = std::stoull(f[4]);
    r.frozen_checksum = std::stoull(f[5], nullptr, 16);
    log.rows.push_back(std::move(r));
  }
  return log;
}

TrainSequence make_mono_sequence(std::string_view text, std::size_t context) {
  TrainSequence s;
  s.ids.push_back(kIds.bos);
  append_bytes(s.ids, text);
  s.ids.push_back(kIds.eos);
  if (s.ids.size() > context) s.ids.resize(context);
  s.targets = shifted_targets(s.ids);
  s.pair = "zh";
  return s;
}

std::vector<TokenId> prompt_ids(std::string_view prompt) {
  std::vector<TokenId> ids{kIds.bos};
  append_bytes(ids, prompt);
  append_bytes(ids, "\n");
  return ids;
}

TrainSequence make_instruction_sequence(const InstructionExample& ex, std::size_t context, bool include_prompt) {
  TrainSequence s;
  s.ids = prompt_ids(ex.prompt);
  const std::size_t first_target = s.ids.size();
  append_bytes(s.ids, ex.target);
  s.ids.push_back(kIds.eos);
  s.targets = shifted_targets(s.ids);
  if (!include_prompt)
    for (std::size_t t = 0; t + 1 < first_target; ++t) s.targets[t] = -1;
  if (s.ids.size() > context) {
    s.ids.resize(context);
    s.targets.resize(context);
    s.targets.back() = -1;
  }
  s.pair = ex.src_lang + "-" + ex.tgt_lang;
  return s;
}

std::string decode_bytes(const std::vector<TokenId>& ids, std::size_t from) {
  std::string out;
  for (std::size_t i = from; i < ids.size(); ++i) {
    if (ids[i] == kIds.eos) break;
    if (ids[i] >= kByteBase && ids[i] < kByteBase + 256) out.push_back(static_cast<char>(ids[i] - kByteBase));
  }
  return out;
}

std::vector<double> batch_gradients(const std::vector<TrainSequence>& batch, const std::vector<double>& coeff,
                                    const ParameterSet& params, const ModelConfig& cfg, std::size_t workers,
                                    TensorMap& grads) {
  std::vector<std::size_t> idx(batch.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto per_seq = ordered_map(idx, workers, [&](std::size_t i) {
    ForwardCache cache;
    const Mat logits = forward(batch[i].ids, params, cfg, &cache);
    const LossResult lr = cross_entropy(logits, batch[i].targets);
    TensorMap g;
    if (lr.count) backward(cache, lr.dlogits, params, cfg, g, coeff[i]);
    return std::make_pair(lr.loss, std::move(g));
  });
  std::vector<double> losses;
  losses.reserve(batch.size());
  for (auto& [loss, g] : per_seq) {
    losses.push_back(loss);
    for (auto& [name, t] : g) {
      Tensor& dst = grads[name];
      if (dst.shape != t.shape) dst = Tensor(t.shape);
      for (std::size_t k = 0; k < t.numel(); ++k) dst.data[k] += t.data[k];
    }
  }
  return losses;
}

TrainState init_state(const RunConfig& cfg_in) {
  TrainState s;
  s.config = cfg_in.effective();
  if (s.config.stage == Stage::Finetune && !s.config.data.init_checkpoint.empty()) {
    Checkpoint base = load_checkpoint(s.config.data.init_checkpoint);
    ModelConfig a = base.model, b = s.config.model;
    for (ModelConfig* m : {&a, &b}) {
      m->init_mode = InitMode::Mixed;
      m->reuse_count = 0;
      m->seed = 0;
    }
    if (!(a == b)) throw CheckpointError("checkpoint mismatch: init checkpoint model shape differs from the config");
    s.params = std::move(base.params);
  } else {
    s.params = init_model(s.config.model);
  }
  s.adam = init_adam_state(s.params.trainable);
  return s;
}

Checkpoint to_checkpoint(const TrainState& s) {
  Checkpoint c;
  c.model = s.config.model;
  c.step = s.step;
  c.params = s.params;
  c.adam = s.adam;
  c.meta = run_meta(s.config);
  c.log_tsv = s.log.to_tsv();
  return c;
}

TrainState resume_state(const Checkpoint& ckpt, const RunConfig& cfg_in) {
  const RunConfig cfg = cfg_in.effective();
  const auto want = run_meta(cfg);
  for (const auto& [k, v] : want) {
    auto it = ckpt.meta.find(k);
    if (it == ckpt.meta.end() || it->second != v)
      throw CheckpointError("checkpoint mismatch: " + k + " is '" + (it == ckpt.meta.end() ? "" : it->second) +
                            "', config gives '" + v + "'");
  }
  if (!(ckpt.model == cfg.model)) throw CheckpointError("checkpoint mismatch: model config differs");
  TrainState s;
  s.config = cfg;
  s.params = ckpt.params;
  s.adam = ckpt.adam;
  s.step = ckpt.step;
  s.log = TrainLog::parse(ckpt.log_tsv);
  if (s.log.rows.size() != s.step || s.adam.step != s.step)
    throw CheckpointError("checkpoint mismatch: step counters disagree");
  if (s.params.trainable.size() != s.adam.m.size()) throw CheckpointError("checkpoint optimizer state incomplete");
  return s;
}

TrainState train_stage1(const std::vector<std::string>& corpus, const RunConfig& cfg, const TrainOptions& opt) {
  if (corpus.empty()) throw Error("stage 1 needs a nonempty corpus");
  TrainState s = begin(cfg, Stage::Pretrain, opt);
  const std::size_t B = s.config.optimizer.batch_size;
  const std::size_t stop = last_step(s, opt);
  while (s.step < stop) {
    ++s.step;
    Rng rng = Rng(s.config.seed).split(s.step);
    std::vector<TrainSequence> batch;
    for (std::size_t i = 0; i < B; ++i)
      batch.push_back(make_mono_sequence(corpus[rng.uniform_index(corpus.size())], s.config.model.context));
    const std::vector<double> coeff(B, 1.0 / static_cast<double>(B));
    const StepOutcome out = apply_step(s, batch, coeff);
    finish_step(s, out.loss, out.tokens, "zh", opt);
  }
  end(s, opt);
  return s;
}

PairDatasets prepare_stage2_data(const std::vector<ParallelRecord>& records, const RunConfig& cfg_in,
                                 const Translator* translator, std::size_t* synthetic_added) {
  const RunConfig cfg = cfg_in.effective();
  std::shared_ptr<Translator> owned;
  if (!translator && cfg.augment.translator != "none") {
    std::vector<std::tuple<std::string, std::string, std::filesystem::path>> dicts;
    for (const auto& [dir, path] : cfg.augment.dictionaries) dicts.emplace_back(dir.first, dir.second, path);
    owned = make_translator(cfg.augment.translator, dicts);
    translator = owned.get();
  }
  std::vector<ParallelRecord> all = records;
  if (translator) {
    const std::set<ResourceTier> tiers(cfg.augment.tiers.begin(), cfg.augment.tiers.end());
    const LanguageRegistry& reg = LanguageRegistry::shipped();
    const AugmentedDataset aug = augment(
        records, *translator,
        [&](const LanguagePair& p) { return tiers.count(reg.pair_tier(p.src, p.tgt)) > 0; }, cfg.workers);
    if (synthetic_added) *synthetic_added = aug.count(Origin::Synthetic);
    all = aug.records;
  } else if (synthetic_added) {
    *synthetic_added = 0;
  }
  PairDatasets data;
  for (auto& r : all) data[r.pair()].push_back(std::move(r));
  return data;
}

TrainState train_stage2(const std::vector<ParallelRecord>& records, const RunConfig& cfg,
                        const std::vector<InstructionTemplate>& templates, const TrainOptions& opt) {
  if (records.empty()) throw Error("stage 2 needs a nonempty parallel corpus");
  if (templates.empty()) throw TemplateError("no instruction templates loaded", 0);
  TrainState s = begin(cfg, Stage::Finetune, opt);
  const PairDatasets data = prepare_stage2_data(records, s.config, opt.translator);
  std::vector<LanguagePair> pairs;
  for (const auto& [p, _] : data) pairs.push_back(p);
  const CurriculumSchedule& sched = s.config.schedule;
  const std::size_t B = s.config.optimizer.batch_size;
  const std::size_t stop = last_step(s, opt);

  while (s.step < stop) {
    ++s.step;
    const std::size_t cstep = s.step - 1;
    Rng rng = Rng(s.config.seed).split(s.step);
    const std::vector<ParallelRecord> recs = sample_batch(cstep, rng, data, sched, B);
    std::vector<TrainSequence> batch;
    for (const auto& r : recs) {
      TrainSequence seq = make_instruction_sequence(render(pick_template(rng, templates), r), s.config.model.context,
                                                    s.config.include_prompt_loss);
      if (is_synthetic(r)) seq.weight = s.config.augment.synthetic_weight;
      batch.push_back(std::move(seq));
    }
    // Per pair: weighted mean over its sequences; across pairs: curriculum weights.
    std::map<std::string, double> within;
    std::map<std::string, double> pair_w;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      within[batch[i].pair] += batch[i].weight;
      pair_w[batch[i].pair] = weight_at(cstep, recs[i].pair(), sched);
    }
    double W = 0.0;
    for (const auto& [_, w] : pair_w) W += w;
    const double denom = sched.normalize_loss ? W : 1.0;
    std::vector<double> coeff(B);
    for (std::size_t i = 0; i < B; ++i)
      coeff[i] = pair_w[batch[i].pair] * batch[i].weight / within[batch[i].pair] / denom;
    const StepOutcome out = apply_step(s, batch, coeff);

    std::string active;
    for (const auto& p : pairs)
      if (weight_at(cstep, p, sched) > 0.0) active += (active.empty() ? "" : ",") + p.str();
    finish_step(s, out.loss, out.tokens, active, opt);
  }
  end(s, opt);
  return s;
}

std::string translate(const ParallelRecord& record, const InstructionTemplate& tpl, const ParameterSet& params,
                      const ModelConfig& cfg, std::size_t max_new) {
  const InstructionExample ex = render(tpl, record);
  std::vector<TokenId> prefix = prompt_ids(ex.prompt);
  if (prefix.size() >= cfg.context) return {};
  GenerateOptions g;
  g.max_new = max_new;
  g.eos = kIds.eos;
  const std::vector<TokenId> out = generate(prefix, params, cfg, g);
  return decode_bytes(out, prefix.size());
}

std::vector<std::string> load_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(std::move(line));
  }
  return out;
}

}  // namespace zhmt
