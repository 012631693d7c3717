// zhmt: corpus cleaning, augmentation, training and scoring from one binary.
//
// Exit codes: 0 ok, 1 other failure, 2 config/usage error, 3 I/O error,
// 4 misaligned paired files, 5 checkpoint mismatch or corruption.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "zhmt/augment.hpp"
#include "zhmt/checkpoint.hpp"
#include "zhmt/errors.hpp"
#include "zhmt/metrics.hpp"
#include "zhmt/mono_pipeline.hpp"
#include "zhmt/para_pipeline.hpp"
#include "zhmt/run_config.hpp"
#include "zhmt/templates.hpp"
#include "zhmt/trainer.hpp"

namespace {

using namespace zhmt;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "Run config file (flags override its values)");
    app->add_option("--seed", seed, "Seed for every random choice");
    app->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  }

  RunConfig load() const {
    RunConfig cfg = config.empty() ? RunConfig{} : RunConfig::load(config);
    if (seed) cfg.seed = *seed;
    if (workers) cfg.workers = *workers;
    cfg.validate();
    return cfg;
  }
};

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open input file " + path);
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open output file " + path);
  return out;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out = open_out(path);
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in = open_in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ParaPipelineConfig para_config(const RunConfig& cfg) {
  ParaPipelineConfig p = cfg.para;
  if (!cfg.data.sensitive_words.empty()) p.sensitive = SensitiveLexicon::load(cfg.data.sensitive_words);
  return p;
}

TokenizerSpec pipeline_tokenizer(const RunConfig& cfg) {
  return cfg.data.tokenizer.empty() ? TokenizerSpec::counting() : TokenizerSpec::load(cfg.data.tokenizer);
}

std::vector<ParallelRecord> read_records(const std::string& path) {
  std::ifstream in = open_in(path);
  std::vector<ParallelRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto parsed = parse_record_line(line, path + ":" + std::to_string(n));
    if (auto* v = std::get_if<FilterVerdict>(&parsed))
      throw ConfigError(path + ":" + std::to_string(n) + ": unusable record (" + v->reason + ")");
    out.push_back(std::get<ParallelRecord>(std::move(parsed)));
  }
  return out;
}

std::vector<InstructionTemplate> templates_for(const RunConfig& cfg) {
  return cfg.data.templates.empty() ? load_shipped_templates() : load_templates(cfg.data.templates);
}

void print_report(const PipelineReport& rep, const std::string& report_path) {
  if (!report_path.empty()) write_file(report_path, rep.to_text());
  std::cout << "inputs " << rep.totals.inputs << " outputs " << rep.totals.outputs << " rejected "
            << rep.total_rejections() << "\n";
}

int run_clean_mono(const Common& common, const std::string& in_path, const std::string& out_path,
                   const std::string& report_path) {
  const RunConfig cfg = common.load();
  std::ifstream in = open_in(in_path);
  std::ofstream out = open_out(out_path);
  const PipelineReport rep = run_mono_pipeline(in, out, cfg.mono, cfg.workers, in_path);
  if (!out) throw IoError("write failed for " + out_path);
  print_report(rep, report_path);
  return 0;
}

int run_clean_para(const Common& common, const std::string& in_path, const std::string& pair_dir,
                   const std::string& src, const std::string& tgt, const std::string& out_path,
                   const std::string& report_path) {
  const RunConfig cfg = common.load();
  const ParaPipelineConfig pcfg = para_config(cfg);
  const TokenizerSpec tok = pipeline_tokenizer(cfg);
  if (in_path.empty() == pair_dir.empty()) throw ConfigError("give exactly one of --in or --pair-dir");
  PipelineReport rep;
  if (!in_path.empty()) {
    std::ifstream in = open_in(in_path);
    std::ofstream out = open_out(out_path);
    rep = run_para_pipeline(in, out, pcfg, tok, cfg.workers, in_path);
    if (!out) throw IoError("write failed for " + out_path);
  } else {
    if (src.empty() || tgt.empty()) throw ConfigError("--pair-dir needs --src and --tgt");
    const LanguageRegistry& reg = LanguageRegistry::shipped();
    reg.at(src);
    reg.at(tgt);
    if (!std::filesystem::is_directory(pair_dir)) throw IoError("not a directory: " + pair_dir);
    std::vector<ParallelRecord> records;
    for (const FilePair& fp : pair_files(pair_dir, src, tgt)) {
      auto part = read_file_pair(fp, src, tgt);
      records.insert(records.end(), part.begin(), part.end());
    }
    const ParaResult res = run_para_pipeline(records, pcfg, tok, cfg.workers);
    std::string text;
    for (const auto& r : res.records) text += format_record_line(r) + "\n";
    write_file(out_path, text);
    rep = res.report;
  }
  print_report(rep, report_path);
  return 0;
}

int run_augment(const Common& common, const std::string& in_path, const std::string& out_path,
                const std::string& translator_name, const std::vector<std::string>& dict_specs,
                const std::string& tiers_spec) {
  const RunConfig cfg = common.load();
  std::vector<std::tuple<std::string, std::string, std::filesystem::path>> dicts;
  for (const auto& spec : dict_specs) {
    const auto a = spec.find(':');
    const auto b = a == std::string::npos ? a : spec.find(':', a + 1);
    if (b == std::string::npos) throw ConfigError("--dict expects from:to:path, got '" + spec + "'");
    dicts.emplace_back(spec.substr(0, a), spec.substr(a + 1, b - a - 1), spec.substr(b + 1));
  }
  if (translator_name == "dictionary" && dicts.empty()) throw ConfigError("--translator dictionary needs --dict");
  std::shared_ptr<Translator> translator;
  try {
    translator = make_translator(translator_name, dicts);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  PairFilter filter = all_pairs_filter();
  if (tiers_spec != "all") {
    std::set<ResourceTier> tiers;
    std::stringstream ss(tiers_spec);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) tiers.insert(parse_tier(item));
    filter = [tiers](const LanguagePair& p) {
      return tiers.count(LanguageRegistry::shipped().pair_tier(p.src, p.tgt)) > 0;
    };
  }
  AugmentedDataset input;
  input.records = read_records(in_path);
  for (const auto& r : input.records) input.origins.push_back(is_synthetic(r) ? Origin::Synthetic : Origin::Original);
  const AugmentedDataset out = augment(input, *translator, filter, cfg.workers);
  std::string text;
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    const auto& r = out.records[i];
    text += r.src_lang + "\t" + r.tgt_lang + "\t" + r.src_text + "\t" + r.tgt_text + "\t" +
            std::string(out.origins[i] == Origin::Synthetic ? kSyntheticTag : kOriginalTag) + "\n";
  }
  write_file(out_path, text);
  std::cout << "records " << out.size() << " synthetic " << out.count(Origin::Synthetic) << " failures "
            << out.failures << " duplicates " << out.duplicates_dropped << "\n";
  return 0;
}

int run_train(const Common& common, Stage stage, const std::string& resume, const std::string& out_dir,
              std::size_t stop_after, bool quiet) {
  if (common.config.empty()) throw ConfigError("training needs --config");
  RunConfig cfg = common.load();
  if (cfg.stage != stage)
    throw ConfigError("config stage is '" + std::string(to_string(cfg.stage)) + "' but this subcommand runs '" +
                      std::string(to_string(stage)) + "'");
  TrainOptions opt;
  opt.out_dir = out_dir;
  if (!resume.empty()) opt.resume = resume;
  opt.stop_after = stop_after;
  if (!quiet) opt.progress = &std::cout;
  TrainState s;
  if (stage == Stage::Pretrain) {
    if (cfg.data.mono.empty()) throw ConfigError("[data] mono is required for stage 1");
    s = train_stage1(load_lines(cfg.data.mono), cfg, opt);
  } else {
    if (cfg.data.para.empty()) throw ConfigError("[data] para is required for stage 2");
    std::shared_ptr<Translator> translator;
    if (cfg.augment.translator != "none") {
      std::vector<std::tuple<std::string, std::string, std::filesystem::path>> dicts;
      for (const auto& [dir, path] : cfg.augment.dictionaries) dicts.emplace_back(dir.first, dir.second, path);
      try {
        translator = make_translator(cfg.augment.translator, dicts);
      } catch (const IoError& e) {
        throw ConfigError(e.what());
      }
    }
    opt.translator = translator.get();
    s = train_stage2(read_records(cfg.data.para), cfg, templates_for(cfg), opt);
  }
  const auto& last = s.log.rows;
  std::cout << "steps " << s.step << " final_loss " << (last.empty() ? 0.0 : last.back().loss) << " out "
            << out_dir << "\n";
  return 0;
}

int run_evaluate(const Common& common, const std::string& model_path, const std::string& testset,
                 const std::string& out_path, const std::string& hyp_out) {
  const RunConfig cfg = common.load();
  const Checkpoint ckpt = load_checkpoint(model_path);
  const auto templates = templates_for(cfg);
  if (cfg.eval_template >= templates.size())
    throw ConfigError("eval_template " + std::to_string(cfg.eval_template) + " is out of range");
  const auto records = read_records(testset);
  std::vector<EvalPair> corpus;
  for (const auto& r : records) {
    const std::string hyp = translate(r, templates[cfg.eval_template], ckpt.params, ckpt.model, cfg.eval_max_new);
    corpus.push_back({hyp, r.tgt_text, r.pair()});
  }
  if (!hyp_out.empty()) {
    std::string text;
    for (const auto& p : corpus) text += p.pair.src + "\t" + p.pair.tgt + "\t" + p.hypothesis + "\t" + p.reference + "\n";
    write_file(hyp_out, text);
  }
  const EvalReport rep = build_report(score_pairs(corpus, cfg.workers));
  write_file(out_path, rep.to_tsv());
  std::cout << rep.tier_table("model") << "\n" << rep.long_table();
  return 0;
}

int run_score(const Common& common, const std::string& hyp_ref, const std::string& out_path) {
  const RunConfig cfg = common.load();
  const auto corpus = parse_eval_pairs(read_file(hyp_ref));
  const EvalReport rep = build_report(score_pairs(corpus, cfg.workers));
  write_file(out_path, rep.to_tsv());
  std::cout << "BLEU " << format_double(bleu(corpus)) << " chrF " << format_double(chrf(corpus)) << "\n"
            << rep.tier_table("model") << "\n"
            << rep.long_table();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chinese-centric translation toolkit: cleaning, augmentation, MoE training, scoring"};
  app.require_subcommand(1);
  int rc = 0;

  Common mono_c, para_c, aug_c, s1_c, s2_c, eval_c, score_c;

  std::string mono_in, mono_out, mono_report;
  auto* mono = app.add_subcommand("clean-mono", "Clean monolingual Chinese paragraphs into sentences");
  mono->add_option("--in", mono_in, "Input, one paragraph per line")->required();
  mono->add_option("--out", mono_out, "Output, one sentence per line")->required();
  mono->add_option("--report", mono_report, "Pipeline report file");
  mono_c.attach(mono);
  mono->callback([&] { rc = run_clean_mono(mono_c, mono_in, mono_out, mono_report); });

  std::string para_in, para_dir, para_src, para_tgt, para_out, para_report;
  auto* para = app.add_subcommand("clean-para", "Clean parallel records");
  para->add_option("--in", para_in, "Record TSV input");
  para->add_option("--pair-dir", para_dir, "Directory of <stem>.<src>/<stem>.<tgt> files");
  para->add_option("--src", para_src, "Source language for --pair-dir");
  para->add_option("--tgt", para_tgt, "Target language for --pair-dir");
  para->add_option("--out", para_out, "Record TSV output")->required();
  para->add_option("--report", para_report, "Pipeline report file");
  para_c.attach(para);
  para->callback([&] { rc = run_clean_para(para_c, para_in, para_dir, para_src, para_tgt, para_out, para_report); });

  std::string aug_in, aug_out, aug_translator = "identity", aug_tiers = "low,verylow";
  std::vector<std::string> aug_dicts;
  auto* aug = app.add_subcommand("augment", "Back-translation augmentation");
  aug->add_option("--in", aug_in, "Record TSV input")->required();
  aug->add_option("--out", aug_out, "Record TSV output with an origin column")->required();
  aug->add_option("--translator", aug_translator, "identity, word-reverse or dictionary")->capture_default_str();
  aug->add_option("--dict", aug_dicts, "Dictionary file as from:to:path (repeatable)");
  aug->add_option("--tiers", aug_tiers, "Comma-separated tiers to augment, or 'all'")->capture_default_str();
  aug_c.attach(aug);
  aug->callback([&] { rc = run_augment(aug_c, aug_in, aug_out, aug_translator, aug_dicts, aug_tiers); });

  struct TrainFlags {
    std::string resume, out_dir;
    std::size_t stop_after = 0;
    bool quiet = false;
  } s1_f, s2_f;
  auto add_train = [&](const char* name, const char* desc, Common& c, TrainFlags& f, Stage stage) {
    auto* sub = app.add_subcommand(name, desc);
    sub->add_option("--resume", f.resume, "Checkpoint to continue from");
    sub->add_option("--out-dir", f.out_dir, "Directory for checkpoints and the training log")->required();
    sub->add_option("--stop-after", f.stop_after, "Stop after this step (schedule still spans total_steps)");
    sub->add_flag("--quiet", f.quiet, "No per-step progress lines");
    c.attach(sub);
    sub->callback([&, stage] { rc = run_train(c, stage, f.resume, f.out_dir, f.stop_after, f.quiet); });
  };
  add_train("train-stage1", "Causal LM training on monolingual Chinese", s1_c, s1_f, Stage::Pretrain);
  add_train("train-stage2", "Curriculum-weighted instruction tuning on parallel data", s2_c, s2_f, Stage::Finetune);

  std::string ev_model, ev_testset, ev_out, ev_hyp;
  auto* ev = app.add_subcommand("evaluate", "Decode a test set greedily and score it");
  ev->add_option("--model", ev_model, "Checkpoint")->required();
  ev->add_option("--testset", ev_testset, "Record TSV test set")->required();
  ev->add_option("--out", ev_out, "Score TSV output")->required();
  ev->add_option("--hyp-out", ev_hyp, "Write src/tgt/hypothesis/reference lines here");
  eval_c.attach(ev);
  ev->callback([&] { rc = run_evaluate(eval_c, ev_model, ev_testset, ev_out, ev_hyp); });

  std::string sc_in, sc_out;
  auto* sc = app.add_subcommand("score", "Score precomputed hypotheses");
  sc->add_option("--hyp-ref", sc_in, "Lines of src_lang, tgt_lang, hypothesis, reference")->required();
  sc->add_option("--out", sc_out, "Score TSV output")->required();
  score_c.attach(sc);
  sc->callback([&] { rc = run_score(score_c, sc_in, sc_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UnknownLanguage& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const TemplateError& e) {
    std::cerr << "template error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const AlignmentError& e) {
    std::cerr << "alignment error: " << e.what() << "\n";
    return 4;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
