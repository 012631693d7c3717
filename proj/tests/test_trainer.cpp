#include <doctest.h>

#include <sstream>

#include "test_util.hpp"
#include "zhmt/errors.hpp"
#include "zhmt/trainer.hpp"

using namespace zhmt;

namespace {

RunConfig small_run(Stage stage) {
  RunConfig c;
  c.stage = stage;
  c.model = ModelConfig::desk();
  c.model.hidden = 16;
  c.model.ffn_inner = 32;
  c.model.heads = 2;
  c.model.layers = 2;
  c.model.context = 48;
  c.model.sparse_step = 2;
  c.model.moe_expert_count = 4;
  c.model.reuse_count = 2;
  c.optimizer.peak_lr = 1e-2;
  c.optimizer.warmup_steps = 2;
  c.optimizer.total_steps = 6;
  c.optimizer.batch_size = 3;
  return c;
}

const std::vector<std::string> kCorpus = {"你好世界", "今天天气很好", "我们学习中文", "山高水长"};

std::vector<ParallelRecord> records() {
  return {{"en", "zh", "hello", "你好", "r:1"},
          {"en", "zh", "good day", "日安", "r:2"},
          {"sr", "zh", "zdravo", "你好", "r:3"},
          {"bo", "zh", "tashi", "吉祥", "r:4"}};
}

}  // namespace

TEST_CASE("mono sequences") {
  const auto s = make_mono_sequence("ab", 100);
  CHECK(s.ids == std::vector<TokenId>{2, 4 + 'a', 4 + 'b', 3});
  CHECK(s.targets == std::vector<TokenId>{4 + 'a', 4 + 'b', 3, -1});
  CHECK(make_mono_sequence("abcdef", 4).ids.size() == 4);
}

TEST_CASE("instruction sequences mask the prompt") {
  InstructionExample ex{"P", "T", "en", "zh", 0};
  const auto s = make_instruction_sequence(ex, 100, false);
  // [bos] P \n T [eos]
  CHECK(s.ids == std::vector<TokenId>{2, 4 + 'P', 4 + '\n', 4 + 'T', 3});
  CHECK(s.targets == std::vector<TokenId>{-1, -1, 4 + 'T', 3, -1});
  CHECK(s.pair == "en-zh");
  const auto full = make_instruction_sequence(ex, 100, true);
  CHECK(full.targets == std::vector<TokenId>{4 + 'P', 4 + '\n', 4 + 'T', 3, -1});
  const auto cut = make_instruction_sequence(ex, 4, false);
  CHECK(cut.ids.size() == 4);
  CHECK(cut.targets.back() == -1);
  CHECK(decode_bytes({2, 4 + 'x', 4 + 'y', 3, 4 + 'z'}, 1) == "xy");
}

TEST_CASE("train log round trip") {
  TrainLog log;
  log.rows.push_back({1, 0.5, 2.25, "en-zh,sr-zh", 10, 0xdeadbeefULL});
  log.rows.push_back({2, 1.0 / 3.0, 0.1, "zh", 20, 1});
  CHECK(TrainLog::parse(log.to_tsv()) == log);
}

TEST_CASE("stage 1 keeps the backbone frozen and is deterministic") {
  const auto cfg = small_run(Stage::Pretrain);
  const auto a = train_stage1(kCorpus, cfg);
  const auto b = train_stage1(kCorpus, cfg);
  REQUIRE(a.log.rows.size() == 6);
  CHECK(a.log == b.log);
  CHECK(a.params.trainable == b.params.trainable);
  const auto init = init_model(cfg.effective().model);
  for (const auto& row : a.log.rows) CHECK(row.frozen_checksum == init.frozen_checksum());
  CHECK(a.params.trainable_checksum() != init.trainable_checksum());
  CHECK(a.adam.m.size() == a.params.trainable.size());
  for (const auto& [name, _] : a.adam.m) CHECK(a.params.is_trainable(name));
  CHECK(a.log.rows[0].lr == doctest::Approx(lr_at(1, cfg.optimizer)));
  CHECK(a.log.rows[1].lr == cfg.optimizer.peak_lr);

  auto more_workers = cfg;
  more_workers.workers = 3;
  CHECK(train_stage1(kCorpus, more_workers).log == a.log);
}

TEST_CASE("stage mismatch and bad inputs") {
  CHECK_THROWS_AS(train_stage1(kCorpus, small_run(Stage::Finetune)), ConfigError);
  CHECK_THROWS_AS(train_stage1({}, small_run(Stage::Pretrain)), Error);
  auto narrow = small_run(Stage::Pretrain);
  narrow.model.vocab_size = 100;
  CHECK_THROWS_AS(train_stage1(kCorpus, narrow), ConfigError);
  CHECK_THROWS_AS(train_stage2(records(), small_run(Stage::Finetune), {}), TemplateError);
}

TEST_CASE("resume reproduces the uninterrupted run") {
  testutil::TempDir dir("resume");
  auto cfg = small_run(Stage::Pretrain);
  cfg.checkpoint_every = 3;
  TrainOptions full_opt;
  full_opt.out_dir = dir / "full";
  const auto full = train_stage1(kCorpus, cfg, full_opt);
  CHECK(std::filesystem::exists(dir / "full" / "step-3.ckpt"));
  CHECK(std::filesystem::exists(dir / "full" / "step-6.ckpt"));
  CHECK(std::filesystem::exists(dir / "full" / "final.ckpt"));
  CHECK(std::filesystem::exists(dir / "full" / "run_config.ini"));
  CHECK(TrainLog::parse(testutil::slurp(dir / "full" / "train_log.tsv")) == full.log);

  TrainOptions part;
  part.out_dir = dir / "part";
  part.stop_after = 3;
  const auto half = train_stage1(kCorpus, cfg, part);
  CHECK(half.step == 3);
  CHECK(load_checkpoint(dir / "part" / "final.ckpt") == load_checkpoint(dir / "full" / "step-3.ckpt"));

  TrainOptions rest;
  rest.resume = dir / "part" / "final.ckpt";
  const auto resumed = train_stage1(kCorpus, cfg, rest);
  CHECK(resumed.log == full.log);
  CHECK(resumed.params.trainable == full.params.trainable);
  CHECK(resumed.adam == full.adam);

  auto other = cfg;
  other.seed = 1;
  CHECK_THROWS_AS(train_stage1(kCorpus, other, rest), CheckpointError);
}

TEST_CASE("stage 2 curriculum, masking and ablation effects") {
  auto cfg = small_run(Stage::Finetune);
  cfg.optimizer.total_steps = 8;
  const auto templates = parse_templates("{src_text} =\n");
  const auto a = train_stage2(records(), cfg, templates);
  CHECK(a.log == train_stage2(records(), cfg, templates).log);
  // Only the High pair is active at the first step.
  CHECK(a.log.rows[0].active_pairs == "en-zh");
  for (const auto& row : a.log.rows) CHECK(row.frozen_checksum == a.log.rows[0].frozen_checksum);

  auto random_train = cfg;
  random_train.ablation = Ablation::RandomTrain;
  const auto r = train_stage2(records(), random_train, templates);
  CHECK(r.log.rows[0].active_pairs == "bo-zh,en-zh,sr-zh");

  auto random_init = cfg;
  random_init.ablation = Ablation::RandomInit;
  auto reuse_init = cfg;
  reuse_init.ablation = Ablation::ReuseInit;
  const auto pr = init_state(random_init).params, pu = init_state(reuse_init).params;
  CHECK(pr.trainable_checksum() != pu.trainable_checksum());
  CHECK(pr.frozen_checksum() == pu.frozen_checksum());
  testutil::TempDir dir("abl");
  TrainOptions opt;
  opt.out_dir = dir.path();
  opt.stop_after = 1;
  train_stage2(records(), reuse_init, templates, opt);
  CHECK(testutil::slurp(manifest_path(dir / "final.ckpt")).find("init_mode\treuse") != std::string::npos);
}

TEST_CASE("stage 2 back-translation adds synthetic records for the configured tiers") {
  auto cfg = small_run(Stage::Finetune);
  cfg.augment.translator = "identity";
  std::size_t added = 0;
  const auto data = prepare_stage2_data(records(), cfg, nullptr, &added);
  CHECK(added == 2);  // sr and bo sources
  CHECK(data.at(LanguagePair{"sr", "zh"}).size() == 2);
  CHECK(data.at(LanguagePair{"bo", "zh"}).size() == 2);
  CHECK(data.at(LanguagePair{"en", "zh"}).size() == 2);
  CHECK(is_synthetic(data.at(LanguagePair{"sr", "zh"})[1]));
  cfg.augment.translator = "none";
  prepare_stage2_data(records(), cfg, nullptr, &added);
  CHECK(added == 0);
}

TEST_CASE("stage 2 starts from an init checkpoint") {
  testutil::TempDir dir("init");
  auto s1 = small_run(Stage::Pretrain);
  TrainOptions opt;
  opt.out_dir = dir / "s1";
  const auto pre = train_stage1(kCorpus, s1, opt);
  auto s2 = small_run(Stage::Finetune);
  s2.data.init_checkpoint = (dir / "s1" / "final.ckpt").string();
  const auto st = init_state(s2);
  CHECK(st.params.trainable == pre.params.trainable);
  CHECK(st.params.frozen == pre.params.frozen);
  s2.model.hidden = 32;
  s2.model.ffn_inner = 64;
  CHECK_THROWS_AS(init_state(s2), CheckpointError);
}

TEST_CASE("greedy translation returns bytes after the prompt") {
  const auto cfg = small_run(Stage::Finetune);
  const auto st = init_state(cfg);
  const auto tpl = parse_template("{src_text} =", 0);
  const auto out = translate(records()[0], tpl, st.params, st.config.model, 5);
  CHECK(out.size() <= 5);
  CHECK(out == translate(records()[0], tpl, st.params, st.config.model, 5));
}
