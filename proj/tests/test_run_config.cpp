#include <doctest.h>

#include "test_util.hpp"
#include "zhmt/errors.hpp"
#include "zhmt/run_config.hpp"

using namespace zhmt;

TEST_CASE("serialize/parse is a fixed point") {
  RunConfig c;
  c.stage = Stage::Finetune;
  c.ablation = Ablation::OrderTrain;
  c.seed = 42;
  c.workers = 3;
  c.model = ModelConfig::desk();
  c.model.moe_placement = MoePlacement::ReplaceFfn;
  c.optimizer.peak_lr = 1.0 / 3.0;
  c.schedule.final_weights = {1.0, 0.1, 1e-7, 2.5};
  c.augment.translator = "dictionary";
  c.augment.tiers = {ResourceTier::VeryLow};
  c.augment.dictionaries[{"en", "zh"}] = "/tmp/en_zh.dict";
  c.data.para = "corpus with spaces.tsv";
  c.mono.allowed_punctuation = U"，。";
  const std::string text = c.serialize();
  const auto back = RunConfig::parse(text);
  CHECK(back == c);
  CHECK(back.serialize() == text);
  CHECK(RunConfig::parse(RunConfig{}.serialize()) == RunConfig{});

  testutil::TempDir dir("cfg");
  c.save(dir / "run.ini");
  CHECK(RunConfig::load(dir / "run.ini") == c);
  CHECK_THROWS_AS(RunConfig::load(dir / "none.ini"), IoError);
}

TEST_CASE("partial files keep defaults; comments are ignored") {
  const auto c = RunConfig::parse("# comment\n[run]\nseed = 9\n\n[optimizer]\ntotal_steps = 50\nwarmup_steps = 5\n");
  CHECK(c.seed == 9);
  CHECK(c.optimizer.total_steps == 50);
  CHECK(c.model == ModelConfig{});
}

TEST_CASE("malformed configs are rejected") {
  CHECK_THROWS_AS(RunConfig::parse("[run]\nsed = 1\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("[nope]\nseed = 1\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("seed = 1\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("[run]\nseed 1\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("[run]\nseed = -1\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("[run]\nstage = train\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("[model]\ninit_std = abc\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("[run\n"), ConfigError);
}

TEST_CASE("effective applies the ablation") {
  RunConfig c;
  c.seed = 5;
  c.optimizer.total_steps = 77;
  c.optimizer.warmup_steps = 7;
  CHECK(c.effective().model.seed == 5);
  CHECK(c.effective().schedule.total_steps == 77);
  c.ablation = Ablation::RandomInit;
  CHECK(c.effective().model.init_mode == InitMode::Random);
  c.ablation = Ablation::ReuseInit;
  CHECK(c.effective().model.init_mode == InitMode::Reuse);
  c.ablation = Ablation::RandomTrain;
  CHECK(c.effective().schedule.mode == CurriculumMode::Uniform);
  c.ablation = Ablation::OrderTrain;
  CHECK(c.effective().schedule.mode == CurriculumMode::Ordered);
  for (Ablation a : kAllAblations) CHECK(parse_ablation(to_string(a)) == a);
}

TEST_CASE("validation") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  c.workers = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.augment.translator = "babel";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.model.top_k = 100;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("model section alone") {
  auto m = ModelConfig::tiny();
  m.seed = 123;
  CHECK(parse_model_config(serialize_model_config(m)) == m);
  CHECK_THROWS_AS(parse_model_config("[model]\nhidden = 8\nwidth = 3\n"), ConfigError);
}
