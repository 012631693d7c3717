#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>

#include "test_util.hpp"

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run zhmt_cli(const std::string& args) {
  const std::string cmd = std::string(ZHMT_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::string lexicon_config(const testutil::TempDir& dir) {
  const auto cfg = dir / "run.ini";
  testutil::spit(cfg, "[data]\nsensitive_words = " + testutil::fixture("sensitive_words.txt").string() + "\n");
  return cfg.string();
}

}  // namespace

TEST_CASE("help and usage errors") {
  const auto help = zhmt_cli("--help");
  CHECK(help.code == 0);
  for (const char* sub : {"clean-mono", "clean-para", "augment", "train-stage1", "train-stage2", "evaluate", "score"})
    CHECK(help.out.find(sub) != std::string::npos);
  const auto sub_help = zhmt_cli("clean-para --help");
  CHECK(sub_help.code == 0);
  for (const char* flag : {"--in", "--pair-dir", "--out", "--report", "--config", "--seed", "--workers"})
    CHECK(sub_help.out.find(flag) != std::string::npos);
  CHECK(zhmt_cli("").code == 2);
  CHECK(zhmt_cli("clean-mono --bogus x").code == 2);
  CHECK(zhmt_cli("clean-para --out /dev/null").code == 2);
}

TEST_CASE("clean-para reproduces the golden report") {
  testutil::TempDir dir("cli");
  const auto r = zhmt_cli("clean-para --config " + q(lexicon_config(dir)) + " --in " +
                          q(testutil::fixture("para12.tsv")) + " --out " + q(dir / "out.tsv") + " --report " +
                          q(dir / "report.txt"));
  INFO(r.out);
  REQUIRE(r.code == 0);
  CHECK(testutil::slurp(dir / "report.txt") == testutil::slurp(testutil::fixture("para12_report.golden")));
  CHECK(count_lines(testutil::slurp(dir / "out.tsv")) == 6);

  // Cleaning the output again changes nothing.
  const auto again = zhmt_cli("clean-para --config " + q(lexicon_config(dir)) + " --in " + q(dir / "out.tsv") +
                              " --out " + q(dir / "out2.tsv"));
  CHECK(again.code == 0);
  CHECK(testutil::slurp(dir / "out2.tsv") == testutil::slurp(dir / "out.tsv"));
}

TEST_CASE("clean-para over paired files") {
  testutil::TempDir dir("pairs");
  std::filesystem::create_directories(dir / "ok");
  testutil::spit(dir / "ok" / "a.en", "Good morning to everyone who came here early today for the meeting.\n"
                                       "We will meet again tomorrow at the old train station near the river.\n");
  testutil::spit(dir / "ok" / "a.zh", "今天早上来这里参加会议的各位，大家早上好。\n我们明天在河边那个老火车站再次见面。\n");
  const auto r = zhmt_cli("clean-para --pair-dir " + q(dir / "ok") + " --src en --tgt zh --out " + q(dir / "o.tsv"));
  INFO(r.out);
  CHECK(r.code == 0);
  CHECK(testutil::slurp(dir / "o.tsv").find("a:1") != std::string::npos);

  std::filesystem::create_directories(dir / "bad");
  testutil::spit(dir / "bad" / "a.en", "one\ntwo\n");
  testutil::spit(dir / "bad" / "a.zh", "一\n");
  CHECK(zhmt_cli("clean-para --pair-dir " + q(dir / "bad") + " --src en --tgt zh --out " + q(dir / "o.tsv")).code == 4);
  CHECK(zhmt_cli("clean-para --pair-dir " + q(dir / "ok") + " --src english --tgt zh --out " + q(dir / "o.tsv")).code ==
        2);
  CHECK(zhmt_cli("clean-para --pair-dir " + q(dir / "missing") + " --src en --tgt zh --out " + q(dir / "o.tsv"))
            .code == 3);
}

TEST_CASE("clean-mono") {
  testutil::TempDir dir("mono");
  testutil::spit(dir / "in.txt", "今天的天气非常好，我们一起去公园散步吧，顺便看看湖边新开的花，听说那里的樱花已经全部盛开了，游客非常多。\n");
  const auto r = zhmt_cli("clean-mono --in " + q(dir / "in.txt") + " --out " + q(dir / "out.txt"));
  CHECK(r.code == 0);
  CHECK(count_lines(testutil::slurp(dir / "out.txt")) == 1);
  CHECK(zhmt_cli("clean-mono --in " + q(dir / "absent.txt") + " --out " + q(dir / "out.txt")).code == 3);
}

TEST_CASE("augment") {
  testutil::TempDir dir("aug");
  const auto in = testutil::fixture("toy_colors.tsv");
  const auto r = zhmt_cli("augment --in " + q(in) + " --out " + q(dir / "a.tsv") + " --tiers all");
  INFO(r.out);
  REQUIRE(r.code == 0);
  const std::string once = testutil::slurp(dir / "a.tsv");
  CHECK(count_lines(once) == 32);
  CHECK(zhmt_cli("augment --in " + q(dir / "a.tsv") + " --out " + q(dir / "b.tsv") + " --tiers all").code == 0);
  CHECK(testutil::slurp(dir / "b.tsv") == once);

  // en->zh is a High pair, so the default tiers leave it alone.
  CHECK(zhmt_cli("augment --in " + q(in) + " --out " + q(dir / "c.tsv")).code == 0);
  CHECK(count_lines(testutil::slurp(dir / "c.tsv")) == 16);

  const auto dict = zhmt_cli("augment --in " + q(in) + " --out " + q(dir / "d.tsv") +
                             " --tiers all --translator dictionary --dict zh:en:" +
                             testutil::fixture("colors_zh_en.dict").string());
  CHECK(dict.code == 0);
  CHECK(zhmt_cli("augment --in " + q(in) + " --out " + q(dir / "d.tsv") +
                 " --translator dictionary --dict zh:en:/nonexistent.dict")
            .code == 2);
  CHECK(zhmt_cli("augment --in " + q(in) + " --out " + q(dir / "d.tsv") + " --translator babel").code == 2);
}

TEST_CASE("score") {
  testutil::TempDir dir("score");
  testutil::spit(dir / "hr.tsv", "en\tzh\t你好世界\t你好世界\nsr\tzh\t早上好\t早上好\n");
  const auto r = zhmt_cli("score --hyp-ref " + q(dir / "hr.tsv") + " --out " + q(dir / "s.tsv"));
  INFO(r.out);
  CHECK(r.code == 0);
  CHECK(r.out.find("BLEU 100") != std::string::npos);
  CHECK(r.out.find("chrF 100") != std::string::npos);
  CHECK(testutil::slurp(dir / "s.tsv").find("overall\tall\t100.0000\t100.0000\t2") != std::string::npos);
  testutil::spit(dir / "bad.tsv", "xx-yy\tzh\ta\tb\n");
  CHECK(zhmt_cli("score --hyp-ref " + q(dir / "bad.tsv") + " --out " + q(dir / "s.tsv")).code == 2);
}

TEST_CASE("training, resume and evaluation") {
  testutil::TempDir dir("train");
  testutil::spit(dir / "s1.ini",
                 "[run]\nstage = pretrain\n[model]\nhidden = 16\nffn_inner = 32\nheads = 2\nlayers = 2\ncontext = 48\n"
                 "sparse_step = 2\nmoe_expert_count = 4\nreuse_count = 2\n[optimizer]\ntotal_steps = 4\n"
                 "warmup_steps = 1\nbatch_size = 2\n[data]\nmono = " +
                     testutil::fixture("toy_zh.txt").string() + "\n");
  const std::string base = "train-stage1 --quiet --config " + q(dir / "s1.ini") + " --out-dir " + q(dir / "run");
  const auto r = zhmt_cli(base);
  INFO(r.out);
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(dir / "run" / "final.ckpt"));
  CHECK(count_lines(testutil::slurp(dir / "run" / "train_log.tsv")) == 5);

  CHECK(zhmt_cli(base + " --resume " + q(dir / "nope.ckpt")).code == 3);
  testutil::spit(dir / "junk.ckpt", "not a checkpoint");
  CHECK(zhmt_cli(base + " --resume " + q(dir / "junk.ckpt")).code == 5);
  CHECK(zhmt_cli(base + " --seed 7 --resume " + q(dir / "run" / "final.ckpt")).code == 5);
  CHECK(zhmt_cli("train-stage2 --config " + q(dir / "s1.ini") + " --out-dir " + q(dir / "x")).code == 2);
  CHECK(zhmt_cli("train-stage1 --out-dir " + q(dir / "x")).code == 2);

  testutil::spit(dir / "tpl.txt", "{src_text} =\n");
  testutil::spit(dir / "eval.ini", "[run]\neval_template = 0\neval_max_new = 4\n[data]\ntemplates = " +
                                       (dir / "tpl.txt").string() + "\n");
  const auto ev = zhmt_cli("evaluate --config " + q(dir / "eval.ini") + " --model " + q(dir / "run" / "final.ckpt") +
                           " --testset " + q(testutil::fixture("toy_colors.tsv")) + " --out " + q(dir / "e.tsv") +
                           " --hyp-out " + q(dir / "h.tsv"));
  INFO(ev.out);
  CHECK(ev.code == 0);
  CHECK(count_lines(testutil::slurp(dir / "h.tsv")) == 16);
  CHECK(testutil::slurp(dir / "e.tsv").find("pair\ten-zh\t") != std::string::npos);
  CHECK(zhmt_cli("evaluate --model " + q(dir / "missing.ckpt") + " --testset " + q(testutil::fixture("toy_colors.tsv")) +
                 " --out " + q(dir / "e.tsv"))
            .code == 3);
}
