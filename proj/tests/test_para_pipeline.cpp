#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "gen.hpp"
#include "test_util.hpp"
#include "zhmt/errors.hpp"
#include "zhmt/para_pipeline.hpp"

using namespace zhmt;

namespace {

ParallelRecord rec(std::string src_lang, std::string tgt_lang, std::string src, std::string tgt) {
  return {std::move(src_lang), std::move(tgt_lang), std::move(src), std::move(tgt), "t"};
}

std::string n_words(std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " w" : "w") + std::to_string(i);
  return s;
}

std::string n_hanzi(std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += "字";
  return s;
}

ParaPipelineConfig fixture_config() {
  ParaPipelineConfig cfg;
  cfg.sensitive = SensitiveLexicon::load(testutil::fixture("sensitive_words.txt"));
  return cfg;
}

std::vector<ParallelRecord> load_fixture() {
  std::vector<ParallelRecord> out;
  std::istringstream in(testutil::slurp(testutil::fixture("para12.tsv")));
  std::string line;
  while (std::getline(in, line)) out.push_back(std::get<ParallelRecord>(parse_record_line(line, "fx")));
  return out;
}

}  // namespace

TEST_CASE("file pairing by suffix") {
  testutil::TempDir dir("pair");
  testutil::spit(dir / "a.en", "one\ntwo\n");
  testutil::spit(dir / "a.zh", "一\n二\n");
  testutil::spit(dir / "b.en", "lonely\n");
  const auto pairs = pair_files(dir.path(), "en", "zh");
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].first.filename() == "a.en");
  CHECK(pairs[0].second.filename() == "a.zh");
  const auto recs = read_file_pair(pairs[0], "en", "zh");
  REQUIRE(recs.size() == 2);
  CHECK(recs[1].src_text == "two");
  CHECK(recs[1].tgt_text == "二");
  CHECK(recs[1].source_id == "a:2");

  testutil::TempDir empty("empty");
  CHECK(pair_files(empty.path(), "en", "zh").empty());

  testutil::spit(dir / "c.en", "1\n2\n3\n");
  testutil::spit(dir / "c.zh", "1\n2\n");
  try {
    pair_files(dir.path(), "en", "zh");
    FAIL("expected AlignmentError");
  } catch (const AlignmentError& e) {
    CHECK(e.stem() == "c");
  }
}

TEST_CASE("punctuation ratio") {
  const ParaPipelineConfig cfg;
  auto v = check_punct_ratio(rec("en", "zh", "!!!", "你好"), cfg);
  CHECK_FALSE(v.kept);
  CHECK(v.measured.value() == 1.0);
  CHECK(check_punct_ratio(rec("zh", "en", "你好。", "hi."), cfg).kept);
  auto e = check_punct_ratio(rec("en", "zh", "   ", "你好"), cfg);
  CHECK_FALSE(e.kept);
  CHECK(e.reason == "empty");
}

TEST_CASE("rule checks") {
  const ParaPipelineConfig cfg;
  auto ws = check_rules(rec("en", "zh", "   ", "你好"), cfg);
  CHECK_FALSE(ws.kept);
  CHECK(ws.reason == "whitespace_only");
  auto lt = check_rules(rec("en", "zh", "see " + std::string(150, 'a'), "你好"), cfg);
  CHECK_FALSE(lt.kept);
  CHECK(lt.reason == "long_token");
  auto np = check_rules(rec("en", "zh", "ab\x01\x02", "你好"), cfg);
  CHECK_FALSE(np.kept);
  CHECK(np.reason == "nonprintable");
  CHECK(check_rules(rec("en", "zh", "a normal sentence", "一个正常的句子"), cfg).kept);
}

TEST_CASE("script ratio keeps at the threshold") {
  const ParaPipelineConfig cfg;
  auto v = check_script_ratio(rec("en", "zh", "hello", "hello there friend"), cfg);
  CHECK_FALSE(v.kept);
  CHECK(v.measured.value() == 0.0);
  CHECK(check_script_ratio(rec("en", "zh", "hello", "你好世界"), cfg).kept);
  CHECK(check_script_ratio(rec("en", "zh", "hello", "你好ok"), cfg).kept);
}

TEST_CASE("length checks") {
  const ParaPipelineConfig cfg;
  const auto tok = TokenizerSpec::counting();
  auto ratio = check_lengths(rec("en", "zh", n_words(10), n_hanzi(31)), cfg, tok);
  CHECK_FALSE(ratio.kept);
  CHECK(ratio.reason == "length_ratio");
  CHECK(ratio.measured.value() == doctest::Approx(3.1));
  CHECK(check_lengths(rec("en", "zh", n_words(10), n_hanzi(30)), cfg, tok).kept);
  // Symmetric: a source three times longer than the target is judged the same way.
  CHECK_FALSE(check_lengths(rec("en", "zh", n_words(31), n_hanzi(10)), cfg, tok).kept);
  CHECK(check_lengths(rec("en", "zh", n_words(12), n_hanzi(12)), cfg, tok).kept);
  auto short9 = check_lengths(rec("en", "zh", n_words(9), n_hanzi(9)), cfg, tok);
  CHECK_FALSE(short9.kept);
  CHECK(short9.reason == "too_short");
  auto long_side = check_lengths(rec("en", "zh", n_words(90), n_hanzi(251)), cfg, tok);
  CHECK_FALSE(long_side.kept);
  CHECK(long_side.reason == "too_long");
}

TEST_CASE("sensitive word frequency") {
  ParaPipelineConfig cfg;
  const auto tok = TokenizerSpec::counting();
  CHECK(check_sensitive(rec("en", "fr", "bad bad ok", "x"), cfg, tok).kept);
  cfg.sensitive.add("bad");
  auto v = check_sensitive(rec("en", "fr", "bad BAD ok", "rien"), cfg, tok);
  CHECK_FALSE(v.kept);
  CHECK(v.measured.value() == doctest::Approx(2.0 / 3.0));
  CHECK(check_sensitive(rec("en", "fr", "bad ok ok", "rien"), cfg, tok).kept);
  cfg.sensitive.add("赌博", "zh");
  CHECK_FALSE(check_sensitive(rec("en", "zh", "ok", "赌博赌博好"), cfg, tok).kept);
  CHECK(check_sensitive(rec("en", "zh", "ok", "赌博好好好"), cfg, tok).kept);
}

TEST_CASE("lexicon file sections") {
  const auto lex = SensitiveLexicon::parse("# comment\nCasino\n[zh]\n赌博 # inline\n");
  CHECK(lex.contains("casino", "en"));
  CHECK(lex.contains("casino", "zh"));
  CHECK(lex.contains("赌博", "zh"));
  CHECK_FALSE(lex.contains("赌博", "en"));
  CHECK(fold_case("ÀБΓ") == "àбγ");
}

TEST_CASE("dedup keeps first occurrences") {
  const auto a = rec("en", "zh", "a", "甲");
  const auto b = rec("en", "zh", "b", "乙");
  CHECK(dedup({a, a}) == std::vector<ParallelRecord>{a});
  CHECK(dedup({a, b, a}) == std::vector<ParallelRecord>{a, b});
  CHECK(dedup({}).empty());
}

TEST_CASE("normalization") {
  CHECK(normalize_text("\xE2\x80\x9Chi\xE2\x80\x9D") == "\"hi\"");
  CHECK(normalize_text("１２３") == "123");
  for (const std::string s : {"already fine", "你好，世界。", "\"hi\""}) {
    CHECK(normalize_text(s) == s);
    CHECK(normalize_text(normalize_text(s)) == normalize_text(s));
  }
}

TEST_CASE("record line parsing") {
  auto ok = parse_record_line("en\tzh\thi\t你好\tid7", "x:1");
  REQUIRE(std::holds_alternative<ParallelRecord>(ok));
  CHECK(std::get<ParallelRecord>(ok).source_id == "id7");
  auto four = parse_record_line("en\tzh\thi\t你好", "x:2");
  CHECK(std::get<ParallelRecord>(four).source_id == "x:2");
  CHECK(std::get<FilterVerdict>(parse_record_line("en\tzh\thi", "x")).reason == "malformed");
  CHECK(std::get<FilterVerdict>(parse_record_line("xx\tzh\thi\t你", "x")).reason == "unknown_language");
  CHECK(std::get<FilterVerdict>(parse_record_line("zh\tzh\thi\t你", "x")).reason == "same_language");
  CHECK(std::get<FilterVerdict>(parse_record_line("en\tzh\t\xFF\t你", "x")).reason == "invalid_utf8");
  const auto r = std::get<ParallelRecord>(ok);
  CHECK(std::get<ParallelRecord>(parse_record_line(format_record_line(r), "y")) == r);
}

TEST_CASE("empty stream") {
  const auto res = run_para_pipeline({}, ParaPipelineConfig{}, TokenizerSpec::counting());
  CHECK(res.records.empty());
  CHECK(res.report.totals.inputs == 0);
  CHECK(res.report.total_rejections() == 0);
}

TEST_CASE("twelve-pair fixture: one rejection per stage, six survivors") {
  const auto cfg = fixture_config();
  const auto tok = TokenizerSpec::counting();
  const auto res = run_para_pipeline(load_fixture(), cfg, tok);
  // Hand trace: lines 4 punct, 6 rules, 8 script, 10 lengths, 11 sensitive, 12 dedup of line 1.
  for (const char* stage : {para_stage::kPunctRatio, para_stage::kRules, para_stage::kScriptRatio,
                            para_stage::kLengths, para_stage::kSensitive, para_stage::kDedup})
    CHECK_MESSAGE(res.report.rejected(stage) == 1, stage);
  CHECK(res.report.rejected(para_stage::kIngest) == 0);
  std::vector<std::string> ids;
  for (const auto& r : res.records) ids.push_back(r.source_id);
  CHECK(ids == std::vector<std::string>{"fx:1", "fx:2", "fx:3", "fx:5", "fx:7", "fx:9"});
  CHECK(res.report.to_text() == testutil::slurp(testutil::fixture("para12_report.golden")));

  const auto again = run_para_pipeline(res.records, cfg, tok);
  CHECK(again.report.total_rejections() == 0);
  CHECK(again.records == res.records);
}

TEST_CASE("random records: balance, order, dedup and idempotence") {
  ParaPipelineConfig cfg;
  cfg.sensitive.add("casino");
  const auto tok = TokenizerSpec::counting();
  Rng rng(31);
  const auto input = gen::parallel_records(rng, 3000);
  const auto res = run_para_pipeline(input, cfg, tok);
  CHECK(res.report.balanced());
  CHECK(res.records.size() == res.report.totals.outputs);
  for (const auto& stage : para_stage_names()) {
    if (stage == para_stage::kIngest) continue;
    CHECK_MESSAGE(res.report.rejected(stage) > 0, stage);
  }
  // Survivors keep input order and appear exactly once.
  std::set<std::string> keys;
  std::size_t pos = 0;
  for (const auto& r : res.records) {
    CHECK(keys.insert(r.src_lang + "\x1f" + r.tgt_lang + "\x1f" + r.src_text + "\x1f" + r.tgt_text).second);
    auto it = std::find_if(input.begin() + static_cast<std::ptrdiff_t>(pos), input.end(),
                           [&](const ParallelRecord& x) { return x.source_id == r.source_id; });
    REQUIRE(it != input.end());
    pos = static_cast<std::size_t>(it - input.begin()) + 1;
  }
  const auto again = run_para_pipeline(res.records, cfg, tok);
  CHECK(again.report.total_rejections() == 0);
  CHECK(again.records == res.records);
  for (std::size_t w : {2, 5}) {
    const auto par = run_para_pipeline(input, cfg, tok, w);
    CHECK(par.records == res.records);
    CHECK(par.report == res.report);
  }
}

TEST_CASE("stream form writes surviving lines and counts ingestion failures") {
  const auto cfg = fixture_config();
  std::string text = testutil::slurp(testutil::fixture("para12.tsv"));
  text += "not a record\n";
  std::istringstream in(text);
  std::ostringstream out;
  const auto rep = run_para_pipeline(in, out, cfg, TokenizerSpec::counting());
  CHECK(rep.rejected(para_stage::kIngest) == 1);
  CHECK(rep.totals.inputs == 13);
  const std::string written = out.str();
  CHECK(std::count(written.begin(), written.end(), '\n') == 6);
}

TEST_CASE("config validation") {
  ParaPipelineConfig cfg;
  cfg.length_ratio_max = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.punct_ratio_max = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
