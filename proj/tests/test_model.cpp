#include <doctest.h>

#include <cmath>
#include <set>

#include "reference.hpp"
#include "zhmt/errors.hpp"
#include "zhmt/model.hpp"

using namespace zhmt;

namespace {

std::vector<TokenId> random_ids(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> ids(n);
  for (auto& id : ids) id = static_cast<TokenId>(rng.uniform_index(vocab));
  return ids;
}

bool experts_equal_dense(const ParameterSet& p, std::size_t l, std::size_t e) {
  for (const char* part : {"w1", "b1", "w2", "b2"})
    if (!(p.at(pname::expert(l, e, part)) == p.at(pname::layer(l, std::string("ffn.") + part)))) return false;
  return true;
}

ModelConfig small() {
  ModelConfig c;
  c.vocab_size = 40;
  c.hidden = 16;
  c.ffn_inner = 32;
  c.heads = 4;
  c.layers = 4;
  c.context = 24;
  c.sparse_step = 2;
  c.moe_expert_count = 4;
  c.top_k = 1;
  c.reuse_count = 2;
  c.init_std = 0.3;
  return c;
}

double loss_of(const std::vector<TokenId>& ids, const std::vector<TokenId>& targets, const ParameterSet& p,
               const ModelConfig& cfg) {
  return cross_entropy(forward(ids, p, cfg), targets).loss;
}

}  // namespace

TEST_CASE("config validation and presets") {
  CHECK_NOTHROW(ModelConfig::desk().validate());
  CHECK_NOTHROW(ModelConfig::tiny().validate());
  CHECK_NOTHROW(ModelConfig::full().validate());
  CHECK(ModelConfig::preset("desk") == ModelConfig::desk());
  CHECK(ModelConfig::preset("full").hidden == 4096);
  CHECK_THROWS_AS(ModelConfig::preset("huge"), ConfigError);
  CHECK(parameter_count(ModelConfig::full()) > 7'000'000'000ULL);
  auto bad = ModelConfig::desk();
  bad.heads = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ModelConfig::desk();
  bad.top_k = 9;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ModelConfig::desk();
  bad.sparse_step = 9;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ModelConfig::desk();
  bad.reuse_count = 9;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ModelConfig::desk();
  bad.load_balance_coef = 0.01;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ModelConfig::desk();
  bad.ffn_inner = 32;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("MoE placement in the stack") {
  const auto cfg = ModelConfig::desk();
  CHECK(cfg.moe_layers() == std::vector<std::size_t>{3, 7});
  const auto p = init_model(cfg);
  CHECK(p.trainable.count(pname::router(3)) == 1);
  CHECK(p.trainable.count(pname::router(7)) == 1);
  CHECK(p.trainable.count(pname::router(0)) == 0);
  CHECK(parameter_count(cfg) == [&] {
    std::size_t n = 0;
    for (const auto& [_, t] : p.frozen) n += t.numel();
    for (const auto& [_, t] : p.trainable) n += t.numel();
    return n;
  }());
}

TEST_CASE("frozen and trainable sets are disjoint; trainable holds only MoE tensors") {
  const auto p = init_model(ModelConfig::desk());
  for (const auto& [name, _] : p.trainable) {
    CHECK(p.frozen.count(name) == 0);
    CHECK(name.find(".moe.") != std::string::npos);
  }
  auto cfg = ModelConfig::desk();
  cfg.train_backbone = true;
  const auto all = init_model(cfg);
  CHECK(all.frozen.empty());
  CHECK(all.trainable.size() == p.trainable.size() + p.frozen.size());
}

TEST_CASE("initialization modes") {
  auto cfg = ModelConfig::desk();
  cfg.init_mode = InitMode::Reuse;
  const auto reuse = init_model(cfg);
  for (std::size_t l : cfg.moe_layers())
    for (std::size_t e = 0; e < cfg.moe_expert_count; ++e) CHECK(experts_equal_dense(reuse, l, e));

  cfg.init_mode = InitMode::Mixed;
  const auto mixed = init_model(cfg);
  for (std::size_t l : cfg.moe_layers())
    for (std::size_t e = 0; e < cfg.moe_expert_count; ++e) CHECK(experts_equal_dense(mixed, l, e) == (e < 4));

  cfg.init_mode = InitMode::Random;
  const auto random = init_model(cfg);
  std::set<std::uint64_t> sums;
  for (std::size_t l : cfg.moe_layers())
    for (std::size_t e = 0; e < cfg.moe_expert_count; ++e) {
      CHECK_FALSE(experts_equal_dense(random, l, e));
      sums.insert(checksum(random.at(pname::expert(l, e, "w1"))));
    }
  CHECK(sums.size() == cfg.moe_layers().size() * cfg.moe_expert_count);
  // The backbone does not depend on the expert init mode.
  CHECK(random.frozen_checksum() == reuse.frozen_checksum());
  CHECK(init_model(cfg).trainable_checksum() == random.trainable_checksum());
  cfg.seed = 1;
  CHECK(init_model(cfg).frozen_checksum() != random.frozen_checksum());
  CHECK(parse_init_mode(to_string(InitMode::Mixed)) == InitMode::Mixed);
  CHECK(parse_moe_placement(to_string(MoePlacement::ReplaceFfn)) == MoePlacement::ReplaceFfn);
}

TEST_CASE("gate examples") {
  ModelConfig cfg = ModelConfig::desk();
  const std::size_t E = cfg.moe_expert_count, H = cfg.hidden;
  Tensor router({H, E});
  Eigen::RowVectorXd x = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(H));
  x[0] = 1.0;

  cfg.top_k = E;
  auto uniform = gate(x, router, cfg);
  for (double g : uniform.values) CHECK(g == doctest::Approx(1.0 / E).epsilon(1e-15));

  router.data[0] = 2.0;
  router.data[1] = 1.0;
  cfg.top_k = 2;
  auto two = gate(x, router, cfg);
  CHECK(two.selected == std::vector<std::size_t>{0, 1});
  const double e2 = std::exp(2.0), e1 = std::exp(1.0);
  CHECK(std::abs(two.values[0] - e2 / (e2 + e1)) < 1e-15);
  CHECK(std::abs(two.values[1] - e1 / (e2 + e1)) < 1e-15);
  for (std::size_t i = 2; i < E; ++i) CHECK(two.values[i] == 0.0);

  cfg.top_k = 1;
  auto one = gate(x, router, cfg);
  CHECK(one.values[0] == 1.0);
  CHECK(one.selected == std::vector<std::size_t>{0});
}

TEST_CASE("gates sum to one with exactly top_k nonzero") {
  for (std::size_t k : {1, 2, 3, 8}) {
    ModelConfig cfg = ModelConfig::desk();
    cfg.top_k = k;
    Rng rng(k);
    Tensor router({cfg.hidden, cfg.moe_expert_count});
    for (auto& v : router.data) v = rng.normal();
    for (int trial = 0; trial < 200; ++trial) {
      Eigen::RowVectorXd x(static_cast<Eigen::Index>(cfg.hidden));
      for (auto i = 0; i < x.size(); ++i) x[i] = rng.normal();
      const auto g = gate(x, router, cfg);
      double sum = 0.0;
      std::size_t nonzero = 0;
      for (double v : g.values) {
        sum += v;
        nonzero += v != 0.0;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
      CHECK(nonzero == k);
      CHECK(g.selected.size() == k);
    }
  }
}

TEST_CASE("replace_ffn with reused experts equals the dense reference") {
  ModelConfig cfg = small();
  cfg.moe_placement = MoePlacement::ReplaceFfn;
  cfg.init_mode = InitMode::Reuse;
  cfg.top_k = 2;
  const auto p = init_model(cfg);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto ids = random_ids(rng, 1 + rng.uniform_index(cfg.context), cfg.vocab_size);
    const Mat got = forward(ids, p, cfg);
    const auto want = ref::dense_forward(ids, p, cfg);
    double worst = 0.0;
    for (std::size_t t = 0; t < ids.size(); ++t)
      for (std::size_t v = 0; v < cfg.vocab_size; ++v)
        worst = std::max(worst, std::abs(got(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(v)) - want[t][v]));
    CHECK(worst <= 1e-10);
  }
}

TEST_CASE("output shape and causality") {
  const ModelConfig cfg = small();
  const auto p = init_model(cfg);
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(cfg.context - 1);
    const auto a = random_ids(rng, n, cfg.vocab_size);
    auto b = a;
    const std::size_t cut = 1 + rng.uniform_index(n - 1);
    for (std::size_t i = cut; i < n; ++i) b[i] = static_cast<TokenId>(rng.uniform_index(cfg.vocab_size));
    const Mat la = forward(a, p, cfg), lb = forward(b, p, cfg);
    CHECK(static_cast<std::size_t>(la.rows()) == n);
    CHECK(static_cast<std::size_t>(la.cols()) == cfg.vocab_size);
    CHECK((la.topRows(static_cast<Eigen::Index>(cut)) - lb.topRows(static_cast<Eigen::Index>(cut))).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("forward errors") {
  const ModelConfig cfg = small();
  auto p = init_model(cfg);
  CHECK_THROWS_AS(forward({}, p, cfg), Error);
  CHECK_THROWS_AS(forward({1, 2, 40}, p, cfg), InvalidToken);
  CHECK_THROWS_AS(forward({1, -1}, p, cfg), InvalidToken);
  CHECK_THROWS_AS(forward(std::vector<TokenId>(cfg.context + 1, 1), p, cfg), Error);
  p.find_mut("head.weight")->data[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(forward({1, 2, 3}, p, cfg), NumericError);
}

TEST_CASE("top-1 routing runs one expert per token per MoE layer") {
  const ModelConfig cfg = ModelConfig::desk();
  const auto p = init_model(cfg);
  Rng rng(4);
  ForwardStats stats;
  std::size_t tokens = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto ids = random_ids(rng, 5 + rng.uniform_index(40), cfg.vocab_size);
    tokens += ids.size();
    forward(ids, p, cfg, nullptr, &stats);
  }
  REQUIRE(stats.expert_tokens.size() == cfg.moe_layers().size());
  for (const auto& per_layer : stats.expert_tokens) {
    std::size_t sum = 0;
    for (auto n : per_layer) sum += n;
    CHECK(sum == tokens);
  }
  CHECK(stats.expert_evaluations == tokens * cfg.moe_layers().size());
}

TEST_CASE("cross-entropy by hand") {
  const Mat zeros = Mat::Zero(11, 64);
  std::vector<TokenId> targets(11, 5);
  targets[10] = -1;
  const auto r = cross_entropy(zeros, targets);
  CHECK(r.count == 10);
  CHECK(std::abs(r.loss - std::log(64.0)) < 1e-12);

  Mat confident = Mat::Zero(3, 4);
  for (int t = 0; t < 3; ++t) confident(t, t) = 1e3;
  CHECK(cross_entropy(confident, {0, 1, 2}).loss < 1e-12);

  Mat two(3, 2);
  two << 0.3, -1.2, 2.0, 0.5, -0.7, -0.1;
  const std::vector<TokenId> y = {1, 0, 1};
  double hand = 0.0;
  for (int t = 0; t < 3; ++t) {
    const double a = two(t, 0), b = two(t, 1);
    const double py = std::exp(two(t, y[static_cast<std::size_t>(t)])) / (std::exp(a) + std::exp(b));
    hand -= std::log(py);
  }
  CHECK(std::abs(cross_entropy(two, y).loss - hand / 3.0) < 1e-12);

  const auto all_masked = cross_entropy(two, {-1, -1, -1});
  CHECK(all_masked.count == 0);
  CHECK(all_masked.loss == 0.0);
  CHECK(all_masked.dlogits.isZero(0.0));
  CHECK(shifted_targets({7, 8, 9}) == std::vector<TokenId>{8, 9, -1});
}

TEST_CASE("backward matches central differences on the tiny config") {
  for (bool backbone : {false, true}) {
    for (auto placement : {MoePlacement::BeforeFfn, MoePlacement::ReplaceFfn}) {
      ModelConfig cfg = ModelConfig::tiny();
      cfg.train_backbone = backbone;
      cfg.moe_placement = placement;
      auto p = init_model(cfg);
      const std::vector<TokenId> ids = {2, 7, 4, 9, 1};
      const std::vector<TokenId> targets = {7, 4, 9, 1, 3};
      ForwardCache cache;
      const Mat logits = forward(ids, p, cfg, &cache);
      const auto lr = cross_entropy(logits, targets);
      TensorMap grads;
      backward(cache, lr.dlogits, p, cfg, grads);
      for (const auto& [name, _] : grads) CHECK(p.is_trainable(name));
      // Key biases have an exactly zero gradient (softmax shift invariance); their numeric
      // estimate is pure rounding noise, which the 1e-6 floor absorbs.
      const double floor = backbone ? 1e-6 : 1e-7;
      const auto check = ref::finite_difference(p, grads, [&] { return loss_of(ids, targets, p, cfg); }, 1e-5, floor);
      INFO(check.worst);
      CHECK(check.max_rel <= 1e-4);
      CHECK(check.checked > 100);
    }
  }
}

TEST_CASE("frozen tensors never receive gradient entries") {
  const ModelConfig cfg = small();
  const auto p = init_model(cfg);
  const std::vector<TokenId> ids = {1, 2, 3, 4};
  ForwardCache cache;
  const auto lr = cross_entropy(forward(ids, p, cfg, &cache), shifted_targets(ids));
  TensorMap grads;
  backward(cache, lr.dlogits, p, cfg, grads);
  CHECK_FALSE(grads.empty());
  for (const auto& [name, g] : grads) {
    CHECK(p.frozen.count(name) == 0);
    CHECK(g.all_finite());
  }
}

TEST_CASE("an expert the router never picks gets zero gradient") {
  ModelConfig cfg = small();
  cfg.init_mode = InitMode::Random;
  auto p = init_model(cfg);
  const std::size_t l = cfg.moe_layers()[0];
  // Expert 2 copies expert 0's router column, so it always ties with 0 and loses the stable sort.
  Tensor& router = *p.find_mut(pname::router(l));
  for (std::size_t i = 0; i < cfg.hidden; ++i)
    router.data[i * cfg.moe_expert_count + 2] = router.data[i * cfg.moe_expert_count];
  Rng rng(2);
  TensorMap grads = zero_grads(p);
  for (int trial = 0; trial < 5; ++trial) {
    const auto ids = random_ids(rng, 10, cfg.vocab_size);
    ForwardCache cache;
    ForwardStats stats;
    const auto lr = cross_entropy(forward(ids, p, cfg, &cache, &stats), shifted_targets(ids));
    backward(cache, lr.dlogits, p, cfg, grads);
    if (stats.expert_tokens[0][2] != 0) {
      FAIL("expert 2 was selected");
    }
  }
  for (const char* part : {"w1", "b1", "w2", "b2"}) CHECK(grads.at(pname::expert(l, 2, part)).data == Buffer(grads.at(pname::expert(l, 2, part)).numel(), 0.0));
}

TEST_CASE("generation") {
  const ModelConfig cfg = small();
  const auto p = init_model(cfg);
  GenerateOptions opt;
  opt.max_new = 0;
  CHECK(generate({1, 2, 3}, p, cfg, opt) == std::vector<TokenId>{1, 2, 3});
  opt.max_new = 10;
  const auto a = generate({1, 2, 3}, p, cfg, opt);
  CHECK(a == generate({1, 2, 3}, p, cfg, opt));
  CHECK(a.size() <= 13);
  const auto logits = forward({1, 2, 3}, p, cfg);
  Eigen::Index best;
  logits.row(2).maxCoeff(&best);
  CHECK(a[3] == static_cast<TokenId>(best));
  opt.max_new = 1000;
  CHECK(generate({1}, p, cfg, opt).size() <= cfg.context);
  opt.mode = DecodeMode::Sample;
  opt.seed = 9;
  CHECK(generate({1, 2}, p, cfg, opt) == generate({1, 2}, p, cfg, opt));
  CHECK_THROWS_AS(generate({}, p, cfg, opt), Error);
}
