#include "zhmt/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "zhmt/errors.hpp"

namespace zhmt {

std::string_view to_string(MoePlacement p) { return p == MoePlacement::ReplaceFfn ? "replace_ffn" : "before_ffn"; }

MoePlacement parse_moe_placement(std::string_view s) {
  if (s == "replace_ffn") return MoePlacement::ReplaceFfn;
  if (s == "before_ffn") return MoePlacement::BeforeFfn;
  throw ConfigError("unknown moe_placement '" + std::string(s) + "'");
}

std::string_view to_string(InitMode m) {
  switch (m) {
    case InitMode::Random: return "random";
    case InitMode::Reuse: return "reuse";
    case InitMode::Mixed: return "mixed";
  }
  return "?";
}

InitMode parse_init_mode(std::string_view s) {
  if (s == "random") return InitMode::Random;
  if (s == "reuse") return InitMode::Reuse;
  if (s == "mixed") return InitMode::Mixed;
  throw ConfigError("unknown init_mode '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (vocab_size < 4) fail("vocab_size must cover the four reserved ids");
  if (hidden == 0 || heads == 0 || hidden % heads != 0) fail("hidden must be a positive multiple of heads");
  if (ffn_inner < hidden) fail("ffn_inner must be at least hidden");
  if (layers == 0) fail("layers must be positive");
  if (context < 2) fail("context must be at least 2");
  if (sparse_step < 1 || sparse_step > layers) fail("sparse_step must lie in [1, layers]");
  if (moe_expert_count == 0) fail("moe_expert_count must be positive");
  if (top_k < 1 || top_k > moe_expert_count) fail("top_k must lie in [1, moe_expert_count]");
  if (reuse_count > moe_expert_count) fail("reuse_count must not exceed moe_expert_count");
  if (!(init_std > 0.0) || !(head_init_std > 0.0)) fail("init stds must be positive");
  if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps must be positive");
  if (load_balance_coef != 0.0) fail("load_balance_coef other than 0 is not supported");
}

std::vector<std::size_t> ModelConfig::moe_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < layers; ++l)
    if (is_moe_layer(l)) out.push_back(l);
  return out;
}

ModelConfig ModelConfig::desk() { return {}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.vocab_size = 11;
  c.hidden = 8;
  c.ffn_inner = 16;
  c.heads = 2;
  c.layers = 2;
  c.context = 8;
  c.sparse_step = 1;
  c.moe_expert_count = 3;
  c.top_k = 2;
  c.reuse_count = 1;
  c.init_std = 0.5;
  c.head_init_std = 0.5;
  return c;
}

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.vocab_size = 250752;
  c.hidden = 4096;
  c.ffn_inner = 16384;
  c.heads = 32;
  c.layers = 30;
  c.context = 4096;
  c.sparse_step = 8;
  c.moe_expert_count = 8;
  c.top_k = 1;
  c.head_init_std = 0.015625;
  return c;
}

ModelConfig ModelConfig::preset(std::string_view name) {
  if (name == "desk") return desk();
  if (name == "tiny") return tiny();
  if (name == "full") return full();
  throw ConfigError("unknown model preset '" + std::string(name) + "'");
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t h = c.hidden, f = c.ffn_inner;
  const std::size_t ffn = h * f + f + f * h + h;
  const std::size_t layer = 4 * h + (h * 3 * h + 3 * h) + (h * h + h) + ffn;
  const std::size_t moe = h * c.moe_expert_count + c.moe_expert_count * ffn;
  return c.vocab_size * h * 2 + 4 * h + c.layers * layer + c.moe_layers().size() * moe;
}

const Tensor& ParameterSet::at(const std::string& name) const {
  if (auto it = frozen.find(name); it != frozen.end()) return it->second;
  if (auto it = trainable.find(name); it != trainable.end()) return it->second;
  throw Error("no parameter named '" + name + "'");
}

Tensor* ParameterSet::find_mut(const std::string& name) {
  if (auto it = frozen.find(name); it != frozen.end()) return &it->second;
  if (auto it = trainable.find(name); it != trainable.end()) return &it->second;
  return nullptr;
}

namespace pname {
std::string layer(std::size_t l, std::string_view rest) { return "layers." + std::to_string(l) + "." + std::string(rest); }
std::string expert(std::size_t l, std::size_t e, std::string_view rest) {
  return layer(l, "moe.expert." + std::to_string(e) + "." + std::string(rest));
}
std::string router(std::size_t l) { return layer(l, "moe.router"); }
}  // namespace pname

namespace {

Tensor normal_tensor(std::vector<std::size_t> shape, const std::string& name, const ModelConfig& cfg) {
  Tensor t(std::move(shape));
  Rng rng = Rng(cfg.seed).split(fnv1a(name));
  const double std = name == "head.weight" ? cfg.head_init_std : cfg.init_std;
  for (double& v : t.data) v = rng.normal() * std;
  return t;
}

}  // namespace

ParameterSet init_model(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t h = cfg.hidden, f = cfg.ffn_inner, V = cfg.vocab_size;
  TensorMap backbone;
  auto ln = [&](const std::string& prefix) {
    backbone[prefix + ".gamma"] = Tensor({h}, 1.0);
    backbone[prefix + ".beta"] = Tensor({h}, 0.0);
  };
  auto normal = [&](const std::string& name, std::vector<std::size_t> shape) {
    backbone[name] = normal_tensor(std::move(shape), name, cfg);
  };
  normal("embed.weight", {V, h});
  ln("embed_ln");
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    ln(pname::layer(l, "ln1"));
    ln(pname::layer(l, "ln2"));
    normal(pname::layer(l, "attn.wqkv"), {h, 3 * h});
    backbone[pname::layer(l, "attn.bqkv")] = Tensor({3 * h});
    normal(pname::layer(l, "attn.wo"), {h, h});
    backbone[pname::layer(l, "attn.bo")] = Tensor({h});
    normal(pname::layer(l, "ffn.w1"), {h, f});
    backbone[pname::layer(l, "ffn.b1")] = Tensor({f});
    normal(pname::layer(l, "ffn.w2"), {f, h});
    backbone[pname::layer(l, "ffn.b2")] = Tensor({h});
  }
  ln("final_ln");
  normal("head.weight", {h, V});

  TensorMap moe;
  for (std::size_t l : cfg.moe_layers()) {
    moe[pname::router(l)] = normal_tensor({h, cfg.moe_expert_count}, pname::router(l), cfg);
    for (std::size_t e = 0; e < cfg.moe_expert_count; ++e) {
      const bool reuse = cfg.init_mode == InitMode::Reuse || (cfg.init_mode == InitMode::Mixed && e < cfg.reuse_count);
      for (const char* part : {"w1", "b1", "w2", "b2"}) {
        const std::string name = pname::expert(l, e, part);
        const Tensor& dense = backbone.at(pname::layer(l, std::string("ffn.") + part));
        if (reuse) {
          moe[name] = dense;
        } else if (part[0] == 'w') {
          moe[name] = normal_tensor(dense.shape, name, cfg);
        } else {
          moe[name] = Tensor(dense.shape);
        }
      }
    }
  }

  ParameterSet p;
  if (cfg.train_backbone) {
    p.trainable = std::move(backbone);
    p.trainable.merge(moe);
  } else {
    p.frozen = std::move(backbone);
    p.trainable = std::move(moe);
  }
  return p;
}

GateVector gate(const Eigen::Ref<const Eigen::RowVectorXd>& x, const Tensor& router, const ModelConfig& cfg) {
  const std::size_t E = cfg.moe_expert_count;
  const Eigen::Map<const Mat> W(router.ptr(), router.rows(), router.cols());
  const Eigen::RowVectorXd logits = x * W;
  std::vector<std::size_t> order(E);
  for (std::size_t i = 0; i < E; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  const double mx = logits.maxCoeff();
  std::vector<double> p(E);
  double z = 0.0;
  for (std::size_t i = 0; i < E; ++i) z += p[i] = std::exp(logits[i] - mx);
  for (double& v : p) v /= z;
  GateVector g;
  g.values.assign(E, 0.0);
  g.selected.assign(order.begin(), order.begin() + cfg.top_k);
  double kept = 0.0;
  for (std::size_t i : g.selected) kept += p[i];
  for (std::size_t i : g.selected) g.values[i] = p[i] / kept;
  return g;
}

void ForwardStats::reset(const ModelConfig& cfg) {
  expert_tokens.assign(cfg.moe_layers().size(), std::vector<std::size_t>(cfg.moe_expert_count, 0));
  expert_evaluations = 0;
}

namespace {

using CMap = Eigen::Map<const Mat>;
using MMap = Eigen::Map<Mat>;
using RowMap = Eigen::Map<const Eigen::RowVectorXd>;

CMap as_mat(const Tensor& t) { return CMap(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())); }
RowMap as_row(const Tensor& t) { return RowMap(t.ptr(), static_cast<Eigen::Index>(t.numel())); }
MMap as_mat(Tensor& t) { return MMap(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())); }
Eigen::Map<Eigen::RowVectorXd> as_row(Tensor& t) {
  return Eigen::Map<Eigen::RowVectorXd>(t.ptr(), static_cast<Eigen::Index>(t.numel()));
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }
double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

Mat ln_forward(const Mat& x, const Tensor& g, const Tensor& b, double eps, LnCache& c) {
  const Eigen::VectorXd mu = x.rowwise().mean();
  Mat xc = x.colwise() - mu;
  const Eigen::VectorXd var = xc.array().square().rowwise().mean();
  c.rstd = (var.array() + eps).rsqrt();
  c.xhat = xc.array().colwise() * c.rstd.array();
  Mat y = c.xhat.array().rowwise() * as_row(g).array();
  y.rowwise() += as_row(b);
  return y;
}

Mat ln_backward(const Mat& dy, const LnCache& c, const Tensor& g, Tensor* dg, Tensor* db) {
  if (dg) as_row(*dg) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  if (db) as_row(*db) += dy.colwise().sum();
  const Mat dxhat = dy.array().rowwise() * as_row(g).array();
  const Eigen::VectorXd m1 = dxhat.rowwise().mean();
  const Eigen::VectorXd m2 = (dxhat.array() * c.xhat.array()).rowwise().mean();
  Mat dx = dxhat.colwise() - m1;
  dx.array() -= c.xhat.array().colwise() * m2.array();
  dx.array().colwise() *= c.rstd.array();
  return dx;
}

struct FfnWeights {
  const Tensor *w1, *b1, *w2, *b2;
};

FfnWeights ffn_weights(const ParameterSet& p, const std::string& prefix) {
  return {&p.at(prefix + "w1"), &p.at(prefix + "b1"), &p.at(prefix + "w2"), &p.at(prefix + "b2")};
}

Mat ffn_forward(const Mat& in, const FfnWeights& w, FfnCache& c) {
  c.in = in;
  c.z = in * as_mat(*w.w1);
  c.z.rowwise() += as_row(*w.b1);
  c.act = c.z.unaryExpr(&gelu);
  Mat out = c.act * as_mat(*w.w2);
  out.rowwise() += as_row(*w.b2);
  return out;
}

class GradSink {
 public:
  GradSink(const ParameterSet& p, TensorMap& g) : params_(p), grads_(g) {}
  Tensor* operator()(const std::string& name) {
    auto it = params_.trainable.find(name);
    if (it == params_.trainable.end()) return nullptr;
    Tensor& g = grads_[name];
    if (g.shape != it->second.shape) g = Tensor(it->second.shape);
    return &g;
  }

 private:
  const ParameterSet& params_;
  TensorMap& grads_;
};

Mat ffn_backward(const Mat& dout, const FfnCache& c, const FfnWeights& w, GradSink& sink, const std::string& prefix) {
  if (Tensor* g = sink(prefix + "w2")) as_mat(*g).noalias() += c.act.transpose() * dout;
  if (Tensor* g = sink(prefix + "b2")) as_row(*g) += dout.colwise().sum();
  const Mat dact = dout * as_mat(*w.w2).transpose();
  const Mat dz = dact.array() * c.z.unaryExpr(&gelu_grad).array();
  if (Tensor* g = sink(prefix + "w1")) as_mat(*g).noalias() += c.in.transpose() * dz;
  if (Tensor* g = sink(prefix + "b1")) as_row(*g) += dz.colwise().sum();
  return dz * as_mat(*w.w1).transpose();
}

std::vector<double> alibi_slopes(std::size_t n) {
  auto pow2 = [](std::size_t m) {
    const double start = std::pow(2.0, -std::pow(2.0, -(std::log2(static_cast<double>(m)) - 3.0)));
    std::vector<double> r(m);
    for (std::size_t i = 0; i < m; ++i) r[i] = std::pow(start, static_cast<double>(i + 1));
    return r;
  };
  std::size_t closest = 1;
  while (closest * 2 <= n) closest *= 2;
  std::vector<double> r = pow2(closest);
  if (closest < n) {
    const std::vector<double> extra = pow2(2 * closest);
    for (std::size_t i = 0; r.size() < n; i += 2) r.push_back(extra[i]);
  }
  return r;
}

std::string ffn_prefix(std::size_t l) { return pname::layer(l, "ffn."); }

}  // namespace

Mat forward(const std::vector<TokenId>& ids, const ParameterSet& params, const ModelConfig& cfg, ForwardCache* cache,
            ForwardStats* stats) {
  if (ids.empty()) throw Error("forward on an empty sequence");
  if (ids.size() > cfg.context)
    throw Error("sequence length " + std::to_string(ids.size()) + " exceeds context " + std::to_string(cfg.context));
  const auto T = static_cast<Eigen::Index>(ids.size());
  const auto H = static_cast<Eigen::Index>(cfg.hidden);
  const auto d = static_cast<Eigen::Index>(cfg.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const std::vector<double> slopes = alibi_slopes(cfg.heads);
  if (stats && stats->expert_tokens.size() != cfg.moe_layers().size()) stats->reset(cfg);

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c = ForwardCache{};
  c.ids = ids;
  c.layers.resize(cfg.layers);

  const Tensor& emb = params.at("embed.weight");
  Mat x(T, H);
  for (Eigen::Index t = 0; t < T; ++t) {
    const TokenId id = ids[static_cast<std::size_t>(t)];
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size)
      throw InvalidToken("token id " + std::to_string(id) + " outside vocab of " + std::to_string(cfg.vocab_size));
    x.row(t) = as_mat(emb).row(id);
  }
  x = ln_forward(x, params.at("embed_ln.gamma"), params.at("embed_ln.beta"), cfg.layer_norm_eps, c.emb_ln);

  std::size_t moe_ordinal = 0;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    LayerCache& lc = c.layers[l];
    lc.a = ln_forward(x, params.at(pname::layer(l, "ln1.gamma")), params.at(pname::layer(l, "ln1.beta")),
                      cfg.layer_norm_eps, lc.ln1);
    lc.qkv = lc.a * as_mat(params.at(pname::layer(l, "attn.wqkv")));
    lc.qkv.rowwise() += as_row(params.at(pname::layer(l, "attn.bqkv")));
    lc.ctx.resize(T, H);
    lc.probs.resize(cfg.heads);
    for (std::size_t hh = 0; hh < cfg.heads; ++hh) {
      const auto off = static_cast<Eigen::Index>(hh) * d;
      const auto Q = lc.qkv.middleCols(off, d);
      const auto K = lc.qkv.middleCols(H + off, d);
      const auto V = lc.qkv.middleCols(2 * H + off, d);
      Mat S = (Q * K.transpose()) * scale;
      Mat& P = lc.probs[hh];
      P.setZero(T, T);
      for (Eigen::Index t = 0; t < T; ++t) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index s = 0; s <= t; ++s) {
          S(t, s) -= slopes[hh] * static_cast<double>(t - s);
          mx = std::max(mx, S(t, s));
        }
        double z = 0.0;
        for (Eigen::Index s = 0; s <= t; ++s) z += P(t, s) = std::exp(S(t, s) - mx);
        for (Eigen::Index s = 0; s <= t; ++s) P(t, s) /= z;
      }
      lc.ctx.middleCols(off, d).noalias() = P * V;
    }
    Mat o = lc.ctx * as_mat(params.at(pname::layer(l, "attn.wo")));
    o.rowwise() += as_row(params.at(pname::layer(l, "attn.bo")));
    x += o;

    lc.u = ln_forward(x, params.at(pname::layer(l, "ln2.gamma")), params.at(pname::layer(l, "ln2.beta")),
                      cfg.layer_norm_eps, lc.ln2);
    const FfnWeights dense = ffn_weights(params, ffn_prefix(l));
    if (cfg.is_moe_layer(l)) {
      lc.moe = true;
      const Tensor& router = params.at(pname::router(l));
      lc.gates.resize(static_cast<std::size_t>(T));
      lc.experts.assign(cfg.moe_expert_count, ExpertCache{});
      for (Eigen::Index t = 0; t < T; ++t) {
        GateVector g = gate(lc.u.row(t), router, cfg);
        for (std::size_t e : g.selected) {
          lc.experts[e].rows.push_back(static_cast<std::size_t>(t));
          lc.experts[e].gates.push_back(g.values[e]);
        }
        lc.gates[static_cast<std::size_t>(t)] = std::move(g);
      }
      lc.m.setZero(T, H);
      for (std::size_t e = 0; e < cfg.moe_expert_count; ++e) {
        ExpertCache& ec = lc.experts[e];
        if (ec.rows.empty()) continue;
        Mat in(static_cast<Eigen::Index>(ec.rows.size()), H);
        for (std::size_t r = 0; r < ec.rows.size(); ++r) in.row(static_cast<Eigen::Index>(r)) = lc.u.row(ec.rows[r]);
        ec.out = ffn_forward(in, ffn_weights(params, pname::expert(l, e, "")), ec.ffn);
        for (std::size_t r = 0; r < ec.rows.size(); ++r)
          lc.m.row(ec.rows[r]) += ec.gates[r] * ec.out.row(static_cast<Eigen::Index>(r));
        if (stats) {
          stats->expert_tokens[moe_ordinal][e] += ec.rows.size();
          stats->expert_evaluations += ec.rows.size();
        }
      }
      ++moe_ordinal;
      if (cfg.moe_placement == MoePlacement::BeforeFfn)
        x += ffn_forward(lc.m, dense, lc.ffn);
      else
        x += lc.m;
    } else {
      x += ffn_forward(lc.u, dense, lc.ffn);
    }
  }
  c.final_h = ln_forward(x, params.at("final_ln.gamma"), params.at("final_ln.beta"), cfg.layer_norm_eps, c.final_ln);
  Mat logits = c.final_h * as_mat(params.at("head.weight"));
  if (!logits.allFinite()) throw NumericError("non-finite values in logits");
  return logits;
}

std::vector<TokenId> shifted_targets(const std::vector<TokenId>& ids) {
  std::vector<TokenId> t(ids.size(), -1);
  for (std::size_t i = 0; i + 1 < ids.size(); ++i) t[i] = ids[i + 1];
  return t;
}

LossResult cross_entropy(const Mat& logits, const std::vector<TokenId>& targets) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size())
    throw Error("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(logits.rows()) +
                " positions");
  LossResult r;
  r.dlogits.setZero(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const TokenId y = targets[static_cast<std::size_t>(t)];
    if (y < 0) continue;
    if (y >= logits.cols()) throw InvalidToken("target id " + std::to_string(y) + " outside vocab");
    const double mx = logits.row(t).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(t).array() - mx).exp();
    const double z = e.sum();
    r.loss += std::log(z) + mx - logits(t, y);
    r.dlogits.row(t) = e / z;
    r.dlogits(t, y) -= 1.0;
    ++r.count;
  }
  if (r.count) {
    r.loss /= static_cast<double>(r.count);
    r.dlogits /= static_cast<double>(r.count);
  }
  return r;
}

double clm_loss(const Mat& logits, const std::vector<TokenId>& ids) {
  return cross_entropy(logits, shifted_targets(ids)).loss;
}

void backward(const ForwardCache& c, const Mat& dlogits_in, const ParameterSet& params, const ModelConfig& cfg,
              TensorMap& grads, double scale) {
  GradSink sink(params, grads);
  const auto T = static_cast<Eigen::Index>(c.ids.size());
  const auto H = static_cast<Eigen::Index>(cfg.hidden);
  const auto d = static_cast<Eigen::Index>(cfg.head_dim());
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(d));
  const Mat dlogits = dlogits_in * scale;

  if (Tensor* g = sink("head.weight")) as_mat(*g).noalias() += c.final_h.transpose() * dlogits;
  Mat dh = dlogits * as_mat(params.at("head.weight")).transpose();
  Mat dx = ln_backward(dh, c.final_ln, params.at("final_ln.gamma"), sink("final_ln.gamma"), sink("final_ln.beta"));

  // Lowest layer whose MoE block holds trainable tensors; nothing below it needs gradients
  // unless some backbone tensor is trainable.
  std::size_t stop = cfg.layers;
  bool backbone_trainable = false;
  for (const auto& [name, _] : params.trainable) {
    const auto moe = name.find(".moe.");
    if (name.rfind("layers.", 0) != 0 || moe == std::string::npos) {
      backbone_trainable = true;
      break;
    }
    stop = std::min<std::size_t>(stop, std::stoul(name.substr(7, moe - 7)));
  }
  if (backbone_trainable) stop = 0;

  for (std::size_t li = cfg.layers; li-- > 0;) {
    const LayerCache& lc = c.layers[li];
    const FfnWeights dense = ffn_weights(params, ffn_prefix(li));
    Mat du;
    if (lc.moe) {
      const Mat dm = cfg.moe_placement == MoePlacement::BeforeFfn
                         ? ffn_backward(dx, lc.ffn, dense, sink, ffn_prefix(li))
                         : dx;
      du.setZero(T, H);
      Mat dgate = Mat::Zero(T, static_cast<Eigen::Index>(cfg.moe_expert_count));
      for (std::size_t e = 0; e < cfg.moe_expert_count; ++e) {
        const ExpertCache& ec = lc.experts[e];
        if (ec.rows.empty()) continue;
        Mat dout(static_cast<Eigen::Index>(ec.rows.size()), H);
        for (std::size_t r = 0; r < ec.rows.size(); ++r) {
          const auto rr = static_cast<Eigen::Index>(r);
          dout.row(rr) = ec.gates[r] * dm.row(ec.rows[r]);
          dgate(ec.rows[r], e) = dm.row(ec.rows[r]).dot(ec.out.row(rr));
        }
        const std::string prefix = pname::expert(li, e, "");
        const Mat din = ffn_backward(dout, ec.ffn, ffn_weights(params, prefix), sink, prefix);
        for (std::size_t r = 0; r < ec.rows.size(); ++r) du.row(ec.rows[r]) += din.row(static_cast<Eigen::Index>(r));
      }
      // Renormalized top-k gates are a softmax over the selected logits; unselected logits get no gradient.
      Mat dr = Mat::Zero(T, static_cast<Eigen::Index>(cfg.moe_expert_count));
      for (Eigen::Index t = 0; t < T; ++t) {
        const GateVector& g = lc.gates[static_cast<std::size_t>(t)];
        double dot = 0.0;
        for (std::size_t e : g.selected) dot += g.values[e] * dgate(t, e);
        for (std::size_t e : g.selected) dr(t, e) = g.values[e] * (dgate(t, e) - dot);
      }
      const Tensor& router = params.at(pname::router(li));
      if (Tensor* g = sink(pname::router(li))) as_mat(*g).noalias() += lc.u.transpose() * dr;
      if (li == stop && !backbone_trainable) break;
      du.noalias() += dr * as_mat(router).transpose();
    } else {
      du = ffn_backward(dx, lc.ffn, dense, sink, ffn_prefix(li));
    }
    dx += ln_backward(du, lc.ln2, params.at(pname::layer(li, "ln2.gamma")), sink(pname::layer(li, "ln2.gamma")),
                      sink(pname::layer(li, "ln2.beta")));

    if (Tensor* g = sink(pname::layer(li, "attn.wo"))) as_mat(*g).noalias() += lc.ctx.transpose() * dx;
    if (Tensor* g = sink(pname::layer(li, "attn.bo"))) as_row(*g) += dx.colwise().sum();
    const Mat dctx = dx * as_mat(params.at(pname::layer(li, "attn.wo"))).transpose();
    Mat dqkv(T, 3 * H);
    for (std::size_t hh = 0; hh < cfg.heads; ++hh) {
      const auto off = static_cast<Eigen::Index>(hh) * d;
      const Mat& P = lc.probs[hh];
      const auto Q = lc.qkv.middleCols(off, d);
      const auto K = lc.qkv.middleCols(H + off, d);
      const auto V = lc.qkv.middleCols(2 * H + off, d);
      const auto dC = dctx.middleCols(off, d);
      const Mat dP = dC * V.transpose();
      dqkv.middleCols(2 * H + off, d).noalias() = P.transpose() * dC;
      const Eigen::VectorXd rowdot = (dP.array() * P.array()).rowwise().sum();
      const Mat dS = (P.array() * (dP.colwise() - rowdot).array()).matrix() * att_scale;
      dqkv.middleCols(off, d).noalias() = dS * K;
      dqkv.middleCols(H + off, d).noalias() = dS.transpose() * Q;
    }
    if (Tensor* g = sink(pname::layer(li, "attn.wqkv"))) as_mat(*g).noalias() += lc.a.transpose() * dqkv;
    if (Tensor* g = sink(pname::layer(li, "attn.bqkv"))) as_row(*g) += dqkv.colwise().sum();
    const Mat da = dqkv * as_mat(params.at(pname::layer(li, "attn.wqkv"))).transpose();
    dx += ln_backward(da, lc.ln1, params.at(pname::layer(li, "ln1.gamma")), sink(pname::layer(li, "ln1.gamma")),
                      sink(pname::layer(li, "ln1.beta")));
  }

  Tensor* gg = sink("embed_ln.gamma");
  Tensor* gb = sink("embed_ln.beta");
  Tensor* ge = sink("embed.weight");
  if (gg || gb || ge) {
    const Mat demb = ln_backward(dx, c.emb_ln, params.at("embed_ln.gamma"), gg, gb);
    if (ge)
      for (Eigen::Index t = 0; t < T; ++t) as_mat(*ge).row(c.ids[static_cast<std::size_t>(t)]) += demb.row(t);
  }
  check_finite(grads, "gradient");
}

TensorMap zero_grads(const ParameterSet& params) {
  TensorMap g;
  for (const auto& [name, t] : params.trainable) g[name] = Tensor(t.shape);
  return g;
}

void check_finite(const TensorMap& tensors, std::string_view what) {
  for (const auto& [name, t] : tensors)
    if (!t.all_finite()) throw NumericError("non-finite " + std::string(what) + " in tensor '" + name + "'");
}

std::vector<TokenId> generate(const std::vector<TokenId>& prefix, const ParameterSet& params, const ModelConfig& cfg,
                              const GenerateOptions& opt) {
  if (prefix.empty()) throw Error("generate needs a nonempty prefix");
  std::vector<TokenId> seq = prefix;
  Rng rng(opt.seed);
  for (std::size_t n = 0; n < opt.max_new && seq.size() < cfg.context; ++n) {
    const Mat logits = forward(seq, params, cfg);
    const Eigen::RowVectorXd last = logits.row(logits.rows() - 1);
    TokenId next = 0;
    if (opt.mode == DecodeMode::Greedy) {
      Eigen::Index best = 0;
      for (Eigen::Index i = 1; i < last.size(); ++i)
        if (last[i] > last[best]) best = i;
      next = static_cast<TokenId>(best);
    } else {
      const Eigen::RowVectorXd scaled = last / opt.temperature;
      const Eigen::RowVectorXd e = (scaled.array() - scaled.maxCoeff()).exp();
      double u = rng.uniform() * e.sum();
      Eigen::Index i = 0;
      for (; i + 1 < e.size(); ++i) {
        u -= e[i];
        if (u < 0.0) break;
      }
      next = static_cast<TokenId>(i);
    }
    seq.push_back(next);
    if (next == opt.eos) break;
  }
  return seq;
}

}  // namespace zhmt
