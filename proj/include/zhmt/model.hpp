#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "zhmt/rng.hpp"
#include "zhmt/tensor.hpp"
#include "zhmt/tokenizer.hpp"

namespace zhmt {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class MoePlacement { ReplaceFfn, BeforeFfn };
enum class InitMode { Random, Reuse, Mixed };

std::string_view to_string(MoePlacement p);
MoePlacement parse_moe_placement(std::string_view s);
std::string_view to_string(InitMode m);
InitMode parse_init_mode(std::string_view s);

struct ModelConfig {
  std::size_t vocab_size = 260;
  std::size_t hidden = 64;
  std::size_t ffn_inner = 256;
  std::size_t heads = 4;
  std::size_t layers = 8;
  std::size_t context = 128;
  std::size_t sparse_step = 4;
  std::size_t moe_expert_count = 8;
  std::size_t top_k = 1;
  MoePlacement moe_placement = MoePlacement::BeforeFfn;
  InitMode init_mode = InitMode::Mixed;
  std::size_t reuse_count = 4;
  std::uint64_t seed = 0;
  double init_std = 0.02;
  // Output head std. A frozen head at init_std caps logit magnitudes too low to fit anything.
  double head_init_std = 0.125;
  double layer_norm_eps = 1e-5;
  // Moves the backbone into the trainable set.
  bool train_backbone = false;
  // Load-balancing auxiliary loss coefficient. Only 0 is supported.
  double load_balance_coef = 0.0;

  void validate() const;
  bool is_moe_layer(std::size_t layer) const { return (layer + 1) % sparse_step == 0; }
  std::vector<std::size_t> moe_layers() const;
  std::size_t head_dim() const { return hidden / heads; }

  static ModelConfig desk();
  // hidden 8, 2 layers, vocab 11: used for finite-difference checks.
  static ModelConfig tiny();
  // Full-size hyperparameters. Constructible; far too large to initialize here.
  static ModelConfig full();
  static ModelConfig preset(std::string_view name);

  bool operator==(const ModelConfig&) const = default;
};

std::size_t parameter_count(const ModelConfig& cfg);

struct ParameterSet {
  TensorMap frozen;
  TensorMap trainable;

  const Tensor& at(const std::string& name) const;
  Tensor* find_mut(const std::string& name);
  bool is_trainable(const std::string& name) const { return trainable.count(name) > 0; }
  std::uint64_t frozen_checksum() const { return checksum(frozen); }
  std::uint64_t trainable_checksum() const { return checksum(trainable); }
};

namespace pname {
std::string layer(std::size_t l, std::string_view rest);
std::string expert(std::size_t l, std::size_t e, std::string_view rest);
std::string router(std::size_t l);
}  // namespace pname

ParameterSet init_model(const ModelConfig& cfg);

struct GateVector {
  std::vector<double> values;         // one per expert, zero outside the selection
  std::vector<std::size_t> selected;  // top_k indices, best first
};

GateVector gate(const Eigen::Ref<const Eigen::RowVectorXd>& x, const Tensor& router, const ModelConfig& cfg);

struct ForwardStats {
  // Token rows run through each expert, indexed [moe layer ordinal][expert].
  std::vector<std::vector<std::size_t>> expert_tokens;
  std::size_t expert_evaluations = 0;

  void reset(const ModelConfig& cfg);
};

struct LnCache {
  Mat xhat;
  Eigen::VectorXd rstd;
};

struct FfnCache {
  Mat in;
  Mat z;
  Mat act;
};

struct ExpertCache {
  std::vector<std::size_t> rows;
  std::vector<double> gates;
  FfnCache ffn;
  Mat out;
};

struct LayerCache {
  LnCache ln1, ln2;
  Mat a;
  Mat qkv;
  std::vector<Mat> probs;
  Mat ctx;
  Mat u;
  bool moe = false;
  std::vector<GateVector> gates;
  std::vector<ExpertCache> experts;
  Mat m;
  FfnCache ffn;  // dense FFN, or the frozen FFN applied after the expert mixture
};

struct ForwardCache {
  std::vector<TokenId> ids;
  LnCache emb_ln;
  std::vector<LayerCache> layers;
  LnCache final_ln;
  Mat final_h;
};

// Logits (sequence length x vocab). `cache` receives what backward() needs.
Mat forward(const std::vector<TokenId>& ids, const ParameterSet& params, const ModelConfig& cfg,
            ForwardCache* cache = nullptr, ForwardStats* stats = nullptr);

struct LossResult {
  double loss = 0.0;
  std::size_t count = 0;
  Mat dlogits;  // gradient of `loss`
};

// Cross-entropy averaged over positions with targets[t] >= 0; negative targets are ignored.
LossResult cross_entropy(const Mat& logits, const std::vector<TokenId>& targets);
// Next-token targets: position t predicts ids[t+1]; the last position has no target.
std::vector<TokenId> shifted_targets(const std::vector<TokenId>& ids);
double clm_loss(const Mat& logits, const std::vector<TokenId>& ids);

// Accumulates `scale` times the gradient of the loss with dlogits into grads. Only names present
// in params.trainable are touched; missing grad entries are created.
void backward(const ForwardCache& cache, const Mat& dlogits, const ParameterSet& params, const ModelConfig& cfg,
              TensorMap& grads, double scale = 1.0);

TensorMap zero_grads(const ParameterSet& params);
void check_finite(const TensorMap& tensors, std::string_view what);

enum class DecodeMode { Greedy, Sample };

struct GenerateOptions {
  std::size_t max_new = 64;
  DecodeMode mode = DecodeMode::Greedy;
  TokenId eos = ReservedIds{}.eos;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

// Appends up to max_new tokens, stopping after eos or at the context limit.
std::vector<TokenId> generate(const std::vector<TokenId>& prefix, const ParameterSet& params, const ModelConfig& cfg,
                              const GenerateOptions& opt = {});

}  // namespace zhmt
