#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "zhmt/curriculum.hpp"
#include "zhmt/model.hpp"
#include "zhmt/mono_pipeline.hpp"
#include "zhmt/optimizer.hpp"
#include "zhmt/para_pipeline.hpp"

namespace zhmt {

enum class Stage { Pretrain, Finetune };
enum class Ablation { Full, RandomInit, ReuseInit, RandomTrain, OrderTrain };

std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);
std::string_view to_string(Ablation a);
Ablation parse_ablation(std::string_view s);
inline constexpr Ablation kAllAblations[] = {Ablation::Full, Ablation::RandomInit, Ablation::ReuseInit,
                                             Ablation::RandomTrain, Ablation::OrderTrain};

struct DataConfig {
  std::string mono;             // stage 1: one sentence per line
  std::string para;             // stage 2: record TSV
  std::string templates;        // empty: shipped templates
  std::string init_checkpoint;  // stage 2: start from these tensors instead of a fresh init
  std::string sensitive_words;  // lexicon file for the parallel pipeline
  std::string tokenizer;        // tokenizer spec for the parallel pipeline; empty: default modes

  bool operator==(const DataConfig&) const = default;
};

struct AugmentConfig {
  std::string translator = "none";
  std::vector<ResourceTier> tiers = {ResourceTier::Low, ResourceTier::VeryLow};
  // (from, to) -> dictionary file
  std::map<std::pair<std::string, std::string>, std::string> dictionaries;
  // Loss weight of synthetic records relative to originals within a pair.
  double synthetic_weight = 1.0;

  bool operator==(const AugmentConfig&) const = default;
};

struct RunConfig {
  Stage stage = Stage::Pretrain;
  Ablation ablation = Ablation::Full;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  bool include_prompt_loss = false;
  std::size_t eval_template = 3;     // index into the template list used for decoding
  std::size_t eval_max_new = 96;
  MonoPipelineConfig mono;
  ParaPipelineConfig para;  // the lexicon comes from data.sensitive_words, not from the file
  ModelConfig model;
  OptimizerConfig optimizer;
  CurriculumSchedule schedule;
  DataConfig data;
  AugmentConfig augment;

  void validate() const;
  // Applies the ablation and copies seed/total_steps into the model and schedule.
  RunConfig effective() const;

  std::string serialize() const;
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  bool operator==(const RunConfig&) const = default;
};

// The [model] section alone, as stored in checkpoint headers.
std::string serialize_model_config(const ModelConfig& cfg);
ModelConfig parse_model_config(std::string_view text);

std::string format_double(double v);

}  // namespace zhmt
