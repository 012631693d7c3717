#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "zhmt/records.hpp"
#include "zhmt/registry.hpp"
#include "zhmt/rng.hpp"

namespace zhmt {

enum class CurriculumMode {
  Weighted,  // staged tier introduction with linear ramps
  Uniform,   // every pair weight 1 from step 0 (random_train ablation)
  Ordered,   // tiers switch on in order with 0/1 weights, no ramp (order_train ablation)
};

std::string_view to_string(CurriculumMode m);
CurriculumMode parse_curriculum_mode(std::string_view s);

struct CurriculumSchedule {
  std::size_t total_steps = 1000;
  // Fraction of total_steps at which each tier (High, Medium, Low, VeryLow) switches on.
  std::array<double, 4> phase_starts = {0.0, 0.25, 0.5, 0.75};
  double ramp_fraction = 0.1;
  std::array<double, 4> final_weights = {1.0, 1.0, 1.0, 1.0};
  double zh_target_min_fraction = 0.5;
  CurriculumMode mode = CurriculumMode::Weighted;
  // Divide the weighted loss sum by the weight sum.
  bool normalize_loss = true;

  void validate() const;
  bool operator==(const CurriculumSchedule&) const = default;
  double phase_start_step(ResourceTier t) const {
    return phase_starts[static_cast<std::size_t>(t)] * static_cast<double>(total_steps);
  }
};

double weight_at(std::size_t step, const LanguagePair& pair, const CurriculumSchedule& schedule,
                 const LanguageRegistry& reg = LanguageRegistry::shipped());

struct MixtureSnapshot {
  std::size_t step = 0;
  std::map<LanguagePair, double> probabilities;

  // `step<TAB>pair<TAB>probability` rows.
  std::string to_tsv() const;
};

MixtureSnapshot mixture_at(std::size_t step, const std::vector<LanguagePair>& pairs,
                           const CurriculumSchedule& schedule,
                           const LanguageRegistry& reg = LanguageRegistry::shipped());

// Weighted aggregate of per-pair losses with explicit weights.
double weighted_loss(const std::vector<std::pair<double, double>>& loss_weight, bool normalize);

double total_loss(const std::map<LanguagePair, double>& per_pair_losses, std::size_t step,
                  const CurriculumSchedule& schedule, const LanguageRegistry& reg = LanguageRegistry::shipped());

using PairDatasets = std::map<LanguagePair, std::vector<ParallelRecord>>;

std::vector<ParallelRecord> sample_batch(std::size_t step, Rng& rng, const PairDatasets& datasets,
                                         const CurriculumSchedule& schedule, std::size_t batch_size,
                                         const LanguageRegistry& reg = LanguageRegistry::shipped());

}  // namespace zhmt
