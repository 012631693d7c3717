#include "zhmt/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "zhmt/errors.hpp"

namespace zhmt {

std::string_view to_string(CurriculumMode m) {
  switch (m) {
    case CurriculumMode::Weighted: return "weighted";
    case CurriculumMode::Uniform: return "uniform";
    case CurriculumMode::Ordered: return "ordered";
  }
  return "?";
}

CurriculumMode parse_curriculum_mode(std::string_view s) {
  if (s == "weighted") return CurriculumMode::Weighted;
  if (s == "uniform") return CurriculumMode::Uniform;
  if (s == "ordered") return CurriculumMode::Ordered;
  throw ConfigError("unknown curriculum mode '" + std::string(s) + "'");
}

void CurriculumSchedule::validate() const {
  if (total_steps == 0) throw ConfigError("curriculum total_steps must be positive");
  if (phase_starts[0] != 0.0) throw ConfigError("the High tier must start at step fraction 0");
  for (std::size_t i = 0; i < 4; ++i) {
    if (!(phase_starts[i] >= 0.0 && phase_starts[i] <= 1.0)) throw ConfigError("phase starts must lie in [0,1]");
    if (i > 0 && phase_starts[i] < phase_starts[i - 1])
      throw ConfigError("phase starts must be nondecreasing in tier order");
    if (!(final_weights[i] > 0.0)) throw ConfigError("final tier weights must be positive");
  }
  if (!(ramp_fraction >= 0.0 && ramp_fraction <= 1.0)) throw ConfigError("ramp_fraction must lie in [0,1]");
  if (!(zh_target_min_fraction >= 0.0 && zh_target_min_fraction <= 1.0))
    throw ConfigError("zh_target_min_fraction must lie in [0,1]");
}

double weight_at(std::size_t step, const LanguagePair& pair, const CurriculumSchedule& schedule,
                 const LanguageRegistry& reg) {
  const ResourceTier tier = reg.pair_tier(pair.src, pair.tgt);
  if (schedule.mode == CurriculumMode::Uniform) return 1.0;
  const double start = schedule.phase_start_step(tier);
  const double s = static_cast<double>(step);
  if (schedule.mode == CurriculumMode::Ordered) return s >= start ? 1.0 : 0.0;
  const double final_w = schedule.final_weights[static_cast<std::size_t>(tier)];
  if (start <= 0.0) return final_w;
  if (s < start) return 0.0;
  const double ramp = schedule.ramp_fraction * static_cast<double>(schedule.total_steps);
  if (ramp <= 0.0) return final_w;
  return final_w * std::min(1.0, (s - start) / ramp);
}

std::string MixtureSnapshot::to_tsv() const {
  std::string out;
  char buf[64];
  for (const auto& [pair, p] : probabilities) {
    std::snprintf(buf, sizeof buf, "%.17g", p);
    out += std::to_string(step) + "\t" + pair.str() + "\t" + buf + "\n";
  }
  return out;
}

MixtureSnapshot mixture_at(std::size_t step, const std::vector<LanguagePair>& pairs,
                           const CurriculumSchedule& schedule, const LanguageRegistry& reg) {
  MixtureSnapshot snap;
  snap.step = step;
  double total = 0.0;
  for (const auto& p : pairs) {
    const double w = weight_at(step, p, schedule, reg);
    snap.probabilities[p] = w;
    total += w;
  }
  if (!(total > 0.0)) throw Error("no language pair is active at step " + std::to_string(step));
  double zh_mass = 0.0;
  bool zh_active = false;
  for (auto& [p, w] : snap.probabilities) {
    w /= total;
    if (p.tgt == "zh" && w > 0.0) {
      zh_active = true;
      zh_mass += w;
    }
  }
  const double target = schedule.zh_target_min_fraction;
  if (zh_active && zh_mass < target) {
    // Shrink non-zh-target mass just enough to reach the floor; zh-target pairs share the gain
    // in proportion to their weights.
    const double zh_scale = target / zh_mass;
    const double other_scale = (1.0 - target) / (1.0 - zh_mass);
    for (auto& [p, w] : snap.probabilities) w *= p.tgt == "zh" ? zh_scale : other_scale;
  }
  return snap;
}

double weighted_loss(const std::vector<std::pair<double, double>>& loss_weight, bool normalize) {
  double num = 0.0, den = 0.0;
  for (const auto& [loss, w] : loss_weight) {
    if (!std::isfinite(loss)) throw NumericError("non-finite loss in weighted aggregate");
    num += w * loss;
    den += w;
  }
  if (!normalize) return num;
  if (!(den > 0.0)) throw Error("weighted loss with zero total weight");
  return num / den;
}

double total_loss(const std::map<LanguagePair, double>& per_pair_losses, std::size_t step,
                  const CurriculumSchedule& schedule, const LanguageRegistry& reg) {
  std::vector<std::pair<double, double>> lw;
  lw.reserve(per_pair_losses.size());
  for (const auto& [pair, loss] : per_pair_losses) lw.emplace_back(loss, weight_at(step, pair, schedule, reg));
  double den = 0.0;
  for (const auto& [_, w] : lw) den += w;
  if (!(den > 0.0)) throw Error("weighted loss with zero total weight");
  return weighted_loss(lw, schedule.normalize_loss);
}

std::vector<ParallelRecord> sample_batch(std::size_t step, Rng& rng, const PairDatasets& datasets,
                                         const CurriculumSchedule& schedule, std::size_t batch_size,
                                         const LanguageRegistry& reg) {
  std::vector<ParallelRecord> batch;
  if (batch_size == 0) return batch;
  std::vector<LanguagePair> pairs;
  for (const auto& [p, _] : datasets) pairs.push_back(p);
  const MixtureSnapshot mix = mixture_at(step, pairs, schedule, reg);
  std::vector<std::pair<const LanguagePair*, double>> cumulative;
  double acc = 0.0;
  for (const auto& [p, prob] : mix.probabilities) {
    if (prob <= 0.0) continue;
    if (datasets.at(p).empty()) throw Error("active language pair " + p.str() + " has an empty dataset");
    acc += prob;
    cumulative.emplace_back(&p, acc);
  }
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const double u = rng.uniform() * acc;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u,
                               [](double v, const auto& c) { return v < c.second; });
    if (it == cumulative.end()) --it;
    const auto& data = datasets.at(*it->first);
    batch.push_back(data[rng.uniform_index(data.size())]);
  }
  return batch;
}

}  // namespace zhmt
