#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "zhmt/augment.hpp"
#include "zhmt/checkpoint.hpp"
#include "zhmt/curriculum.hpp"
#include "zhmt/model.hpp"
#include "zhmt/run_config.hpp"
#include "zhmt/templates.hpp"

namespace zhmt {

struct TrainLogRow {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::string active_pairs;  // comma-separated, "zh" in stage 1
  std::size_t tokens = 0;    // cumulative loss-bearing tokens
  std::uint64_t frozen_checksum = 0;

  bool operator==(const TrainLogRow&) const = default;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;

  std::string to_tsv() const;
  static TrainLog parse(std::string_view tsv);
  bool operator==(const TrainLog&) const = default;
};

// One training example: token ids plus next-token targets (-1 where no loss applies).
struct TrainSequence {
  std::vector<TokenId> ids;
  std::vector<TokenId> targets;
  std::string pair;
  double weight = 1.0;  // relative weight inside its pair
};

// [bos] bytes [eos], every next token a target, truncated to `context`.
TrainSequence make_mono_sequence(std::string_view text, std::size_t context);
// [bos] prompt '\n' target [eos]. Only target bytes and eos are targets unless include_prompt.
TrainSequence make_instruction_sequence(const InstructionExample& ex, std::size_t context, bool include_prompt);
std::vector<TokenId> prompt_ids(std::string_view prompt);
// Bytes between the prompt and eos of a generated sequence.
std::string decode_bytes(const std::vector<TokenId>& ids, std::size_t from);

struct TrainOptions {
  std::filesystem::path out_dir;                 // empty: write nothing
  std::optional<std::filesystem::path> resume;   // checkpoint to continue from
  std::size_t stop_after = 0;                    // stop early after this step (0: run to total_steps)
  std::ostream* progress = nullptr;
  const Translator* translator = nullptr;        // stage 2 back-translation
};

struct TrainState {
  RunConfig config;  // effective config
  ParameterSet params;
  AdamState adam;
  std::size_t step = 0;
  TrainLog log;
};

TrainState init_state(const RunConfig& cfg);
Checkpoint to_checkpoint(const TrainState& s);
// Rebuilds training state, rejecting checkpoints that do not match `cfg` (CheckpointError).
TrainState resume_state(const Checkpoint& ckpt, const RunConfig& cfg);

// Runs the batch through forward/backward, accumulating gradients of
// sum_i coeff[i] * loss_i. Returns per-sequence mean losses.
std::vector<double> batch_gradients(const std::vector<TrainSequence>& batch, const std::vector<double>& coeff,
                                    const ParameterSet& params, const ModelConfig& cfg, std::size_t workers,
                                    TensorMap& grads);

TrainState train_stage1(const std::vector<std::string>& corpus, const RunConfig& cfg, const TrainOptions& opt = {});

TrainState train_stage2(const std::vector<ParallelRecord>& records, const RunConfig& cfg,
                        const std::vector<InstructionTemplate>& templates, const TrainOptions& opt = {});

// Builds the stage-2 dataset: back-translation on configured tiers, grouped by pair.
PairDatasets prepare_stage2_data(const std::vector<ParallelRecord>& records, const RunConfig& cfg,
                                 const Translator* translator, std::size_t* synthetic_added = nullptr);

// Greedy translation of `record.src_text` with template `tpl`.
std::string translate(const ParallelRecord& record, const InstructionTemplate& tpl, const ParameterSet& params,
                      const ModelConfig& cfg, std::size_t max_new);

std::vector<std::string> load_lines(const std::filesystem::path& path);

}  // namespace zhmt
