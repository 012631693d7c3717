#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>

#include "zhmt/model.hpp"
#include "zhmt/optimizer.hpp"

namespace zhmt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  std::size_t step = 0;
  ParameterSet params;
  AdamState adam;
  // Free-form key/value metadata: seed, stage, ablation, init_mode, ...
  std::map<std::string, std::string> meta;
  // TrainLog rows up to `step`, so resumed runs keep a complete log.
  std::string log_tsv;

  bool operator==(const Checkpoint& o) const {
    return model == o.model && step == o.step && params.frozen == o.params.frozen &&
           params.trainable == o.params.trainable && adam == o.adam && meta == o.meta && log_tsv == o.log_tsv;
  }
};

std::string encode_checkpoint(const Checkpoint& ckpt);
// Verifies magic, version and the trailing checksum before decoding anything.
Checkpoint decode_checkpoint(std::string_view bytes);

// Writes `path` atomically plus a text manifest at manifest_path(path).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::filesystem::path manifest_path(const std::filesystem::path& checkpoint);
std::string manifest_text(const Checkpoint& ckpt);

}  // namespace zhmt
