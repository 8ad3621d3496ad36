#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "dce/datagen.hpp"
#include "dce/model.hpp"
#include "dce/trainer.hpp"

namespace dce {

struct SeedConfig {
  uint64_t model = 0;
  uint64_t data = 0;
};

// Every configurable of a run. JSON sections: "model", "transforms",
// "train", "seeds"; omitted keys keep the values of `base`, unknown keys are
// rejected.
struct RunConfig {
  ModelConfig model;
  TransformConfig transforms;
  TrainConfig train;
  SeedConfig seeds;
};

RunConfig parse_run_config(const std::string& json_text, const RunConfig& base = {});
RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base = {});
std::string run_config_to_json(const RunConfig& config);

// The small setup used for desk-scale training runs: toy backbone, H_L = 64,
// local radius 2 and narrow decoders.
RunConfig toy_run_config();

}  // namespace dce
