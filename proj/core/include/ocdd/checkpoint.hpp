#pragma once

#include <string>

#include "ocdd/acnet.hpp"
#include "ocdd/ballworld.hpp"

namespace ocdd::pipeline {

/// Trained model bundle: tensor container at `path`, JSON sidecar header at
/// `path + ".json"` (model config, schedule parameters, feature layout
/// version, arch variant, training seed).
struct Checkpoint {
  acnet::ModelConfig model;
  int schedule_T = 256;
  double schedule_s = 0.008;
  int layout_version = ballworld::kLayoutVersion;
  uint64_t seed = 0;
  int64_t trained_steps = 0;
  acnet::UNetParams params;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ocdd::pipeline
