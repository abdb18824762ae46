#pragma once

#include <string>
#include <vector>

#include "ocdd/anchor.hpp"
#include "ocdd/ballworld.hpp"
#include "ocdd/tensor.hpp"

namespace ocdd::ballworld {

/// On-disk dataset: <dir>/meta.json plus <dir>/trajectories.bin (tensor
/// container, one named tensor per trajectory).
struct RecordMeta {
  std::string template_name;
  uint64_t seed = 0;
  double offset_x = 0.0;
  double offset_y = 0.0;
  std::vector<ObjectSpec> objects;
};

struct DatasetMeta {
  int layout_version = kLayoutVersion;
  std::vector<std::string> templates;
  int count = 0;
  int O = 0;  // -1 when records mix object counts
  int L = 0;
  int d = kFeatureDim;
  bool augmented = false;
  double offset_bound = 1.0;
  std::vector<RecordMeta> records;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<nd::Tensor> trajectories;
};

void write_dataset(const std::string& dir, const Dataset& ds);
Dataset read_dataset(const std::string& dir);

// ---- JSON interchange ----------------------------------------------------

/// Scene statics file: {"layout_version":1, "objects":[{...}]}.
std::vector<ObjectSpec> load_scene_statics(const std::string& path);
void save_scene_statics(const std::string& path, const std::vector<ObjectSpec>& objects);

}  // namespace ocdd::ballworld

namespace ocdd::anchor {

/// ConditionSet file: {"feature_layout":1,
///   "conditions":[{"o":int,"l":int,"values":[f32 x3]}]}.
ConditionSet load_conditions(const std::string& path);
void save_conditions(const std::string& path, const ConditionSet& cond);
ConditionSet conditions_from_json_text(const std::string& text);
std::string conditions_to_json_text(const ConditionSet& cond);

}  // namespace ocdd::anchor
