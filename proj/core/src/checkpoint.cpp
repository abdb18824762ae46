#include "ocdd/checkpoint.hpp"

#include <fstream>
#include <unordered_map>

#include "json.hpp"
#include "ocdd/serialize.hpp"

using nlohmann::json;

namespace ocdd::pipeline {

namespace {

json config_to_json(const acnet::ModelConfig& cfg) {
  return json{{"d_in", cfg.d_in},
              {"channels", cfg.channels},
              {"heads", cfg.heads},
              {"kernel_half_width", cfg.kernel_half_width},
              {"res_blocks_per_level", cfg.res_blocks_per_level},
              {"cond_levels", cfg.cond_levels},
              {"temb_dim", cfg.temb_dim},
              {"groups", cfg.groups},
              {"arch", acnet::to_string(cfg.variant)},
              {"cond_in_dim", cfg.cond_in_dim},
              {"fixed_objects", cfg.fixed_objects}};
}

acnet::ModelConfig config_from_json(const json& j) {
  acnet::ModelConfig cfg;
  cfg.d_in = j.at("d_in").get<int>();
  cfg.channels = j.at("channels").get<std::vector<int>>();
  cfg.heads = j.at("heads").get<int>();
  cfg.kernel_half_width = j.at("kernel_half_width").get<int>();
  cfg.res_blocks_per_level = j.at("res_blocks_per_level").get<int>();
  cfg.cond_levels = j.at("cond_levels").get<int>();
  cfg.temb_dim = j.at("temb_dim").get<int>();
  cfg.groups = j.at("groups").get<int>();
  cfg.variant = acnet::variant_from_string(j.at("arch").get<std::string>());
  cfg.cond_in_dim = j.at("cond_in_dim").get<int>();
  cfg.fixed_objects = j.at("fixed_objects").get<int>();
  return cfg;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::vector<nd::NamedTensor> tensors;
  ckpt.params.visit([&](const std::string& name, const nd::Tensor& t) {
    tensors.push_back({name, t});
  });
  nd::write_tensor_file(path, tensors);

  json j;
  j["format_version"] = 1;
  j["layout_version"] = ckpt.layout_version;
  j["arch"] = acnet::to_string(ckpt.model.variant);
  j["seed"] = ckpt.seed;
  j["trained_steps"] = ckpt.trained_steps;
  j["schedule"] = json{{"T", ckpt.schedule_T}, {"s", ckpt.schedule_s}};
  j["model"] = config_to_json(ckpt.model);
  std::ofstream out(path + ".json");
  if (!out) throw_io("cannot open for write: " + path + ".json");
  out << j.dump(2) << "\n";
  if (!out) throw_io("write failed: " + path + ".json");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path + ".json");
  if (!in) throw_io("cannot open checkpoint header " + path + ".json");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw_format("checkpoint header: " + std::string(e.what()));
  }

  Checkpoint ckpt;
  try {
    if (j.at("format_version").get<int>() != 1)
      throw_format("checkpoint: unsupported format version");
    ckpt.layout_version = j.at("layout_version").get<int>();
    if (ckpt.layout_version != ballworld::kLayoutVersion)
      throw_format("checkpoint: feature layout version mismatch");
    ckpt.seed = j.at("seed").get<uint64_t>();
    ckpt.trained_steps = j.at("trained_steps").get<int64_t>();
    ckpt.schedule_T = j.at("schedule").at("T").get<int>();
    ckpt.schedule_s = j.at("schedule").at("s").get<double>();
    ckpt.model = config_from_json(j.at("model"));
  } catch (const json::exception& e) {
    throw_format("checkpoint header: " + std::string(e.what()));
  }
  ckpt.model.validate();

  // Structure from config, weights by name.
  ckpt.params = acnet::init_params<float>(ckpt.model, 0);
  auto tensors = nd::read_tensor_file(path);
  std::unordered_map<std::string, nd::Tensor*> by_name;
  for (auto& nt : tensors) by_name[nt.name] = &nt.tensor;
  size_t used = 0;
  ckpt.params.visit([&](const std::string& name, nd::Tensor& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw_format("checkpoint: missing tensor " + name);
    if (it->second->dims != t.dims)
      throw_format("checkpoint: dims mismatch for " + name + ": file has " +
                   nd::dims_str(it->second->dims) + ", config implies " + nd::dims_str(t.dims));
    t = std::move(*it->second);
    ++used;
  });
  if (used != tensors.size())
    throw_format("checkpoint: file contains " + std::to_string(tensors.size()) +
                 " tensors, model uses " + std::to_string(used));
  return ckpt;
}

}  // namespace ocdd::pipeline
