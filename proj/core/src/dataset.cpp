#include "ocdd/dataset.hpp"

#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "ocdd/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ocdd::ballworld {

namespace {

json object_to_json(const ObjectSpec& o) {
  return json{{"shape", o.shape == ObjShape::ball ? "ball" : "bar"},
              {"size", o.size},
              {"half_thickness", o.half_thickness},
              {"x", o.x},
              {"y", o.y},
              {"rot", o.rot},
              {"movable", o.movable},
              {"color", o.color}};
}

ObjectSpec object_from_json(const json& j) {
  ObjectSpec o;
  std::string shape = j.at("shape").get<std::string>();
  if (shape == "ball")
    o.shape = ObjShape::ball;
  else if (shape == "bar")
    o.shape = ObjShape::bar;
  else
    throw_format("object: unknown shape '" + shape + "'");
  o.size = j.at("size").get<double>();
  o.half_thickness = j.value("half_thickness", 0.0);
  o.x = j.at("x").get<double>();
  o.y = j.at("y").get<double>();
  o.rot = j.value("rot", 0.0);
  o.movable = j.at("movable").get<bool>();
  o.color = j.value("color", std::string(o.movable ? "gray" : "black"));
  if (o.size <= 0) throw_format("object: size must be positive");
  return o;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_io("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw_format("malformed JSON in " + path + ": " + e.what());
  }
  return j;
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw_io("cannot open for write: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw_io("write failed: " + path);
}

}  // namespace

void write_dataset(const std::string& dir, const Dataset& ds) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw_io("cannot create dataset directory " + dir + ": " + ec.message());

  json meta;
  meta["layout_version"] = ds.meta.layout_version;
  meta["templates"] = ds.meta.templates;
  meta["count"] = ds.meta.count;
  meta["O"] = ds.meta.O;
  meta["L"] = ds.meta.L;
  meta["d"] = ds.meta.d;
  meta["augmented"] = ds.meta.augmented;
  meta["offset_bound"] = ds.meta.offset_bound;
  json records = json::array();
  for (const auto& r : ds.meta.records) {
    json jr;
    jr["template"] = r.template_name;
    jr["seed"] = r.seed;
    jr["offset"] = {r.offset_x, r.offset_y};
    json objs = json::array();
    for (const auto& o : r.objects) objs.push_back(object_to_json(o));
    jr["objects"] = objs;
    records.push_back(std::move(jr));
  }
  meta["records"] = std::move(records);
  write_json_file((fs::path(dir) / "meta.json").string(), meta);

  nd::TensorFileWriter writer((fs::path(dir) / "trajectories.bin").string());
  char name[32];
  for (size_t i = 0; i < ds.trajectories.size(); ++i) {
    std::snprintf(name, sizeof(name), "traj_%06zu", i);
    writer.write(name, ds.trajectories[i]);
  }
  writer.close();
}

Dataset read_dataset(const std::string& dir) {
  json meta = read_json_file((fs::path(dir) / "meta.json").string());
  Dataset ds;
  try {
    ds.meta.layout_version = meta.at("layout_version").get<int>();
    if (ds.meta.layout_version != kLayoutVersion)
      throw_format("dataset " + dir + ": feature layout version " +
                   std::to_string(ds.meta.layout_version) + " unsupported (expected " +
                   std::to_string(kLayoutVersion) + ")");
    ds.meta.templates = meta.at("templates").get<std::vector<std::string>>();
    ds.meta.count = meta.at("count").get<int>();
    ds.meta.O = meta.at("O").get<int>();
    ds.meta.L = meta.at("L").get<int>();
    ds.meta.d = meta.at("d").get<int>();
    ds.meta.augmented = meta.value("augmented", false);
    ds.meta.offset_bound = meta.value("offset_bound", 1.0);
    for (const auto& jr : meta.at("records")) {
      RecordMeta r;
      r.template_name = jr.at("template").get<std::string>();
      r.seed = jr.at("seed").get<uint64_t>();
      r.offset_x = jr.at("offset")[0].get<double>();
      r.offset_y = jr.at("offset")[1].get<double>();
      for (const auto& jo : jr.at("objects")) r.objects.push_back(object_from_json(jo));
      ds.meta.records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw_format("dataset meta.json: " + std::string(e.what()));
  }

  auto tensors = nd::read_tensor_file((fs::path(dir) / "trajectories.bin").string());
  for (auto& nt : tensors) ds.trajectories.push_back(std::move(nt.tensor));
  if (static_cast<int>(ds.trajectories.size()) != ds.meta.count ||
      ds.trajectories.size() != ds.meta.records.size())
    throw_format("dataset " + dir + ": record count mismatch between meta.json and trajectories.bin");
  return ds;
}

std::vector<ObjectSpec> load_scene_statics(const std::string& path) {
  json j = read_json_file(path);
  std::vector<ObjectSpec> out;
  try {
    int version = j.value("layout_version", kLayoutVersion);
    if (version != kLayoutVersion)
      throw_format("scene " + path + ": unsupported layout version");
    for (const auto& jo : j.at("objects")) out.push_back(object_from_json(jo));
  } catch (const json::exception& e) {
    throw_format("scene statics: " + std::string(e.what()));
  }
  if (out.empty()) throw_format("scene statics: no objects");
  return out;
}

void save_scene_statics(const std::string& path, const std::vector<ObjectSpec>& objects) {
  json j;
  j["layout_version"] = kLayoutVersion;
  json objs = json::array();
  for (const auto& o : objects) objs.push_back(object_to_json(o));
  j["objects"] = std::move(objs);
  write_json_file(path, j);
}

}  // namespace ocdd::ballworld

namespace ocdd::anchor {

ConditionSet conditions_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw_format("malformed condition JSON: " + std::string(e.what()));
  }
  ConditionSet cond;
  try {
    int layout = j.value("feature_layout", ballworld::kLayoutVersion);
    if (layout != ballworld::kLayoutVersion)
      throw_format("conditions: unsupported feature_layout " + std::to_string(layout));
    for (const auto& jc : j.at("conditions")) {
      Condition c;
      c.object = jc.at("o").get<int>();
      c.step = jc.at("l").get<int>();
      c.values = jc.at("values").get<std::vector<float>>();
      cond.entries.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw_format("conditions: " + std::string(e.what()));
  }
  return cond;
}

std::string conditions_to_json_text(const ConditionSet& cond) {
  json j;
  j["feature_layout"] = ballworld::kLayoutVersion;
  json arr = json::array();
  for (const auto& c : cond.entries)
    arr.push_back(json{{"o", c.object}, {"l", c.step}, {"values", c.values}});
  j["conditions"] = std::move(arr);
  return j.dump(2);
}

ConditionSet load_conditions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_io("cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return conditions_from_json_text(text);
}

void save_conditions(const std::string& path, const ConditionSet& cond) {
  std::ofstream out(path);
  if (!out) throw_io("cannot open for write: " + path);
  out << conditions_to_json_text(cond) << "\n";
}

}  // namespace ocdd::anchor
