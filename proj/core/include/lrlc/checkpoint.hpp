#pragma once

#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "lrlc/model.hpp"
#include "lrlc/serialize.hpp"

namespace lrlc {

using json = nlohmann::ordered_json;

inline json dynamic_net_shape_to_json(const DynamicNetShape& g) {
  json branches = json::array();
  for (const auto& [pool, dilation] : g.branches) branches.push_back({pool, dilation});
  return json{{"projection", g.projection},
              {"bottleneck", g.bottleneck},
              {"expansion", g.expansion},
              {"branches", branches}};
}

inline DynamicNetShape dynamic_net_shape_from_json(const json& j) {
  DynamicNetShape g;
  g.projection = j.value("projection", g.projection);
  g.bottleneck = j.value("bottleneck", g.bottleneck);
  g.expansion = j.value("expansion", g.expansion);
  if (j.contains("branches")) {
    g.branches.clear();
    for (const auto& b : j["branches"])
      g.branches.emplace_back(b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>());
  }
  return g;
}

inline json model_config_to_json(const ModelConfig& cfg) {
  json kinds = json::array();
  for (LayerKind k : cfg.kinds) kinds.push_back(layer_kind_name(k));
  return json{{"input_h", cfg.input_h},   {"input_w", cfg.input_w},
              {"input_c", cfg.input_c},   {"classes", cfg.classes},
              {"channels", cfg.channels}, {"filter", cfg.filter},
              {"kinds", kinds},           {"rank", cfg.rank},
              {"full_weights", cfg.full_weights},
              {"gnet", dynamic_net_shape_to_json(cfg.gnet)}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.input_h = j.at("input_h").get<std::size_t>();
  cfg.input_w = j.at("input_w").get<std::size_t>();
  cfg.input_c = j.at("input_c").get<std::size_t>();
  cfg.classes = j.at("classes").get<std::size_t>();
  cfg.channels = j.at("channels").get<std::size_t>();
  cfg.filter = j.at("filter").get<std::size_t>();
  cfg.kinds.clear();
  for (const auto& k : j.at("kinds")) cfg.kinds.push_back(layer_kind_from_name(k.get<std::string>()));
  cfg.rank = j.at("rank").get<std::size_t>();
  cfg.full_weights = j.value("full_weights", false);
  if (j.contains("gnet")) cfg.gnet = dynamic_net_shape_from_json(j["gnet"]);
  return cfg;
}

namespace detail {

template <typename T>
void save_tensor_atomic(const std::string& path, const Tensor<T>& t) {
  const std::string tmp = path + ".tmp";
  save_tensor(tmp, t);
  std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    require<FormatError>(static_cast<bool>(out), "cannot open ", tmp, " for writing");
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

/// Checkpoint layout: <dir>/manifest.json plus one tensor container per named
/// parameter/buffer under <dir>/tensors/.
template <typename T>
void save_model(Model<T>& model, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "tensors");

  json manifest;
  manifest["format"] = "lrlc-checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = std::is_same_v<T, double> ? "f64" : "f32";
  manifest["model"] = model_config_to_json(model.config());
  json blocks = json::array();
  for (std::size_t i = 0; i < model.depth(); ++i) blocks.push_back(model.block(i).kind_name());
  manifest["blocks"] = blocks;

  json tensors = json::array();
  auto dump = [&](const std::vector<ParamRef<T>>& refs) {
    for (const auto& ref : refs) {
      const std::string file = ref.name + ".t";
      detail::save_tensor_atomic((fs::path(dir) / "tensors" / file).string(), *ref.value);
      tensors.push_back(ref.name);
    }
  };
  dump(model.parameters());
  dump(model.buffers());
  manifest["tensors"] = tensors;
  detail::write_text_atomic((fs::path(dir) / "manifest.json").string(), manifest.dump(2));
}

inline json load_manifest(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string path = (fs::path(dir) / "manifest.json").string();
  std::ifstream in(path);
  require<FormatError>(static_cast<bool>(in), "cannot open checkpoint manifest ", path);
  json manifest = json::parse(in, nullptr, /*allow_exceptions=*/false);
  require<FormatError>(!manifest.is_discarded(), path, ": invalid JSON");
  require<FormatError>(manifest.value("format", "") == "lrlc-checkpoint", path,
                       ": not an lrlc checkpoint");
  return manifest;
}

template <typename T>
Model<T> load_model(const std::string& dir) {
  namespace fs = std::filesystem;
  const json manifest = load_manifest(dir);
  ModelConfig cfg = model_config_from_json(manifest.at("model"));
  std::vector<std::string> blocks;
  for (const auto& b : manifest.at("blocks")) blocks.push_back(b.get<std::string>());
  Model<T> model = Model<T>::from_kind_names(cfg, blocks);

  auto restore = [&](const std::vector<ParamRef<T>>& refs) {
    for (const auto& ref : refs) {
      const std::string path = (fs::path(dir) / "tensors" / (ref.name + ".t")).string();
      Tensor<T> loaded = load_tensor_as<T>(path);
      require<FormatError>(loaded.shape() == ref.value->shape(), path, ": shape ",
                           shape_str(loaded.shape()), " does not match model parameter ",
                           ref.name, " ", shape_str(ref.value->shape()));
      *ref.value = std::move(loaded);
    }
  };
  restore(model.parameters());
  restore(model.buffers());
  return model;
}

}  // namespace lrlc
