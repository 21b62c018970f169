// SPDX-License-Identifier: Apache-2.0
#include "etc/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace etc {
namespace {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <class V>
void take(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace

std::vector<std::string> default_structural_labels() {
  return {labels::kSegmentMember, labels::kSegmentNonmember, labels::kContextMember,
          labels::kMentionLink,   labels::kUnordered,        labels::kNeutral};
}

Sharing parse_sharing(const std::string& name) {
  if (name == "shared") return Sharing::kShared;
  if (name == "separate") return Sharing::kSeparate;
  throw std::invalid_argument("unknown sharing mode '" + name + "' (expected shared or separate)");
}

const char* to_string(Sharing s) { return s == Sharing::kShared ? "shared" : "separate"; }

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (layers == 0) fail("layers must be >= 1");
  if (hidden == 0 || heads == 0) fail("hidden and heads must be >= 1");
  if (hidden % heads != 0) fail("hidden (" + std::to_string(hidden) + ") not divisible by heads (" + std::to_string(heads) + ")");
  if (vocab_size <= static_cast<std::size_t>(kFirstRegularId)) fail("vocab_size must exceed the reserved id range");
  if (type_vocab_size == 0) fail("type_vocab_size must be >= 1");
  if (max_global == 0 || max_long == 0) fail("max_global and max_long must be >= 1");
  for (const char* required : {labels::kSegmentMember, labels::kSegmentNonmember, labels::kNeutral})
    if (std::find(structural_labels.begin(), structural_labels.end(), required) == structural_labels.end())
      fail(std::string("structural_labels must include '") + required + "'");
}

ModelConfig ModelConfig::base() {
  ModelConfig c;
  c.layers = 12;
  c.hidden = 768;
  c.heads = 12;
  c.local_radius = 84;
  c.clip_distance = 12;
  c.vocab_size = 30522;
  c.max_global = 256;
  c.max_long = 4096;
  return c;
}

ModelConfig ModelConfig::large() {
  ModelConfig c = base();
  c.layers = 24;
  c.hidden = 1024;
  c.heads = 16;
  c.local_radius = 169;
  c.clip_distance = 24;
  return c;
}

ModelConfig model_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  const json& m = j.contains("model") ? j.at("model") : j;
  ModelConfig c;
  take(m, "layers", c.layers);
  take(m, "hidden", c.hidden);
  take(m, "heads", c.heads);
  take(m, "intermediate", c.intermediate);
  take(m, "local_radius", c.local_radius);
  take(m, "clip_distance", c.clip_distance);
  take(m, "vocab_size", c.vocab_size);
  take(m, "type_vocab_size", c.type_vocab_size);
  take(m, "max_global", c.max_global);
  take(m, "max_long", c.max_long);
  take(m, "structural_labels", c.structural_labels);
  take(m, "layer_norm_eps", c.layer_norm_eps);
  take(m, "init_std", c.init_std);
  if (m.contains("sharing")) c.sharing = parse_sharing(m.at("sharing").get<std::string>());
  c.validate();
  return c;
}

std::string model_config_to_json(const ModelConfig& c) {
  json m = {{"layers", c.layers},
            {"hidden", c.hidden},
            {"heads", c.heads},
            {"intermediate", c.ffn_width()},
            {"local_radius", c.local_radius},
            {"clip_distance", c.clip_distance},
            {"vocab_size", c.vocab_size},
            {"type_vocab_size", c.type_vocab_size},
            {"max_global", c.max_global},
            {"max_long", c.max_long},
            {"sharing", to_string(c.sharing)},
            {"structural_labels", c.structural_labels},
            {"layer_norm_eps", c.layer_norm_eps},
            {"init_std", c.init_std}};
  return m.dump(2) + "\n";
}

TrainConfig train_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  TrainConfig t;
  if (!j.contains("training")) return t;
  const json& m = j.at("training");
  take(m, "learning_rate", t.learning_rate);
  take(m, "beta1", t.beta1);
  take(m, "beta2", t.beta2);
  take(m, "adam_eps", t.adam_eps);
  take(m, "mlm_weight", t.mlm_weight);
  take(m, "cpc_weight", t.cpc_weight);
  take(m, "mlm_rate", t.mlm_rate);
  take(m, "cpc_rate", t.cpc_rate);
  take(m, "docs_per_step", t.docs_per_step);
  take(m, "min_sentences", t.min_sentences);
  take(m, "cpc_stop_gradient", t.cpc_stop_gradient);
  return t;
}

ModelConfig load_model_config(const std::string& path) { return model_config_from_json(read_file(path)); }
TrainConfig load_train_config(const std::string& path) { return train_config_from_json(read_file(path)); }

void save_model_config(const ModelConfig& config, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << model_config_to_json(config);
}

}  // namespace etc
