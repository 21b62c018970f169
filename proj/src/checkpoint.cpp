// SPDX-License-Identifier: Apache-2.0
#include "etc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace etc {
namespace {

using nlohmann::json;
using Kind = CheckpointError::Kind;

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? ", " : "") + std::to_string(shape[i]);
  return s + "]";
}

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

std::string strip_prefix(std::string name) {
  for (const char* prefix : {"bert/", "encoder/"})
    if (name.rfind(prefix, 0) == 0) name = name.substr(std::strlen(prefix));
  return name;
}

std::string source_name_for(const std::string& target) {
  for (const char* prefix : {"global/", "long/"})
    if (target.rfind(prefix, 0) == 0) return target.substr(std::strlen(prefix));
  return target;
}

bool randomly_initialized(const std::string& target) {
  return target.find("relative_keys") != std::string::npos || target == "cls/cpc/projection";
}

bool optional_in_source(const std::string& target) { return target.rfind("cls/predictions/", 0) == 0; }

ModelConfig with_sharing(ModelConfig config, Sharing sharing) {
  config.sharing = sharing;
  return config;
}

}  // namespace

void Checkpoint::add(const std::string& name, Matrix<float> value, bool keep_rank) {
  if (contains(name)) throw CheckpointError(Kind::kManifest, "duplicate tensor " + name);
  ManifestEntry e;
  e.name = name;
  e.shape = (value.rows() == 1 && !keep_rank) ? std::vector<std::size_t>{value.cols()}
                                              : std::vector<std::size_t>{value.rows(), value.cols()};
  e.offset = total_bytes();
  index_[name] = manifest_.size();
  manifest_.push_back(std::move(e));
  values_.push_back(std::move(value));
}

const Matrix<float>& Checkpoint::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw CheckpointError(Kind::kMissingTensor, "missing tensor " + name);
  return values_[it->second];
}

std::size_t Checkpoint::total_bytes() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size() * sizeof(float);
  return n;
}

std::string manifest_path(const std::string& name) { return name + ".manifest.json"; }
std::string blob_path(const std::string& name) { return name + ".blob"; }
std::string config_path(const std::string& name) { return name + ".config.json"; }

void save_checkpoint(const Checkpoint& checkpoint, const std::string& name) {
  if (checkpoint.empty()) throw CheckpointError(Kind::kNoTensors, "no tensors");
  json manifest = json::array();
  std::string blob;
  blob.reserve(checkpoint.total_bytes());
  for (const auto& e : checkpoint.manifest()) {
    manifest.push_back({{"name", e.name}, {"dtype", e.dtype}, {"shape", e.shape}, {"offset", e.offset}});
    for (float f : checkpoint.at(e.name).values()) {
      const std::uint32_t bits = to_little_endian(std::bit_cast<std::uint32_t>(f));
      char bytes[4];
      std::memcpy(bytes, &bits, 4);
      blob.append(bytes, 4);
    }
  }
  std::ofstream m(manifest_path(name), std::ios::binary | std::ios::trunc);
  std::ofstream b(blob_path(name), std::ios::binary | std::ios::trunc);
  if (!m || !b) throw CheckpointError(Kind::kIo, "cannot write checkpoint " + name);
  m << manifest.dump(1) << '\n';
  b.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!m || !b) throw CheckpointError(Kind::kIo, "write failed for checkpoint " + name);
  if (checkpoint.config_json) {
    std::ofstream c(config_path(name), std::ios::binary | std::ios::trunc);
    c << *checkpoint.config_json;
    if (!c) throw CheckpointError(Kind::kIo, "write failed for " + config_path(name));
  }
}

Checkpoint load_checkpoint(const std::string& name) {
  const std::string manifest_text = read_all(manifest_path(name));
  const std::string blob = read_all(blob_path(name));
  json manifest;
  try {
    manifest = json::parse(manifest_text);
  } catch (const json::parse_error& e) {
    throw CheckpointError(Kind::kManifest, "malformed manifest " + manifest_path(name) + ": " + e.what());
  }
  if (!manifest.is_array()) throw CheckpointError(Kind::kManifest, "manifest must be a JSON array");
  if (manifest.empty()) throw CheckpointError(Kind::kNoTensors, "no tensors");

  Checkpoint out;
  std::size_t expected_offset = 0;
  for (const auto& j : manifest) {
    ManifestEntry e;
    try {
      e.name = j.at("name").get<std::string>();
      e.dtype = j.at("dtype").get<std::string>();
      e.shape = j.at("shape").get<std::vector<std::size_t>>();
      e.offset = j.at("offset").get<std::size_t>();
    } catch (const json::exception& ex) {
      throw CheckpointError(Kind::kManifest, std::string("malformed manifest entry: ") + ex.what());
    }
    if (e.dtype != "f32") throw CheckpointError(Kind::kUnsupportedDtype, "unsupported dtype '" + e.dtype + "' for " + e.name);
    if (e.shape.empty() || e.shape.size() > 2)
      throw CheckpointError(Kind::kShapeMismatch, "tensor " + e.name + " has unsupported shape " + shape_string(e.shape));
    const std::size_t rows = e.shape.size() == 2 ? e.shape[0] : 1;
    const std::size_t cols = e.shape.back();
    const std::size_t bytes = rows * cols * sizeof(float);
    if (e.offset != expected_offset)
      throw CheckpointError(Kind::kManifest, "tensor " + e.name + " starts at byte " + std::to_string(e.offset) +
                                                 ", expected " + std::to_string(expected_offset));
    if (e.offset + bytes > blob.size())
      throw CheckpointError(Kind::kTruncatedBlob, "truncated blob: tensor " + e.name + " needs bytes [" +
                                                      std::to_string(e.offset) + ", " + std::to_string(e.offset + bytes) +
                                                      ") of " + std::to_string(blob.size()));
    Matrix<float> value(rows, cols);
    for (std::size_t i = 0; i < value.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, blob.data() + e.offset + i * 4, 4);
      value.data()[i] = std::bit_cast<float>(to_little_endian(bits));
    }
    out.add(e.name, std::move(value), e.shape.size() == 2);
    expected_offset += bytes;
  }
  if (expected_offset != blob.size())
    throw CheckpointError(Kind::kManifest, "blob holds " + std::to_string(blob.size()) + " bytes, manifest describes " +
                                               std::to_string(expected_offset));
  std::ifstream config(config_path(name), std::ios::binary);
  if (config) {
    std::ostringstream ss;
    ss << config.rdbuf();
    out.config_json = ss.str();
  }
  return out;
}

template <class T>
Checkpoint to_checkpoint(const ParameterSet<T>& params) {
  Checkpoint out;
  for_each_parameter(params, [&out](const std::string& name, const Matrix<T>& m) {
    out.add(name, cast<float>(m), name.find("LayerNorm") == std::string::npos && name.find("bias") == std::string::npos);
  });
  return out;
}

template <class T>
ParameterSet<T> to_parameters(const Checkpoint& checkpoint, const ModelConfig& config) {
  ParameterSet<T> params = init_parameters<T>(config, 0);
  for_each_parameter(params, [&](const std::string& name, Matrix<T>& m) {
    const Matrix<float>& src = checkpoint.at(name);
    if (src.rows() != m.rows() || src.cols() != m.cols())
      throw CheckpointError(Kind::kShapeMismatch, "tensor " + name + " has shape " +
                                                      shape_string({src.rows(), src.cols()}) + ", expected " +
                                                      shape_string({m.rows(), m.cols()}));
    m = cast<T>(src);
  });
  return params;
}

template <class T>
void save_parameters(const ParameterSet<T>& params, const ModelConfig& config, const std::string& name) {
  Checkpoint c = to_checkpoint(params);
  c.config_json = model_config_to_json(config);
  save_checkpoint(c, name);
}

std::vector<std::pair<std::string, std::string>> lift_copy_plan(const ModelConfig& config, Sharing sharing) {
  std::vector<std::pair<std::string, std::string>> plan;
  const ModelConfig target = with_sharing(config, sharing);
  ParameterSet<float> skeleton;
  skeleton.layers.resize(target.layers);
  if (sharing == Sharing::kSeparate)
    for (auto& l : skeleton.layers) l.attention.long_side.emplace();
  for_each_parameter(skeleton, [&](const std::string& name, const Matrix<float>&) {
    if (!randomly_initialized(name)) plan.emplace_back(name, source_name_for(name));
  });
  return plan;
}

ParameterSet<float> lift_bert(const Checkpoint& source, ModelConfig config, Sharing sharing, std::uint64_t seed) {
  config.sharing = sharing;
  config.validate();
  // Normalized source names; ETC checkpoints may also be lifted (global/ copy wins).
  std::map<std::string, const Matrix<float>*> src;
  for (const auto& e : source.manifest()) {
    const std::string n = strip_prefix(e.name);
    if (n.rfind("long/", 0) == 0) continue;
    src.emplace(source_name_for(n), &source.at(e.name));
  }
  auto find = [&](const std::string& name) -> const Matrix<float>* {
    auto it = src.find(name);
    return it == src.end() ? nullptr : it->second;
  };

  const Matrix<float>* words = find("embeddings/word_embeddings");
  if (!words) throw CheckpointError(Kind::kMissingTensor, "missing tensor embeddings/word_embeddings");
  if (words->cols() != config.hidden)
    throw CheckpointError(Kind::kShapeMismatch, "tensor embeddings/word_embeddings has hidden size " +
                                                    std::to_string(words->cols()) + ", config expects " +
                                                    std::to_string(config.hidden));
  std::set<std::size_t> layer_ids;
  for (const auto& [name, _] : src)
    if (name.rfind("layer_", 0) == 0) layer_ids.insert(std::stoul(name.substr(6, name.find('/') - 6)));
  if (layer_ids.size() != config.layers)
    throw CheckpointError(Kind::kShapeMismatch, "source has " + std::to_string(layer_ids.size()) +
                                                    " layers, config expects " + std::to_string(config.layers));
  if (source.config_json) {
    const json j = json::parse(*source.config_json, nullptr, false);
    if (j.is_object()) {
      const json& m = j.contains("model") ? j.at("model") : j;
      for (const char* key : {"heads", "num_attention_heads"})
        if (m.contains(key) && m.at(key).get<std::size_t>() != config.heads)
          throw CheckpointError(Kind::kShapeMismatch, "source has " + std::to_string(m.at(key).get<std::size_t>()) +
                                                          " attention heads, config expects " +
                                                          std::to_string(config.heads));
    }
  }

  ParameterSet<float> out = init_parameters<float>(config, seed);
  std::map<std::string, Matrix<float>*> target;
  for_each_parameter(out, [&](const std::string& name, Matrix<float>& m) { target[name] = &m; });
  for (const auto& [to, from] : lift_copy_plan(config, sharing)) {
    const Matrix<float>* s = find(from);
    if (!s) {
      if (optional_in_source(to)) continue;
      throw CheckpointError(Kind::kMissingTensor, "missing tensor " + from);
    }
    Matrix<float>& d = *target.at(to);
    if (s->size() != d.size() || (s->rows() != d.rows() && s->rows() != 1))
      throw CheckpointError(Kind::kShapeMismatch, "tensor " + from + " has shape " +
                                                      shape_string({s->rows(), s->cols()}) + ", expected " +
                                                      shape_string({d.rows(), d.cols()}));
    d = Matrix<float>(d.rows(), d.cols(), s->values());
  }
  return out;
}

template Checkpoint to_checkpoint<float>(const ParameterSet<float>&);
template Checkpoint to_checkpoint<double>(const ParameterSet<double>&);
template ParameterSet<float> to_parameters<float>(const Checkpoint&, const ModelConfig&);
template ParameterSet<double> to_parameters<double>(const Checkpoint&, const ModelConfig&);
template void save_parameters<float>(const ParameterSet<float>&, const ModelConfig&, const std::string&);
template void save_parameters<double>(const ParameterSet<double>&, const ModelConfig&, const std::string&);

}  // namespace etc
