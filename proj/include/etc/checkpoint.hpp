// SPDX-License-Identifier: Apache-2.0
#pragma once

// Named-tensor persistence and BERT weight lifting.
//
// On disk a checkpoint `<name>` is two files:
//   <name>.manifest.json  JSON array of {"name", "dtype": "f32", "shape", "offset"}
//   <name>.blob           little-endian float32 values, row-major, in manifest order
// An optional <name>.config.json holds the model configuration.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "etc/config.hpp"
#include "etc/encoder.hpp"
#include "etc/tensor.hpp"

namespace etc {

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { kIo, kManifest, kNoTensors, kMissingTensor, kShapeMismatch, kTruncatedBlob, kUnsupportedDtype };

  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct ManifestEntry {
  std::string name;
  std::string dtype = "f32";
  std::vector<std::size_t> shape;
  std::size_t offset = 0;  // bytes into the blob
};

class Checkpoint {
 public:
  // Appends a tensor; 1 x n tensors are recorded with shape [n] unless
  // `keep_rank` is set.
  void add(const std::string& name, Matrix<float> value, bool keep_rank = false);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  // Throws CheckpointError(kMissingTensor).
  const Matrix<float>& at(const std::string& name) const;
  const std::vector<ManifestEntry>& manifest() const { return manifest_; }
  std::size_t size() const { return manifest_.size(); }
  bool empty() const { return manifest_.empty(); }
  std::size_t total_bytes() const;

  std::optional<std::string> config_json;

 private:
  std::vector<ManifestEntry> manifest_;
  std::vector<Matrix<float>> values_;
  std::map<std::string, std::size_t> index_;
};

std::string manifest_path(const std::string& name);
std::string blob_path(const std::string& name);
std::string config_path(const std::string& name);

void save_checkpoint(const Checkpoint& checkpoint, const std::string& name);
Checkpoint load_checkpoint(const std::string& name);

template <class T>
Checkpoint to_checkpoint(const ParameterSet<T>& params);

// Every tensor the config requires, with shapes checked by name.
template <class T>
ParameterSet<T> to_parameters(const Checkpoint& checkpoint, const ModelConfig& config);

template <class T>
void save_parameters(const ParameterSet<T>& params, const ModelConfig& config, const std::string& name);

// Initializes ETC parameters from a BERT-layout checkpoint. Embeddings,
// attention projections, output projections, feed-forward and layer-norm
// tensors are copied (into both the global and the long set when
// `sharing` is separate). Absolute position, pooler and next-sentence
// tensors are ignored. Relative-label vectors and the CPC projection are
// freshly initialized from `seed`; the MLM head is copied when present.
// Source names may carry a "bert/" or "bert/encoder/" prefix.
ParameterSet<float> lift_bert(const Checkpoint& source, ModelConfig config, Sharing sharing, std::uint64_t seed);

// Names lift_bert copies from the source for a given target layout, as
// (target name, source name) pairs.
std::vector<std::pair<std::string, std::string>> lift_copy_plan(const ModelConfig& config, Sharing sharing);

}  // namespace etc
