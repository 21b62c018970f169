// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "etc/relative_position.hpp"
#include "etc/weights.hpp"

namespace etc {

// Reserved token ids. Regular word pieces start at kFirstRegularId.
struct ReservedIds {
  std::int32_t pad = 0;
  std::int32_t unknown = 1;
  std::int32_t cls = 2;
  std::int32_t separator = 3;
  std::int32_t mask = 4;
  std::int32_t sentence_summary = 5;
  std::int32_t context_summary = 6;
  std::int32_t cls_global = 7;
  std::int32_t candidate = 8;
};
inline constexpr std::int32_t kFirstRegularId = 16;

namespace labels {
inline constexpr const char* kSegmentMember = "segment-member";
inline constexpr const char* kSegmentNonmember = "segment-nonmember";
inline constexpr const char* kContextMember = "context-member";
inline constexpr const char* kMentionLink = "mention-link";
inline constexpr const char* kUnordered = "unordered";
inline constexpr const char* kNeutral = "neutral";
}  // namespace labels

std::vector<std::string> default_structural_labels();

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t hidden = 32;
  std::size_t heads = 2;
  std::size_t intermediate = 0;  // 0 means 4 * hidden
  std::size_t local_radius = 2;
  std::size_t clip_distance = 4;
  std::size_t vocab_size = 512;
  std::size_t type_vocab_size = 2;
  std::size_t max_global = 32;
  std::size_t max_long = 128;
  Sharing sharing = Sharing::kSeparate;
  std::vector<std::string> structural_labels = default_structural_labels();
  double layer_norm_eps = 1e-12;
  double init_std = 0.02;
  ReservedIds reserved;

  std::size_t ffn_width() const { return intermediate ? intermediate : 4 * hidden; }
  std::size_t head_width() const { return hidden / heads; }
  RelativeVocab relative_vocab() const { return RelativeVocab{clip_distance, structural_labels}; }

  // Throws std::invalid_argument naming the offending field.
  void validate() const;

  static ModelConfig base();
  static ModelConfig large();
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-6;
  double mlm_weight = 0.8;
  double cpc_weight = 0.2;
  double mlm_rate = 0.15;
  double cpc_rate = 0.10;
  std::size_t docs_per_step = 4;
  std::size_t min_sentences = 7;
  bool cpc_stop_gradient = false;
};

Sharing parse_sharing(const std::string& name);
const char* to_string(Sharing s);

// JSON mirrors the struct field names; missing fields keep their defaults.
ModelConfig model_config_from_json(const std::string& text);
std::string model_config_to_json(const ModelConfig& config);
TrainConfig train_config_from_json(const std::string& text);
ModelConfig load_model_config(const std::string& path);
TrainConfig load_train_config(const std::string& path);
void save_model_config(const ModelConfig& config, const std::string& path);

}  // namespace etc
