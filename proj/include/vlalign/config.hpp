#pragma once

#include <string>

#include <json.hpp>

#include "vlalign/common.hpp"

namespace vlalign {

// Encoder hyperparameters. The toy preset is the default working scale; the
// paper_shape preset is kept for shape checks only.
struct ModelConfig {
  int d = 32;       // embedding width
  int heads = 4;    // attention heads; d % heads == 0
  int n_lang_layers = 2;   // intra-modality layers, language
  int n_vis_layers = 2;    // intra-modality layers, vision
  int n_inter_layers = 2;  // inter-modality layers
  int max_tokens = 12;     // N_s
  int n_objects = 6;       // N_o detection slots
  int vocab_size = 64;
  int class_count = 8;
  int attribute_count = 8;
  int answer_count = 20;
  int feature_dim = 32;
  double dropout = 0.0;  // knob only; never enabled by default

  static ModelConfig toy() { return ModelConfig{}; }

  static ModelConfig paper_shape() {
    ModelConfig c;
    c.d = 768;
    c.heads = 12;
    c.n_lang_layers = 9;
    c.n_vis_layers = 5;
    c.n_inter_layers = 5;
    c.max_tokens = 20;
    c.n_objects = 36;
    c.vocab_size = 64;
    c.class_count = 8;
    c.attribute_count = 8;
    c.answer_count = 20;
    c.feature_dim = 64;
    return c;
  }

  void validate() const {
    check(d >= 2, "ModelConfig: d must be at least 2");
    check(heads >= 1 && d % heads == 0, "ModelConfig: d must be divisible by heads");
    check(n_lang_layers >= 1 && n_vis_layers >= 1 && n_inter_layers >= 1,
          "ModelConfig: layer counts must be >= 1");
    check(max_tokens >= 2, "ModelConfig: max_tokens must be >= 2");
    check(n_objects >= 1, "ModelConfig: n_objects must be >= 1");
    check(vocab_size >= 4, "ModelConfig: vocab_size must cover the reserved ids");
    check(class_count >= 1 && attribute_count >= 1 && answer_count >= 1,
          "ModelConfig: label space sizes must be >= 1");
    check(feature_dim >= 1, "ModelConfig: feature_dim must be >= 1");
    check(dropout >= 0.0 && dropout < 1.0, "ModelConfig: dropout must be in [0, 1)");
  }

  int head_dim() const { return d / heads; }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d", c.d},
                     {"heads", c.heads},
                     {"n_lang_layers", c.n_lang_layers},
                     {"n_vis_layers", c.n_vis_layers},
                     {"n_inter_layers", c.n_inter_layers},
                     {"max_tokens", c.max_tokens},
                     {"n_objects", c.n_objects},
                     {"vocab_size", c.vocab_size},
                     {"class_count", c.class_count},
                     {"attribute_count", c.attribute_count},
                     {"answer_count", c.answer_count},
                     {"feature_dim", c.feature_dim},
                     {"dropout", c.dropout}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("d").get_to(c.d);
  j.at("heads").get_to(c.heads);
  j.at("n_lang_layers").get_to(c.n_lang_layers);
  j.at("n_vis_layers").get_to(c.n_vis_layers);
  j.at("n_inter_layers").get_to(c.n_inter_layers);
  j.at("max_tokens").get_to(c.max_tokens);
  j.at("n_objects").get_to(c.n_objects);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("class_count").get_to(c.class_count);
  j.at("attribute_count").get_to(c.attribute_count);
  j.at("answer_count").get_to(c.answer_count);
  j.at("feature_dim").get_to(c.feature_dim);
  if (j.contains("dropout")) j.at("dropout").get_to(c.dropout);
}

// reserved token ids
constexpr int kClsId = 0;
constexpr int kMaskId = 1;
constexpr int kPadId = 2;
constexpr int kFirstWordId = 3;

}  // namespace vlalign
