#pragma once

#include <json.hpp>

#include "semfield/field.hpp"
#include "semfield/train.hpp"

namespace semfield {

inline void to_json(nlohmann::json& j, const FieldConfig& c) {
  j = nlohmann::json{{"trunk_depth", c.trunk_depth},
                     {"trunk_width", c.trunk_width},
                     {"skip_layer", c.skip_layer},
                     {"semantic_hidden_width", c.semantic_hidden_width},
                     {"num_classes", c.num_classes},
                     {"encoding_levels", c.encoding_levels},
                     {"include_raw_input", c.include_raw_input}};
}

inline void from_json(const nlohmann::json& j, FieldConfig& c) {
  j.at("trunk_depth").get_to(c.trunk_depth);
  j.at("trunk_width").get_to(c.trunk_width);
  j.at("skip_layer").get_to(c.skip_layer);
  j.at("semantic_hidden_width").get_to(c.semantic_hidden_width);
  j.at("num_classes").get_to(c.num_classes);
  j.at("encoding_levels").get_to(c.encoding_levels);
  j.at("include_raw_input").get_to(c.include_raw_input);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"ray_batch", c.ray_batch},
                     {"iterations", c.iterations},
                     {"n_coarse", c.n_coarse},
                     {"n_fine", c.n_fine},
                     {"seed", c.seed},
                     {"eval_every", c.eval_every},
                     {"checkpoint_every", c.checkpoint_every},
                     {"perturb", c.perturb},
                     {"density_noise_std", c.density_noise_std},
                     {"threads", c.threads}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("ray_batch").get_to(c.ray_batch);
  j.at("iterations").get_to(c.iterations);
  j.at("n_coarse").get_to(c.n_coarse);
  j.at("n_fine").get_to(c.n_fine);
  j.at("seed").get_to(c.seed);
  j.at("eval_every").get_to(c.eval_every);
  j.at("checkpoint_every").get_to(c.checkpoint_every);
  if (j.contains("perturb")) j.at("perturb").get_to(c.perturb);
  if (j.contains("density_noise_std")) j.at("density_noise_std").get_to(c.density_noise_std);
  if (j.contains("threads")) j.at("threads").get_to(c.threads);
}

}  // namespace semfield
