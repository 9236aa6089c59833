#pragma once

#include <filesystem>
#include <json.hpp>

#include "semfield/train.hpp"

namespace semfield {

// On-disk layout: 8-byte magic "SEMF0001", a little-endian u32 byte length,
// a UTF-8 JSON header (version, iteration, configs, Adam scalars, tensor
// table of name/shape/offset), then raw little-endian f32 tensor data in
// table order: coarse network, fine network, then Adam first and second
// moments per network in the same tensor order. Tensors are row-major
// (out x in); trunk layers come in depth order with weight before bias,
// followed by the density head, semantic hidden layer, and semantic head.

struct Checkpoint {
  FieldConfig field;
  TrainConfig train;
  long iteration = 0;
  FieldParams<float> coarse, fine;
  AdamState<float> adam_coarse, adam_fine;
  nlohmann::json meta;  // provenance (preset, profile, dataset path, ...)
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace semfield
