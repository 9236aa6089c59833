#include "semfield/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "semfield/serialize.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace semfield {
namespace {

constexpr char kMagic[8] = {'S', 'E', 'M', 'F', '0', '0', '0', '1'};

struct TensorEntry {
  std::string name;
  const MatrixX<float>* mat = nullptr;
  const VectorX<float>* vec = nullptr;
  long rows() const { return mat ? mat->rows() : vec->rows(); }
  long cols() const { return mat ? mat->cols() : 1; }
  float coeff(long r, long c) const { return mat ? (*mat)(r, c) : (*vec)(r); }
};

void collect(const FieldParams<float>& p, const std::string& prefix,
             std::vector<TensorEntry>& out) {
  p.for_each_tensor([&](const std::string& name, const auto& t) {
    TensorEntry e;
    e.name = prefix + name;
    using T = std::decay_t<decltype(t)>;
    if constexpr (T::ColsAtCompileTime == 1) {
      e.vec = &t;
    } else {
      e.mat = &t;
    }
    out.push_back(std::move(e));
  });
}

std::vector<TensorEntry> tensor_table(const Checkpoint& ckpt) {
  std::vector<TensorEntry> table;
  collect(ckpt.coarse, "coarse.", table);
  collect(ckpt.fine, "fine.", table);
  collect(ckpt.adam_coarse.m, "adam.coarse.m.", table);
  collect(ckpt.adam_coarse.v, "adam.coarse.v.", table);
  collect(ckpt.adam_fine.m, "adam.fine.m.", table);
  collect(ckpt.adam_fine.v, "adam.fine.v.", table);
  return table;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto table = tensor_table(ckpt);

  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : table) {
    tensors.push_back({{"name", e.name},
                       {"shape", {e.rows(), e.cols()}},
                       {"offset", offset}});
    offset += static_cast<std::uint64_t>(e.rows()) * e.cols() * sizeof(float);
  }

  nlohmann::json header{{"version", 1},
                        {"iteration", ckpt.iteration},
                        {"field", ckpt.field},
                        {"train", ckpt.train},
                        {"adam",
                         {{"beta1", ckpt.adam_coarse.beta1},
                          {"beta2", ckpt.adam_coarse.beta2},
                          {"epsilon", ckpt.adam_coarse.epsilon},
                          {"step_coarse", ckpt.adam_coarse.step},
                          {"step_fine", ckpt.adam_fine.step}}},
                        {"meta", ckpt.meta},
                        {"tensors", tensors}};
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint32_t len = static_cast<std::uint32_t>(header_str.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));

  std::vector<float> row_major;
  for (const auto& e : table) {
    row_major.resize(static_cast<std::size_t>(e.rows()) * e.cols());
    std::size_t k = 0;
    for (long r = 0; r < e.rows(); ++r)
      for (long c = 0; c < e.cols(); ++c) row_major[k++] = e.coeff(r, c);
    out.write(reinterpret_cast<const char*>(row_major.data()),
              static_cast<std::streamsize>(row_major.size() * sizeof(float)));
  }
  if (!out) throw FormatError("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path.string());

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw FormatError("bad checkpoint magic in " + path.string());

  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len == 0 || len > (1u << 30))
    throw FormatError("bad checkpoint header length in " + path.string());
  std::string header_str(len, '\0');
  in.read(header_str.data(), len);
  if (!in) throw FormatError("truncated checkpoint header in " + path.string());

  nlohmann::json header = nlohmann::json::parse(header_str, nullptr, false);
  if (header.is_discarded())
    throw FormatError("unparseable checkpoint header in " + path.string());
  if (header.value("version", -1) != 1)
    throw FormatError("unsupported checkpoint version in " + path.string());

  Checkpoint ckpt;
  try {
    ckpt.field = header.at("field").get<FieldConfig>();
    ckpt.train = header.at("train").get<TrainConfig>();
    ckpt.iteration = header.at("iteration").get<long>();
    ckpt.meta = header.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid checkpoint header: ") + e.what());
  }
  ckpt.coarse = make_field_params<float>(ckpt.field);
  ckpt.fine = make_field_params<float>(ckpt.field);
  ckpt.adam_coarse = make_adam_state(ckpt.coarse);
  ckpt.adam_fine = make_adam_state(ckpt.fine);
  const auto& adam = header.at("adam");
  ckpt.adam_coarse.step = adam.value("step_coarse", 0L);
  ckpt.adam_fine.step = adam.value("step_fine", 0L);

  // Non-const view of the freshly allocated tensors, in the same table order.
  Checkpoint* self = &ckpt;
  std::vector<std::pair<std::string, std::pair<float*, std::pair<long, long>>>> dst;
  auto collect_mut = [&](FieldParams<float>& p, const std::string& prefix) {
    p.for_each_tensor([&](const std::string& name, auto& t) {
      dst.push_back({prefix + name, {t.data(), {t.rows(), t.cols()}}});
    });
  };
  collect_mut(self->coarse, "coarse.");
  collect_mut(self->fine, "fine.");
  collect_mut(self->adam_coarse.m, "adam.coarse.m.");
  collect_mut(self->adam_coarse.v, "adam.coarse.v.");
  collect_mut(self->adam_fine.m, "adam.fine.m.");
  collect_mut(self->adam_fine.v, "adam.fine.v.");

  const auto& tensors = header.at("tensors");
  if (!tensors.is_array() || tensors.size() != dst.size())
    throw FormatError("checkpoint tensor table does not match configuration");

  std::vector<float> row_major;
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const auto& entry = tensors[i];
    const std::string name = entry.at("name").get<std::string>();
    const long rows = entry.at("shape")[0].get<long>();
    const long cols = entry.at("shape")[1].get<long>();
    if (name != dst[i].first || rows != dst[i].second.second.first ||
        cols != dst[i].second.second.second)
      throw FormatError("checkpoint tensor mismatch at '" + name + "'");
    row_major.resize(static_cast<std::size_t>(rows) * cols);
    in.read(reinterpret_cast<char*>(row_major.data()),
            static_cast<std::streamsize>(row_major.size() * sizeof(float)));
    if (!in) throw FormatError("truncated checkpoint tensor data in " + path.string());
    float* data = dst[i].second.first;
    std::size_t k = 0;
    // stored row-major; Eigen tensors are column-major
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < cols; ++c) data[c * rows + r] = row_major[k++];
  }
  return ckpt;
}

}  // namespace semfield
