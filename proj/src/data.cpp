#include "semfield/data.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <json.hpp>
#include <set>

#include "semfield/png_io.hpp"

namespace semfield {

namespace {

constexpr const char* kPoseConvention = "x-right y-down z-forward";

Pose pose_from_c2w_flat(const std::vector<double>& v) {
  if (v.size() != 16) throw DataError("frame c2w must hold 16 numbers (row-major 4x4)");
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = v[static_cast<std::size_t>(r) * 4 + c];
  const Eigen::RowVector4d bottom = m.row(3);
  if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-6)
    throw DataError("frame c2w bottom row must be (0, 0, 0, 1)");
  Pose p = Pose::from_c2w(m);
  try {
    p.validate();
  } catch (const InvalidInput& e) {
    throw DataError(std::string("frame pose invalid: ") + e.what());
  }
  return p;
}

std::vector<double> c2w_to_flat(const Pose& p) {
  const Eigen::Matrix4d m = p.to_c2w();
  std::vector<double> v(16);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) v[static_cast<std::size_t>(r) * 4 + c] = m(r, c);
  return v;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& manifest_path, const LoadOptions& opts) {
  if (opts.downsample < 1) throw InvalidInput("downsample factor must be >= 1");
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest: " + manifest_path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError("manifest is not valid JSON: " + manifest_path.string());

  Dataset ds;
  ds.root = manifest_path.parent_path();
  DatasetManifest& m = ds.manifest;
  try {
    m.version = j.value("version", 1);
    m.width = j.at("width").get<int>();
    m.height = j.at("height").get<int>();
    m.fx = j.at("fx").get<double>();
    m.fy = j.at("fy").get<double>();
    m.cx = j.at("cx").get<double>();
    m.cy = j.at("cy").get<double>();
    m.near = j.at("near").get<double>();
    m.far = j.at("far").get<double>();
    m.num_classes = j.at("num_classes").get<int>();
    if (j.contains("palette")) {
      for (const auto& entry : j.at("palette")) {
        if (!entry.is_array() || entry.size() != 3)
          throw DataError("palette entries must be [r, g, b]");
        m.palette.push_back({entry[0].get<std::uint8_t>(), entry[1].get<std::uint8_t>(),
                             entry[2].get<std::uint8_t>()});
      }
    }
    for (const auto& f : j.at("frames")) {
      FrameInfo fi;
      fi.file = f.at("file").get<std::string>();
      fi.pose = pose_from_c2w_flat(f.at("c2w").get<std::vector<double>>());
      if (f.contains("convention") && f.at("convention").get<std::string>() != kPoseConvention)
        throw DataError("frame '" + fi.file + "' declares unsupported pose convention '" +
                        f.at("convention").get<std::string>() + "' (expected '" +
                        kPoseConvention + "'); convert poses before ingestion");
      m.frames.push_back(std::move(fi));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }

  if (m.num_classes < 2 || m.num_classes > 255)
    throw DataError("num_classes must be in [2, 255] (255 is the void code)");
  if (m.frames.empty()) throw DataError("manifest contains no frames");
  if (!(m.near > 0) || !(m.far > m.near)) throw DataError("require 0 < near < far");
  m.intrinsics().validate();

  const int f = opts.downsample;
  const int out_w = m.width / f, out_h = m.height / f;
  if (out_w < 1 || out_h < 1) throw InvalidInput("downsample factor exceeds image size");

  for (const auto& fi : m.frames) {
    GrayImage png = read_gray8_png(ds.root / fi.file);
    if (png.width != m.width || png.height != m.height)
      throw DataError("frame '" + fi.file + "' is " + std::to_string(png.width) + "x" +
                      std::to_string(png.height) + ", manifest says " +
                      std::to_string(m.width) + "x" + std::to_string(m.height));
    SemanticImage img(out_w, out_h);
    for (int y = 0; y < out_h; ++y) {
      for (int x = 0; x < out_w; ++x) {
        // label maps are never interpolated; resize picks the grid sample
        int v = png.pixels[static_cast<std::size_t>(y) * f * m.width + x * f];
        if (auto it = opts.remap.find(v); it != opts.remap.end()) v = it->second;
        if (v != SemanticImage::kVoid && v >= m.num_classes)
          throw DataError("frame '" + fi.file + "' has label " + std::to_string(v) +
                          " >= num_classes " + std::to_string(m.num_classes));
        img.at(x, y) = static_cast<std::uint8_t>(v);
      }
    }
    ds.images.push_back(std::move(img));
  }

  if (f > 1) {
    m.width = out_w;
    m.height = out_h;
    m.fx /= f;
    m.fy /= f;
    // keeps the subsampled grid's pixel centers on their source rays
    m.cx = (m.cx - 0.5) / f + 0.5;
    m.cy = (m.cy - 0.5) / f + 0.5;
  }
  return ds;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : m.frames) {
    frames.push_back({{"file", f.file},
                      {"c2w", c2w_to_flat(f.pose)},
                      {"convention", kPoseConvention}});
  }
  nlohmann::json j{{"version", m.version}, {"width", m.width},   {"height", m.height},
                   {"fx", m.fx},           {"fy", m.fy},         {"cx", m.cx},
                   {"cy", m.cy},           {"near", m.near},     {"far", m.far},
                   {"num_classes", m.num_classes},               {"frames", frames}};
  if (!m.palette.empty()) {
    nlohmann::json pal = nlohmann::json::array();
    for (const auto& c : m.palette) pal.push_back({c[0], c[1], c[2]});
    j["palette"] = pal;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest: " + path.string());
  out << j.dump(2) << "\n";
}

std::pair<std::vector<int>, std::vector<int>> split_train_test(int n_frames) {
  if (n_frames < 2) throw InvalidInput("split needs at least 2 frames");
  std::vector<int> train, test;
  for (int i = 0; i < n_frames; i += 5) train.push_back(i);
  for (int i = 1; i < n_frames; i += 5) test.push_back(i);
  return {train, test};
}

std::vector<int> select_keyframes(const std::vector<int>& train_indices, double fraction,
                                  std::uint64_t /*seed*/) {
  if (!(fraction > 0) || fraction > 1)
    throw InvalidInput("keyframe fraction must be in (0, 1]");
  const std::size_t n = train_indices.size();
  if (n == 0) throw InvalidInput("keyframe selection needs a non-empty frame list");
  const std::size_t k =
      static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
  std::vector<int> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i)
    out.push_back(train_indices[i * n / k]);
  return out;
}

SemanticImage corrupt_pixel_noise(const SemanticImage& img, double ratio, int num_classes,
                                  std::uint64_t seed) {
  if (ratio < 0 || ratio > 1) throw InvalidInput("noise ratio must be in [0, 1]");
  if (num_classes < 2) throw InvalidInput("noise needs num_classes >= 2");
  SemanticImage out = img;
  std::vector<std::size_t> candidates;
  candidates.reserve(img.pixel_count());
  for (std::size_t i = 0; i < img.labels.size(); ++i)
    if (img.labels[i] != SemanticImage::kVoid) candidates.push_back(i);
  const std::size_t k =
      static_cast<std::size_t>(std::llround(ratio * static_cast<double>(candidates.size())));
  TinyRng rng(hash_u64(seed, 0x6e6f6973));  // stream tag: noise
  // partial Fisher-Yates picks k distinct pixels
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.below(candidates.size() - i);
    std::swap(candidates[i], candidates[j]);
    const std::uint8_t truth = img.labels[candidates[i]];
    std::uint8_t r = static_cast<std::uint8_t>(rng.below(num_classes - 1));
    if (r >= truth) ++r;  // uniform over the wrong classes
    out.labels[candidates[i]] = r;
  }
  return out;
}

namespace {
void check_downscale_factor(const SemanticImage& img, int factor) {
  if (factor < 2) throw InvalidInput("downscale factor must be >= 2");
  if (factor > std::min(img.width, img.height))
    throw InvalidInput("downscale factor " + std::to_string(factor) +
                       " exceeds image size " + std::to_string(img.width) + "x" +
                       std::to_string(img.height));
}
}  // namespace

SemanticImage downscale_dense(const SemanticImage& img, int factor) {
  check_downscale_factor(img, factor);
  SemanticImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out.at(x, y) = img.at((x / factor) * factor, (y / factor) * factor);
  return out;
}

SemanticImage downscale_sparse(const SemanticImage& img, int factor) {
  check_downscale_factor(img, factor);
  SemanticImage out(img.width, img.height, SemanticImage::kVoid);
  for (int y = 0; y < img.height; y += factor)
    for (int x = 0; x < img.width; x += factor) out.at(x, y) = img.at(x, y);
  return out;
}

SemanticImage region_mask_per_class(const SemanticImage& img, double area_fraction,
                                    std::uint64_t seed) {
  if (!(area_fraction > 0) || area_fraction > 1)
    throw InvalidInput("area fraction must be in (0, 1]");

  std::set<std::uint8_t> classes;
  for (auto v : img.labels)
    if (v != SemanticImage::kVoid) classes.insert(v);

  SemanticImage out(img.width, img.height, SemanticImage::kVoid);
  TinyRng rng(hash_u64(seed, 0x72656769));  // stream tag: region
  std::vector<std::uint8_t> visited(img.pixel_count());

  for (std::uint8_t cls : classes) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < img.labels.size(); ++i)
      if (img.labels[i] == cls) members.push_back(i);
    const std::size_t target = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::llround(area_fraction * static_cast<double>(members.size()))));

    std::fill(visited.begin(), visited.end(), 0);
    std::size_t taken = 0;
    std::deque<std::size_t> queue;
    std::vector<std::size_t> unvisited = members;
    while (taken < target) {
      if (queue.empty()) {
        // reseed in a component not yet touched
        std::erase_if(unvisited, [&](std::size_t i) { return visited[i] != 0; });
        const std::size_t pick = unvisited[rng.below(unvisited.size())];
        visited[pick] = 1;
        queue.push_back(pick);
      }
      const std::size_t i = queue.front();
      queue.pop_front();
      out.labels[i] = cls;
      ++taken;
      if (taken >= target) break;
      const int x = static_cast<int>(i % img.width);
      const int y = static_cast<int>(i / img.width);
      const int nx[4] = {x, x + 1, x, x - 1};
      const int ny[4] = {y - 1, y, y + 1, y};
      for (int d = 0; d < 4; ++d) {
        if (nx[d] < 0 || nx[d] >= img.width || ny[d] < 0 || ny[d] >= img.height) continue;
        const std::size_t ni = static_cast<std::size_t>(ny[d]) * img.width + nx[d];
        if (!visited[ni] && img.labels[ni] == cls) {
          visited[ni] = 1;
          queue.push_back(ni);
        }
      }
    }
  }
  return out;
}

}  // namespace semfield
