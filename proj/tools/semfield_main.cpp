// semfield: trains and evaluates a semantic neural field purely from labeled
// images. Subcommands: synth, train, render, eval, corrupt.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "semfield/checkpoint.hpp"
#include "semfield/png_io.hpp"
#include "semfield/presets.hpp"
#include "semfield/scene.hpp"
#include "semfield/serialize.hpp"
#include "semfield/trainer.hpp"

namespace sf = semfield;
using nlohmann::json;

namespace {

// exit codes: 2 configuration, 3 data/checkpoint, 4 numeric failure
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct CommonFlags {
  bool json_output = false;
};

void emit(const CommonFlags& flags, const json& summary, const std::string& human) {
  if (flags.json_output)
    std::cout << summary.dump() << "\n";
  else
    std::cout << human;
}

// Resolved run settings. Precedence: built-in defaults < profile < config
// file < explicit command-line flags. The fully resolved form is dumped into
// the run directory and is itself accepted back through --config.
struct RunSettings {
  std::string profile = "desk";
  std::string preset = "synthesis";
  std::string data;
  std::string out;
  std::uint64_t seed = 0;
  bool deterministic = false;
  int downsample = 1;
  int chunk = 4096;
  sf::TrainConfig train;
  sf::FieldConfig field;
};

json settings_to_json(const RunSettings& s) {
  return json{{"profile", s.profile}, {"preset", s.preset},   {"data", s.data},
              {"out", s.out},         {"seed", s.seed},       {"deterministic", s.deterministic},
              {"downsample", s.downsample}, {"chunk", s.chunk},
              {"train", s.train},     {"field", s.field}};
}

void settings_from_json(const json& j, RunSettings& s) {
  if (j.contains("profile")) j.at("profile").get_to(s.profile);
  if (j.contains("preset")) j.at("preset").get_to(s.preset);
  if (j.contains("seed")) j.at("seed").get_to(s.seed);
  if (j.contains("deterministic")) j.at("deterministic").get_to(s.deterministic);
  if (j.contains("downsample")) j.at("downsample").get_to(s.downsample);
  if (j.contains("chunk")) j.at("chunk").get_to(s.chunk);
  if (j.contains("train")) j.at("train").get_to(s.train);
  if (j.contains("field")) j.at("field").get_to(s.field);
}

std::map<int, int> load_remap(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw sf::DataError("cannot open remap table: " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw sf::DataError("remap table must be a JSON object of old->new labels");
  std::map<int, int> remap;
  for (const auto& [key, value] : j.items()) remap[std::stoi(key)] = value.get<int>();
  return remap;
}

std::vector<int> frames_for_split(const std::string& split, int n_frames) {
  auto [train, test] = sf::split_train_test(n_frames);
  if (split == "train") return train;
  if (split == "test") return test;
  if (split == "all") {
    std::vector<int> all(n_frames);
    for (int i = 0; i < n_frames; ++i) all[i] = i;
    return all;
  }
  throw sf::ConfigError("unknown split '" + split + "' (expected train, test or all)");
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& spec_path, const std::string& out_dir, std::uint64_t seed,
              const CommonFlags& flags) {
  sf::SceneSpec spec = spec_path.empty()
                           ? sf::SceneSpec::from_json_text(sf::default_scene_spec_json())
                           : sf::SceneSpec::from_json_file(spec_path);
  sf::Dataset ds = sf::generate_synthetic(spec, seed, out_dir);
  const auto census = sf::class_census(ds.images, spec.num_classes);

  json jcensus = json::array();
  std::string human = "wrote " + std::to_string(ds.images.size()) + " frames (" +
                      std::to_string(ds.manifest.width) + "x" +
                      std::to_string(ds.manifest.height) + ", " +
                      std::to_string(spec.num_classes) + " classes) to " + out_dir + "\n";
  human += "class census:\n";
  for (std::size_t c = 0; c < census.size(); ++c) {
    jcensus.push_back({{"class", c}, {"pixels", census[c]}});
    human += "  class " + std::to_string(c) + ": " + std::to_string(census[c]) + " px\n";
  }
  emit(flags,
       json{{"frames", ds.images.size()},
            {"width", ds.manifest.width},
            {"height", ds.manifest.height},
            {"num_classes", spec.num_classes},
            {"out", out_dir},
            {"census", jcensus}},
       human);
  return 0;
}

int cmd_train(RunSettings s, const std::string& remap_path, bool unsafe,
              const CommonFlags& flags) {
  const sf::ExperimentPreset preset = sf::ExperimentPreset::parse(s.preset, unsafe);

  sf::LoadOptions lopts;
  lopts.downsample = s.downsample;
  if (!remap_path.empty()) lopts.remap = load_remap(remap_path);
  const sf::Dataset data = sf::load_dataset(std::filesystem::path(s.data) / "manifest.json",
                                            lopts);
  s.field.num_classes = data.manifest.num_classes;
  s.train.validate();
  s.field.validate();

  auto [train_frames, test_frames] = sf::split_train_test(
      static_cast<int>(data.manifest.frames.size()));
  sf::PresetApplication applied = sf::apply_preset(data, train_frames, preset, s.seed);

  std::filesystem::create_directories(s.out);
  {
    std::ofstream cfg(std::filesystem::path(s.out) / "config.json", std::ios::trunc);
    cfg << settings_to_json(s).dump(2) << "\n";
  }

  sf::TrainJob job;
  job.train = s.train;
  job.train.seed = s.seed;
  job.field = s.field;
  job.data = &data;
  job.train_frames = applied.train_frames;
  job.train_labels = &applied.train_labels;
  job.eval_frames = test_frames;
  job.run_dir = s.out;
  job.meta = json{{"preset", s.preset},
                  {"profile", s.profile},
                  {"seed", s.seed},
                  {"data", s.data},
                  {"deterministic", s.deterministic}};
  const int report_every = std::max(1, job.train.iterations / 40);
  job.progress = [&](int iter, double loss) {
    if (iter % report_every == 0 || iter == job.train.iterations)
      std::cerr << "iter " << iter << "/" << job.train.iterations << " loss " << loss
                << "\n";
  };

  const sf::TrainOutcome outcome = sf::train_run(job);
  emit(flags,
       json{{"run_dir", s.out},
            {"checkpoint", outcome.final_checkpoint.string()},
            {"iterations", job.train.iterations},
            {"first_loss", outcome.first_loss},
            {"last_loss", outcome.last_loss},
            {"train_frames", job.train_frames.size()}},
       "trained " + std::to_string(job.train.iterations) + " iterations on " +
           std::to_string(job.train_frames.size()) + " frames; loss " +
           std::to_string(outcome.first_loss) + " -> " + std::to_string(outcome.last_loss) +
           "\ncheckpoint: " + outcome.final_checkpoint.string() + "\n");
  return 0;
}

sf::Pose pose_from_json_arg(const std::string& arg) {
  json j;
  if (!arg.empty() && arg.front() == '{') {
    j = json::parse(arg, nullptr, false);
  } else {
    std::ifstream in(arg);
    if (!in) throw sf::DataError("cannot open pose file: " + arg);
    j = json::parse(in, nullptr, false);
  }
  if (j.is_discarded()) throw sf::DataError("pose argument is not valid JSON");
  std::vector<double> flat;
  try {
    flat = j.at("c2w").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw sf::DataError(std::string("pose JSON needs a c2w array: ") + e.what());
  }
  if (flat.size() != 16) throw sf::DataError("pose c2w must hold 16 numbers");
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = flat[static_cast<std::size_t>(r) * 4 + c];
  sf::Pose p = sf::Pose::from_c2w(m);
  p.validate();
  return p;
}

int cmd_render(const std::string& ckpt_path, const std::string& data_dir, int frame,
               const std::string& pose_json, const std::string& out_png, bool colorize,
               int chunk, int threads, const CommonFlags& flags) {
  const sf::Checkpoint ckpt = sf::load_checkpoint(ckpt_path);
  const sf::Dataset data = sf::load_dataset(std::filesystem::path(data_dir) / "manifest.json");
  if (ckpt.field.num_classes != data.manifest.num_classes)
    throw sf::DataError("checkpoint and dataset class counts differ");

  sf::Pose pose;
  if (!pose_json.empty()) {
    pose = pose_from_json_arg(pose_json);
  } else {
    if (frame < 0 || frame >= static_cast<int>(data.manifest.frames.size()))
      throw sf::DataError("frame index " + std::to_string(frame) + " out of range");
    pose = data.manifest.frames[frame].pose;
  }

  sf::ThreadPool pool(threads);
  const sf::RenderedImage img = sf::render_image(
      ckpt.coarse, ckpt.fine, data.manifest.intrinsics(), pose, data.manifest.near,
      data.manifest.far, ckpt.train.sampling(), chunk, pool.size() > 1 ? &pool : nullptr);
  sf::write_gray8_png(out_png, img.labels.width, img.labels.height, img.labels.labels.data());
  std::string color_path;
  if (colorize) {
    std::filesystem::path p(out_png);
    color_path = (p.parent_path() / (p.stem().string() + "_color.png")).string();
    const auto rgb = sf::colorize_labels(img.labels, data.manifest.palette);
    sf::write_rgb8_png(color_path, img.labels.width, img.labels.height, rgb.data());
  }
  emit(flags,
       json{{"out", out_png},
            {"color", color_path},
            {"width", img.labels.width},
            {"height", img.labels.height}},
       "rendered " + std::to_string(img.labels.width) + "x" +
           std::to_string(img.labels.height) + " label map to " + out_png + "\n");
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& split, const std::string& out_json,
             const std::string& save_renders, bool colorize, bool oracle, int chunk,
             int threads, const CommonFlags& flags) {
  const sf::Dataset data = sf::load_dataset(std::filesystem::path(data_dir) / "manifest.json");
  const std::vector<int> frames =
      frames_for_split(split, static_cast<int>(data.manifest.frames.size()));

  json meta{{"data", data_dir}, {"split", split}};
  sf::Scores result_scores;
  if (oracle) {
    // test hook: scores the ground truth against itself, bypassing the field
    sf::ConfusionMatrix cm(data.manifest.num_classes);
    for (int f : frames) cm.accumulate(data.images[f], data.images[f]);
    result_scores = sf::scores(cm);
    meta["oracle"] = true;
  } else {
    const sf::Checkpoint ckpt = sf::load_checkpoint(ckpt_path);
    if (ckpt.field.num_classes != data.manifest.num_classes)
      throw sf::DataError("checkpoint and dataset class counts differ");
    sf::ThreadPool pool(threads);
    sf::EvalOptions opts;
    opts.sampling = ckpt.train.sampling();
    opts.chunk = chunk;
    opts.pool = pool.size() > 1 ? &pool : nullptr;
    opts.save_renders_dir = save_renders;
    opts.colorize = colorize;
    result_scores = sf::evaluate_frames(ckpt.coarse, ckpt.fine, data, frames, opts)
                        .metric_scores;
    meta["checkpoint"] = ckpt_path;
    meta["iteration"] = ckpt.iteration;
    meta["preset"] = ckpt.meta.value("preset", "");
    meta["profile"] = ckpt.meta.value("profile", "");
    meta["seed"] = ckpt.meta.value("seed", std::uint64_t{0});
  }

  json out = sf::scores_to_json(result_scores);
  out["meta"] = meta;
  out["frames"] = frames.size();
  if (!out_json.empty()) {
    std::ofstream f(out_json, std::ios::trunc);
    if (!f) throw sf::DataError("cannot write score report: " + out_json);
    f << out.dump(2) << "\n";
  }
  char human[256];
  std::snprintf(human, sizeof(human),
                "%zu frames (%s split): miou %.4f, total_acc %.4f, avg_acc %.4f\n",
                frames.size(), split.c_str(), result_scores.miou, result_scores.total_acc,
                result_scores.avg_acc);
  emit(flags, out, human);
  return 0;
}

int cmd_corrupt(const std::string& data_dir, const std::string& mode,
                const std::string& out_dir, std::uint64_t seed, bool unsafe,
                const CommonFlags& flags) {
  const sf::ExperimentPreset preset = sf::ExperimentPreset::parse(mode, unsafe);
  const sf::Dataset data = sf::load_dataset(std::filesystem::path(data_dir) / "manifest.json");
  auto [train_frames, test_frames] = sf::split_train_test(
      static_cast<int>(data.manifest.frames.size()));
  const sf::PresetApplication applied = sf::apply_preset(data, train_frames, preset, seed);

  std::filesystem::create_directories(out_dir);
  sf::DatasetManifest manifest = data.manifest;
  manifest.frames.clear();

  std::size_t changed = 0, kept = 0;
  std::vector<int> train_slot(data.manifest.frames.size(), -1);
  std::vector<char> dropped(data.manifest.frames.size(), 0);
  for (std::size_t i = 0; i < applied.train_frames.size(); ++i)
    train_slot[applied.train_frames[i]] = static_cast<int>(i);
  if (preset.kind == sf::PresetKind::kSparseFrames)
    for (int f : train_frames)
      if (train_slot[f] < 0) dropped[f] = 1;  // outside the keyframe subset

  for (std::size_t f = 0; f < data.manifest.frames.size(); ++f) {
    if (dropped[f]) continue;
    const bool corrupted = train_slot[f] >= 0;
    const sf::SemanticImage& img =
        corrupted ? applied.train_labels[train_slot[f]] : data.images[f];
    sf::write_gray8_png(std::filesystem::path(out_dir) / data.manifest.frames[f].file,
                        img.width, img.height, img.labels.data());
    manifest.frames.push_back(data.manifest.frames[f]);
    (corrupted ? changed : kept) += 1;
  }
  sf::save_manifest(std::filesystem::path(out_dir) / "manifest.json", manifest);

  emit(flags,
       json{{"out", out_dir},
            {"mode", mode},
            {"corrupted_frames", changed},
            {"clean_frames", kept}},
       "wrote " + std::to_string(changed) + " corrupted training frames and " +
           std::to_string(kept) + " clean frames to " + out_dir + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semantic neural field trainer"};
  app.require_subcommand(1);
  CommonFlags flags;
  app.add_flag("--json", flags.json_output, "machine-readable stdout");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_spec, synth_out;
  std::uint64_t synth_seed = 0;
  synth->add_option("--spec", synth_spec, "scene spec JSON (default: bundled scene)");
  synth->add_option("--out", synth_out, "output dataset directory")->required();
  synth->add_option("--seed", synth_seed, "generation seed");

  // train
  auto* train = app.add_subcommand("train", "train on a dataset");
  std::string train_data, train_out, train_preset, train_profile, train_config, train_remap;
  bool train_unsafe = false, train_deterministic = false;
  RunSettings cli_overrides;  // receives explicit flag values
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "run directory")->required();
  train->add_option("--preset", train_preset, "experiment preset NAME[:PARAM]");
  train->add_option("--profile", train_profile, "desk or paper (default desk)");
  train->add_option("--config", train_config, "JSON config (resolved-dump schema)");
  train->add_option("--remap", train_remap, "label remap JSON applied on load");
  auto* opt_iters = train->add_option("--iters", cli_overrides.train.iterations, "iterations");
  auto* opt_seed = train->add_option("--seed", cli_overrides.seed, "training seed");
  auto* opt_batch = train->add_option("--batch", cli_overrides.train.ray_batch, "ray batch");
  auto* opt_lr = train->add_option("--lr", cli_overrides.train.learning_rate, "learning rate");
  auto* opt_nc = train->add_option("--n-coarse", cli_overrides.train.n_coarse, "coarse samples");
  auto* opt_nf = train->add_option("--n-fine", cli_overrides.train.n_fine, "fine samples");
  auto* opt_eval = train->add_option("--eval-every", cli_overrides.train.eval_every,
                                     "evaluate the test split every N iterations");
  auto* opt_ckpt = train->add_option("--ckpt-every", cli_overrides.train.checkpoint_every,
                                     "checkpoint every N iterations");
  auto* opt_threads = train->add_option("--threads", cli_overrides.train.threads, "worker threads");
  auto* opt_down = train->add_option("--downsample", cli_overrides.downsample,
                                     "integer label-map downsampling on load");
  train->add_flag("--deterministic", train_deterministic,
                  "record the determinism contract in the run config");
  train->add_flag("--unsafe", train_unsafe, "allow preset parameters outside the paper grid");

  // render
  auto* render = app.add_subcommand("render", "render a label map from a checkpoint");
  std::string render_ckpt, render_data, render_pose, render_out;
  int render_frame = -1, render_chunk = 4096, render_threads = 0;
  bool render_colorize = false;
  render->add_option("--ckpt", render_ckpt, "checkpoint file")->required();
  render->add_option("--data", render_data, "dataset directory (intrinsics, palette)")->required();
  render->add_option("--frame", render_frame, "dataset frame index");
  render->add_option("--pose", render_pose, "inline JSON or file with {\"c2w\": [16 numbers]}");
  render->add_option("--out", render_out, "output label PNG")->required();
  render->add_flag("--colorize", render_colorize, "also write a palette RGB preview");
  render->add_option("--chunk", render_chunk, "rays per evaluation slab");
  render->add_option("--threads", render_threads, "worker threads");

  // eval
  auto* eval = app.add_subcommand("eval", "score a checkpoint against ground truth");
  std::string eval_ckpt, eval_data, eval_split = "test", eval_out, eval_renders;
  int eval_chunk = 4096, eval_threads = 0;
  bool eval_colorize = false, eval_oracle = false;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint file");
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--split", eval_split, "train, test or all (default test)");
  eval->add_option("--out", eval_out, "score report JSON");
  eval->add_option("--save-renders", eval_renders, "directory for rendered label maps");
  eval->add_flag("--colorize", eval_colorize, "also save palette RGB previews");
  eval->add_flag("--oracle", eval_oracle,
                 "test hook: score ground truth against itself instead of rendering");
  eval->add_option("--chunk", eval_chunk, "rays per evaluation slab");
  eval->add_option("--threads", eval_threads, "worker threads");

  // corrupt
  auto* corrupt = app.add_subcommand("corrupt", "materialize a corrupted training split");
  std::string corrupt_data, corrupt_mode, corrupt_out;
  std::uint64_t corrupt_seed = 0;
  bool corrupt_unsafe = false;
  corrupt->add_option("--data", corrupt_data, "dataset directory")->required();
  corrupt->add_option("--mode", corrupt_mode, "corruption MODE:PARAM")->required();
  corrupt->add_option("--out", corrupt_out, "output dataset directory")->required();
  corrupt->add_option("--seed", corrupt_seed, "corruption seed");
  corrupt->add_flag("--unsafe", corrupt_unsafe, "allow parameters outside the paper grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_spec, synth_out, synth_seed, flags);
    if (train->parsed()) {
      RunSettings s;
      const sf::RunProfile profile =
          sf::profile_by_name(train_profile.empty() ? "desk" : train_profile);
      s.profile = profile.name;
      s.train = profile.train;
      s.field = profile.field;
      s.downsample = profile.downsample;
      s.chunk = profile.chunk;
      if (!train_config.empty()) {
        std::ifstream in(train_config);
        if (!in) throw sf::ConfigError("cannot open config file: " + train_config);
        json j = json::parse(in, nullptr, false);
        if (j.is_discarded()) throw sf::ConfigError("config file is not valid JSON");
        settings_from_json(j, s);
      }
      if (!train_preset.empty()) s.preset = train_preset;
      s.data = train_data;
      s.out = train_out;
      s.deterministic = train_deterministic || s.deterministic;
      if (opt_iters->count()) s.train.iterations = cli_overrides.train.iterations;
      if (opt_seed->count()) s.seed = cli_overrides.seed;
      if (opt_batch->count()) s.train.ray_batch = cli_overrides.train.ray_batch;
      if (opt_lr->count()) s.train.learning_rate = cli_overrides.train.learning_rate;
      if (opt_nc->count()) s.train.n_coarse = cli_overrides.train.n_coarse;
      if (opt_nf->count()) s.train.n_fine = cli_overrides.train.n_fine;
      if (opt_eval->count()) s.train.eval_every = cli_overrides.train.eval_every;
      if (opt_ckpt->count()) s.train.checkpoint_every = cli_overrides.train.checkpoint_every;
      if (opt_threads->count()) s.train.threads = cli_overrides.train.threads;
      if (opt_down->count()) s.downsample = cli_overrides.downsample;
      return cmd_train(std::move(s), train_remap, train_unsafe, flags);
    }
    if (render->parsed()) {
      if (render_frame < 0 && render_pose.empty())
        throw sf::ConfigError("render needs --frame or --pose");
      return cmd_render(render_ckpt, render_data, render_frame, render_pose, render_out,
                        render_colorize, render_chunk, render_threads, flags);
    }
    if (eval->parsed()) {
      if (!eval_oracle && eval_ckpt.empty())
        throw sf::ConfigError("eval needs --ckpt (or --oracle)");
      return cmd_eval(eval_ckpt, eval_data, eval_split, eval_out, eval_renders,
                      eval_colorize, eval_oracle, eval_chunk, eval_threads, flags);
    }
    if (corrupt->parsed())
      return cmd_corrupt(corrupt_data, corrupt_mode, corrupt_out, corrupt_seed,
                         corrupt_unsafe, flags);
  } catch (const sf::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const sf::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const sf::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitData;
  } catch (const sf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const sf::InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
