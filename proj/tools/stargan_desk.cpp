// stargan-desk: command-line driver for data synthesis, preprocessing,
// training, sampling and dataset splitting.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stargan/dataset.hpp"
#include "stargan/errors.hpp"
#include "stargan/facepipe.hpp"
#include "stargan/imaging.hpp"
#include "stargan/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace stargan;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;
constexpr std::uint64_t kDefaultSeed = 1;
constexpr const char* kSeedEnv = "STARGAN_DESK_SEED";

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw IoError("cannot write " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

// Seed from the STARGAN_DESK_SEED environment variable, if set.
std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv(kSeedEnv);
  if (v == nullptr || *v == '\0') return std::nullopt;
  std::uint64_t s = 0;
  const std::string text(v);
  auto res = std::from_chars(text.data(), text.data() + text.size(), s);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ValidationError(std::string(kSeedEnv) + " is not a non-negative integer: '" + text + "'");
  }
  return s;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (auto e = env_seed()) return *e;
  return kDefaultSeed;
}

/// Accepts a manifest file or a directory holding manifest.csv.
fs::path manifest_path(const fs::path& p) { return fs::is_directory(p) ? p / "manifest.csv" : p; }

DatasetManifest load_manifest_checked(const fs::path& p) {
  const fs::path file = manifest_path(p);
  if (!fs::exists(file)) throw IoError("no manifest at " + file.string());
  return load_manifest(file);
}

struct RunRecord {
  std::string command;
  std::vector<std::string> argv;
  json config;
  std::uint64_t seed = 0;
  std::string started;
  std::vector<std::string> outputs;

  void write(const fs::path& dir) const {
    json j;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config;
    j["seed"] = seed;
    j["started_at"] = started;
    j["finished_at"] = utc_now();
    j["outputs"] = outputs;
    write_text_atomic(dir / (command + ".run.json"), j.dump(2) + "\n");
  }
};

// ---------------------------------------------------------------------------
// synth-data

struct SynthOptions {
  std::size_t identities = 0;
  std::size_t frames = 1;
  std::size_t size = 64;
  std::optional<std::uint64_t> seed;
  fs::path out;
};

void cmd_synth(const SynthOptions& o, RunRecord& rec) {
  const std::uint64_t seed = resolve_seed(o.seed);
  ensure_dir(o.out);
  DatasetManifest m = synth_sprites(o.identities, o.frames, o.size, seed, o.out);
  rec.seed = seed;
  rec.config = {{"identities", o.identities}, {"frames", o.frames}, {"size", o.size}};
  rec.outputs = {(o.out / "manifest.csv").string()};
  rec.write(o.out);
  std::cout << (o.out / "manifest.csv").string() << "\n";
  std::cerr << m.records.size() << " frames written\n";
}

// ---------------------------------------------------------------------------
// preprocess

struct PreprocessOptions {
  fs::path in;
  fs::path out;
  std::size_t size = kAlignedSize;
  std::string scorer = "template";
  bool debug = false;
};

json box_json(const BBox& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

json landmarks_json(const Landmarks5& l) {
  json a = json::array();
  for (const auto& p : l) a.push_back(json::array({p.x, p.y}));
  return a;
}

void cmd_preprocess(const PreprocessOptions& o, RunRecord& rec) {
  const DatasetManifest input = load_manifest_checked(o.in);
  ensure_dir(o.out);

  TemplateScorer template_scorer;
  RejectAllScorer reject_scorer;
  const StageScorer& scorer =
      o.scorer == "reject" ? static_cast<const StageScorer&>(reject_scorer) : template_scorer;
  CascadeConfig cascade;
  cascade.border_pad = 0.25;
  const Landmarks5 target = canonical_template(static_cast<double>(o.size));

  std::ofstream debug;
  if (o.debug) {
    debug.open(o.out / "debug.jsonl", std::ios::trunc);
    if (!debug) throw IoError("cannot write " + (o.out / "debug.jsonl").string());
  }

  DatasetManifest output;
  output.root = o.out;
  for (std::size_t i = 0; i < input.records.size(); ++i) {
    const AnnotationRecord& r = input.records[i];
    const Image image = read_png(input.frame(i));
    CascadeStats stats;
    const auto dets = cascade_detect(image, scorer, scorer, scorer, cascade, &stats);
    json line{{"frame", r.frame_path}, {"proposals", stats.proposals}, {"refined", stats.refined}};
    json dj = json::array();
    for (const auto& d : dets) {
      dj.push_back({{"box", box_json(d.box)}, {"score", d.score}, {"landmarks", landmarks_json(d.landmarks)}});
    }
    line["detections"] = dj;
    if (!dets.empty()) {
      // cascade output is score-ordered
      const AlignedFace face = align_face(image, dets.front().landmarks, target, o.size);
      const fs::path dst = o.out / r.frame_path;
      ensure_dir(dst.parent_path());
      write_png(dst, face.image);
      output.records.push_back(r);
      line["aligned"] = r.frame_path;
    }
    if (o.debug) debug << line.dump() << "\n";
  }
  const fs::path manifest_file = o.out / "manifest.csv";
  save_manifest(output, manifest_file);
  rec.config = {{"size", o.size}, {"scorer", o.scorer}, {"border_pad", cascade.border_pad}};
  rec.outputs = {manifest_file.string()};
  if (o.debug) rec.outputs.push_back((o.out / "debug.jsonl").string());
  rec.write(o.out);
  std::cout << manifest_file.string() << "\n";
  std::cerr << "detected faces in " << output.records.size() << " of " << input.records.size() << " frames\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  fs::path manifest;
  std::optional<fs::path> config;
  fs::path out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iterations;
  std::vector<std::string> overrides;
  std::optional<fs::path> resume;
};

bool text_sets_key(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string k = line.substr(0, eq);
    k.erase(0, k.find_first_not_of(" \t"));
    k.erase(k.find_last_not_of(" \t\r") + 1);
    if (k == key) return true;
  }
  return false;
}

// Precedence, lowest first: built-in defaults, config file, STARGAN_DESK_SEED
// (seed only, when the file does not set one), command-line flags.
TrainConfig resolve_train_config(const TrainOptions& o) {
  TrainConfig c;
  bool file_seed = false;
  if (o.config) {
    const std::string text = read_text(*o.config);
    c = parse_train_config(text, c);
    file_seed = text_sets_key(text, "seed");
  }
  if (!file_seed) {
    if (auto e = env_seed()) c.seed = *e;
  }
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
    std::string key = kv.substr(0, eq);
    set_train_config_value(c, key, kv.substr(eq + 1));
  }
  if (o.seed) c.seed = *o.seed;
  if (o.iterations) c.total_iterations = *o.iterations;
  c.validate();
  return c;
}

void cmd_train(const TrainOptions& o, RunRecord& rec) {
  const TrainConfig config = resolve_train_config(o);
  const DatasetManifest data = load_manifest_checked(o.manifest);
  if (data.empty()) throw ValidationError("manifest " + manifest_path(o.manifest).string() + " has no frames");
  ensure_dir(o.out);
  write_text_atomic(o.out / "config.txt", format_train_config(config));

  RunOptions opts;
  opts.out_dir = o.out;
  opts.log_sink = [](const std::string& line) { std::cout << line << "\n" << std::flush; };
  opts.resume = o.resume;
  RunResult result = run(config, data, opts);

  rec.seed = config.seed;
  rec.config = {{"text", format_train_config(config)}, {"hash", config_hash(config)}};
  rec.outputs.push_back((o.out / "train.log").string());
  for (const auto& p : result.checkpoints) rec.outputs.push_back(p.string());
  for (const auto& p : result.grids) rec.outputs.push_back(p.string());
  rec.write(o.out);
  std::cerr << "final checkpoint " << result.final_checkpoint.string() << " (" << result.counters.d_updates
            << " D updates, " << result.counters.g_updates << " G updates)\n";
}

// ---------------------------------------------------------------------------
// sample

struct SampleOptions {
  fs::path checkpoint;
  fs::path inputs;
  fs::path out;
  std::size_t rows = 8;
};

std::vector<fs::path> png_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

void cmd_sample(const SampleOptions& o, RunRecord& rec) {
  const CheckpointFile ck = parse_checkpoint(read_file_bytes(o.checkpoint));
  const Generator g = load_generator(ck);
  const std::size_t s = ck.config.image_size;
  if (!fs::exists(o.inputs)) throw IoError("no such input " + o.inputs.string());

  std::vector<fs::path> files;
  if (fs::is_directory(o.inputs) && !fs::exists(o.inputs / "manifest.csv")) {
    files = png_files(o.inputs);
  } else {
    const DatasetManifest m = load_manifest_checked(o.inputs);
    for (std::size_t i = 0; i < m.records.size(); ++i) files.push_back(m.frame(i));
  }
  if (files.empty()) throw ValidationError("no PNG inputs under " + o.inputs.string());
  if (files.size() > o.rows) files.resize(o.rows);

  std::vector<Tensor> inputs;
  for (const auto& f : files) inputs.push_back(resize_bilinear(image_to_tensor(read_png(f)), s, s));
  const auto png = grid_png(compose_grid(inputs, g, kExpressionCount));
  if (o.out.has_parent_path()) ensure_dir(o.out.parent_path());
  write_file_bytes(o.out, png);

  rec.seed = ck.config.seed;
  rec.config = {{"checkpoint", o.checkpoint.string()}, {"iteration", ck.iteration}, {"rows", files.size()}};
  rec.outputs = {o.out.string()};
  rec.write(o.out.has_parent_path() ? o.out.parent_path() : fs::path("."));
  std::cout << o.out.string() << "\n";
}

// ---------------------------------------------------------------------------
// count-params

void cmd_count(const std::optional<fs::path>& config_file) {
  TrainConfig c;
  if (config_file) c = parse_train_config(read_text(*config_file), c);
  c.validate();
  std::cout << "G: " << build_generator(c.generator(), 0).count_params() << "\n";
  std::cout << "D: " << build_discriminator(c.discriminator(), 0).count_params() << "\n";
}

// ---------------------------------------------------------------------------
// split

struct SplitOptions {
  fs::path manifest;
  double ratio = 0.9;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out;
};

// Same frames, paths rewritten relative to a new root.
DatasetManifest rebase(const DatasetManifest& m, const fs::path& root) {
  DatasetManifest out;
  out.root = root;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    AnnotationRecord r = m.records[i];
    r.frame_path = fs::relative(fs::absolute(m.frame(i)), fs::absolute(root)).generic_string();
    out.records.push_back(r);
  }
  return out;
}

void cmd_split(const SplitOptions& o, RunRecord& rec) {
  const DatasetManifest m = load_manifest_checked(o.manifest);
  const std::uint64_t seed = resolve_seed(o.seed);
  auto [train, test] = split_dataset(m, o.ratio, seed);
  const fs::path dir = o.out ? *o.out : m.root;
  ensure_dir(dir);
  const fs::path train_file = dir / "train_manifest.csv";
  const fs::path test_file = dir / "test_manifest.csv";
  const bool same_root = fs::equivalent(dir, m.root);
  save_manifest(same_root ? train : rebase(train, dir), train_file);
  save_manifest(same_root ? test : rebase(test, dir), test_file);
  rec.seed = seed;
  rec.config = {{"ratio", o.ratio}};
  rec.outputs = {train_file.string(), test_file.string()};
  rec.write(dir);
  std::cout << "train: " << train.identities().size() << " identities, " << train.records.size() << " frames -> "
            << train_file.string() << "\n";
  std::cout << "test: " << test.identities().size() << " identities, " << test.records.size() << " frames -> "
            << test_file.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Expression translation toolkit: synthetic data, face preprocessing, training and sampling"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth-data", "Render a synthetic sprite dataset with a manifest");
  synth_cmd->add_option("--identities", synth.identities, "Number of identities")->required()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--frames", synth.frames, "Frames per identity and expression")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--size", synth.size, "Image side in pixels")->capture_default_str()->check(CLI::Range(8, 1024));
  synth_cmd->add_option("--seed", synth.seed, std::string("Seed (falls back to ") + kSeedEnv + ", then 1)");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();

  PreprocessOptions pre;
  auto* pre_cmd = app.add_subcommand("preprocess", "Detect, align and crop faces listed in a manifest");
  pre_cmd->add_option("--in", pre.in, "Input manifest or directory with manifest.csv")->required();
  pre_cmd->add_option("--out", pre.out, "Output directory")->required();
  pre_cmd->add_option("--size", pre.size, "Aligned crop side")->capture_default_str()->check(CLI::Range(8, 1024));
  pre_cmd->add_option("--scorer", pre.scorer, "Stage scorer")
      ->capture_default_str()
      ->check(CLI::IsMember({"template", "reject"}));
  pre_cmd->add_flag("--debug", pre.debug, "Write per-image JSON lines to debug.jsonl");

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train generator and discriminator");
  train_cmd->add_option("--manifest", train.manifest, "Training manifest")->required();
  train_cmd->add_option("--config", train.config, "key = value config file")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  train_cmd->add_option("--seed", train.seed, "Seed (overrides the config file)");
  train_cmd->add_option("--iterations", train.iterations, "Total iterations")->check(CLI::PositiveNumber);
  train_cmd->add_option("--set", train.overrides, "Config override key=value (repeatable)");
  train_cmd->add_option("--resume", train.resume, "Continue from this checkpoint");

  SampleOptions sample;
  auto* sample_cmd = app.add_subcommand("sample", "Write a translation grid from a checkpoint");
  sample_cmd->add_option("--checkpoint", sample.checkpoint, "Checkpoint file")->required();
  sample_cmd->add_option("--inputs", sample.inputs, "Directory of PNGs, or a manifest")->required();
  sample_cmd->add_option("--out", sample.out, "Output PNG")->required();
  sample_cmd->add_option("--rows", sample.rows, "Maximum number of input rows")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  std::optional<fs::path> count_config;
  auto* count_cmd = app.add_subcommand("count-params", "Print generator and discriminator parameter counts");
  count_cmd->add_option("--config", count_config, "key = value config file")->check(CLI::ExistingFile);

  SplitOptions split;
  auto* split_cmd = app.add_subcommand("split", "Split a manifest by identity into train and test manifests");
  split_cmd->add_option("--manifest", split.manifest, "Manifest to split")->required();
  split_cmd->add_option("--ratio", split.ratio, "Fraction of identities for training")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  split_cmd->add_option("--seed", split.seed, std::string("Seed (falls back to ") + kSeedEnv + ", then 1)");
  split_cmd->add_option("--out", split.out, "Output directory (default: next to the manifest)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  RunRecord rec;
  rec.started = utc_now();
  rec.argv.assign(argv, argv + argc);
  try {
    if (synth_cmd->parsed()) {
      rec.command = "synth-data";
      cmd_synth(synth, rec);
    } else if (pre_cmd->parsed()) {
      rec.command = "preprocess";
      cmd_preprocess(pre, rec);
    } else if (train_cmd->parsed()) {
      rec.command = "train";
      cmd_train(train, rec);
    } else if (sample_cmd->parsed()) {
      rec.command = "sample";
      cmd_sample(sample, rec);
    } else if (count_cmd->parsed()) {
      cmd_count(count_config);
    } else if (split_cmd->parsed()) {
      rec.command = "split";
      cmd_split(split, rec);
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
