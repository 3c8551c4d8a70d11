#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stargan/architectures.hpp"
#include "stargan/dataset.hpp"
#include "stargan/losses.hpp"
#include "stargan/optimizer.hpp"

namespace stargan {

enum class LabelMode { Permutation, Uniform };

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t n_critic = 5;
  std::size_t total_iterations = 20000;
  std::uint64_t seed = 1;
  LossWeights weights;
  AdamConfig adam_g;
  AdamConfig adam_d;
  std::size_t image_size = 64;
  std::size_t g_conv_dim = 64;
  std::size_t g_repeat_num = 6;
  std::size_t d_conv_dim = 64;
  std::size_t d_repeat_num = 6;
  std::size_t log_every = 10;
  std::size_t checkpoint_every = 1000;
  std::size_t sample_every = 1000;
  std::size_t sample_rows = 4;
  LabelMode label_mode = LabelMode::Permutation;

  void validate() const;
  GeneratorConfig generator() const;
  DiscriminatorConfig discriminator() const;
};

/// Flat `key = value` text, one key per line, '#' starts a comment.
std::string format_train_config(const TrainConfig& config);
/// Applies the keys found in `text` on top of `base`. Unknown keys and bad
/// values throw ValidationError naming the line.
TrainConfig parse_train_config(std::string_view text, TrainConfig base = {});
std::vector<std::string> train_config_keys();
/// Sets one key; throws ValidationError on unknown keys or bad values.
void set_train_config_value(TrainConfig& config, std::string_view key, std::string_view value);
/// FNV-1a of the formatted config, as 16 hex digits.
std::string config_hash(const TrainConfig& config);

/// Target domains for a batch: a random permutation of the batch's labels, or
/// in Uniform mode independent uniform draws over c_dim domains.
std::vector<int> sample_target_labels(const std::vector<int>& original, std::mt19937_64& rng,
                                      LabelMode mode = LabelMode::Permutation, std::size_t c_dim = kExpressionCount);

struct StepOutcome {
  LossReport report;
  /// Weighted objective that was differentiated.
  double total = 0.0;
  std::vector<int> targets;
};

/// One critic update. The translated batch is produced without recording G's
/// tape; only D's parameters move. Throws NumericalError on non-finite loss.
StepOutcome train_step_d(const Tensor& x, const std::vector<int>& labels, const Generator& g, const Discriminator& d,
                         const LossWeights& weights, Adam& opt_d, std::mt19937_64& rng,
                         LabelMode mode = LabelMode::Permutation);

/// One generator update; only G's parameters move.
StepOutcome train_step_g(const Tensor& x, const std::vector<int>& labels, const Generator& g, const Discriminator& d,
                         const LossWeights& weights, Adam& opt_g, std::mt19937_64& rng,
                         LabelMode mode = LabelMode::Permutation);

struct UpdateCounters {
  std::uint64_t d_updates = 0;
  std::uint64_t g_updates = 0;
  bool operator==(const UpdateCounters&) const = default;
};

struct LogEntry {
  std::size_t iteration = 0;
  std::size_t total = 0;
  LossReport report;
};

/// The two log lines of one report (D line, then G line), without newlines.
std::pair<std::string, std::string> format_log_lines(const LogEntry& entry);
/// Parses every D/G line pair in `text`; other lines are ignored.
std::vector<LogEntry> parse_log(std::string_view text);

/// Training state: networks, optimizers, RNG, data cursor and counters.
class Trainer {
 public:
  Trainer(TrainConfig config, DatasetManifest data);
  Trainer(Trainer&&) = default;
  Trainer& operator=(Trainer&&) = default;
  // Copies would share parameter storage with the original.
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  /// n_critic critic updates, each on a fresh batch, then one generator update
  /// on the last of those batches.
  LogEntry step();

  const TrainConfig& config() const { return config_; }
  const DatasetManifest& data() const { return data_; }
  const Generator& generator() const { return g_; }
  const Discriminator& discriminator() const { return d_; }
  const Adam& optimizer_g() const { return opt_g_; }
  const Adam& optimizer_d() const { return opt_d_; }
  std::size_t iteration() const { return iteration_; }
  const UpdateCounters& counters() const { return counters_; }

  std::vector<std::uint8_t> checkpoint_bytes() const;
  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores a checkpoint written by save_checkpoint; the config comes from
  /// the checkpoint and `total_iterations` may be raised by the caller.
  static Trainer from_checkpoint(const std::vector<std::uint8_t>& bytes, DatasetManifest data);
  static Trainer from_checkpoint(const std::filesystem::path& path, DatasetManifest data);
  void set_total_iterations(std::size_t total);

 private:
  Batch next_batch();
  void shuffle_epoch();

  TrainConfig config_;
  DatasetManifest data_;
  Generator g_;
  Discriminator d_;
  Adam opt_g_;
  Adam opt_d_;
  std::mt19937_64 rng_;
  std::size_t iteration_ = 0;
  UpdateCounters counters_;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
  // Decoded training images, [records, 3, S, S] flattened; empty when too large to keep.
  std::vector<double> cache_;
};

/// Parsed checkpoint container, for inspection and loading networks alone.
struct CheckpointFile {
  TrainConfig config;
  std::string config_hash;
  std::uint64_t iteration = 0;
  std::string rng_state;
  UpdateCounters counters;
  std::uint64_t epoch = 0;
  std::uint64_t cursor = 0;
  std::uint64_t adam_g_step = 0;
  std::uint64_t adam_d_step = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(std::string_view name) const;
};

inline constexpr char kCheckpointMagic[8] = {'S', 'G', 'D', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

CheckpointFile parse_checkpoint(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
/// Rebuilds the generator stored in a checkpoint.
Generator load_generator(const CheckpointFile& ckpt);

struct RunOptions {
  /// Where train.log, checkpoints/ and samples/ go; empty disables file output.
  std::filesystem::path out_dir;
  /// Receives every log line (without newline). Defaults to stdout.
  std::function<void(const std::string&)> log_sink;
  /// Inputs for the sample grids; defaults to the first frame of up to
  /// sample_rows distinct identities.
  std::vector<Tensor> sample_inputs;
  /// Continue from this checkpoint instead of starting fresh.
  std::optional<std::filesystem::path> resume;
};

struct RunResult {
  std::vector<LogEntry> history;
  UpdateCounters counters;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<std::filesystem::path> grids;
  std::filesystem::path final_checkpoint;
  std::vector<std::uint8_t> final_checkpoint_bytes;
  std::vector<std::uint8_t> final_grid_png;
};

/// Trains until config.total_iterations, logging every log_every iterations
/// (and the last), checkpointing and sampling on schedule and at the end.
RunResult run(const TrainConfig& config, const DatasetManifest& data, const RunOptions& options = {});

/// Splits by video id: round(ratio * identities) go to train (clamped so both
/// sides are non-empty), chosen by a seeded shuffle. Record order is kept.
std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest, double ratio,
                                                          std::uint64_t seed);

/// Default sample-grid inputs for a manifest.
std::vector<Tensor> default_sample_inputs(const DatasetManifest& data, std::size_t rows, std::size_t image_size);

}  // namespace stargan
