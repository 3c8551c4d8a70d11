#include "stargan/trainer.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "stargan/errors.hpp"
#include "stargan/imaging.hpp"
#include "stargan/random.hpp"

namespace stargan {

namespace {

enum class Stream : std::uint64_t { Generator = 1, Discriminator = 2, Training = 3, DataOrder = 4 };

std::uint64_t stream_seed(std::uint64_t seed, Stream s) { return derive_seed(seed, static_cast<std::uint64_t>(s)); }

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::size_t parse_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ValidationError("config key '" + std::string(key) + "': expected a non-negative integer, got '" +
                          std::string(v) + "'");
  }
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ValidationError("config key '" + std::string(key) + "': expected a non-negative integer, got '" +
                          std::string(v) + "'");
  }
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ValidationError("config key '" + std::string(key) + "': expected a finite number, got '" + std::string(v) +
                          "'");
  }
  return out;
}

struct Field {
  const char* key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, std::string_view, std::string_view)> set;
};

template <typename Member>
Field size_field(const char* key, Member m) {
  return {key, [m](TrainConfig c) { return std::to_string(m(c)); },
          [m](TrainConfig& c, std::string_view k, std::string_view v) { m(c) = parse_size(k, v); }};
}

template <typename Member>
Field real_field(const char* key, Member m) {
  return {key, [m](TrainConfig c) { return format_double(m(c)); },
          [m](TrainConfig& c, std::string_view k, std::string_view v) { m(c) = parse_real(k, v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(size_field("batch_size", [](TrainConfig& c) -> std::size_t& { return c.batch_size; }));
    f.push_back(size_field("n_critic", [](TrainConfig& c) -> std::size_t& { return c.n_critic; }));
    f.push_back(size_field("total_iterations", [](TrainConfig& c) -> std::size_t& { return c.total_iterations; }));
    f.push_back({"seed", [](const TrainConfig& c) { return std::to_string(c.seed); },
                 [](TrainConfig& c, std::string_view k, std::string_view v) { c.seed = parse_u64(k, v); }});
    f.push_back(real_field("lambda_gp", [](TrainConfig& c) -> double& { return c.weights.lambda_gp; }));
    f.push_back(real_field("lambda_cls", [](TrainConfig& c) -> double& { return c.weights.lambda_cls; }));
    f.push_back(real_field("lambda_rec", [](TrainConfig& c) -> double& { return c.weights.lambda_rec; }));
    f.push_back(real_field("g_lr", [](TrainConfig& c) -> double& { return c.adam_g.learning_rate; }));
    f.push_back(real_field("g_beta1", [](TrainConfig& c) -> double& { return c.adam_g.beta1; }));
    f.push_back(real_field("g_beta2", [](TrainConfig& c) -> double& { return c.adam_g.beta2; }));
    f.push_back(real_field("g_eps", [](TrainConfig& c) -> double& { return c.adam_g.eps; }));
    f.push_back(real_field("d_lr", [](TrainConfig& c) -> double& { return c.adam_d.learning_rate; }));
    f.push_back(real_field("d_beta1", [](TrainConfig& c) -> double& { return c.adam_d.beta1; }));
    f.push_back(real_field("d_beta2", [](TrainConfig& c) -> double& { return c.adam_d.beta2; }));
    f.push_back(real_field("d_eps", [](TrainConfig& c) -> double& { return c.adam_d.eps; }));
    f.push_back(size_field("image_size", [](TrainConfig& c) -> std::size_t& { return c.image_size; }));
    f.push_back(size_field("g_conv_dim", [](TrainConfig& c) -> std::size_t& { return c.g_conv_dim; }));
    f.push_back(size_field("g_repeat_num", [](TrainConfig& c) -> std::size_t& { return c.g_repeat_num; }));
    f.push_back(size_field("d_conv_dim", [](TrainConfig& c) -> std::size_t& { return c.d_conv_dim; }));
    f.push_back(size_field("d_repeat_num", [](TrainConfig& c) -> std::size_t& { return c.d_repeat_num; }));
    f.push_back(size_field("log_every", [](TrainConfig& c) -> std::size_t& { return c.log_every; }));
    f.push_back(size_field("checkpoint_every", [](TrainConfig& c) -> std::size_t& { return c.checkpoint_every; }));
    f.push_back(size_field("sample_every", [](TrainConfig& c) -> std::size_t& { return c.sample_every; }));
    f.push_back(size_field("sample_rows", [](TrainConfig& c) -> std::size_t& { return c.sample_rows; }));
    f.push_back({"label_mode",
                 [](const TrainConfig& c) {
                   return std::string(c.label_mode == LabelMode::Permutation ? "permutation" : "uniform");
                 },
                 [](TrainConfig& c, std::string_view k, std::string_view v) {
                   if (v == "permutation") {
                     c.label_mode = LabelMode::Permutation;
                   } else if (v == "uniform") {
                     c.label_mode = LabelMode::Uniform;
                   } else {
                     throw ValidationError("config key '" + std::string(k) +
                                           "': expected 'permutation' or 'uniform', got '" + std::string(v) + "'");
                   }
                 }});
    return f;
  }();
  return table;
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

void check_finite(const LossReport& report, double total, const char* step) {
  if (report.all_finite() && std::isfinite(total)) return;
  std::ostringstream msg;
  msg << step << ": non-finite loss (total " << total;
  auto field = [&](const char* name, const std::optional<double>& v) {
    if (v) msg << ", " << name << ' ' << *v;
  };
  field("D/loss_real", report.d_loss_real);
  field("D/loss_fake", report.d_loss_fake);
  field("D/loss_cls", report.d_loss_cls);
  field("D/loss_gp", report.d_loss_gp);
  field("G/loss_fake", report.g_loss_fake);
  field("G/loss_rec", report.g_loss_rec);
  field("G/loss_cls", report.g_loss_cls);
  msg << ')';
  throw NumericalError(msg.str());
}

void write_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  write_file_bytes(tmp, bytes);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

// ---- checkpoint byte helpers -----------------------------------------------

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_tensor(std::vector<std::uint8_t>& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u64(out, d);
  for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes, std::size_t end) : b_(bytes), end_(end) {}

  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

void copy_into(const Tensor& src, const Tensor& dst, const std::string& name) {
  if (src.shape() != dst.shape()) {
    throw IoError("checkpoint tensor " + name + " has shape " + shape_to_string(src.shape()) + ", expected " +
                  shape_to_string(dst.shape()));
  }
  Tensor target = dst;  // shares storage
  auto out = target.mutable_data();
  std::copy(src.data().begin(), src.data().end(), out.begin());
}

// Fields that change the trajectory; schedule and length may differ on resume.
TrainConfig trajectory_part(TrainConfig c) {
  c.total_iterations = 1;
  c.log_every = 1;
  c.checkpoint_every = 0;
  c.sample_every = 0;
  c.sample_rows = 1;
  return c;
}

constexpr std::size_t kCacheLimitBytes = std::size_t{512} << 20;

}  // namespace

// ---------------------------------------------------------------------------
// config

void TrainConfig::validate() const {
  if (batch_size < 1) throw ContractError("train config: batch_size must be >= 1");
  if (n_critic < 1) throw ContractError("train config: n_critic must be >= 1");
  if (total_iterations < 1) throw ContractError("train config: total_iterations must be >= 1");
  if (log_every < 1) throw ContractError("train config: log_every must be >= 1");
  if (sample_rows < 1) throw ContractError("train config: sample_rows must be >= 1");
  weights.validate();
  adam_g.validate();
  adam_d.validate();
  generator().validate();
  discriminator().validate();
  if (image_size % 4 != 0) throw ContractError("train config: image_size must be divisible by 4");
}

GeneratorConfig TrainConfig::generator() const {
  GeneratorConfig g;
  g.conv_dim = g_conv_dim;
  g.c_dim = kExpressionCount;
  g.repeat_num = g_repeat_num;
  return g;
}

DiscriminatorConfig TrainConfig::discriminator() const {
  DiscriminatorConfig d;
  d.image_size = image_size;
  d.conv_dim = d_conv_dim;
  d.c_dim = kExpressionCount;
  d.repeat_num = d_repeat_num;
  return d;
}

std::vector<std::string> train_config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.emplace_back(f.key);
  return keys;
}

void set_train_config_value(TrainConfig& config, std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(config, key, trim(value));
      return;
    }
  }
  throw ValidationError("unknown config key '" + std::string(key) + "'");
}

std::string format_train_config(const TrainConfig& config) {
  std::string out;
  for (const auto& f : fields()) {
    out += f.key;
    out += " = ";
    out += f.get(config);
    out += '\n';
  }
  return out;
}

TrainConfig parse_train_config(std::string_view text, TrainConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string_view key = trim(line.substr(0, eq));
    std::string_view value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    try {
      set_train_config_value(base, key, value);
    } catch (const ValidationError& e) {
      throw ValidationError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

std::string config_hash(const TrainConfig& config) { return fnv1a_hex(format_train_config(config)); }

// ---------------------------------------------------------------------------
// steps

std::vector<int> sample_target_labels(const std::vector<int>& original, std::mt19937_64& rng, LabelMode mode,
                                      std::size_t c_dim) {
  std::vector<int> out = original;
  if (mode == LabelMode::Permutation) {
    portable_shuffle(out, rng);
  } else {
    if (c_dim == 0) throw ContractError("sample_target_labels: c_dim must be positive");
    for (int& v : out) v = static_cast<int>(uniform_index(rng, c_dim));
  }
  return out;
}

StepOutcome train_step_d(const Tensor& x, const std::vector<int>& labels, const Generator& g, const Discriminator& d,
                         const LossWeights& weights, Adam& opt_d, std::mt19937_64& rng, LabelMode mode) {
  StepOutcome out;
  out.targets = sample_target_labels(labels, rng, mode, d.config().c_dim);
  Tensor x_fake;
  {
    NoGradGuard no_grad;
    x_fake = g.forward(x, out.targets);
  }
  Tensor total;
  try {
    DiscriminatorLoss adv = adv_loss_d(d, x, x_fake, weights, rng);
    Tensor loss_cls = cls_loss(adv.real.cls, labels);
    total = add(adv.total, scalar_mul(loss_cls, weights.lambda_cls));
    out.report = adv.report;
    out.report.d_loss_cls = loss_cls.item();
  } catch (const DomainError& e) {
    throw NumericalError(std::string("discriminator step: non-finite loss (") + e.what() + ")");
  }
  out.total = total.item();
  check_finite(out.report, out.total, "discriminator step");
  opt_d.step(grad(total, d.parameter_tensors()));
  return out;
}

StepOutcome train_step_g(const Tensor& x, const std::vector<int>& labels, const Generator& g, const Discriminator& d,
                         const LossWeights& weights, Adam& opt_g, std::mt19937_64& rng, LabelMode mode) {
  StepOutcome out;
  out.targets = sample_target_labels(labels, rng, mode, g.config().c_dim);
  Tensor total;
  try {
    Tensor x_fake = g.forward(x, out.targets);
    DiscriminatorOutput judged = d.forward(x_fake);
    Tensor loss_fake = neg(mean(judged.src));
    Tensor loss_cls = cls_loss(judged.cls, out.targets);
    Tensor loss_rec = rec_loss(x, g.forward(x_fake, labels));
    total = add(add(loss_fake, scalar_mul(loss_cls, weights.lambda_cls)), scalar_mul(loss_rec, weights.lambda_rec));
    out.report.g_loss_fake = loss_fake.item();
    out.report.g_loss_cls = loss_cls.item();
    out.report.g_loss_rec = loss_rec.item();
  } catch (const DomainError& e) {
    // NaN reaching log() inside the cross-entropy.
    throw NumericalError(std::string("generator step: non-finite loss (") + e.what() + ")");
  }
  out.total = total.item();
  check_finite(out.report, out.total, "generator step");
  opt_g.step(grad(total, g.parameter_tensors()));
  return out;
}

// ---------------------------------------------------------------------------
// log

std::pair<std::string, std::string> format_log_lines(const LogEntry& e) {
  const LossReport& r = e.report;
  auto v = [](const std::optional<double>& x) { return x.value_or(std::nan("")); };
  char d_line[256];
  char g_line[160];
  std::snprintf(d_line, sizeof(d_line),
                "Iteration [%zu/%zu], D/loss_real: %.4f, D/loss_fake: %.4f, D/loss_cls: %.4f, D/loss_gp: %.4f",
                e.iteration, e.total, v(r.d_loss_real), v(r.d_loss_fake), v(r.d_loss_cls), v(r.d_loss_gp));
  std::snprintf(g_line, sizeof(g_line), "G/loss_fake: %.4f, G/loss_rec: %.4f, G/loss_cls: %.4f", v(r.g_loss_fake),
                v(r.g_loss_rec), v(r.g_loss_cls));
  return {d_line, g_line};
}

std::vector<LogEntry> parse_log(std::string_view text) {
  std::vector<LogEntry> out;
  std::optional<LogEntry> pending;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    LogEntry e;
    double a = 0, b = 0, c = 0, d = 0;
    int consumed = -1;
    if (std::sscanf(line.c_str(),
                    "Iteration [%zu/%zu], D/loss_real: %lf, D/loss_fake: %lf, D/loss_cls: %lf, D/loss_gp: %lf%n",
                    &e.iteration, &e.total, &a, &b, &c, &d, &consumed) == 6 &&
        consumed == static_cast<int>(line.size())) {
      e.report.d_loss_real = a;
      e.report.d_loss_fake = b;
      e.report.d_loss_cls = c;
      e.report.d_loss_gp = d;
      pending = e;
      continue;
    }
    consumed = -1;
    if (std::sscanf(line.c_str(), "G/loss_fake: %lf, G/loss_rec: %lf, G/loss_cls: %lf%n", &a, &b, &c, &consumed) ==
            3 &&
        consumed == static_cast<int>(line.size()) && pending) {
      pending->report.g_loss_fake = a;
      pending->report.g_loss_rec = b;
      pending->report.g_loss_cls = c;
      out.push_back(*pending);
      pending.reset();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// trainer

Trainer::Trainer(TrainConfig config, DatasetManifest data)
    : config_((config.validate(), std::move(config))),
      data_(std::move(data)),
      g_(build_generator(config_.generator(), stream_seed(config_.seed, Stream::Generator))),
      d_(build_discriminator(config_.discriminator(), stream_seed(config_.seed, Stream::Discriminator))),
      opt_g_(g_.parameter_tensors(), config_.adam_g),
      opt_d_(d_.parameter_tensors(), config_.adam_d),
      rng_(stream_seed(config_.seed, Stream::Training)) {
  if (data_.empty()) throw ContractError("trainer: dataset is empty");
  const std::size_t n = data_.records.size();
  const std::size_t per_image = 3 * config_.image_size * config_.image_size;
  if (n * per_image * sizeof(double) <= kCacheLimitBytes) {
    cache_.reserve(n * per_image);
    constexpr std::size_t kChunk = 64;
    for (std::size_t start = 0; start < n; start += kChunk) {
      std::vector<std::size_t> idx;
      for (std::size_t i = start; i < std::min(n, start + kChunk); ++i) idx.push_back(i);
      Batch b = load_batch(data_, idx, config_.image_size);
      cache_.insert(cache_.end(), b.images.data().begin(), b.images.data().end());
    }
  }
  shuffle_epoch();
}

void Trainer::shuffle_epoch() {
  order_.resize(data_.records.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  std::mt19937_64 rng(derive_seed(stream_seed(config_.seed, Stream::DataOrder), epoch_));
  portable_shuffle(order_, rng);
}

Batch Trainer::next_batch() {
  std::vector<std::size_t> idx;
  idx.reserve(config_.batch_size);
  for (std::size_t k = 0; k < config_.batch_size; ++k) {
    if (cursor_ == order_.size()) {
      ++epoch_;
      cursor_ = 0;
      shuffle_epoch();
    }
    idx.push_back(order_[cursor_++]);
  }
  if (cache_.empty()) return load_batch(data_, idx, config_.image_size);

  const std::size_t s = config_.image_size;
  const std::size_t per_image = 3 * s * s;
  Batch b;
  b.images = Tensor({idx.size(), 3, s, s});
  auto dst = b.images.mutable_data();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    std::copy_n(cache_.begin() + static_cast<std::ptrdiff_t>(idx[k] * per_image), per_image,
                dst.begin() + static_cast<std::ptrdiff_t>(k * per_image));
    b.labels.push_back(domain_index(data_.records[idx[k]].expression));
  }
  return b;
}

LogEntry Trainer::step() {
  if (iteration_ >= config_.total_iterations) {
    throw ContractError("trainer: already at iteration " + std::to_string(iteration_) + " of " +
                        std::to_string(config_.total_iterations));
  }
  LogEntry entry;
  entry.iteration = iteration_ + 1;
  entry.total = config_.total_iterations;
  try {
    Batch batch;
    for (std::size_t k = 0; k < config_.n_critic; ++k) {
      batch = next_batch();
      StepOutcome d = train_step_d(batch.images, batch.labels, g_, d_, config_.weights, opt_d_, rng_,
                                   config_.label_mode);
      ++counters_.d_updates;
      entry.report.d_loss_real = d.report.d_loss_real;
      entry.report.d_loss_fake = d.report.d_loss_fake;
      entry.report.d_loss_cls = d.report.d_loss_cls;
      entry.report.d_loss_gp = d.report.d_loss_gp;
    }
    StepOutcome g = train_step_g(batch.images, batch.labels, g_, d_, config_.weights, opt_g_, rng_,
                                 config_.label_mode);
    ++counters_.g_updates;
    entry.report.g_loss_fake = g.report.g_loss_fake;
    entry.report.g_loss_rec = g.report.g_loss_rec;
    entry.report.g_loss_cls = g.report.g_loss_cls;
  } catch (const NumericalError& e) {
    throw NumericalError("iteration " + std::to_string(entry.iteration) + ": " + e.what());
  }
  ++iteration_;
  return entry;
}

void Trainer::set_total_iterations(std::size_t total) {
  if (total < 1) throw ContractError("trainer: total_iterations must be >= 1");
  config_.total_iterations = total;
}

std::vector<std::uint8_t> Trainer::checkpoint_bytes() const {
  std::ostringstream rng_text;
  rng_text << rng_;

  nlohmann::json header;
  header["config"] = format_train_config(config_);
  header["config_hash"] = config_hash(config_);
  header["iteration"] = iteration_;
  header["seed"] = config_.seed;
  header["rng_state"] = rng_text.str();
  header["d_updates"] = counters_.d_updates;
  header["g_updates"] = counters_.g_updates;
  header["epoch"] = epoch_;
  header["cursor"] = cursor_;
  header["adam_g_step"] = opt_g_.state().step;
  header["adam_d_step"] = opt_d_.state().step;

  std::vector<std::pair<std::string, const Tensor*>> blocks;
  auto add_net = [&](const std::string& prefix, const Network& net) {
    for (const auto& p : net.parameters()) blocks.emplace_back(prefix + p.name, &p.value);
  };
  auto add_moments = [&](const std::string& prefix, const Network& net, const Adam& opt) {
    const auto& params = net.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      blocks.emplace_back(prefix + "m/" + params[k].name, &opt.state().first_moment[k]);
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      blocks.emplace_back(prefix + "v/" + params[k].name, &opt.state().second_moment[k]);
    }
  };
  add_net("G/", g_);
  add_net("D/", d_);
  add_moments("opt_g/", g_, opt_g_);
  add_moments("opt_d/", d_, opt_d_);
  header["tensor_count"] = blocks.size();

  const std::string header_text = header.dump();
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u64(out, header_text.size());
  out.insert(out.end(), header_text.begin(), header_text.end());
  for (const auto& [name, t] : blocks) put_tensor(out, name, *t);
  put_u64(out, fnv1a(out.data(), out.size()));
  return out;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const { write_atomic(path, checkpoint_bytes()); }

CheckpointFile parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) + 4 + 8 + 8 ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw IoError("not a checkpoint (bad magic)");
  }
  const std::size_t body_end = bytes.size() - 8;
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes[body_end + i]) << (8 * i);
  if (stored != fnv1a(bytes.data(), body_end)) throw IoError("checkpoint checksum mismatch");
  Reader r(bytes, body_end);
  r.str(sizeof(kCheckpointMagic));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t header_len = r.u64();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.str(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  CheckpointFile ck;
  try {
    ck.config = parse_train_config(header.at("config").get<std::string>());
    ck.config_hash = header.at("config_hash").get<std::string>();
    ck.iteration = header.at("iteration").get<std::uint64_t>();
    ck.rng_state = header.at("rng_state").get<std::string>();
    ck.counters.d_updates = header.at("d_updates").get<std::uint64_t>();
    ck.counters.g_updates = header.at("g_updates").get<std::uint64_t>();
    ck.epoch = header.at("epoch").get<std::uint64_t>();
    ck.cursor = header.at("cursor").get<std::uint64_t>();
    ck.adam_g_step = header.at("adam_g_step").get<std::uint64_t>();
    ck.adam_d_step = header.at("adam_d_step").get<std::uint64_t>();
    const auto count = header.at("tensor_count").get<std::uint64_t>();
    for (std::uint64_t k = 0; k < count; ++k) {
      std::string name = r.str(r.u32());
      const std::uint32_t rank = r.u32();
      Shape shape(rank);
      for (auto& d : shape) d = static_cast<std::size_t>(r.u64());
      const std::size_t n = shape_numel(shape);
      r.need(n * 8);
      std::vector<double> values(n);
      for (auto& v : values) v = std::bit_cast<double>(r.u64());
      ck.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint header: ") + e.what());
  } catch (const ValidationError& e) {
    throw IoError(std::string("checkpoint config: ") + e.what());
  }
  if (!r.done()) throw IoError("checkpoint has trailing bytes");
  if (config_hash(ck.config) != ck.config_hash) throw IoError("checkpoint config hash mismatch");
  return ck;
}

const Tensor& CheckpointFile::tensor(std::string_view name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw IoError("checkpoint has no tensor '" + std::string(name) + "'");
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("cannot read " + path.string());
  return bytes;
}

Generator load_generator(const CheckpointFile& ckpt) {
  Generator g = build_generator(ckpt.config.generator(), 0);
  for (const auto& p : g.parameters()) copy_into(ckpt.tensor("G/" + p.name), p.value, "G/" + p.name);
  return g;
}

Trainer Trainer::from_checkpoint(const std::vector<std::uint8_t>& bytes, DatasetManifest data) {
  CheckpointFile ck = parse_checkpoint(bytes);
  Trainer t(ck.config, std::move(data));
  for (const auto& p : t.g_.parameters()) copy_into(ck.tensor("G/" + p.name), p.value, "G/" + p.name);
  for (const auto& p : t.d_.parameters()) copy_into(ck.tensor("D/" + p.name), p.value, "D/" + p.name);
  auto load_moments = [&](const std::string& prefix, const Network& net, Adam& opt, std::uint64_t step) {
    const auto& params = net.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      copy_into(ck.tensor(prefix + "m/" + params[k].name), opt.state().first_moment[k], prefix + "m/" + params[k].name);
      copy_into(ck.tensor(prefix + "v/" + params[k].name), opt.state().second_moment[k],
                prefix + "v/" + params[k].name);
    }
    opt.state().step = step;
  };
  load_moments("opt_g/", t.g_, t.opt_g_, ck.adam_g_step);
  load_moments("opt_d/", t.d_, t.opt_d_, ck.adam_d_step);
  std::istringstream rng_text(ck.rng_state);
  rng_text >> t.rng_;
  if (!rng_text) throw IoError("checkpoint rng state is unreadable");
  t.iteration_ = static_cast<std::size_t>(ck.iteration);
  t.counters_ = ck.counters;
  t.epoch_ = ck.epoch;
  t.shuffle_epoch();
  if (ck.cursor > t.order_.size()) throw IoError("checkpoint data cursor exceeds the dataset size");
  t.cursor_ = static_cast<std::size_t>(ck.cursor);
  return t;
}

Trainer Trainer::from_checkpoint(const std::filesystem::path& path, DatasetManifest data) {
  return from_checkpoint(read_file_bytes(path), std::move(data));
}

// ---------------------------------------------------------------------------
// run

std::vector<Tensor> default_sample_inputs(const DatasetManifest& data, std::size_t rows, std::size_t image_size) {
  std::vector<std::size_t> idx;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < data.records.size() && idx.size() < rows; ++i) {
    if (seen.insert(data.records[i].video_id).second) idx.push_back(i);
  }
  std::vector<Tensor> out;
  if (idx.empty()) return out;
  Batch b = load_batch(data, idx, image_size);
  for (std::size_t k = 0; k < idx.size(); ++k) out.push_back(slice(b.images, 0, k, 1));
  return out;
}

RunResult run(const TrainConfig& config, const DatasetManifest& data, const RunOptions& options) {
  config.validate();
  if (data.empty()) throw ContractError("run: dataset is empty");

  Trainer trainer = [&] {
    if (!options.resume) return Trainer(config, data);
    Trainer t = Trainer::from_checkpoint(*options.resume, data);
    if (format_train_config(trajectory_part(t.config())) != format_train_config(trajectory_part(config))) {
      throw ContractError("run: checkpoint " + options.resume->string() + " was written with a different config");
    }
    t.set_total_iterations(config.total_iterations);
    return t;
  }();
  const TrainConfig& cfg = trainer.config();

  const std::vector<Tensor> inputs = options.sample_inputs.empty()
                                         ? default_sample_inputs(data, cfg.sample_rows, cfg.image_size)
                                         : options.sample_inputs;

  const bool files = !options.out_dir.empty();
  std::ofstream log_file;
  if (files) {
    std::filesystem::create_directories(options.out_dir / "checkpoints");
    std::filesystem::create_directories(options.out_dir / "samples");
    const auto mode = options.resume ? std::ios::app : std::ios::trunc;
    log_file.open(options.out_dir / "train.log", std::ios::out | mode);
    if (!log_file) throw IoError("cannot open " + (options.out_dir / "train.log").string());
  }
  auto emit = [&](const std::string& line) {
    if (options.log_sink) {
      options.log_sink(line);
    } else {
      std::cout << line << '\n';
    }
    if (files) {
      log_file << line << '\n';
      log_file.flush();
    }
  };

  RunResult result;
  auto tag = [](std::size_t it) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "iter_%06zu", it);
    return std::string(buf);
  };
  auto write_grid = [&](std::size_t it) {
    auto png = grid_png(compose_grid(inputs, trainer.generator(), kExpressionCount));
    if (files) {
      const auto path = options.out_dir / "samples" / (tag(it) + ".png");
      write_atomic(path, png);
      result.grids.push_back(path);
    }
    return png;
  };
  auto write_ckpt = [&](std::size_t it) {
    auto bytes = trainer.checkpoint_bytes();
    if (files) {
      const auto path = options.out_dir / "checkpoints" / (tag(it) + ".ckpt");
      write_atomic(path, bytes);
      result.checkpoints.push_back(path);
    }
    return bytes;
  };

  while (trainer.iteration() < cfg.total_iterations) {
    LogEntry e = trainer.step();
    result.history.push_back(e);
    const std::size_t it = e.iteration;
    const bool last = it == cfg.total_iterations;
    if (it % cfg.log_every == 0 || last) {
      auto [d_line, g_line] = format_log_lines(e);
      emit(d_line);
      emit(g_line);
    }
    if (last) {
      result.final_checkpoint_bytes = write_ckpt(it);
      if (files) result.final_checkpoint = result.checkpoints.back();
      if (!inputs.empty()) result.final_grid_png = write_grid(it);
    } else {
      if (cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0) write_ckpt(it);
      if (cfg.sample_every > 0 && it % cfg.sample_every == 0 && !inputs.empty()) write_grid(it);
    }
  }
  result.counters = trainer.counters();
  return result;
}

// ---------------------------------------------------------------------------
// split

std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest, double ratio,
                                                          std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ContractError("split: ratio must lie strictly between 0 and 1");
  std::vector<std::string> ids = manifest.identities();
  if (ids.size() < 2) {
    throw ContractError("split: need at least 2 identities, manifest has " + std::to_string(ids.size()));
  }
  std::mt19937_64 rng(seed);
  portable_shuffle(ids, rng);
  const auto n = static_cast<long long>(ids.size());
  const long long n_train = std::clamp(std::llround(ratio * static_cast<double>(n)), 1LL, n - 1);
  const std::set<std::string> train_ids(ids.begin(), ids.begin() + n_train);

  std::pair<DatasetManifest, DatasetManifest> out;
  out.first.root = manifest.root;
  out.second.root = manifest.root;
  for (const auto& r : manifest.records) {
    (train_ids.count(r.video_id) ? out.first : out.second).records.push_back(r);
  }
  return out;
}

}  // namespace stargan
