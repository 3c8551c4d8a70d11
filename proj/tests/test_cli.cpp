#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "doctest.h"
#include "stargan/dataset.hpp"
#include "stargan/imaging.hpp"
#include "stargan/trainer.hpp"
#include "temp_dir.hpp"

#ifndef STARGAN_DESK_EXE
#error "STARGAN_DESK_EXE must point at the CLI binary"
#endif

using namespace stargan;
using stargan::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

// Runs the CLI with `args` (already quoted where needed) in a clean seed
// environment plus the `env` assignments.
Result cli(const std::string& args, const std::string& env = "") {
  static TempDir io("cli_io");
  static int counter = 0;
  const fs::path out = io / ("out" + std::to_string(counter));
  const fs::path err = io / ("err" + std::to_string(counter++));
  const std::string cmd = "env -u STARGAN_DESK_SEED " + env + (env.empty() ? "" : " ") + quote(STARGAN_DESK_EXE) +
                          " " + args + " >" + quote(out.string()) + " 2>" +
                          quote(err.string());
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::size_t count_pngs(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) n += e.path().extension() == ".png";
  return n;
}

void blank_corpus(const fs::path& dir, std::size_t n) {
  DatasetManifest m;
  m.root = dir;
  for (std::size_t i = 0; i < n; ++i) {
    AnnotationRecord r;
    r.video_id = "blank" + std::to_string(i);
    r.frame_path = r.video_id + "/f0.png";
    r.expression = ExpressionLabel::Neutral;
    fs::create_directories(dir / r.video_id);
    write_png(dir / r.frame_path, Image(48, 48, static_cast<std::uint8_t>(40 * i)));
    m.records.push_back(r);
  }
  save_manifest(m, dir / "manifest.csv");
}

}  // namespace

TEST_CASE("help exits 0 for the tool and every subcommand") {
  CHECK(cli("--help").code == 0);
  for (const char* sub : {"synth-data", "preprocess", "train", "sample", "count-params", "split"}) {
    Result r = cli(std::string(sub) + " --help");
    CAPTURE(sub);
    CHECK(r.code == 0);
    CHECK(r.out.find("--help") != std::string::npos);
  }
}

TEST_CASE("usage errors exit 2 with a usage message") {
  TempDir d("cli_usage");
  Result r = cli("synth-data --identities 0 --frames 1 --size 32 --seed 1 --out " + quote(d.path().string()));
  CHECK(r.code == 2);
  CHECK(r.err.find("--identities") != std::string::npos);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(cli("").code == 2);
  CHECK(cli("no-such-command").code == 2);
  CHECK(cli("split --manifest x --ratio 1.5").code == 2);
  CHECK(cli("preprocess --in x --out y --scorer magic").code == 2);
}

TEST_CASE("count-params prints both totals") {
  Result r = cli("count-params");
  CHECK(r.code == 0);
  CHECK(r.out == "G: 8436800\nD: 44735424\n");

  TempDir d("cli_count");
  std::ofstream(d / "c.txt") << "image_size = 128\n";
  r = cli("count-params --config " + quote((d / "c.txt").string()));
  CHECK(r.out == "G: 8436800\nD: 44778432\n");
  std::ofstream(d / "bad.txt") << "image_sise = 128\n";
  CHECK(cli("count-params --config " + quote((d / "bad.txt").string())).code == 2);
}

TEST_CASE("synth-data writes 49 PNGs and a stable manifest") {
  TempDir a("cli_synth_a"), b("cli_synth_b");
  Result r = cli("synth-data --identities 7 --frames 1 --size 32 --seed 1 --out " + quote(a.path().string()));
  REQUIRE(r.code == 0);
  CHECK(r.out == (a / "manifest.csv").string() + "\n");
  CHECK(count_pngs(a.path()) == 49);
  CHECK(fs::exists(a / "synth-data.run.json"));
  const std::string first = slurp(a / "manifest.csv");

  // Same invocation again into the same directory, then via the seed variable.
  REQUIRE(cli("synth-data --identities 7 --frames 1 --size 32 --seed 1 --out " + quote(a.path().string())).code == 0);
  CHECK(slurp(a / "manifest.csv") == first);
  REQUIRE(cli("synth-data --identities 7 --frames 1 --size 32 --out " + quote(b.path().string()),
              "STARGAN_DESK_SEED=1")
              .code == 0);
  CHECK(slurp(b / "manifest.csv") == first);
  CHECK(slurp(b / "id003" / "happy_000.png") == slurp(a / "id003" / "happy_000.png"));
}

TEST_CASE("split on a 10-identity manifest gives 9 and 1") {
  TempDir d("cli_split");
  REQUIRE(cli("synth-data --identities 10 --frames 1 --size 16 --seed 2 --out " + quote(d.path().string())).code == 0);
  Result r = cli("split --manifest " + quote((d / "manifest.csv").string()) + " --ratio 0.9 --seed 3");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("train: 9 identities, 63 frames") != std::string::npos);
  CHECK(r.out.find("test: 1 identities, 7 frames") != std::string::npos);
  DatasetManifest train = load_manifest(d / "train_manifest.csv");
  DatasetManifest test = load_manifest(d / "test_manifest.csv");
  auto ti = train.identities();
  std::set<std::string> ids(ti.begin(), ti.end());
  for (const auto& id : test.identities()) CHECK(ids.count(id) == 0);
  CHECK(fs::exists(train.frame(0)));

  // Into another directory: frame paths are rewritten and still resolve.
  TempDir other("cli_split_out");
  REQUIRE(cli("split --manifest " + quote((d / "manifest.csv").string()) + " --seed 3 --out " +
              quote(other.path().string()))
              .code == 0);
  DatasetManifest moved = load_manifest(other / "train_manifest.csv");
  CHECK(moved.records.size() == 63);
  CHECK(fs::exists(moved.frame(0)));
  CHECK(moved.identities() == train.identities());

  TempDir one("cli_split_one");
  REQUIRE(cli("synth-data --identities 1 --frames 1 --size 16 --seed 2 --out " + quote(one.path().string())).code == 0);
  CHECK(cli("split --manifest " + quote((one / "manifest.csv").string())).code == 2);
  CHECK(cli("split --manifest " + quote((one / "missing.csv").string())).code == 3);
}

TEST_CASE("preprocess detects every sprite and nothing on a blank corpus") {
  TempDir src("cli_pre_src"), out("cli_pre_out"), blank("cli_pre_blank"), blank_out("cli_pre_blank_out");
  REQUIRE(cli("synth-data --identities 2 --frames 1 --size 64 --seed 4 --out " + quote(src.path().string())).code == 0);
  Result r = cli("preprocess --in " + quote(src.path().string()) + " --out " + quote(out.path().string()) +
                 " --size 64 --scorer template --debug");
  REQUIRE(r.code == 0);
  DatasetManifest in = load_manifest(src / "manifest.csv");
  DatasetManifest aligned = load_manifest(out / "manifest.csv");
  CHECK(aligned.records.size() == in.records.size());
  CHECK(aligned.records == in.records);
  CHECK(r.err.find("detected faces in 14 of 14 frames") != std::string::npos);
  Image face = read_png(aligned.frame(0));
  CHECK(face.width == 64);
  CHECK(face.height == 64);
  std::istringstream debug(slurp(out / "debug.jsonl"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(debug, line)) {
    ++lines;
    CHECK(line.find("\"detections\":[{") != std::string::npos);
  }
  CHECK(lines == 14);

  blank_corpus(blank.path(), 3);
  r = cli("preprocess --in " + quote(blank.path().string()) + " --out " + quote(blank_out.path().string()));
  REQUIRE(r.code == 0);
  CHECK(load_manifest(blank_out / "manifest.csv").empty());

  TempDir rejected("cli_pre_reject");
  r = cli("preprocess --in " + quote(src.path().string()) + " --out " + quote(rejected.path().string()) +
          " --scorer reject");
  REQUIRE(r.code == 0);
  CHECK(load_manifest(rejected / "manifest.csv").empty());

  CHECK(cli("preprocess --in /nonexistent/dir --out " + quote(out.path().string())).code == 3);
  fs::remove(src / "id000" / "angry_000.png");
  CHECK(cli("preprocess --in " + quote(src.path().string()) + " --out " + quote(out.path().string())).code == 3);
}

TEST_CASE("train writes checkpoints and grids; sample reads them back") {
  TempDir data("cli_train_data"), run_dir("cli_train_run");
  REQUIRE(cli("synth-data --identities 3 --frames 1 --size 16 --seed 5 --out " + quote(data.path().string())).code ==
          0);
  std::ofstream(data / "smoke.txt") << "# tiny\nbatch_size = 2\nimage_size = 8\ng_conv_dim = 4\ng_repeat_num = 1\n"
                                       "d_conv_dim = 4\nd_repeat_num = 1\ntotal_iterations = 3\nlog_every = 1\n"
                                       "checkpoint_every = 2\nsample_every = 2\nseed = 9\n";
  Result r = cli("train --manifest " + quote((data / "manifest.csv").string()) + " --config " +
                 quote((data / "smoke.txt").string()) + " --out " + quote(run_dir.path().string()));
  REQUIRE(r.code == 0);
  CHECK(parse_log(r.out).size() == 3);
  CHECK(slurp(run_dir / "train.log") == r.out);
  CHECK(fs::exists(run_dir / "checkpoints" / "iter_000002.ckpt"));
  CHECK(fs::exists(run_dir / "checkpoints" / "iter_000003.ckpt"));
  CHECK(fs::exists(run_dir / "samples" / "iter_000002.png"));
  CHECK(fs::exists(run_dir / "train.run.json"));
  CheckpointFile ck = parse_checkpoint(read_file_bytes(run_dir / "checkpoints" / "iter_000003.ckpt"));
  CHECK(ck.config.seed == 9);
  CHECK(ck.counters.g_updates == 3);

  // Flag beats file beats environment.
  TempDir env_run("cli_train_env");
  r = cli("train --manifest " + quote((data / "manifest.csv").string()) + " --config " +
              quote((data / "smoke.txt").string()) + " --iterations 1 --seed 4 --out " + quote(env_run.path().string()),
          "STARGAN_DESK_SEED=77");
  REQUIRE(r.code == 0);
  CHECK(parse_checkpoint(read_file_bytes(env_run / "checkpoints" / "iter_000001.ckpt")).config.seed == 4);
  r = cli("train --manifest " + quote((data / "manifest.csv").string()) + " --config " +
              quote((data / "smoke.txt").string()) + " --iterations 1 --out " + quote(env_run.path().string()),
          "STARGAN_DESK_SEED=77");
  CHECK(parse_checkpoint(read_file_bytes(env_run / "checkpoints" / "iter_000001.ckpt")).config.seed == 9);

  TempDir grid_dir("cli_sample");
  r = cli("sample --checkpoint " + quote((run_dir / "checkpoints" / "iter_000003.ckpt").string()) + " --inputs " +
          quote((data / "id001").string()) + " --out " + quote((grid_dir / "grid.png").string()) + " --rows 3");
  REQUIRE(r.code == 0);
  Image grid = read_png(grid_dir / "grid.png");
  CHECK(grid.width == kGridColumns * 8 + (kGridColumns + 1) * kGridGutter);
  CHECK(grid.height == kHeaderBand + 3 * 8 + 4 * kGridGutter);

  CHECK(cli("train --manifest " + quote((data / "missing.csv").string()) + " --out " + quote(run_dir.path().string()))
            .code == 3);
  CHECK(cli("train --manifest " + quote((data / "manifest.csv").string()) + " --set batch_size=0 --out " +
            quote(run_dir.path().string()))
            .code == 2);
  CHECK(cli("sample --checkpoint " + quote((data / "manifest.csv").string()) + " --inputs " +
            quote(data.path().string()) + " --out " + quote((grid_dir / "x.png").string()))
            .code == 3);
}

TEST_CASE("diverging training exits 4") {
  TempDir data("cli_nan_data"), run_dir("cli_nan_run");
  REQUIRE(cli("synth-data --identities 2 --frames 1 --size 16 --seed 5 --out " + quote(data.path().string())).code ==
          0);
  Result r = cli("train --manifest " + quote((data / "manifest.csv").string()) +
                 " --set batch_size=2 --set image_size=8 --set g_conv_dim=4 --set g_repeat_num=1"
                 " --set d_conv_dim=4 --set d_repeat_num=1 --set total_iterations=20 --set d_lr=1e300"
                 " --set g_lr=1e300 --set lambda_gp=1e300 --out " +
                 quote(run_dir.path().string()));
  CHECK(r.code == 4);
  CHECK(r.err.find("non-finite") != std::string::npos);
}
