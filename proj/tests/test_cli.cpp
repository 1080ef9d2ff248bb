#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "mimlab/checkpoint.hpp"
#include "mimlab/config.hpp"
#include "mimlab/image.hpp"

using namespace mimlab;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string output;
};

fs::path work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "mimlab_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

Result cli(const std::string& args) {
  const fs::path log = work_dir() / "last_output.txt";
  const std::string cmd = std::string("\"") + MIMLAB_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

TrainConfig tiny_config() {
  TrainConfig c;
  c.image_size = 16;
  c.encoder.image_size = 16;
  c.encoder.patch_size = 4;
  c.encoder.embed_dim = 8;
  c.encoder.depth = 1;
  c.encoder.num_heads = 2;
  c.mask = {MaskStrategy::random, 4, 0.5};
  c.target = {TargetKind::l1, 16, 8, 4, std::nullopt};
  c.data = {"synthetic", 5, 8};
  c.eval = {"synthetic", 6, 8};
  c.batch_size = 4;
  c.steps = 3;
  c.probe.steps = 10;
  c.finetune.epochs = 1;
  c.finetune.batch_size = 4;
  return c;
}

fs::path write_config(const std::string& name, const TrainConfig& c) {
  const auto path = work_dir() / name;
  spit(path, render_config(c));
  return path;
}

std::string drop_line(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line, out;
  while (std::getline(in, line))
    if (line.rfind(key + " =", 0) != 0) out += line + "\n";
  return out;
}

}  // namespace

TEST_CASE("config writes the defaults") {
  const auto path = work_dir() / "default.cfg";
  const auto r = cli("config --out " + q(path));
  CHECK(r.code == 0);
  CHECK(load_config(path) == TrainConfig{});
}

TEST_CASE("config errors exit 1 and name the problem") {
  const std::string text = render_config(tiny_config());
  const auto missing = work_dir() / "missing.cfg";
  spit(missing, drop_line(text, "mask.ratio"));
  auto r = cli("pretrain --config " + q(missing) + " --out " + q(work_dir() / "never"));
  CHECK(r.code == 1);
  CHECK(r.output.find("mask.ratio") != std::string::npos);

  const auto unknown = work_dir() / "unknown.cfg";
  spit(unknown, "seed = 0\nmask.shape = round\n" + drop_line(text, "seed"));
  r = cli("pretrain --config " + q(unknown) + " --out " + q(work_dir() / "never"));
  CHECK(r.code == 1);
  CHECK(r.output.find("line 2") != std::string::npos);
  CHECK(r.output.find("mask.shape") != std::string::npos);

  r = cli("pretrain --config " + q(work_dir() / "absent.cfg") + " --out " + q(work_dir() / "never"));
  CHECK(r.code == 1);
  CHECK_FALSE(fs::exists(work_dir() / "never"));
}

TEST_CASE("usage errors exit 1") {
  CHECK(cli("").code == 1);
  CHECK(cli("no-such-command").code == 1);
  CHECK(cli("mask-sweep --out " + q(work_dir() / "s.csv") + " --strategies \"\"").code == 1);
  CHECK(cli("mask-sweep --out " + q(work_dir() / "s.csv") + " --strategies diagonal").code == 1);
}

TEST_CASE("mask-sweep is reproducible") {
  const std::string args = " --strategies random,square --patches 8,16 --ratios 0.3,0.6 --seeds 4 --image-size 64";
  const auto a = work_dir() / "sweep_a.csv", b = work_dir() / "sweep_b.csv";
  REQUIRE(cli("mask-sweep --out " + q(a) + args).code == 0);
  REQUIRE(cli("mask-sweep --out " + q(b) + args).code == 0);
  const auto text = slurp(a);
  CHECK(text == slurp(b));
  CHECK(text.rfind("strategy,patch,ratio,avgdist_mean,avgdist_std\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 9);
}

TEST_CASE("pretrain, probe, finetune and visualize end to end") {
  const auto cfg = write_config("tiny.cfg", tiny_config());
  const auto run = work_dir() / "run";
  fs::remove_all(run);
  auto r = cli("pretrain --config " + q(cfg) + " --out " + q(run));
  REQUIRE(r.code == 0);
  CHECK(fs::exists(run / "final.ckpt"));
  const auto metrics = slurp(run / "metrics.csv");
  CHECK(metrics.rfind("step,lr,loss\n", 0) == 0);
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 4);

  const auto results = work_dir() / "results.csv";
  fs::remove(results);
  CHECK(cli("probe --config " + q(cfg) + " --ckpt " + q(run / "final.ckpt") + " --out " + q(results)).code == 0);
  CHECK(cli("probe --config " + q(cfg) + " --ckpt random-init --out " + q(results)).code == 0);
  CHECK(cli("finetune --config " + q(cfg) + " --ckpt " + q(run / "final.ckpt") + " --out " + q(results)).code == 0);
  const auto rows = slurp(results);
  CHECK(rows.rfind("protocol,seed,block,accuracy\n", 0) == 0);
  CHECK(std::count(rows.begin(), rows.end(), '\n') == 4);

  SUBCASE("an all-white drawing masks nothing, so the recovery is the original") {
    Image white(16, 16);
    white.rgb().data().setOnes();
    write_ppm(work_dir() / "white.ppm", white);
    const auto out = work_dir() / "triptych.ppm";
    REQUIRE(cli("visualize --ckpt " + q(run / "final.ckpt") + " --index 0 --mask " + q(work_dir() / "white.ppm") +
                " --out " + q(out))
                .code == 0);
    const Image t = load_ppm(out);
    REQUIRE(t.width() == 48);
    for (Index ch = 0; ch < 3; ++ch)
      for (Index y = 0; y < 16; ++y)
        for (Index x = 0; x < 16; ++x) {
          CHECK(t.at(ch, y, x) == t.at(ch, y, 16 + x));
          CHECK(t.at(ch, y, x) == t.at(ch, y, 32 + x));
        }
  }

  SUBCASE("generated masks black out the middle pane") {
    const auto out = work_dir() / "random.ppm";
    REQUIRE(cli("visualize --ckpt " + q(run / "final.ckpt") + " --mask random --ratio 0.5 --out " + q(out)).code == 0);
    const Image t = load_ppm(out);
    int black = 0;
    for (Index y = 0; y < 16; ++y)
      for (Index x = 16; x < 32; ++x) black += t.at(0, y, x) == 0.0f && t.at(1, y, x) == 0.0f && t.at(2, y, x) == 0.0f;
    CHECK(black >= 128);
  }

  SUBCASE("resuming with an edited config needs --force") {
    TrainConfig other = tiny_config();
    other.steps = 5;
    const auto cfg2 = write_config("tiny_more.cfg", other);
    const auto ckpt = run / "final.ckpt";
    r = cli("pretrain --config " + q(cfg2) + " --out " + q(work_dir() / "run2") + " --resume " + q(ckpt));
    CHECK(r.code == 1);
    CHECK(r.output.find("--force") != std::string::npos);
    CHECK(cli("pretrain --config " + q(cfg2) + " --out " + q(work_dir() / "run2") + " --resume " + q(ckpt) + " --force")
              .code == 0);
  }

  SUBCASE("a truncated checkpoint is reported, not loaded") {
    const auto bytes = slurp(run / "final.ckpt");
    spit(work_dir() / "cut.ckpt", bytes.substr(0, bytes.size() / 2));
    r = cli("probe --config " + q(cfg) + " --ckpt " + q(work_dir() / "cut.ckpt") + " --out " + q(results));
    CHECK(r.code != 0);
    CHECK(r.output.find("offset") != std::string::npos);
  }
}

TEST_CASE("visualize refuses classification checkpoints") {
  TrainConfig c = tiny_config();
  c.target.kind = TargetKind::bins;
  c.steps = 1;
  const auto cfg = write_config("bins.cfg", c);
  const auto run = work_dir() / "bins_run";
  REQUIRE(cli("pretrain --config " + q(cfg) + " --out " + q(run)).code == 0);
  const auto r = cli("visualize --ckpt " + q(run / "final.ckpt") + " --out " + q(work_dir() / "bins.ppm"));
  CHECK(r.code == 1);
  CHECK(r.output.find("bins") != std::string::npos);
}
