#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "mimlab/corpus.hpp"
#include "mimlab/error.hpp"
#include "mimlab/trainer.hpp"

using namespace mimlab;
namespace fs = std::filesystem;

namespace {

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
  c.data = {"synthetic", 5, 10};
  c.batch_size = 4;
  c.steps = 6;
  return c;
}

Dataset tiny_data(const TrainConfig& c) { return load_source(c.data, c.image_size, c.num_classes); }

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

bool same_params(const Model& a, const Model& b) {
  const auto pa = a.named(), pb = b.named();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!(*pa[i].second == *pb[i].second)) return false;
  return true;
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("mimlab_test_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("two runs with the same seed give identical loss sequences") {
  const auto c = tiny_config();
  const auto data = tiny_data(c);
  auto s1 = init_training(c, data);
  auto s2 = init_training(c, data);
  const auto r1 = pretrain_run(s1, data);
  const auto r2 = pretrain_run(s2, data);
  REQUIRE(r1.size() == 6);
  for (std::size_t i = 0; i < r1.size(); ++i) {
    CHECK(r1[i].loss == r2[i].loss);
    CHECK(r1[i].lr == r2[i].lr);
  }
  CHECK(same_params(s1.model, s2.model));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto c = tiny_config();
  const auto data = tiny_data(c);
  auto state = init_training(c, data);
  const Model before = state.model;
  const std::vector<std::uint32_t> idx{0, 1, 2, 3};
  pretrain_step(state, make_batch(c, data, idx, 0), 0.0);
  CHECK(same_params(before, state.model));
  CHECK(state.step == 1);
}

TEST_CASE("step-0 loss of a zero head is the mean absolute masked target") {
  auto c = tiny_config();
  const auto data = tiny_data(c);
  auto state = init_training(c, data);
  state.model.params.head.w1.data().setZero();
  state.model.params.head.b1.data().setZero();
  const std::vector<std::uint32_t> idx{0, 1, 2};
  const StepBatch batch = make_batch(c, data, idx, 0);

  double total = 0.0;
  long count = 0;
  for (std::size_t b = 0; b < batch.raw.size(); ++b) {
    const auto pixels = batch.masks[b].pixel_mask();
    for (Index ch = 0; ch < 3; ++ch)
      for (Index p = 0; p < 16 * 16; ++p)
        if (pixels[static_cast<std::size_t>(p)]) {
          total += std::fabs(batch.raw[b].at(ch, p / 16, p % 16));
          ++count;
        }
  }
  const double loss = pretrain_step(state, batch, 1e-3);
  CHECK(loss == doctest::Approx(total / static_cast<double>(count)).epsilon(1e-6));
}

TEST_CASE("an epoch visits every image once in ceil(n / b) steps") {
  auto c = tiny_config();
  c.steps = 0;
  c.epochs = 2;
  const auto data = tiny_data(c);
  CHECK(c.total_steps(data.size()) == 6);
  auto state = init_training(c, data);
  for (int epoch = 0; epoch < 2; ++epoch) {
    std::multiset<std::uint32_t> seen;
    std::vector<std::size_t> sizes;
    for (int k = 0; k < 3; ++k) {
      const auto idx = next_indices(state, data.size());
      sizes.push_back(idx.size());
      seen.insert(idx.begin(), idx.end());
      state.step += 1;
    }
    CHECK(sizes == std::vector<std::size_t>{4, 4, 2});
    CHECK(seen.size() == 10);
    for (std::uint32_t i = 0; i < 10; ++i) CHECK(seen.count(i) == 1);
  }
  auto fresh = init_training(c, data);
  const auto first = next_indices(fresh, data.size());
  fresh.step = 3;
  const auto second = next_indices(fresh, data.size());
  CHECK(first != second);
}

TEST_CASE("masks and views depend only on the step") {
  const auto c = tiny_config();
  const auto data = tiny_data(c);
  const std::vector<std::uint32_t> idx{1, 2};
  const auto a = make_batch(c, data, idx, 5);
  const auto b = make_batch(c, data, idx, 5);
  const auto d = make_batch(c, data, idx, 6);
  CHECK(a.masks == b.masks);
  CHECK(a.input == b.input);
  CHECK(a.raw == b.raw);
  CHECK((a.masks != d.masks || a.input != d.input));
  for (const auto& m : a.masks) CHECK(m.popcount() == 8);
}

TEST_CASE("resuming from a mid-run checkpoint matches the uninterrupted run") {
  const auto c = tiny_config();
  const auto data = tiny_data(c);
  const auto full_dir = scratch_dir("resume_full");
  const auto split_dir = scratch_dir("resume_split");

  auto full = init_training(c, data);
  pretrain_run(full, data, RunOptions{full_dir, std::nullopt, {}});

  auto first = init_training(c, data);
  pretrain_run(first, data, RunOptions{split_dir, 3, {}});
  CHECK(first.step == 3);
  CHECK_FALSE(fs::exists(split_dir / "final.ckpt"));
  save_checkpoint(split_dir / "mid.ckpt", first);
  auto resumed = load_checkpoint(split_dir / "mid.ckpt", config_hash(c));
  pretrain_run(resumed, data, RunOptions{split_dir, std::nullopt, {}});

  CHECK(resumed.step == 6);
  CHECK(same_params(full.model, resumed.model));
  for (std::size_t i = 0; i < full.optim.size(); ++i) {
    CHECK(full.optim[i].m == resumed.optim[i].m);
    CHECK(full.optim[i].v == resumed.optim[i].v);
  }
  CHECK(slurp(full_dir / "metrics.csv") == slurp(split_dir / "metrics.csv"));
  CHECK(slurp(full_dir / "final.ckpt") == slurp(split_dir / "final.ckpt"));
}

TEST_CASE("metrics CSV is byte identical across runs and well formed") {
  auto c = tiny_config();
  c.checkpoint_every = 2;
  const auto data = tiny_data(c);
  const auto d1 = scratch_dir("metrics_a");
  const auto d2 = scratch_dir("metrics_b");
  auto s1 = init_training(c, data);
  auto s2 = init_training(c, data);
  pretrain_run(s1, data, RunOptions{d1, std::nullopt, {}});
  pretrain_run(s2, data, RunOptions{d2, std::nullopt, {}});
  const std::string m = slurp(d1 / "metrics.csv");
  CHECK(m == slurp(d2 / "metrics.csv"));
  CHECK(m.rfind("step,lr,loss\n0,", 0) == 0);
  CHECK(std::count(m.begin(), m.end(), '\n') == 7);
  CHECK(fs::exists(d1 / "step-2.ckpt"));
  CHECK(fs::exists(d1 / "step-4.ckpt"));
  CHECK_FALSE(fs::exists(d1 / "step-6.ckpt"));
  CHECK(fs::exists(d1 / "final.ckpt"));
  CHECK(metrics_line({12, 0.5, 0.25}) == "12,0.5,0.25\n");
}

TEST_CASE("masked-only updates ignore visible target values") {
  for (TargetKind kind : {TargetKind::l1, TargetKind::l2, TargetKind::smooth_l1, TargetKind::bins}) {
    CAPTURE(to_string(kind));
    auto c = tiny_config();
    c.target.kind = kind;
    const auto data = tiny_data(c);
    const std::vector<std::uint32_t> idx{0, 1, 2, 3};
    const StepBatch batch = make_batch(c, data, idx, 0);
    StepBatch perturbed = batch;
    Rng rng(9);
    for (std::size_t b = 0; b < batch.raw.size(); ++b) {
      const auto pixels = batch.masks[b].pixel_mask();
      for (Index ch = 0; ch < 3; ++ch)
        for (Index p = 0; p < 16 * 16; ++p)
          if (!pixels[static_cast<std::size_t>(p)]) perturbed.raw[b].at(ch, p / 16, p % 16) = static_cast<float>(rng.uniform());
    }
    auto s1 = init_training(c, data);
    auto s2 = init_training(c, data);
    const double l1 = pretrain_step(s1, batch, 1e-2);
    const double l2 = pretrain_step(s2, perturbed, 1e-2);
    CHECK(l1 == l2);
    CHECK(same_params(s1.model, s2.model));

    c.loss_scope = LossScope::full_image;
    auto f1 = init_training(c, data);
    auto f2 = init_training(c, data);
    pretrain_step(f1, batch, 1e-2);
    pretrain_step(f2, perturbed, 1e-2);
    CHECK_FALSE(same_params(f1.model, f2.model));
  }
}

TEST_CASE("weight decay applies to weight matrices only") {
  CHECK(decays("blocks.0.attn.qkv.weight", Tensor<float>({4, 4})));
  CHECK(decays("head.weight", Tensor<float>({4, 4})));
  CHECK_FALSE(decays("norm.weight", Tensor<float>({4})));
  CHECK_FALSE(decays("head.bias", Tensor<float>({4})));
  CHECK_FALSE(decays("pos_embed", Tensor<float>({4, 4})));
  CHECK_FALSE(decays("mask_token", Tensor<float>({1, 4})));
}

TEST_CASE("non-finite loss aborts with the config dump") {
  const auto c = tiny_config();
  const auto data = tiny_data(c);
  auto state = init_training(c, data);
  state.model.params.head.b1[0] = std::numeric_limits<float>::quiet_NaN();
  const std::vector<std::uint32_t> idx{0, 1};
  CHECK_THROWS_WITH_AS(pretrain_step(state, make_batch(c, data, idx, 0), 1e-3), doctest::Contains("mask.ratio = 0.5"),
                       NumericalError);
  CHECK(state.step == 0);
}

TEST_CASE("cluster targets fit a palette before training") {
  auto c = tiny_config();
  c.target = {TargetKind::clusters, 8, 8, 5, std::nullopt};
  c.palette_sample = 400;
  const auto data = tiny_data(c);
  auto state = init_training(c, data);
  REQUIRE(state.palette.has_value());
  CHECK(state.palette->size() == 5);
  REQUIRE(state.config.target.palette.has_value());
  const auto rows = pretrain_run(state, data, RunOptions{std::nullopt, 2, {}});
  CHECK(std::isfinite(rows.back().loss));
  const auto back = decode_checkpoint(encode_checkpoint(state));
  CHECK(back.palette->centers == state.palette->centers);
}

TEST_CASE("evaluation on fixed masks is deterministic and matches the zero-head oracle") {
  const auto c = tiny_config();
  const auto data = tiny_data(c);
  auto state = init_training(c, data);
  state.model.params.head.w1.data().setZero();
  state.model.params.head.b1.data().setZero();
  const auto masks = eval_masks(c, data.size(), 17);
  CHECK(masks == eval_masks(c, data.size(), 17));

  double total = 0.0;
  long count = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto pixels = masks[i].pixel_mask();
    for (Index ch = 0; ch < 3; ++ch)
      for (Index p = 0; p < 16 * 16; ++p)
        if (pixels[static_cast<std::size_t>(p)]) {
          total += std::fabs(data.images[i].at(ch, p / 16, p % 16));
          ++count;
        }
  }
  const double loss =
      evaluate_masked_loss(state.model, c, data.images, masks, data.manifest.mean, data.manifest.stddev);
  CHECK(loss == doctest::Approx(total / static_cast<double>(count)).epsilon(1e-6));
}

TEST_CASE("pretraining needs data") {
  const auto c = tiny_config();
  CHECK_THROWS_AS(init_training(c, Dataset{}), ConfigError);
}
