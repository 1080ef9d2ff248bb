// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mimlab/augment.hpp"
#include "mimlab/checkpoint.hpp"
#include "mimlab/corpus.hpp"
#include "mimlab/eval.hpp"
#include "mimlab/gradcheck.hpp"
#include "mimlab/optim.hpp"
#include "mimlab/patches.hpp"
#include "mimlab/schedule.hpp"
#include "mimlab/trainer.hpp"
#include "support/oracles.hpp"
#include "support/primitive_cases.hpp"

using namespace mimlab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("mimlab_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------- 1

Outcome avgdist_oracle() {
  Rng rng(101);
  const MaskStrategy strategies[] = {MaskStrategy::random, MaskStrategy::square, MaskStrategy::blockwise};
  const Index patches[] = {1, 2, 4, 8};
  int done = 0, per[3] = {0, 0, 0};
  double worst = 0.0;
  int attempts = 0;
  while (done < 200 && attempts < 10000) {
    ++attempts;
    const int s = done % 3;
    const Index p = patches[rng.below(4)];
    const Index max_cells = 64 / p;
    const Index rows = 2 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(max_cells - 1)));
    const Index cols = 2 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(max_cells - 1)));
    const double ratio = rng.uniform(0.1, 0.9);
    MaskGrid m;
    try {
      switch (strategies[s]) {
        case MaskStrategy::random: m = gen_random_mask(rows, cols, p, ratio, rng); break;
        case MaskStrategy::square: m = gen_square_mask(rows, cols, p, ratio, rng); break;
        case MaskStrategy::blockwise: m = gen_blockwise_mask(rows, cols, p, ratio, rng); break;
      }
    } catch (const ConfigError&) {
      continue;
    }
    if (m.popcount() == 0 || m.popcount() == m.size()) continue;
    worst = std::max(worst, std::abs(avg_dist(m) - oracle::avg_dist(m)));
    ++per[s];
    ++done;
  }
  return {done == 200 && worst <= 1e-9,
          fmt("%d masks (random %d, square %d, blockwise %d), max |diff| %.3g", done, per[0], per[1], per[2], worst)};
}

// ---------------------------------------------------------------- 2

Outcome sweep_shape() {
  SweepSpec spec;
  spec.strategies = {MaskStrategy::random};
  spec.seeds = 32;
  spec.image_size = 192;
  const auto result = mask_sweep(spec);
  const double slack = 0.005 * 192.0 * std::sqrt(2.0);
  bool monotone = true;
  std::string where;
  auto cell = [&](Index patch, double ratio) {
    for (const auto& r : result.rows)
      if (r.patch_size == patch && std::abs(r.ratio - ratio) < 1e-9) return r.mean;
    return std::nan("");
  };
  for (Index p : spec.patch_sizes)
    for (std::size_t i = 1; i < spec.ratios.size(); ++i) {
      const double a = cell(p, spec.ratios[i - 1]), b = cell(p, spec.ratios[i]);
      if (!(b >= a - slack)) {
        monotone = false;
        where += fmt(" p%ld@%.1f", static_cast<long>(p), spec.ratios[i]);
      }
    }
  const double d4 = cell(4, 0.4), d8 = cell(8, 0.4), d16 = cell(16, 0.4), d32 = cell(32, 0.4);
  const bool ordered = d4 < d8 && d8 < d16 && d16 < d32;
  return {monotone && ordered && result.rows.size() == 45,
          fmt("%zu cells, monotone %s%s; at 0.4: %.3f < %.3f < %.3f < %.3f %s", result.rows.size(),
              monotone ? "yes" : "no", where.c_str(), d4, d8, d16, d32, ordered ? "ordered" : "NOT ordered")};
}

// ---------------------------------------------------------------- 3

ModelParams<Var<double>> from_flat(const Model& model, const Var<double>& flat) {
  auto row = reshape(flat, {1, flat.value().size()});
  Index offset = 0;
  return model.params.map<Var<double>>([&](const std::string&, const Tensor<float>& t) {
    auto v = reshape(slice_cols(row, offset, t.size()), t.shape());
    offset += t.size();
    return v;
  });
}

Outcome gradient_suite() {
  double worst_primitive = 0.0;
  std::string worst_name;
  int count = 0;
  for (const auto& pc : cases::primitive_cases())
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto x = cases::random_tensor(pc.shape, 100 + seed, pc.lo, pc.hi);
      auto body = pc.body;
      const auto r = finite_diff_check(
          [body, seed](Tape<double>& t, const Var<double>& v) { return cases::contract(body(t, v), seed); }, x);
      if (r.max_error > worst_primitive) {
        worst_primitive = r.max_error;
        worst_name = pc.name;
      }
      ++count;
    }

  EncoderConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.depth = 2;
  c.num_heads = 2;
  Rng rng(23);
  const Model m = init_model(c, {HeadKind::linear, 48}, rng);
  Image img(16, 16);
  Rng irng(24);
  for (Index i = 0; i < img.rgb().size(); ++i) img.rgb()[i] = static_cast<float>(irng.uniform());
  const std::vector<Image> raw{img};
  const auto tokens = patchify_batch(raw, 4).cast<double>();
  TargetSpec spec;
  spec.resolution = 16;
  const auto targets = build_targets(spec, raw, 4).values.cast<double>();
  Rng mrng(25);
  const std::vector<MaskGrid> grids{gen_random_mask(4, 4, 4, 0.6, mrng)};
  const auto mask = token_mask(grids, c);
  Tensor<double> flat({m.parameter_count()});
  Index o = 0;
  for (const auto& [name, t] : m.named())
    for (Index i = 0; i < t->size(); ++i) flat[o++] = (*t)[i];
  const auto e2e = finite_diff_check(
      [&](Tape<double>&, const Var<double>& x) {
        return masked_regression_loss(model_forward(from_flat(m, x), tokens, mask, c), targets, mask, TargetKind::l1);
      },
      flat, 1e-5, 1e-3);
  const bool pass = worst_primitive < 1e-4 && e2e.max_error < 1e-3;
  return {pass, fmt("%d primitive checks, worst %.2g (%s); end-to-end %ld params, max error %.2g", count,
                    worst_primitive, worst_name.c_str(), static_cast<long>(flat.size()), e2e.max_error)};
}

// ---------------------------------------------------------------- 4, 11

struct LossAndGrads {
  float loss;
  std::vector<Tensor<float>> grads;
};

LossAndGrads loss_and_grads(const Model& model, const TrainConfig& c, const Tensor<float>& tokens,
                            const std::vector<std::uint8_t>& mask, const TargetBatch& targets,
                            const Tensor<float>* offset) {
  Tape<float> tape;
  auto p = bind<float>(tape, model.params);
  auto pred = model_forward(p, tokens, mask, c.encoder);
  if (offset) pred = add(pred, tape.constant(*offset));
  auto loss = masked_loss(pred, targets, mask);
  const auto g = tape.backward(loss);
  LossAndGrads out{loss.value().item(), {}};
  p.visit([&](const std::string&, const Var<float>& v) { out.grads.push_back(g[v]); });
  return out;
}

/// Perturbs predictions and targets at every visible token and compares the
/// loss and every parameter gradient bit for bit.
bool visible_positions_isolated(const TrainState& state, const StepBatch& batch, std::uint64_t seed) {
  const auto& c = state.config;
  const auto tokens = patchify_batch(batch.input, c.encoder.patch_size);
  const auto mask = token_mask(batch.masks, c.encoder);
  const auto targets = build_targets(c.target, batch.raw, c.encoder.patch_size);

  Rng rng(seed);
  TargetBatch other = targets;
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (mask[r]) continue;
    const Index row = static_cast<Index>(r);
    if (is_classification(targets.kind)) {
      for (Index j = 0; j < targets.per_token; ++j) {
        int& cls = other.classes[static_cast<std::size_t>(row * targets.per_token + j)];
        cls = static_cast<int>((cls + 1 + rng.below(static_cast<std::uint64_t>(targets.num_classes - 1))) %
                               static_cast<std::uint64_t>(targets.num_classes));
      }
    } else {
      for (Index j = 0; j < other.values.cols(); ++j) other.values.at(row, j) = static_cast<float>(rng.uniform(-5, 5));
    }
  }
  Tensor<float> offset({static_cast<Index>(mask.size()), head_output_dim(c.target, c.image_size, c.encoder.patch_size)});
  for (Index r = 0; r < offset.rows(); ++r)
    for (Index j = 0; j < offset.cols(); ++j)
      offset.at(r, j) = mask[static_cast<std::size_t>(r)] ? 0.0f : static_cast<float>(10.0 * rng.normal());

  const auto a = loss_and_grads(state.model, c, tokens, mask, targets, nullptr);
  const auto b = loss_and_grads(state.model, c, tokens, mask, other, &offset);
  if (a.loss != b.loss || a.grads.size() != b.grads.size()) return false;
  for (std::size_t i = 0; i < a.grads.size(); ++i)
    if (!(a.grads[i] == b.grads[i])) return false;
  return other.classes != targets.classes || !(other.values == targets.values);
}

TrainConfig small_config(TargetKind kind) {
  TrainConfig c;
  c.data.synthetic_count = 8;
  c.encoder.embed_dim = 16;
  c.encoder.num_heads = 2;
  c.target.kind = kind;
  c.target.palette_size = 8;
  c.palette_sample = 2000;
  c.batch_size = 4;
  c.steps = 1;
  return c;
}

Outcome loss_isolation() {
  std::string detail;
  bool pass = true;
  for (auto kind : {TargetKind::l1, TargetKind::l2, TargetKind::smooth_l1, TargetKind::bins, TargetKind::clusters}) {
    const TrainConfig c = small_config(kind);
    const auto data = load_source(c.data, c.image_size, c.num_classes);
    const auto state = init_training(c, data);
    const std::vector<std::uint32_t> idx{0, 1, 2, 3};
    bool ok = true;
    for (std::int64_t step = 0; step < 3; ++step)
      ok = ok && visible_positions_isolated(state, make_batch(c, data, idx, step), 40 + static_cast<std::uint64_t>(step));
    pass = pass && ok;
    detail += fmt("%s %s  ", to_string(kind).c_str(), ok ? "ok" : "DIFFERS");
  }
  return {pass, detail + "(loss and all parameter gradients compared bit for bit)"};
}

Outcome target_axes() {
  int built = 0, failed = 0;
  std::string failures;
  auto run = [&](TargetKind kind, Index resolution, int bins) {
    TrainConfig c;
    c.data.synthetic_count = 4;
    c.encoder.patch_size = 32;
    c.encoder.embed_dim = 16;
    c.encoder.depth = 1;
    c.encoder.num_heads = 2;
    c.mask = {MaskStrategy::random, 32, 0.5};
    c.target = {kind, resolution, bins, 8, std::nullopt};
    c.palette_sample = 1000;
    c.augment = false;
    c.batch_size = 2;
    c.steps = 1;
    const std::string name = fmt("%s/res%ld", to_string(kind).c_str(), static_cast<long>(resolution)) +
                             (kind == TargetKind::bins ? fmt("/%d", bins) : std::string());
    try {
      const auto data = load_source(c.data, c.image_size, c.num_classes);
      auto state = init_training(c, data);
      const auto idx = next_indices(state, data.size());
      const auto batch = make_batch(c, data, idx, 0);
      const bool iso = visible_positions_isolated(state, batch, 7);
      const double loss = pretrain_step(state, batch, 1e-3);
      if (!iso || !std::isfinite(loss) || state.step != 1) {
        ++failed;
        failures += " " + name;
      }
    } catch (const Error& e) {
      ++failed;
      failures += " " + name + "(" + e.what() + ")";
    }
    ++built;
  };
  const Index resolutions[] = {2, 4, 8, 16, 32, 64};  // 1/32 ... 1/1 of the 64 px input
  for (auto kind : {TargetKind::l1, TargetKind::l2, TargetKind::smooth_l1})
    for (Index r : resolutions) run(kind, r, 8);
  for (int bins : {2, 4, 8, 16, 32, 256})
    for (Index r : resolutions) run(TargetKind::bins, r, bins);
  for (Index r : resolutions) run(TargetKind::clusters, r, 8);
  return {failed == 0, fmt("%d configurations built, stepped once and isolated; %d failed", built, failed) + failures};
}

// ---------------------------------------------------------------- 5

Outcome mask_token_opacity() {
  EncoderConfig c;  // 64 px, patch 8, dim 64, depth 2
  Rng rng(5);
  const Model m = init_model(c, {HeadKind::linear, c.token_dim()}, rng);
  const auto data = synth_corpus(9, 6, 64, 4);
  int checked = 0, identical = 0;
  for (auto strategy : {MaskStrategy::random, MaskStrategy::square, MaskStrategy::blockwise})
    for (Index mask_patch : {Index{8}, Index{16}})
      for (std::size_t i = 0; i < data.size(); ++i) {
        Rng mrng(100 + static_cast<std::uint64_t>(checked));
        const MaskGrid grid = generate_mask({strategy, mask_patch, 0.5}, 64, mrng);
        const auto view = plain_view(data.images[i], 64, data.manifest.mean, data.manifest.stddev);
        Image a = view.input, b = view.input;
        const auto px = grid.pixel_mask();
        for (Index ch = 0; ch < 3; ++ch)
          for (Index p = 0; p < 64 * 64; ++p)
            if (px[static_cast<std::size_t>(p)]) b.rgb()[ch * 4096 + p] = static_cast<float>(mrng.normal() * 3.0);
        const std::vector<MaskGrid> grids{grid};
        const auto mask = token_mask(grids, c);
        auto encode = [&](const Image& img) {
          Tape<float> tape;
          auto p = bind<float>(tape, m.params, false);
          const std::vector<Image> one{img};
          return encoder_forward(p.encoder, embed_and_mask(p.encoder, patchify_batch(one, 8), mask, c), c).value();
        };
        ++checked;
        identical += (!(a == b) && encode(a) == encode(b)) ? 1 : 0;
      }
  return {identical == checked,
          fmt("%d/%d masked-pixel edits left the encoder output bit-identical", identical, checked)};
}

// ---------------------------------------------------------------- 6

/// Scalar AdamW written out term by term.
struct ScalarAdam {
  double p, m = 0, v = 0;
  int t = 0;
  void step(double g, double lr, double b1, double b2, double eps, double wd) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    p = p - lr * wd * p - lr * mh / (std::sqrt(vh) + eps);
  }
};

Outcome optimizer_vectors() {
  double worst = 0.0;
  // p = 1, g = 1: m_hat = v_hat = 1 after one step.
  {
    Tensor<double> p = Tensor<double>::ones({1});
    auto s = AdamWState<double>::like(p);
    adamw_step(p, Tensor<double>::ones({1}), s, {0.1, 0.9, 0.999, 1e-8, 0.05});
    worst = std::max(worst, std::abs(p[0] - (1.0 - 0.1 * 0.05 - 0.1 / (1.0 + 1e-8))));
  }
  // Five steps with varying gradients on three coordinates.
  {
    const double g[5][3] = {{0.3, -1.2, 2.0}, {0.1, 0.4, -0.5}, {-0.7, 0.0, 1.5}, {0.25, 2.5, -0.05}, {1.0, -1.0, 0.3}};
    Tensor<double> p = Tensor<double>::from({3}, {0.5, -0.25, 2.0});
    auto s = AdamWState<double>::like(p);
    ScalarAdam ref[3] = {{0.5}, {-0.25}, {2.0}};
    for (const auto& row : g) {
      adamw_step(p, Tensor<double>::from({3}, {row[0], row[1], row[2]}), s, {2e-3, 0.9, 0.999, 1e-8, 0.05});
      for (int k = 0; k < 3; ++k) ref[k].step(row[k], 2e-3, 0.9, 0.999, 1e-8, 0.05);
    }
    for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(p[k] - ref[k].p));
  }
  ScheduleSpec cos;
  cos.kind = ScheduleKind::cosine;
  cos.base_lr = 8e-4;
  cos.warmup_steps = 10;
  cos.total_steps = 110;
  const bool warm_exact = lr_at(cos, 10) == 8e-4;
  const bool mid_half = std::abs(lr_at(cos, 60) - 4e-4) <= 1e-18;
  ScheduleSpec st = cos;
  st.kind = ScheduleKind::step;
  st.warmup_steps = 0;
  st.total_steps = 1000;
  const bool steps_ok = lr_at(st, 899) == 8e-4 && std::abs(lr_at(st, 900) - 8e-5) <= 1e-18 &&
                        std::abs(lr_at(st, 949) - 8e-5) <= 1e-18 && std::abs(lr_at(st, 950) - 8e-6) <= 1e-18;
  return {worst <= 1e-12 && warm_exact && mid_half && steps_ok,
          fmt("adamw max |diff| %.2g; warmup end %s; cosine midpoint %s; step decays %s", worst,
              warm_exact ? "exact" : "off", mid_half ? "half" : "off", steps_ok ? "x10 at 90%/95%" : "off")};
}

// ---------------------------------------------------------------- 7, 9

/// Mean |x - mean_c| over the masked pixels, with per-channel means of the
/// training pixels computed here rather than by the library.
double constant_mean_baseline(const Dataset& train, const Dataset& eval, const std::vector<MaskGrid>& masks) {
  double mean[3] = {0, 0, 0};
  double n = 0;
  for (const auto& img : train.images) {
    const Index hw = img.height() * img.width();
    for (Index ch = 0; ch < 3; ++ch)
      for (Index p = 0; p < hw; ++p) mean[ch] += img.rgb()[ch * hw + p];
    n += static_cast<double>(hw);
  }
  for (double& m : mean) m /= n;
  double total = 0;
  long count = 0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const auto px = masks[i].pixel_mask();
    const Image& img = eval.images[i];
    const Index hw = img.height() * img.width();
    for (Index ch = 0; ch < 3; ++ch)
      for (Index p = 0; p < hw; ++p)
        if (px[static_cast<std::size_t>(p)]) {
          total += std::abs(img.rgb()[ch * hw + p] - mean[ch]);
          ++count;
        }
  }
  return total / static_cast<double>(count);
}

struct ToyRun {
  double final_train_loss = 0;
  double eval_loss = 0;
  double baseline = 0;
  double probe = 0;
  bool finished = false;
};

ToyRun toy_pretraining(LossScope scope, bool with_probe) {
  TrainConfig c;  // 512 synthetic 64 px images, patch 8, ratio 0.6, dim 64, depth 2, 200 steps
  c.loss_scope = scope;
  const auto data = load_source(c.data, c.image_size, c.num_classes);
  const auto eval = load_source(c.eval, c.image_size, c.num_classes);
  auto state = init_training(c, data);
  const auto rows = pretrain_run(state, data);
  ToyRun r;
  r.finished = state.step == c.steps && !rows.empty() && std::isfinite(rows.back().loss);
  r.final_train_loss = rows.empty() ? std::nan("") : rows.back().loss;
  const auto masks = eval_masks(c, eval.size(), 99);
  TrainConfig scored = c;
  scored.loss_scope = LossScope::masked_only;
  r.eval_loss = evaluate_masked_loss(state.model, scored, eval.images, masks, data.manifest.mean, data.manifest.stddev);
  r.baseline = constant_mean_baseline(data, eval, masks);
  if (with_probe) r.probe = linear_probe(state.model, data, eval, c.num_classes, c.probe, 0).accuracy;
  return r;
}

ToyRun masked_run;  // shared by criteria 7 and 9

Outcome toy_efficacy() {
  masked_run = toy_pretraining(LossScope::masked_only, true);
  const double ratio = masked_run.eval_loss / masked_run.baseline;
  return {masked_run.finished && ratio < 0.9,
          fmt("held-out masked l1 %.4f vs constant-mean baseline %.4f (ratio %.3f, need < 0.9); last train loss %.4f",
              masked_run.eval_loss, masked_run.baseline, ratio, masked_run.final_train_loss)};
}

Outcome loss_scopes() {
  if (!masked_run.finished) masked_run = toy_pretraining(LossScope::masked_only, true);
  const auto full = toy_pretraining(LossScope::full_image, true);
  return {masked_run.finished && full.finished,
          fmt("masked area: eval l1 %.4f, probe %.3f | full image: eval l1 %.4f, probe %.3f (reported, not gated)",
              masked_run.eval_loss, masked_run.probe, full.eval_loss, full.probe)};
}

// ---------------------------------------------------------------- 8

// Pretraining recipe for the probe comparison; see README.
TrainConfig probe_recipe(std::uint64_t seed) {
  TrainConfig c;
  c.seed = seed;
  c.eval.synthetic_count = 512;
  c.batch_size = 8;
  c.steps = 8000;
  c.base_lr = 1e-3;
  return c;
}

Outcome representation_gap() {
  std::vector<double> gaps;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const TrainConfig c = probe_recipe(seed);
    const auto data = load_source(c.data, c.image_size, c.num_classes);
    const auto eval = load_source(c.eval, c.image_size, c.num_classes);
    auto state = init_training(c, data);
    const Model random_init = state.model;
    pretrain_run(state, data);
    const auto pre = linear_probe(state.model, data, eval, c.num_classes, c.probe, seed);
    const auto rnd = linear_probe(random_init, data, eval, c.num_classes, c.probe, seed);
    gaps.push_back(100.0 * (pre.accuracy - rnd.accuracy));
    detail += fmt("seed %d: %.3f vs %.3f; ", static_cast<int>(seed), pre.accuracy, rnd.accuracy);
  }
  std::sort(gaps.begin(), gaps.end());
  return {gaps[1] >= 5.0, detail + fmt("median gap %+.1f points (need >= +5)", gaps[1])};
}

// ---------------------------------------------------------------- 10

Outcome determinism() {
  TrainConfig c;
  c.data.synthetic_count = 64;
  c.batch_size = 16;
  c.steps = 12;
  const auto data = load_source(c.data, c.image_size, c.num_classes);

  auto run = [&](const fs::path& dir) {
    auto s = init_training(c, data);
    pretrain_run(s, data, RunOptions{dir, std::nullopt, {}});
    return s;
  };
  const auto da = scratch("det_a"), db = scratch("det_b"), dc = scratch("det_c");
  const auto a = run(da);
  const auto b = run(db);
  const bool csv_same = slurp(da / "metrics.csv") == slurp(db / "metrics.csv") && !slurp(da / "metrics.csv").empty();

  auto first = init_training(c, data);
  pretrain_run(first, data, RunOptions{dc, 5, {}});
  save_checkpoint(dc / "mid.ckpt", first);
  auto resumed = load_checkpoint(dc / "mid.ckpt", config_hash(c));
  pretrain_run(resumed, data, RunOptions{dc, std::nullopt, {}});
  bool params_same = true;
  const auto pa = a.model.named();
  const auto pc = resumed.model.named();
  for (std::size_t i = 0; i < pa.size(); ++i) params_same = params_same && *pa[i].second == *pc[i].second;
  const bool resumed_csv = slurp(dc / "metrics.csv") == slurp(da / "metrics.csv");
  const bool final_same = slurp(da / "final.ckpt") == slurp(dc / "final.ckpt");
  (void)b;
  return {csv_same && params_same && resumed_csv && final_same,
          fmt("metrics CSV %s across runs; resume at step 5: parameters %s, metrics %s, final checkpoint %s",
              csv_same ? "identical" : "DIFFERS", params_same ? "bit-identical" : "DIFFER",
              resumed_csv ? "identical" : "DIFFER", final_same ? "identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    std::function<Outcome()> run;
    double budget_s;  // 0: no runtime limit
  };
  const std::vector<Criterion> criteria{
      {1, avgdist_oracle, 60},      {2, sweep_shape, 120},          {3, gradient_suite, 300},
      {4, loss_isolation, 0},       {5, mask_token_opacity, 0},     {6, optimizer_vectors, 0},
      {7, toy_efficacy, 600},       {8, representation_gap, 1200},  {9, loss_scopes, 0},
      {10, determinism, 0},         {11, target_axes, 0}};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& [id, fn, budget] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (budget > 0 && secs >= budget) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s budget", budget);
    }
    std::printf("criterion %2d: %s  %s  [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
