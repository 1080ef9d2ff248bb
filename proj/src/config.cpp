#include "mimlab/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "mimlab/error.hpp"

namespace mimlab {

std::string to_string(LossScope s) { return s == LossScope::masked_only ? "masked_only" : "full_image"; }

LossScope parse_loss_scope(const std::string& name) {
  if (name == "masked_only") return LossScope::masked_only;
  if (name == "full_image") return LossScope::full_image;
  throw ConfigError("unknown loss scope '" + name + "' (expected masked_only or full_image)");
}

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
    throw ConfigError("expected a number, got '" + s + "'");
  return v;
}

template <typename Int>
Int parse_int(const std::string& s) {
  Int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("expected an integer, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError("expected true or false, got '" + s + "'");
}

struct Field {
  std::string key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

template <typename T>
Field number(std::string key, T TrainConfig::*member) {
  return {key,
          [member](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*member);
            else return std::to_string(c.*member);
          },
          [member](TrainConfig& c, const std::string& v) {
            if constexpr (std::is_floating_point_v<T>) c.*member = parse_double(v);
            else c.*member = parse_int<T>(v);
          }};
}

template <typename Get, typename Set>
Field field(std::string key, Get get, Set set) {
  return {std::move(key), get, set};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(number("seed", &TrainConfig::seed));
    f.push_back(field(
        "image_size", [](const TrainConfig& c) { return std::to_string(c.image_size); },
        [](TrainConfig& c, const std::string& v) { c.image_size = c.encoder.image_size = parse_int<Index>(v); }));
    f.push_back(number("num_classes", &TrainConfig::num_classes));
    for (auto [prefix, member] : {std::pair{"data", &TrainConfig::data}, std::pair{"eval", &TrainConfig::eval}}) {
      const std::string p = prefix;
      f.push_back(field(
          p + ".source", [member](const TrainConfig& c) { return (c.*member).source; },
          [member](TrainConfig& c, const std::string& v) {
            if (v.empty()) throw ConfigError("empty data source");
            (c.*member).source = v;
          }));
      f.push_back(field(
          p + ".synthetic_seed", [member](const TrainConfig& c) { return std::to_string((c.*member).synthetic_seed); },
          [member](TrainConfig& c, const std::string& v) { (c.*member).synthetic_seed = parse_int<std::uint64_t>(v); }));
      f.push_back(field(
          p + ".synthetic_count", [member](const TrainConfig& c) { return std::to_string((c.*member).synthetic_count); },
          [member](TrainConfig& c, const std::string& v) { (c.*member).synthetic_count = parse_int<std::size_t>(v); }));
    }
    f.push_back(field(
        "mask.strategy", [](const TrainConfig& c) { return to_string(c.mask.strategy); },
        [](TrainConfig& c, const std::string& v) { c.mask.strategy = parse_mask_strategy(v); }));
    f.push_back(field(
        "mask.patch_size", [](const TrainConfig& c) { return std::to_string(c.mask.patch_size); },
        [](TrainConfig& c, const std::string& v) { c.mask.patch_size = parse_int<Index>(v); }));
    f.push_back(field(
        "mask.ratio", [](const TrainConfig& c) { return format_double(c.mask.ratio); },
        [](TrainConfig& c, const std::string& v) { c.mask.ratio = parse_double(v); }));
    f.push_back(field(
        "target.kind", [](const TrainConfig& c) { return to_string(c.target.kind); },
        [](TrainConfig& c, const std::string& v) { c.target.kind = parse_target_kind(v); }));
    f.push_back(field(
        "target.resolution", [](const TrainConfig& c) { return std::to_string(c.target.resolution); },
        [](TrainConfig& c, const std::string& v) { c.target.resolution = parse_int<Index>(v); }));
    f.push_back(field(
        "target.num_bins", [](const TrainConfig& c) { return std::to_string(c.target.num_bins); },
        [](TrainConfig& c, const std::string& v) { c.target.num_bins = parse_int<int>(v); }));
    f.push_back(field(
        "target.palette_size", [](const TrainConfig& c) { return std::to_string(c.target.palette_size); },
        [](TrainConfig& c, const std::string& v) { c.target.palette_size = parse_int<int>(v); }));
    f.push_back(number("target.palette_iterations", &TrainConfig::palette_iterations));
    f.push_back(number("target.palette_sample", &TrainConfig::palette_sample));
    f.push_back(field(
        "encoder.patch_size", [](const TrainConfig& c) { return std::to_string(c.encoder.patch_size); },
        [](TrainConfig& c, const std::string& v) { c.encoder.patch_size = parse_int<Index>(v); }));
    f.push_back(field(
        "encoder.embed_dim", [](const TrainConfig& c) { return std::to_string(c.encoder.embed_dim); },
        [](TrainConfig& c, const std::string& v) { c.encoder.embed_dim = parse_int<Index>(v); }));
    f.push_back(field(
        "encoder.depth", [](const TrainConfig& c) { return std::to_string(c.encoder.depth); },
        [](TrainConfig& c, const std::string& v) { c.encoder.depth = parse_int<Index>(v); }));
    f.push_back(field(
        "encoder.num_heads", [](const TrainConfig& c) { return std::to_string(c.encoder.num_heads); },
        [](TrainConfig& c, const std::string& v) { c.encoder.num_heads = parse_int<Index>(v); }));
    f.push_back(field(
        "encoder.mlp_ratio", [](const TrainConfig& c) { return std::to_string(c.encoder.mlp_ratio); },
        [](TrainConfig& c, const std::string& v) { c.encoder.mlp_ratio = parse_int<Index>(v); }));
    f.push_back(field(
        "head.kind", [](const TrainConfig& c) { return to_string(c.head); },
        [](TrainConfig& c, const std::string& v) { c.head = parse_head_kind(v); }));
    f.push_back(field(
        "schedule.kind", [](const TrainConfig& c) { return std::string(c.schedule == ScheduleKind::cosine ? "cosine" : "step"); },
        [](TrainConfig& c, const std::string& v) {
          if (v == "cosine") c.schedule = ScheduleKind::cosine;
          else if (v == "step") c.schedule = ScheduleKind::step;
          else throw ConfigError("unknown schedule '" + v + "' (expected cosine or step)");
        }));
    f.push_back(number("schedule.base_lr", &TrainConfig::base_lr));
    f.push_back(number("schedule.warmup_fraction", &TrainConfig::warmup_fraction));
    f.push_back(field(
        "schedule.step_milestones",
        [](const TrainConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.step_milestones.size(); ++i) s += (i ? "," : "") + format_double(c.step_milestones[i]);
          return s;
        },
        [](TrainConfig& c, const std::string& v) {
          c.step_milestones.clear();
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ',')) c.step_milestones.push_back(parse_double(item));
        }));
    f.push_back(number("schedule.step_factor", &TrainConfig::step_factor));
    f.push_back(number("optim.beta1", &TrainConfig::beta1));
    f.push_back(number("optim.beta2", &TrainConfig::beta2));
    f.push_back(number("optim.eps", &TrainConfig::eps));
    f.push_back(number("optim.weight_decay", &TrainConfig::weight_decay));
    f.push_back(number("train.batch_size", &TrainConfig::batch_size));
    f.push_back(number("train.epochs", &TrainConfig::epochs));
    f.push_back(number("train.steps", &TrainConfig::steps));
    f.push_back(field(
        "train.loss_scope", [](const TrainConfig& c) { return to_string(c.loss_scope); },
        [](TrainConfig& c, const std::string& v) { c.loss_scope = parse_loss_scope(v); }));
    f.push_back(field(
        "train.augment", [](const TrainConfig& c) { return std::string(c.augment ? "true" : "false"); },
        [](TrainConfig& c, const std::string& v) { c.augment = parse_bool(v); }));
    f.push_back(number("train.checkpoint_every", &TrainConfig::checkpoint_every));
    f.push_back(field(
        "probe.steps", [](const TrainConfig& c) { return std::to_string(c.probe.steps); },
        [](TrainConfig& c, const std::string& v) { c.probe.steps = parse_int<std::int64_t>(v); }));
    f.push_back(field(
        "probe.lr", [](const TrainConfig& c) { return format_double(c.probe.lr); },
        [](TrainConfig& c, const std::string& v) { c.probe.lr = parse_double(v); }));
    f.push_back(field(
        "probe.weight_decay", [](const TrainConfig& c) { return format_double(c.probe.weight_decay); },
        [](TrainConfig& c, const std::string& v) { c.probe.weight_decay = parse_double(v); }));
    auto ft_int = [&f](const std::string& key, std::int64_t FinetuneConfig::*m) {
      f.push_back(field(
          "finetune." + key, [m](const TrainConfig& c) { return std::to_string(c.finetune.*m); },
          [m](TrainConfig& c, const std::string& v) { c.finetune.*m = parse_int<std::int64_t>(v); }));
    };
    auto ft_real = [&f](const std::string& key, double FinetuneConfig::*m) {
      f.push_back(field(
          "finetune." + key, [m](const TrainConfig& c) { return format_double(c.finetune.*m); },
          [m](TrainConfig& c, const std::string& v) { c.finetune.*m = parse_double(v); }));
    };
    ft_int("epochs", &FinetuneConfig::epochs);
    ft_int("batch_size", &FinetuneConfig::batch_size);
    ft_real("base_lr", &FinetuneConfig::base_lr);
    ft_real("warmup_fraction", &FinetuneConfig::warmup_fraction);
    ft_real("layer_decay", &FinetuneConfig::layer_decay);
    ft_real("drop_path", &FinetuneConfig::drop_path);
    ft_real("weight_decay", &FinetuneConfig::weight_decay);
    return f;
  }();
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void TrainConfig::validate() const {
  if (image_size <= 0) throw ConfigError("image_size must be positive");
  if (encoder.image_size != image_size) throw ConfigError("encoder image size differs from image_size");
  if (num_classes < 1) throw ConfigError("num_classes must be positive");
  for (const DataSource* d : {&data, &eval})
    if (d->source == "synthetic" && d->synthetic_count == 0) throw ConfigError("synthetic_count must be positive");
  mask.validate(image_size);
  encoder.validate();
  if (mask.patch_size % encoder.patch_size != 0)
    throw ConfigError("mask.patch_size " + std::to_string(mask.patch_size) + " must be a multiple of encoder.patch_size " +
                      std::to_string(encoder.patch_size));
  target.validate(image_size, encoder.patch_size);
  if (target.kind == TargetKind::clusters && (palette_iterations < 1 || palette_sample < static_cast<std::size_t>(target.palette_size)))
    throw ConfigError("palette fitting needs at least one iteration and palette_size samples");
  if (!(base_lr >= 0)) throw ConfigError("schedule.base_lr must be non-negative");
  if (!(warmup_fraction >= 0 && warmup_fraction <= 1)) throw ConfigError("schedule.warmup_fraction must lie in [0, 1]");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("optim betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("optim.eps must be positive");
  if (!(weight_decay >= 0)) throw ConfigError("optim.weight_decay must be non-negative");
  if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (epochs < 0 || steps < 0 || (epochs == 0 && steps == 0)) throw ConfigError("train.epochs or train.steps must be positive");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be non-negative");
  if (probe.steps < 1 || !(probe.lr > 0) || !(probe.weight_decay >= 0)) throw ConfigError("invalid probe settings");
  if (finetune.epochs < 1 || finetune.batch_size < 1 || !(finetune.base_lr >= 0) ||
      !(finetune.layer_decay > 0 && finetune.layer_decay <= 1) || !(finetune.drop_path >= 0 && finetune.drop_path < 1) ||
      !(finetune.warmup_fraction >= 0 && finetune.warmup_fraction <= 1) || !(finetune.weight_decay >= 0))
    throw ConfigError("invalid finetune settings");
  schedule_spec(1).validate();
}

std::int64_t TrainConfig::total_steps(std::size_t n) const {
  if (steps > 0) return steps;
  const auto b = static_cast<std::size_t>(batch_size);
  return epochs * static_cast<std::int64_t>((n + b - 1) / b);
}

ScheduleSpec TrainConfig::schedule_spec(std::size_t n) const {
  ScheduleSpec s;
  s.kind = schedule;
  s.base_lr = base_lr;
  s.total_steps = total_steps(n);
  s.warmup_steps = std::llround(warmup_fraction * static_cast<double>(s.total_steps));
  s.step_milestones = step_milestones;
  s.step_factor = step_factor;
  return s;
}

HeadConfig TrainConfig::head_config() const {
  return {head, head_output_dim(target, image_size, encoder.patch_size)};
}

bool operator==(const TrainConfig& a, const TrainConfig& b) { return render_config(a) == render_config(b); }

std::string render_config(const TrainConfig& config) {
  std::string out;
  for (const Field& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

TrainConfig parse_config(const std::string& text) {
  std::map<std::string, const Field*> by_key;
  for (const Field& f : fields()) by_key[f.key] = &f;
  TrainConfig config;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto where = "config line " + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->second->set(config, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  for (const Field& f : fields())
    if (!seen.count(f.key)) throw ConfigError("config: missing key '" + f.key + "'");
  config.validate();
  return config;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::uint64_t config_hash(const TrainConfig& config) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : render_config(config)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace mimlab
