#include "mimlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mimlab/error.hpp"

namespace mimlab {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out.insert(out.end(), s.begin(), s.end());
  }
  void tensor(const Tensor<float>& t) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) pod<std::uint64_t>(static_cast<std::uint64_t>(d));
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data().data());
    out.insert(out.end(), p, p + t.size() * static_cast<Index>(sizeof(float)));
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes(b) {}

  template <typename T>
  T pod(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string str(const char* what) {
    const auto n = pod<std::uint64_t>(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
  Tensor<float> tensor(const char* what) {
    const std::size_t start = pos;
    const auto rank = pod<std::uint32_t>(what);
    if (rank > 8) throw ParseError(std::string("checkpoint: implausible rank in ") + what, start);
    Shape shape;
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = pod<std::uint64_t>(what);
      if (d > (std::uint64_t{1} << 40)) throw ParseError(std::string("checkpoint: implausible extent in ") + what, pos - 8);
      shape.push_back(static_cast<Index>(d));
      count *= d;
    }
    need(count * sizeof(float), what);
    Tensor<float> t(shape);
    std::memcpy(t.data().data(), bytes.data() + pos, count * sizeof(float));
    pos += count * sizeof(float);
    return t;
  }
  void need(std::uint64_t n, const char* what) const {
    if (n > bytes.size() - pos)
      throw ParseError(std::string("checkpoint: truncated while reading ") + what, bytes.size());
  }

  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

constexpr char kMagic[4] = {'S', 'M', 'I', 'M'};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainState& state) {
  Writer w;
  w.out.insert(w.out.end(), std::begin(kMagic), std::end(kMagic));
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.str(render_config(state.config));
  w.pod<std::uint64_t>(config_hash(state.config));

  const auto named = state.model.named();
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    w.str(name);
    w.tensor(*t);
  }

  w.pod<std::uint32_t>(state.palette ? 1u : 0u);
  if (state.palette) {
    Tensor<float> centers({state.palette->size(), 3});
    for (Index k = 0; k < state.palette->size(); ++k)
      for (Index c = 0; c < 3; ++c) centers.at(k, c) = state.palette->centers[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
    w.str("palette");
    w.tensor(centers);
  }

  if (state.optim.size() != named.size()) throw ShapeError("checkpoint: optimizer state does not match parameters");
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(state.optim.size()));
  for (const auto& o : state.optim) {
    w.pod<std::int64_t>(o.t);
    w.tensor(o.m);
    w.tensor(o.v);
  }

  w.pod<std::int64_t>(state.step);
  w.str(state.rng.state());
  w.pod<std::uint64_t>(state.order.size());
  for (auto i : state.order) w.pod<std::uint32_t>(i);
  return std::move(w.out);
}

TrainState decode_checkpoint(std::span<const std::uint8_t> bytes, std::optional<std::uint64_t> expected_hash) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw ParseError("checkpoint: bad magic (not a SMIM file)", 0);
  r.pos = 4;
  const auto version = r.pod<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw ParseError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                     std::to_string(kCheckpointVersion) + ")", 4);

  const std::size_t config_at = r.pos;
  TrainState state;
  try {
    state.config = parse_config(r.str("config"));
  } catch (const ConfigError& e) {
    throw ParseError(std::string("checkpoint: embedded config invalid: ") + e.what(), config_at);
  }
  const std::size_t hash_at = r.pos;
  const auto hash = r.pod<std::uint64_t>("config hash");
  if (hash != config_hash(state.config)) throw ParseError("checkpoint: config hash does not match embedded config", hash_at);
  if (expected_hash && *expected_hash != hash)
    throw ConfigError("checkpoint was written for a different config (hash mismatch); use --force to override");

  Rng skeleton(0);
  state.model = init_model(state.config.encoder, state.config.head_config(), skeleton);
  auto named = state.model.named();
  const std::size_t count_at = r.pos;
  const auto count = r.pod<std::uint32_t>("parameter count");
  if (count != named.size())
    throw ParseError("checkpoint: " + std::to_string(count) + " parameters, config implies " + std::to_string(named.size()),
                     count_at);
  for (auto& [name, t] : named) {
    const std::size_t at = r.pos;
    const std::string stored = r.str("parameter name");
    if (stored != name) throw ParseError("checkpoint: expected parameter '" + name + "', found '" + stored + "'", at);
    Tensor<float> value = r.tensor("parameter data");
    if (value.shape() != t->shape())
      throw ParseError("checkpoint: parameter '" + name + "' has shape " + shape_string(value.shape()) + ", expected " +
                       shape_string(t->shape()), at);
    *t = std::move(value);
  }

  const auto buffers = r.pod<std::uint32_t>("buffer count");
  for (std::uint32_t i = 0; i < buffers; ++i) {
    const std::size_t at = r.pos;
    const std::string name = r.str("buffer name");
    if (name != "palette") throw ParseError("checkpoint: unknown buffer '" + name + "'", at);
    const Tensor<float> centers = r.tensor("palette");
    if (centers.rank() != 2 || centers.cols() != 3) throw ParseError("checkpoint: palette must be K x 3", at);
    Palette p;
    p.seed = state.config.seed;
    for (Index k = 0; k < centers.rows(); ++k) p.centers.push_back({centers.at(k, 0), centers.at(k, 1), centers.at(k, 2)});
    state.palette = p;
    state.config.target.palette = p;
  }

  const std::size_t optim_at = r.pos;
  const auto n_optim = r.pod<std::uint32_t>("optimizer count");
  if (n_optim != named.size()) throw ParseError("checkpoint: optimizer state does not match parameters", optim_at);
  for (std::size_t i = 0; i < n_optim; ++i) {
    AdamWState<float> o;
    o.t = r.pod<std::int64_t>("optimizer step");
    o.m = r.tensor("first moment");
    o.v = r.tensor("second moment");
    if (o.m.shape() != named[i].second->shape() || o.v.shape() != named[i].second->shape())
      throw ParseError("checkpoint: optimizer moments for '" + named[i].first + "' have the wrong shape", optim_at);
    state.optim.push_back(std::move(o));
  }

  state.step = r.pod<std::int64_t>("step");
  const std::size_t rng_at = r.pos;
  try {
    state.rng.set_state(r.str("rng state"));
  } catch (const Error& e) {
    throw ParseError(std::string("checkpoint: bad rng state: ") + e.what(), rng_at);
  }
  const auto n_order = r.pod<std::uint64_t>("epoch order");
  r.need(n_order * sizeof(std::uint32_t), "epoch order");
  for (std::uint64_t i = 0; i < n_order; ++i) state.order.push_back(r.pod<std::uint32_t>("epoch order"));
  if (r.pos != bytes.size()) throw ParseError("checkpoint: trailing bytes after end of data", r.pos);
  return state;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  const auto bytes = encode_checkpoint(state);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

TrainState load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, expected_hash);
}

}  // namespace mimlab
