#include "mimlab/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

namespace mimlab {

Image::Image(Tensor<float> rgb) : rgb_(std::move(rgb)) {
  if (rgb_.rank() != 3 || rgb_.dim(0) != 3)
    throw ShapeError("Image: expected a 3 x H x W tensor, got " + shape_string(rgb_.shape()));
}

namespace {

class PpmHeaderReader {
 public:
  explicit PpmHeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const auto c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(c)) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000) throw ParseError(std::string("ppm: ") + what + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("ppm: expected ") + what, start);
    return value;
  }

  void single_whitespace() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
      throw ParseError("ppm: expected whitespace after maxval", pos_);
    ++pos_;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw ParseError("ppm: bad magic, expected P6", 0);
  PpmHeaderReader reader(bytes.subspan(2));
  const long width = reader.number("width");
  const long height = reader.number("height");
  const std::size_t maxval_at = 2 + reader.pos();
  const long maxval = reader.number("maxval");
  if (maxval != 255) throw ParseError("ppm: unsupported maxval " + std::to_string(maxval), maxval_at);
  reader.single_whitespace();
  const std::size_t data_at = 2 + reader.pos();
  if (width <= 0 || height <= 0) throw ParseError("ppm: empty image", data_at);

  const std::size_t need = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3;
  if (bytes.size() - data_at < need)
    throw ParseError("ppm: truncated pixel data, expected " + std::to_string(need) + " bytes", bytes.size());

  Image img(height, width);
  for (long y = 0; y < height; ++y)
    for (long x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<float>(bytes[data_at + (static_cast<std::size_t>(y * width + x) * 3) + c]) / 255.0f;
  return img;
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + static_cast<std::size_t>(image.width() * image.height() * 3));
  for (Index y = 0; y < image.height(); ++y)
    for (Index x = 0; x < image.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
      }
  return out;
}

Image load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_ppm(bytes);
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  const auto bytes = encode_ppm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::uint64_t image_hash(const Image& image) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  mix(static_cast<std::uint64_t>(image.height()));
  mix(static_cast<std::uint64_t>(image.width()));
  const auto& data = image.rgb().data();
  for (Index i = 0; i < data.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &data[i], sizeof bits);
    mix(bits);
  }
  return h;
}

void channel_stats(std::span<const Image> images, ChannelStats& mean, ChannelStats& stddev) {
  for (int c = 0; c < 3; ++c) {
    double s = 0.0, s2 = 0.0;
    double n = 0.0;
    for (const Image& img : images) {
      const Index plane = img.height() * img.width();
      const float* p = img.rgb().data().data() + c * plane;
      for (Index i = 0; i < plane; ++i) {
        s += p[i];
        s2 += static_cast<double>(p[i]) * p[i];
      }
      n += static_cast<double>(plane);
    }
    if (n == 0) throw ConfigError("channel_stats: no pixels");
    const double m = s / n;
    const double var = std::max(0.0, s2 / n - m * m);
    mean[static_cast<std::size_t>(c)] = static_cast<float>(m);
    stddev[static_cast<std::size_t>(c)] = static_cast<float>(std::max(std::sqrt(var), 1e-6));
  }
}

int DatasetManifest::num_classes() const {
  int k = 0;
  for (const auto& e : entries) k = std::max(k, e.label + 1);
  return k;
}

void DatasetManifest::validate() const {
  std::set<int> seen;
  for (const auto& e : entries) {
    if (e.label < 0) throw ConfigError("manifest: negative label for " + e.source);
    seen.insert(e.label);
  }
  const int k = num_classes();
  if (static_cast<int>(seen.size()) != k) throw ConfigError("manifest: labels are not dense in [0, num_classes)");
}

namespace {

ChannelStats parse_triplet(const std::string& text, std::size_t line) {
  ChannelStats v{};
  std::istringstream in(text);
  std::string part;
  for (std::size_t i = 0; i < 3; ++i) {
    if (!std::getline(in, part, ',')) throw ParseError("manifest: expected three comma-separated values", line);
    try {
      v[i] = std::stof(part);
    } catch (const std::exception&) {
      throw ParseError("manifest: bad number '" + part + "'", line);
    }
  }
  return v;
}

std::string format_triplet(const ChannelStats& v) {
  std::ostringstream out;
  out.precision(9);
  out << v[0] << ',' << v[1] << ',' << v[2];
  return out.str();
}

}  // namespace

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("mean=", 0) == 0) {
      m.mean = parse_triplet(line.substr(5), lineno);
    } else if (line.rfind("std=", 0) == 0) {
      m.stddev = parse_triplet(line.substr(4), lineno);
    } else {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw ParseError("manifest: expected path<TAB>label", lineno);
      ManifestEntry e;
      e.source = line.substr(0, tab);
      try {
        e.label = std::stoi(line.substr(tab + 1));
      } catch (const std::exception&) {
        throw ParseError("manifest: bad label", lineno);
      }
      m.entries.push_back(std::move(e));
    }
  }
  m.validate();
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "mean=" << format_triplet(manifest.mean) << '\n';
  out << "std=" << format_triplet(manifest.stddev) << '\n';
  for (const auto& e : manifest.entries) out << e.source << '\t' << e.label << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  Dataset ds;
  ds.manifest = read_manifest(manifest_path);
  const auto base = manifest_path.parent_path();
  for (const auto& e : ds.manifest.entries) {
    std::filesystem::path p(e.source);
    if (p.is_relative()) p = base / p;
    ds.images.push_back(load_ppm(p));
    ds.labels.push_back(e.label);
  }
  return ds;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::filesystem::create_directories(dir);
  DatasetManifest m = dataset.manifest;
  m.entries.clear();
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%05zu.ppm", i);
    write_ppm(dir / name, dataset.images[i]);
    m.entries.push_back({name, dataset.labels[i]});
  }
  write_manifest(dir / "manifest.txt", m);
}

}  // namespace mimlab
