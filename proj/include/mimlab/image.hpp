#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mimlab/tensor.hpp"

namespace mimlab {

/// RGB image stored channel-major as a 3 x H x W tensor.
class Image {
 public:
  Image() = default;
  Image(Index height, Index width) : rgb_({3, height, width}) {}
  explicit Image(Tensor<float> rgb);

  Index height() const { return rgb_.rank() == 3 ? rgb_.dim(1) : 0; }
  Index width() const { return rgb_.rank() == 3 ? rgb_.dim(2) : 0; }

  float& at(Index c, Index y, Index x) { return rgb_[(c * height() + y) * width() + x]; }
  float at(Index c, Index y, Index x) const { return rgb_[(c * height() + y) * width() + x]; }

  const Tensor<float>& rgb() const { return rgb_; }
  Tensor<float>& rgb() { return rgb_; }

  friend bool operator==(const Image& a, const Image& b) { return a.rgb_ == b.rgb_; }

 private:
  Tensor<float> rgb_;
};

using ChannelStats = std::array<float, 3>;

/// Binary PPM (P6, maxval 255). Bytes map to b / 255.
Image decode_ppm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_ppm(const Image& image);
Image load_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);

/// Content hash of an image (FNV-1a over the float payload).
std::uint64_t image_hash(const Image& image);

/// Per-channel mean and standard deviation over a set of images.
void channel_stats(std::span<const Image> images, ChannelStats& mean, ChannelStats& stddev);

struct ManifestEntry {
  std::string source;  // file path, or "synthetic:<seed>:<index>"
  int label = 0;
};

/// Line-based dataset listing: `mean=r,g,b`, `std=r,g,b` header lines then
/// one `path<TAB>label` per image.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  ChannelStats mean{0.5f, 0.5f, 0.5f};
  ChannelStats stddev{0.25f, 0.25f, 0.25f};

  int num_classes() const;
  /// Labels must be dense in [0, num_classes).
  void validate() const;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Images with labels and the normalization statistics of the corpus.
struct Dataset {
  std::vector<Image> images;
  std::vector<int> labels;
  DatasetManifest manifest;

  std::size_t size() const { return images.size(); }
};

/// Loads every file listed in a manifest; relative paths resolve against
/// the manifest's directory.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes a dataset as PPM files plus manifest.txt under `dir`.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);

}  // namespace mimlab
