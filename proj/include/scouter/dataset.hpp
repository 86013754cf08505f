#pragma once

#include "scouter/common.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scouter {

/// H×W×ch image, values in [0,1], stored row-major with channels innermost.
struct Image {
  Index height = 0, width = 0, channels = 1;
  Eigen::VectorXd pixels;

  Image() = default;
  Image(Index h, Index w, Index c = 1) : height(h), width(w), channels(c), pixels(Eigen::VectorXd::Zero(h * w * c)) {}

  Index pixel_count() const { return height * width; }
  double& at(Index y, Index x, Index c = 0) { return pixels[(y * width + x) * channels + c]; }
  double at(Index y, Index x, Index c = 0) const { return pixels[(y * width + x) * channels + c]; }
};

/// Ground-truth object region, true inside.
using RegionMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LabeledDataset {
  std::vector<Image> images;
  std::vector<Index> labels;
  std::optional<std::vector<RegionMask>> masks;
  Index num_classes = 0;

  Index size() const { return Index(images.size()); }
  void validate() const;
  LabeledDataset subset(std::span<const Index> indices) const;
  /// First `count` samples (or all when count exceeds the size).
  LabeledDataset head(Index count) const;
};

struct PixelStatistics {
  double mean = 0.0;
  double std = 1.0;
};
/// Mean and standard deviation over every pixel value in the set.
PixelStatistics pixel_statistics(const LabeledDataset& data);

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// MNIST container: magic 0x00000803 images / 0x00000801 labels, big-endian dims.
LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);
/// Writes images (quantized to bytes) and labels in the IDX layout.
void save_idx(const LabeledDataset& data, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path);
/// Masks are stored as an IDX image file, 0 background / 255 region.
std::vector<RegionMask> load_idx_masks(const std::filesystem::path& path);
void save_idx_masks(const std::vector<RegionMask>& masks, const std::filesystem::path& path);

/// Synthetic square/disk/cross/triangle images on a noisy background, with
/// exact support masks. Classes cycle so counts are balanced within one.
LabeledDataset gen_shapes(Index n_samples, std::uint64_t seed, Index size = 28);

/// Class-named subdirectories holding PGM or PNG images; classes are indexed
/// in lexicographic directory order.
LabeledDataset load_image_directory(const std::filesystem::path& root, std::vector<std::string>* class_names = nullptr);

/// Bounding box of pixels brighter than `threshold` (any channel) as a region.
RegionMask ink_bounding_box(const Image& image, double threshold = 0.1);
std::vector<RegionMask> ink_bounding_boxes(const LabeledDataset& data, double threshold = 0.1);

struct DataSplits {
  LabeledDataset train;
  LabeledDataset val;
};

struct DataSourceOptions {
  Index shapes_train = 2000;
  Index shapes_val = 500;
  Index shapes_size = 28;
  std::uint64_t shapes_seed = 0;
  Index train_limit = 0;  // 0 keeps everything
  Index val_limit = 0;
};

/// Resolves a dataset location:
///   "shapes"                       synthetic shapes, val drawn from a derived seed
///   directory with IDX files       train-images-idx3-ubyte / train-labels-idx1-ubyte and the t10k-*
///                                  pair; masks from *-masks-idx3-ubyte when present, else ink
///                                  bounding boxes
///   directory with train/ and val/ class-named image trees
DataSplits load_data_source(const std::string& where, const DataSourceOptions& options = {});

/// Packs samples into an [N×H×W×ch] tensor; `flip[i]` mirrors sample i horizontally.
Tensor make_batch(const LabeledDataset& data, std::span<const Index> indices, const std::vector<bool>* flip = nullptr);
Tensor make_batch(std::span<const Image> images);

}  // namespace scouter
