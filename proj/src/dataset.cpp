#include "scouter/dataset.hpp"

#include "scouter/image_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>

namespace scouter {

namespace fs = std::filesystem;

void LabeledDataset::validate() const {
  if (images.size() != labels.size()) throw DatasetError("dataset: image and label counts differ");
  if (masks && masks->size() != images.size()) throw DatasetError("dataset: mask count differs from image count");
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& im = images[i];
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw DatasetError("dataset: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(num_classes) + ")");
    if (im.pixels.size() != im.height * im.width * im.channels) throw DatasetError("dataset: image storage size");
    if (im.pixels.size() > 0 && (im.pixels.minCoeff() < 0.0 || im.pixels.maxCoeff() > 1.0))
      throw DatasetError("dataset: pixel outside [0,1]");
    if (masks && ((*masks)[i].rows() != im.height || (*masks)[i].cols() != im.width))
      throw DatasetError("dataset: mask dims differ from image dims");
  }
}

LabeledDataset LabeledDataset::subset(std::span<const Index> indices) const {
  LabeledDataset out;
  out.num_classes = num_classes;
  if (masks) out.masks.emplace();
  for (Index i : indices) {
    out.images.push_back(images.at(std::size_t(i)));
    out.labels.push_back(labels.at(std::size_t(i)));
    if (masks) out.masks->push_back((*masks)[std::size_t(i)]);
  }
  return out;
}

LabeledDataset LabeledDataset::head(Index count) const {
  std::vector<Index> idx(std::size_t(std::min(count, size())));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = Index(i);
  return subset(idx);
}

PixelStatistics pixel_statistics(const LabeledDataset& data) {
  double sum = 0.0, sq = 0.0, count = 0.0;
  for (const Image& im : data.images) {
    sum += im.pixels.sum();
    sq += im.pixels.squaredNorm();
    count += double(im.pixels.size());
  }
  if (count == 0.0) throw DatasetError("pixel_statistics: empty dataset");
  const double mean = sum / count;
  const double var = std::max(sq / count - mean * mean, 0.0);
  return {mean, var > 0.0 ? std::sqrt(var) : 1.0};
}

namespace {

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t(b[at]) << 24) | (std::uint32_t(b[at + 1]) << 16) | (std::uint32_t(b[at + 2]) << 8) |
         std::uint32_t(b[at + 3]);
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b{char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
  out.write(b.data(), 4);
}

struct IdxImages {
  std::uint32_t count = 0, rows = 0, cols = 0;
  std::vector<unsigned char> bytes;
  std::size_t offset = 16;
};

IdxImages read_idx_images(const fs::path& path) {
  IdxImages r;
  r.bytes = read_bytes(path);
  if (r.bytes.size() < 16) throw DatasetError(path.string() + ": truncated IDX header");
  if (be32(r.bytes, 0) != 0x00000803) throw DatasetError(path.string() + ": bad magic for IDX images");
  r.count = be32(r.bytes, 4);
  r.rows = be32(r.bytes, 8);
  r.cols = be32(r.bytes, 12);
  if (r.bytes.size() != 16 + std::size_t(r.count) * r.rows * r.cols)
    throw DatasetError(path.string() + ": payload size does not match header (truncated?)");
  return r;
}

}  // namespace

LabeledDataset load_idx(const fs::path& images_path, const fs::path& labels_path) {
  const IdxImages img = read_idx_images(images_path);
  const auto lab = read_bytes(labels_path);
  if (lab.size() < 8) throw DatasetError(labels_path.string() + ": truncated IDX header");
  if (be32(lab, 0) != 0x00000801) throw DatasetError(labels_path.string() + ": bad magic for IDX labels");
  const std::uint32_t n = be32(lab, 4);
  if (lab.size() != 8 + std::size_t(n)) throw DatasetError(labels_path.string() + ": payload size does not match header");
  if (n != img.count) throw DatasetError("IDX image/label count mismatch");

  LabeledDataset data;
  const std::size_t px = std::size_t(img.rows) * img.cols;
  data.images.reserve(n);
  Index max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    Image im(img.rows, img.cols, 1);
    const unsigned char* src = img.bytes.data() + img.offset + i * px;
    for (std::size_t p = 0; p < px; ++p) im.pixels[Index(p)] = double(src[p]) / 255.0;
    data.images.push_back(std::move(im));
    data.labels.push_back(lab[8 + i]);
    max_label = std::max<Index>(max_label, lab[8 + i]);
  }
  data.num_classes = max_label + 1;
  data.validate();
  return data;
}

void save_idx(const LabeledDataset& data, const fs::path& images_path, const fs::path& labels_path) {
  if (data.size() == 0) throw DatasetError("save_idx: empty dataset");
  const Index h = data.images[0].height, w = data.images[0].width;
  std::ofstream im(images_path, std::ios::binary), lb(labels_path, std::ios::binary);
  if (!im || !lb) throw DatasetError("save_idx: cannot open output files");
  put_be32(im, 0x00000803);
  put_be32(im, std::uint32_t(data.size()));
  put_be32(im, std::uint32_t(h));
  put_be32(im, std::uint32_t(w));
  put_be32(lb, 0x00000801);
  put_be32(lb, std::uint32_t(data.size()));
  for (Index i = 0; i < data.size(); ++i) {
    const Image& x = data.images[std::size_t(i)];
    if (x.height != h || x.width != w || x.channels != 1) throw DatasetError("save_idx: images must be uniform grayscale");
    for (Index p = 0; p < x.pixels.size(); ++p) im.put(char(std::lround(x.pixels[p] * 255.0)));
    lb.put(char(data.labels[std::size_t(i)]));
  }
}

std::vector<RegionMask> load_idx_masks(const fs::path& path) {
  const IdxImages img = read_idx_images(path);
  std::vector<RegionMask> masks;
  const std::size_t px = std::size_t(img.rows) * img.cols;
  for (std::uint32_t i = 0; i < img.count; ++i) {
    RegionMask m(img.rows, img.cols);
    for (std::size_t p = 0; p < px; ++p) m.data()[p] = img.bytes[img.offset + i * px + p] >= 128;
    masks.push_back(std::move(m));
  }
  return masks;
}

void save_idx_masks(const std::vector<RegionMask>& masks, const fs::path& path) {
  if (masks.empty()) throw DatasetError("save_idx_masks: no masks");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("save_idx_masks: cannot open " + path.string());
  put_be32(out, 0x00000803);
  put_be32(out, std::uint32_t(masks.size()));
  put_be32(out, std::uint32_t(masks[0].rows()));
  put_be32(out, std::uint32_t(masks[0].cols()));
  for (const auto& m : masks)
    for (Index p = 0; p < m.size(); ++p) out.put(m.data()[p] ? char(255) : char(0));
}

LabeledDataset gen_shapes(Index n_samples, std::uint64_t seed, Index size) {
  if (size < 12) throw DatasetError("gen_shapes: image size must be >= 12");
  Rng rng(seed);
  std::uniform_real_distribution<double> noise(0.0, 0.25), ink(0.7, 1.0);
  const Index r_min = std::max<Index>(3, size / 7), r_max = std::max<Index>(r_min, size / 3);
  std::uniform_int_distribution<Index> radius(r_min, r_max);

  std::vector<Index> labels(static_cast<std::size_t>(n_samples));
  for (Index i = 0; i < n_samples; ++i) labels[std::size_t(i)] = i % 4;
  for (Index i = n_samples - 1; i > 0; --i)
    std::swap(labels[std::size_t(i)], labels[std::size_t(std::uniform_int_distribution<Index>(0, i)(rng))]);

  LabeledDataset data;
  data.num_classes = 4;
  data.masks.emplace();
  for (Index i = 0; i < n_samples; ++i) {
    const Index label = labels[std::size_t(i)];
    const Index r = radius(rng);
    std::uniform_int_distribution<Index> centre(r, size - 1 - r);
    const Index cy = centre(rng), cx = centre(rng);
    const double level = ink(rng);
    const Index bar = std::max<Index>(1, r / 3);
    Image im(size, size, 1);
    RegionMask mask = RegionMask::Constant(size, size, false);
    for (Index y = 0; y < size; ++y)
      for (Index x = 0; x < size; ++x) {
        const Index dy = y - cy, dx = x - cx;
        bool inside = false;
        switch (label) {
          case 0:  // square
            inside = std::abs(dx) <= r && std::abs(dy) <= r;
            break;
          case 1:  // disk
            inside = dx * dx + dy * dy <= r * r;
            break;
          case 2:  // cross
            inside = (std::abs(dx) <= bar && std::abs(dy) <= r) || (std::abs(dy) <= bar && std::abs(dx) <= r);
            break;
          default:  // upward triangle, apex at (cx, cy - r)
            inside = dy >= -r && dy <= r && 2 * std::abs(dx) <= dy + r;
            break;
        }
        const double bg = noise(rng);
        im.at(y, x) = inside ? level : bg;
        mask(y, x) = inside;
      }
    data.images.push_back(std::move(im));
    data.labels.push_back(label);
    data.masks->push_back(std::move(mask));
  }
  data.validate();
  return data;
}

LabeledDataset load_image_directory(const fs::path& root, std::vector<std::string>* class_names) {
  if (!fs::is_directory(root)) throw DatasetError("not a directory: " + root.string());
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) classes.push_back(e.path());
  std::sort(classes.begin(), classes.end());
  if (classes.size() < 2) throw DatasetError(root.string() + ": need at least two class directories");

  LabeledDataset data;
  data.num_classes = Index(classes.size());
  bool with_all_masks = true;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (class_names) class_names->push_back(classes[c].filename().string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(classes[c])) {
      const auto ext = e.path().extension().string();
      const bool is_mask = e.path().stem().extension() == ".mask";
      if (e.is_regular_file() && !is_mask && (ext == ".pgm" || ext == ".png")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      Image im = read_image(f);
      fs::path mask_path = f;
      mask_path.replace_extension(".mask.pgm");
      if (fs::exists(mask_path)) {
        if (!data.masks) data.masks.emplace();
        data.masks->push_back(read_mask_pgm(mask_path));
      } else {
        with_all_masks = false;
      }
      if (!data.images.empty() && (im.height != data.images[0].height || im.width != data.images[0].width ||
                                   im.channels != data.images[0].channels))
        throw DatasetError(f.string() + ": image size differs from the rest of the dataset");
      data.images.push_back(std::move(im));
      data.labels.push_back(Index(c));
    }
  }
  if (data.images.empty()) throw DatasetError(root.string() + ": no images found");
  if (!with_all_masks) data.masks.reset();
  data.validate();
  return data;
}

RegionMask ink_bounding_box(const Image& image, double threshold) {
  Index y0 = image.height, y1 = -1, x0 = image.width, x1 = -1;
  for (Index y = 0; y < image.height; ++y)
    for (Index x = 0; x < image.width; ++x)
      for (Index c = 0; c < image.channels; ++c)
        if (image.at(y, x, c) > threshold) {
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
        }
  RegionMask m = RegionMask::Constant(image.height, image.width, false);
  if (y1 < 0) return RegionMask::Constant(image.height, image.width, true);
  m.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1).setConstant(true);
  return m;
}

std::vector<RegionMask> ink_bounding_boxes(const LabeledDataset& data, double threshold) {
  std::vector<RegionMask> out;
  out.reserve(data.images.size());
  for (const auto& im : data.images) out.push_back(ink_bounding_box(im, threshold));
  return out;
}

Tensor make_batch(const LabeledDataset& data, std::span<const Index> indices, const std::vector<bool>* flip) {
  if (indices.empty()) throw DatasetError("make_batch: no samples");
  const Image& first = data.images.at(std::size_t(indices[0]));
  const Index h = first.height, w = first.width, c = first.channels, block = h * w * c;
  Tensor::Vector v(Index(indices.size()) * block);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Image& im = data.images.at(std::size_t(indices[i]));
    if (im.height != h || im.width != w || im.channels != c) throw DatasetError("make_batch: mixed image sizes");
    if (flip && (*flip)[i]) {
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x)
          for (Index ch = 0; ch < c; ++ch) v[Index(i) * block + (y * w + x) * c + ch] = im.at(y, w - 1 - x, ch);
    } else {
      v.segment(Index(i) * block, block) = im.pixels;
    }
  }
  return Tensor({Index(indices.size()), h, w, c}, std::move(v));
}

Tensor make_batch(std::span<const Image> images) {
  if (images.empty()) throw DatasetError("make_batch: no images");
  const Index h = images[0].height, w = images[0].width, c = images[0].channels, block = h * w * c;
  Tensor::Vector v(Index(images.size()) * block);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].pixels.size() != block) throw DatasetError("make_batch: mixed image sizes");
    v.segment(Index(i) * block, block) = images[i].pixels;
  }
  return Tensor({Index(images.size()), h, w, c}, std::move(v));
}

DataSplits load_data_source(const std::string& where, const DataSourceOptions& options) {
  DataSplits out;
  if (where == "shapes") {
    out.train = gen_shapes(options.shapes_train, options.shapes_seed, options.shapes_size);
    out.val = gen_shapes(options.shapes_val, mix_seed(options.shapes_seed, 1), options.shapes_size);
  } else {
    const fs::path root(where);
    if (!fs::is_directory(root)) throw DatasetError("dataset not found: " + where);
    if (fs::exists(root / "train-images-idx3-ubyte")) {
      auto split = [&](const std::string& prefix) {
        LabeledDataset d = load_idx(root / (prefix + "-images-idx3-ubyte"), root / (prefix + "-labels-idx1-ubyte"));
        const fs::path masks = root / (prefix + "-masks-idx3-ubyte");
        d.masks = fs::exists(masks) ? load_idx_masks(masks) : ink_bounding_boxes(d);
        d.validate();
        return d;
      };
      out.train = split("train");
      out.val = split("t10k");
      out.train.num_classes = out.val.num_classes = std::max(out.train.num_classes, out.val.num_classes);
    } else if (fs::is_directory(root / "train") && fs::is_directory(root / "val")) {
      out.train = load_image_directory(root / "train");
      out.val = load_image_directory(root / "val");
      if (out.train.num_classes != out.val.num_classes)
        throw DatasetError(where + ": train and val have different class counts");
    } else {
      throw DatasetError(where + ": expected IDX files or train/ and val/ subdirectories");
    }
  }
  if (options.train_limit > 0) out.train = out.train.head(options.train_limit);
  if (options.val_limit > 0) out.val = out.val.head(options.val_limit);
  return out;
}

}  // namespace scouter
