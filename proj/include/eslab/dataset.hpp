#pragma once

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "eslab/common.hpp"
#include "eslab/network.hpp"
#include "eslab/tensor.hpp"

namespace eslab {

/// Hard-labeled samples. inputs is [n, ...sample_shape], labels in [0,K).
struct LabeledDataset {
  Tensor inputs;
  std::vector<int> labels;
  int64_t class_count = 0;
  std::string name;

  int64_t size() const { return inputs.defined() ? inputs.dim(0) : 0; }
  Shape sample_shape() const {
    Shape s(inputs.shape().begin() + 1, inputs.shape().end());
    return s;
  }
};

/// Soft-labeled samples (synthetic pools and oracle answers). Rows of
/// soft_labels live on the probability simplex once normalized; raw defended
/// answers may sum to less than 1 until the caller fills up or renormalizes.
struct SoftDataset {
  Tensor inputs;
  Tensor soft_labels;  // [n, K]
  int64_t epoch_tag = 0;

  int64_t size() const { return inputs.defined() ? inputs.dim(0) : 0; }
  int64_t class_count() const { return soft_labels.defined() ? soft_labels.dim(1) : 0; }
  Shape sample_shape() const {
    Shape s(inputs.shape().begin() + 1, inputs.shape().end());
    return s;
  }

  /// Enforces the on-simplex invariant (row sums within tol of 1).
  void validate(double tol = 1e-6) const {
    const int64_t n = size(), k = class_count();
    for (int64_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < k; ++j) {
        double v = soft_labels.data()[i * k + j];
        if (v < 0.0) throw std::domain_error("soft label has a negative entry");
        s += v;
      }
      if (std::abs(s - 1.0) > tol)
        throw std::domain_error("soft label row sums to " + std::to_string(s) + ", expected 1");
    }
  }
};

/// Gathers rows of a [n, ...] tensor by index (data only, no tape).
inline Tensor take_rows(const Tensor& t, const std::vector<int64_t>& idx) {
  const int64_t row = t.numel() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = static_cast<int64_t>(idx.size());
  std::vector<double> out(idx.size() * static_cast<size_t>(row));
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= t.dim(0)) throw std::invalid_argument("take_rows: index out of range");
    std::memcpy(out.data() + i * row, t.data().data() + idx[i] * row, row * sizeof(double));
  }
  return Tensor(shape, std::move(out));
}

inline std::vector<int> take_labels(const std::vector<int>& labels, const std::vector<int64_t>& idx) {
  std::vector<int> out(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) out[i] = labels[static_cast<size_t>(idx[i])];
  return out;
}

/// Stacks two batches along dim 0 (data only, no tape).
inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank()) throw std::invalid_argument("concat_rows: rank mismatch");
  for (size_t i = 1; i < a.rank(); ++i)
    if (a.dim(i) != b.dim(i)) throw std::invalid_argument("concat_rows: trailing shape mismatch");
  Shape shape = a.shape();
  shape[0] = a.dim(0) + b.dim(0);
  std::vector<double> out;
  out.reserve(a.data().size() + b.data().size());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  return Tensor(shape, std::move(out));
}

namespace detail {

// dim0 sample counts per class, as even as possible (first n%K classes get
// the extra sample)
inline std::vector<int64_t> balanced_counts(int64_t n, int64_t k) {
  std::vector<int64_t> c(static_cast<size_t>(k), n / k);
  for (int64_t i = 0; i < n % k; ++i) ++c[static_cast<size_t>(i)];
  return c;
}

inline void rescale_to_unit_envelope(std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  if (m > 1.0)
    for (double& x : v) x /= m;
}

}  // namespace detail

/// K Gaussian clusters in `dim` dimensions. Cluster centers are drawn once
/// from the seed; classes are balanced within one sample; values end up
/// inside [-1, 1].
inline LabeledDataset gen_blobs(int64_t k, int64_t dim, int64_t n, double spread, uint64_t seed) {
  if (k < 2) throw std::invalid_argument("gen_blobs: need at least 2 classes");
  if (n < k) throw std::invalid_argument("gen_blobs: need at least one sample per class");
  Rng center_rng(mix_seed(seed, 0xb10b5));
  std::vector<double> centers(static_cast<size_t>(k * dim));
  for (double& c : centers) c = center_rng.uniform(-1.0, 1.0);

  auto counts = detail::balanced_counts(n, k);
  Rng rng(mix_seed(seed, 0x5a3b1e));
  std::vector<double> inputs(static_cast<size_t>(n * dim));
  std::vector<int> labels(static_cast<size_t>(n));
  int64_t i = 0;
  for (int64_t c = 0; c < k; ++c) {
    for (int64_t j = 0; j < counts[static_cast<size_t>(c)]; ++j, ++i) {
      labels[static_cast<size_t>(i)] = static_cast<int>(c);
      for (int64_t d = 0; d < dim; ++d)
        inputs[static_cast<size_t>(i * dim + d)] =
            centers[static_cast<size_t>(c * dim + d)] + rng.normal(0.0, spread);
    }
  }
  detail::rescale_to_unit_envelope(inputs);
  return {Tensor({n, dim}, std::move(inputs)), std::move(labels), k, "blobs"};
}

namespace detail {

// ten 8x8 glyphs, digit-shaped enough to be mutually distinct
inline const std::array<std::array<const char*, 8>, 10>& glyph_templates() {
  static const std::array<std::array<const char*, 8>, 10> t = {{
      {"..####..", ".#....#.", ".#....#.", ".#....#.", ".#....#.", ".#....#.", ".#....#.",
       "..####.."},
      {"...#....", "..##....", "...#....", "...#....", "...#....", "...#....", "...#....",
       "..###..."},
      {"..####..", ".#....#.", "......#.", ".....#..", "....#...", "...#....", "..#.....",
       ".######."},
      {"..####..", ".#....#.", "......#.", "...###..", "......#.", "......#.", ".#....#.",
       "..####.."},
      {".#..#...", ".#..#...", ".#..#...", ".######.", "....#...", "....#...", "....#...",
       "....#..."},
      {".######.", ".#......", ".#......", ".#####..", "......#.", "......#.", ".#....#.",
       "..####.."},
      {"..####..", ".#......", ".#......", ".#####..", ".#....#.", ".#....#.", ".#....#.",
       "..####.."},
      {".######.", "......#.", ".....#..", "....#...", "...#....", "...#....", "...#....",
       "...#...."},
      {"..####..", ".#....#.", ".#....#.", "..####..", ".#....#.", ".#....#.", ".#....#.",
       "..####.."},
      {"..####..", ".#....#.", ".#....#.", "..#####.", "......#.", "......#.", ".#....#.",
       "..####.."},
  }};
  return t;
}

}  // namespace detail

/// 10-class 1x8x8 glyph images with pixel noise and small integer shifts;
/// values in [-1, 1], balanced labels.
inline LabeledDataset gen_digits_like(int64_t n, uint64_t seed) {
  if (n < 10) throw std::invalid_argument("gen_digits_like: need at least one sample per class");
  const auto& glyphs = detail::glyph_templates();
  auto counts = detail::balanced_counts(n, 10);
  Rng rng(mix_seed(seed, 0xd161f5));
  std::vector<double> inputs(static_cast<size_t>(n * 64));
  std::vector<int> labels(static_cast<size_t>(n));
  int64_t i = 0;
  for (int64_t c = 0; c < 10; ++c) {
    for (int64_t j = 0; j < counts[static_cast<size_t>(c)]; ++j, ++i) {
      labels[static_cast<size_t>(i)] = static_cast<int>(c);
      const int dy = static_cast<int>(rng.uniform_int(-1, 1));
      const int dx = static_cast<int>(rng.uniform_int(-1, 1));
      for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
          const int sy = y - dy, sx = x - dx;
          double v = -0.8;
          if (sy >= 0 && sy < 8 && sx >= 0 && sx < 8 &&
              glyphs[static_cast<size_t>(c)][static_cast<size_t>(sy)][sx] == '#')
            v = 0.8;
          v += rng.normal(0.0, 0.1);
          inputs[static_cast<size_t>(i * 64 + y * 8 + x)] = std::clamp(v, -1.0, 1.0);
        }
      }
    }
  }
  return {Tensor({n, 1, 8, 8}, std::move(inputs)), std::move(labels), 10, "digits-like"};
}

/// Distribution-shifted sibling of a dataset: every class is displaced by a
/// class-specific direction of length `shift`, then re-clamped to [-1, 1].
/// shift = 0 returns an exact copy.
inline LabeledDataset make_auxiliary(const LabeledDataset& base, double shift, uint64_t seed) {
  LabeledDataset out;
  out.labels = base.labels;
  out.class_count = base.class_count;
  out.name = base.name + "-aux";
  std::vector<double> data = base.inputs.data();
  if (shift != 0.0) {
    const int64_t dim = base.inputs.numel() / base.size();
    std::vector<double> dirs(static_cast<size_t>(base.class_count * dim));
    for (int64_t c = 0; c < base.class_count; ++c) {
      Rng rng(mix_seed(seed, 0xa0c0 + static_cast<uint64_t>(c)));
      double norm = 0.0;
      for (int64_t d = 0; d < dim; ++d) {
        double v = rng.normal(0.0, 1.0);
        dirs[static_cast<size_t>(c * dim + d)] = v;
        norm += v * v;
      }
      norm = std::sqrt(std::max(norm, 1e-12));
      for (int64_t d = 0; d < dim; ++d)
        dirs[static_cast<size_t>(c * dim + d)] *= shift / norm;
    }
    for (int64_t i = 0; i < base.size(); ++i) {
      const int64_t c = base.labels[static_cast<size_t>(i)];
      for (int64_t d = 0; d < dim; ++d) {
        double& v = data[static_cast<size_t>(i * dim + d)];
        v = std::clamp(v + dirs[static_cast<size_t>(c * dim + d)], -1.0, 1.0);
      }
    }
  }
  out.inputs = Tensor(base.inputs.shape(), std::move(data));
  return out;
}

/// Stratified split: per class, the first train share stays in the first
/// set, the rest go to the test set. Disjoint by construction, both sides
/// stay balanced.
inline std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& ds,
                                                               int64_t test_count,
                                                               uint64_t seed) {
  if (test_count <= 0 || test_count >= ds.size())
    throw std::invalid_argument("split_dataset: test count must be in (0, n)");
  std::vector<std::vector<int64_t>> by_class(static_cast<size_t>(ds.class_count));
  for (int64_t i = 0; i < ds.size(); ++i)
    by_class[static_cast<size_t>(ds.labels[static_cast<size_t>(i)])].push_back(i);
  Rng rng(mix_seed(seed, 0x5b117));
  for (auto& v : by_class) rng.shuffle(v);
  auto test_per_class = detail::balanced_counts(test_count, ds.class_count);
  std::vector<int64_t> train_idx, test_idx;
  for (int64_t c = 0; c < ds.class_count; ++c) {
    const auto& v = by_class[static_cast<size_t>(c)];
    const int64_t t = std::min<int64_t>(test_per_class[static_cast<size_t>(c)],
                                        static_cast<int64_t>(v.size()));
    test_idx.insert(test_idx.end(), v.begin(), v.begin() + t);
    train_idx.insert(train_idx.end(), v.begin() + t, v.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  LabeledDataset train{take_rows(ds.inputs, train_idx), take_labels(ds.labels, train_idx),
                       ds.class_count, ds.name + "-train"};
  LabeledDataset test{take_rows(ds.inputs, test_idx), take_labels(ds.labels, test_idx),
                      ds.class_count, ds.name + "-test"};
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// file I/O
// ---------------------------------------------------------------------------
//
// Binary layout (little-endian): magic "ESD1" | u32 version | u32 kind
// (0 hard, 1 soft) | u32 class_count | i64 epoch_tag | shape(inputs) |
// raw f64 inputs | labels (kind 0: i32[n]; kind 1: f64[n*K]).

namespace detail {
constexpr uint32_t kDatasetVersion = 1;

inline void check_dataset_magic(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "ESD1", 4) != 0)
    throw std::runtime_error("corrupt file: bad dataset magic");
  uint32_t version = read_u32(is, "version");
  if (version != kDatasetVersion)
    throw std::runtime_error("dataset version mismatch: " + std::to_string(version));
}
}  // namespace detail

inline void save_dataset(const LabeledDataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write("ESD1", 4);
  detail::write_u32(os, detail::kDatasetVersion);
  detail::write_u32(os, 0);
  detail::write_u32(os, static_cast<uint32_t>(ds.class_count));
  detail::write_i64(os, 0);
  detail::write_shape(os, ds.inputs.shape());
  os.write(reinterpret_cast<const char*>(ds.inputs.data().data()),
           static_cast<std::streamsize>(ds.inputs.data().size() * sizeof(double)));
  std::vector<int32_t> labels32(ds.labels.begin(), ds.labels.end());
  os.write(reinterpret_cast<const char*>(labels32.data()),
           static_cast<std::streamsize>(labels32.size() * sizeof(int32_t)));
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline void save_dataset(const SoftDataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write("ESD1", 4);
  detail::write_u32(os, detail::kDatasetVersion);
  detail::write_u32(os, 1);
  // class count 0 marks an unlabeled pool (inputs not yet through an oracle)
  detail::write_u32(os, static_cast<uint32_t>(ds.class_count()));
  detail::write_i64(os, ds.epoch_tag);
  detail::write_shape(os, ds.inputs.shape());
  os.write(reinterpret_cast<const char*>(ds.inputs.data().data()),
           static_cast<std::streamsize>(ds.inputs.data().size() * sizeof(double)));
  if (ds.soft_labels.defined())
    os.write(reinterpret_cast<const char*>(ds.soft_labels.data().data()),
             static_cast<std::streamsize>(ds.soft_labels.data().size() * sizeof(double)));
  if (!os) throw std::runtime_error("write failed: " + path);
}

namespace detail {
inline std::vector<double> read_f64_block(std::istream& is, int64_t count, const char* what) {
  std::vector<double> v(static_cast<size_t>(count));
  if (!is.read(reinterpret_cast<char*>(v.data()),
               static_cast<std::streamsize>(v.size() * sizeof(double))))
    throw std::runtime_error(std::string("corrupt file: truncated ") + what);
  return v;
}
}  // namespace detail

inline LabeledDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open dataset: " + path);
  detail::check_dataset_magic(is);
  uint32_t kind = detail::read_u32(is, "kind");
  if (kind != 0) throw std::runtime_error("dataset holds soft labels, not hard labels");
  uint32_t k = detail::read_u32(is, "class count");
  detail::read_i64(is, "epoch tag");
  Shape shape = detail::read_shape(is, "input shape");
  int64_t n = shape.empty() ? 0 : shape[0];
  if (n <= 0 || shape_numel(shape) <= 0) throw std::runtime_error("corrupt file: bad input shape");
  auto data = detail::read_f64_block(is, shape_numel(shape), "input data");
  std::vector<int32_t> labels32(static_cast<size_t>(n));
  if (!is.read(reinterpret_cast<char*>(labels32.data()),
               static_cast<std::streamsize>(labels32.size() * sizeof(int32_t))))
    throw std::runtime_error("corrupt file: truncated labels");
  LabeledDataset ds;
  ds.inputs = Tensor(shape, std::move(data));
  ds.labels.assign(labels32.begin(), labels32.end());
  ds.class_count = k;
  for (int v : ds.labels)
    if (v < 0 || v >= static_cast<int>(k)) throw std::runtime_error("corrupt file: label out of range");
  return ds;
}

inline SoftDataset load_soft_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open dataset: " + path);
  detail::check_dataset_magic(is);
  uint32_t kind = detail::read_u32(is, "kind");
  if (kind != 1) throw std::runtime_error("dataset holds hard labels, not soft labels");
  uint32_t k = detail::read_u32(is, "class count");
  int64_t epoch_tag = detail::read_i64(is, "epoch tag");
  Shape shape = detail::read_shape(is, "input shape");
  int64_t n = shape.empty() ? 0 : shape[0];
  if (n <= 0 || shape_numel(shape) <= 0) throw std::runtime_error("corrupt file: bad input shape");
  auto data = detail::read_f64_block(is, shape_numel(shape), "input data");
  SoftDataset ds;
  ds.inputs = Tensor(shape, std::move(data));
  if (k > 0) {
    auto soft = detail::read_f64_block(is, n * static_cast<int64_t>(k), "soft labels");
    ds.soft_labels = Tensor({n, static_cast<int64_t>(k)}, std::move(soft));
  }
  ds.epoch_tag = epoch_tag;
  return ds;
}

/// One row per sample: flattened input values, label last.
inline void export_csv(const LabeledDataset& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  const int64_t row = ds.inputs.numel() / ds.size();
  for (int64_t i = 0; i < ds.size(); ++i) {
    for (int64_t j = 0; j < row; ++j)
      os << format_double(ds.inputs.data()[static_cast<size_t>(i * row + j)]) << ',';
    os << ds.labels[static_cast<size_t>(i)] << '\n';
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace eslab
