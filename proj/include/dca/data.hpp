#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dca/checkpoint.hpp"  // file byte helpers
#include "dca/error.hpp"
#include "dca/random.hpp"
#include "dca/tensor.hpp"

namespace dca {

enum class Split { train, test };

struct Dataset {
  Tensor inputs;  // [N, D]
  std::vector<int> labels;
  std::size_t class_count = 0;
  Split split = Split::train;
  std::string provenance;
  // Row/column extent when each input row is a flattened image.
  std::optional<std::array<std::size_t, 2>> image_shape;

  std::size_t size() const { return labels.size(); }
  std::size_t features() const { return inputs.rank() == 2 ? inputs.dim(1) : 0; }

  void validate() const {
    if (inputs.rank() != 2) throw DataError("dataset inputs must be [N, D]");
    if (labels.empty()) throw DataError("dataset is empty");
    if (inputs.dim(0) != labels.size()) throw DataError("dataset input and label counts differ");
    if (class_count < 2) throw DataError("dataset needs at least two classes");
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= class_count)
        throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(class_count) + ")");
  }

  // Rows [first, first + count) as a batch tensor.
  Tensor batch(std::span<const std::size_t> rows) const {
    const std::size_t d = features();
    Tensor out(Shape{rows.size(), d});
    for (std::size_t k = 0; k < rows.size(); ++k) {
      auto src = inputs.row(rows[k]);
      std::copy(src.begin(), src.end(), out.row(k).begin());
    }
    return out;
  }
};

struct DatasetPair {
  Dataset train;
  Dataset test;
};

// ---------------------------------------------------------------------------
// Synthetic 2-D tasks

enum class SyntheticKind { gaussian_clusters, two_spirals, ring_uniform };

inline std::string_view to_string(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::gaussian_clusters: return "gaussian_clusters";
    case SyntheticKind::two_spirals: return "two_spirals";
    case SyntheticKind::ring_uniform: return "ring_uniform";
  }
  return "?";
}

inline SyntheticKind parse_synthetic_kind(std::string_view s) {
  for (auto k : {SyntheticKind::gaussian_clusters, SyntheticKind::two_spirals, SyntheticKind::ring_uniform})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown synthetic dataset kind '" + std::string(s) + "'");
}

struct SyntheticParams {
  std::size_t classes = 4;
  std::size_t train_per_class = 250;
  std::size_t test_per_class = 500;
  double noise = 1.0;         // gaussian sigma / spiral jitter
  double radius = 2.0;        // cluster-center radius / spiral extent
  double inner_radius = 0.0;  // ring_uniform annulus
  double outer_radius = 1.0;
};

namespace detail {

inline std::array<double, 2> synthetic_point(SyntheticKind kind, const SyntheticParams& p, std::size_t cls, Rng& rng) {
  const double two_pi = 2.0 * std::numbers::pi;
  const double classes = static_cast<double>(p.classes);
  switch (kind) {
    case SyntheticKind::gaussian_clusters: {
      const double a = two_pi * static_cast<double>(cls) / classes;
      const double x = p.radius * std::cos(a) + p.noise * normal(rng);
      const double y = p.radius * std::sin(a) + p.noise * normal(rng);
      return {x, y};
    }
    case SyntheticKind::two_spirals: {
      const double t = uniform01(rng);
      const double r = p.radius * (0.1 + t);
      const double a = two_pi * static_cast<double>(cls) / classes + 1.5 * two_pi * t;
      return {r * std::cos(a) + p.noise * normal(rng), r * std::sin(a) + p.noise * normal(rng)};
    }
    case SyntheticKind::ring_uniform: {
      // Uniform over the annulus sector owned by the class.
      const double r2 = uniform(rng, p.inner_radius * p.inner_radius, p.outer_radius * p.outer_radius);
      const double a = two_pi * (static_cast<double>(cls) + uniform01(rng)) / classes;
      return {std::sqrt(r2) * std::cos(a), std::sqrt(r2) * std::sin(a)};
    }
  }
  return {0.0, 0.0};
}

inline Dataset synthetic_split(SyntheticKind kind, const SyntheticParams& p, std::size_t per_class, Split split,
                               Rng& rng) {
  Dataset d;
  d.class_count = p.classes;
  d.split = split;
  d.provenance = "synthetic:" + std::string(to_string(kind));
  d.inputs = Tensor(Shape{per_class * p.classes, 2});
  d.labels.resize(per_class * p.classes);
  std::size_t row = 0;
  // Interleave classes so every prefix is near-balanced.
  for (std::size_t k = 0; k < per_class; ++k)
    for (std::size_t c = 0; c < p.classes; ++c, ++row) {
      const auto pt = synthetic_point(kind, p, c, rng);
      d.inputs(row, 0) = pt[0];
      d.inputs(row, 1) = pt[1];
      d.labels[row] = static_cast<int>(c);
    }
  return d;
}

}  // namespace detail

// Train and test come from disjoint substreams of `seed`.
inline DatasetPair make_synthetic(SyntheticKind kind, const SyntheticParams& p, std::uint64_t seed) {
  if (p.classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (p.train_per_class == 0 || p.test_per_class == 0) throw ConfigError("synthetic split sizes must be positive");
  if (p.noise < 0.0) throw ConfigError("synthetic noise must be non-negative");
  if (kind == SyntheticKind::ring_uniform && !(p.outer_radius > p.inner_radius && p.inner_radius >= 0.0))
    throw ConfigError("ring_uniform needs 0 <= inner_radius < outer_radius");
  Rng train_rng = make_rng(seed, 1);
  Rng test_rng = make_rng(seed, 2);
  return {detail::synthetic_split(kind, p, p.train_per_class, Split::train, train_rng),
          detail::synthetic_split(kind, p, p.test_per_class, Split::test, test_rng)};
}

// ---------------------------------------------------------------------------
// Standardization: per-feature statistics from the training split only.

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const Dataset& train) {
    const std::size_t d = train.features();
    const double n = static_cast<double>(train.size());
    Standardizer s{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
    for (std::size_t r = 0; r < train.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) s.mean[j] += train.inputs(r, j);
    for (double& m : s.mean) m /= n;
    for (std::size_t j = 0; j < d; ++j) {
      double ss = 0.0;
      for (std::size_t r = 0; r < train.size(); ++r) ss += (train.inputs(r, j) - s.mean[j]) * (train.inputs(r, j) - s.mean[j]);
      const double sd = std::sqrt(ss / n);
      s.scale[j] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
  }

  Dataset apply(Dataset d) const {
    if (d.features() != mean.size()) throw DimensionError("standardizer feature count mismatch");
    for (std::size_t r = 0; r < d.size(); ++r)
      for (std::size_t j = 0; j < mean.size(); ++j) d.inputs(r, j) = (d.inputs(r, j) - mean[j]) / scale[j];
    return d;
  }
};

// ---------------------------------------------------------------------------
// IDX files (big-endian; unsigned-byte images 0x00000803, labels 0x00000801)

namespace detail {

inline std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t off, const std::string& file) {
  if (off + 4 > b.size())
    throw DataError(file + ": truncated at byte offset " + std::to_string(off) + " (file has " +
                    std::to_string(b.size()) + " bytes)");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        Split split = Split::train) {
  const std::string img_name = images_path.string();
  const std::string lbl_name = labels_path.string();
  const auto img = read_file_bytes(images_path);
  const auto lbl = read_file_bytes(labels_path);

  const std::uint32_t img_magic = detail::be32(img, 0, img_name);
  if (img_magic != kIdxImageMagic)
    throw DataError(img_name + ": bad image magic at byte offset 0");
  const std::uint32_t count = detail::be32(img, 4, img_name);
  const std::uint32_t rows = detail::be32(img, 8, img_name);
  const std::uint32_t cols = detail::be32(img, 12, img_name);
  const std::size_t pixels = std::size_t{rows} * cols;
  const std::size_t need = 16 + std::size_t{count} * pixels;
  if (img.size() < need)
    throw DataError(img_name + ": truncated at byte offset " + std::to_string(img.size()) + ", expected " +
                    std::to_string(need) + " bytes");

  const std::uint32_t lbl_magic = detail::be32(lbl, 0, lbl_name);
  if (lbl_magic != kIdxLabelMagic) throw DataError(lbl_name + ": bad label magic at byte offset 0");
  const std::uint32_t lcount = detail::be32(lbl, 4, lbl_name);
  if (lcount != count)
    throw DataError("image/label count mismatch: " + img_name + " has " + std::to_string(count) + ", " + lbl_name +
                    " has " + std::to_string(lcount));
  if (lbl.size() < 8 + std::size_t{lcount})
    throw DataError(lbl_name + ": truncated at byte offset " + std::to_string(lbl.size()) + ", expected " +
                    std::to_string(8 + std::size_t{lcount}) + " bytes");
  if (count == 0) throw DataError(img_name + ": no images");

  Dataset d;
  d.split = split;
  d.provenance = img_name;
  d.image_shape = std::array<std::size_t, 2>{rows, cols};
  d.inputs = Tensor(Shape{count, pixels});
  for (std::size_t i = 0; i < d.inputs.size(); ++i) d.inputs[i] = static_cast<double>(img[16 + i]) / 255.0;
  d.labels.resize(count);
  int max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    d.labels[i] = lbl[8 + i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.class_count = std::max<std::size_t>(2, static_cast<std::size_t>(max_label) + 1);
  return d;
}

inline std::vector<std::uint8_t> encode_idx_images(std::uint32_t count, std::uint32_t rows, std::uint32_t cols,
                                                   std::span<const std::uint8_t> pixels) {
  if (pixels.size() != std::size_t{count} * rows * cols) throw DimensionError("pixel count does not match IDX header");
  std::vector<std::uint8_t> out;
  detail::put_be32(out, kIdxImageMagic);
  detail::put_be32(out, count);
  detail::put_be32(out, rows);
  detail::put_be32(out, cols);
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

inline std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> out;
  detail::put_be32(out, kIdxLabelMagic);
  detail::put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

// ---------------------------------------------------------------------------
// Corruptions for distributional shift

enum class CorruptionKind { gaussian_noise, input_blur, pixel_dropout };

inline constexpr CorruptionKind kAllCorruptions[] = {CorruptionKind::gaussian_noise, CorruptionKind::input_blur,
                                                     CorruptionKind::pixel_dropout};

inline std::string_view to_string(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::gaussian_noise: return "gaussian_noise";
    case CorruptionKind::input_blur: return "input_blur";
    case CorruptionKind::pixel_dropout: return "pixel_dropout";
  }
  return "?";
}

inline CorruptionKind parse_corruption(std::string_view s) {
  for (auto k : kAllCorruptions)
    if (s == to_string(k)) return k;
  throw ConfigError("unknown corruption kind '" + std::string(s) + "'");
}

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  int severity = 0;  // 0 = in-domain
};

// Strength per severity 1..5: noise sigma, blur blend weight, dropout rate.
inline double corruption_strength(CorruptionKind kind, int severity) {
  static constexpr std::array<double, 5> noise{0.1, 0.25, 0.5, 0.75, 1.0};
  static constexpr std::array<double, 5> blur{0.2, 0.4, 0.6, 0.8, 1.0};
  static constexpr std::array<double, 5> dropout{0.1, 0.2, 0.3, 0.4, 0.5};
  if (severity == 0) return 0.0;
  const auto i = static_cast<std::size_t>(severity - 1);
  switch (kind) {
    case CorruptionKind::gaussian_noise: return noise[i];
    case CorruptionKind::input_blur: return blur[i];
    case CorruptionKind::pixel_dropout: return dropout[i];
  }
  return 0.0;
}

namespace detail {

// Mean over a 3x3 window (images) or a 3-wide feature window, edges clamped.
inline std::vector<double> box_mean(std::span<const double> row, const std::optional<std::array<std::size_t, 2>>& image) {
  std::vector<double> out(row.size());
  if (image && (*image)[0] * (*image)[1] == row.size()) {
    const auto h = static_cast<std::ptrdiff_t>((*image)[0]);
    const auto w = static_cast<std::ptrdiff_t>((*image)[1]);
    for (std::ptrdiff_t r = 0; r < h; ++r)
      for (std::ptrdiff_t c = 0; c < w; ++c) {
        double s = 0.0;
        for (std::ptrdiff_t dr = -1; dr <= 1; ++dr)
          for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
            const auto rr = std::clamp<std::ptrdiff_t>(r + dr, 0, h - 1);
            const auto cc = std::clamp<std::ptrdiff_t>(c + dc, 0, w - 1);
            s += row[static_cast<std::size_t>(rr * w + cc)];
          }
        out[static_cast<std::size_t>(r * w + c)] = s / 9.0;
      }
    return out;
  }
  const auto d = static_cast<std::ptrdiff_t>(row.size());
  for (std::ptrdiff_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (std::ptrdiff_t k = -1; k <= 1; ++k) s += row[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(j + k, 0, d - 1))];
    out[static_cast<std::size_t>(j)] = s / 3.0;
  }
  return out;
}

}  // namespace detail

inline Dataset corrupt(const Dataset& data, const CorruptionSpec& spec, std::uint64_t seed) {
  if (spec.severity < 0 || spec.severity > 5)
    throw ConfigError("corruption severity " + std::to_string(spec.severity) + " outside [0, 5]");
  if (spec.severity == 0) return data;
  Dataset out = data;
  const double strength = corruption_strength(spec.kind, spec.severity);
  // One stream per kind, shared by all severities: the same draws scale up with
  // severity, so each corruption is nested inside the next.
  Rng rng = make_rng(seed, 100 + static_cast<std::uint64_t>(spec.kind));
  for (std::size_t r = 0; r < out.size(); ++r) {
    auto row = out.inputs.row(r);
    switch (spec.kind) {
      case CorruptionKind::gaussian_noise:
        for (double& v : row) v += strength * normal(rng);
        break;
      case CorruptionKind::input_blur: {
        const auto blurred = detail::box_mean(row, out.image_shape);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = (1.0 - strength) * row[j] + strength * blurred[j];
        break;
      }
      case CorruptionKind::pixel_dropout:
        for (double& v : row)
          if (uniform01(rng) < strength) v = 0.0;
        break;
    }
  }
  out.provenance += ":" + std::string(to_string(spec.kind)) + "@" + std::to_string(spec.severity);
  return out;
}

}  // namespace dca
