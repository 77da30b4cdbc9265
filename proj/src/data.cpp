#include "ssmlab/data/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "ssmlab/rng.hpp"

namespace ssmlab::data {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::ifstream& is, const std::string& path, const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is)
    throw std::runtime_error("idx parse error in " + path + ": truncated " + what + " at offset " +
                             std::to_string(static_cast<long long>(is.tellg())));
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

void write_be32(std::ofstream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Images load_idx_images(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("idx: cannot open " + path);
  const auto magic = read_be32(is, path, "magic");
  if (magic != kImageMagic)
    throw std::runtime_error("idx parse error in " + path + ": bad image magic 0x" +
                             [&] { char b[16]; std::snprintf(b, sizeof(b), "%08x", magic); return std::string(b); }() +
                             " at offset 0");
  Images imgs;
  imgs.count = read_be32(is, path, "count");
  imgs.rows = read_be32(is, path, "rows");
  imgs.cols = read_be32(is, path, "cols");
  const std::size_t n = static_cast<std::size_t>(imgs.count * imgs.rows * imgs.cols);
  std::vector<unsigned char> raw(n);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
  if (!is)
    throw std::runtime_error("idx parse error in " + path + ": truncated pixel data at offset " +
                             std::to_string(static_cast<long long>(is.tellg())));
  imgs.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    imgs.pixels[i] = static_cast<double>(raw[i]) / 255.0;  // byte 255 -> 1.0 exactly
  return imgs;
}

std::vector<std::int64_t> load_idx_labels(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("idx: cannot open " + path);
  const auto magic = read_be32(is, path, "magic");
  if (magic != kLabelMagic)
    throw std::runtime_error("idx parse error in " + path + ": bad label magic at offset 0");
  const auto count = read_be32(is, path, "count");
  std::vector<unsigned char> raw(count);
  is.read(reinterpret_cast<char*>(raw.data()), count);
  if (!is)
    throw std::runtime_error("idx parse error in " + path + ": truncated labels at offset " +
                             std::to_string(static_cast<long long>(is.tellg())));
  return {raw.begin(), raw.end()};
}

adv::Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  Images imgs = load_idx_images(images_path);
  auto labels = load_idx_labels(labels_path);
  if (static_cast<std::int64_t>(labels.size()) != imgs.count)
    throw std::runtime_error("idx: image count " + std::to_string(imgs.count) +
                             " does not match label count " + std::to_string(labels.size()));
  adv::Dataset d;
  d.inputs = to_sequence(imgs, imgs.rows * imgs.cols, 1);
  d.labels = std::move(labels);
  return d;
}

void save_idx_images(const std::string& path, const Images& imgs) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("idx: cannot open " + path + " for writing");
  write_be32(os, kImageMagic);
  write_be32(os, static_cast<std::uint32_t>(imgs.count));
  write_be32(os, static_cast<std::uint32_t>(imgs.rows));
  write_be32(os, static_cast<std::uint32_t>(imgs.cols));
  for (double v : imgs.pixels) {
    const double c = std::clamp(v, 0.0, 1.0);
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  if (!os) throw std::runtime_error("idx: write failed for " + path);
}

void save_idx_labels(const std::string& path, const std::vector<std::int64_t>& labels) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("idx: cannot open " + path + " for writing");
  write_be32(os, kLabelMagic);
  write_be32(os, static_cast<std::uint32_t>(labels.size()));
  for (auto l : labels) os.put(static_cast<char>(static_cast<unsigned char>(l)));
  if (!os) throw std::runtime_error("idx: write failed for " + path);
}

Images avg_pool(const Images& imgs, std::int64_t k) {
  if (k <= 1) return imgs;
  if (imgs.rows % k != 0 || imgs.cols % k != 0)
    throw std::invalid_argument("avg_pool: " + std::to_string(k) + " does not divide " +
                                std::to_string(imgs.rows) + "x" + std::to_string(imgs.cols));
  Images out;
  out.count = imgs.count;
  out.rows = imgs.rows / k;
  out.cols = imgs.cols / k;
  out.pixels.resize(static_cast<std::size_t>(out.count * out.rows * out.cols));
  const double inv = 1.0 / static_cast<double>(k * k);
  for (std::int64_t n = 0; n < imgs.count; ++n)
    for (std::int64_t r = 0; r < out.rows; ++r)
      for (std::int64_t c = 0; c < out.cols; ++c) {
        double acc = 0.0;
        for (std::int64_t dr = 0; dr < k; ++dr)
          for (std::int64_t dc = 0; dc < k; ++dc)
            acc += imgs.pixels[static_cast<std::size_t>(
                (n * imgs.rows + r * k + dr) * imgs.cols + c * k + dc)];
        out.pixels[static_cast<std::size_t>((n * out.rows + r) * out.cols + c)] = acc * inv;
      }
  return out;
}

ad::Tensor to_sequence(const Images& imgs, std::int64_t L, std::int64_t c) {
  if (L * c != imgs.rows * imgs.cols)
    throw std::invalid_argument("to_sequence: L*c = " + std::to_string(L * c) +
                                " inconsistent with " + std::to_string(imgs.rows) + "x" +
                                std::to_string(imgs.cols) + " pixels");
  std::vector<double> buf = imgs.pixels;  // already row-major
  return ad::Tensor::from({imgs.count, L, c}, std::move(buf));
}

adv::Dataset synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t dim = static_cast<std::size_t>(spec.seq_len * spec.channels);
  std::vector<double> w(dim);
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  // Fixed thresholds on t = w.x for x ~ U[0,1]^dim: quantiles of a normal
  // approximation around the mean.
  double mean = 0.0, var = 0.0;
  for (double v : w) {
    mean += 0.5 * v;
    var += v * v / 12.0;
  }
  const double sd = std::sqrt(var);
  std::vector<double> thresholds;
  for (std::int64_t kcls = 1; kcls < spec.classes; ++kcls) {
    const double q = static_cast<double>(kcls) / static_cast<double>(spec.classes);
    // probit via Beasley-Springer-ish rational approx is overkill; linear
    // spread over +-1.2 sd covers balanced-enough buckets for tests
    thresholds.push_back(mean + sd * (-1.2 + 2.4 * q));
  }
  adv::Dataset d;
  std::vector<double> xs;
  xs.reserve(static_cast<std::size_t>(spec.count) * dim);
  d.labels.reserve(static_cast<std::size_t>(spec.count));
  std::vector<double> x(dim);
  while (static_cast<std::int64_t>(d.labels.size()) < spec.count) {
    for (auto& v : x) v = rng.uniform(0.0, 1.0);
    double t = 0.0;
    for (std::size_t i = 0; i < dim; ++i) t += w[i] * x[i];
    bool near = false;
    for (double th : thresholds) near = near || std::fabs(t - th) < spec.margin;
    if (near) continue;  // enforce a separability margin
    std::int64_t cls = 0;
    for (double th : thresholds)
      if (t > th) ++cls;
    d.labels.push_back(cls);
    xs.insert(xs.end(), x.begin(), x.end());
  }
  d.inputs = ad::Tensor::from({spec.count, spec.seq_len, spec.channels}, std::move(xs));
  return d;
}

namespace {

// 5x7 bitmaps for digits 0..9, one row per string.
const char* kGlyphs[10][7] = {
    {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},
    {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},
    {"01110", "10001", "00001", "00010", "00100", "01000", "11111"},
    {"11111", "00010", "00100", "00010", "00001", "10001", "01110"},
    {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},
    {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},
    {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},
    {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},
    {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},
    {"01110", "10001", "10001", "01111", "00001", "00010", "01100"}};

double glyph_sample(int digit, double gx, double gy) {
  // Soft-dilated sampling: full ink within ~0.65 cells of an on-cell center,
  // linear falloff to 1.05 cells. Strokes stay saturated through their core
  // (and survive average pooling), like fat handwritten strokes.
  if (gx < -1.2 || gx > 5.2 || gy < -1.2 || gy > 7.2) return 0.0;
  const int x0 = static_cast<int>(std::floor(gx - 1.05));
  const int y0 = static_cast<int>(std::floor(gy - 1.05));
  double best = 0.0;
  for (int y = std::max(0, y0); y <= std::min(6, y0 + 3); ++y)
    for (int x = std::max(0, x0); x <= std::min(4, x0 + 3); ++x) {
      if (kGlyphs[digit][y][x] != '1') continue;
      const double dx = gx - x, dy = gy - y;
      const double dist = std::sqrt(dx * dx + dy * dy);
      const double v = std::clamp((1.05 - dist) / 0.4, 0.0, 1.0);
      best = std::max(best, v);
    }
  return best;
}

}  // namespace

Images render_digits(std::int64_t count, std::vector<std::int64_t>& labels_out,
                     std::uint64_t seed) {
  Images imgs;
  imgs.count = count;
  imgs.rows = 28;
  imgs.cols = 28;
  imgs.pixels.assign(static_cast<std::size_t>(count * 28 * 28), 0.0);
  labels_out.resize(static_cast<std::size_t>(count));
  Rng order_rng = Rng::derive(seed, 1);
  std::vector<std::int64_t> classes(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) classes[static_cast<std::size_t>(i)] = i % 10;
  for (std::int64_t i = count - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(order_rng.uniform_u64(static_cast<std::uint64_t>(i + 1)));
    std::swap(classes[static_cast<std::size_t>(i)], classes[static_cast<std::size_t>(j)]);
  }
  for (std::int64_t n = 0; n < count; ++n) {
    Rng rng = Rng::derive(seed, 100 + static_cast<std::uint64_t>(n));
    const int digit = static_cast<int>(classes[static_cast<std::size_t>(n)]);
    labels_out[static_cast<std::size_t>(n)] = digit;
    const double scale = rng.uniform(2.6, 3.4);    // glyph cell -> pixels
    const double angle = rng.uniform(-0.18, 0.18); // radians
    const double cx = 13.5 + rng.uniform(-2.0, 2.0);
    const double cy = 13.5 + rng.uniform(-2.0, 2.0);
    const double intensity = rng.uniform(0.9, 1.0);
    const double ca = std::cos(angle), sa = std::sin(angle);
    double* img = imgs.pixels.data() + n * 28 * 28;
    for (int y = 0; y < 28; ++y)
      for (int x = 0; x < 28; ++x) {
        // inverse affine: pixel -> glyph grid (glyph center at (2, 3))
        const double dx = (x - cx), dy = (y - cy);
        const double rx = (ca * dx + sa * dy) / scale + 2.0;
        const double ry = (-sa * dx + ca * dy) / scale + 3.0;
        const double v = glyph_sample(digit, rx, ry) * intensity;
        img[y * 28 + x] = std::clamp(v + 0.04 * rng.normal(), 0.0, 1.0);
      }
  }
  return imgs;
}

}  // namespace ssmlab::data
