#include "canonkit/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "canonkit/rng.hpp"

namespace canonkit {

void Dataset::validate() const {
  CK_CHECK(images.size() == labels.size(), ErrKind::contract,
           "dataset: image and label counts differ");
  CK_CHECK(num_classes >= 1, ErrKind::contract, "dataset: num_classes must be positive");
  for (size_t i = 0; i < images.size(); ++i) {
    const Tensor& im = images[i];
    CK_CHECK(im.rank() == 3 && im.dim(1) == im.dim(2), ErrKind::contract,
             "dataset: images must be square [C,H,W]");
    CK_CHECK(im.shape() == images[0].shape(), ErrKind::contract, "dataset: mixed image shapes");
    for (double v : im.data())
      CK_CHECK(v >= 0.0 && v <= 1.0, ErrKind::contract, "dataset: pixel outside [0,1]");
    CK_CHECK(labels[i] >= 0 && labels[i] < num_classes, ErrKind::contract,
             "dataset: label out of range");
  }
}

namespace {

constexpr uint32_t kImageMagic = 0x00000803;
constexpr uint32_t kLabelMagic = 0x00000801;

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  CK_CHECK(in.good(), ErrKind::parse, "cannot open file: " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

uint32_t read_be32(const std::vector<uint8_t>& buf, size_t off, const std::string& path) {
  CK_CHECK(off + 4 <= buf.size(), ErrKind::parse, "truncated file: " + path);
  return (static_cast<uint32_t>(buf[off]) << 24) | (static_cast<uint32_t>(buf[off + 1]) << 16) |
         (static_cast<uint32_t>(buf[off + 2]) << 8) | static_cast<uint32_t>(buf[off + 3]);
}

void write_be32(std::ofstream& out, uint32_t v) {
  const uint8_t bytes[4] = {static_cast<uint8_t>(v >> 24), static_cast<uint8_t>(v >> 16),
                            static_cast<uint8_t>(v >> 8), static_cast<uint8_t>(v)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

}  // namespace

Dataset load_idx(const std::string& image_path, const std::string& label_path) {
  const auto ibuf = read_file(image_path);
  const uint32_t imagic = read_be32(ibuf, 0, image_path);
  CK_CHECK(imagic == kImageMagic, ErrKind::parse,
           "unexpected magic in " + image_path + ": " + std::to_string(imagic));
  const uint32_t n = read_be32(ibuf, 4, image_path);
  const uint32_t h = read_be32(ibuf, 8, image_path);
  const uint32_t w = read_be32(ibuf, 12, image_path);
  const size_t expected = 16 + static_cast<size_t>(n) * h * w;
  CK_CHECK(ibuf.size() == expected, ErrKind::parse,
           "truncated file: " + image_path + " (" + std::to_string(ibuf.size()) + " bytes, want " +
               std::to_string(expected) + ")");

  const auto lbuf = read_file(label_path);
  const uint32_t lmagic = read_be32(lbuf, 0, label_path);
  CK_CHECK(lmagic == kLabelMagic, ErrKind::parse,
           "unexpected magic in " + label_path + ": " + std::to_string(lmagic));
  const uint32_t ln = read_be32(lbuf, 4, label_path);
  CK_CHECK(lbuf.size() == 8 + static_cast<size_t>(ln), ErrKind::parse,
           "truncated file: " + label_path);
  CK_CHECK(ln == n, ErrKind::parse,
           "count mismatch: " + std::to_string(n) + " images vs " + std::to_string(ln) + " labels");

  Dataset ds;
  ds.source = image_path;
  ds.images.reserve(n);
  ds.labels.reserve(n);
  int max_label = 0;
  for (uint32_t i = 0; i < n; ++i) {
    std::vector<double> pix(static_cast<size_t>(h) * w);
    const size_t base = 16 + static_cast<size_t>(i) * h * w;
    for (size_t j = 0; j < pix.size(); ++j) pix[j] = static_cast<double>(ibuf[base + j]) / 255.0;
    ds.images.push_back(Tensor::from({1, static_cast<int>(h), static_cast<int>(w)}, std::move(pix)));
    const int lab = static_cast<int>(lbuf[8 + i]);
    ds.labels.push_back(lab);
    max_label = std::max(max_label, lab);
  }
  ds.num_classes = max_label + 1;
  ds.validate();
  return ds;
}

void save_idx(const Dataset& ds, const std::string& image_path, const std::string& label_path) {
  ds.validate();
  CK_CHECK(ds.size() > 0, ErrKind::contract, "save_idx: empty dataset");
  CK_CHECK(ds.images[0].dim(0) == 1, ErrKind::contract, "save_idx: images must be single-channel");
  const int h = ds.images[0].dim(1), w = ds.images[0].dim(2);

  std::ofstream iout(image_path, std::ios::binary);
  CK_CHECK(iout.good(), ErrKind::artifact, "cannot write file: " + image_path);
  write_be32(iout, kImageMagic);
  write_be32(iout, static_cast<uint32_t>(ds.size()));
  write_be32(iout, static_cast<uint32_t>(h));
  write_be32(iout, static_cast<uint32_t>(w));
  for (const auto& im : ds.images)
    for (double v : im.data()) {
      const auto byte = static_cast<uint8_t>(std::lround(v * 255.0));
      iout.write(reinterpret_cast<const char*>(&byte), 1);
    }
  CK_CHECK(iout.good(), ErrKind::artifact, "write failed: " + image_path);
  iout.close();

  std::ofstream lout(label_path, std::ios::binary);
  CK_CHECK(lout.good(), ErrKind::artifact, "cannot write file: " + label_path);
  write_be32(lout, kLabelMagic);
  write_be32(lout, static_cast<uint32_t>(ds.size()));
  for (int lab : ds.labels) {
    const auto byte = static_cast<uint8_t>(lab);
    lout.write(reinterpret_cast<const char*>(&byte), 1);
  }
  CK_CHECK(lout.good(), ErrKind::artifact, "write failed: " + label_path);
}

namespace {

// Class prototypes painted in 16-grid coordinates, scaled to the target
// size. Every glyph is chosen so no nonidentity d4 transform fixes it.
struct Block {
  int x0, x1, y0, y1;  // inclusive, 16-grid units
};

const std::vector<std::vector<Block>>& glyph_blocks() {
  static const std::vector<std::vector<Block>> blocks = {
      // L
      {{3, 5, 2, 13}, {3, 11, 11, 13}},
      // F
      {{3, 5, 2, 13}, {3, 11, 2, 4}, {3, 9, 7, 9}},
      // arrow with an off-axis tick
      {{7, 8, 4, 13}, {5, 10, 4, 5}, {6, 9, 2, 3}, {9, 11, 6, 7}},
      // top-right hook
      {{4, 12, 2, 4}, {10, 12, 2, 10}, {6, 12, 8, 10}},
      // P
      {{4, 5, 2, 13}, {4, 10, 2, 3}, {9, 10, 2, 7}, {4, 10, 6, 7}},
      // b
      {{4, 5, 2, 13}, {4, 10, 12, 13}, {9, 10, 8, 13}, {4, 10, 8, 9}},
      // Z with a tick breaking the half-turn
      {{3, 12, 2, 4}, {3, 12, 11, 13}, {7, 9, 4, 11}, {3, 4, 5, 7}},
      // 4
      {{9, 11, 2, 13}, {3, 11, 8, 10}, {3, 5, 4, 8}},
  };
  return blocks;
}

std::vector<uint8_t> render_prototype(int cls, int size) {
  std::vector<uint8_t> mask(static_cast<size_t>(size) * size, 0);
  for (const Block& b : glyph_blocks()[static_cast<size_t>(cls)]) {
    const int x0 = b.x0 * size / 16, x1 = (b.x1 + 1) * size / 16 - 1;
    const int y0 = b.y0 * size / 16, y1 = (b.y1 + 1) * size / 16 - 1;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) mask[static_cast<size_t>(y) * size + x] = 1;
  }
  return mask;
}

double quantize(double v) { return std::lround(v * 255.0) / 255.0; }

}  // namespace

Dataset gen_shapes(uint64_t seed, int n_per_class, int num_classes, int size) {
  CK_CHECK(num_classes >= 1 && num_classes <= 8, ErrKind::config,
           "num_classes must be between 1 and 8");
  CK_CHECK(n_per_class >= 1, ErrKind::config, "n_per_class must be positive");
  CK_CHECK(size >= 8, ErrKind::config, "size must be at least 8");

  // Stabilizer triviality: no prototype may equal any nonidentity transform
  // of itself, otherwise orbits would contain duplicate entries.
  const Group d4 = Group::from_name("d4");
  std::vector<std::vector<uint8_t>> prototypes;
  for (int c = 0; c < num_classes; ++c) {
    auto mask = render_prototype(c, size);
    std::vector<double> as_double(mask.begin(), mask.end());
    Tensor proto = Tensor::from({1, size, size}, as_double);
    for (const auto& g : d4.elements()) {
      if (g == d4.identity()) continue;
      CK_CHECK(!act_image(g, proto).same_values(proto), ErrKind::contract,
               "glyph class " + std::to_string(c) + " has a nontrivial stabilizer");
    }
    prototypes.push_back(std::move(mask));
  }

  Rng rng(seed);
  Dataset ds;
  ds.source = "gen_shapes";
  ds.num_classes = num_classes;
  ds.seed = seed;
  ds.images.reserve(static_cast<size_t>(n_per_class) * num_classes);
  for (int c = 0; c < num_classes; ++c)
    for (int i = 0; i < n_per_class; ++i) {
      const int dx = rng.below(3) - 1, dy = rng.below(3) - 1;
      std::vector<double> pix(static_cast<size_t>(size) * size);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const int sy = y - dy, sx = x - dx;
          const bool on = sy >= 0 && sy < size && sx >= 0 && sx < size &&
                          prototypes[static_cast<size_t>(c)][static_cast<size_t>(sy) * size + sx];
          const double u = rng.uniform();
          pix[static_cast<size_t>(y) * size + x] = quantize(on ? 0.75 + 0.25 * u : 0.1 * u);
        }
      ds.images.push_back(Tensor::from({1, size, size}, std::move(pix)));
      ds.labels.push_back(c);
    }
  return ds;
}

Dataset augment_orbit(const Dataset& ds, const Group& group, const std::string& mode,
                      uint64_t seed) {
  CK_CHECK(mode == "exhaustive" || mode == "random", ErrKind::config,
           "augment mode must be exhaustive or random");
  Dataset out;
  out.source = ds.source;
  out.num_classes = ds.num_classes;
  out.seed = ds.seed;
  if (mode == "exhaustive") {
    out.images.reserve(ds.images.size() * static_cast<size_t>(group.size()));
    for (size_t i = 0; i < ds.images.size(); ++i)
      for (const auto& g : group.elements()) {
        out.images.push_back(act_image(g, ds.images[i]));
        out.labels.push_back(ds.labels[i]);
      }
  } else {
    Rng rng(seed);
    out.images.reserve(ds.images.size());
    for (size_t i = 0; i < ds.images.size(); ++i) {
      const auto& g = group.elements()[static_cast<size_t>(rng.below(group.size()))];
      out.images.push_back(act_image(g, ds.images[i]));
      out.labels.push_back(ds.labels[i]);
    }
  }
  return out;
}

std::vector<Dataset> split(const Dataset& ds, const std::vector<double>& fractions, uint64_t seed) {
  CK_CHECK(!fractions.empty(), ErrKind::config, "split: no fractions given");
  double total = 0.0;
  for (double f : fractions) {
    CK_CHECK(f >= 0.0, ErrKind::config, "split: negative fraction");
    total += f;
  }
  CK_CHECK(std::fabs(total - 1.0) <= 1e-9, ErrKind::config, "split: fractions must sum to 1");
  if (fractions.size() == 1) return {ds};

  std::vector<int> idx(static_cast<size_t>(ds.size()));
  for (int i = 0; i < ds.size(); ++i) idx[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  shuffle(idx, rng);

  std::vector<Dataset> parts;
  double cum = 0.0;
  size_t start = 0;
  for (size_t k = 0; k < fractions.size(); ++k) {
    cum += fractions[k];
    const size_t end = k + 1 == fractions.size()
                           ? idx.size()
                           : static_cast<size_t>(std::lround(cum * ds.size()));
    Dataset part;
    part.source = ds.source;
    part.num_classes = ds.num_classes;
    part.seed = ds.seed;
    for (size_t i = start; i < end; ++i) {
      part.images.push_back(ds.images[static_cast<size_t>(idx[i])]);
      part.labels.push_back(ds.labels[static_cast<size_t>(idx[i])]);
    }
    parts.push_back(std::move(part));
    start = end;
  }
  return parts;
}

}  // namespace canonkit
