// SPDX-License-Identifier: Apache-2.0
#include "dcssd/cifar.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

#include "dcssd/errors.hpp"
#include "dcssd/random.hpp"

namespace dcssd {

std::vector<CifarRecord> parse_cifar10(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw DataError("truncated CIFAR-10 record: length " + std::to_string(bytes.size()) +
                    " is not a multiple of " + std::to_string(kCifarRecordBytes));
  }
  std::vector<CifarRecord> records(bytes.size() / kCifarRecordBytes);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto rec = bytes.subspan(i * kCifarRecordBytes, kCifarRecordBytes);
    if (rec[0] >= kCifarClasses) {
      throw DataError("CIFAR-10 record " + std::to_string(i) + " has label byte " +
                      std::to_string(rec[0]) + " > 9");
    }
    records[i].label = rec[0];
    std::copy(rec.begin() + 1, rec.end(), records[i].pixels.begin());
  }
  return records;
}

std::vector<std::uint8_t> serialize_cifar10(std::span<const CifarRecord> records) {
  std::vector<std::uint8_t> out;
  out.reserve(records.size() * kCifarRecordBytes);
  for (const auto& r : records) {
    out.push_back(r.label);
    out.insert(out.end(), r.pixels.begin(), r.pixels.end());
  }
  return out;
}

std::vector<CifarRecord> load_cifar10(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open CIFAR-10 file: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return parse_cifar10(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_cifar10(const std::filesystem::path& path, std::span<const CifarRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write CIFAR-10 file: " + path.string());
  const auto bytes = serialize_cifar10(records);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<CifarRecord> load_cifar10_split(const std::filesystem::path& dir, CifarSplit split) {
  std::vector<CifarRecord> all;
  if (split == CifarSplit::Test) return load_cifar10(dir / "test_batch.bin");
  for (int i = 1; i <= 5; ++i) {
    auto part = load_cifar10(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

ImageChip record_to_chip(const CifarRecord& rec) {
  ImageChip chip(kCifarSide, kCifarSide);
  for (std::size_t i = 0; i < kCifarPixelBytes; ++i) {
    chip.data()[i] = 2.0f * static_cast<float>(rec.pixels[i]) / 255.0f - 1.0f;
  }
  return chip;
}

CifarRecord chip_to_record(const ImageChip& chip, std::uint8_t label) {
  if (chip.height() != kCifarSide || chip.width() != kCifarSide) {
    throw std::invalid_argument("chip_to_record: chip must be 3x32x32");
  }
  CifarRecord rec;
  rec.label = label;
  for (std::size_t i = 0; i < kCifarPixelBytes; ++i) {
    const double v = std::clamp(static_cast<double>(chip.data()[i]), -1.0, 1.0);
    rec.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (v + 1.0) / 2.0));
  }
  return rec;
}

std::vector<ImageChip> records_to_chips(std::span<const CifarRecord> records) {
  std::vector<ImageChip> chips;
  chips.reserve(records.size());
  for (const auto& r : records) chips.push_back(record_to_chip(r));
  return chips;
}

// ------------------------------------------------------------ synthetic

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv(double h, double s, double v) {
  h = std::fmod(std::fmod(h, 1.0) + 1.0, 1.0) * 6.0;
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

double luminance(const Rgb& c) { return 0.299 * c.r + 0.587 * c.g + 0.114 * c.b; }

// Shape membership in the object's local frame, u and v in roughly [-1, 1].
bool inside(int cls, double u, double v) {
  const double r2 = u * u + v * v;
  const bool in_square = std::abs(u) <= 0.85 && std::abs(v) <= 0.85;
  switch (cls) {
    case 0: return r2 <= 0.8;
    case 1: return std::abs(u) <= 0.7 && std::abs(v) <= 0.7;
    case 2: return v <= 0.75 && v >= -0.85 && std::abs(u) <= 0.85 * (v + 0.85) / 1.6;
    case 3: return in_square && static_cast<int>(std::floor((v + 1.0) * 2.5)) % 2 == 0;
    case 4: return in_square && static_cast<int>(std::floor((u + 1.0) * 2.5)) % 2 == 0;
    case 5: return r2 <= 0.85 && r2 >= 0.3;
    case 6: return (std::abs(u) <= 0.28 && std::abs(v) <= 0.9) ||
                   (std::abs(v) <= 0.28 && std::abs(u) <= 0.9);
    case 7: return in_square && static_cast<int>(std::floor((u + v + 2.0) * 1.8)) % 2 == 0;
    case 8: return in_square && (static_cast<int>(std::floor((u + 1.0) * 2.0)) +
                                 static_cast<int>(std::floor((v + 1.0) * 2.0))) % 2 == 0;
    default: {
      const double a = (u + 0.45) * (u + 0.45) + (v + 0.45) * (v + 0.45);
      const double b = (u - 0.45) * (u - 0.45) + (v - 0.45) * (v - 0.45);
      return a <= 0.17 || b <= 0.17;
    }
  }
}

CifarRecord render_synthetic(int cls, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Weak per-class hue prior, as natural classes have typical colors.
  const double class_hue = cls / 10.0;
  const double fg_hue = unit(rng) < 0.5 ? class_hue + 0.08 * gauss(rng) : unit(rng);
  Rgb fg = hsv(fg_hue, 0.5 + 0.5 * unit(rng), 0.45 + 0.55 * unit(rng));
  Rgb bg = hsv(unit(rng), 0.6 * unit(rng), 0.15 + 0.8 * unit(rng));
  for (int tries = 0; tries < 8 && std::abs(luminance(fg) - luminance(bg)) < 0.25; ++tries) {
    bg = hsv(unit(rng), 0.6 * unit(rng), luminance(fg) > 0.5 ? 0.1 + 0.3 * unit(rng)
                                                               : 0.6 + 0.4 * unit(rng));
  }
  const double cx = 16.0 + 3.0 * gauss(rng), cy = 16.0 + 3.0 * gauss(rng);
  const double size = 9.0 + 4.0 * unit(rng);
  const double angle = 0.35 * gauss(rng);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double grad_x = 0.15 * gauss(rng), grad_y = 0.15 * gauss(rng);
  const double noise = 0.02 + 0.03 * unit(rng);

  CifarRecord rec;
  rec.label = static_cast<std::uint8_t>(cls);
  constexpr int kSuper = 3;
  for (std::size_t y = 0; y < kCifarSide; ++y) {
    for (std::size_t x = 0; x < kCifarSide; ++x) {
      double cover = 0.0;
      for (int sy = 0; sy < kSuper; ++sy)
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = x + (sx + 0.5) / kSuper - cx;
          const double py = y + (sy + 0.5) / kSuper - cy;
          const double u = (ca * px + sa * py) / size;
          const double v = (-sa * px + ca * py) / size;
          cover += inside(cls, u, v) ? 1.0 : 0.0;
        }
      cover /= kSuper * kSuper;
      const double shade = grad_x * (x / 31.0 - 0.5) + grad_y * (y / 31.0 - 0.5);
      const double ch[3] = {cover * fg.r + (1 - cover) * bg.r, cover * fg.g + (1 - cover) * bg.g,
                            cover * fg.b + (1 - cover) * bg.b};
      for (std::size_t c = 0; c < 3; ++c) {
        const double val = std::clamp(ch[c] + shade + noise * gauss(rng), 0.0, 1.0);
        rec.pixels[c * kCifarSide * kCifarSide + y * kCifarSide + x] =
            static_cast<std::uint8_t>(std::lround(255.0 * val));
      }
    }
  }
  return rec;
}

}  // namespace

std::vector<CifarRecord> synthesize_cifar_like(std::size_t count, std::uint64_t seed) {
  std::vector<CifarRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, i));
    out.push_back(render_synthetic(static_cast<int>(i % kCifarClasses), rng));
  }
  return out;
}

void write_synthetic_cifar_dir(const std::filesystem::path& dir, std::size_t train_count,
                               std::size_t test_count, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  const auto train = synthesize_cifar_like(train_count, seed);
  const std::size_t per_file = (train_count + 4) / 5;
  for (std::size_t f = 0; f < 5; ++f) {
    const std::size_t lo = std::min(train_count, f * per_file);
    const std::size_t hi = std::min(train_count, lo + per_file);
    save_cifar10(dir / ("data_batch_" + std::to_string(f + 1) + ".bin"),
                 std::span<const CifarRecord>(train).subspan(lo, hi - lo));
  }
  save_cifar10(dir / "test_batch.bin", synthesize_cifar_like(test_count, derive_seed(seed, ~0ULL)));
}

}  // namespace dcssd
