#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "thumbnet/core/error.hpp"
#include "thumbnet/core/rng.hpp"
#include "thumbnet/dataio/dataset.hpp"

namespace thumbnet {

// Procedural ten-class benchmark in the CIFAR-10 binary layout. Classes
// factor into five pairs times two members, carried by two independent cues.
// A bright blob on a mid-radius ring encodes the pair through one of five
// angular slots with enough jitter to stay noisy. A diagonal grating patch
// pinned against the pixel Nyquist rate encodes the member through its
// orientation (45 vs 135 degrees); both frequency-axis components sit near
// 0.48 cycles/px, where a separable interpolating downscale attenuates the
// pattern below the noise floor on both axes. Plain subsampling therefore
// keeps only the noisy pair bit, while a filter applied before decimation
// can keep the member bit too. Images are luminance structure over a
// per-image color tint plus smooth background waves and pixel noise.
struct SynthOptions {
  std::size_t train_per_class = 400;
  std::size_t test_per_class = 100;
  double label_noise = 0.10;  // train split only: fraction with a wrong label
  std::uint64_t seed = 2024;
};

namespace detail {

inline constexpr std::size_t kSynthEdge = 32;
inline constexpr std::size_t kSynthClasses = 10;

inline void render_synth_image(std::uint8_t* out, std::size_t label, Rng& rng) {
  constexpr std::size_t e = kSynthEdge;
  constexpr double pi = 3.14159265358979323846;
  std::array<double, 3 * e * e> img;

  const double tint_r = rng.uniform(-18.0, 18.0);
  const double tint_g = rng.uniform(-18.0, 18.0);
  const double tint_b = rng.uniform(-18.0, 18.0);

  struct Wave {
    double amp, fx, fy, phase;
  };
  std::array<Wave, 2> bg;
  for (Wave& wv : bg) {
    const double amp = rng.uniform(6.0, 12.0);
    const double freq = rng.uniform(0.03, 0.08);
    const double ang = rng.uniform(0.0, pi);
    wv = {amp, freq * std::cos(ang), freq * std::sin(ang), rng.uniform(0.0, 2.0 * pi)};
  }

  const std::size_t pair = label / 2;
  const std::size_t member = label % 2;

  // Coarse cue: blob on a ring, one angular slot per class pair. Gaussian
  // jitter leaves a few percent of images in a neighbouring slot, so the
  // pair bit stays noisy for every method.
  const double blob_ang = (double(pair) * 72.0 + rng.normal(0.0, 18.0)) * pi / 180.0;
  const double blob_rad = 10.0 + rng.uniform(-1.0, 1.0);
  const double blob_cy = 15.5 + blob_rad * std::sin(blob_ang);
  const double blob_cx = 15.5 + blob_rad * std::cos(blob_ang);
  const double blob_sigma = 2.0 + rng.uniform(-0.3, 0.3);
  const double blob_amp = 46.0;

  // Fine cue: grating patch on one of the two diagonals. The larger axis
  // component of the frequency vector stays pinned near Nyquist, so a
  // separable interpolator suppresses the pattern at both axes.
  const double gr_theta =
      (45.0 + double(member) * 90.0 + rng.uniform(-8.0, 8.0)) * pi / 180.0;
  const double gcos = std::cos(gr_theta), gsin = std::sin(gr_theta);
  const double axis = std::max(std::abs(gcos), std::abs(gsin));
  const double gr_freq = 2.0 * pi * rng.uniform(0.48, 0.498) / axis;
  const double gr_phase = rng.uniform(0.0, 2.0 * pi);
  const double gr_cy = 15.5 + rng.uniform(-2.5, 2.5);
  const double gr_cx = 15.5 + rng.uniform(-2.5, 2.5);
  const double gr_rad = 8.0 + rng.uniform(-1.0, 1.0);
  const double gr_amp = 26.0;

  for (std::size_t y = 0; y < e; ++y) {
    for (std::size_t x = 0; x < e; ++x) {
      const double fy = double(y), fx = double(x);
      double lum = 0.0;
      for (const Wave& wv : bg)
        lum += wv.amp * std::cos(2.0 * pi * (wv.fx * fx + wv.fy * fy) + wv.phase);

      const double bdy = fy - blob_cy, bdx = fx - blob_cx;
      lum += blob_amp * std::exp(-(bdx * bdx + bdy * bdy) / (2.0 * blob_sigma * blob_sigma));

      const double gdy = fy - gr_cy, gdx = fx - gr_cx;
      const double dist = std::sqrt(gdx * gdx + gdy * gdy);
      const double window = 1.0 / (1.0 + std::exp((dist - gr_rad) / 1.2));
      lum += gr_amp * window * std::cos(gr_freq * (gdx * gcos + gdy * gsin) + gr_phase);

      const std::size_t idx = y * e + x;
      img[0 * e * e + idx] = 118.0 + tint_r + lum;
      img[1 * e * e + idx] = 118.0 + tint_g + lum;
      img[2 * e * e + idx] = 118.0 + tint_b + lum;
    }
  }

  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = img[i] + rng.normal(0.0, 6.5);
    out[i] = std::uint8_t(std::clamp(std::lround(v), 0l, 255l));
  }
}

}  // namespace detail

// Builds one split in memory. Labels are stored per image; when `label_noise`
// is positive, that fraction of images keeps its rendered class but receives
// a uniformly wrong label.
inline ImageDataset make_synth_split(std::size_t per_class, double label_noise, Rng& rng) {
  if (per_class == 0) throw UsageError("make_synth_split: per_class must be positive");
  if (label_noise < 0.0 || label_noise >= 1.0)
    throw UsageError("make_synth_split: label_noise must lie in [0, 1)");

  const std::size_t n = per_class * detail::kSynthClasses;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n - 1; i > 0; --i)
    std::swap(order[i], order[rng.below(i + 1)]);

  ImageDataset ds(detail::kSynthEdge, detail::kSynthEdge, detail::kSynthClasses);
  std::array<std::uint8_t, 3 * detail::kSynthEdge * detail::kSynthEdge> px;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = order[i] % detail::kSynthClasses;
    detail::render_synth_image(px.data(), cls, rng);
    std::size_t label = cls;
    if (label_noise > 0.0 && rng.uniform(0.0, 1.0) < label_noise)
      label = (cls + 1 + rng.below(detail::kSynthClasses - 1)) % detail::kSynthClasses;
    ds.push(px.data(), label);
  }
  return ds;
}

namespace detail {

inline void write_cifar_records(const ImageDataset& ds, std::size_t first, std::size_t count,
                                const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataFormatError("cannot open " + path + " for writing");
  for (std::size_t i = first; i < first + count; ++i) {
    const std::uint8_t label = std::uint8_t(ds.label(i));
    out.put(char(label));
    out.write(reinterpret_cast<const char*>(ds.image(i)), 3 * kSynthEdge * kSynthEdge);
  }
  if (!out) throw DataFormatError("write failed for " + path);
}

}  // namespace detail

// Writes the standard six-file CIFAR-10 directory: the train split spread
// evenly over data_batch_1..5.bin plus a clean test_batch.bin.
inline void write_synth_cifar_dir(const std::string& dir, const SynthOptions& opts) {
  Rng rng(opts.seed);
  ImageDataset train = make_synth_split(opts.train_per_class, opts.label_noise, rng);
  ImageDataset test = make_synth_split(opts.test_per_class, 0.0, rng);

  std::filesystem::create_directories(dir);
  const std::size_t n = train.size();
  std::size_t first = 0;
  for (int b = 1; b <= 5; ++b) {
    const std::size_t count = n / 5 + (std::size_t(b) <= n % 5 ? 1 : 0);
    detail::write_cifar_records(train, first, count,
                                dir + "/data_batch_" + std::to_string(b) + ".bin");
    first += count;
  }
  detail::write_cifar_records(test, 0, test.size(), dir + "/test_batch.bin");
}

}  // namespace thumbnet
