#include "blindsr/toyimg.hpp"

#include <algorithm>
#include <cmath>

#include "blindsr/common.hpp"

namespace blindsr {

Tensor toy_texture_image(int channels, int h, int w, Rng& rng) {
  BSR_CHECK(channels >= 1 && h >= 4 && w >= 4, "toy_texture_image: too small");
  constexpr double kTwoPi = 6.283185307179586;

  double fx1 = rng.uniform(0.06, 0.35), fy1 = rng.uniform(0.06, 0.35);
  double fx2 = rng.uniform(0.10, 0.45), fy2 = rng.uniform(0.10, 0.45);
  double ph1 = rng.uniform(0.0, kTwoPi), ph2 = rng.uniform(0.0, kTwoPi);

  int nblobs = static_cast<int>(rng.uniform_int(2, 4));
  struct Blob { double ci, cj, r, a; };
  std::vector<Blob> blobs;
  for (int k = 0; k < nblobs; ++k) {
    blobs.push_back({rng.uniform(0.1, 0.9) * h, rng.uniform(0.1, 0.9) * w,
                     rng.uniform(1.5, 4.5),
                     (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.10, 0.25)});
  }
  double eth = rng.uniform(0.0, kTwoPi);
  double ec = std::cos(eth), es = std::sin(eth);
  double eoff = rng.uniform(-0.2, 0.2) * std::min(h, w);
  double estep = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.08, 0.18);

  std::vector<double> lum(static_cast<size_t>(h) * w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double v = 0.5;
      v += 0.16 * std::sin(kTwoPi * (fx1 * i + fy1 * j) + ph1);
      v += 0.11 * std::sin(kTwoPi * (fx2 * i - fy2 * j) + ph2);
      for (const Blob& b : blobs) {
        double di = i - b.ci, dj = j - b.cj;
        v += b.a * std::exp(-(di * di + dj * dj) / (2.0 * b.r * b.r));
      }
      double proj = (i - 0.5 * h) * ec + (j - 0.5 * w) * es;
      if (proj > eoff) v += estep;
      lum[static_cast<size_t>(i * w + j)] = v;
    }
  }

  std::vector<double> out(static_cast<size_t>(channels) * h * w);
  for (int c = 0; c < channels; ++c) {
    double gain = rng.uniform(0.85, 1.0);
    double bias = rng.uniform(-0.04, 0.04);
    for (int i = 0; i < h * w; ++i) {
      double v = lum[static_cast<size_t>(i)] * gain + bias;
      out[static_cast<size_t>(c * h * w + i)] = std::clamp(v, 0.02, 0.98);
    }
  }
  return Tensor::from_data({channels, h, w}, std::move(out));
}

}  // namespace blindsr
