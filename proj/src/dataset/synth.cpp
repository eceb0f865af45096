#include "jcnn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>

#include "jcnn/errors.hpp"
#include "jcnn/rng.hpp"

namespace jcnn {

namespace {

// Value noise on a (cells+1)^2 lattice with smoothstep interpolation.
void add_octave(std::vector<double>& f, std::size_t w, std::size_t h, std::size_t cells, double amp, Rng& rng) {
  const std::size_t n = cells + 1;
  std::vector<double> lat(n * n);
  for (auto& v : lat) v = rng.normal();
  const double sx = static_cast<double>(cells) / static_cast<double>(w);
  const double sy = static_cast<double>(cells) / static_cast<double>(h);
  for (std::size_t y = 0; y < h; ++y) {
    const double gy = (static_cast<double>(y) + 0.5) * sy;
    const std::size_t y0 = std::min(static_cast<std::size_t>(gy), cells - 1);
    double ty = gy - static_cast<double>(y0);
    ty = ty * ty * (3 - 2 * ty);
    for (std::size_t x = 0; x < w; ++x) {
      const double gx = (static_cast<double>(x) + 0.5) * sx;
      const std::size_t x0 = std::min(static_cast<std::size_t>(gx), cells - 1);
      double tx = gx - static_cast<double>(x0);
      tx = tx * tx * (3 - 2 * tx);
      const double a = lat[y0 * n + x0], b = lat[y0 * n + x0 + 1];
      const double c = lat[(y0 + 1) * n + x0], d = lat[(y0 + 1) * n + x0 + 1];
      f[y * w + x] += amp * ((a + (b - a) * tx) * (1 - ty) + (c + (d - c) * tx) * ty);
    }
  }
}

double smooth_edge(double signed_dist, double width) { return 1.0 / (1.0 + std::exp(signed_dist / width)); }

}  // namespace

jpeg::GrayImage synth_natural_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> f(w * h, 0.0);

  // amplitude ~ cell size: roughly a 1/f spectrum
  const double beta = rng.uniform(0.8, 1.3);
  for (std::size_t cells = 2; cells <= std::max(w, h) / 2; cells *= 2)
    add_octave(f, w, h, cells, std::pow(static_cast<double>(cells), -beta), rng);
  double mean = 0, sq = 0;
  for (double v : f) mean += v;
  mean /= static_cast<double>(f.size());
  for (double v : f) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(f.size())) + 1e-12;
  const double target_sd = rng.uniform(15.0, 45.0);
  const double base = rng.uniform(70.0, 180.0);
  for (double& v : f) v = base + (v - mean) * target_sd / sd;

  // occluding shapes, painted back to front
  const int shapes = 4 + static_cast<int>(rng.below(16));
  const double W = static_cast<double>(w), H = static_cast<double>(h);
  for (int s = 0; s < shapes; ++s) {
    const double cx = rng.uniform(0, W), cy = rng.uniform(0, H);
    const double rx = rng.uniform(0.03, 0.3) * W, ry = rng.uniform(0.03, 0.3) * H;
    const double th = rng.uniform(0, std::numbers::pi);
    const double ct = std::cos(th), st = std::sin(th);
    const bool rect = rng.uniform() < 0.4;
    const double level = std::clamp(rng.normal(128.0, 60.0), 5.0, 250.0);
    const double edge = rng.uniform(0.4, 3.0);
    const bool textured = rng.uniform() < 0.35;
    const double freq = rng.uniform(0.05, 0.6), tex_amp = rng.uniform(4.0, 25.0);
    const double phi = rng.uniform(0, std::numbers::pi);
    const double shade = rng.uniform(-0.3, 0.3);
    const auto x_lo = static_cast<std::size_t>(std::max(0.0, cx - rx - ry - 8));
    const auto x_hi = static_cast<std::size_t>(std::clamp(cx + rx + ry + 8, 0.0, W));
    const auto y_lo = static_cast<std::size_t>(std::max(0.0, cy - rx - ry - 8));
    const auto y_hi = static_cast<std::size_t>(std::clamp(cy + rx + ry + 8, 0.0, H));
    for (std::size_t y = y_lo; y < y_hi; ++y)
      for (std::size_t x = x_lo; x < x_hi; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        const double u = ct * dx + st * dy, v = -st * dx + ct * dy;
        double dist;
        if (rect) {
          dist = std::max(std::abs(u) - rx, std::abs(v) - ry);
        } else {
          const double r = std::sqrt((u / rx) * (u / rx) + (v / ry) * (v / ry));
          dist = (r - 1.0) * std::min(rx, ry);
        }
        const double a = smooth_edge(dist, edge);
        if (a < 1e-4) continue;
        double val = level + shade * (u / rx) * 40.0;
        if (textured) val += tex_amp * std::sin(freq * (u * std::cos(phi) + v * std::sin(phi)));
        double& p = f[y * w + x];
        p = (1 - a) * p + a * val;
      }
  }

  // fine texture (foliage, fabric, grain), strong in some regions only
  {
    std::vector<double> tex(w * h, 0.0), env(w * h, 0.0);
    const double tb = rng.uniform(0.2, 0.7);
    for (std::size_t cells = 8; cells <= std::max(w, h) / 2; cells *= 2)
      add_octave(tex, w, h, cells, std::pow(static_cast<double>(cells), -tb), rng);
    add_octave(env, w, h, 3, 1.0, rng);
    add_octave(env, w, h, 6, 0.5, rng);
    double tsq = 0;
    for (double v : tex) tsq += v * v;
    const double tsd = std::sqrt(tsq / static_cast<double>(tex.size())) + 1e-12;
    const double tamp = rng.uniform(2.0, 14.0);
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double e = std::clamp(0.5 + env[i], 0.0, 1.5);
      f[i] += tamp * e * tex[i] / tsd;
    }
  }

  // illumination ramp and sensor noise
  const double gx = rng.uniform(-40, 40) / W, gy = rng.uniform(-40, 40) / H;
  const double noise = rng.uniform(0.5, 3.0);
  jpeg::GrayImage img(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double v = f[y * w + x] + gx * (static_cast<double>(x) - W / 2) + gy * (static_cast<double>(y) - H / 2) +
                       noise * rng.normal();
      img.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  return img;
}

std::vector<std::filesystem::path> synthesize_corpus(const std::filesystem::path& dir, std::size_t count,
                                                     std::size_t size, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths(count);
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%05zu.pgm", i);
    paths[i] = dir / name;
  }
  std::vector<std::string> errors(count);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(count); ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      jpeg::write_pgm(synth_natural_image(size, size, derive_seed(seed, k)), paths[k]);
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw DataError(e);
  return paths;
}

}  // namespace jcnn
