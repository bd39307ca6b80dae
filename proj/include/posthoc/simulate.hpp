#ifndef POSTHOC_SIMULATE_HPP
#define POSTHOC_SIMULATE_HPP

// Synthetic group data: smoothed Gaussian noise per subject plus constant
// effects inside spherical signal regions.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "posthoc/data_model.hpp"
#include "posthoc/parallel.hpp"
#include "posthoc/philox.hpp"

namespace posthoc {

struct SignalRegion {
  Vec3 center{};       // voxel coordinates
  double radius = 0.0; // voxels
  double effect = 0.0; // sd units
};

struct SimConfig {
  std::array<std::uint32_t, 3> dims{30, 30, 30};
  float voxel_mm = 3.0f;
  std::size_t n_subjects = 20;
  double sigma = 2.0; // smoothing kernel sd in voxels
  std::vector<SignalRegion> regions;
  /// With no explicit regions, plant one central sphere covering about (1 - pi0) m voxels.
  std::optional<double> pi0;
  double pi0_effect = 1.0;
  std::uint64_t seed = 0;
  unsigned threads = default_threads();
};

struct SimulatedData {
  SubjectStack stack;
  std::vector<std::uint8_t> h0; // 1 = null voxel
  double pi0 = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_weights(double sigma) {
  if (sigma == 0.0) return {1.0};
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> w(2 * static_cast<std::size_t>(radius) + 1);
  for (int i = -radius; i <= radius; ++i) w[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  return w;
}

/// One subject's unit-variance noise volume (x-fastest), a pure function of (seed, subject).
inline std::vector<double> smooth_noise(const std::array<std::uint32_t, 3>& dims, double sigma, std::uint64_t seed,
                                        std::uint32_t subject) {
  const auto w = gaussian_weights(sigma);
  const std::size_t r = w.size() / 2;
  const std::array<std::size_t, 3> padded{dims[0] + 2 * r, dims[1] + 2 * r, dims[2] + 2 * r};
  const std::size_t total = padded[0] * padded[1] * padded[2];

  std::vector<double> a(total);
  const auto key = Philox4x32::key_from_seed(seed);
  for (std::size_t i = 0; i < total; i += 2) {
    const auto block = Philox4x32::block({subject, static_cast<std::uint32_t>(i / 2), static_cast<std::uint32_t>((i / 2) >> 32),
                                          static_cast<std::uint32_t>(StreamTag::noise)},
                                         key);
    const auto g = normal_pair(block);
    a[i] = g[0];
    if (i + 1 < total) a[i + 1] = g[1];
  }
  if (r == 0) return a;

  // Separable "valid" convolution, one axis at a time.
  std::array<std::size_t, 3> cur = padded;
  for (int axis = 0; axis < 3; ++axis) {
    std::array<std::size_t, 3> next = cur;
    next[axis] = dims[axis];
    std::vector<double> b(next[0] * next[1] * next[2], 0.0);
    const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? cur[0] : cur[0] * cur[1]);
    for (std::size_t z = 0; z < next[2]; ++z)
      for (std::size_t y = 0; y < next[1]; ++y)
        for (std::size_t x = 0; x < next[0]; ++x) {
          const std::size_t base = x + cur[0] * (y + cur[1] * z);
          double acc = 0.0;
          for (std::size_t j = 0; j < w.size(); ++j) acc += w[j] * a[base + j * stride];
          b[x + next[0] * (y + next[1] * z)] = acc;
        }
    a = std::move(b);
    cur = next;
  }
  double ss = 0.0;
  for (double v : w) ss += v * v;
  const double scale = 1.0 / std::pow(ss, 1.5);
  for (double& v : a) v *= scale;
  return a;
}

} // namespace detail

inline SimulatedData simulate_dataset(const SimConfig& cfg) {
  if (!(cfg.sigma >= 0.0) || !std::isfinite(cfg.sigma)) throw ParamError("smoothing sigma must be finite and >= 0");
  if (cfg.n_subjects < 1) throw ParamError("need at least one subject");
  auto mask = std::make_shared<const Mask>(Mask::full(Grid3::scaled(cfg.dims, cfg.voxel_mm)));
  const std::size_t m = mask->size();
  const auto& dims = cfg.dims;

  std::vector<SignalRegion> regions = cfg.regions;
  if (regions.empty() && cfg.pi0) {
    const double pi0 = *cfg.pi0;
    if (!(pi0 >= 0.0 && pi0 <= 1.0)) throw ParamError("pi0 must lie in [0, 1]");
    const Vec3 centre{(dims[0] - 1) / 2.0, (dims[1] - 1) / 2.0, (dims[2] - 1) / 2.0};
    const double want = (1.0 - pi0) * static_cast<double>(m);
    if (want >= 1.0) {
      // smallest radius whose sphere reaches the wanted voxel count
      std::vector<double> d2(m);
      for (std::size_t v = 0; v < m; ++v) {
        const auto c = mask->coords(v);
        double s = 0.0;
        for (int a = 0; a < 3; ++a) s += (c[a] - centre[a]) * (c[a] - centre[a]);
        d2[v] = s;
      }
      const auto n = std::min(m, static_cast<std::size_t>(std::ceil(want)));
      std::nth_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(n - 1), d2.end());
      regions.push_back({centre, std::sqrt(d2[n - 1]), cfg.pi0_effect});
    }
  }
  for (const auto& reg : regions) {
    if (!std::isfinite(reg.effect)) throw ParamError("signal effect must be finite");
    if (!(reg.radius >= 0.0)) throw ParamError("signal radius must be >= 0");
    for (int a = 0; a < 3; ++a)
      if (!(reg.center[a] >= 0.0 && reg.center[a] <= dims[a] - 1.0)) throw ParamError("signal region centre outside the grid");
  }

  std::vector<double> effect(m, 0.0);
  std::vector<std::uint8_t> h0(m, 1);
  for (std::size_t v = 0; v < m; ++v) {
    const auto c = mask->coords(v);
    bool covered = false;
    double best = 0.0;
    for (const auto& reg : regions) {
      double s = 0.0;
      for (int a = 0; a < 3; ++a) s += (c[a] - reg.center[a]) * (c[a] - reg.center[a]);
      if (s <= reg.radius * reg.radius) {
        best = covered ? std::max(best, reg.effect) : reg.effect;
        covered = true;
      }
    }
    if (covered) {
      effect[v] = best;
      h0[v] = best == 0.0 ? 1 : 0;
    }
  }

  std::vector<float> data(cfg.n_subjects * m);
  parallel_for(cfg.n_subjects, cfg.threads, [&](std::size_t s, unsigned) {
    const auto noise = detail::smooth_noise(dims, cfg.sigma, cfg.seed, static_cast<std::uint32_t>(s));
    for (std::size_t v = 0; v < m; ++v) data[s * m + v] = static_cast<float>(noise[mask->flat_index(v)] + effect[v]);
  });

  const double pi0 = static_cast<double>(std::count(h0.begin(), h0.end(), 1)) / static_cast<double>(m);
  return SimulatedData{SubjectStack(mask, cfg.n_subjects, std::move(data)), std::move(h0), pi0};
}

} // namespace posthoc

#endif
