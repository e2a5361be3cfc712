#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "fddprec/complex.hpp"
#include "fddprec/config.hpp"
#include "fddprec/rng.hpp"
#include "fddprec/tensor.hpp"

namespace fddprec {

// A batch of channel realizations. Sample s is a K x N_t complex matrix
// whose row k is the conjugated channel vector of user k, so downstream
// algebra (pilot reception, rate terms) is plain matrix arithmetic.
// Entries are stored as float32 (re, im) pairs — the on-disk precision —
// so generation, persistence, and reload are all bit-identical.
struct ChannelDataset {
  TaskConfig config;
  std::size_t samples = 0;
  std::vector<float> data;  // [S][K][N_t] x (re, im)

  std::size_t sample_floats() const { return config.n_users * config.n_tx * 2; }

  const float* sample_ptr(std::size_t s) const { return data.data() + s * sample_floats(); }

  // Materialize sample s as a pair of real planes in the working precision.
  template <typename T>
  ComplexMatrix<T> sample(std::size_t s) const {
    if (s >= samples)
      throw shape_error("dataset: sample " + std::to_string(s) + " out of range (have " +
                        std::to_string(samples) + ")");
    const std::size_t k = config.n_users, n = config.n_tx;
    ComplexMatrix<T> h(k, n);
    const float* p = sample_ptr(s);
    for (std::size_t i = 0; i < k * n; ++i) {
      h.re.data()[i] = static_cast<T>(p[2 * i]);
      h.im.data()[i] = static_cast<T>(p[2 * i + 1]);
    }
    return h;
  }
};

// Contiguous train/test views over one dataset: first floor(S * fraction)
// samples train, the remainder test.
struct DatasetSplit {
  const ChannelDataset* ds = nullptr;
  std::size_t begin = 0;
  std::size_t count = 0;

  template <typename T>
  ComplexMatrix<T> sample(std::size_t i) const {
    if (i >= count)
      throw shape_error("split: sample " + std::to_string(i) + " out of range (have " +
                        std::to_string(count) + ")");
    return ds->template sample<T>(begin + i);
  }
};

inline std::pair<DatasetSplit, DatasetSplit> split(const ChannelDataset& ds,
                                                   double train_fraction) {
  if (!(train_fraction > 0.0) || !(train_fraction < 1.0))
    throw std::invalid_argument("split: train_fraction " + std::to_string(train_fraction) +
                                " outside (0,1)");
  const auto n_train =
      static_cast<std::size_t>(std::floor(static_cast<double>(ds.samples) * train_fraction));
  if (n_train == 0 || n_train == ds.samples)
    throw std::invalid_argument("split: empty side (S=" + std::to_string(ds.samples) +
                                ", fraction=" + std::to_string(train_fraction) + ")");
  return {DatasetSplit{&ds, 0, n_train}, DatasetSplit{&ds, n_train, ds.samples - n_train}};
}

// Uniform-linear-array steering vector: a(theta)[n] = exp(j pi n sin(theta)).
inline std::vector<std::complex<double>> steering_vector(std::size_t n_tx, double theta) {
  std::vector<std::complex<double>> a(n_tx);
  const double s = std::sin(theta);
  for (std::size_t n = 0; n < n_tx; ++n) {
    const double phase = M_PI * static_cast<double>(n) * s;
    a[n] = {std::cos(phase), std::sin(phase)};
  }
  return a;
}

// Multipath user channel h = sum_p gains[p] * a(angles[p]).
inline std::vector<std::complex<double>> geometric_user_channel(
    std::size_t n_tx, const std::vector<double>& angles,
    const std::vector<std::complex<double>>& gains) {
  if (angles.size() != gains.size())
    throw std::invalid_argument("geometric_user_channel: " + std::to_string(angles.size()) +
                                " angles vs " + std::to_string(gains.size()) + " gains");
  std::vector<std::complex<double>> h(n_tx, {0.0, 0.0});
  for (std::size_t p = 0; p < angles.size(); ++p) {
    const auto a = steering_vector(n_tx, angles[p]);
    for (std::size_t n = 0; n < n_tx; ++n) h[n] += gains[p] * a[n];
  }
  return h;
}

namespace detail {

// Stream tags separating independent random uses of the same base seed.
inline constexpr std::uint64_t kStreamChannel = 0x6368616e6e656cULL;   // "channel"
inline constexpr std::uint64_t kStreamNoise = 0x6e6f697365ULL;         // "noise"
inline constexpr std::uint64_t kStreamInit = 0x696e6974ULL;            // "init"
inline constexpr std::uint64_t kStreamEpoch = 0x65706f6368ULL;         // "epoch"

}  // namespace detail

// I.i.d. entries with independent real/imag parts ~ Normal(0, 1/2), so the
// per-entry second moment is 1. Each sample draws from its own derived
// seed, making generation order-independent and reproducible.
inline ChannelDataset gen_rayleigh(const TaskConfig& cfg, std::size_t count,
                                   std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("gen_rayleigh: count must be >= 1");
  ChannelDataset ds;
  ds.config = cfg;
  ds.samples = count;
  ds.data.resize(count * ds.sample_floats());
  const double scale = 1.0 / std::sqrt(2.0);
  for (std::size_t s = 0; s < count; ++s) {
    Rng rng(derive_seed(seed, detail::kStreamChannel, s));
    float* p = ds.data.data() + s * ds.sample_floats();
    for (std::size_t i = 0; i < cfg.n_users * cfg.n_tx; ++i) {
      p[2 * i] = static_cast<float>(rng.normal() * scale);
      p[2 * i + 1] = static_cast<float>(rng.normal() * scale);
    }
  }
  return ds;
}

// Sum over `paths` planar wavefronts with complex Gaussian gains of
// variance 1/paths, so E||h||^2 = N_t. Path angles are uniform over the
// configured spread centered on broadside; row k stores the conjugate of
// h_k (the dataset convention above).
inline ChannelDataset gen_geometric(const TaskConfig& cfg, std::size_t count,
                                    std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("gen_geometric: count must be >= 1");
  if (cfg.paths < 1) throw std::invalid_argument("gen_geometric: paths must be >= 1");
  ChannelDataset ds;
  ds.config = cfg;
  ds.samples = count;
  ds.data.resize(count * ds.sample_floats());
  const double gain_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.paths));
  const double half_spread = cfg.angle_spread_deg * M_PI / 180.0 / 2.0;
  for (std::size_t s = 0; s < count; ++s) {
    Rng rng(derive_seed(seed, detail::kStreamChannel, s));
    float* p = ds.data.data() + s * ds.sample_floats();
    for (std::size_t k = 0; k < cfg.n_users; ++k) {
      std::vector<double> angles(cfg.paths);
      std::vector<std::complex<double>> gains(cfg.paths);
      for (std::size_t q = 0; q < cfg.paths; ++q) {
        angles[q] = rng.uniform(-half_spread, half_spread);
        gains[q] = {rng.normal() * gain_scale, rng.normal() * gain_scale};
      }
      const auto h = geometric_user_channel(cfg.n_tx, angles, gains);
      for (std::size_t n = 0; n < cfg.n_tx; ++n) {
        p[2 * (k * cfg.n_tx + n)] = static_cast<float>(h[n].real());
        p[2 * (k * cfg.n_tx + n) + 1] = static_cast<float>(-h[n].imag());
      }
    }
  }
  return ds;
}

inline ChannelDataset generate_dataset(const TaskConfig& cfg, std::size_t count,
                                       std::uint64_t seed) {
  return cfg.channel_model == ChannelModel::rayleigh ? gen_rayleigh(cfg, count, seed)
                                                     : gen_geometric(cfg, count, seed);
}

}  // namespace fddprec
