#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <filesystem>

#include "fddprec/channel.hpp"
#include "fddprec/config.hpp"
#include "fddprec/dataset_io.hpp"

using fddprec::ChannelDataset;
using fddprec::TaskConfig;

namespace {

TaskConfig tiny_config(std::size_t n_tx = 4, std::size_t n_users = 2) {
  TaskConfig cfg;
  cfg.task_id = "tiny";
  cfg.n_tx = n_tx;
  cfg.n_users = n_users;
  cfg.pilot_ratio = 0.5;
  cfg.feedback_ratio = 1.0;
  cfg.snr_db = 10.0;
  return cfg;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("resolve_config reproduces the published pilot/feedback widths") {
  TaskConfig cfg = tiny_config(72, 4);
  cfg.pilot_ratio = 1.0 / 4.0;
  cfg.feedback_ratio = 2.0 / 9.0;
  auto dims = fddprec::resolve_config(cfg);
  CHECK(dims.pilot_len == 18);
  CHECK(dims.feedback_bits == 16);
}

TEST_CASE("resolve_config edge rules") {
  SECTION("ratio 1 keeps full width") {
    TaskConfig cfg = tiny_config(8, 2);
    cfg.pilot_ratio = 1.0;
    CHECK(fddprec::resolve_config(cfg).pilot_len == 8);
  }
  SECTION("plain nearest below half") {
    TaskConfig cfg = tiny_config(10, 2);
    cfg.pilot_ratio = 1.0 / 3.0;  // 3.33 -> 3
    CHECK(fddprec::resolve_config(cfg).pilot_len == 3);
  }
  SECTION("exact halves round to even") {
    TaskConfig cfg = tiny_config(10, 2);
    cfg.pilot_ratio = 0.25;  // 2.5 -> 2
    CHECK(fddprec::resolve_config(cfg).pilot_len == 2);
    cfg.n_tx = 14;  // 3.5 -> 4
    CHECK(fddprec::resolve_config(cfg).pilot_len == 4);
  }
  SECTION("zero resolution is an error") {
    TaskConfig cfg = tiny_config(4, 2);
    cfg.pilot_ratio = 0.05;  // 0.2 -> 0
    CHECK_THROWS_AS(fddprec::resolve_config(cfg), std::invalid_argument);
  }
  SECTION("idempotence") {
    TaskConfig cfg = tiny_config(72, 4);
    cfg.pilot_ratio = 1.0 / 4.0;
    cfg.feedback_ratio = 2.0 / 9.0;
    auto once = fddprec::resolve_config(cfg);
    auto twice = fddprec::resolve_config(cfg);
    CHECK(once.pilot_len == twice.pilot_len);
    CHECK(once.feedback_bits == twice.feedback_bits);
  }
}

TEST_CASE("snr_to_sigma2 follows the decibel definition") {
  CHECK(fddprec::snr_to_sigma2(10.0, 1.0) == Catch::Approx(0.1).epsilon(1e-12));
  CHECK(fddprec::snr_to_sigma2(0.0, 1.0) == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(fddprec::snr_to_sigma2(20.0, 2.0) == Catch::Approx(0.02).epsilon(1e-12));
  CHECK_THROWS_AS(fddprec::snr_to_sigma2(10.0, 0.0), std::invalid_argument);
}

TEST_CASE("rayleigh generation is a pure function of (config, count, seed)") {
  TaskConfig cfg = tiny_config();
  auto a = fddprec::gen_rayleigh(cfg, 16, 99);
  auto b = fddprec::gen_rayleigh(cfg, 16, 99);
  REQUIRE(a.data.size() == b.data.size());
  CHECK(a.data == b.data);

  auto c = fddprec::gen_rayleigh(cfg, 16, 100);
  bool first_sample_differs = false;
  for (std::size_t i = 0; i < a.sample_floats(); ++i)
    if (a.data[i] != c.data[i]) first_sample_differs = true;
  CHECK(first_sample_differs);
}

TEST_CASE("rayleigh entries have zero mean and unit second moment") {
  TaskConfig cfg = tiny_config(10, 10);
  auto ds = fddprec::gen_rayleigh(cfg, 1000, 7);  // 100,000 complex entries
  double re_sum = 0.0, im_sum = 0.0, pow_sum = 0.0;
  const std::size_t entries = ds.samples * cfg.n_users * cfg.n_tx;
  for (std::size_t i = 0; i < entries; ++i) {
    const double re = ds.data[2 * i], im = ds.data[2 * i + 1];
    CHECK(std::isfinite(re));
    CHECK(std::isfinite(im));
    re_sum += re;
    im_sum += im;
    pow_sum += re * re + im * im;
  }
  const double n = static_cast<double>(entries);
  CHECK(std::abs(std::complex<double>(re_sum / n, im_sum / n)) <= 0.02);
  CHECK(pow_sum / n >= 0.98);
  CHECK(pow_sum / n <= 1.02);
}

TEST_CASE("broadside steering vector is all ones") {
  auto a = fddprec::steering_vector(6, 0.0);
  for (const auto& v : a) {
    CHECK(v.real() == 1.0);
    CHECK(v.imag() == 0.0);
  }
}

TEST_CASE("single unit-gain path has squared norm N_t") {
  auto h = fddprec::geometric_user_channel(8, {0.37}, {{1.0, 0.0}});
  double norm2 = 0.0;
  for (const auto& v : h) norm2 += std::norm(v);
  CHECK(norm2 == Catch::Approx(8.0).epsilon(1e-12));
}

TEST_CASE("orthogonal path angles decorrelate users relative to rayleigh") {
  // For an 8-element half-wavelength array, sin(theta) offsets of 1/4
  // land on orthogonal DFT beams.
  fddprec::Rng rng(31);
  const std::size_t n_tx = 8, draws = 10000;
  const double theta1 = 0.0, theta2 = std::asin(0.25);
  double geo_corr = 0.0, ray_corr = 0.0;
  for (std::size_t d = 0; d < draws; ++d) {
    const std::complex<double> g1(rng.normal(), rng.normal());
    const std::complex<double> g2(rng.normal(), rng.normal());
    auto h1 = fddprec::geometric_user_channel(n_tx, {theta1}, {g1});
    auto h2 = fddprec::geometric_user_channel(n_tx, {theta2}, {g2});
    std::complex<double> dot(0.0, 0.0);
    double n1 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < n_tx; ++i) {
      dot += std::conj(h1[i]) * h2[i];
      n1 += std::norm(h1[i]);
      n2 += std::norm(h2[i]);
    }
    geo_corr += std::abs(dot) / std::sqrt(n1 * n2);

    std::vector<std::complex<double>> r1(n_tx), r2(n_tx);
    dot = {0.0, 0.0};
    n1 = n2 = 0.0;
    for (std::size_t i = 0; i < n_tx; ++i) {
      r1[i] = {rng.normal(), rng.normal()};
      r2[i] = {rng.normal(), rng.normal()};
      dot += std::conj(r1[i]) * r2[i];
      n1 += std::norm(r1[i]);
      n2 += std::norm(r2[i]);
    }
    ray_corr += std::abs(dot) / std::sqrt(n1 * n2);
  }
  geo_corr /= static_cast<double>(draws);
  ray_corr /= static_cast<double>(draws);
  CHECK(geo_corr < ray_corr);
  CHECK(geo_corr < 1e-6);  // exactly orthogonal beams up to rounding
}

TEST_CASE("geometric generation is reproducible and finite") {
  TaskConfig cfg = tiny_config(8, 2);
  cfg.channel_model = fddprec::ChannelModel::geometric;
  cfg.paths = 3;
  auto a = fddprec::gen_geometric(cfg, 8, 5);
  auto b = fddprec::gen_geometric(cfg, 8, 5);
  CHECK(a.data == b.data);
  for (float v : a.data) CHECK(std::isfinite(v));
}

TEST_CASE("geometric per-entry power averages to one") {
  TaskConfig cfg = tiny_config(16, 4);
  cfg.channel_model = fddprec::ChannelModel::geometric;
  cfg.paths = 4;
  auto ds = fddprec::gen_geometric(cfg, 400, 11);
  double pow_sum = 0.0;
  const std::size_t entries = ds.samples * cfg.n_users * cfg.n_tx;
  for (std::size_t i = 0; i < entries; ++i)
    pow_sum += double(ds.data[2 * i]) * ds.data[2 * i] +
               double(ds.data[2 * i + 1]) * ds.data[2 * i + 1];
  // E||h||^2 = N_t  =>  per-entry second moment 1.
  CHECK(pow_sum / static_cast<double>(entries) == Catch::Approx(1.0).margin(0.05));
}

TEST_CASE("split follows the declared ratio with floor on the train side") {
  TaskConfig cfg = tiny_config(1, 1);
  auto make = [&](std::size_t s) {
    ChannelDataset ds;
    ds.config = cfg;
    ds.samples = s;
    ds.data.assign(s * ds.sample_floats(), 0.0f);
    return ds;
  };
  auto d10 = make(10);
  auto [tr10, te10] = fddprec::split(d10, 0.7);
  CHECK(tr10.count == 7);
  CHECK(te10.count == 3);

  auto d3 = make(3);
  auto [tr3, te3] = fddprec::split(d3, 0.7);
  CHECK(tr3.count == 2);
  CHECK(te3.count == 1);

  auto big = make(300000);
  auto [trb, teb] = fddprec::split(big, 0.7);
  CHECK(trb.count == 210000);
  CHECK(teb.count == 90000);

  auto d1 = make(1);
  CHECK_THROWS_AS(fddprec::split(d1, 0.7), std::invalid_argument);
}

TEST_CASE("split views index into the parent without copying") {
  TaskConfig cfg = tiny_config(2, 1);
  auto ds = fddprec::gen_rayleigh(cfg, 10, 3);
  auto [train, test] = fddprec::split(ds, 0.7);
  auto h = test.sample<double>(0);
  auto direct = ds.sample<double>(7);
  CHECK(h.re.data() == direct.re.data());
  CHECK(h.im.data() == direct.im.data());
  CHECK_THROWS_AS(test.sample<double>(3), fddprec::shape_error);
}

TEST_CASE("dataset save/load round-trips exactly") {
  TaskConfig cfg = tiny_config(4, 2);
  cfg.channel_model = fddprec::ChannelModel::geometric;
  cfg.pilot_ratio = 2.0 / 9.0 * 4.5;  // arbitrary exact double
  auto ds = fddprec::gen_geometric(cfg, 12, 21);
  const auto path = temp_file("fddprec_roundtrip.fddc");
  fddprec::save_dataset(ds, path.string());
  auto back = fddprec::load_dataset(path.string());
  CHECK(back.samples == ds.samples);
  CHECK(back.data == ds.data);
  CHECK(back.config.task_id == ds.config.task_id);
  CHECK(back.config.n_tx == ds.config.n_tx);
  CHECK(back.config.n_users == ds.config.n_users);
  CHECK(back.config.pilot_ratio == ds.config.pilot_ratio);
  CHECK(back.config.channel_model == ds.config.channel_model);
  std::filesystem::remove(path);
}

TEST_CASE("dataset loader distinguishes corruption modes") {
  TaskConfig cfg = tiny_config(2, 1);
  auto ds = fddprec::gen_rayleigh(cfg, 4, 1);
  const auto path = temp_file("fddprec_corrupt.fddc");
  fddprec::save_dataset(ds, path.string());
  const auto pristine = fddprec::binio::read_file(path.string());

  SECTION("bad magic") {
    auto bytes = pristine;
    bytes[0] = 'X';
    fddprec::binio::write_file(path.string(), bytes);
    CHECK_THROWS_AS(fddprec::load_dataset(path.string()), fddprec::bad_magic_error);
  }
  SECTION("version mismatch") {
    auto bytes = pristine;
    bytes[4] = 0x7F;
    fddprec::binio::write_file(path.string(), bytes);
    CHECK_THROWS_AS(fddprec::load_dataset(path.string()), fddprec::version_error);
  }
  SECTION("truncated payload") {
    auto bytes = pristine;
    bytes.resize(bytes.size() - 9);
    fddprec::binio::write_file(path.string(), bytes);
    CHECK_THROWS_AS(fddprec::load_dataset(path.string()), fddprec::truncated_error);
  }
  SECTION("payload corruption fails the checksum") {
    auto bytes = pristine;
    bytes[bytes.size() - 9] ^= 0x40;  // flip a payload bit
    fddprec::binio::write_file(path.string(), bytes);
    CHECK_THROWS_AS(fddprec::load_dataset(path.string()), fddprec::checksum_error);
  }
  SECTION("malformed header JSON") {
    auto bytes = pristine;
    bytes[11] = '!';  // first header byte (after magic, version, length)
    fddprec::binio::write_file(path.string(), bytes);
    CHECK_THROWS_AS(fddprec::load_dataset(path.string()), fddprec::manifest_error);
  }
  std::filesystem::remove(path);
}

TEST_CASE("crc32 matches the published check value") {
  const unsigned char msg[] = "123456789";
  CHECK(fddprec::crc32(msg, 9) == 0xCBF43926u);
}

TEST_CASE("task config JSON accepts rational strings") {
  nlohmann::json j = {
      {"task_id", "t9"},   {"n_tx", 72},          {"n_users", 4},
      {"pilot_ratio", "1/4"}, {"feedback_ratio", "2/9"}, {"snr_db", 10.0},
  };
  auto cfg = j.get<TaskConfig>();
  auto dims = fddprec::resolve_config(cfg);
  CHECK(dims.pilot_len == 18);
  CHECK(dims.feedback_bits == 16);
  nlohmann::json round = cfg;
  auto cfg2 = round.get<TaskConfig>();
  CHECK(cfg2.pilot_ratio == cfg.pilot_ratio);
}
