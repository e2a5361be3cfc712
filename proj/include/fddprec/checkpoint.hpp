#pragma once

// Model checkpoints:
//   "FDDM" | version u16 LE | manifest length u32 LE | manifest (UTF-8 JSON)
//   | payload | CRC32 (u32 LE) of the payload bytes
// The manifest records the architecture, registered task configs, and a
// named parameter list with shapes; the payload holds the parameters in
// manifest order, followed by the optimizer's first/second moments (in slot
// order, m then v) when optimizer state is included. Scalars are stored in
// the training precision, declared by the manifest's "dtype" field ("f32"
// default, "f64" for double-precision runs).

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fddprec/binio.hpp"
#include "fddprec/config.hpp"
#include "fddprec/model.hpp"
#include "fddprec/optim.hpp"

namespace fddprec {

inline constexpr char kCheckpointMagic[4] = {'F', 'D', 'D', 'M'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
const char* dtype_name();
template <>
inline const char* dtype_name<float>() {
  return "f32";
}
template <>
inline const char* dtype_name<double>() {
  return "f64";
}

template <typename T>
void put_scalar(std::vector<unsigned char>& out, T v);
template <>
inline void put_scalar<float>(std::vector<unsigned char>& out, float v) {
  binio::put_f32(out, v);
}
template <>
inline void put_scalar<double>(std::vector<unsigned char>& out, double v) {
  binio::put_f64(out, v);
}

template <typename T>
T read_scalar(binio::Reader& r, const char* what);
template <>
inline float read_scalar<float>(binio::Reader& r, const char* what) {
  return r.f32(what);
}
template <>
inline double read_scalar<double>(binio::Reader& r, const char* what) {
  return r.f64(what);
}

}  // namespace detail

// In-memory image of a checkpoint file. Model reconstruction copies values
// into a freshly initialized model of the recorded kind.
template <typename T>
struct CheckpointFile {
  std::string kind;  // "mtl", "dsc", or "cep"
  Hyper hyper;
  std::vector<TaskConfig> tasks;
  std::size_t epoch = 0;
  std::vector<std::pair<std::string, Tensor<T>>> params;
  bool has_adam = false;
  std::uint64_t adam_step = 0;
  std::map<std::string, std::pair<std::vector<T>, std::vector<T>>> adam_state;

  const Tensor<T>* find(const std::string& name) const {
    for (const auto& [n, t] : params)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {

template <typename T>
void save_checkpoint_impl(const std::string& path, const std::string& kind, const Hyper& hyper,
                          const std::vector<TaskConfig>& tasks,
                          const std::vector<std::pair<std::string, Tensor<T>>>& params,
                          const Adam<T>* adam, std::size_t epoch) {
  nlohmann::json manifest;
  manifest["kind"] = kind;
  manifest["dtype"] = dtype_name<T>();
  manifest["epoch"] = epoch;
  manifest["hyper"] = hyper;
  manifest["tasks"] = tasks;
  auto& plist = manifest["params"] = nlohmann::json::array();
  for (const auto& [name, t] : params)
    plist.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  if (adam) {
    auto& slots = manifest["adam"]["slots"] = nlohmann::json::array();
    adam->visit_state(
        [&](const std::string& name, const std::vector<T>&, const std::vector<T>&) {
          slots.push_back(name);
        });
    manifest["adam"]["step"] = adam->step_count();
  }
  const std::string text = manifest.dump();

  std::vector<unsigned char> out;
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
  binio::put_u16(out, kCheckpointVersion);
  binio::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());

  const std::size_t payload_start = out.size();
  for (const auto& [name, t] : params)
    for (T v : t.data()) put_scalar<T>(out, v);
  if (adam)
    adam->visit_state(
        [&](const std::string&, const std::vector<T>& m, const std::vector<T>& v) {
          for (T x : m) put_scalar<T>(out, x);
          for (T x : v) put_scalar<T>(out, x);
        });
  binio::put_u32(out, crc32(out.data() + payload_start, out.size() - payload_start));
  binio::write_file(path, out);
}

// Parameter sizes checkpointed for an Adam slot are looked up in the
// param list; slot names must reference declared parameters.
template <typename T>
std::size_t param_size_or_throw(const std::vector<std::pair<std::string, Tensor<T>>>& params,
                                const std::string& name, const std::string& path) {
  for (const auto& [n, t] : params)
    if (n == name) return t.size();
  throw manifest_error("'" + path + "': optimizer slot '" + name +
                       "' names no declared parameter");
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, ModelBundle<T>& bundle,
                     const Adam<T>* adam = nullptr, std::size_t epoch = 0) {
  std::vector<std::pair<std::string, Tensor<T>>> params;
  bundle.visit_all([&](const std::string& n, Tensor<T>& t) { params.emplace_back(n, t); });
  std::vector<TaskConfig> tasks;
  for (const auto& [id, entry] : bundle.tasks) tasks.push_back(entry.config);
  detail::save_checkpoint_impl(path, "mtl", bundle.hyper, tasks, params, adam, epoch);
}

template <typename T>
void save_checkpoint(const std::string& path, DscModel<T>& model,
                     const Adam<T>* adam = nullptr, std::size_t epoch = 0) {
  std::vector<std::pair<std::string, Tensor<T>>> params;
  model.visit([&](const std::string& n, Tensor<T>& t) { params.emplace_back(n, t); });
  detail::save_checkpoint_impl(path, "dsc", model.hyper, {model.config}, params, adam, epoch);
}

template <typename T>
void save_checkpoint(const std::string& path, CepModel<T>& model,
                     const Adam<T>* adam = nullptr, std::size_t epoch = 0) {
  std::vector<std::pair<std::string, Tensor<T>>> params;
  model.visit([&](const std::string& n, Tensor<T>& t) { params.emplace_back(n, t); });
  detail::save_checkpoint_impl(path, "cep", model.hyper, {model.config}, params, adam, epoch);
}

template <typename T>
CheckpointFile<T> load_checkpoint(const std::string& path) {
  const auto bytes = binio::read_file(path);
  binio::Reader r(bytes);
  const std::string magic = r.bytes(4, "magic");
  if (magic != std::string(kCheckpointMagic, 4))
    throw bad_magic_error("'" + path + "': bad magic '" + magic + "', expected 'FDDM'");
  const std::uint16_t version = r.u16("version");
  if (version != kCheckpointVersion)
    throw version_error("'" + path + "': checkpoint format version " + std::to_string(version) +
                        ", this build reads version " + std::to_string(kCheckpointVersion));
  const std::uint32_t manifest_len = r.u32("manifest length");
  const std::string text = r.bytes(manifest_len, "manifest");

  CheckpointFile<T> ck;
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> shapes;
  std::vector<std::string> slots;
  try {
    const auto manifest = nlohmann::json::parse(text);
    ck.kind = manifest.at("kind").get<std::string>();
    const std::string dtype = manifest.at("dtype").get<std::string>();
    if (dtype != detail::dtype_name<T>())
      throw manifest_error("'" + path + "': checkpoint dtype " + dtype + ", requested " +
                           detail::dtype_name<T>());
    ck.epoch = manifest.at("epoch").get<std::size_t>();
    ck.hyper = manifest.at("hyper").get<Hyper>();
    ck.tasks = manifest.at("tasks").get<std::vector<TaskConfig>>();
    for (const auto& p : manifest.at("params"))
      shapes.emplace_back(p.at("name").get<std::string>(),
                          std::make_pair(p.at("rows").get<std::size_t>(),
                                         p.at("cols").get<std::size_t>()));
    if (manifest.contains("adam")) {
      ck.has_adam = true;
      ck.adam_step = manifest.at("adam").at("step").get<std::uint64_t>();
      slots = manifest.at("adam").at("slots").get<std::vector<std::string>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw manifest_error("'" + path + "': malformed checkpoint manifest: " + e.what());
  }

  std::size_t payload_scalars = 0;
  for (const auto& [name, shape] : shapes) payload_scalars += shape.first * shape.second;
  const std::size_t payload_start = r.pos;

  for (const auto& [name, shape] : shapes) {
    Tensor<T> t(shape.first, shape.second);
    for (auto& v : t.data()) v = detail::read_scalar<T>(r, "parameter payload");
    ck.params.emplace_back(name, std::move(t));
  }
  for (const auto& name : slots) {
    const std::size_t n = detail::param_size_or_throw(ck.params, name, path);
    payload_scalars += 2 * n;
    std::vector<T> m(n), v(n);
    for (auto& x : m) x = detail::read_scalar<T>(r, "optimizer payload");
    for (auto& x : v) x = detail::read_scalar<T>(r, "optimizer payload");
    ck.adam_state.emplace(name, std::make_pair(std::move(m), std::move(v)));
  }

  const std::uint32_t actual = crc32(bytes.data() + payload_start, payload_scalars * sizeof(T));
  const std::uint32_t stored = r.u32("checksum");
  if (actual != stored)
    throw checksum_error("'" + path + "': payload CRC32 mismatch (stored " +
                         std::to_string(stored) + ", computed " + std::to_string(actual) + ")");
  return ck;
}

namespace detail {

// Copies checkpointed values into a visited model; every model parameter
// must appear in the checkpoint and vice versa (strict round trip).
template <typename T, typename Visit>
void restore_params(const CheckpointFile<T>& ck, Visit&& visit, const std::string& what) {
  std::size_t restored = 0;
  visit([&](const std::string& name, Tensor<T>& t) {
    const Tensor<T>* src = ck.find(name);
    if (!src) throw manifest_error(what + ": checkpoint is missing parameter '" + name + "'");
    if (src->rows() != t.rows() || src->cols() != t.cols())
      throw manifest_error(what + ": parameter '" + name + "' is " + t.shape_str() +
                           " in the model but " + std::to_string(src->rows()) + "x" +
                           std::to_string(src->cols()) + " in the checkpoint");
    t.data() = src->data();
    ++restored;
  });
  if (restored != ck.params.size())
    throw manifest_error(what + ": checkpoint declares " + std::to_string(ck.params.size()) +
                         " parameters, model has " + std::to_string(restored));
}

}  // namespace detail

template <typename T>
ModelBundle<T> restore_bundle(const CheckpointFile<T>& ck) {
  if (ck.kind != "mtl")
    throw manifest_error("restore: checkpoint kind '" + ck.kind + "', expected 'mtl'");
  ModelBundle<T> bundle;
  bundle.initialize(ck.hyper, 0);
  for (const auto& cfg : ck.tasks) bundle.register_task(cfg, 0);
  detail::restore_params(ck, [&](auto&& fn) { bundle.visit_all(fn); }, "restore bundle");
  return bundle;
}

template <typename T>
DscModel<T> restore_dsc(const CheckpointFile<T>& ck) {
  if (ck.kind != "dsc")
    throw manifest_error("restore: checkpoint kind '" + ck.kind + "', expected 'dsc'");
  if (ck.tasks.size() != 1)
    throw manifest_error("restore: dsc checkpoint declares " + std::to_string(ck.tasks.size()) +
                         " tasks, expected 1");
  DscModel<T> model;
  model.initialize(ck.tasks[0], ck.hyper, 0);
  detail::restore_params(ck, [&](auto&& fn) { model.visit(fn); }, "restore dsc");
  return model;
}

template <typename T>
CepModel<T> restore_cep(const CheckpointFile<T>& ck) {
  if (ck.kind != "cep")
    throw manifest_error("restore: checkpoint kind '" + ck.kind + "', expected 'cep'");
  if (ck.tasks.size() != 1)
    throw manifest_error("restore: cep checkpoint declares " + std::to_string(ck.tasks.size()) +
                         " tasks, expected 1");
  CepModel<T> model;
  model.initialize(ck.tasks[0], ck.hyper, 0);
  detail::restore_params(ck, [&](auto&& fn) { model.visit(fn); }, "restore cep");
  return model;
}

}  // namespace fddprec
