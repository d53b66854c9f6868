#pragma once

// Model checkpoints. Layout (all integers little-endian):
//
//   8 bytes   magic "GXKGCKPT"
//   u32       format version (1)
//   u64       header length, then that many bytes of JSON (model config)
//   u32       tensor count
//   per tensor:
//     u32 name length, name bytes (UTF-8)
//     u32 rank, rank x u64 dims
//     prod(dims) x f64, row-major
//
// Tensors appear in Model::for_each_parameter order; loading checks names and
// shapes against the configuration in the header.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradxkg/errors.hpp"
#include "gradxkg/model.hpp"

namespace gradxkg {

inline constexpr char kCheckpointMagic[8] = {'G', 'X', 'K', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError(std::string("checkpoint truncated reading ") + what);
  return v;
}

inline std::string get_bytes(std::istream& in, std::uint64_t n, const char* what) {
  if (n > (std::uint64_t{1} << 32)) throw DataError(std::string("checkpoint: implausible length for ") + what);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw DataError(std::string("checkpoint truncated reading ") + what);
  }
  return s;
}

inline nlohmann::ordered_json model_header(const Model& m) {
  const auto& c = m.rgcn_config;
  return {{"format", "gradxkg-checkpoint"},
          {"rgcn",
           {{"layers", c.layers},
            {"input_dim", c.input_dim},
            {"hidden_dim", c.hidden_dim},
            {"bases", c.bases},
            {"activation", to_string(c.activation)},
            {"self_loop", c.self_loop}}},
          {"num_nodes", m.num_nodes()},
          {"num_relations", m.num_relations()},
          {"window", m.window},
          {"basis_mode", m.basis_mode == BasisMode::materialized ? "materialized" : "factored"}};
}

}  // namespace detail

inline void save_checkpoint(std::ostream& out, const Model& model) {
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  const std::string header = detail::model_header(model).dump();
  detail::put<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  std::uint32_t count = 0;
  model.for_each_parameter([&](const std::string&, const Tensor&) { ++count; });
  detail::put<std::uint32_t>(out, count);
  model.for_each_parameter([&](const std::string& name, const Tensor& t) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  });
  if (!out) throw DataError("checkpoint write failed");
}

inline void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  save_checkpoint(out, model);
}

inline Model load_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw DataError("not a gradxkg checkpoint (bad magic)");
  }
  const auto version = detail::get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = detail::get<std::uint64_t>(in, "header length");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(detail::get_bytes(in, header_len, "header"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  Model m;
  try {
    const auto& r = h.at("rgcn");
    m.rgcn_config.layers = r.at("layers").get<std::size_t>();
    m.rgcn_config.input_dim = r.at("input_dim").get<std::size_t>();
    m.rgcn_config.hidden_dim = r.at("hidden_dim").get<std::size_t>();
    m.rgcn_config.bases = r.at("bases").get<std::size_t>();
    m.rgcn_config.activation = parse_activation(r.at("activation").get<std::string>());
    m.rgcn_config.self_loop = r.at("self_loop").get<bool>();
    m.window = h.at("window").get<std::size_t>();
    m.basis_mode = h.at("basis_mode").get<std::string>() == "factored" ? BasisMode::factored : BasisMode::materialized;
    const auto n = h.at("num_nodes").get<std::size_t>(), rel = h.at("num_relations").get<std::size_t>();
    // shapes come from a fresh initialisation; values are overwritten below
    Model shaped = init_model(m.rgcn_config, n, rel, m.window, 0);
    m.rgcn = std::move(shaped.rgcn);
    m.top = std::move(shaped.top);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header incomplete: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint header invalid: ") + e.what());
  }

  std::uint32_t expected = 0;
  m.for_each_parameter([&](const std::string&, Tensor&) { ++expected; });
  const auto count = detail::get<std::uint32_t>(in, "tensor count");
  if (count != expected) {
    throw DataError("checkpoint holds " + std::to_string(count) + " tensors, configuration needs " +
                    std::to_string(expected));
  }
  m.for_each_parameter([&](const std::string& name, Tensor& t) {
    const std::string got = detail::get_bytes(in, detail::get<std::uint32_t>(in, "name length"), "name");
    if (got != name) throw DataError("checkpoint tensor '" + got + "' found where '" + name + "' was expected");
    const auto rank = detail::get<std::uint32_t>(in, "rank");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(detail::get<std::uint64_t>(in, "dims"));
    if (shape != t.shape()) {
      throw DataError("checkpoint tensor " + name + " has shape " + shape_string(shape) + ", expected " +
                      shape_string(t.shape()));
    }
    if (!in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw DataError("checkpoint truncated in tensor " + name);
    }
    if (!t.all_finite()) throw DataError("checkpoint tensor " + name + " holds non-finite values");
  });
  return m;
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint not found: " + path.string());
  return load_checkpoint(in);
}

}  // namespace gradxkg
