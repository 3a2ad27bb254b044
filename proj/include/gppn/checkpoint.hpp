#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gppn/binary_io.hpp"
#include "gppn/planners.hpp"

// Checkpoint layout (little-endian):
//
//   "GPCK" | version u16 | arch u8 (0=VIN,1=GPPN,2=HYPERVIN) | K u16 | F u16 |
//   hidden u32 | kernel u8 | precision u8 (bytes per value: 4 or 8) |
//   tensor count u32
//   per tensor: name length u16 | name bytes | rank u8 | dims u32 x rank |
//               values (precision bytes each, row-major)

namespace gppn {

inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const ModelParams<T>& p) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  io::ByteWriter w;
  w.put_bytes("GPCK");
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(p.cfg.arch));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(p.cfg.K));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(p.cfg.F));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.cfg.hidden));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(p.cfg.kernel));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(sizeof(T)));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.tensors.size()));
  for (const auto& [name, t] : p.tensors) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (T v : t.vec()) w.put<T>(v);
  }
  return w.bytes();
}

/// Reads a checkpoint stored at either precision and converts to T.
template <typename T>
ModelParams<T> parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  if (r.get_string(4, "magic") != "GPCK") throw io::ParseError("bad checkpoint magic", 0);
  if (r.get<std::uint16_t>("version") != kCheckpointVersion)
    throw io::ParseError("unsupported checkpoint version", 4);
  PlannerConfig cfg;
  const auto arch = r.get<std::uint8_t>("arch");
  if (arch > 2) throw io::ParseError("unknown architecture code", 6);
  cfg.arch = static_cast<Arch>(arch);
  cfg.K = r.get<std::uint16_t>("K");
  cfg.F = r.get<std::uint16_t>("F");
  cfg.hidden = static_cast<int>(r.get<std::uint32_t>("hidden"));
  const auto kernel = r.get<std::uint8_t>("kernel");
  if (kernel > 2) throw io::ParseError("unknown kernel code", r.offset() - 1);
  cfg.kernel = static_cast<Kernel>(kernel);
  const auto precision = r.get<std::uint8_t>("precision");
  if (precision != 4 && precision != 8)
    throw io::ParseError("precision must be 4 or 8", r.offset() - 1);
  std::vector<ParamSpec> layout;
  try {
    layout = param_layout(cfg);
  } catch (const ContractViolation& e) {
    throw io::ParseError(std::string("invalid planner config: ") + e.what(), 6);
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  if (count != layout.size())
    throw io::ParseError("tensor count does not match architecture", r.offset() - 4);

  ModelParams<T> p{cfg, {}};
  for (const auto& spec : layout) {
    const std::size_t at = r.offset();
    const auto len = r.get<std::uint16_t>("name length");
    const std::string name = r.get_string(len, "name");
    if (name != spec.name) throw io::ParseError("expected tensor " + spec.name, at);
    const auto rank = r.get<std::uint8_t>("rank");
    ad::Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>("dimension");
    if (shape != spec.shape)
      throw io::ParseError("tensor " + name + " has shape " + ad::shape_str(shape) +
                               ", expected " + ad::shape_str(spec.shape),
                           at);
    std::vector<T> values(ad::numel(shape));
    for (auto& v : values)
      v = precision == 4 ? static_cast<T>(r.get<float>("value"))
                         : static_cast<T>(r.get<double>("value"));
    p.tensors.emplace_back(name, ad::Tensor<T>(shape, std::move(values)));
  }
  if (!r.at_end()) r.fail("trailing bytes after last tensor");
  return p;
}

template <typename T>
void save_checkpoint(const std::string& path, const ModelParams<T>& p) {
  io::write_file(path, serialize_checkpoint(p));
}

template <typename T>
ModelParams<T> load_checkpoint(const std::string& path) {
  return parse_checkpoint<T>(io::read_file(path));
}

}  // namespace gppn
