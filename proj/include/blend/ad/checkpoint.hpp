#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "blend/ad/params.hpp"

namespace blend::ad {

enum class ModelKind : std::uint32_t {
    VisionCnn = 1,
    LvcsrCnn = 2,
    Blstm = 3,
};

std::string model_kind_name(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// Parameter checkpoint.
///
/// Layout (little-endian):
///   "BLNDCKPT"  u32 version  u32 model kind  u32 tensor count
///   per tensor: u32 name length, name bytes, u32 rank, u32 dims[rank],
///               f32 values[prod(dims)]
///   "PROV" u32 length, provenance text
struct Checkpoint {
    ModelKind kind = ModelKind::VisionCnn;
    ParamSet<float> params;
    std::string provenance;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace blend::ad
