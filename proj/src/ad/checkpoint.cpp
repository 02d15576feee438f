#include "blend/ad/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "blend/io.hpp"

namespace blend::ad {

std::string model_kind_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::VisionCnn: return "vision_cnn";
        case ModelKind::LvcsrCnn: return "lvcsr_cnn";
        case ModelKind::Blstm: return "blstm";
    }
    return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
    if (name == "vision_cnn") return ModelKind::VisionCnn;
    if (name == "lvcsr_cnn") return ModelKind::LvcsrCnn;
    if (name == "blstm") return ModelKind::Blstm;
    throw std::invalid_argument("unknown model kind '" + name + "'");
}

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
    BinaryWriter w(os);
    w.bytes("BLNDCKPT");
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(ckpt.kind));
    w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
        const auto& p = ckpt.params[i];
        w.str(p.name);
        w.u32(static_cast<std::uint32_t>(p.value.rank()));
        for (auto d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (float v : p.value.values()) w.f32(v);
    }
    write_provenance(w, ckpt.provenance);
}

Checkpoint read_checkpoint(std::istream& is) {
    BinaryReader r(is);
    r.expect_magic("BLNDCKPT", "checkpoint");
    const auto version = r.u32();
    if (version != kCheckpointVersion) {
        throw IoError("checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint ckpt;
    const auto kind = r.u32();
    if (kind < 1 || kind > 3) throw IoError("checkpoint: unknown model kind " + std::to_string(kind));
    ckpt.kind = static_cast<ModelKind>(kind);
    const auto count = r.u32();
    for (std::uint32_t t = 0; t < count; ++t) {
        std::string name = r.str(4096);
        const auto rank = r.u32();
        if (rank > 8) throw IoError("checkpoint: tensor '" + name + "' has rank " + std::to_string(rank));
        Shape shape(rank);
        for (auto& d : shape) d = r.u32();
        auto& p = ckpt.params.add(std::move(name), shape);
        for (auto& v : p.value.values()) v = r.f32();
    }
    ckpt.provenance = read_provenance(r);
    return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ostringstream os(std::ios::binary);
    write_checkpoint(os, ckpt);
    write_text_file(path, os.str());
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    try {
        return read_checkpoint(in);
    } catch (const IoError& e) {
        throw IoError(path + ": " + e.what());
    }
}

}  // namespace blend::ad
