#include "blend/models/config.hpp"

#include <filesystem>

#include "blend/config.hpp"

namespace blend::models {

namespace {

ConvBlockSpec block(int convs, int filters, int kernel, std::vector<int> paddings, int pool_h, int pool_w) {
    ConvBlockSpec b;
    for (int i = 0; i < convs; ++i) b.convs.push_back({filters, kernel, kernel, paddings[i]});
    b.pool_h = pool_h;
    b.pool_w = pool_w;
    return b;
}

CnnConfig vision_layout(int f1, int f2, int f3, int fc, int classes) {
    CnnConfig c;
    c.kind = ModelKind::VisionCnn;
    c.blocks = {block(2, f1, 3, {0, 0}, 2, 2), block(3, f2, 3, {1, 1, 1}, 2, 2),
                block(3, f3, 3, {1, 1, 1}, 2, 2)};
    c.fc_widths = {fc, fc};
    c.classes = classes;
    return c;
}

CnnConfig lvcsr_layout(int f1, int f2, int fc, int classes) {
    CnnConfig c;
    c.kind = ModelKind::LvcsrCnn;
    c.blocks = {block(1, f1, 7, {0}, 3, 1), block(1, f2, 7, {0}, 0, 0)};
    c.fc_widths = {fc, fc, fc, fc};
    c.classes = classes;
    return c;
}

}  // namespace

CnnConfig CnnConfig::vision_full(int classes) { return vision_layout(96, 192, 384, 4096, classes); }
CnnConfig CnnConfig::vision_desk(int classes) { return vision_layout(8, 16, 32, 128, classes); }
CnnConfig CnnConfig::lvcsr_full(int classes) { return lvcsr_layout(324, 324, 2048, classes); }
// Filter and FC widths chosen so the parameter count tracks vision_desk.
CnnConfig CnnConfig::lvcsr_desk(int classes) { return lvcsr_layout(8, 12, 96, classes); }

std::vector<ad::Shape> CnnConfig::shape_trace() const {
    std::vector<ad::Shape> trace;
    std::size_t c = static_cast<std::size_t>(in_channels);
    long h = height, w = width;
    trace.push_back({c, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        for (const auto& conv : blocks[b].convs) {
            h = h + 2L * conv.padding - conv.kernel_h + 1;
            w = w + 2L * conv.padding - conv.kernel_w + 1;
            if (h < 1) throw ad::DimensionError("cnn config block " + std::to_string(b), 1, "conv height collapses");
            if (w < 1) throw ad::DimensionError("cnn config block " + std::to_string(b), 2, "conv width collapses");
            c = static_cast<std::size_t>(conv.filters);
            trace.push_back({c, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
        }
        if (blocks[b].pool_h > 0) {
            if (h < blocks[b].pool_h) throw ad::DimensionError("cnn config block " + std::to_string(b), 1, "pool height collapses");
            if (w < blocks[b].pool_w) throw ad::DimensionError("cnn config block " + std::to_string(b), 2, "pool width collapses");
            h /= blocks[b].pool_h;
            w /= blocks[b].pool_w;
            trace.push_back({c, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
        }
    }
    return trace;
}

void CnnConfig::validate() const {
    if (kind == ModelKind::Blstm) throw ConfigError("model.kind", "CNN config with blstm kind");
    if (in_channels < 1) throw ConfigError("model.input.channels", "must be positive");
    if (height < 1 || width < 1) throw ConfigError("model.input", "height and width must be positive");
    if (blocks.empty()) throw ConfigError("model.blocks", "at least one block required");
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto p = "model.blocks[" + std::to_string(b) + "]";
        if (blocks[b].convs.empty()) throw ConfigError(p + ".convs", "at least one convolution required");
        for (const auto& conv : blocks[b].convs) {
            if (conv.filters < 1) throw ConfigError(p + ".convs.filters", "must be positive");
            if (conv.kernel_h < 1 || conv.kernel_w < 1) throw ConfigError(p + ".convs.kernel", "must be positive");
            if (conv.padding < 0) throw ConfigError(p + ".convs.padding", "must be nonnegative");
        }
        if (blocks[b].pool_h < 0 || blocks[b].pool_w < 0 || ((blocks[b].pool_h == 0) != (blocks[b].pool_w == 0))) {
            throw ConfigError(p + ".pool", "must be two positive sizes or absent");
        }
    }
    for (int f : fc_widths)
        if (f < 1) throw ConfigError("model.fc", "widths must be positive");
    if (classes < 2) throw ConfigError("model.classes", "need at least two classes");
    try {
        shape_trace();
    } catch (const ad::DimensionError& e) {
        throw ConfigError("model.blocks", e.what());
    }
}

BlstmConfig BlstmConfig::full_small(int classes) { return {31, 4, 512, 41, classes}; }
BlstmConfig BlstmConfig::full_big(int classes) { return {31, 4, 800, 41, classes}; }
BlstmConfig BlstmConfig::desk(int classes) { return {31, 2, 32, 41, classes}; }

void BlstmConfig::validate() const {
    if (input_dim < 1) throw ConfigError("model.input_dim", "must be positive");
    if (layers < 1) throw ConfigError("model.layers", "must be positive");
    if (hidden < 1) throw ConfigError("model.hidden", "must be positive");
    if (window < 1 || window % 2 == 0) throw ConfigError("model.window", "must be odd so a center frame exists");
    if (classes < 2) throw ConfigError("model.classes", "need at least two classes");
}

ModelKind config_kind(const ModelConfig& cfg) {
    if (const auto* c = std::get_if<CnnConfig>(&cfg)) return c->kind;
    return ModelKind::Blstm;
}

int config_classes(const ModelConfig& cfg) {
    return std::visit([](const auto& c) { return c.classes; }, cfg);
}

int config_context(const ModelConfig& cfg) {
    if (const auto* c = std::get_if<CnnConfig>(&cfg)) return (c->width - 1) / 2;
    return (std::get<BlstmConfig>(cfg).window - 1) / 2;
}

namespace {

std::uint64_t cnn_count(const CnnConfig& c, bool macs) {
    const auto trace = c.shape_trace();
    std::uint64_t total = 0;
    std::size_t stage = 0;
    std::uint64_t channels = static_cast<std::uint64_t>(c.in_channels);
    for (const auto& b : c.blocks) {
        for (const auto& conv : b.convs) {
            ++stage;
            const auto& s = trace[stage];
            const std::uint64_t weights = static_cast<std::uint64_t>(conv.filters) * channels * conv.kernel_h * conv.kernel_w;
            total += macs ? weights * s[1] * s[2] : weights + conv.filters;
            channels = static_cast<std::uint64_t>(conv.filters);
        }
        if (b.pool_h > 0) ++stage;
    }
    std::uint64_t in = ad::shape_numel(trace.back());
    std::vector<int> widths = c.fc_widths;
    widths.push_back(c.classes);
    for (int w : widths) {
        total += macs ? in * w : in * w + w;
        in = static_cast<std::uint64_t>(w);
    }
    return total;
}

std::uint64_t blstm_count(const BlstmConfig& c, bool macs) {
    const std::uint64_t H = c.hidden, T = c.window, center = c.window / 2;
    std::uint64_t total = 0;
    for (int n = 0; n < c.layers; ++n) {
        const std::uint64_t D = n == 0 ? c.input_dim : 2 * H;
        const std::uint64_t per_dir = 4 * H * (D + H) + 3 * H + 4 * H;
        if (!macs) {
            total += 2 * per_dir;
            continue;
        }
        const std::uint64_t step = 4 * H * (D + H) + 6 * H;
        const bool top = n == c.layers - 1;
        const std::uint64_t steps = top ? (center + 1) + (T - center) : 2 * T;
        total += steps * step;
    }
    total += macs ? 2 * H * c.classes : 2 * H * c.classes + c.classes;
    return total;
}

}  // namespace

std::uint64_t parameter_count(const ModelConfig& cfg) {
    if (const auto* c = std::get_if<CnnConfig>(&cfg)) return cnn_count(*c, false);
    return blstm_count(std::get<BlstmConfig>(cfg), false);
}

std::uint64_t forward_macs(const ModelConfig& cfg) {
    if (const auto* c = std::get_if<CnnConfig>(&cfg)) return cnn_count(*c, true);
    return blstm_count(std::get<BlstmConfig>(cfg), true);
}

YAML::Node to_yaml(const ModelConfig& cfg) {
    YAML::Node n;
    if (const auto* c = std::get_if<CnnConfig>(&cfg)) {
        n["kind"] = ad::model_kind_name(c->kind);
        n["input"]["channels"] = c->in_channels;
        n["input"]["height"] = c->height;
        n["input"]["width"] = c->width;
        for (const auto& b : c->blocks) {
            YAML::Node bn;
            for (const auto& conv : b.convs) {
                YAML::Node cn;
                cn["filters"] = conv.filters;
                cn["kernel"].push_back(conv.kernel_h);
                cn["kernel"].push_back(conv.kernel_w);
                cn["kernel"].SetStyle(YAML::EmitterStyle::Flow);
                cn["padding"] = conv.padding;
                cn.SetStyle(YAML::EmitterStyle::Flow);
                bn["convs"].push_back(cn);
            }
            if (b.pool_h > 0) {
                bn["pool"].push_back(b.pool_h);
                bn["pool"].push_back(b.pool_w);
                bn["pool"].SetStyle(YAML::EmitterStyle::Flow);
            }
            n["blocks"].push_back(bn);
        }
        for (int w : c->fc_widths) n["fc"].push_back(w);
        n["fc"].SetStyle(YAML::EmitterStyle::Flow);
        n["classes"] = c->classes;
    } else {
        const auto& b = std::get<BlstmConfig>(cfg);
        n["kind"] = "blstm";
        n["input_dim"] = b.input_dim;
        n["layers"] = b.layers;
        n["hidden"] = b.hidden;
        n["window"] = b.window;
        n["classes"] = b.classes;
    }
    return n;
}

ModelConfig model_config_from_yaml(const YAML::Node& node, const std::string& path) {
    if (!node || !node.IsMap()) throw ConfigError(path, "expected a mapping");
    const auto kind_name = yaml::get<std::string>(node, "kind", path);
    ModelKind kind;
    try {
        kind = ad::parse_model_kind(kind_name);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path + ".kind", e.what());
    }
    if (kind == ModelKind::Blstm) {
        yaml::check_keys(node, {"kind", "input_dim", "layers", "hidden", "window", "classes"}, path);
        BlstmConfig b;
        b.input_dim = yaml::get<int>(node, "input_dim", path);
        b.layers = yaml::get<int>(node, "layers", path);
        b.hidden = yaml::get<int>(node, "hidden", path);
        b.window = yaml::get<int>(node, "window", path);
        b.classes = yaml::get<int>(node, "classes", path);
        b.validate();
        return b;
    }
    yaml::check_keys(node, {"kind", "input", "blocks", "fc", "classes"}, path);
    CnnConfig c;
    c.kind = kind;
    const auto input = node["input"];
    if (!input) throw ConfigError(path + ".input", "missing");
    c.in_channels = yaml::get<int>(input, "channels", path + ".input");
    c.height = yaml::get<int>(input, "height", path + ".input");
    c.width = yaml::get<int>(input, "width", path + ".input");
    const auto blocks = node["blocks"];
    if (!blocks || !blocks.IsSequence()) throw ConfigError(path + ".blocks", "expected a list");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto bp = path + ".blocks[" + std::to_string(i) + "]";
        yaml::check_keys(blocks[i], {"convs", "pool"}, bp);
        ConvBlockSpec b;
        const auto convs = blocks[i]["convs"];
        if (!convs || !convs.IsSequence()) throw ConfigError(bp + ".convs", "expected a list");
        for (std::size_t j = 0; j < convs.size(); ++j) {
            const auto cp = bp + ".convs[" + std::to_string(j) + "]";
            yaml::check_keys(convs[j], {"filters", "kernel", "padding"}, cp);
            ConvLayerSpec l;
            l.filters = yaml::get<int>(convs[j], "filters", cp);
            const auto k = yaml::get<std::vector<int>>(convs[j], "kernel", cp);
            if (k.size() != 2) throw ConfigError(cp + ".kernel", "expected [height, width]");
            l.kernel_h = k[0];
            l.kernel_w = k[1];
            l.padding = yaml::get<int>(convs[j], "padding", cp);
            b.convs.push_back(l);
        }
        if (blocks[i]["pool"]) {
            const auto p = yaml::get<std::vector<int>>(blocks[i], "pool", bp);
            if (p.size() != 2) throw ConfigError(bp + ".pool", "expected [height, width]");
            b.pool_h = p[0];
            b.pool_w = p[1];
        }
        c.blocks.push_back(std::move(b));
    }
    c.fc_widths = yaml::get_or<std::vector<int>>(node, "fc", path, {});
    c.classes = yaml::get<int>(node, "classes", path);
    c.validate();
    return c;
}

ModelConfig model_config_preset(const std::string& name, int classes) {
    if (name == "vision_desk") return CnnConfig::vision_desk(classes);
    if (name == "vision_full") return CnnConfig::vision_full(classes);
    if (name == "lvcsr_desk") return CnnConfig::lvcsr_desk(classes);
    if (name == "lvcsr_full") return CnnConfig::lvcsr_full(classes);
    if (name == "blstm_desk") return BlstmConfig::desk(classes);
    if (name == "blstm_full_small") return BlstmConfig::full_small(classes);
    if (name == "blstm_full_big") return BlstmConfig::full_big(classes);
    if (std::filesystem::exists(name)) return model_config_from_yaml(yaml::load_file(name), "model");
    throw ConfigError("model", "unknown preset or missing file '" + name + "'");
}

}  // namespace blend::models
