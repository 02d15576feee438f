#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "blend/ad/checkpoint.hpp"
#include "blend/ad/tensor.hpp"

namespace blend::models {

using ad::ModelKind;

struct ConvLayerSpec {
    int filters = 0;
    int kernel_h = 3;
    int kernel_w = 3;
    int padding = 0;
};

/// Convolutions applied in sequence, optionally followed by max pooling with
/// stride equal to the pool window. pool_h == 0 disables pooling.
struct ConvBlockSpec {
    std::vector<ConvLayerSpec> convs;
    int pool_h = 0;
    int pool_w = 0;
};

struct CnnConfig {
    ModelKind kind = ModelKind::VisionCnn;
    int in_channels = 1;
    int height = 31;  // frequency channels
    int width = 41;   // frames
    std::vector<ConvBlockSpec> blocks;
    std::vector<int> fc_widths;
    int classes = 50;

    /// 96/192/384 filters, 3x3 kernels, unpadded first two convolutions,
    /// two 4096-wide fully connected layers.
    static CnnConfig vision_full(int classes = 9000);
    /// Same layout as vision_full with 8/16/32 filters and 128-wide FC layers.
    static CnnConfig vision_desk(int classes = 50);
    /// Two 7x7 convolutions with 3x1 frequency pooling between them and four
    /// fully connected layers.
    static CnnConfig lvcsr_full(int classes = 9000);
    static CnnConfig lvcsr_desk(int classes = 50);

    /// Feature-map shape after every convolution and pooling stage, starting
    /// with the input. Throws DimensionError if any stage collapses.
    std::vector<ad::Shape> shape_trace() const;
    void validate() const;
};

struct BlstmConfig {
    int input_dim = 31;
    int layers = 2;
    int hidden = 32;  // per direction
    int window = 41;
    int classes = 50;

    static BlstmConfig full_small(int classes = 9000);
    static BlstmConfig full_big(int classes = 9000);
    static BlstmConfig desk(int classes = 50);

    void validate() const;
};

using ModelConfig = std::variant<CnnConfig, BlstmConfig>;

ModelKind config_kind(const ModelConfig& cfg);
int config_classes(const ModelConfig& cfg);
/// Frames on each side of the classified frame: (window width - 1) / 2.
int config_context(const ModelConfig& cfg);

/// Closed-form parameter count.
std::uint64_t parameter_count(const ModelConfig& cfg);
/// Multiply-accumulate operations for one forward pass over one window.
std::uint64_t forward_macs(const ModelConfig& cfg);

YAML::Node to_yaml(const ModelConfig& cfg);
ModelConfig model_config_from_yaml(const YAML::Node& node, const std::string& path = "model");
/// Parses a preset name ("vision_desk", "blstm_desk", ...) or a YAML file path.
ModelConfig model_config_preset(const std::string& name, int classes);

}  // namespace blend::models
