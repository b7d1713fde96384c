#pragma once

#include <string>
#include <utility>
#include <vector>

#include "csdnet/encoder.hpp"
#include "csdnet/nn.hpp"
#include "csdnet/tensor.hpp"

namespace csdnet {

/// Named tensors in file order.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Binary archive of name -> shape-tagged little-endian tensors. Payloads
/// are float64 by default (checkpoints round-trip bit-exactly); float32
/// archives (e.g. exported backbone weights) are read transparently and can
/// be written with `as_f32`.
void write_tensor_archive(const std::string& path, const NamedTensors& tensors,
                          bool as_f32 = false);
NamedTensors read_tensor_archive(const std::string& path);

/// Copies archive entries into matching params/buffers by name. Shape
/// mismatches raise FormatError listing every offending tensor; unmatched
/// names on either side are reported, not fatal.
LoadReport apply_tensors(ParamList& dst, const NamedTensors& archive);

/// Snapshot of a module's params and buffers, ready for writing.
NamedTensors snapshot(const ParamList& src);

struct CheckpointMeta {
    int format_version = 1;
    int epoch = 0;
    long long adam_step = 0;
    std::vector<real> loss_trace;
    std::string config_json; // resolved run configuration
};

/// Checkpoint = tensor archive + human-readable JSON sidecar at
/// `path + ".json"`.
void write_checkpoint(const std::string& path, const NamedTensors& tensors,
                      const CheckpointMeta& meta);
CheckpointMeta read_checkpoint_meta(const std::string& path);

/// Loads a backbone weight archive (float32 or float64 payloads) into one
/// encoder stream. Shape mismatches raise FormatError naming the layers.
LoadReport load_backbone_weights(Backbone& backbone, const std::string& path);
void save_backbone_weights(Backbone& backbone, const std::string& path,
                           bool as_f32 = false);

} // namespace csdnet
