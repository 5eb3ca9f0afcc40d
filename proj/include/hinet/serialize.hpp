#pragma once

#include <optional>
#include <string>

#include "hinet/encoder.hpp"
#include "hinet/lut.hpp"

namespace hinet {

// Weight file: 8-byte magic "HINETW01", little-endian u64 JSON header length,
// JSON header (format/dtype/config/tensor table), then raw little-endian
// float32 tensor blobs at the offsets the table declares.
struct Model {
    ModelConfig cfg;
    ModelWeights<float> weights;
    // Optional user-provided lattice; overrides the predicted LUT in lut-only
    // inference when present (round-trips through the .cube importer).
    std::optional<Lut3D> lut_override;
};

void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& json);

}  // namespace hinet
