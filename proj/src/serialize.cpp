#include "hinet/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "hinet/common.hpp"

namespace hinet {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'H', 'I', 'N', 'E', 'T', 'W', '0', '1'};

static_assert(sizeof(float) == 4, "float32 blobs assume 4-byte floats");
static_assert(std::endian::native == std::endian::little,
              "weight blobs are little-endian; byte swapping is not implemented");

json encoder_to_json(const EncoderConfig& e) {
    return json{{"input_size", e.input_size},
                {"stage_channels", e.stage_channels},
                {"lut_head", e.lut_head},
                {"lut_dim", e.lut_dim}};
}

json embedding_to_json(const EmbeddingConfig& e) {
    return json{{"num_frequencies", e.num_frequencies},
                {"base_frequency", e.base_frequency},
                {"embed_rgb_mask", e.embed_rgb_mask}};
}

json decoder_to_json(const DecoderConfig& d) {
    json grids = json::array();
    for (const auto& [gh, gw] : d.grid_sizes) grids.push_back(json::array({gh, gw}));
    return json{{"hidden_width", d.hidden_width},
                {"block_hidden_depths", d.block_hidden_depths},
                {"block_scales", d.block_scales},
                {"grid_sizes", grids},
                {"fmm_rank", d.fmm_rank},
                {"app_hidden_depth", d.app_hidden_depth}};
}

ModelConfig config_from(const json& j) {
    ModelConfig cfg;
    const auto& e = j.at("encoder");
    cfg.encoder.input_size = e.at("input_size").get<int>();
    cfg.encoder.stage_channels = e.at("stage_channels").get<std::array<int, 4>>();
    cfg.encoder.lut_head = e.at("lut_head").get<bool>();
    cfg.encoder.lut_dim = e.at("lut_dim").get<int>();
    const auto& m = j.at("embedding");
    cfg.embedding.num_frequencies = m.at("num_frequencies").get<int>();
    cfg.embedding.base_frequency = m.at("base_frequency").get<float>();
    cfg.embedding.embed_rgb_mask = m.at("embed_rgb_mask").get<bool>();
    const auto& d = j.at("decoder");
    cfg.decoder.hidden_width = d.at("hidden_width").get<int>();
    cfg.decoder.block_hidden_depths = d.at("block_hidden_depths").get<std::vector<int>>();
    cfg.decoder.block_scales = d.at("block_scales").get<std::vector<int>>();
    cfg.decoder.grid_sizes.clear();
    for (const auto& g : d.at("grid_sizes"))
        cfg.decoder.grid_sizes.emplace_back(g.at(0).get<int>(), g.at(1).get<int>());
    cfg.decoder.fmm_rank = d.at("fmm_rank").get<int>();
    cfg.decoder.app_hidden_depth = d.at("app_hidden_depth").get<int>();
    return cfg;
}

}  // namespace

std::string config_to_json(const ModelConfig& cfg) {
    json j{{"encoder", encoder_to_json(cfg.encoder)},
           {"embedding", embedding_to_json(cfg.embedding)},
           {"decoder", decoder_to_json(cfg.decoder)}};
    return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
    return config_from(json::parse(text));
}

void save_model(const Model& model, const std::string& path) {
    auto* weights = const_cast<ModelWeights<float>*>(&model.weights);
    auto refs = weights->registry();

    json tensors = json::array();
    std::uint64_t offset = 0;
    std::vector<std::pair<const float*, std::size_t>> blobs;
    for (const auto& ref : refs) {
        tensors.push_back(json{{"name", ref.name},
                               {"shape", ref.shape},
                               {"offset", offset},
                               {"count", ref.size},
                               {"dtype", "float32"}});
        blobs.emplace_back(ref.data, ref.size);
        offset += ref.size * 4;
    }
    if (model.lut_override) {
        const auto& lut = *model.lut_override;
        tensors.push_back(json{{"name", "lut.override"},
                               {"shape", {lut.dim, lut.dim, lut.dim, 3}},
                               {"offset", offset},
                               {"count", lut.lattice.size()},
                               {"dtype", "float32"},
                               {"lut_dim", lut.dim}});
        blobs.emplace_back(lut.lattice.data(), lut.lattice.size());
        offset += lut.lattice.size() * 4;
    }

    json header{{"format", "hinet-weights"},
                {"version", 1},
                {"dtype", "float32"},
                {"config", json::parse(config_to_json(model.cfg))},
                {"tensors", tensors}};
    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    require(out.good(), "save_model: cannot open '" + path + "' for writing");
    out.write(kMagic, 8);
    const std::uint64_t hlen = header_text.size();
    unsigned char lenbytes[8];
    for (int i = 0; i < 8; ++i) lenbytes[i] = (hlen >> (8 * i)) & 0xff;
    out.write(reinterpret_cast<const char*>(lenbytes), 8);
    out.write(header_text.data(), std::streamsize(header_text.size()));
    for (const auto& [data, count] : blobs)
        out.write(reinterpret_cast<const char*>(data), std::streamsize(count * 4));
    require(out.good(), "save_model: write failed for '" + path + "'");
}

Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "load_model: cannot open '" + path + "'");

    char magic[8];
    in.read(magic, 8);
    require(in.good() && std::memcmp(magic, kMagic, 8) == 0,
            "load_model: '" + path + "' is not a weight file");
    unsigned char lenbytes[8];
    in.read(reinterpret_cast<char*>(lenbytes), 8);
    require(in.good(), "load_model: truncated header");
    std::uint64_t hlen = 0;
    for (int i = 0; i < 8; ++i) hlen |= std::uint64_t(lenbytes[i]) << (8 * i);
    std::string header_text(hlen, '\0');
    in.read(header_text.data(), std::streamsize(hlen));
    require(in.good(), "load_model: truncated header");

    json header;
    try {
        header = json::parse(header_text);
    } catch (const std::exception& e) {
        fail("load_model: bad header JSON: " + std::string(e.what()));
    }
    require(header.at("format") == "hinet-weights", "load_model: unknown format");
    require(header.at("dtype") == "float32", "load_model: unsupported dtype");

    Model model;
    model.cfg = config_from(header.at("config"));
    model.weights = zero_weights<float>(model.cfg);
    auto refs = model.weights.registry();

    const std::streampos blob_start = in.tellg();
    for (const auto& t : header.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        const std::uint64_t offset = t.at("offset").get<std::uint64_t>();
        const std::size_t count = t.at("count").get<std::size_t>();
        float* dst = nullptr;
        if (name == "lut.override") {
            model.lut_override = Lut3D(t.at("lut_dim").get<int>());
            require(model.lut_override->lattice.size() == count,
                    "load_model: LUT override size mismatch");
            dst = model.lut_override->lattice.data();
        } else {
            for (auto& ref : refs)
                if (ref.name == name) {
                    require(ref.size == count, "load_model: size mismatch for tensor " + name);
                    dst = ref.data;
                    break;
                }
            require(dst != nullptr, "load_model: unknown tensor " + name);
        }
        in.seekg(blob_start + std::streampos(offset));
        in.read(reinterpret_cast<char*>(dst), std::streamsize(count * 4));
        require(in.good(), "load_model: truncated blob for tensor " + name);
    }
    return model;
}

}  // namespace hinet
