#include "invflow/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <json.hpp>

#include "invflow/tensor_io.hpp"

namespace invflow {

namespace {

using nlohmann::json;

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int q = 0; q < 4; ++q) b[q] = static_cast<unsigned char>(v >> (8 * q));
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("checkpoint: truncated file");
    std::uint32_t v = 0;
    for (int q = 0; q < 4; ++q) v |= static_cast<std::uint32_t>(b[q]) << (8 * q);
    return v;
}

json config_to_json(const ModelConfig& c) {
    return json{{"height", c.height},         {"width", c.width},
                {"channels", c.channels},     {"levels", c.levels},
                {"depth", c.depth},           {"hidden", c.hidden},
                {"kernel_size", c.kernel_size}, {"coupling", to_string(c.coupling)},
                {"mixer", to_string(c.mixer)}, {"scale_bound", c.scale_bound},
                {"squeeze", c.squeeze}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.channels = j.at("channels").get<int>();
    c.levels = j.at("levels").get<int>();
    c.depth = j.at("depth").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.kernel_size = j.at("kernel_size").get<int>();
    c.coupling = parse_coupling(j.at("coupling").get<std::string>());
    c.mixer = parse_mixer(j.at("mixer").get<std::string>());
    c.scale_bound = j.at("scale_bound").get<Real>();
    c.squeeze = j.at("squeeze").get<bool>();
    return c;
}

Tensor row(std::span<const Real> v) {
    return Tensor(Shape{1, 1, static_cast<int>(v.size())}, std::vector<Real>(v.begin(), v.end()));
}

}  // namespace

void write_checkpoint(std::ostream& out, const FlowModel& model) {
    const auto& cfg = model.config();
    json layers = json::array();
    std::vector<std::vector<Tensor>> payload;
    for (std::size_t l = 0; l < model.levels().size(); ++l) {
        const auto& lv = model.levels()[l];
        for (const auto& st : lv.steps) {
            payload.push_back(st->state());
            layers.push_back({{"kind", st->kind()}, {"level", l}, {"tensors", payload.back().size()}});
        }
        if (lv.split) {
            payload.push_back({row(lv.split->parameters())});
            layers.push_back({{"kind", "split"}, {"level", l}, {"tensors", 1}});
        }
    }
    json header{{"version", kCheckpointVersion},
                {"L", cfg.levels},
                {"D", cfg.depth},
                {"C", cfg.channels},
                {"H", cfg.height},
                {"W", cfg.width},
                {"model", config_to_json(cfg)},
                {"layers", layers}};
    const std::string text = header.dump();
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& ts : payload)
        for (const auto& t : ts) write_tensor(out, t);
    if (!out) throw std::runtime_error("checkpoint: write failed");
}

FlowModel read_checkpoint(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8)) throw FormatError("checkpoint: truncated file");
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw FormatError("checkpoint: bad magic");
    const std::uint32_t version = get_u32(in);
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t len = get_u32(in);
    std::string text(len, '\0');
    if (!in.read(text.data(), len)) throw FormatError("checkpoint: truncated header");

    json header;
    ModelConfig cfg;
    try {
        header = json::parse(text);
        cfg = config_from_json(header.at("model"));
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
    }

    FlowModel model(cfg, 0);
    const json& manifest = header.at("layers");
    std::size_t entry = 0;
    auto next = [&](const std::string& kind) {
        if (entry >= manifest.size()) throw FormatError("checkpoint: manifest too short");
        const json& m = manifest[entry++];
        if (m.at("kind").get<std::string>() != kind)
            throw FormatError("checkpoint: expected layer '" + kind + "', found '" +
                              m.at("kind").get<std::string>() + "'");
        std::vector<Tensor> ts;
        for (std::size_t q = 0, n = m.at("tensors").get<std::size_t>(); q < n; ++q)
            ts.push_back(read_tensor(in));
        return ts;
    };
    try {
        for (auto& lv : model.levels()) {
            for (auto& st : lv.steps) st->set_state(next(st->kind()));
            if (lv.split) {
                auto ts = next("split");
                auto dst = lv.split->parameters();
                if (ts.size() != 1 || ts[0].size() != dst.size())
                    throw FormatError("checkpoint: split prior size mismatch");
                std::copy(ts[0].data().begin(), ts[0].data().end(), dst.begin());
            }
        }
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
    if (entry != manifest.size()) throw FormatError("checkpoint: manifest has extra layers");
    return model;
}

void save_checkpoint(const std::filesystem::path& path, const FlowModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_checkpoint(out, model);
}

FlowModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    return read_checkpoint(in);
}

}  // namespace invflow
