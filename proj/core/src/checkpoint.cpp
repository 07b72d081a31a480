#include "dnd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "dnd/corpus.hpp"

namespace dnd {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using nlohmann::json;

namespace {

template <typename T>
void write_pod(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::filesystem::path& path) {
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw IoError("truncated checkpoint " + path.string());
    return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TransformerModel& model, const DndConfig& cfg,
                     std::size_t step) {
    json header;
    header["config"] = cfg.to_json();
    header["step"] = step;
    json manifest = json::array();
    const auto params = model.parameters();
    for (const auto& p : params) manifest.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
    header["tensors"] = manifest;
    json routers = json::array();
    for (std::size_t r = 0; r < model.routers().size(); ++r) {
        const auto& st = model.routers()[r];
        routers.push_back({{"layer", model.dnd().l_start + r},
                           {"tau", st.tau},
                           {"ratio_buffer", std::vector<double>(st.ratio_buffer.begin(), st.ratio_buffer.end())},
                           {"topk_tau_buffer", std::vector<double>(st.topk_tau_buffer.begin(), st.topk_tau_buffer.end())}});
    }
    header["routers"] = routers;
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + tmp.string());
        out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
        write_pod<std::uint32_t>(out, kCheckpointVersion);
        write_pod<std::uint64_t>(out, text.size());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& p : params) {
            const auto data = p.tensor.data();
            out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
        }
        if (!out) throw IoError("error writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path.string());
    char magic[sizeof(kCheckpointMagic)];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw IoError(path.string() + " is not a checkpoint (bad magic)");
    }
    const auto version = read_pod<std::uint32_t>(in, path);
    if (version != kCheckpointVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
    }
    const auto header_len = read_pod<std::uint64_t>(in, path);
    std::string text(header_len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) throw IoError("truncated checkpoint header");
    const json header = json::parse(text);

    Checkpoint ck;
    ck.config = DndConfig::from_json(header.at("config"));
    ck.step = header.at("step").get<std::size_t>();
    ck.model = std::make_unique<TransformerModel>(ck.config.model, ck.config.dnd_settings(), ck.config.seed);

    std::map<std::string, Tensor> by_name;
    for (const auto& p : ck.model->parameters()) by_name.emplace(p.name, p.tensor);
    for (const auto& entry : header.at("tensors")) {
        const auto name = entry.at("name").get<std::string>();
        const auto shape = entry.at("shape").get<Shape>();
        auto it = by_name.find(name);
        if (it == by_name.end()) throw IoError("checkpoint tensor '" + name + "' has no counterpart in the model");
        if (it->second.shape() != shape) {
            throw IoError("checkpoint tensor '" + name + "' has shape " + shape_to_string(shape) + ", model expects " +
                          shape_to_string(it->second.shape()));
        }
        auto dst = it->second.mutable_data();
        if (!in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size_bytes()))) {
            throw IoError("truncated tensor data for '" + name + "'");
        }
        by_name.erase(it);
    }
    if (!by_name.empty()) throw IoError("checkpoint is missing tensor '" + by_name.begin()->first + "'");

    for (const auto& r : header.at("routers")) {
        auto& st = ck.model->router_for_layer(r.at("layer").get<std::size_t>());
        st.tau = r.at("tau").get<double>();
        for (double v : r.at("ratio_buffer")) st.ratio_buffer.push(v);
        for (double v : r.at("topk_tau_buffer")) st.topk_tau_buffer.push(v);
    }
    return ck;
}

}  // namespace dnd
