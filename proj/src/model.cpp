#include "lino/model.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace lino {

namespace {

constexpr const char* kMagic = "lino-ps/1\n";

std::vector<std::pair<std::string, torch::Tensor>> named_state(LinoModel& model) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& p : model->named_parameters()) out.emplace_back(p.key(), p.value());
    for (const auto& b : model->named_buffers()) out.emplace_back(b.key(), b.value());
    return out;
}

}  // namespace

LinoModelImpl::LinoModelImpl(const ModelConfig& cfg) : config(cfg) {
    cfg.validate();
    encoder = register_module("encoder", enc::Encoder(cfg));
    decoder = register_module("decoder", dec::Decoder(cfg));
    light_encoder = register_module("light_encoder", loss::LightTargetEncoder(cfg.embed_dim));
    projector = register_module("projector", loss::RegisterProjector(cfg.embed_dim));
}

LinoModel make_model(const ModelConfig& config, uint64_t seed) {
    torch::manual_seed(seed);
    return LinoModel(config);
}

void save_checkpoint(const std::filesystem::path& path, LinoModel& model, const Checkpoint& extra) {
    nlohmann::json header;
    header["config"] = model->config;
    header["meta"] = extra.meta;
    auto table = nlohmann::json::array();
    std::vector<torch::Tensor> blobs;
    uint64_t offset = 0;
    for (const auto& [name, t] : named_state(model)) {
        auto c = t.detach().to(torch::kCPU).contiguous();
        const uint64_t nbytes = c.numel() * c.element_size();
        table.push_back({{"name", name},
                         {"dtype", std::string(c.dtype().name())},
                         {"shape", c.sizes().vec()},
                         {"offset", offset},
                         {"nbytes", nbytes}});
        offset += nbytes;
        blobs.push_back(c);
    }
    header["tensors"] = table;
    header["optimizer"] = {{"offset", offset}, {"nbytes", extra.optimizer_state.size()}};
    const std::string text = header.dump();

    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + tmp.string());
        os.write(kMagic, static_cast<std::streamsize>(std::strlen(kMagic)));
        const uint64_t size = text.size();
        os.write(reinterpret_cast<const char*>(&size), sizeof(size));
        os.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& b : blobs) {
            os.write(static_cast<const char*>(b.data_ptr()), static_cast<std::streamsize>(b.numel() * b.element_size()));
        }
        os.write(extra.optimizer_state.data(), static_cast<std::streamsize>(extra.optimizer_state.size()));
        if (!os) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::string magic(std::strlen(kMagic), '\0');
    is.read(magic.data(), static_cast<std::streamsize>(magic.size()));
    if (magic != kMagic) throw std::runtime_error("not a checkpoint: " + path.string());
    uint64_t size = 0;
    is.read(reinterpret_cast<char*>(&size), sizeof(size));
    if (!is || size > (1u << 30)) throw std::runtime_error("corrupt checkpoint header");
    std::string text(size, '\0');
    is.read(text.data(), static_cast<std::streamsize>(size));
    const auto header = nlohmann::json::parse(text);
    const auto data_start = is.tellg();

    LoadedCheckpoint out;
    out.info.config = header.at("config").get<ModelConfig>();
    out.info.meta = header.at("meta");
    out.model = LinoModel(out.info.config);

    auto state = named_state(out.model);
    const auto& table = header.at("tensors");
    if (table.size() != state.size()) throw std::runtime_error("checkpoint tensor count does not match the model");
    torch::NoGradGuard guard;
    for (size_t i = 0; i < state.size(); ++i) {
        const auto& entry = table[i];
        auto& [name, target] = state[i];
        if (entry.at("name").get<std::string>() != name ||
            entry.at("shape").get<std::vector<int64_t>>() != target.sizes().vec() ||
            entry.at("dtype").get<std::string>() != std::string(target.dtype().name())) {
            throw std::runtime_error("checkpoint tensor mismatch at " + name);
        }
        const auto nbytes = entry.at("nbytes").get<uint64_t>();
        if (nbytes != static_cast<uint64_t>(target.numel() * target.element_size())) {
            throw std::runtime_error("checkpoint size mismatch at " + name);
        }
        is.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<uint64_t>()));
        auto buf = torch::empty_like(target).contiguous();
        is.read(static_cast<char*>(buf.data_ptr()), static_cast<std::streamsize>(nbytes));
        if (!is) throw std::runtime_error("truncated checkpoint at " + name);
        target.copy_(buf);
    }
    const auto& opt = header.at("optimizer");
    out.info.optimizer_state.resize(opt.at("nbytes").get<uint64_t>());
    if (!out.info.optimizer_state.empty()) {
        is.seekg(data_start + static_cast<std::streamoff>(opt.at("offset").get<uint64_t>()));
        is.read(out.info.optimizer_state.data(), static_cast<std::streamsize>(out.info.optimizer_state.size()));
        if (!is) throw std::runtime_error("truncated optimizer state");
    }
    return out;
}

}  // namespace lino
