#include "highsync/model.hpp"

#include "highsync/errors.hpp"
#include "highsync/hash.hpp"
#include "highsync/io.hpp"

#include <cstring>
#include <fstream>

namespace highsync {

namespace fs = std::filesystem;

Json config_to_json(const nets::ModelConfig& c) {
    return Json{{"image_size", c.image_size},
                {"image_channels", c.image_channels},
                {"ae_factor", c.ae_factor},
                {"latent_channels", c.latent_channels},
                {"ae_width", c.ae_width},
                {"base_width", c.base_width},
                {"heads", c.heads},
                {"groups", c.groups},
                {"audio_bins", c.audio_bins},
                {"audio_dim", c.audio_dim},
                {"window_radius", c.window_radius},
                {"frames", c.frames},
                {"mask_fraction", c.mask_fraction},
                {"masked_attention", c.masked_attention},
                {"upper_attends", c.upper_attends}};
}

nets::ModelConfig config_from_json(const Json& j) {
    nets::ModelConfig c;
    c.image_size = j.value("image_size", c.image_size);
    c.image_channels = j.value("image_channels", c.image_channels);
    c.ae_factor = j.value("ae_factor", c.ae_factor);
    c.latent_channels = j.value("latent_channels", c.latent_channels);
    c.ae_width = j.value("ae_width", c.ae_width);
    c.base_width = j.value("base_width", c.base_width);
    c.heads = j.value("heads", c.heads);
    c.groups = j.value("groups", c.groups);
    c.audio_bins = j.value("audio_bins", c.audio_bins);
    c.audio_dim = j.value("audio_dim", c.audio_dim);
    c.window_radius = j.value("window_radius", c.window_radius);
    c.frames = j.value("frames", c.frames);
    c.mask_fraction = j.value("mask_fraction", c.mask_fraction);
    c.masked_attention = j.value("masked_attention", c.masked_attention);
    c.upper_attends = j.value("upper_attends", c.upper_attends);
    c.validate();
    return c;
}

// The motion flags change behaviour but not parameter layout; they are excluded so a stage-2
// checkpoint with masking on can still be matched against its stage-1 parent.
std::string config_hash(const nets::ModelConfig& cfg) {
    Json j = config_to_json(cfg);
    j.erase("masked_attention");
    j.erase("upper_attends");
    return sha256_hex(j.dump());
}

Model::Model(const nets::ModelConfig& c)
    : cfg(c),
      autoencoder(c),
      denoiser(c),
      reference_net(c),
      audio_encoder(c),
      motion(c) {
    check_reference_mirror(*reference_net, *denoiser);
}

void check_reference_mirror(const nets::ReferenceNetImpl& reference, const nets::DenoiserImpl& denoiser) {
    if (reference.block_widths() != denoiser.block_widths()) {
        throw ConfigurationError("reference network does not mirror the denoiser's transformer blocks");
    }
}

const std::vector<std::string>& Model::group_names() {
    static const std::vector<std::string> names{"autoencoder", "denoiser", "reference_net", "audio_encoder", "motion"};
    return names;
}

torch::nn::Module& Model::group(const std::string& name) {
    if (name == "autoencoder") return *autoencoder;
    if (name == "denoiser") return *denoiser;
    if (name == "reference_net") return *reference_net;
    if (name == "audio_encoder") return *audio_encoder;
    if (name == "motion") return *motion;
    throw InvalidArgument("unknown parameter group: " + name);
}

namespace {

std::vector<std::pair<std::string, torch::Tensor>> group_tensors(torch::nn::Module& m) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& p : m.named_parameters(true)) out.emplace_back("p:" + p.key(), p.value());
    for (const auto& b : m.named_buffers(true)) out.emplace_back("b:" + b.key(), b.value());
    return out;
}

std::string dtype_name(const torch::Tensor& t) {
    switch (t.scalar_type()) {
        case torch::kFloat32: return "f32";
        case torch::kFloat64: return "f64";
        case torch::kBool: return "bool";
        default: throw InvalidArgument("checkpoint: unsupported tensor dtype");
    }
}

} // namespace

std::string Model::group_hash(const std::string& name) {
    Sha256 h;
    for (auto& [key, tensor] : group_tensors(group(name))) {
        auto t = tensor.detach().contiguous();
        std::string shape = key + "|" + dtype_name(t);
        for (auto s : t.sizes()) shape += "," + std::to_string(s);
        h.update(std::string_view(shape));
        h.update(std::span(static_cast<const std::uint8_t*>(t.data_ptr()), t.nbytes()));
    }
    return h.hex();
}

std::map<std::string, std::string> Model::group_hashes() {
    std::map<std::string, std::string> out;
    for (const auto& g : group_names()) out[g] = group_hash(g);
    return out;
}

void Model::set_trainable(const std::vector<std::string>& groups) {
    for (const auto& g : group_names()) {
        const bool on = std::find(groups.begin(), groups.end(), g) != groups.end();
        for (auto& p : group(g).parameters(true)) p.set_requires_grad(on);
    }
}

void Model::train(bool on) {
    for (const auto& g : group_names()) group(g).train(on);
}

void Model::to(torch::Dtype dtype) {
    for (const auto& g : group_names()) group(g).to(dtype);
}

// ---------------------------------------------------------------------------------------------
// Checkpoint archive

namespace {

constexpr char kMagic[4] = {'H', 'S', 'C', 'K'};

struct Archive {
    Json header;
    std::vector<std::uint8_t> bytes;
    std::size_t data_start = 0;
};

Archive read_archive(const fs::path& path) {
    if (!fs::exists(path)) throw PreconditionError("missing checkpoint: " + path.string());
    Archive a;
    a.bytes = io::read_file(path);
    if (a.bytes.size() < 8 || std::memcmp(a.bytes.data(), kMagic, 4) != 0) {
        throw DecodeError("not a checkpoint: " + path.string());
    }
    std::uint32_t len = 0;
    std::memcpy(&len, a.bytes.data() + 4, 4);
    if (8 + static_cast<std::size_t>(len) > a.bytes.size()) throw DecodeError("truncated checkpoint header");
    try {
        a.header = Json::parse(a.bytes.begin() + 8, a.bytes.begin() + 8 + len);
    } catch (const Json::parse_error& e) {
        throw DecodeError(std::string("corrupt checkpoint header: ") + e.what());
    }
    a.data_start = 8 + len;
    return a;
}

void load_group(Model& model, const Archive& a, const std::string& name) {
    const auto& index = a.header.at("tensors").at(name);
    torch::NoGradGuard guard;
    for (auto& [key, tensor] : group_tensors(model.group(name))) {
        if (!index.contains(key)) throw DecodeError("checkpoint lacks tensor " + name + "/" + key);
        const auto& entry = index.at(key);
        const std::vector<std::int64_t> shape = entry.at("shape");
        if (shape != tensor.sizes().vec()) throw DecodeError("checkpoint shape mismatch for " + name + "/" + key);
        const std::size_t offset = entry.at("offset");
        const std::size_t nbytes = entry.at("nbytes");
        if (a.data_start + offset + nbytes > a.bytes.size()) throw DecodeError("truncated checkpoint data");
        const std::string dt = entry.at("dtype");
        const auto stype = dt == "f32" ? torch::kFloat32 : dt == "f64" ? torch::kFloat64 : torch::kBool;
        auto src = torch::empty(shape, torch::TensorOptions().dtype(stype));
        if (src.nbytes() != nbytes) throw DecodeError("checkpoint size mismatch for " + name + "/" + key);
        std::memcpy(src.data_ptr(), a.bytes.data() + a.data_start + offset, nbytes);
        tensor.copy_(src);
    }
}

} // namespace

void save_checkpoint(Model& model, const fs::path& path, const Json& extra) {
    Json tensors = Json::object();
    std::vector<std::uint8_t> data;
    for (const auto& g : Model::group_names()) {
        Json entries = Json::object();
        for (auto& [key, tensor] : group_tensors(model.group(g))) {
            auto t = tensor.detach().contiguous();
            entries[key] = Json{{"dtype", dtype_name(t)}, {"shape", t.sizes().vec()}, {"offset", data.size()}, {"nbytes", t.nbytes()}};
            const auto* p = static_cast<const std::uint8_t*>(t.data_ptr());
            data.insert(data.end(), p, p + t.nbytes());
        }
        tensors[g] = entries;
    }
    Json header{{"format", 1},
                {"config", config_to_json(model.cfg)},
                {"config_hash", config_hash(model.cfg)},
                {"group_hashes", model.group_hashes()},
                {"extra", extra},
                {"tensors", tensors}};
    const std::string text = header.dump();
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    const auto len = static_cast<std::uint32_t>(text.size());
    out.insert(out.end(), reinterpret_cast<const std::uint8_t*>(&len), reinterpret_cast<const std::uint8_t*>(&len) + 4);
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), data.begin(), data.end());
    io::write_file_atomic(path, out);
}

CheckpointInfo read_checkpoint_info(const fs::path& path) {
    auto a = read_archive(path);
    CheckpointInfo info;
    info.header = a.header;
    info.header.erase("tensors");
    info.group_hashes = a.header.at("group_hashes").get<std::map<std::string, std::string>>();
    return info;
}

Model load_checkpoint(const fs::path& path, CheckpointInfo* info) {
    auto a = read_archive(path);
    Model model(config_from_json(a.header.at("config")));
    const bool f64 = a.header.at("tensors").at("denoiser").begin()->at("dtype") == "f64";
    if (f64) model.to(torch::kFloat64);
    for (const auto& g : Model::group_names()) load_group(model, a, g);
    if (info != nullptr) {
        info->header = a.header;
        info->header.erase("tensors");
        info->group_hashes = a.header.at("group_hashes").get<std::map<std::string, std::string>>();
    }
    return model;
}

void load_groups(Model& model, const fs::path& path, const std::vector<std::string>& groups) {
    auto a = read_archive(path);
    if (a.header.at("config_hash") != config_hash(model.cfg)) {
        throw ConfigurationError("checkpoint " + path.string() + " was built with a different model config");
    }
    for (const auto& g : groups) load_group(model, a, g);
}

} // namespace highsync
