#include "cbformer/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

namespace cbf {

namespace {

constexpr char kMagic[8] = {'C', 'B', 'F', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw CheckpointError("checkpoint truncated");
    return v;
}

void write_doubles(std::ostream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::istream& in, std::size_t n) {
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw CheckpointError("checkpoint payload truncated");
    return v;
}

}  // namespace

nlohmann::json to_json(const ModelConfig& c) {
    return {{"input_len", c.input_len},     {"output_len", c.output_len},
            {"channels", c.channels},       {"d_model", c.d_model},
            {"heads", c.heads},             {"encoder_layers", c.encoder_layers},
            {"decoder_layers", c.decoder_layers}, {"moving_avg", c.moving_avg},
            {"d_ff", c.d_ff},               {"autocorr_factor", c.autocorr_factor},
            {"label_len", c.label_len}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.input_len = j.value("input_len", c.input_len);
    c.output_len = j.value("output_len", c.output_len);
    c.channels = j.value("channels", c.channels);
    c.d_model = j.value("d_model", c.d_model);
    c.heads = j.value("heads", c.heads);
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.moving_avg = j.value("moving_avg", c.moving_avg);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.autocorr_factor = j.value("autocorr_factor", c.autocorr_factor);
    c.label_len = j.value("label_len", c.label_len);
    return c;
}

nlohmann::json to_json(const BottleneckSpec& s) {
    return {{"type", to_string(s.type)},
            {"layer", s.layer},
            {"components", s.components},
            {"slice_axis", to_string(s.slice_axis)}};
}

BottleneckSpec bottleneck_from_json(const nlohmann::json& j) {
    BottleneckSpec s;
    s.type = parse_bottleneck_type(j.value("type", std::string("none")));
    s.layer = j.value("layer", s.layer);
    s.components = j.value("components", s.components);
    s.slice_axis = parse_slice_axis(j.value("slice_axis", std::string("feature")));
    return s;
}

Checkpoint Checkpoint::capture(const Autoformer& model, std::uint64_t seed, const AdamState* optimizer) {
    Checkpoint c;
    c.model = model.config();
    c.spec = model.spec();
    c.seed = seed;
    for (const auto& [name, t] : model.named_parameters()) {
        c.names.push_back(name);
        c.shapes[name] = t.shape();
        c.parameters[name] = std::vector<double>(t.values().begin(), t.values().end());
    }
    if (optimizer) c.optimizer = *optimizer;
    return c;
}

std::unique_ptr<Autoformer> Checkpoint::instantiate() const {
    auto m = std::make_unique<Autoformer>(model, spec, seed);
    for (const auto& [name, t] : m->named_parameters()) {
        const auto it = shapes.find(name);
        if (it == shapes.end()) throw CheckpointError("checkpoint lacks parameter '" + name + "'");
        if (it->second != t.shape()) {
            throw CheckpointError("parameter '" + name + "' has shape " + shape_str(it->second) + " in checkpoint, " +
                                  shape_str(t.shape()) + " in model");
        }
    }
    m->set_parameters(parameters);
    return m;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    for (const auto& name : c.names) {
        const auto s = c.shapes.find(name);
        const auto p = c.parameters.find(name);
        if (s == c.shapes.end() || p == c.parameters.end() || p->second.size() != shape_numel(s->second)) {
            throw CheckpointError("parameter '" + name + "' is missing or does not match its shape");
        }
    }
    for (const auto& [name, m] : c.optimizer.m) {
        const auto v = c.optimizer.v.find(name);
        const auto p = c.parameters.find(name);
        if (v == c.optimizer.v.end() || p == c.parameters.end() || m.size() != p->second.size() ||
            v->second.size() != m.size()) {
            throw CheckpointError("optimizer state for '" + name + "' does not match the parameter");
        }
    }
    nlohmann::json header;
    header["model"] = to_json(c.model);
    header["bottleneck"] = to_json(c.spec);
    header["seed"] = c.seed;
    header["metadata"] = c.metadata;
    nlohmann::json params = nlohmann::json::array();
    for (const auto& name : c.names) params.push_back({{"name", name}, {"shape", c.shapes.at(name)}});
    header["parameters"] = params;
    const bool has_opt = !c.optimizer.m.empty();
    header["optimizer"] = {{"present", has_opt}, {"step", c.optimizer.step}};
    nlohmann::json opt_names = nlohmann::json::array();
    for (const auto& [name, m] : c.optimizer.m) opt_names.push_back(name);
    header["optimizer"]["names"] = opt_names;
    const std::string text = header.dump();

    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
        out.write(kMagic, sizeof kMagic);
        write_pod(out, kCheckpointVersion);
        write_pod(out, static_cast<std::uint64_t>(text.size()));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& name : c.names) write_doubles(out, c.parameters.at(name));
        for (const auto& [name, m] : c.optimizer.m) {
            write_doubles(out, m);
            write_doubles(out, c.optimizer.v.at(name));
        }
        if (!out) throw CheckpointError("failed writing checkpoint '" + path.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw CheckpointError("'" + path.string() + "' is not a checkpoint");
    }
    const auto version = read_pod<std::uint32_t>(in);
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported");
    }
    const auto header_len = read_pod<std::uint64_t>(in);
    std::string text(header_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw CheckpointError("checkpoint header truncated");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint header is corrupt: ") + e.what());
    }
    Checkpoint c;
    c.model = model_config_from_json(header.at("model"));
    c.spec = bottleneck_from_json(header.at("bottleneck"));
    c.seed = header.at("seed").get<std::uint64_t>();
    c.metadata = header.value("metadata", nlohmann::json::object());
    for (const auto& p : header.at("parameters")) {
        const auto name = p.at("name").get<std::string>();
        const auto shape = p.at("shape").get<Shape>();
        c.names.push_back(name);
        c.shapes[name] = shape;
        c.parameters[name] = read_doubles(in, shape_numel(shape));
    }
    const auto& opt = header.at("optimizer");
    c.optimizer.step = opt.value("step", std::uint64_t{0});
    if (opt.value("present", false)) {
        for (const auto& n : opt.at("names")) {
            const auto name = n.get<std::string>();
            const auto it = c.shapes.find(name);
            if (it == c.shapes.end()) throw CheckpointError("optimizer state for unknown parameter '" + name + "'");
            const std::size_t count = shape_numel(it->second);
            c.optimizer.m[name] = read_doubles(in, count);
            c.optimizer.v[name] = read_doubles(in, count);
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("checkpoint has trailing bytes");
    return c;
}

std::string fnv1a_hex(const void* data, std::size_t size) {
    std::uint64_t h = 1469598103934665603ULL;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot read '" + path.string() + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return fnv1a_hex(bytes.data(), bytes.size());
}

}  // namespace cbf
