#include "dbr/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace dbr {

namespace {

constexpr char kMagic[8] = {'D', 'B', 'R', 'C', 'K', 'P', 'T', '\0'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kKindClassifier = 0;
constexpr uint8_t kKindBias = 1;

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw std::runtime_error("checkpoint truncated: " + path);
    return v;
}

void write_tensors(std::ostream& out, const ParamStore& params) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(params.params().size()));
    for (const auto& p : params.params()) {
        write_pod<uint32_t>(out, static_cast<uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_pod<uint32_t>(out, static_cast<uint32_t>(p->shape.size()));
        for (int d : p->shape) write_pod<int32_t>(out, d);
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
}

void read_tensors(std::istream& in, ParamStore& params, const std::string& path) {
    const auto count = read_pod<uint32_t>(in, path);
    if (count != params.params().size())
        throw std::runtime_error("checkpoint " + path + ": holds " + std::to_string(count) +
                                 " tensors, model needs " + std::to_string(params.params().size()));
    for (uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<uint32_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw std::runtime_error("checkpoint truncated: " + path);
        Param* p = params.find(name);
        if (p == nullptr)
            throw std::runtime_error("checkpoint " + path + ": unknown tensor '" + name + "'");
        const auto ndim = read_pod<uint32_t>(in, path);
        Shape shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = read_pod<int32_t>(in, path);
        if (shape != p->shape)
            throw std::runtime_error("checkpoint " + path + ": tensor '" + name + "' has shape " +
                                     format_shape(shape) + ", model expects " + format_shape(p->shape));
        in.read(reinterpret_cast<char*>(p->value.data()),
                static_cast<std::streamsize>(p->value.size() * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint truncated: " + path);
    }
}

std::string hash_hex(uint64_t h) {
    std::ostringstream out;
    out << "0x" << std::hex << h;
    return out.str();
}

void write_sidecar(const std::string& path, const char* kind, uint64_t vocab_hash, bool trained,
                   const nlohmann::ordered_json& arch, const ParamStore& params) {
    nlohmann::ordered_json j;
    j["format"] = "dbr-checkpoint";
    j["version"] = kVersion;
    j["kind"] = kind;
    j["vocab_hash"] = hash_hex(vocab_hash);
    j["trained"] = trained;
    j["architecture"] = arch;
    auto tensors = nlohmann::ordered_json::array();
    for (const auto& p : params.params()) {
        nlohmann::ordered_json t;
        t["name"] = p->name;
        t["shape"] = p->shape;
        tensors.push_back(t);
    }
    j["tensors"] = tensors;
    std::ofstream out(path + ".meta.json", std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint sidecar: cannot open " + path + ".meta.json");
    out << j.dump(2) << '\n';
}

std::ifstream open_checkpoint(const std::string& path, uint8_t expected_kind, uint8_t& trained,
                              uint64_t& vocab_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw std::runtime_error(path + " is not a checkpoint file");
    const auto version = read_pod<uint32_t>(in, path);
    if (version != kVersion)
        throw std::runtime_error("checkpoint " + path + ": unsupported version " +
                                 std::to_string(version));
    const auto kind = read_pod<uint8_t>(in, path);
    if (kind != expected_kind)
        throw std::runtime_error("checkpoint " + path + ": holds a " +
                                 (kind == kKindBias ? std::string("bias-only") : std::string("classifier")) +
                                 " model, expected the other kind");
    trained = read_pod<uint8_t>(in, path);
    vocab_hash = read_pod<uint64_t>(in, path);
    return in;
}

}  // namespace

void save_classifier_checkpoint(const ClassifierModel& model, uint64_t vocab_hash,
                                const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open checkpoint " + path + " for writing");
    out.write(kMagic, sizeof kMagic);
    write_pod<uint32_t>(out, kVersion);
    write_pod<uint8_t>(out, kKindClassifier);
    write_pod<uint8_t>(out, model.trained() ? 1 : 0);
    write_pod<uint64_t>(out, vocab_hash);
    const ModelConfig& cfg = model.config();
    write_pod<int32_t>(out, cfg.vocab_size);
    write_pod<int32_t>(out, cfg.embed_dim);
    write_pod<int32_t>(out, cfg.num_labels);
    write_pod<uint8_t>(out, cfg.encoder == EncoderKind::Attention ? 0 : 1);
    write_tensors(out, model.params());
    if (!out) throw std::runtime_error("write failed for checkpoint " + path);
    out.close();

    nlohmann::ordered_json arch;
    arch["vocab_size"] = cfg.vocab_size;
    arch["embed_dim"] = cfg.embed_dim;
    arch["num_labels"] = cfg.num_labels;
    arch["encoder"] = to_string(cfg.encoder);
    write_sidecar(path, "classifier", vocab_hash, model.trained(), arch, model.params());
}

void save_bias_checkpoint(const BiasOnlyModel& model, uint64_t vocab_hash, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open checkpoint " + path + " for writing");
    out.write(kMagic, sizeof kMagic);
    write_pod<uint32_t>(out, kVersion);
    write_pod<uint8_t>(out, kKindBias);
    write_pod<uint8_t>(out, 1);
    write_pod<uint64_t>(out, vocab_hash);
    write_pod<int32_t>(out, model.input_dim());
    write_pod<int32_t>(out, model.hidden_dim());
    write_pod<int32_t>(out, model.num_labels());
    write_tensors(out, model.params());
    if (!out) throw std::runtime_error("write failed for checkpoint " + path);
    out.close();

    nlohmann::ordered_json arch;
    arch["input_dim"] = model.input_dim();
    arch["hidden_dim"] = model.hidden_dim();
    arch["num_labels"] = model.num_labels();
    write_sidecar(path, "bias-only", vocab_hash, true, arch, model.params());
}

LoadedClassifier load_classifier_checkpoint(const std::string& path) {
    uint8_t trained = 0;
    uint64_t vocab_hash = 0;
    std::ifstream in = open_checkpoint(path, kKindClassifier, trained, vocab_hash);
    ModelConfig cfg;
    cfg.vocab_size = read_pod<int32_t>(in, path);
    cfg.embed_dim = read_pod<int32_t>(in, path);
    cfg.num_labels = read_pod<int32_t>(in, path);
    cfg.encoder = read_pod<uint8_t>(in, path) == 0 ? EncoderKind::Attention : EncoderKind::Mixer;
    LoadedClassifier loaded{ClassifierModel(cfg, 0), vocab_hash};
    read_tensors(in, loaded.model.params(), path);
    if (trained) loaded.model.mark_trained();
    return loaded;
}

LoadedBias load_bias_checkpoint(const std::string& path) {
    uint8_t trained = 0;
    uint64_t vocab_hash = 0;
    std::ifstream in = open_checkpoint(path, kKindBias, trained, vocab_hash);
    const int input_dim = read_pod<int32_t>(in, path);
    const int hidden_dim = read_pod<int32_t>(in, path);
    const int num_labels = read_pod<int32_t>(in, path);
    LoadedBias loaded{BiasOnlyModel(input_dim, hidden_dim, num_labels, 0), vocab_hash};
    read_tensors(in, loaded.model.params(), path);
    return loaded;
}

}  // namespace dbr
