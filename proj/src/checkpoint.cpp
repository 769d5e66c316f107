#include "sst/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace sst {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'T', 'C', 'K', 'P', 'T', '\0'};
constexpr uint32_t kFormatVersion = 1;
constexpr uint32_t kByteOrderMark = 0x01020304u;
constexpr uint32_t kFloatWidth = 8;

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) fail(Err::Format, "checkpoint: truncated while reading " + what);
    return v;
}

void write_string(std::ofstream& out, const std::string& s) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in, const std::string& what) {
    const auto n = read_pod<uint32_t>(in, what + " length");
    if (n > (1u << 20)) fail(Err::Format, "checkpoint: absurd string length");
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) fail(Err::Format, "checkpoint: truncated while reading " + what);
    return s;
}

}  // namespace

void save_checkpoint(const ModelSnapshot& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(Err::Io, "save_checkpoint: cannot open " + path);

    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kFormatVersion);
    write_pod(out, kByteOrderMark);
    write_pod(out, kFloatWidth);
    write_string(out, model.role);

    const auto& c = model.config;
    for (int v : {c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ff,
                  c.max_seq_len, c.attn_layer_index}) {
        write_pod<int32_t>(out, v);
    }

    const auto named = model.params.named_tensors();
    write_pod<uint64_t>(out, named.size());
    for (const auto& [name, t] : named) {
        write_string(out, name);
        write_pod<uint32_t>(out, static_cast<uint32_t>(t->shape.size()));
        for (size_t d : t->shape) write_pod<uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(t->data.data()),
                  static_cast<std::streamsize>(t->data.size() * sizeof(double)));
    }
    if (!out) fail(Err::Io, "save_checkpoint: write failed for " + path);
}

ModelSnapshot load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Err::Io, "load_checkpoint: cannot open " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        fail(Err::Format, "load_checkpoint: bad magic in " + path);
    }
    const auto version = read_pod<uint32_t>(in, "version");
    if (version != kFormatVersion) {
        fail(Err::Format, "load_checkpoint: unsupported version " +
                              std::to_string(version));
    }
    if (read_pod<uint32_t>(in, "byte order") != kByteOrderMark) {
        fail(Err::Format, "load_checkpoint: byte order mismatch");
    }
    if (read_pod<uint32_t>(in, "float width") != kFloatWidth) {
        fail(Err::Format, "load_checkpoint: unsupported float width");
    }

    ModelSnapshot model;
    model.version = version;
    model.role = read_string(in, "role");

    ModelConfig c;
    c.vocab_size = read_pod<int32_t>(in, "vocab_size");
    c.d_model = read_pod<int32_t>(in, "d_model");
    c.n_layers = read_pod<int32_t>(in, "n_layers");
    c.n_heads = read_pod<int32_t>(in, "n_heads");
    c.d_ff = read_pod<int32_t>(in, "d_ff");
    c.max_seq_len = read_pod<int32_t>(in, "max_seq_len");
    c.attn_layer_index = read_pod<int32_t>(in, "attn_layer_index");
    c.validate();
    model.config = c;
    model.params = ParamSet::zeros(c);

    const auto expected = model.params.named_tensors();
    const auto n_tensors = read_pod<uint64_t>(in, "tensor count");
    if (n_tensors != expected.size()) {
        fail(Err::Shape, "load_checkpoint: expected " +
                             std::to_string(expected.size()) + " tensors, got " +
                             std::to_string(n_tensors));
    }
    for (auto& [name, t] : expected) {
        const auto got_name = read_string(in, "tensor name");
        if (got_name != name) {
            fail(Err::Shape, "load_checkpoint: tensor '" + got_name +
                                 "' where '" + name + "' expected");
        }
        const auto ndims = read_pod<uint32_t>(in, "tensor rank");
        std::vector<size_t> shape(ndims);
        for (auto& d : shape) {
            d = static_cast<size_t>(read_pod<uint64_t>(in, "tensor dim"));
        }
        if (shape != t->shape) {
            fail(Err::Shape, "load_checkpoint: shape mismatch for " + name);
        }
        in.read(reinterpret_cast<char*>(t->data.data()),
                static_cast<std::streamsize>(t->data.size() * sizeof(double)));
        if (!in) fail(Err::Format, "load_checkpoint: truncated data for " + name);
        for (double x : t->data) {
            if (!std::isfinite(x)) {
                fail(Err::Format, "load_checkpoint: non-finite entry in " + name);
            }
        }
    }
    return model;
}

}  // namespace sst
