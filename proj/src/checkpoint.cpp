#include "curio/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace curio {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'U', 'R', 'I', 'O', 'C', 'K', 'P'};
constexpr std::uint8_t kDtypeF64 = 1;

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
        throw std::runtime_error("checkpoint " + path.string() + ": truncated");
    }
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint32_t>(os, ckpt.layer_count);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& [name, t] : ckpt.params) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint8_t>(os, kDtypeF64);
        put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
        for (auto e : t.shape()) {
            put<std::uint64_t>(os, static_cast<std::uint64_t>(e));
        }
        os.write(reinterpret_cast<const char*>(t.data().data()),
                 static_cast<std::streamsize>(sizeof(Scalar) * static_cast<std::size_t>(t.size())));
    }
    if (!os) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open checkpoint " + path.string());
    }
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw std::runtime_error("checkpoint " + path.string() + ": bad magic");
    }
    const auto version = get<std::uint32_t>(is, path);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.layer_count = get<std::uint32_t>(is, path);
    const auto count = get<std::uint32_t>(is, path);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = get<std::uint32_t>(is, path);
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) {
            throw std::runtime_error("checkpoint " + path.string() + ": truncated name");
        }
        if (get<std::uint8_t>(is, path) != kDtypeF64) {
            throw std::runtime_error("checkpoint " + path.string() + ": unsupported dtype for " + name);
        }
        const auto rank = get<std::uint32_t>(is, path);
        Shape shape;
        for (std::uint32_t r = 0; r < rank; ++r) {
            shape.push_back(static_cast<Index>(get<std::uint64_t>(is, path)));
        }
        Vector data(numel(shape));
        if (!is.read(reinterpret_cast<char*>(data.data()),
                     static_cast<std::streamsize>(sizeof(Scalar) * static_cast<std::size_t>(data.size())))) {
            throw std::runtime_error("checkpoint " + path.string() + ": truncated payload for " + name);
        }
        ckpt.params.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return ckpt;
}

void save_network(const std::filesystem::path& path, const Network& net) {
    save_checkpoint(path, {static_cast<std::uint32_t>(net.layers().size()), net.named_parameters()});
}

void load_network(const std::filesystem::path& path, Network& net) {
    auto ckpt = load_checkpoint(path);
    if (ckpt.layer_count != net.layers().size()) {
        throw ShapeError("checkpoint " + path.string() + " has " + std::to_string(ckpt.layer_count) +
                         " layers, network has " + std::to_string(net.layers().size()));
    }
    net.load_parameters(ckpt.params);
}

}  // namespace curio
