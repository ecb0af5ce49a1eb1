#include "cse/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "cse/errors.hpp"

namespace cse {

static_assert(std::endian::native == std::endian::little,
              "container format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'S', 'E', 'T', 'N', 'S', 'R', '1'};

} // namespace

const Tensor& NamedTensorFile::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw PersistenceError("container is missing tensor '" + name + "'");
}

void save_named_tensors(const std::string& path, const NamedTensorFile& file) {
    nlohmann::json header;
    header["format_version"] = kContainerFormatVersion;
    header["meta"] = file.meta;

    nlohmann::json dir = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : file.tensors) {
        const std::size_t nbytes = t.size() * sizeof(float);
        dir.push_back({{"name", name},
                       {"shape", t.shape},
                       {"dtype", "f32"},
                       {"offset", offset},
                       {"nbytes", nbytes}});
        offset += nbytes;
    }
    header["tensors"] = dir;
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw PersistenceError("cannot write file: " + path);
    out.write(kMagic, 8);
    const std::uint32_t hlen = static_cast<std::uint32_t>(header_str.size());
    out.write(reinterpret_cast<const char*>(&hlen), 4);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, t] : file.tensors)
        out.write(reinterpret_cast<const char*>(t.ptr()),
                  static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!out) throw PersistenceError("write failed: " + path);
}

NamedTensorFile load_named_tensors(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PersistenceError("cannot open file: " + path);
    in.seekg(0, std::ios::end);
    const std::streamoff total = in.tellg();
    in.seekg(0, std::ios::beg);

    char magic[8];
    std::uint32_t hlen = 0;
    if (total < 12 || !in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw PersistenceError("corrupt container (bad magic): " + path);
    in.read(reinterpret_cast<char*>(&hlen), 4);
    if (!in || 12 + static_cast<std::streamoff>(hlen) > total)
        throw PersistenceError("corrupt container (truncated header): " + path);

    std::string header_str(hlen, '\0');
    in.read(header_str.data(), hlen);
    if (!in) throw PersistenceError("corrupt container (truncated header): " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw PersistenceError("corrupt container (header parse): " + path + ": " + e.what());
    }
    const int version = header.value("format_version", -1);
    if (version != kContainerFormatVersion)
        throw PersistenceError("unsupported container format_version " +
                               std::to_string(version) + " (expected " +
                               std::to_string(kContainerFormatVersion) + "): " + path);

    NamedTensorFile file;
    file.meta = header.value("meta", nlohmann::json::object());

    const std::streamoff payload_start = 12 + static_cast<std::streamoff>(hlen);
    for (const auto& entry : header.value("tensors", nlohmann::json::array())) {
        const std::string name = entry.at("name").get<std::string>();
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        const std::string dtype = entry.at("dtype").get<std::string>();
        const std::size_t offset = entry.at("offset").get<std::size_t>();
        const std::size_t nbytes = entry.at("nbytes").get<std::size_t>();
        if (dtype != "f32")
            throw PersistenceError("unsupported tensor dtype '" + dtype + "' in " + path);

        Tensor t(shape);
        if (t.size() * sizeof(float) != nbytes)
            throw PersistenceError("corrupt container (directory size mismatch for '" + name +
                                   "'): " + path);
        if (payload_start + static_cast<std::streamoff>(offset + nbytes) > total)
            throw PersistenceError("corrupt container (truncated payload for '" + name +
                                   "'): " + path);
        in.seekg(payload_start + static_cast<std::streamoff>(offset));
        in.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(nbytes));
        if (!in) throw PersistenceError("corrupt container (short read for '" + name + "'): " + path);
        file.tensors.emplace_back(name, std::move(t));
    }
    return file;
}

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PersistenceError("cannot open file for digest: " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    return hex64(h);
}

} // namespace cse
