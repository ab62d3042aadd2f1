#include "objcustom/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace objcustom {

namespace {
constexpr char kMagic[] = "OCKARCH1\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;
static_assert(std::endian::native == std::endian::little, "archive format assumes a little-endian host");
}  // namespace

const Tensor* Archive::find(const std::string& name) const {
    for (const auto& [n, t] : blocks)
        if (n == name) return &t;
    return nullptr;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
    nlohmann::json header;
    header["meta"] = archive.meta;
    header["blocks"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : archive.blocks) {
        header["blocks"].push_back({{"name", name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", offset}});
        offset += t.size();
    }
    const std::string text = header.dump();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write archive " + path.string());
    out.write(kMagic, kMagicLen);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : archive.blocks)
        out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!out) throw std::runtime_error("short write on archive " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open archive " + path.string());
    char magic[kMagicLen];
    in.read(magic, kMagicLen);
    if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0) throw ConfigError("not an archive file: " + path.string());
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw ConfigError("truncated archive header: " + path.string());
    const auto header = nlohmann::json::parse(text);
    Archive a;
    a.meta = header.at("meta");
    for (const auto& b : header.at("blocks")) {
        Tensor t(b.at("rows").get<int>(), b.at("cols").get<int>());
        in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!in) throw ConfigError("truncated archive payload: " + path.string());
        a.blocks.emplace_back(b.at("name").get<std::string>(), std::move(t));
    }
    return a;
}

void store_to_archive(const ad::ParamStore& store, Archive& archive, const std::string& prefix) {
    for (const auto* p : store.all()) archive.blocks.emplace_back(prefix + p->name, p->value);
}

void load_from_archive(ad::ParamStore& store, const Archive& archive, const std::string& prefix) {
    for (auto* p : store.all()) {
        const Tensor* t = archive.find(prefix + p->name);
        if (t == nullptr) throw ConfigError("archive lacks parameter block " + prefix + p->name);
        if (!t->same_shape(p->value))
            throw ConfigError("parameter " + p->name + " has shape " + t->shape_str() + " in archive but " +
                              p->value.shape_str() + " in model");
        p->value = *t;
    }
}

}  // namespace objcustom
