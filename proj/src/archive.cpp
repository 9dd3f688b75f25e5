#include "samlp/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace samlp {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'M', 'L', 'P', 'A', 'R', 'C'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "archive IO assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ArchiveError("archive truncated");
    return v;
}

}  // namespace

const NamedArray* Archive::find(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return &a;
    return nullptr;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
    nlohmann::json index = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& a : archive.arrays) {
        if (static_cast<std::int64_t>(a.data.size()) != numel(a.shape))
            throw ArchiveError("array '" + a.name + "' has inconsistent shape");
        index.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", a.data.size()}});
        offset += a.data.size() * sizeof(float);
    }
    const std::string header = nlohmann::json{{"meta", archive.meta}, {"arrays", index}}.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ArchiveError("cannot open '" + path.string() + "' for writing");
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kVersion);
    put<std::uint64_t>(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& a : archive.arrays)
        os.write(reinterpret_cast<const char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * sizeof(float)));
    if (!os) throw ArchiveError("failed writing '" + path.string() + "'");
}

Archive read_archive(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ArchiveError("cannot open '" + path.string() + "'");
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw ArchiveError("'" + path.string() + "' is not a samlp archive");
    if (get<std::uint32_t>(is) != kVersion) throw ArchiveError("unsupported archive version");
    const auto header_len = get<std::uint64_t>(is);
    std::string header(header_len, '\0');
    if (!is.read(header.data(), static_cast<std::streamsize>(header_len))) throw ArchiveError("archive truncated");
    const auto doc = nlohmann::json::parse(header);

    Archive out;
    out.meta = doc.at("meta");
    const auto payload = is.tellg();
    for (const auto& e : doc.at("arrays")) {
        NamedArray a;
        a.name = e.at("name").get<std::string>();
        a.shape = e.at("shape").get<Shape>();
        a.data.resize(e.at("count").get<std::size_t>());
        is.seekg(payload + static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
        if (!is.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * sizeof(float))))
            throw ArchiveError("archive truncated in '" + a.name + "'");
        out.arrays.push_back(std::move(a));
    }
    return out;
}

}  // namespace samlp
