#include "shardexec/checkpoint.hpp"

#include <charconv>
#include <fstream>

#include "shardexec/errors.hpp"
#include "shardexec/hash.hpp"

namespace shardexec {

std::vector<uint8_t> Checkpoint::encode() const {
    Writer w;
    w.u32(shard);
    w.u64(boundary);
    w.u64(resume_batch);
    w.u32(static_cast<uint32_t>(image.size()));
    for (const auto& [id, obj] : image) {
        (void)id;  // obj.id is the key
        obj.encode(w);
    }
    Digest d = sha256(w.bytes());
    w.bytes32(d);
    return w.take();
}

Checkpoint Checkpoint::decode(std::span<const uint8_t> data) {
    if (data.size() < 32) throw CodecError("checkpoint too short");
    auto body = data.first(data.size() - 32);
    Digest want;
    std::copy(data.end() - 32, data.end(), want.begin());
    if (sha256(body) != want)
        throw ProtocolError(ProtocolError::Kind::digest_mismatch, "checkpoint digest trailer");

    Reader r(body);
    Checkpoint cp;
    cp.shard = r.u32();
    cp.boundary = r.u64();
    cp.resume_batch = r.u64();
    uint32_t n = r.count(73);
    for (uint32_t i = 0; i < n; i++) {
        Object o = Object::decode(r);
        cp.image.emplace(o.id, std::move(o));
    }
    r.expect_done();
    return cp;
}

void Checkpoint::write_file(const std::filesystem::path& p) const {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    auto bytes = encode();
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + p.string());
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, uint64_t boundary) {
    return dir / ("cp_" + std::to_string(boundary) + ".bin");
}

std::map<uint64_t, Checkpoint> load_checkpoint_dir(const std::filesystem::path& dir) {
    std::map<uint64_t, Checkpoint> out;
    if (!std::filesystem::exists(dir)) return out;
    for (const auto& ent : std::filesystem::directory_iterator(dir)) {
        auto name = ent.path().filename().string();
        if (!name.starts_with("cp_") || !name.ends_with(".bin")) continue;
        uint64_t boundary = 0;
        auto* first = name.data() + 3;
        auto* last = name.data() + name.size() - 4;
        if (std::from_chars(first, last, boundary).ptr != last) continue;
        std::ifstream f(ent.path(), std::ios::binary);
        std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        try {
            out.emplace(boundary, Checkpoint::decode(bytes));
        } catch (const std::exception&) {
            // torn or corrupt file: fall back to an older boundary
        }
    }
    return out;
}

std::optional<Checkpoint> newest_checkpoint(const std::filesystem::path& dir) {
    auto all = load_checkpoint_dir(dir);
    if (all.empty()) return std::nullopt;
    return std::move(all.rbegin()->second);
}

}  // namespace shardexec
