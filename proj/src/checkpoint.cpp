#include "pedro/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <limits>

namespace pedro {

static_assert(std::numeric_limits<float>::is_iec559 && sizeof(float) == 4,
              "float must be 32-bit IEEE-754");
static_assert(std::numeric_limits<double>::is_iec559 && sizeof(double) == 8,
              "double must be 64-bit IEEE-754");

namespace {

constexpr char kMagic[8] = {'P', 'E', 'D', 'R', 'O', 'C', 'K', 'P'};

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

struct ByteReader {
    const std::vector<unsigned char>& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(buf[pos] | (buf[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + static_cast<std::size_t>(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos + static_cast<std::size_t>(i)]) << (8 * i);
        pos += 8;
        return v;
    }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
};

}  // namespace

void Checkpoint::check_entry_bounds(const CheckpointEntry& e) const {
    const std::uint64_t want = shape_numel(e.shape) * static_cast<std::uint64_t>(e.dtype_bytes);
    if (e.nbytes != want)
        throw std::runtime_error("checkpoint entry '" + e.name + "' declares " +
                                 std::to_string(e.nbytes) + " bytes but shape " +
                                 shape_str(e.shape) + " needs " + std::to_string(want));
    if (e.offset + e.nbytes > blob.size())
        throw std::runtime_error("checkpoint blob truncated: entry '" + e.name + "' needs bytes [" +
                                 std::to_string(e.offset) + ", " +
                                 std::to_string(e.offset + e.nbytes) + ") but blob holds " +
                                 std::to_string(blob.size()));
}

void Checkpoint::validate() const {
    // bounds per entry, then pairwise non-overlap
    for (const auto& e : manifest) check_entry_bounds(e);
    for (std::size_t i = 0; i < manifest.size(); ++i)
        for (std::size_t j = i + 1; j < manifest.size(); ++j) {
            const auto& a = manifest[i];
            const auto& b = manifest[j];
            if (a.name == b.name)
                throw std::runtime_error("checkpoint manifest repeats '" + a.name + "'");
            const bool disjoint =
                a.offset + a.nbytes <= b.offset || b.offset + b.nbytes <= a.offset;
            if (!disjoint)
                throw std::runtime_error("checkpoint entries '" + a.name + "' and '" + b.name +
                                         "' overlap in the blob");
        }
}

template <typename S>
void Checkpoint::append_values(const std::vector<S>& vals) {
    const std::size_t start = blob.size();
    blob.resize(start + vals.size() * sizeof(S));
    std::memcpy(blob.data() + start, vals.data(), vals.size() * sizeof(S));
}

template <typename S>
void Checkpoint::read_values(std::uint64_t offset, std::vector<S>& out) const {
    std::memcpy(out.data(), blob.data() + offset, out.size() * sizeof(S));
}

template void Checkpoint::append_values<float>(const std::vector<float>&);
template void Checkpoint::append_values<double>(const std::vector<double>&);
template void Checkpoint::read_values<float>(std::uint64_t, std::vector<float>&) const;
template void Checkpoint::read_values<double>(std::uint64_t, std::vector<double>&) const;

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    ck.validate();
    std::vector<unsigned char> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    put_u32(out, ck.version);
    put_u64(out, ck.config_text.size());
    out.insert(out.end(), ck.config_text.begin(), ck.config_text.end());
    put_u64(out, ck.manifest.size());
    for (const auto& e : ck.manifest) {
        if (e.name.size() > 0xffff)
            throw std::invalid_argument("checkpoint entry name too long");
        put_u16(out, static_cast<std::uint16_t>(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
        out.push_back(static_cast<unsigned char>(e.dtype_bytes));
        out.push_back(static_cast<unsigned char>(e.shape.size()));
        for (int d : e.shape) put_u32(out, static_cast<std::uint32_t>(d));
        put_u64(out, e.offset);
        put_u64(out, e.nbytes);
    }
    put_u64(out, ck.blob.size());
    out.insert(out.end(), ck.blob.begin(), ck.blob.end());

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("failed writing checkpoint to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    ByteReader r{buf};
    const std::string magic = r.str(8, "magic");
    if (std::memcmp(magic.data(), kMagic, 8) != 0)
        throw std::runtime_error("'" + path + "' is not a checkpoint file (bad magic)");
    Checkpoint ck;
    ck.version = r.u32("version");
    if (ck.version != Checkpoint::kVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(ck.version) +
                                 " (this build reads version " +
                                 std::to_string(Checkpoint::kVersion) + ")");
    const std::uint64_t cfg_len = r.u64("config length");
    ck.config_text = r.str(static_cast<std::size_t>(cfg_len), "config echo");
    const std::uint64_t n = r.u64("manifest size");
    for (std::uint64_t i = 0; i < n; ++i) {
        CheckpointEntry e;
        const std::uint16_t name_len = r.u16("entry name length");
        e.name = r.str(name_len, "entry name");
        r.need(2, "entry header");
        e.dtype_bytes = static_cast<int>(buf[r.pos++]);
        if (e.dtype_bytes != 4 && e.dtype_bytes != 8)
            throw std::runtime_error("checkpoint entry '" + e.name + "' has unsupported dtype width " +
                                     std::to_string(e.dtype_bytes));
        const int ndim = static_cast<int>(buf[r.pos++]);
        for (int d = 0; d < ndim; ++d)
            e.shape.push_back(static_cast<int>(r.u32("entry shape")));
        e.offset = r.u64("entry offset");
        e.nbytes = r.u64("entry byte count");
        ck.manifest.push_back(std::move(e));
    }
    const std::uint64_t blob_len = r.u64("blob length");
    if (r.pos + blob_len > buf.size()) {
        // name the first entry whose bytes fall outside what is actually here
        const std::uint64_t have = buf.size() - r.pos;
        for (const auto& e : ck.manifest)
            if (e.offset + e.nbytes > have)
                throw std::runtime_error("checkpoint blob truncated: entry '" + e.name +
                                         "' needs bytes [" + std::to_string(e.offset) + ", " +
                                         std::to_string(e.offset + e.nbytes) + ") but blob holds " +
                                         std::to_string(have));
        throw std::runtime_error("checkpoint blob truncated (declared " +
                                 std::to_string(blob_len) + " bytes, found " +
                                 std::to_string(have) + ")");
    }
    ck.blob.assign(buf.begin() + static_cast<std::ptrdiff_t>(r.pos),
                   buf.begin() + static_cast<std::ptrdiff_t>(r.pos + blob_len));
    ck.validate();
    return ck;
}

}  // namespace pedro
