#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pedro/tensor.hpp"

namespace pedro {

// One named tensor inside the serialized blob. dtype is the element width in
// bytes (4 = f32, 8 = f64); offsets index into the blob and never overlap.
struct CheckpointEntry {
    std::string name;
    int dtype_bytes = 4;
    Shape shape;
    std::uint64_t offset = 0;
    std::uint64_t nbytes = 0;
};

// In-memory image of a checkpoint file: format version, an echo of the flat
// config text, a manifest, and one contiguous little-endian IEEE-754 blob.
class Checkpoint {
  public:
    static constexpr std::uint32_t kVersion = 1;

    std::uint32_t version = kVersion;
    std::string config_text;
    std::vector<CheckpointEntry> manifest;
    std::vector<unsigned char> blob;

    const CheckpointEntry* find(const std::string& name) const {
        for (const auto& e : manifest)
            if (e.name == name) return &e;
        return nullptr;
    }

    template <typename S>
    void add(const std::string& name, const Tensor<S>& t) {
        if (find(name))
            throw std::invalid_argument("checkpoint already holds '" + name + "'");
        CheckpointEntry e;
        e.name = name;
        e.dtype_bytes = static_cast<int>(sizeof(S));
        e.shape = t.shape();
        e.offset = blob.size();
        e.nbytes = t.numel() * sizeof(S);
        append_values(t.data());
        manifest.push_back(std::move(e));
    }

    template <typename S>
    Tensor<S> tensor(const std::string& name) const {
        const CheckpointEntry* e = find(name);
        if (!e) throw std::runtime_error("checkpoint has no entry '" + name + "'");
        if (e->dtype_bytes != static_cast<int>(sizeof(S)))
            throw std::runtime_error("checkpoint entry '" + name + "' holds " +
                                     std::to_string(e->dtype_bytes * 8) + "-bit values");
        check_entry_bounds(*e);
        std::vector<S> vals(shape_numel(e->shape));
        read_values(e->offset, vals);
        return Tensor<S>::from_data(e->shape, std::move(vals));
    }

    // Overwrites the values of an existing same-shape tensor (loading trained
    // parameters back into a live adapter).
    template <typename S>
    void load_into(const std::string& name, Tensor<S>& t) const {
        Tensor<S> stored = tensor<S>(name);
        if (stored.shape() != t.shape())
            throw std::runtime_error("checkpoint entry '" + name + "' has shape " +
                                     shape_str(stored.shape()) + ", expected " +
                                     shape_str(t.shape()));
        t.data() = stored.data();
    }

    // Fails fast on manifest/blob inconsistencies, naming the offender.
    void validate() const;

  private:
    void check_entry_bounds(const CheckpointEntry& e) const;

    template <typename S>
    void append_values(const std::vector<S>& vals);

    template <typename S>
    void read_values(std::uint64_t offset, std::vector<S>& out) const;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Order-sensitive digest over parameter names and raw values (FNV-1a 64).
// Two parameter sets hash equal iff names, shapes, and bits all match.
template <typename S>
std::uint64_t fingerprint_params(const std::vector<std::pair<std::string, Tensor<S>>>& params) {
    std::uint64_t h = 14695981039346656037ULL;
    auto mix = [&h](const unsigned char* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, t] : params) {
        mix(reinterpret_cast<const unsigned char*>(name.data()), name.size());
        for (int d : t.shape()) {
            const std::uint32_t u = static_cast<std::uint32_t>(d);
            unsigned char b[4] = {static_cast<unsigned char>(u & 0xff),
                                  static_cast<unsigned char>((u >> 8) & 0xff),
                                  static_cast<unsigned char>((u >> 16) & 0xff),
                                  static_cast<unsigned char>((u >> 24) & 0xff)};
            mix(b, 4);
        }
        mix(reinterpret_cast<const unsigned char*>(t.data().data()),
            t.data().size() * sizeof(S));
    }
    return h;
}

}  // namespace pedro
