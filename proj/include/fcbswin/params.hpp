#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcbswin/rng.hpp"
#include "fcbswin/tensor.hpp"

namespace fcbswin {

/// Named parameter tensors with gradient slots. Names are namespaced
/// (swin.*, fcb.*, head.*) and kept in insertion order so the archive
/// layout is stable.
template <typename T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<T> value;
        Tensor<T> grad;
    };

    // grad slots stay empty until zero_grads() so inference pays no grad memory
    Tensor<T>& add(const std::string& name, Tensor<T> init) {
        check(index_.find(name) == index_.end(), "duplicate parameter: " + name);
        index_[name] = entries_.size();
        entries_.push_back({name, std::move(init), {}});
        return entries_.back().value;
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    Entry& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw MissingTensor(name);
        return entries_[it->second];
    }
    const Entry& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw MissingTensor(name);
        return entries_[it->second];
    }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    size_t size() const { return entries_.size(); }

    int64_t total_params() const {
        int64_t n = 0;
        for (const auto& e : entries_) n += e.value.numel();
        return n;
    }

    void zero_grads() {
        for (auto& e : entries_) {
            if (e.grad.numel() != e.value.numel())
                e.grad = Tensor<T>::zeros(e.value.shape);
            else
                std::fill(e.grad.data.begin(), e.grad.data.end(), T(0));
        }
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

// ---- named-tensor archive ----
// Layout: u64 LE manifest length, UTF-8 JSON manifest
// {name: {dtype:"f32", shape:[...], byte_offset: <absolute file offset>}},
// then raw little-endian f32 data, each tensor 64-byte aligned.

namespace detail {
inline int64_t align64(int64_t off) { return (off + 63) & ~int64_t(63); }
}  // namespace detail

template <typename T>
void save_weights(const ParamStore<T>& store, const std::string& path) {
    nlohmann::json manifest = nlohmann::json::object();
    // two passes: sizes depend on the manifest length, so lay out data
    // relative to a header whose size we fix after serializing once with
    // placeholder offsets, then patch real offsets and re-serialize padded
    // to the same length.
    std::vector<int64_t> sizes;
    for (const auto& e : store.entries()) sizes.push_back(e.value.numel() * 4);

    auto build = [&](int64_t data_start) {
        nlohmann::json m = nlohmann::json::object();
        int64_t off = data_start;
        for (const auto& e : store.entries()) {
            off = detail::align64(off);
            m[e.name] = {{"dtype", "f32"}, {"shape", e.value.shape}, {"byte_offset", off}};
            off += e.value.numel() * 4;
        }
        return m;
    };
    // iterate until the header length stabilizes
    int64_t header_len = 8;
    for (int iter = 0; iter < 8; ++iter) {
        std::string s = build(header_len).dump();
        int64_t nl = 8 + static_cast<int64_t>(s.size());
        if (nl == header_len) break;
        header_len = nl;
    }
    nlohmann::json m = build(header_len);
    std::string mstr = m.dump();
    check(8 + static_cast<int64_t>(mstr.size()) == header_len, "archive header did not stabilize");

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    check(f.good(), "cannot open for write: " + path);
    uint64_t n = mstr.size();
    f.write(reinterpret_cast<const char*>(&n), 8);
    f.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
    int64_t off = header_len;
    for (const auto& e : store.entries()) {
        int64_t aligned = detail::align64(off);
        for (; off < aligned; ++off) f.put('\0');
        std::vector<float> buf(e.value.data.size());
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(e.value.data[i]);
        f.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * 4));
        off += static_cast<int64_t>(buf.size() * 4);
    }
    check(f.good(), "write failed: " + path);
}

template <typename T>
std::unordered_map<std::string, Tensor<T>> load_weight_map(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw CorruptArchive("cannot open: " + path);
    uint64_t n = 0;
    f.read(reinterpret_cast<char*>(&n), 8);
    if (!f.good() || n == 0 || n > (1ULL << 31)) throw CorruptArchive("bad manifest length");
    std::string mstr(n, '\0');
    f.read(mstr.data(), static_cast<std::streamsize>(n));
    if (!f.good()) throw CorruptArchive("truncated manifest");
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(mstr);
    } catch (const nlohmann::json::exception& e) {
        throw CorruptArchive(std::string("manifest parse: ") + e.what());
    }
    std::unordered_map<std::string, Tensor<T>> out;
    for (auto it = m.begin(); it != m.end(); ++it) {
        const auto& rec = it.value();
        if (rec.value("dtype", "") != "f32") throw CorruptArchive("unsupported dtype");
        Shape shape = rec.at("shape").get<Shape>();
        int64_t off = rec.at("byte_offset").get<int64_t>();
        Tensor<T> t(shape);
        std::vector<float> buf(static_cast<size_t>(t.numel()));
        f.seekg(off);
        f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
        if (!f.good()) throw CorruptArchive("truncated tensor data: " + it.key());
        for (size_t i = 0; i < buf.size(); ++i) t.data[i] = static_cast<T>(buf[i]);
        out.emplace(it.key(), std::move(t));
    }
    return out;
}

/// Loads an archive into an existing (already-built) store. Every expected
/// tensor must be present with a matching shape unless allow_missing is set
/// (partial pretrained-encoder import).
template <typename T>
void load_weights(ParamStore<T>& store, const std::string& path, bool allow_missing = false) {
    auto loaded = load_weight_map<T>(path);
    for (auto& e : store.entries()) {
        auto it = loaded.find(e.name);
        if (it == loaded.end()) {
            if (allow_missing) continue;
            throw MissingTensor(e.name);
        }
        if (it->second.shape != e.value.shape)
            throw ShapeMismatch(e.name + ": archive " + shape_str(it->second.shape) +
                                " vs model " + shape_str(e.value.shape));
        e.value = std::move(it->second);
    }
}

// ---- initialization (truncated normal for weights, zeros/ones for affine) ----

template <typename T>
Tensor<T> trunc_normal_init(Shape shape, Rng& rng, double sigma = 0.02) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.truncated_normal(sigma));
    return t;
}

}  // namespace fcbswin
