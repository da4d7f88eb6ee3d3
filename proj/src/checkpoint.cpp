#include "hcvp/checkpoint.hpp"

#include "hcvp/endian.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>

namespace hcvp {

namespace {

constexpr char kMagic[8] = {'H', 'C', 'V', 'P', 'C', 'K', 'P', 'T'};

class Writer {
public:
    explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary), path_(path) {
        if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    void u32(std::uint32_t v) { raw(little_endian(v)); }
    void u64(std::uint64_t v) { raw(little_endian(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void bytes(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }
    void finish() {
        out_.flush();
        if (!out_) throw std::runtime_error("write failed for " + path_.string());
    }

private:
    template <typename T>
    void raw(T v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
    std::ofstream out_;
    std::filesystem::path path_;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw std::runtime_error("cannot open " + path.string());
    }
    std::uint32_t u32() { return little_endian(raw<std::uint32_t>()); }
    std::uint64_t u64() { return little_endian(raw<std::uint64_t>()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        std::string s(u32(), '\0');
        in_.read(s.data(), static_cast<std::streamsize>(s.size()));
        check();
        return s;
    }
    void bytes(char* p, std::size_t n) {
        in_.read(p, static_cast<std::streamsize>(n));
        check();
    }

private:
    template <typename T>
    T raw() {
        T v{};
        in_.read(reinterpret_cast<char*>(&v), sizeof v);
        check();
        return v;
    }
    void check() {
        if (!in_) throw std::runtime_error("truncated checkpoint " + path_.string());
    }
    std::ifstream in_;
    std::filesystem::path path_;
};

} // namespace

const StoredTensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    Writer w(path);
    w.bytes(kMagic, sizeof kMagic);
    w.u32(kVersion);
    w.u64(step);
    w.u64(best_step);
    w.f64(best_val_accuracy);
    w.str(config_hash);
    w.str(config_text);
    w.u64(tensors.size());
    for (const auto& t : tensors) {
        w.str(t.name);
        w.u32(static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) w.u64(d);
        for (double v : t.values) w.f64(v);
    }
    w.u64(optimizer.step_count);
    w.u64(optimizer.first_moment.size());
    for (std::size_t i = 0; i < optimizer.first_moment.size(); ++i) {
        w.u64(optimizer.first_moment[i].size());
        for (double v : optimizer.first_moment[i]) w.f64(v);
        for (double v : optimizer.second_moment[i]) w.f64(v);
    }
    w.finish();
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    Reader r(path);
    char magic[sizeof kMagic];
    r.bytes(magic, sizeof magic);
    if (!std::equal(std::begin(magic), std::end(magic), std::begin(kMagic))) {
        throw std::runtime_error(path.string() + " is not an HCVP checkpoint");
    }
    const auto version = r.u32();
    if (version != kVersion) {
        throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint c;
    c.step = r.u64();
    c.best_step = r.u64();
    c.best_val_accuracy = r.f64();
    c.config_hash = r.str();
    c.config_text = r.str();
    const auto count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        StoredTensor t;
        t.name = r.str();
        const auto rank = r.u32();
        for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.u64());
        t.values.resize(shape_numel(t.shape));
        for (auto& v : t.values) v = r.f64();
        c.tensors.push_back(std::move(t));
    }
    c.optimizer.step_count = r.u64();
    const auto moments = r.u64();
    for (std::uint64_t i = 0; i < moments; ++i) {
        const auto n = r.u64();
        std::vector<double> m(n), v(n);
        for (auto& x : m) x = r.f64();
        for (auto& x : v) x = r.f64();
        c.optimizer.first_moment.push_back(std::move(m));
        c.optimizer.second_moment.push_back(std::move(v));
    }
    return c;
}

std::vector<StoredTensor> store(const ParamList& params) {
    std::vector<StoredTensor> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back({p.name, p.tensor.shape(), p.tensor.to_vector()});
    return out;
}

void restore(const std::vector<StoredTensor>& stored, const ParamList& params) {
    for (auto p : params) {
        auto it = std::find_if(stored.begin(), stored.end(), [&](const StoredTensor& s) { return s.name == p.name; });
        if (it == stored.end()) throw std::runtime_error("checkpoint lacks tensor '" + p.name + "'");
        if (it->shape != p.tensor.shape()) {
            throw DimensionError("checkpoint tensor '" + p.name + "' has shape " + shape_str(it->shape) +
                                 ", model expects " + shape_str(p.tensor.shape()));
        }
        std::copy(it->values.begin(), it->values.end(), p.tensor.mutable_data().begin());
    }
}

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return fnv1a_hex(content);
}

} // namespace hcvp
