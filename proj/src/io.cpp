#include "direcformer/io.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace df {

namespace {

constexpr char kTensorMagic[4] = {'D', 'F', 'T', '1'};
constexpr char kCheckpointMagic[4] = {'D', 'F', 'C', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_le(std::ostream& out, T v) {
    // host is little-endian; raw copy of the object representation
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.write(buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    char buf[sizeof(T)];
    in.read(buf, sizeof(T));
    if (!in) throw IoError("unexpected end of stream");
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_le<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    auto len = read_le<std::uint64_t>(in);
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) throw IoError("unexpected end of stream in string");
    return s;
}

}  // namespace

std::size_t tensor_blob_size(const Tensor& t, Dtype dtype) {
    const std::size_t elem = dtype == Dtype::f32 ? 4 : 8;
    return 4 + 1 + 4 + 8 * t.rank() + elem * t.size();
}

void write_tensor(std::ostream& out, const Tensor& t, Dtype dtype) {
    out.write(kTensorMagic, 4);
    write_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) write_le<std::uint64_t>(out, static_cast<std::uint64_t>(e));
    if (dtype == Dtype::f64) {
        for (double v : t.data()) write_le<double>(out, v);
    } else {
        for (double v : t.data()) write_le<float>(out, static_cast<float>(v));
    }
    if (!out) throw IoError("tensor write failed");
}

Tensor read_tensor(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kTensorMagic, 4) != 0)
        throw IoError("corrupt header: missing DFT1 magic");
    auto dtype_byte = read_le<std::uint8_t>(in);
    if (dtype_byte > 1) throw IoError("corrupt header: bad dtype byte");
    auto rank = read_le<std::uint32_t>(in);
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& e : shape) {
        e = static_cast<std::size_t>(read_le<std::uint64_t>(in));
        n *= e;
    }
    std::vector<double> data(n);
    if (static_cast<Dtype>(dtype_byte) == Dtype::f64) {
        for (auto& v : data) v = read_le<double>(in);
    } else {
        for (auto& v : data) v = static_cast<double>(read_le<float>(in));
    }
    return Tensor::from_data(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t, Dtype dtype) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    write_tensor(out, t, dtype);
    if (!out) throw IoError("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    return read_tensor(in);
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt, Dtype dtype) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(kCheckpointMagic, 4);
    write_le<std::uint32_t>(out, kCheckpointVersion);
    write_string(out, ckpt.config_text);

    // the index is laid out before the blobs, so offsets are computed upfront
    std::size_t index_size = 8;  // entry count
    for (const auto& [name, t] : ckpt.tensors) index_size += 8 + name.size() + 8;
    std::size_t offset = 4 + 4 + 8 + ckpt.config_text.size() + index_size;

    write_le<std::uint64_t>(out, ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
        write_string(out, name);
        write_le<std::uint64_t>(out, offset);
        offset += tensor_blob_size(t, dtype);
    }
    for (const auto& [name, t] : ckpt.tensors) write_tensor(out, t, dtype);
    if (!out) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw IoError("corrupt checkpoint: missing DFCP magic: " + path);
    auto version = read_le<std::uint32_t>(in);
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version in " + path);
    Checkpoint ckpt;
    ckpt.config_text = read_string(in);
    auto count = read_le<std::uint64_t>(in);
    std::vector<std::pair<std::string, std::uint64_t>> index(count);
    for (auto& [name, off] : index) {
        name = read_string(in);
        off = read_le<std::uint64_t>(in);
    }
    for (auto& [name, off] : index) {
        in.seekg(static_cast<std::streamoff>(off));
        ckpt.tensors.emplace_back(name, read_tensor(in));
    }
    return ckpt;
}

}  // namespace df
