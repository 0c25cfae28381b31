// DFT1 binary tensor format and the self-describing checkpoint container.
//
// DFT1 layout: magic "DFT1", one dtype byte (0 = f32, 1 = f64), u32 rank,
// rank x u64 extents, then the little-endian IEEE-754 payload.
//
// Checkpoint layout: magic "DFCP", u32 version, length-prefixed config text
// (key=value lines), then a name -> byte-offset index followed by DFT1 blobs.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "direcformer/tensor.hpp"

namespace df {

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void write_tensor(std::ostream& out, const Tensor& t, Dtype dtype = Dtype::f64);
Tensor read_tensor(std::istream& in);
std::size_t tensor_blob_size(const Tensor& t, Dtype dtype);

void save_tensor(const std::string& path, const Tensor& t, Dtype dtype = Dtype::f64);
Tensor load_tensor(const std::string& path);

struct Checkpoint {
    std::string config_text;  // key=value lines describing the model config
    std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt,
                     Dtype dtype = Dtype::f64);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace df
