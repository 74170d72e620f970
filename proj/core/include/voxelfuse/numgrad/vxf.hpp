#pragma once

#include <filesystem>
#include <iosfwd>

#include "voxelfuse/numgrad/tensor.hpp"

namespace voxelfuse::ng {

// VXF1 tensor container, little-endian:
//   "VXF1" | u32 rank | rank × u64 dims | f64 values (row-major)
void write_vxf(std::ostream& os, const Tensor& t);
Tensor read_vxf(std::istream& is);

void save_vxf(const std::filesystem::path& path, const Tensor& t);
Tensor load_vxf(const std::filesystem::path& path);

}  // namespace voxelfuse::ng
