#pragma once

#include <filesystem>
#include <iosfwd>

#include "latentad/grid.hpp"

namespace latentad::io {

// VOL1 layout (little-endian): "VOL1", u8 dtype, u32 nx ny nz, f32 spacing[3],
// f32 origin[3], payload x-fastest.
enum class VolDtype : std::uint8_t { Float32 = 1, Mask8 = 2, Label32 = 3 };

void write_vol(std::ostream& os, const Volume& vol);
void write_vol(std::ostream& os, const BinaryMask& mask);
void write_vol(std::ostream& os, const LabelGrid& labels);

Volume read_volume(std::istream& is);
BinaryMask read_mask(std::istream& is);
LabelGrid read_labels(std::istream& is);

/// dtype of the file header, without consuming the payload.
VolDtype peek_dtype(const std::filesystem::path& path);

template <typename GridT>
void save(const std::filesystem::path& path, const GridT& grid);

Volume load_volume(const std::filesystem::path& path);
BinaryMask load_mask(const std::filesystem::path& path);
LabelGrid load_labels(const std::filesystem::path& path);

}  // namespace latentad::io
