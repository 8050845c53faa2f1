#include "latentad/vol_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "latentad/binary_io.hpp"

namespace latentad::io {

namespace {

constexpr char kMagic[4] = {'V', 'O', 'L', '1'};

template <typename T>
void write_grid(std::ostream& os, const Grid<T>& grid, VolDtype dtype) {
    os.write(kMagic, 4);
    put<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
    const Geometry& g = grid.geometry();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(g.dims.nx));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(g.dims.ny));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(g.dims.nz));
    for (int a = 0; a < 3; ++a) put<float>(os, static_cast<float>(g.spacing[a]));
    for (int a = 0; a < 3; ++a) put<float>(os, static_cast<float>(g.origin[a]));
    put_array(os, grid.data());
    if (!os) {
        throw std::runtime_error("VOL1: write failed");
    }
}

struct Header {
    VolDtype dtype;
    Geometry geometry;
};

Header read_header(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("VOL1: bad magic");
    }
    Header h;
    const auto code = get<std::uint8_t>(is, "VOL1 dtype");
    if (code < 1 || code > 3) {
        throw std::runtime_error("VOL1: unknown dtype " + std::to_string(code));
    }
    h.dtype = static_cast<VolDtype>(code);
    h.geometry.dims.nx = static_cast<int>(get<std::uint32_t>(is, "VOL1 header"));
    h.geometry.dims.ny = static_cast<int>(get<std::uint32_t>(is, "VOL1 header"));
    h.geometry.dims.nz = static_cast<int>(get<std::uint32_t>(is, "VOL1 header"));
    for (int a = 0; a < 3; ++a) h.geometry.spacing[a] = get<float>(is, "VOL1 header");
    for (int a = 0; a < 3; ++a) h.geometry.origin[a] = get<float>(is, "VOL1 header");
    h.geometry.validate();
    return h;
}

template <typename T>
Grid<T> read_grid(std::istream& is, VolDtype expected) {
    const Header h = read_header(is);
    if (h.dtype != expected) {
        throw std::runtime_error("VOL1: dtype " + std::to_string(static_cast<int>(h.dtype)) +
                                 ", expected " + std::to_string(static_cast<int>(expected)));
    }
    std::vector<T> data(h.geometry.dims.count());
    get_array(is, data, "VOL1 payload");
    return Grid<T>(h.geometry, std::move(data));
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return in;
}

}  // namespace

void write_vol(std::ostream& os, const Volume& vol) { write_grid(os, vol, VolDtype::Float32); }
void write_vol(std::ostream& os, const BinaryMask& mask) { write_grid(os, mask, VolDtype::Mask8); }
void write_vol(std::ostream& os, const LabelGrid& labels) {
    write_grid(os, labels, VolDtype::Label32);
}

Volume read_volume(std::istream& is) { return read_grid<float>(is, VolDtype::Float32); }
BinaryMask read_mask(std::istream& is) { return read_grid<std::uint8_t>(is, VolDtype::Mask8); }
LabelGrid read_labels(std::istream& is) {
    return read_grid<std::uint32_t>(is, VolDtype::Label32);
}

VolDtype peek_dtype(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_header(in).dtype;
}

template <typename GridT>
void save(const std::filesystem::path& path, const GridT& grid) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    write_vol(out, grid);
}

template void save<Volume>(const std::filesystem::path&, const Volume&);
template void save<BinaryMask>(const std::filesystem::path&, const BinaryMask&);
template void save<LabelGrid>(const std::filesystem::path&, const LabelGrid&);

Volume load_volume(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_volume(in);
}
BinaryMask load_mask(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_mask(in);
}
LabelGrid load_labels(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_labels(in);
}

}  // namespace latentad::io
