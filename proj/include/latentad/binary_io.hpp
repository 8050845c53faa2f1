#pragma once

// Little-endian primitives shared by the VOL1 and NET1 formats.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace latentad::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& os, T value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void put_array(std::ostream& os, const std::vector<T>& values) {
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(T)));
}

template <typename T>
T get(std::istream& is, const char* what) {
    T value{};
    if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
        throw std::runtime_error(std::string(what) + ": truncated");
    }
    return value;
}

template <typename T>
void get_array(std::istream& is, std::vector<T>& values, const char* what) {
    const auto bytes = static_cast<std::streamsize>(values.size() * sizeof(T));
    if (!is.read(reinterpret_cast<char*>(values.data()), bytes) || is.gcount() != bytes) {
        throw std::runtime_error(std::string(what) + ": truncated");
    }
}

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
    char buf[4];
    if (!is.read(buf, 4) || std::string(buf, 4) != std::string(magic, 4)) {
        throw std::runtime_error(std::string("bad magic, expected ") + magic);
    }
}

}  // namespace latentad::io
