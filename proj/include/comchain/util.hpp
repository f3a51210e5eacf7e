#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace comchain {

struct IoError : std::runtime_error {
    IoError(const std::string& path, const std::string& what)
        : std::runtime_error(path + ": " + what) {}
};

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const void* data, size_t size);
std::string sha256_hex(const void* data, size_t size);
std::string sha256_file(const std::string& path);

// fixed-precision float formatting (deterministic across runs)
std::string format_double(double v, int decimals);

}  // namespace comchain
