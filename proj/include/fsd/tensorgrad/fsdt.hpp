#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "fsd/tensorgrad/tensor.hpp"

// FSDT binary tensor records: little-endian, magic "FSDT", u32 rank,
// u32 extents[rank], then the float64 values in row-major order.
// A file may hold several records back to back.
namespace fsd::tg {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_fsdt(std::ostream& out, const Tensor& t);
Tensor read_fsdt(std::istream& in);

void save_fsdt(const std::filesystem::path& path, const Tensor& t);
Tensor load_fsdt(const std::filesystem::path& path);

/// Several tensors in one file (e.g. an ensemble stack).
void save_fsdt_all(const std::filesystem::path& path, const std::vector<Tensor>& ts);
std::vector<Tensor> load_fsdt_all(const std::filesystem::path& path);

}  // namespace fsd::tg
