#include "fsd/tensorgrad/fsdt.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace fsd::tg {
namespace {

static_assert(std::endian::native == std::endian::little,
              "FSDT I/O assumes a little-endian host");

constexpr char kMagic[4] = {'F', 'S', 'D', 'T'};

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw FormatError("fsdt: truncated header");
  return v;
}

}  // namespace

void write_fsdt(std::ostream& out, const Tensor& t) {
  out.write(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) throw FormatError("fsdt: write failed");
}

Tensor read_fsdt(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("fsdt: missing magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("fsdt: bad magic");
  const std::uint32_t rank = get_u32(in);
  if (rank > 16) throw FormatError("fsdt: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = get_u32(in);
  Tensor t(shape);
  if (!in.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.size() * sizeof(double))))
    throw FormatError("fsdt: truncated payload");
  return t;
}

void save_fsdt(const std::filesystem::path& path, const Tensor& t) {
  save_fsdt_all(path, {t});
}

Tensor load_fsdt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("fsdt: cannot open " + path.string());
  return read_fsdt(in);
}

void save_fsdt_all(const std::filesystem::path& path, const std::vector<Tensor>& ts) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("fsdt: cannot create " + path.string());
  for (const Tensor& t : ts) write_fsdt(out, t);
}

std::vector<Tensor> load_fsdt_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("fsdt: cannot open " + path.string());
  std::vector<Tensor> out;
  while (in.peek() != std::char_traits<char>::eof()) out.push_back(read_fsdt(in));
  return out;
}

}  // namespace fsd::tg
