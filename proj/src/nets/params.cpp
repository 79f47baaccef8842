#include "fsd/nets/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fsd/core/hash.hpp"
#include "fsd/tensorgrad/fsdt.hpp"

namespace fsd::nets {

Tensor& ParamSet::add(const std::string& name, Tensor value, bool buffer) {
  if (tensors_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
  if (buffer) buffers_.insert(name);
  return tensors_.emplace(name, std::move(value)).first->second;
}

const Tensor& ParamSet::at(const std::string& name) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

Tensor& ParamSet::at(const std::string& name) {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_)
    if (!is_buffer(name)) n += t.size();
  return n;
}

ParamVars::ParamVars(Tape& tape, const ParamSet& params, bool trainable) {
  for (const auto& [name, t] : params.tensors())
    vars_.emplace(name, trainable && !params.is_buffer(name) ? tape.variable(t) : tape.constant(t));
}

Var ParamVars::operator[](const std::string& name) const {
  const auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("unbound parameter " + name);
  return it->second;
}

void ParamVars::bind(const std::string& name, Var v) {
  const auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("unbound parameter " + name);
  if (it->second.shape() != v.shape()) throw tg::ShapeError("rebinding " + name + " with a different shape");
  it->second = v;
}

std::map<std::string, Tensor> parameter_gradients(const Tape& tape, Var loss, const ParamVars& vars,
                                                  const ParamSet& params) {
  std::vector<std::string> names;
  std::vector<Var> wrt;
  for (const auto& [name, v] : vars.vars())
    if (!params.is_buffer(name) && tape.requires_grad(v)) {
      names.push_back(name);
      wrt.push_back(v);
    }
  std::vector<Tensor> grads = tape.vjp(loss, wrt);
  std::map<std::string, Tensor> out;
  for (std::size_t i = 0; i < names.size(); ++i) out.emplace(names[i], std::move(grads[i]));
  return out;
}

Tensor init_normal(Shape shape, double fan_in, Rng& rng, double gain) {
  Tensor t(std::move(shape));
  const double sd = gain / std::sqrt(fan_in);
  for (double& v : t.values()) v = sd * rng.normal();
  return t;
}

namespace {

constexpr char kMagic[4] = {'F', 'S', 'D', 'C'};

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("checkpoint: truncated");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string get_string(std::istream& in, std::uint32_t n) {
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw CheckpointError("checkpoint: truncated");
  return s;
}

void write_entry(std::ostream& out, const std::string& name, bool buffer, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  out.put(buffer ? 1 : 0);
  tg::write_fsdt(out, t);
}

}  // namespace

std::string spec_hash(const Json& spec) { return sha256_hex(spec.dump()); }

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ostringstream body(std::ios::binary);
  body.write(kMagic, 4);
  const std::string spec = ckpt.spec.dump();
  put_u32(body, static_cast<std::uint32_t>(spec.size()));
  body.write(spec.data(), static_cast<std::streamsize>(spec.size()));
  put_u32(body, static_cast<std::uint32_t>(ckpt.params.tensors().size() + ckpt.extra.size()));
  for (const auto& [name, t] : ckpt.params.tensors()) write_entry(body, name, ckpt.params.is_buffer(name), t);
  for (const auto& [name, t] : ckpt.extra) write_entry(body, "extra:" + name, false, t);
  std::string bytes = body.str();
  bytes += sha256_hex(bytes);
  write_text(path, bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_text(path);
  if (bytes.size() < 4 + 64 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointError("checkpoint: bad magic in " + path.string());
  const std::string body = bytes.substr(0, bytes.size() - 64);
  if (sha256_hex(body) != bytes.substr(bytes.size() - 64))
    throw CheckpointError("checkpoint: content hash mismatch in " + path.string());
  std::istringstream in(body, std::ios::binary);
  in.ignore(4);
  Checkpoint ckpt;
  try {
    ckpt.spec = Json::parse(get_string(in, get_u32(in)));
  } catch (const Json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint: bad spec JSON: ") + e.what());
  }
  const std::uint32_t count = get_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = get_string(in, get_u32(in));
    const int flag = in.get();
    if (flag < 0) throw CheckpointError("checkpoint: truncated");
    Tensor t = tg::read_fsdt(in);
    if (name.rfind("extra:", 0) == 0)
      ckpt.extra.emplace(name.substr(6), std::move(t));
    else
      ckpt.params.add(name, std::move(t), flag == 1);
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const Json& expected_spec) {
  Checkpoint ckpt = load_checkpoint(path);
  if (spec_hash(ckpt.spec) != spec_hash(expected_spec))
    throw CheckpointError("checkpoint: spec hash mismatch (" + path.string() + ")");
  return ckpt;
}

}  // namespace fsd::nets
