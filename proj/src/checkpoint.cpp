#include "melsyn/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace melsyn {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'C', 'K'};

void write_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("checkpoint truncated reading " + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string read_bytes(std::istream& in, std::uint32_t n, const std::string& what) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw IoError("checkpoint truncated reading " + what);
  return s;
}

}  // namespace

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

const Tensor<float>& Checkpoint::at(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw IoError("checkpoint has no tensor '" + name + "'");
}

void Checkpoint::add(std::string name, Tensor<float> tensor) {
  if (contains(name)) throw IoError("duplicate checkpoint tensor '" + name + "'");
  tensors.emplace_back(std::move(name), std::move(tensor));
}

void Checkpoint::add_params(const std::string& prefix, const ParamSet<float>& params) {
  for (const auto& p : params) {
    const RowMajorMatrixX<float> rows = p.value;
    add(prefix + p.name,
        Tensor<float>({p.value.rows(), p.value.cols()}, Eigen::Map<const Eigen::VectorXf>(rows.data(), rows.size())));
  }
}

ParamSet<float> Checkpoint::read_params(const std::string& prefix, const ParamSet<float>& like) const {
  ParamSet<float> out;
  for (const auto& p : like) {
    const Tensor<float>& t = at(prefix + p.name);
    if (t.rank() != 2 || t.dim(0) != p.value.rows() || t.dim(1) != p.value.cols()) {
      throw IoError("checkpoint tensor '" + prefix + p.name + "' has shape " + shape_string(t.dims()) +
                    ", expected (" + std::to_string(p.value.rows()) + ", " + std::to_string(p.value.cols()) + ")");
    }
    out.add(p.name, t.row_major(t.dim(0), t.dim(1)), p.decay);
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, 4);
    const std::string header = ckpt.header.dump();
    write_u32(out, static_cast<std::uint32_t>(header.size()));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    write_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
      write_u32(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_melt(out, t);
    }
    if (!out) throw IoError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw IoError(path.string() + ": not a checkpoint");
  Checkpoint ckpt;
  const std::string header = read_bytes(in, read_u32(in, "header length"), "header");
  try {
    ckpt.header = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  const std::uint32_t count = read_u32(in, "record count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = read_bytes(in, read_u32(in, "name length"), "name");
    ckpt.tensors.emplace_back(std::move(name), read_melt<float>(in));
  }
  return ckpt;
}

}  // namespace melsyn
