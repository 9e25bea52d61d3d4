#include "melsyn/numerics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

namespace melsyn {

Index shape_size(const Shape& dims) {
  Index n = 1;
  for (Index d : dims) {
    if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_string(dims));
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& dims) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? ", " : "") << dims[i];
  os << ')';
  return os.str();
}

// ---- Tensor

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape dims)
    : dims_(std::move(dims)), data_(VectorX<Scalar>::Zero(shape_size(dims_))) {}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape dims, VectorX<Scalar> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  if (shape_size(dims_) != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match dims " + shape_string(dims_));
  }
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_matrix(Shape dims, const MatrixX<Scalar>& m) {
  return Tensor(std::move(dims), Eigen::Map<const VectorX<Scalar>>(m.data(), m.size()));
}

template <typename Scalar>
Index Tensor<Scalar>::dim(std::size_t axis) const {
  if (axis >= dims_.size()) throw ShapeError("axis out of range");
  return dims_[axis];
}

template <typename Scalar>
Eigen::Map<const MatrixX<Scalar>> Tensor<Scalar>::matrix(Index rows, Index cols) const {
  if (rows * cols != size()) throw ShapeError("matrix view does not cover tensor " + shape_string(dims_));
  return Eigen::Map<const MatrixX<Scalar>>(data_.data(), rows, cols);
}

template <typename Scalar>
Eigen::Map<const RowMajorMatrixX<Scalar>> Tensor<Scalar>::row_major(Index rows, Index cols) const {
  if (rows * cols != size()) throw ShapeError("matrix view does not cover tensor " + shape_string(dims_));
  return Eigen::Map<const RowMajorMatrixX<Scalar>>(data_.data(), rows, cols);
}

template class Tensor<float>;
template class Tensor<double>;

// ---- Rng

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t Rng::next_u64() noexcept {
  ++counter_;
  return splitmix64(seed_ + counter_ * 0x9E3779B97F4A7C15ULL);
}

double Rng::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() noexcept {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) noexcept {
  if (n <= 1) return 0;
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

Rng Rng::split(std::uint64_t stream) const noexcept {
  return Rng(splitmix64(splitmix64(seed_) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL)));
}

template <typename Scalar>
Tensor<Scalar> gaussian_sample(Rng& rng, const Shape& dims) {
  if (dims.empty()) throw ShapeError("gaussian_sample needs at least one dim");
  Tensor<Scalar> out(dims);
  for (Index i = 0; i < out.size(); ++i) out[i] = static_cast<Scalar>(rng.normal());
  return out;
}

template <typename Scalar>
MatrixX<Scalar> gaussian_matrix(Rng& rng, Index rows, Index cols) {
  MatrixX<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(rng.normal());
  return m;
}

template Tensor<float> gaussian_sample<float>(Rng&, const Shape&);
template Tensor<double> gaussian_sample<double>(Rng&, const Shape&);
template MatrixX<float> gaussian_matrix<float>(Rng&, Index, Index);
template MatrixX<double> gaussian_matrix<double>(Rng&, Index, Index);

// ---- Gaussian statistics

GaussianFit fit_gaussian(const Eigen::MatrixXd& features) {
  const Index n = features.rows();
  if (n < 2) throw NumericError("fit_gaussian needs at least 2 rows, got " + std::to_string(n));
  GaussianFit fit;
  fit.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - fit.mean.transpose();
  fit.cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  fit.cov = 0.5 * (fit.cov + fit.cov.transpose()).eval();
  return fit;
}

Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw ShapeError("sqrtm_psd needs a square matrix");
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8 * std::max(1.0, m.cwiseAbs().maxCoeff())) {
    throw NumericError("sqrtm_psd: matrix is not symmetric (max asymmetry " +
                       std::to_string(asym) + ")");
  }
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) throw NumericError("sqrtm_psd: eigendecomposition failed");
  Eigen::VectorXd values = eig.eigenvalues();
  const double floor = -1e-8 * std::max(1.0, values.cwiseAbs().maxCoeff());
  for (Index i = 0; i < values.size(); ++i) {
    if (values[i] < floor) {
      throw NumericError("sqrtm_psd: eigenvalue " + std::to_string(values[i]) +
                         " is below the PSD tolerance");
    }
    values[i] = std::sqrt(std::max(values[i], 0.0));
  }
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

// ---- ParamSet

template <typename Scalar>
void ParamSet<Scalar>::add(std::string name, MatrixX<Scalar> value, bool decay) {
  if (index_.count(name)) throw ShapeError("duplicate parameter '" + name + "'");
  index_.emplace(name, items_.size());
  items_.push_back({std::move(name), std::move(value), decay});
}

template <typename Scalar>
std::size_t ParamSet<Scalar>::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("unknown parameter '" + name + "'");
  return it->second;
}

template <typename Scalar>
const MatrixX<Scalar>& ParamSet<Scalar>::at(const std::string& name) const {
  return items_[index_of(name)].value;
}

template <typename Scalar>
MatrixX<Scalar>& ParamSet<Scalar>::at(const std::string& name) {
  return items_[index_of(name)].value;
}

template <typename Scalar>
Index ParamSet<Scalar>::scalar_count() const {
  Index n = 0;
  for (const auto& p : items_) n += p.value.size();
  return n;
}

template <typename Scalar>
ParamSet<Scalar> ParamSet<Scalar>::zeros_like() const {
  ParamSet out;
  for (const auto& p : items_) {
    out.add(p.name, MatrixX<Scalar>::Zero(p.value.rows(), p.value.cols()), p.decay);
  }
  return out;
}

template class ParamSet<float>;
template class ParamSet<double>;

// ---- MELT

namespace {

constexpr std::array<char, 4> kMeltMagic{'M', 'E', 'L', 'T'};

template <typename T>
void write_le(std::ostream& out, T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    out.write(bytes.data(), sizeof(T));
  } else {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }
}

template <typename T>
T read_le(std::istream& in) {
  std::array<char, sizeof(T)> bytes{};
  in.read(bytes.data(), sizeof(T));
  if (!in) throw IoError("MELT: unexpected end of stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

}  // namespace

template <typename Scalar>
void write_melt(std::ostream& out, const Tensor<Scalar>& tensor) {
  if (tensor.rank() > 255) throw ShapeError("MELT supports at most 255 dims");
  out.write(kMeltMagic.data(), kMeltMagic.size());
  write_le<std::uint8_t>(out, 1);
  write_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype_of<Scalar>()));
  write_le<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.rank()));
  for (Index d : tensor.dims()) write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(tensor.data().data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(Scalar)));
  } else {
    for (Index i = 0; i < tensor.size(); ++i) write_le<Scalar>(out, tensor[i]);
  }
  if (!out) throw IoError("MELT: write failed");
}

template <typename Scalar>
Tensor<Scalar> read_melt(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMeltMagic) throw IoError("MELT: bad magic");
  const auto version = read_le<std::uint8_t>(in);
  if (version != 1) throw IoError("MELT: unsupported version " + std::to_string(version));
  const auto dtype = read_le<std::uint8_t>(in);
  const auto ndim = read_le<std::uint8_t>(in);
  Shape dims(ndim);
  for (auto& d : dims) d = read_le<std::uint32_t>(in);
  const Index n = shape_size(dims);
  VectorX<Scalar> data(n);
  if (dtype == static_cast<std::uint8_t>(DType::f32)) {
    for (Index i = 0; i < n; ++i) data[i] = static_cast<Scalar>(read_le<float>(in));
  } else if (dtype == static_cast<std::uint8_t>(DType::f64)) {
    for (Index i = 0; i < n; ++i) data[i] = static_cast<Scalar>(read_le<double>(in));
  } else {
    throw IoError("MELT: unknown dtype code " + std::to_string(dtype));
  }
  return Tensor<Scalar>(std::move(dims), std::move(data));
}

template <typename Scalar>
void save_melt(const std::filesystem::path& path, const Tensor<Scalar>& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_melt(out, tensor);
}

template <typename Scalar>
Tensor<Scalar> load_melt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return read_melt<Scalar>(in);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

template void write_melt<float>(std::ostream&, const Tensor<float>&);
template void write_melt<double>(std::ostream&, const Tensor<double>&);
template Tensor<float> read_melt<float>(std::istream&);
template Tensor<double> read_melt<double>(std::istream&);
template void save_melt<float>(const std::filesystem::path&, const Tensor<float>&);
template void save_melt<double>(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_melt<float>(const std::filesystem::path&);
template Tensor<double> load_melt<double>(const std::filesystem::path&);

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) noexcept {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(const std::string& text) noexcept {
  return fnv1a64(text.data(), text.size());
}

std::string hex64(std::uint64_t value) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << value;
  return os.str();
}

}  // namespace melsyn
