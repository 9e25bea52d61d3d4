#pragma once

#include <Eigen/Core>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "melsyn/error.hpp"

namespace melsyn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using RowMajorMatrixX =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Index shape_size(const Shape& dims);
std::string shape_string(const Shape& dims);

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

template <typename Scalar>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>,
                "tensors hold f32 or f64");
  return std::is_same_v<Scalar, float> ? DType::f32 : DType::f64;
}

/// Dense row-major n-d array. A `C x H x W` latent read through `matrix(H*W, C)`
/// gives the token-by-channel layout the networks consume (column-major view
/// over the same storage).
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape dims);
  Tensor(Shape dims, VectorX<Scalar> data);

  /// Wraps the column-major storage of `m`; `dims` must cover `m.size()`.
  static Tensor from_matrix(Shape dims, const MatrixX<Scalar>& m);

  const Shape& dims() const noexcept { return dims_; }
  Index dim(std::size_t axis) const;
  std::size_t rank() const noexcept { return dims_.size(); }
  Index size() const noexcept { return data_.size(); }

  const VectorX<Scalar>& data() const noexcept { return data_; }
  VectorX<Scalar>& data() noexcept { return data_; }
  Scalar operator[](Index i) const { return data_[i]; }
  Scalar& operator[](Index i) { return data_[i]; }

  Eigen::Map<const MatrixX<Scalar>> matrix(Index rows, Index cols) const;
  Eigen::Map<const RowMajorMatrixX<Scalar>> row_major(Index rows,
                                                      Index cols) const;

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(dims_, data_.template cast<Other>());
  }

  bool same_shape(const Tensor& other) const noexcept {
    return dims_ == other.dims_;
  }
  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  Shape dims_;
  VectorX<Scalar> data_;
};

/// Counter-based SplitMix64 generator. Each draw mixes `seed + counter * phi`
/// through the SplitMix64 finalizer; normals use Box-Muller on two uniforms.
/// The sequence is fixed across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {}

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  double normal() noexcept;
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;
  /// Independent stream derived from this generator's seed (not its position).
  Rng split(std::uint64_t stream) const noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

template <typename Scalar>
Tensor<Scalar> gaussian_sample(Rng& rng, const Shape& dims);

template <typename Scalar>
MatrixX<Scalar> gaussian_matrix(Rng& rng, Index rows, Index cols);

// ---- Gaussian statistics

struct GaussianFit {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Sample mean and unbiased covariance of the rows of `features` (n x d).
GaussianFit fit_gaussian(const Eigen::MatrixXd& features);

/// Principal square root of a symmetric PSD matrix via eigendecomposition.
/// Eigenvalues down to -1e-8 are clamped to zero.
Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m);

// ---- Named parameter collections

template <typename Scalar>
struct NamedParam {
  std::string name;
  MatrixX<Scalar> value;
  bool decay = true;
};

/// Ordered, name-addressable set of parameter matrices.
template <typename Scalar>
class ParamSet {
 public:
  void add(std::string name, MatrixX<Scalar> value, bool decay = true);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;
  const MatrixX<Scalar>& at(const std::string& name) const;
  MatrixX<Scalar>& at(const std::string& name);

  std::size_t size() const noexcept { return items_.size(); }
  const NamedParam<Scalar>& operator[](std::size_t i) const { return items_[i]; }
  NamedParam<Scalar>& operator[](std::size_t i) { return items_[i]; }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }

  Index scalar_count() const;
  /// Same names and shapes, all values zero.
  ParamSet zeros_like() const;

  template <typename Other>
  ParamSet<Other> cast() const {
    ParamSet<Other> out;
    for (const auto& p : items_) out.add(p.name, p.value.template cast<Other>(), p.decay);
    return out;
  }

 private:
  std::vector<NamedParam<Scalar>> items_;
  std::map<std::string, std::size_t> index_;
};

// ---- MELT tensor files
//
// magic "MELT", u8 version (1), u8 dtype (1 = f32, 2 = f64), u8 ndim,
// ndim x u32 LE dims, then the row-major LE payload.

template <typename Scalar>
void write_melt(std::ostream& out, const Tensor<Scalar>& tensor);

/// Reads either dtype and converts to `Scalar`.
template <typename Scalar>
Tensor<Scalar> read_melt(std::istream& in);

template <typename Scalar>
void save_melt(const std::filesystem::path& path, const Tensor<Scalar>& tensor);

template <typename Scalar>
Tensor<Scalar> load_melt(const std::filesystem::path& path);

/// FNV-1a over raw bytes; used for config and content hashes.
std::uint64_t fnv1a64(const void* data, std::size_t size,
                      std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept;
std::uint64_t fnv1a64(const std::string& text) noexcept;
std::string hex64(std::uint64_t value);

}  // namespace melsyn
