#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace curio {

using Scalar = double;
using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when an operation produces NaN or Inf. Carries the op name in what().
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised on any attempt to modify a frozen parameter.
class FrozenError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    Vector value;
    Vector grad;
    bool requires_grad = false;
    bool frozen = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Pushes this node's grad into its parents.
    std::function<void(Node&)> backward;

    Vector& ensure_grad();
};

}  // namespace detail

/// Reference-counted handle to a dense row-major f64 array that can take part
/// in reverse-mode differentiation. Copies share storage; use clone() for a
/// deep copy.
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, Vector values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor scalar(Scalar v, bool requires_grad = false);
    static Tensor from_rows(const RowMatrix& rows);

    const Shape& shape() const { return node_->shape; }
    Index dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    Index size() const { return node_->value.size(); }

    const Vector& data() const { return node_->value; }
    Scalar item() const;
    Scalar operator[](Index i) const { return node_->value[i]; }

    /// Mutable access for in-place parameter updates. Throws FrozenError on a
    /// frozen tensor.
    Vector& mutable_data();

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    const Vector& grad() const;
    void zero_grad();

    bool frozen() const { return node_->frozen; }
    /// Freezing is one way: the tensor stops requiring grad and rejects writes.
    void freeze();

    /// Reverse pass from a scalar tensor.
    void backward() const;

    Tensor detach() const;
    Tensor clone() const;

    /// View of a rank>=2 tensor as (dim(0), rest) row-major.
    Eigen::Map<const RowMatrix> rows() const;

    const char* op() const { return node_->op; }

    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

/// While alive, ops on the current thread record no tape.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

/// FNV-1a over the raw bytes of the values; stable across runs.
std::uint64_t digest(const Tensor& t);
std::uint64_t digest_bytes(const void* data, std::size_t len, std::uint64_t seed = 14695981039346656037ULL);

}  // namespace curio
