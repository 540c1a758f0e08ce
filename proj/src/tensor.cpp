#include "curio/tensor.hpp"

#include <cstring>
#include <sstream>
#include <unordered_set>

namespace curio {

namespace {
thread_local bool g_grad_enabled = true;
}

Index numel(const Shape& shape) {
    Index n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? ", " : "") << shape[i];
    }
    os << ')';
    return os.str();
}

Vector& detail::Node::ensure_grad() {
    if (grad.size() != value.size()) {
        grad = Vector::Zero(value.size());
    }
    return grad;
}

Tensor::Tensor() : Tensor(Shape{0}, Vector()) {}

Tensor::Tensor(Shape shape, Vector values, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
    for (auto d : shape) {
        if (d < 0) {
            throw ShapeError("negative extent in shape " + to_string(shape));
        }
    }
    if (numel(shape) != values.size()) {
        throw ShapeError("data length " + std::to_string(values.size()) + " does not match shape " +
                         to_string(shape));
    }
    if (!values.allFinite()) {
        throw NumericError("tensor: non-finite value in constructor");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), Vector::Zero(n), requires_grad);
}

Tensor Tensor::scalar(Scalar v, bool requires_grad) {
    Vector d(1);
    d[0] = v;
    return Tensor(Shape{}, std::move(d), requires_grad);
}

Tensor Tensor::from_rows(const RowMatrix& rows) {
    Vector v = Eigen::Map<const Vector>(rows.data(), rows.size());
    return Tensor(Shape{rows.rows(), rows.cols()}, std::move(v));
}

Scalar Tensor::item() const {
    if (size() != 1) {
        throw ShapeError("item() on tensor of shape " + to_string(shape()));
    }
    return node_->value[0];
}

Vector& Tensor::mutable_data() {
    if (node_->frozen) {
        throw FrozenError("attempt to modify a frozen tensor");
    }
    return node_->value;
}

const Vector& Tensor::grad() const {
    if (!has_grad()) {
        throw std::logic_error("tensor has no populated grad");
    }
    return node_->grad;
}

void Tensor::zero_grad() {
    node_->grad.resize(0);
}

void Tensor::freeze() {
    node_->frozen = true;
    node_->requires_grad = false;
    node_->grad.resize(0);
}

void Tensor::backward() const {
    if (size() != 1) {
        throw ShapeError("backward() needs a scalar loss, got shape " + to_string(shape()));
    }
    if (!node_->requires_grad) {
        throw std::logic_error("backward() on a tensor that does not require grad");
    }
    // Iterative post-order DFS gives a topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            detail::Node* p = n->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    node_->ensure_grad().array() += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward && n->grad.size() == n->value.size()) {
            n->backward(*n);
        }
    }
}

Tensor Tensor::detach() const {
    return Tensor(node_->shape, node_->value, false);
}

Tensor Tensor::clone() const {
    return Tensor(node_->shape, node_->value, node_->requires_grad);
}

Eigen::Map<const RowMatrix> Tensor::rows() const {
    if (rank() < 1) {
        throw ShapeError("rows() on a scalar");
    }
    const Index n = dim(0);
    const Index f = n == 0 ? 0 : size() / n;
    return Eigen::Map<const RowMatrix>(node_->value.data(), n, f);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
    g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() {
    g_grad_enabled = previous_;
}

bool grad_enabled() {
    return g_grad_enabled;
}

std::uint64_t digest_bytes(const void* data, std::size_t len, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t digest(const Tensor& t) {
    std::uint64_t h = 14695981039346656037ULL;
    for (auto d : t.shape()) {
        std::int64_t e = d;
        h = digest_bytes(&e, sizeof e, h);
    }
    return digest_bytes(t.data().data(), sizeof(Scalar) * static_cast<std::size_t>(t.size()), h);
}

}  // namespace curio
