#include "curio/ops.hpp"

#include <cmath>

namespace curio {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

Tensor make_result(Shape shape, Vector value, const char* op, std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward) {
    if (!value.allFinite()) {
        throw NumericError(std::string(op) + ": produced a non-finite value");
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    bool track = false;
    if (grad_enabled()) {
        for (const auto& p : parents) {
            track = track || p->requires_grad;
        }
    }
    if (track) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
}

void require_rank(const Tensor& x, std::size_t r, const char* op) {
    if (x.rank() != r) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got shape " +
                         to_string(x.shape()));
    }
}

template <typename F, typename DF>
Tensor unary(const Tensor& x, const char* op, F f, DF df) {
    Vector out = x.data().unaryExpr(f);
    return make_result(x.shape(), out, op, {x.node()}, [df](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) {
            return;
        }
        const Eigen::ArrayXd d = df(p.value.array(), self.value.array());
        p.ensure_grad().array() += self.grad.array() * d;
    });
}

}  // namespace

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank(x, 2, "linear");
    require_rank(weight, 2, "linear");
    const Index n = x.dim(0), in = x.dim(1), out = weight.dim(0);
    if (weight.dim(1) != in || bias.size() != out) {
        throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                         to_string(weight.shape()) + " / bias " + to_string(bias.shape()));
    }
    Eigen::Map<const RowMatrix> X(x.data().data(), n, in);
    Eigen::Map<const RowMatrix> W(weight.data().data(), out, in);
    Vector value(n * out);
    Eigen::Map<RowMatrix> Y(value.data(), n, out);
    Y.noalias() = X * W.transpose();
    Y.rowwise() += bias.data().transpose();
    return make_result({n, out}, std::move(value), "linear", {x.node(), weight.node(), bias.node()},
                       [n, in, out](Node& self) {
                           Eigen::Map<const RowMatrix> dY(self.grad.data(), n, out);
                           Node& px = *self.parents[0];
                           Node& pw = *self.parents[1];
                           Node& pb = *self.parents[2];
                           if (px.requires_grad) {
                               Eigen::Map<const RowMatrix> Wm(pw.value.data(), out, in);
                               Eigen::Map<RowMatrix> dX(px.ensure_grad().data(), n, in);
                               dX.noalias() += dY * Wm;
                           }
                           if (pw.requires_grad) {
                               Eigen::Map<const RowMatrix> Xm(px.value.data(), n, in);
                               Eigen::Map<RowMatrix> dW(pw.ensure_grad().data(), out, in);
                               dW.noalias() += dY.transpose() * Xm;
                           }
                           if (pb.requires_grad) {
                               pb.ensure_grad() += dY.colwise().sum().transpose();
                           }
                       });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Index stride) {
    require_rank(x, 4, "conv2d");
    require_rank(weight, 4, "conv2d");
    const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const Index o = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != c || weight.dim(3) != k || bias.size() != o) {
        throw ShapeError("conv2d: input " + to_string(x.shape()) + " incompatible with weight " +
                         to_string(weight.shape()));
    }
    if (stride < 1 || k > h || k > w) {
        throw ShapeError("conv2d: kernel " + std::to_string(k) + " exceeds input extent " + to_string(x.shape()));
    }
    const Index ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
    const Index patch = c * k * k, positions = ho * wo;

    // im2col: column (s*positions + p) holds the receptive field of output p of sample s.
    auto cols = std::make_shared<Matrix>(patch, n * positions);
    const Scalar* xd = x.data().data();
    for (Index s = 0; s < n; ++s) {
        for (Index oy = 0; oy < ho; ++oy) {
            for (Index ox = 0; ox < wo; ++ox) {
                Scalar* col = cols->col(s * positions + oy * wo + ox).data();
                Index r = 0;
                for (Index ci = 0; ci < c; ++ci) {
                    const Scalar* plane = xd + ((s * c + ci) * h + oy * stride) * w + ox * stride;
                    for (Index ky = 0; ky < k; ++ky) {
                        for (Index kx = 0; kx < k; ++kx) {
                            col[r++] = plane[ky * w + kx];
                        }
                    }
                }
            }
        }
    }
    Eigen::Map<const RowMatrix> W(weight.data().data(), o, patch);
    Matrix prod = W * (*cols);
    Vector value(n * o * positions);
    for (Index s = 0; s < n; ++s) {
        Eigen::Map<RowMatrix> out(value.data() + s * o * positions, o, positions);
        out = prod.middleCols(s * positions, positions);
        out.colwise() += bias.data();
    }
    return make_result(
        {n, o, ho, wo}, std::move(value), "conv2d", {x.node(), weight.node(), bias.node()},
        [=](Node& self) {
            Node& px = *self.parents[0];
            Node& pw = *self.parents[1];
            Node& pb = *self.parents[2];
            Matrix g(o, n * positions);
            for (Index s = 0; s < n; ++s) {
                g.middleCols(s * positions, positions) =
                    Eigen::Map<const RowMatrix>(self.grad.data() + s * o * positions, o, positions);
            }
            if (pw.requires_grad) {
                Eigen::Map<RowMatrix> dW(pw.ensure_grad().data(), o, patch);
                dW.noalias() += g * cols->transpose();
            }
            if (pb.requires_grad) {
                pb.ensure_grad() += g.rowwise().sum();
            }
            if (px.requires_grad) {
                Eigen::Map<const RowMatrix> Wm(pw.value.data(), o, patch);
                Matrix dcols = Wm.transpose() * g;
                Scalar* dx = px.ensure_grad().data();
                for (Index s = 0; s < n; ++s) {
                    for (Index oy = 0; oy < ho; ++oy) {
                        for (Index ox = 0; ox < wo; ++ox) {
                            const Scalar* col = dcols.col(s * positions + oy * wo + ox).data();
                            Index r = 0;
                            for (Index ci = 0; ci < c; ++ci) {
                                Scalar* plane = dx + ((s * c + ci) * h + oy * stride) * w + ox * stride;
                                for (Index ky = 0; ky < k; ++ky) {
                                    for (Index kx = 0; kx < k; ++kx) {
                                        plane[ky * w + kx] += col[r++];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
}

Tensor spatial_mean_pool(const Tensor& x, Index window) {
    require_rank(x, 4, "spatial_mean_pool");
    const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const Index wy = window == 0 ? h : window, wx = window == 0 ? w : window;
    if (wy < 1 || h % wy != 0 || w % wx != 0) {
        throw ShapeError("spatial_mean_pool: window " + std::to_string(window) + " does not tile " +
                         to_string(x.shape()));
    }
    const Index ho = h / wy, wo = w / wx;
    const Scalar scale = 1.0 / static_cast<Scalar>(wy * wx);
    Vector value = Vector::Zero(n * c * ho * wo);
    const Scalar* xd = x.data().data();
    for (Index plane = 0; plane < n * c; ++plane) {
        for (Index y = 0; y < h; ++y) {
            for (Index xx = 0; xx < w; ++xx) {
                value[(plane * ho + y / wy) * wo + xx / wx] += xd[(plane * h + y) * w + xx];
            }
        }
    }
    value *= scale;
    return make_result({n, c, ho, wo}, std::move(value), "spatial_mean_pool", {x.node()},
                       [=](Node& self) {
                           Node& p = *self.parents[0];
                           Scalar* dx = p.ensure_grad().data();
                           for (Index plane = 0; plane < n * c; ++plane) {
                               for (Index y = 0; y < h; ++y) {
                                   for (Index xx = 0; xx < w; ++xx) {
                                       dx[(plane * h + y) * w + xx] +=
                                           scale * self.grad[(plane * ho + y / wy) * wo + xx / wx];
                                   }
                               }
                           }
                       });
}

Tensor instance_norm(const Tensor& x, Scalar eps) {
    require_rank(x, 4, "instance_norm");
    const Index planes = x.dim(0) * x.dim(1);
    const Index m = x.dim(2) * x.dim(3);
    Eigen::Map<const RowMatrix> X(x.data().data(), planes, m);
    Vector value(x.size());
    Eigen::Map<RowMatrix> Y(value.data(), planes, m);
    auto inv_std = std::make_shared<Vector>(planes);
    for (Index i = 0; i < planes; ++i) {
        const Scalar mu = X.row(i).mean();
        const Scalar var = (X.row(i).array() - mu).square().mean();
        (*inv_std)[i] = 1.0 / std::sqrt(var + eps);
        Y.row(i) = (X.row(i).array() - mu) * (*inv_std)[i];
    }
    return make_result(x.shape(), std::move(value), "instance_norm", {x.node()}, [=](Node& self) {
        Node& p = *self.parents[0];
        Eigen::Map<const RowMatrix> dY(self.grad.data(), planes, m);
        Eigen::Map<const RowMatrix> Yv(self.value.data(), planes, m);
        Eigen::Map<RowMatrix> dX(p.ensure_grad().data(), planes, m);
        for (Index i = 0; i < planes; ++i) {
            const Scalar mean_dy = dY.row(i).mean();
            const Scalar mean_dy_y = (dY.row(i).array() * Yv.row(i).array()).mean();
            dX.row(i).array() += (*inv_std)[i] * (dY.row(i).array() - mean_dy - Yv.row(i).array() * mean_dy_y);
        }
    });
}

Tensor relu(const Tensor& x) {
    return unary(
        x, "relu", [](Scalar v) { return v > 0 ? v : 0.0; },
        [](const auto& in, const auto&) { return (in > 0).template cast<Scalar>(); });
}

Tensor tanh(const Tensor& x) {
    return unary(
        x, "tanh", [](Scalar v) { return std::tanh(v); },
        [](const auto&, const auto& out) { return 1.0 - out.square(); });
}

Tensor exp(const Tensor& x) {
    return unary(
        x, "exp", [](Scalar v) { return std::exp(v); }, [](const auto&, const auto& out) { return out; });
}

Tensor sqrt(const Tensor& x) {
    return unary(
        x, "sqrt", [](Scalar v) { return std::sqrt(v); },
        [](const auto&, const auto& out) { return 0.5 / out; });
}

Tensor square(const Tensor& x) {
    return unary(
        x, "square", [](Scalar v) { return v * v; }, [](const auto& in, const auto&) { return 2.0 * in; });
}

Tensor add_scalar(const Tensor& x, Scalar c) {
    return unary(
        x, "add_scalar", [c](Scalar v) { return v + c; },
        [](const auto& in, const auto&) { return Eigen::ArrayXd::Ones(in.size()); });
}

Tensor mul_scalar(const Tensor& x, Scalar c) {
    return unary(
        x, "mul_scalar", [c](Scalar v) { return v * c; },
        [c](const auto& in, const auto&) { return Eigen::ArrayXd::Constant(in.size(), c); });
}

Tensor clamp(const Tensor& x, Scalar lo, Scalar hi) {
    return unary(
        x, "clamp", [lo, hi](Scalar v) { return std::min(std::max(v, lo), hi); },
        [lo, hi](const auto& in, const auto&) { return ((in >= lo) && (in <= hi)).template cast<Scalar>(); });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    }
    return make_result(std::move(shape), x.data(), "reshape", {x.node()},
                       [](Node& self) { self.parents[0]->ensure_grad() += self.grad; });
}

Tensor flatten(const Tensor& x) {
    if (x.rank() < 1) {
        throw ShapeError("flatten: scalar input");
    }
    const Index n = x.dim(0);
    return reshape(x, {n, n == 0 ? 0 : x.size() / n});
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    return make_result(a.shape(), a.data() + b.data(), "add", {a.node(), b.node()}, [](Node& self) {
        for (auto& p : self.parents) {
            if (p->requires_grad) {
                p->ensure_grad() += self.grad;
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    return make_result(a.shape(), a.data() - b.data(), "sub", {a.node(), b.node()}, [](Node& self) {
        if (self.parents[0]->requires_grad) {
            self.parents[0]->ensure_grad() += self.grad;
        }
        if (self.parents[1]->requires_grad) {
            self.parents[1]->ensure_grad() -= self.grad;
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Vector v = a.data().cwiseProduct(b.data());
    return make_result(a.shape(), std::move(v), "mul", {a.node(), b.node()}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad() += self.grad.cwiseProduct(pb.value);
        }
        if (pb.requires_grad) {
            pb.ensure_grad() += self.grad.cwiseProduct(pa.value);
        }
    });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "minimum");
    Vector v = a.data().cwiseMin(b.data());
    // Ties route the gradient to the first argument.
    return make_result(a.shape(), std::move(v), "minimum", {a.node(), b.node()}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const auto pick_a = (pa.value.array() <= pb.value.array()).cast<Scalar>();
        if (pa.requires_grad) {
            pa.ensure_grad().array() += self.grad.array() * pick_a;
        }
        if (pb.requires_grad) {
            pb.ensure_grad().array() += self.grad.array() * (1.0 - pick_a);
        }
    });
}

Tensor sum(const Tensor& x) {
    return make_result({}, Vector::Constant(1, x.data().sum()), "sum", {x.node()},
                       [](Node& self) { self.parents[0]->ensure_grad().array() += self.grad[0]; });
}

Tensor mean(const Tensor& x) {
    if (x.size() == 0) {
        throw ShapeError("mean: empty tensor");
    }
    const Scalar inv = 1.0 / static_cast<Scalar>(x.size());
    return make_result({}, Vector::Constant(1, x.data().sum() * inv), "mean", {x.node()},
                       [inv](Node& self) { self.parents[0]->ensure_grad().array() += self.grad[0] * inv; });
}

Tensor row_sum(const Tensor& x) {
    auto X = x.rows();
    const Index n = X.rows(), f = X.cols();
    Vector v = X.rowwise().sum();
    return make_result({n}, std::move(v), "row_sum", {x.node()}, [n, f](Node& self) {
        Eigen::Map<RowMatrix> dX(self.parents[0]->ensure_grad().data(), n, f);
        dX.colwise() += self.grad;
    });
}

Tensor row_mean(const Tensor& x) {
    auto X = x.rows();
    if (X.cols() == 0) {
        throw ShapeError("row_mean: zero-width rows");
    }
    return mul_scalar(row_sum(x), 1.0 / static_cast<Scalar>(X.cols()));
}

Tensor slice_rows(const Tensor& x, Index begin, Index count) {
    if (x.rank() < 1 || begin < 0 || count < 0 || begin + count > x.dim(0)) {
        throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + to_string(x.shape()));
    }
    const Index width = x.dim(0) == 0 ? 0 : x.size() / x.dim(0);
    Shape shape = x.shape();
    shape[0] = count;
    Vector v = x.data().segment(begin * width, count * width);
    return make_result(std::move(shape), std::move(v), "slice_rows", {x.node()}, [begin, width](Node& self) {
        self.parents[0]->ensure_grad().segment(begin * width, self.grad.size()) += self.grad;
    });
}

Tensor log_softmax(const Tensor& x) {
    require_rank(x, 2, "log_softmax");
    const Index n = x.dim(0), k = x.dim(1);
    Eigen::Map<const RowMatrix> X(x.data().data(), n, k);
    Vector value(n * k);
    Eigen::Map<RowMatrix> Y(value.data(), n, k);
    for (Index i = 0; i < n; ++i) {
        const Scalar mx = X.row(i).maxCoeff();
        const Scalar lse = mx + std::log((X.row(i).array() - mx).exp().sum());
        Y.row(i) = X.row(i).array() - lse;
    }
    return make_result({n, k}, std::move(value), "log_softmax", {x.node()}, [n, k](Node& self) {
        Eigen::Map<const RowMatrix> dY(self.grad.data(), n, k);
        Eigen::Map<const RowMatrix> Yv(self.value.data(), n, k);
        Eigen::Map<RowMatrix> dX(self.parents[0]->ensure_grad().data(), n, k);
        for (Index i = 0; i < n; ++i) {
            dX.row(i).array() += dY.row(i).array() - Yv.row(i).array().exp() * dY.row(i).sum();
        }
    });
}

Tensor gather(const Tensor& x, std::span<const int> index) {
    require_rank(x, 2, "gather");
    const Index n = x.dim(0), k = x.dim(1);
    if (static_cast<Index>(index.size()) != n) {
        throw ShapeError("gather: index length " + std::to_string(index.size()) + " vs rows " + std::to_string(n));
    }
    std::vector<int> idx(index.begin(), index.end());
    Vector v(n);
    for (Index i = 0; i < n; ++i) {
        if (idx[i] < 0 || idx[i] >= k) {
            throw ShapeError("gather: index " + std::to_string(idx[i]) + " out of range");
        }
        v[i] = x.data()[i * k + idx[i]];
    }
    return make_result({n}, std::move(v), "gather", {x.node()}, [idx = std::move(idx), k](Node& self) {
        Vector& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            g[static_cast<Index>(i) * k + idx[i]] += self.grad[static_cast<Index>(i)];
        }
    });
}

Tensor mse(const Tensor& prediction, const Tensor& target) {
    return mean(square(sub(prediction, target.detach())));
}

Scalar clip_grad_norm(std::span<Tensor> params, Scalar max_norm) {
    Scalar sq = 0;
    for (const auto& p : params) {
        if (p.has_grad()) {
            sq += p.grad().squaredNorm();
        }
    }
    const Scalar norm = std::sqrt(sq);
    if (!std::isfinite(norm)) {
        throw NumericError("clip_grad_norm: non-finite gradient norm");
    }
    if (norm > max_norm) {
        const Scalar scale = max_norm / (norm + 1e-6);
        for (auto& p : params) {
            if (p.has_grad()) {
                p.node()->grad *= scale;
            }
        }
    }
    return norm;
}

}  // namespace curio
