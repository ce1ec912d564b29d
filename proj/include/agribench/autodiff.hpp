#pragma once

// Dense reverse-mode automatic differentiation over 64-bit tensors.
//
// A Tape records every operation executed on Vars in execution order, so the
// node list is topologically sorted by construction. backward() walks it once
// in reverse. Parameters live outside the tape; each forward pass links them
// in as leaf nodes and backward() accumulates into Parameter::grad.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "agribench/error.hpp"
#include "agribench/rng.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace agribench::ad {

/// Keeps large tensor buffers on the heap between tapes instead of returning
/// them to the OS after every step. Call once from main(); a no-op off glibc.
inline void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

class Tensor {
   public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(numel(shape_), fill) {}
    Tensor(Shape shape, std::span<const double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
        if (data_.size() != numel(shape_))
            throw std::invalid_argument("Tensor: data length does not match shape " + to_string(shape_));
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, v); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t last_dim() const { return shape_.empty() ? 1 : shape_.back(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    std::vector<double> to_vector() const { return {data_.begin(), data_.end()}; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double item() const {
        if (data_.size() != 1) throw std::invalid_argument("Tensor::item on non-scalar " + to_string(shape_));
        return data_[0];
    }

    bool all_finite() const {
        return Eigen::Map<const Eigen::ArrayXd>(data_.data(), static_cast<Eigen::Index>(data_.size())).isFinite().all();
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

   private:
    // Fixed alignment keeps vectorized reductions in the same order run to run.
    Shape shape_;
    std::vector<double, Eigen::aligned_allocator<double>> data_;
};

/// A trainable tensor with its gradient accumulator and Adam moments.
struct Parameter {
    Parameter(std::string n, Tensor init)
        : name(std::move(n)),
          value(std::move(init)),
          grad(value.shape()),
          m(value.shape()),
          v(value.shape()) {}

    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m;
    Tensor v;
};

/// Parameters in declaration order. References stay valid as the set grows.
class ParameterSet {
   public:
    Parameter& add(std::string name, Tensor init) { return params_.emplace_back(std::move(name), std::move(init)); }

    std::size_t size() const { return params_.size(); }
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    Parameter& operator[](std::size_t i) { return params_[i]; }
    const Parameter& operator[](std::size_t i) const { return params_[i]; }

    void zero_grad() {
        for (auto& p : params_) p.grad.fill(0.0);
    }

    std::vector<Tensor> snapshot() const {
        std::vector<Tensor> out;
        out.reserve(params_.size());
        for (const auto& p : params_) out.push_back(p.value);
        return out;
    }

    void restore(const std::vector<Tensor>& values) {
        if (values.size() != params_.size()) throw std::invalid_argument("ParameterSet::restore: count mismatch");
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (values[i].shape() != params_[i].value.shape())
                throw std::invalid_argument("ParameterSet::restore: shape mismatch for " + params_[i].name);
            params_[i].value = values[i];
        }
    }

   private:
    std::deque<Parameter> params_;
};

class Tape;

/// Handle to a node on a tape.
class Var {
   public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }

   private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
   public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value) {
        nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
        return {this, nodes_.size() - 1};
    }

    Var parameter(Parameter& p) {
        nodes_.push_back(Node{p.value, {}, {}, &p, true});
        return {this, nodes_.size() - 1};
    }

    /// Appends an op output. Its inputs must already be on this tape, which
    /// keeps the node list in topological order.
    Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward, const char* op) {
        bool needs = false;
        for (const Var& in : inputs) {
            if (&in.tape() != this || in.id() >= nodes_.size())
                throw std::invalid_argument(std::string(op) + ": input from a different tape");
            needs = needs || nodes_[in.id()].requires_grad;
        }
        return record_checked(std::move(value), needs, std::move(backward), op);
    }

    Var record(Tensor value, std::span<const Var> inputs, Backward backward, const char* op) {
        bool needs = false;
        for (const Var& in : inputs) {
            if (&in.tape() != this || in.id() >= nodes_.size())
                throw std::invalid_argument(std::string(op) + ": input from a different tape");
            needs = needs || nodes_[in.id()].requires_grad;
        }
        return record_checked(std::move(value), needs, std::move(backward), op);
    }

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Gradient buffer of a node, zero-allocated on first use.
    Tensor& grad(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
        return n.grad;
    }
    bool has_grad(std::size_t id) const { return nodes_[id].grad.size() == nodes_[id].value.size() && !nodes_[id].value.empty(); }

    std::size_t size() const { return nodes_.size(); }

    /// Reverse sweep from a scalar loss. Parameter gradients accumulate into
    /// Parameter::grad. A tape can be swept only once.
    void backward(Var loss) {
        if (consumed_) throw std::logic_error("backward: tape already consumed");
        if (&loss.tape() != this) throw std::invalid_argument("backward: loss from a different tape");
        if (loss.value().size() != 1) throw std::invalid_argument("backward: loss must be scalar, got " + to_string(loss.shape()));
        consumed_ = true;
        grad(loss.id())[0] = 1.0;
        for (std::size_t id = loss.id() + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (!n.requires_grad || !has_grad(id)) continue;
            if (n.backward) n.backward(*this, id);
            if (n.param != nullptr) {
                double* g = n.param->grad.data();
                const double* src = n.grad.data();
                for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += src[i];
            }
            if (id != loss.id()) n.grad = Tensor();  // no longer needed
        }
    }

    bool consumed() const { return consumed_; }

   private:
    struct Node {
        Tensor value;
        Tensor grad;
        Backward backward;
        Parameter* param = nullptr;
        bool requires_grad = false;
    };

    Var record_checked(Tensor value, bool needs, Backward backward, const char* op) {
        if (!value.all_finite()) throw NumericError(std::string(op) + ": non-finite output");
        nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, nullptr, needs});
        return {this, nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

inline MapMat mat(double* p, std::size_t r, std::size_t c) {
    return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}
inline ConstMapMat mat(const double* p, std::size_t r, std::size_t c) {
    return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}

inline bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

[[noreturn]] inline void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// a[..., m, k] x b[k, n] -> [..., m, n], or batched a[B.., m, k] x b[B.., k, n].
inline Var matmul(Var a, Var b) {
    using detail::mat;
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.empty() || sb.size() < 2) detail::shape_error("matmul", sa, sb);
    const std::size_t k = sa.back();
    if (sb[sb.size() - 2] != k) detail::shape_error("matmul", sa, sb);
    const std::size_t n = sb.back();
    Tape& tape = a.tape();

    if (sb.size() == 2) {
        const std::size_t rows = numel(sa) / k;
        Shape out_shape(sa.begin(), sa.end() - 1);
        out_shape.push_back(n);
        Tensor out(out_shape);
        mat(out.data(), rows, n).noalias() = mat(a.value().data(), rows, k) * mat(b.value().data(), k, n);
        const std::size_t ia = a.id(), ib = b.id();
        return tape.record(std::move(out), {a, b},
                           [ia, ib, rows, k, n](Tape& t, std::size_t self) {
                               const double* g = t.grad(self).data();
                               if (t.requires_grad(ia))
                                   mat(t.grad(ia).data(), rows, k).noalias() +=
                                       mat(g, rows, n) * mat(t.value(ib).data(), k, n).transpose();
                               if (t.requires_grad(ib))
                                   mat(t.grad(ib).data(), k, n).noalias() +=
                                       mat(t.value(ia).data(), rows, k).transpose() * mat(g, rows, n);
                           },
                           "matmul");
    }

    if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin())) detail::shape_error("matmul", sa, sb);
    const std::size_t m = sa[sa.size() - 2];
    const std::size_t batch = numel(sa) / (m * k);
    Shape out_shape(sa.begin(), sa.end() - 1);
    out_shape.push_back(n);
    Tensor out(out_shape);
    for (std::size_t bi = 0; bi < batch; ++bi)
        mat(out.data() + bi * m * n, m, n).noalias() =
            mat(a.value().data() + bi * m * k, m, k) * mat(b.value().data() + bi * k * n, k, n);
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record(std::move(out), {a, b},
                       [ia, ib, batch, m, k, n](Tape& t, std::size_t self) {
                           const double* g = t.grad(self).data();
                           const bool ga = t.requires_grad(ia), gb = t.requires_grad(ib);
                           double* da = ga ? t.grad(ia).data() : nullptr;
                           double* db = gb ? t.grad(ib).data() : nullptr;
                           const double* va = t.value(ia).data();
                           const double* vb = t.value(ib).data();
                           for (std::size_t bi = 0; bi < batch; ++bi) {
                               if (ga)
                                   mat(da + bi * m * k, m, k).noalias() +=
                                       mat(g + bi * m * n, m, n) * mat(vb + bi * k * n, k, n).transpose();
                               if (gb)
                                   mat(db + bi * k * n, k, n).noalias() +=
                                       mat(va + bi * m * k, m, k).transpose() * mat(g + bi * m * n, m, n);
                           }
                       },
                       "matmul");
}

/// x[..., k] W[k, n] + b[n] in one node.
inline Var linear(Var x, Var w, Var b) {
    using detail::mat;
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sx.empty() || sw.size() != 2 || sw[0] != sx.back() || b.shape() != Shape{sw[1]})
        detail::shape_error("linear", sx, sw);
    const std::size_t k = sw[0], n = sw[1], rows = numel(sx) / k;
    Shape out_shape(sx.begin(), sx.end() - 1);
    out_shape.push_back(n);
    Tensor out(out_shape);
    auto o = mat(out.data(), rows, n);
    o.noalias() = mat(x.value().data(), rows, k) * mat(w.value().data(), k, n);
    o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), static_cast<Eigen::Index>(n));
    const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
    return x.tape().record(std::move(out), {x, w, b},
                           [ix, iw, ib, rows, k, n](Tape& t, std::size_t self) {
                               const auto g = mat(t.grad(self).data(), rows, n);
                               if (t.requires_grad(ix))
                                   mat(t.grad(ix).data(), rows, k).noalias() += g * mat(t.value(iw).data(), k, n).transpose();
                               if (t.requires_grad(iw))
                                   mat(t.grad(iw).data(), k, n).noalias() += mat(t.value(ix).data(), rows, k).transpose() * g;
                               if (t.requires_grad(ib))
                                   Eigen::Map<Eigen::RowVectorXd>(t.grad(ib).data(), static_cast<Eigen::Index>(n)) +=
                                       g.colwise().sum();
                           },
                           "linear");
}

/// Swaps the last two axes.
inline Var transpose(Var a) {
    using detail::mat;
    const Shape& sa = a.shape();
    if (sa.size() < 2) throw std::invalid_argument("transpose: rank < 2");
    const std::size_t r = sa[sa.size() - 2], c = sa.back();
    const std::size_t batch = numel(sa) / (r * c);
    Shape out_shape = sa;
    std::swap(out_shape[sa.size() - 2], out_shape[sa.size() - 1]);
    Tensor out(out_shape);
    for (std::size_t bi = 0; bi < batch; ++bi)
        mat(out.data() + bi * r * c, c, r) = mat(a.value().data() + bi * r * c, r, c).transpose();
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a},
                           [ia, batch, r, c](Tape& t, std::size_t self) {
                               const double* g = t.grad(self).data();
                               double* d = t.grad(ia).data();
                               for (std::size_t bi = 0; bi < batch; ++bi)
                                   mat(d + bi * r * c, r, c) += mat(g + bi * r * c, c, r).transpose();
                           },
                           "transpose");
}

// ---------------------------------------------------------------------------
// Elementwise binary ops. The second operand may match a trailing suffix of
// the first operand's shape; it is then broadcast over the leading axes.
// ---------------------------------------------------------------------------

/// a + alpha * b
inline Var add_scaled(Var a, Var b, double alpha, const char* op = "add") {
    if (!detail::is_suffix(b.shape(), a.shape())) {
        if (alpha == 1.0 && detail::is_suffix(a.shape(), b.shape())) return add_scaled(b, a, 1.0, op);
        detail::shape_error(op, a.shape(), b.shape());
    }
    const std::size_t inner = b.value().size();
    const std::size_t outer = a.value().size() / std::max<std::size_t>(inner, 1);
    Tensor out = a.value();
    const double* vb = b.value().data();
    double* o = out.data();
    for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t i = 0; i < inner; ++i) o[r * inner + i] += alpha * vb[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b},
                           [ia, ib, inner, outer, alpha](Tape& t, std::size_t self) {
                               const double* g = t.grad(self).data();
                               if (t.requires_grad(ia)) {
                                   double* d = t.grad(ia).data();
                                   for (std::size_t i = 0; i < inner * outer; ++i) d[i] += g[i];
                               }
                               if (t.requires_grad(ib)) {
                                   double* d = t.grad(ib).data();
                                   for (std::size_t r = 0; r < outer; ++r)
                                       for (std::size_t i = 0; i < inner; ++i) d[i] += alpha * g[r * inner + i];
                               }
                           },
                           op);
}

inline Var add(Var a, Var b) { return add_scaled(a, b, 1.0, "add"); }
inline Var sub(Var a, Var b) { return add_scaled(a, b, -1.0, "sub"); }

/// Elementwise product with the same suffix broadcasting as add.
inline Var mul(Var a, Var b) {
    if (!detail::is_suffix(b.shape(), a.shape())) {
        if (detail::is_suffix(a.shape(), b.shape())) return mul(b, a);
        detail::shape_error("mul", a.shape(), b.shape());
    }
    const std::size_t inner = b.value().size();
    const std::size_t outer = a.value().size() / std::max<std::size_t>(inner, 1);
    Tensor out = a.value();
    const double* vb = b.value().data();
    double* o = out.data();
    for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t i = 0; i < inner; ++i) o[r * inner + i] *= vb[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b},
                           [ia, ib, inner, outer](Tape& t, std::size_t self) {
                               const double* g = t.grad(self).data();
                               const double* va = t.value(ia).data();
                               const double* vb = t.value(ib).data();
                               if (t.requires_grad(ia)) {
                                   double* d = t.grad(ia).data();
                                   for (std::size_t r = 0; r < outer; ++r)
                                       for (std::size_t i = 0; i < inner; ++i) d[r * inner + i] += g[r * inner + i] * vb[i];
                               }
                               if (t.requires_grad(ib)) {
                                   double* d = t.grad(ib).data();
                                   for (std::size_t r = 0; r < outer; ++r)
                                       for (std::size_t i = 0; i < inner; ++i) d[i] += g[r * inner + i] * va[r * inner + i];
                               }
                           },
                           "mul");
}

inline Var scale(Var a, double s) {
    Tensor out = a.value();
    for (auto& v : out.values()) v *= s;
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a},
                           [ia, s](Tape& t, std::size_t self) {
                               const Tensor& g = t.grad(self);
                               double* d = t.grad(ia).data();
                               for (std::size_t i = 0; i < g.size(); ++i) d[i] += s * g[i];
                           },
                           "scale");
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {

/// f maps x to y; df maps (x, y) to dy/dx.
template <typename F, typename DF>
Var unary(Var a, F f, DF df, const char* op) {
    Tensor out = a.value();
    for (auto& v : out.values()) v = f(v);
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a},
                       [ia, df](Tape& t, std::size_t self) {
                           const double* g = t.grad(self).data();
                           const double* x = t.value(ia).data();
                           const double* y = t.value(self).data();
                           double* d = t.grad(ia).data();
                           const std::size_t n = t.value(self).size();
                           for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * df(x[i], y[i]);
                       },
                       op);
}

}  // namespace detail

inline Var sin(Var a) {
    return detail::unary(a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); }, "sin");
}

inline Var exp(Var a) {
    return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; }, "exp");
}

inline Var sigmoid(Var a) {
    return detail::unary(
        a,
        [](double x) {
            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

inline Var tanh(Var a) {
    return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; }, "tanh");
}

inline Var relu(Var a) {
    return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; },
                         "relu");
}

// ---------------------------------------------------------------------------
// Last-axis ops
// ---------------------------------------------------------------------------

/// Softmax over the last axis with max subtraction.
inline Var softmax(Var a) {
    const std::size_t c = a.value().last_dim();
    const std::size_t rows = a.value().size() / c;
    Tensor out = a.value();
    double* o = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = o + r * c;
        const double mx = *std::max_element(row, row + c);
        double s = 0.0;
        for (std::size_t i = 0; i < c; ++i) s += (row[i] = std::exp(row[i] - mx));
        for (std::size_t i = 0; i < c; ++i) row[i] /= s;
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a},
                           [ia, rows, c](Tape& t, std::size_t self) {
                               const double* g = t.grad(self).data();
                               const double* y = t.value(self).data();
                               double* d = t.grad(ia).data();
                               for (std::size_t r = 0; r < rows; ++r) {
                                   double dot = 0.0;
                                   for (std::size_t i = 0; i < c; ++i) dot += g[r * c + i] * y[r * c + i];
                                   for (std::size_t i = 0; i < c; ++i) d[r * c + i] += y[r * c + i] * (g[r * c + i] - dot);
                               }
                           },
                           "softmax");
}

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes the last axis to zero mean and unit (biased) variance, then
/// applies gamma * xhat + beta.
inline Var layer_norm(Var x, Var gamma, Var beta, double eps = kLayerNormEps) {
    const std::size_t c = x.value().last_dim();
    if (gamma.value().shape() != Shape{c} || beta.value().shape() != Shape{c})
        detail::shape_error("layer_norm", x.shape(), gamma.shape());
    const std::size_t rows = x.value().size() / c;
    Tensor out(x.shape());
    auto xhat = std::make_shared<std::vector<double>>(x.value().size());
    auto rstd = std::make_shared<std::vector<double>>(rows);
    const double* in = x.value().data();
    const double* gm = gamma.value().data();
    const double* bt = beta.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        double mu = 0.0;
        for (std::size_t i = 0; i < c; ++i) mu += in[r * c + i];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t i = 0; i < c; ++i) var += (in[r * c + i] - mu) * (in[r * c + i] - mu);
        var /= static_cast<double>(c);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t i = 0; i < c; ++i) {
            const double h = (in[r * c + i] - mu) * rs;
            (*xhat)[r * c + i] = h;
            out[r * c + i] = gm[i] * h + bt[i];
        }
    }
    const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
    return x.tape().record(std::move(out), {x, gamma, beta},
                           [ix, ig, ib, rows, c, xhat, rstd](Tape& t, std::size_t self) {
                               const double* g = t.grad(self).data();
                               const double* gm = t.value(ig).data();
                               const double* h = xhat->data();
                               if (t.requires_grad(ig)) {
                                   double* dg = t.grad(ig).data();
                                   for (std::size_t r = 0; r < rows; ++r)
                                       for (std::size_t i = 0; i < c; ++i) dg[i] += g[r * c + i] * h[r * c + i];
                               }
                               if (t.requires_grad(ib)) {
                                   double* db = t.grad(ib).data();
                                   for (std::size_t r = 0; r < rows; ++r)
                                       for (std::size_t i = 0; i < c; ++i) db[i] += g[r * c + i];
                               }
                               if (t.requires_grad(ix)) {
                                   double* dx = t.grad(ix).data();
                                   const double fc = static_cast<double>(c);
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       double sum_dh = 0.0, sum_dh_h = 0.0;
                                       for (std::size_t i = 0; i < c; ++i) {
                                           const double dh = g[r * c + i] * gm[i];
                                           sum_dh += dh;
                                           sum_dh_h += dh * h[r * c + i];
                                       }
                                       const double rs = (*rstd)[r];
                                       for (std::size_t i = 0; i < c; ++i) {
                                           const double dh = g[r * c + i] * gm[i];
                                           dx[r * c + i] += rs / fc * (fc * dh - sum_dh - h[r * c + i] * sum_dh_h);
                                       }
                                   }
                               }
                           },
                           "layer_norm");
}

/// Inverted dropout: zeroes each element with probability p and scales the
/// survivors by 1/(1-p). Identity (no node recorded) when p == 0 or rng is null.
inline Var dropout(Var a, double p, Rng* rng) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: probability must be in [0, 1)");
    if (p == 0.0 || rng == nullptr) return a;
    const double keep_scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(a.value().size());
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        (*mask)[i] = rng->uniform() < p ? 0.0 : keep_scale;
        out[i] *= (*mask)[i];
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a},
                           [ia, mask](Tape& t, std::size_t self) {
                               const double* g = t.grad(self).data();
                               double* d = t.grad(ia).data();
                               for (std::size_t i = 0; i < mask->size(); ++i) d[i] += g[i] * (*mask)[i];
                           },
                           "dropout");
}

/// Concatenates along the last axis; all leading dims must agree.
inline Var concat(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (s0.empty()) throw std::invalid_argument("concat: scalar input");
    const std::size_t rows = parts[0].value().size() / s0.back();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Var& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size() || !std::equal(s.begin(), s.end() - 1, s0.begin())) detail::shape_error("concat", s0, s);
        widths.push_back(s.back());
        total += s.back();
    }
    Shape out_shape = s0;
    out_shape.back() = total;
    Tensor out(out_shape);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const double* src = parts[k].value().data();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(src + r * widths[k], widths[k], out.data() + r * total + offset);
        offset += widths[k];
    }
    std::vector<std::size_t> ids;
    for (const Var& p : parts) ids.push_back(p.id());
    return parts[0].tape().record(std::move(out), parts,
                                  [ids, widths, rows, total](Tape& t, std::size_t self) {
                                      const double* g = t.grad(self).data();
                                      std::size_t offset = 0;
                                      for (std::size_t k = 0; k < ids.size(); ++k) {
                                          if (t.requires_grad(ids[k])) {
                                              double* d = t.grad(ids[k]).data();
                                              for (std::size_t r = 0; r < rows; ++r)
                                                  for (std::size_t i = 0; i < widths[k]; ++i)
                                                      d[r * widths[k] + i] += g[r * total + offset + i];
                                          }
                                          offset += widths[k];
                                      }
                                  },
                                  "concat");
}

inline Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

/// Columns [begin, end) of the last axis.
inline Var slice(Var a, std::size_t begin, std::size_t end) {
    const Shape& sa = a.shape();
    if (sa.empty() || begin >= end || end > sa.back())
        throw std::invalid_argument("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
                                    to_string(sa));
    const std::size_t c = sa.back(), w = end - begin;
    const std::size_t rows = a.value().size() / c;
    Shape out_shape = sa;
    out_shape.back() = w;
    Tensor out(out_shape);
    const double* src = a.value().data();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(src + r * c + begin, w, out.data() + r * w);
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a},
                           [ia, rows, c, w, begin](Tape& t, std::size_t self) {
                               const double* g = t.grad(self).data();
                               double* d = t.grad(ia).data();
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t i = 0; i < w; ++i) d[r * c + begin + i] += g[r * w + i];
                           },
                           "slice");
}

/// Same data, new shape with equal element count.
inline Var reshape(Var a, Shape shape) {
    if (numel(shape) != a.value().size()) detail::shape_error("reshape", a.shape(), shape);
    Tensor out(std::move(shape), a.value().values());
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a},
                           [ia](Tape& t, std::size_t self) {
                               const Tensor& g = t.grad(self);
                               double* d = t.grad(ia).data();
                               for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                           },
                           "reshape");
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

inline Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    const std::size_t ia = a.id();
    return a.tape().record(Tensor::scalar(s), {a},
                           [ia](Tape& t, std::size_t self) {
                               const double g = t.grad(self)[0];
                               for (auto& d : t.grad(ia).values()) d += g;
                           },
                           "sum");
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Mean over elements of 0.5 r^2 for |r| <= delta, delta (|r| - delta / 2) beyond.
inline Var huber_loss(Var pred, Var target, double delta = 1.0) {
    if (pred.shape() != target.shape()) detail::shape_error("huber_loss", pred.shape(), target.shape());
    const std::size_t n = pred.value().size();
    if (n == 0) throw std::invalid_argument("huber_loss: empty input");
    const double* p = pred.value().data();
    const double* y = target.value().data();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = std::abs(p[i] - y[i]);
        total += r <= delta ? 0.5 * r * r : delta * (r - 0.5 * delta);
    }
    const std::size_t ip = pred.id(), iy = target.id();
    return pred.tape().record(Tensor::scalar(total / static_cast<double>(n)), {pred, target},
                              [ip, iy, n, delta](Tape& t, std::size_t self) {
                                  const double g = t.grad(self)[0] / static_cast<double>(n);
                                  const double* p = t.value(ip).data();
                                  const double* y = t.value(iy).data();
                                  const bool gp = t.requires_grad(ip), gy = t.requires_grad(iy);
                                  double* dp = gp ? t.grad(ip).data() : nullptr;
                                  double* dy = gy ? t.grad(iy).data() : nullptr;
                                  for (std::size_t i = 0; i < n; ++i) {
                                      const double r = p[i] - y[i];
                                      const double dr = std::abs(r) <= delta ? r : (r > 0 ? delta : -delta);
                                      if (gp) dp[i] += g * dr;
                                      if (gy) dy[i] -= g * dr;
                                  }
                              },
                              "huber_loss");
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Bias-corrected Adam over a ParameterSet's accumulated gradients.
class Adam {
   public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }
    std::size_t steps() const { return step_; }

    void step(ParameterSet& params) {
        for (const auto& p : params)
            if (!p.grad.all_finite()) throw NumericError("adam_step: non-finite gradient in " + p.name);
        ++step_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (auto& p : params) {
            if (p.m.shape() != p.value.shape() || p.grad.shape() != p.value.shape())
                throw std::invalid_argument("adam_step: state shape mismatch for " + p.name);
            double* w = p.value.data();
            double* m = p.m.data();
            double* v = p.v.data();
            const double* g = p.grad.data();
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
                const double mhat = m[i] / c1;
                const double vhat = v[i] / c2;
                w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

   private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

inline Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = rng.uniform(-bound, bound);
    return t;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradientCheck {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

/// Compares reverse-mode gradients of `loss` with central differences over
/// every scalar of every parameter. `loss` builds the full forward pass on the
/// tape it is given and must be deterministic across calls (reseed any
/// dropout generator inside it). Relative error is |a - n| / max(|a|, |n|, floor).
inline GradientCheck check_gradients(ParameterSet& params, const std::function<Var(Tape&)>& loss, double eps = 1e-5,
                                     double floor = 1e-6) {
    params.zero_grad();
    {
        Tape tape;
        tape.backward(loss(tape));
    }
    const auto eval = [&] {
        Tape tape;
        return loss(tape).value().item();
    };
    GradientCheck out;
    for (auto& p : params) {
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double orig = p.value[i];
            p.value[i] = orig + eps;
            const double up = eval();
            p.value[i] = orig - eps;
            const double down = eval();
            p.value[i] = orig;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = p.grad[i];
            const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
            ++out.checked;
            if (rel > out.max_rel_error) {
                out.max_rel_error = rel;
                out.worst_param = p.name;
                out.worst_index = i;
            }
        }
    }
    return out;
}

}  // namespace agribench::ad
