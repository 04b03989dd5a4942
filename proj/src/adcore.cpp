/*
 * Copyright 2026 The snle-evidence Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "snle/adcore.hpp"

#include <cmath>
#include <sstream>
#include <utility>

#include "snle/errors.hpp"

namespace snle::ad {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data))
{
    if (data_.size() != rows_ * cols_) {
        throw DimensionError("matrix data has " + std::to_string(data_.size()) + " entries, expected " +
                             std::to_string(rows_ * cols_));
    }
}

Matrix Matrix::row(std::span<const double> values)
{
    return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

std::string shape_string(const Matrix& m)
{
    std::ostringstream os;
    os << "(" << m.rows() << "x" << m.cols() << ")";
    return os.str();
}

void ParamSet::add(const std::string& name, Matrix value)
{
    if (!params_.emplace(name, std::move(value)).second) {
        throw UsageError("duplicate parameter name '" + name + "'");
    }
}

Matrix& ParamSet::at(const std::string& name)
{
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw UsageError("unknown parameter '" + name + "'");
    }
    return it->second;
}

const Matrix& ParamSet::at(const std::string& name) const
{
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw UsageError("unknown parameter '" + name + "'");
    }
    return it->second;
}

std::size_t ParamSet::total_size() const noexcept
{
    std::size_t n = 0;
    for (const auto& [_, m] : params_) {
        n += m.size();
    }
    return n;
}

const Matrix& Var::value() const { return tape->value(*this); }
const Matrix& Var::grad() const { return tape->grad(*this); }

Var Tape::push(Node node)
{
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Matrix value)
{
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::constant_ref(const Matrix& value)
{
    Node n;
    n.ref = &value;
    return push(std::move(n));
}

Var Tape::param(const std::string& name, const Matrix& value)
{
    Node n;
    n.ref = &value;
    n.trainable = true;
    n.needs_grad = true;
    n.name = name;
    return push(std::move(n));
}

std::map<std::string, Var> Tape::bind(const ParamSet& params, bool trainable)
{
    std::map<std::string, Var> out;
    for (const auto& [name, m] : params) {
        out.emplace(name, trainable ? param(name, m) : constant_ref(m));
    }
    return out;
}

const Matrix& Tape::value(Var v) const { return nodes_.at(v.id).val(); }

const Matrix& Tape::grad(Var v) const
{
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty() && !n.val().empty()) {
        throw UsageError("no gradient recorded for node " + std::to_string(v.id));
    }
    return n.grad;
}

namespace {

void require_same_tape(std::initializer_list<Var> vars)
{
    Tape* t = vars.begin()->tape;
    for (const Var& v : vars) {
        if (v.tape == nullptr || v.tape != t) {
            throw UsageError("operands belong to different tapes");
        }
    }
}

// Result shape of an elementwise binary op, honoring (1 x n) broadcasting of b.
void check_broadcast(const Matrix& a, const Matrix& b, const char* op)
{
    if (a.same_shape(b)) {
        return;
    }
    if (b.rows() == 1 && b.cols() == a.cols()) {
        return;
    }
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

template <typename F>
Matrix elementwise(const Matrix& a, F f)
{
    Matrix out(a.rows(), a.cols());
    const auto& in = a.data();
    auto& o = out.data();
    for (std::size_t i = 0; i < in.size(); ++i) {
        o[i] = f(in[i]);
    }
    return out;
}

template <typename F>
Matrix broadcast_binary(const Matrix& a, const Matrix& b, F f)
{
    Matrix out(a.rows(), a.cols());
    const bool bc = !a.same_shape(b);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const std::size_t br = bc ? 0 : r;
        for (std::size_t c = 0; c < a.cols(); ++c) {
            out(r, c) = f(a(r, c), b(br, c));
        }
    }
    return out;
}

void matmul_into(const Matrix& a, const Matrix& w, Matrix& out)
{
    const std::size_t n = a.cols();
    const std::size_t m = w.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* orow = out.data().data() + i * m;
        const double* arow = a.data().data() + i * n;
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) {
                continue;
            }
            const double* wrow = w.data().data() + k * m;
            for (std::size_t j = 0; j < m; ++j) {
                orow[j] += aik * wrow[j];
            }
        }
    }
}

Matrix masked_weight(const Matrix& w, const Matrix& mask)
{
    Matrix eff(w.rows(), w.cols());
    for (std::size_t i = 0; i < w.size(); ++i) {
        eff.data()[i] = w.data()[i] * mask.data()[i];
    }
    return eff;
}

double softplus_scalar(double x)
{
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

void accumulate(Matrix& target, const Matrix& delta)
{
    if (target.empty()) {
        target = delta;
        return;
    }
    for (std::size_t i = 0; i < delta.size(); ++i) {
        target.data()[i] += delta.data()[i];
    }
}

// Gradient of a broadcast operand: sum over rows when b was (1 x n).
Matrix reduce_to(const Matrix& g, const Matrix& shape)
{
    if (g.same_shape(shape)) {
        return g;
    }
    Matrix out(1, g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) {
            out(0, c) += g(r, c);
        }
    }
    return out;
}

}  // namespace

Var record(Op op, std::initializer_list<Var> parents, Matrix value, double scalar)
{
    Tape* tape = parents.begin()->tape;
    Tape::Node n;
    n.op = op;
    n.value = std::move(value);
    n.scalar = scalar;
    for (const Var& p : parents) {
        n.parents[n.n_parents++] = p.id;
        n.needs_grad = n.needs_grad || tape->nodes_[p.id].needs_grad;
    }
    return tape->push(std::move(n));
}

Var matmul(Var a, Var b)
{
    require_same_tape({a, b});
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.cols() != bv.rows()) {
        throw DimensionError("matmul: shape mismatch " + shape_string(av) + " vs " + shape_string(bv));
    }
    Matrix out(av.rows(), bv.cols());
    matmul_into(av, bv, out);
    return record(Op::MatMul, {a, b}, std::move(out), 0.0);
}

Var masked_matmul(Var a, Var w, Var mask)
{
    require_same_tape({a, w, mask});
    const Matrix& av = a.value();
    const Matrix& wv = w.value();
    const Matrix& mv = mask.value();
    if (av.cols() != wv.rows() || !wv.same_shape(mv)) {
        throw DimensionError("masked_matmul: shape mismatch " + shape_string(av) + " x " + shape_string(wv) +
                             " mask " + shape_string(mv));
    }
    Matrix out(av.rows(), wv.cols());
    matmul_into(av, masked_weight(wv, mv), out);
    return record(Op::MaskedMatMul, {a, w, mask}, std::move(out), 0.0);
}

Var add(Var a, Var b)
{
    require_same_tape({a, b});
    check_broadcast(a.value(), b.value(), "add");
    return record(Op::Add, {a, b}, broadcast_binary(a.value(), b.value(), [](double x, double y) { return x + y; }),
                  0.0);
}

Var sub(Var a, Var b)
{
    require_same_tape({a, b});
    check_broadcast(a.value(), b.value(), "sub");
    return record(Op::Sub, {a, b}, broadcast_binary(a.value(), b.value(), [](double x, double y) { return x - y; }),
                  0.0);
}

Var mul(Var a, Var b)
{
    require_same_tape({a, b});
    check_broadcast(a.value(), b.value(), "mul");
    return record(Op::Mul, {a, b}, broadcast_binary(a.value(), b.value(), [](double x, double y) { return x * y; }),
                  0.0);
}

Var neg(Var a)
{
    return record(Op::Neg, {a}, elementwise(a.value(), [](double x) { return -x; }), 0.0);
}

Var scale(Var a, double c)
{
    return record(Op::Scale, {a}, elementwise(a.value(), [c](double x) { return c * x; }), c);
}

Var add_scalar(Var a, double c)
{
    return record(Op::AddScalar, {a}, elementwise(a.value(), [c](double x) { return x + c; }), c);
}

Var tanh(Var a)
{
    return record(Op::Tanh, {a}, elementwise(a.value(), [](double x) { return std::tanh(x); }), 0.0);
}

Var exp(Var a)
{
    Matrix out = elementwise(a.value(), [](double x) { return std::exp(x); });
    for (double v : out.data()) {
        if (!std::isfinite(v)) {
            throw DomainError("exp: overflow");
        }
    }
    return record(Op::Exp, {a}, std::move(out), 0.0);
}

Var log(Var a)
{
    for (double v : a.value().data()) {
        if (!(v > 0.0)) {
            throw DomainError("log: non-positive argument " + std::to_string(v));
        }
    }
    return record(Op::Log, {a}, elementwise(a.value(), [](double x) { return std::log(x); }), 0.0);
}

Var softplus(Var a)
{
    return record(Op::Softplus, {a}, elementwise(a.value(), softplus_scalar), 0.0);
}

Var sum(Var a)
{
    double s = 0.0;
    for (double v : a.value().data()) {
        s += v;
    }
    return record(Op::Sum, {a}, Matrix(1, 1, s), 0.0);
}

Var mean(Var a)
{
    const Matrix& av = a.value();
    if (av.empty()) {
        throw DimensionError("mean of empty array");
    }
    double s = 0.0;
    for (double v : av.data()) {
        s += v;
    }
    return record(Op::Mean, {a}, Matrix(1, 1, s / static_cast<double>(av.size())), 0.0);
}

Var row_sum(Var a)
{
    const Matrix& av = a.value();
    Matrix out(av.rows(), 1);
    for (std::size_t r = 0; r < av.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < av.cols(); ++c) {
            s += av(r, c);
        }
        out(r, 0) = s;
    }
    return record(Op::RowSum, {a}, std::move(out), 0.0);
}

void Tape::backward(Var loss)
{
    if (loss.tape != this) {
        throw UsageError("backward: loss belongs to another tape");
    }
    const Matrix& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
        throw UsageError("backward requires a scalar node, got " + shape_string(lv));
    }
    if (backward_done_) {
        throw UsageError("backward already run on this graph");
    }
    backward_done_ = true;

    for (auto& n : nodes_) {
        if (n.needs_grad) {
            n.grad = Matrix(n.val().rows(), n.val().cols());
        }
    }
    if (!nodes_[loss.id].needs_grad) {
        return;
    }
    nodes_[loss.id].grad(0, 0) = 1.0;
    // Nodes are recorded in topological order.
    for (std::size_t id = loss.id + 1; id-- > 0;) {
        if (nodes_[id].needs_grad && nodes_[id].op != Op::Leaf) {
            propagate(id);
        }
    }
}

void Tape::propagate(std::size_t id)
{
    Node& n = nodes_[id];
    const Matrix& g = n.grad;
    auto parent = [&](std::size_t k) -> Node& { return nodes_[n.parents[k]]; };

    switch (n.op) {
    case Op::Leaf:
        break;
    case Op::MatMul:
    case Op::MaskedMatMul: {
        Node& a = parent(0);
        Node& w = parent(1);
        const Matrix& av = a.val();
        const bool masked = n.op == Op::MaskedMatMul;
        const Matrix wv = masked ? masked_weight(w.val(), parent(2).val()) : w.val();
        const std::size_t rows = av.rows();
        const std::size_t inner = av.cols();
        const std::size_t cols = wv.cols();
        if (a.needs_grad) {
            for (std::size_t i = 0; i < rows; ++i) {
                for (std::size_t k = 0; k < inner; ++k) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) {
                        s += g(i, j) * wv(k, j);
                    }
                    a.grad(i, k) += s;
                }
            }
        }
        if (w.needs_grad) {
            const Matrix* mask = masked ? &parent(2).val() : nullptr;
            Matrix dw(inner, cols);
            for (std::size_t i = 0; i < rows; ++i) {
                for (std::size_t k = 0; k < inner; ++k) {
                    const double aik = av(i, k);
                    if (aik == 0.0) {
                        continue;
                    }
                    for (std::size_t j = 0; j < cols; ++j) {
                        dw(k, j) += aik * g(i, j);
                    }
                }
            }
            if (mask != nullptr) {
                for (std::size_t i = 0; i < dw.size(); ++i) {
                    dw.data()[i] *= mask->data()[i];
                }
            }
            accumulate(w.grad, dw);
        }
        break;
    }
    case Op::Add:
    case Op::Sub: {
        Node& a = parent(0);
        Node& b = parent(1);
        if (a.needs_grad) {
            accumulate(a.grad, g);
        }
        if (b.needs_grad) {
            Matrix gb = reduce_to(g, b.val());
            if (n.op == Op::Sub) {
                for (double& v : gb.data()) {
                    v = -v;
                }
            }
            accumulate(b.grad, gb);
        }
        break;
    }
    case Op::Mul: {
        Node& a = parent(0);
        Node& b = parent(1);
        const Matrix& av = a.val();
        const Matrix& bv = b.val();
        const bool bc = !av.same_shape(bv);
        if (a.needs_grad) {
            for (std::size_t r = 0; r < g.rows(); ++r) {
                for (std::size_t c = 0; c < g.cols(); ++c) {
                    a.grad(r, c) += g(r, c) * bv(bc ? 0 : r, c);
                }
            }
        }
        if (b.needs_grad) {
            Matrix gb(g.rows(), g.cols());
            for (std::size_t r = 0; r < g.rows(); ++r) {
                for (std::size_t c = 0; c < g.cols(); ++c) {
                    gb(r, c) = g(r, c) * av(r, c);
                }
            }
            accumulate(b.grad, reduce_to(gb, bv));
        }
        break;
    }
    case Op::Neg:
    case Op::Scale: {
        Node& a = parent(0);
        if (a.needs_grad) {
            const double c = n.op == Op::Neg ? -1.0 : n.scalar;
            for (std::size_t i = 0; i < g.size(); ++i) {
                a.grad.data()[i] += c * g.data()[i];
            }
        }
        break;
    }
    case Op::AddScalar: {
        Node& a = parent(0);
        if (a.needs_grad) {
            accumulate(a.grad, g);
        }
        break;
    }
    case Op::Tanh:
    case Op::Exp:
    case Op::Log:
    case Op::Softplus: {
        Node& a = parent(0);
        if (!a.needs_grad) {
            break;
        }
        const auto& x = a.val().data();
        const auto& y = n.value.data();
        auto& ga = a.grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            double d = 0.0;
            switch (n.op) {
            case Op::Tanh: d = 1.0 - y[i] * y[i]; break;
            case Op::Exp: d = y[i]; break;
            case Op::Log: d = 1.0 / x[i]; break;
            default: d = 1.0 / (1.0 + std::exp(-x[i])); break;
            }
            ga[i] += d * g.data()[i];
        }
        break;
    }
    case Op::Sum:
    case Op::Mean: {
        Node& a = parent(0);
        if (a.needs_grad) {
            const double s = n.op == Op::Sum ? g(0, 0) : g(0, 0) / static_cast<double>(a.val().size());
            for (double& v : a.grad.data()) {
                v += s;
            }
        }
        break;
    }
    case Op::RowSum: {
        Node& a = parent(0);
        if (a.needs_grad) {
            for (std::size_t r = 0; r < a.grad.rows(); ++r) {
                for (std::size_t c = 0; c < a.grad.cols(); ++c) {
                    a.grad(r, c) += g(r, 0);
                }
            }
        }
        break;
    }
    }
}

Gradients Tape::gradients() const
{
    if (!backward_done_) {
        throw UsageError("gradients requested before backward");
    }
    Gradients out;
    for (const auto& n : nodes_) {
        if (!n.trainable) {
            continue;
        }
        auto it = out.find(n.name);
        if (it == out.end()) {
            out.emplace(n.name, n.grad);
        } else {
            accumulate(it->second, n.grad);
        }
    }
    return out;
}

Graph forward_eval(const GraphBuilder& builder, const ParamSet& params)
{
    Graph g;
    g.tape = std::make_unique<Tape>();
    Bindings b = g.tape->bind(params, true);
    g.loss = builder(*g.tape, b);
    if (g.loss.tape != g.tape.get()) {
        throw UsageError("graph builder returned a node from another tape");
    }
    return g;
}

Gradients backward_grad(Graph& graph)
{
    graph.tape->backward(graph.loss);
    return graph.tape->gradients();
}

GradCheck check_grad(const GraphBuilder& builder, const ParamSet& params, double epsilon)
{
    if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) {
        throw ConfigError("check_grad: epsilon outside [1e-6, 1e-3]");
    }
    GradCheck result;
    if (params.count() == 0) {
        return result;
    }

    Graph g = forward_eval(builder, params);
    if (!std::isfinite(g.value())) {
        throw NumericError("check_grad: non-finite loss");
    }
    const Gradients analytic = backward_grad(g);

    ParamSet probe = params;
    auto eval = [&]() {
        Graph pg = forward_eval(builder, probe);
        const double v = pg.value();
        if (!std::isfinite(v)) {
            throw NumericError("check_grad: non-finite loss under perturbation");
        }
        return v;
    };

    for (auto& [name, m] : probe) {
        const auto it = analytic.find(name);
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double orig = m.data()[i];
            m.data()[i] = orig + epsilon;
            const double up = eval();
            m.data()[i] = orig - epsilon;
            const double down = eval();
            m.data()[i] = orig;
            const double numeric = (up - down) / (2.0 * epsilon);
            const double a = it == analytic.end() ? 0.0 : it->second.data()[i];
            const double err = std::abs(a - numeric) / (std::abs(a) + epsilon);
            if (err > result.max_rel_error) {
                result.max_rel_error = err;
                result.worst_param = name;
                result.worst_index = i;
            }
        }
    }
    return result;
}

}  // namespace snle::ad
