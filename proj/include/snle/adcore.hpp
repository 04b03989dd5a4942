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

#pragma once

// Reverse-mode automatic differentiation over dense rank-2 arrays.
//
// A Tape records every operation applied to its Vars. Calling backward() on a
// 1x1 result propagates adjoints to every trainable leaf. Broadcasting is
// limited to a (1 x n) right-hand operand against a (batch x n) left-hand one.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace snle::ad {

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill)
    {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix row(std::span<const double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row_span(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row_span(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool same_shape(const Matrix& other) const noexcept
    {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

std::string shape_string(const Matrix& m);

/// Named trainable arrays. Iteration order is by name, which keeps
/// optimizers and serialization deterministic.
class ParamSet {
public:
    void add(const std::string& name, Matrix value);
    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    Matrix& at(const std::string& name);
    const Matrix& at(const std::string& name) const;

    std::size_t count() const noexcept { return params_.size(); }
    std::size_t total_size() const noexcept;

    auto begin() noexcept { return params_.begin(); }
    auto end() noexcept { return params_.end(); }
    auto begin() const noexcept { return params_.begin(); }
    auto end() const noexcept { return params_.end(); }

    friend bool operator==(const ParamSet&, const ParamSet&) = default;

private:
    std::map<std::string, Matrix> params_;
};

using Gradients = std::map<std::string, Matrix>;

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Matrix& value() const;
    const Matrix& grad() const;
};

enum class Op {
    Leaf,
    MatMul,
    MaskedMatMul,
    Add,
    Sub,
    Mul,
    Neg,
    Scale,
    AddScalar,
    Tanh,
    Exp,
    Log,
    Softplus,
    Sum,
    Mean,
    RowSum,
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Constant leaf owning a copy of `value`.
    Var constant(Matrix value);
    /// Constant leaf viewing `value`; the caller keeps it alive for the tape's lifetime.
    Var constant_ref(const Matrix& value);
    /// Trainable leaf viewing `value`; gradients are reported under `name`.
    Var param(const std::string& name, const Matrix& value);

    /// Binds every entry of `params` as a trainable (or constant) leaf.
    std::map<std::string, Var> bind(const ParamSet& params, bool trainable);

    const Matrix& value(Var v) const;
    const Matrix& grad(Var v) const;

    /// Propagates d(loss)/d(node) to all nodes that depend on a trainable leaf.
    void backward(Var loss);

    /// Gradients of trainable leaves, keyed by parameter name.
    Gradients gradients() const;

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    friend Var record(Op op, std::initializer_list<Var> parents, Matrix value, double scalar);

    struct Node {
        Op op = Op::Leaf;
        std::size_t parents[3] = {0, 0, 0};
        std::size_t n_parents = 0;
        Matrix value;
        const Matrix* ref = nullptr;
        Matrix grad;
        double scalar = 0.0;
        bool trainable = false;
        bool needs_grad = false;
        std::string name;

        const Matrix& val() const { return ref != nullptr ? *ref : value; }
    };

    Var push(Node node);
    void propagate(std::size_t id);

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

Var matmul(Var a, Var b);
/// a * (w ⊙ mask): gradients with respect to w are masked too.
Var masked_matmul(Var a, Var w, Var mask);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var softplus(Var a);
/// Sum of all entries as a 1x1 node.
Var sum(Var a);
Var mean(Var a);
/// Per-row sum as a (rows x 1) node.
Var row_sum(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a) { return neg(a); }

using Bindings = std::map<std::string, Var>;
using GraphBuilder = std::function<Var(Tape&, const Bindings&)>;

/// A recorded graph together with its scalar output.
struct Graph {
    std::unique_ptr<Tape> tape;
    Var loss;

    double value() const { return loss.value()(0, 0); }
};

/// Runs `builder` on a fresh tape with `params` bound as trainable leaves.
Graph forward_eval(const GraphBuilder& builder, const ParamSet& params);

/// Backward pass from the graph's scalar output.
Gradients backward_grad(Graph& graph);

struct GradCheck {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
};

/// Compares analytic gradients with central finite differences. The error per
/// entry is |analytic - numeric| / (|analytic| + epsilon).
GradCheck check_grad(const GraphBuilder& builder, const ParamSet& params, double epsilon = 1e-6);

}  // namespace snle::ad
