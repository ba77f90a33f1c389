#pragma once

// Minimal reverse-mode differentiation over dense double matrices.
//
// A Tape records operations in creation order, which is already a
// topological order, so backward() is a single reverse sweep. Parameters
// live outside the tape and receive accumulated gradients.

#include <Eigen/Dense>

#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dfat::ad {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    bool trainable = true;
    // Set when a tape routed a gradient into this parameter since the last zero_grad().
    bool touched = false;

    Parameter() = default;
    Parameter(std::string n, Matrix v, bool train = true)
        : name(std::move(n)), value(std::move(v)), trainable(train) {}

    void zero_grad() {
        grad.setZero(value.rows(), value.cols());
        touched = false;
    }
};

class Tape;

class Var {
public:
    Var() = default;
    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    bool valid() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int id() const { return id_; }

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    // Receives dL/d(output) and one slot per input; slots of inputs that do
    // not need a gradient are null.
    using Backward = std::function<void(const Matrix& out_grad, std::span<Matrix* const> in_grads)>;

    // When false, param() yields constants (inference mode).
    explicit Tape(bool track_params = true) : track_params_(track_params) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    Var leaf(Matrix value);
    Var param(Parameter& p);

    Var apply(std::initializer_list<Var> inputs, Matrix value, Backward backward);
    Var apply(std::span<const Var> inputs, Matrix value, Backward backward);

    // Seeds d(root)/d(root) = 1 (root must be 1x1) and sweeps backwards,
    // then accumulates parameter gradients.
    void backward(Var root);

    const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id_)].value; }
    // Gradient of the last backward() root with respect to v (zeros if unreached).
    Matrix grad(Var v) const;
    bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id_)].needs_grad; }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        bool has_grad = false;
        std::vector<int> inputs;
        Backward backward;
        Parameter* param = nullptr;
    };

    Var push(Node node);
    void check_owned(Var v) const;

    std::vector<Node> nodes_;
    bool track_params_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

// Elementwise / linear algebra.
Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
// Adds a 1 x n row to every row of a.
Var add_row(Var a, Var row);
Var scale(Var a, double s);
// Exact (erf-based) GELU.
Var gelu(Var a);
double gelu_value(double x);

// Row-wise layer normalisation with learned 1 x n gain and bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
// Row-wise softmax where row i only sees columns 0..i.
Var causal_softmax(Var scores);
// Rotary position embedding on consecutive column pairs; row r is position r.
Var rotary(Var x, double base = 10000.0);

// Row selection and pooling.
Var gather_rows(Var a, std::span<const int> rows);
Var mean_rows(Var a, std::span<const int> rows);
Var concat_rows(std::span<const Var> parts);
Var normalize_rows(Var a, double eps = 1e-12);

// Looks up rows from a two-part table: ids below base.rows() index base,
// the remainder index special.
Var embedding(Var base, Var special, std::span<const int> ids);

}  // namespace dfat::ad
