#include "dfat/autograd.hpp"

#include "dfat/errors.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace dfat::ad {

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::check_owned(Var v) const {
    if (v.tape_ != this || v.id_ < 0 || static_cast<std::size_t>(v.id_) >= nodes_.size()) {
        throw ConfigError("autograd: variable does not belong to this tape");
    }
}

Var Tape::constant(Matrix value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::leaf(Matrix value) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = true;
    return push(std::move(n));
}

Var Tape::param(Parameter& p) {
    Node n;
    n.value = p.value;
    if (track_params_ && p.trainable) {
        n.needs_grad = true;
        n.param = &p;
    }
    return push(std::move(n));
}

Var Tape::apply(std::initializer_list<Var> inputs, Matrix value, Backward backward) {
    return apply(std::span<const Var>(inputs.begin(), inputs.size()), std::move(value), std::move(backward));
}

Var Tape::apply(std::span<const Var> inputs, Matrix value, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.inputs.reserve(inputs.size());
    for (const Var& in : inputs) {
        check_owned(in);
        n.inputs.push_back(in.id_);
        n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(in.id_)].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(backward);
    return push(std::move(n));
}

void Tape::backward(Var root) {
    check_owned(root);
    Node& r = nodes_[static_cast<std::size_t>(root.id_)];
    if (r.value.rows() != 1 || r.value.cols() != 1) {
        throw ConfigError("autograd: backward() requires a scalar root");
    }
    for (Node& n : nodes_) {
        n.grad.resize(0, 0);
        n.has_grad = false;
    }
    r.grad = Matrix::Ones(1, 1);
    r.has_grad = true;

    std::vector<Matrix*> slots;
    for (int id = root.id_; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.has_grad || !n.backward) continue;
        slots.assign(n.inputs.size(), nullptr);
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            Node& in = nodes_[static_cast<std::size_t>(n.inputs[k])];
            if (!in.needs_grad) continue;
            if (!in.has_grad) {
                in.grad.setZero(in.value.rows(), in.value.cols());
                in.has_grad = true;
            }
            slots[k] = &in.grad;
        }
        n.backward(n.grad, slots);
    }

    for (Node& n : nodes_) {
        if (n.param == nullptr || !n.has_grad) continue;
        Parameter& p = *n.param;
        if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
            p.grad.setZero(p.value.rows(), p.value.cols());
        }
        p.grad += n.grad;
        p.touched = true;
    }
}

Matrix Tape::grad(Var v) const {
    check_owned(v);
    const Node& n = nodes_[static_cast<std::size_t>(v.id_)];
    if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

namespace {

void require(bool cond, const char* what) {
    if (!cond) throw ConfigError(std::string("autograd: ") + what);
}

}  // namespace

Var matmul(Var a, Var b) {
    require(a.cols() == b.rows(), "matmul shape mismatch");
    Matrix out = a.value() * b.value();
    return a.tape()->apply({a, b}, std::move(out), [av = a.value(), bv = b.value()](const Matrix& g, std::span<Matrix* const> in) {
        if (in[0]) in[0]->noalias() += g * bv.transpose();
        if (in[1]) in[1]->noalias() += av.transpose() * g;
    });
}

Var matmul_nt(Var a, Var b) {
    require(a.cols() == b.cols(), "matmul_nt shape mismatch");
    Matrix out = a.value() * b.value().transpose();
    return a.tape()->apply({a, b}, std::move(out), [av = a.value(), bv = b.value()](const Matrix& g, std::span<Matrix* const> in) {
        if (in[0]) in[0]->noalias() += g * bv;
        if (in[1]) in[1]->noalias() += g.transpose() * av;
    });
}

Var add(Var a, Var b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "add shape mismatch");
    Matrix out = a.value() + b.value();
    return a.tape()->apply({a, b}, std::move(out), [](const Matrix& g, std::span<Matrix* const> in) {
        if (in[0]) *in[0] += g;
        if (in[1]) *in[1] += g;
    });
}

Var add_row(Var a, Var row) {
    require(row.rows() == 1 && row.cols() == a.cols(), "add_row shape mismatch");
    Matrix out = a.value().rowwise() + row.value().row(0);
    return a.tape()->apply({a, row}, std::move(out), [](const Matrix& g, std::span<Matrix* const> in) {
        if (in[0]) *in[0] += g;
        if (in[1]) *in[1] += g.colwise().sum();
    });
}

Var scale(Var a, double s) {
    Matrix out = a.value() * s;
    return a.tape()->apply({a}, std::move(out), [s](const Matrix& g, std::span<Matrix* const> in) {
        if (in[0]) *in[0] += g * s;
    });
}

double gelu_value(double x) { return x * 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)); }

Var gelu(Var a) {
    const Matrix& x = a.value();
    Matrix out(x.rows(), x.cols());
    Matrix deriv(x.rows(), x.cols());
    const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        out.data()[i] = gelu_value(v);
        deriv.data()[i] = cdf + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
    }
    return a.tape()->apply({a}, std::move(out), [deriv = std::move(deriv)](const Matrix& g, std::span<Matrix* const> in) {
        if (in[0]) *in[0] += g.cwiseProduct(deriv);
    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    const Eigen::Index d = x.cols();
    require(gain.rows() == 1 && gain.cols() == d && bias.rows() == 1 && bias.cols() == d, "layer_norm shape mismatch");
    const Matrix& xv = x.value();
    Matrix xhat(xv.rows(), d);
    Eigen::VectorXd inv_std(xv.rows());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        const double mean = xv.row(r).mean();
        const double var = (xv.row(r).array() - mean).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
    }
    Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
    return x.tape()->apply(
        {x, gain, bias}, std::move(out),
        [xhat = std::move(xhat), inv_std = std::move(inv_std), gv = gain.value()](const Matrix& g, std::span<Matrix* const> in) {
            const double n = static_cast<double>(xhat.cols());
            if (in[0]) {
                for (Eigen::Index r = 0; r < g.rows(); ++r) {
                    Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gv.row(0));
                    const double m1 = dxhat.sum() / n;
                    const double m2 = dxhat.cwiseProduct(xhat.row(r)).sum() / n;
                    in[0]->row(r) += inv_std(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
                }
            }
            if (in[1]) *in[1] += g.cwiseProduct(xhat).colwise().sum();
            if (in[2]) *in[2] += g.colwise().sum();
        });
}

Var causal_softmax(Var scores) {
    const Matrix& s = scores.value();
    require(s.rows() == s.cols(), "causal_softmax expects a square matrix");
    Matrix p = Matrix::Zero(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const double mx = s.row(i).head(i + 1).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
            p(i, j) = std::exp(s(i, j) - mx);
            z += p(i, j);
        }
        p.row(i).head(i + 1) /= z;
    }
    Matrix out = p;
    return scores.tape()->apply({scores}, std::move(out), [p = std::move(p)](const Matrix& g, std::span<Matrix* const> in) {
        if (!in[0]) return;
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            const double dot = g.row(i).dot(p.row(i));
            in[0]->row(i) += p.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
        }
    });
}

Var rotary(Var x, double base) {
    const Matrix& xv = x.value();
    const Eigen::Index d = xv.cols();
    const Eigen::Index pairs = d / 2;
    Matrix cosv(xv.rows(), pairs), sinv(xv.rows(), pairs);
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        for (Eigen::Index i = 0; i < pairs; ++i) {
            const double theta = static_cast<double>(r) * std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
            cosv(r, i) = std::cos(theta);
            sinv(r, i) = std::sin(theta);
        }
    }
    Matrix out = xv;
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        for (Eigen::Index i = 0; i < pairs; ++i) {
            const double a = xv(r, 2 * i), b = xv(r, 2 * i + 1);
            out(r, 2 * i) = a * cosv(r, i) - b * sinv(r, i);
            out(r, 2 * i + 1) = a * sinv(r, i) + b * cosv(r, i);
        }
    }
    return x.tape()->apply({x}, std::move(out), [cosv = std::move(cosv), sinv = std::move(sinv)](const Matrix& g, std::span<Matrix* const> in) {
        if (!in[0]) return;
        Matrix& dx = *in[0];
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            for (Eigen::Index i = 0; i < cosv.cols(); ++i) {
                const double ga = g(r, 2 * i), gb = g(r, 2 * i + 1);
                dx(r, 2 * i) += ga * cosv(r, i) + gb * sinv(r, i);
                dx(r, 2 * i + 1) += -ga * sinv(r, i) + gb * cosv(r, i);
            }
            if (g.cols() % 2 == 1) dx(r, g.cols() - 1) += g(r, g.cols() - 1);
        }
    });
}

Var gather_rows(Var a, std::span<const int> rows) {
    const Matrix& av = a.value();
    Matrix out(static_cast<Eigen::Index>(rows.size()), av.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        require(rows[k] >= 0 && rows[k] < av.rows(), "gather_rows index out of range");
        out.row(static_cast<Eigen::Index>(k)) = av.row(rows[k]);
    }
    return a.tape()->apply({a}, std::move(out), [idx = std::vector<int>(rows.begin(), rows.end())](const Matrix& g, std::span<Matrix* const> in) {
        if (!in[0]) return;
        for (std::size_t k = 0; k < idx.size(); ++k) in[0]->row(idx[k]) += g.row(static_cast<Eigen::Index>(k));
    });
}

Var mean_rows(Var a, std::span<const int> rows) {
    require(!rows.empty(), "mean_rows over an empty row set");
    const Matrix& av = a.value();
    Matrix out = Matrix::Zero(1, av.cols());
    for (int r : rows) {
        require(r >= 0 && r < av.rows(), "mean_rows index out of range");
        out.row(0) += av.row(r);
    }
    const double inv = 1.0 / static_cast<double>(rows.size());
    out *= inv;
    return a.tape()->apply({a}, std::move(out), [idx = std::vector<int>(rows.begin(), rows.end()), inv](const Matrix& g, std::span<Matrix* const> in) {
        if (!in[0]) return;
        for (int r : idx) in[0]->row(r) += g.row(0) * inv;
    });
}

Var concat_rows(std::span<const Var> parts) {
    require(!parts.empty(), "concat_rows of nothing");
    const Eigen::Index cols = parts.front().cols();
    Eigen::Index rows = 0;
    for (const Var& p : parts) {
        require(p.cols() == cols, "concat_rows column mismatch");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    std::vector<Eigen::Index> offsets;
    offsets.reserve(parts.size());
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        offsets.push_back(at);
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    return parts.front().tape()->apply(parts, std::move(out), [offsets = std::move(offsets)](const Matrix& g, std::span<Matrix* const> in) {
        for (std::size_t k = 0; k < in.size(); ++k) {
            if (!in[k]) continue;
            *in[k] += g.middleRows(offsets[k], in[k]->rows());
        }
    });
}

Var normalize_rows(Var a, double eps) {
    const Matrix& av = a.value();
    Eigen::VectorXd norms = av.rowwise().norm().cwiseMax(eps);
    Matrix out = norms.cwiseInverse().asDiagonal() * av;
    Matrix y = out;
    return a.tape()->apply({a}, std::move(out), [y = std::move(y), norms = std::move(norms)](const Matrix& g, std::span<Matrix* const> in) {
        if (!in[0]) return;
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            const double dot = g.row(r).dot(y.row(r));
            in[0]->row(r) += (g.row(r) - dot * y.row(r)) / norms(r);
        }
    });
}

Var embedding(Var base, Var special, std::span<const int> ids) {
    require(base.cols() == special.cols(), "embedding table width mismatch");
    const Eigen::Index nb = base.rows();
    const Eigen::Index total = nb + special.rows();
    Matrix out(static_cast<Eigen::Index>(ids.size()), base.cols());
    for (std::size_t k = 0; k < ids.size(); ++k) {
        const int id = ids[k];
        require(id >= 0 && id < total, "embedding id out of range");
        out.row(static_cast<Eigen::Index>(k)) = id < nb ? base.value().row(id) : special.value().row(id - nb);
    }
    return base.tape()->apply({base, special}, std::move(out), [idx = std::vector<int>(ids.begin(), ids.end()), nb](const Matrix& g, std::span<Matrix* const> in) {
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const int id = idx[k];
            if (id < nb) {
                if (in[0]) in[0]->row(id) += g.row(static_cast<Eigen::Index>(k));
            } else if (in[1]) {
                in[1]->row(id - nb) += g.row(static_cast<Eigen::Index>(k));
            }
        }
    });
}

}  // namespace dfat::ad
