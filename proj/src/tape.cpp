#include "lpc/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "lpc/numeric.hpp"

namespace lpc {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check_same_tape(const Var& a, const Var& b, const char* op) {
    if (!a.valid() || !b.valid())
        throw std::invalid_argument(std::string(op) + ": invalid operand");
    if (a.tape() != b.tape())
        throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                    std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                    " vs " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()) + ")");
}

}  // namespace

// ---- Var -------------------------------------------------------------------

const Eigen::MatrixXd& Var::value() const {
    if (!valid()) throw std::logic_error("Var::value: default-constructed handle");
    return tape_->value(id_);
}

double Var::scalar() const {
    const Eigen::MatrixXd& v = value();
    if (v.rows() != 1 || v.cols() != 1)
        throw std::logic_error("Var::scalar: node is not 1x1");
    return v(0, 0);
}

// ---- Tape ------------------------------------------------------------------

Var Tape::emit(Eigen::MatrixXd value, BackwardFn backward_fn) {
    Node n;
    n.value = std::move(value);
    if (track_) {
        n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
        n.backward_fn = std::move(backward_fn);
    }
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Eigen::MatrixXd v) { return emit(std::move(v), {}); }

Var Tape::scalar_constant(double v) {
    Eigen::MatrixXd m(1, 1);
    m(0, 0) = v;
    return emit(std::move(m), {});
}

Var Tape::leaf(Parameter& p) {
    auto it = param_lookup_.find(&p);
    if (it != param_lookup_.end()) return Var(this, it->second);
    Var v = emit(p.value, {});
    nodes_[v.id()].param = &p;
    if (track_) param_ids_.push_back(v.id());
    param_lookup_.emplace(&p, v.id());
    return v;
}

void Tape::backward(const Var& root) {
    if (!track_) throw std::logic_error("Tape::backward: tape does not track gradients");
    if (swept_) throw std::logic_error("Tape::backward: tape already swept");
    if (root.tape() != this) throw std::invalid_argument("Tape::backward: root from another tape");
    if (root.rows() != 1 || root.cols() != 1)
        throw std::invalid_argument("Tape::backward: root must be a 1x1 scalar node");
    swept_ = true;
    nodes_[root.id()].grad(0, 0) = 1.0;
    for (int i = root.id(); i >= 0; --i) {
        if (nodes_[i].backward_fn) nodes_[i].backward_fn(*this, i);
    }
    for (int id : param_ids_) nodes_[id].param->grad += nodes_[id].grad;
}

// ---- elementwise ops -------------------------------------------------------

Var operator+(const Var& a, const Var& b) {
    check_same_tape(a, b, "operator+");
    check_same_shape(a, b, "operator+");
    const int ia = a.id(), ib = b.id();
    return a.tape()->emit(a.value() + b.value(), [ia, ib](Tape& tp, int self) {
        tp.grad(ia) += tp.grad(self);
        tp.grad(ib) += tp.grad(self);
    });
}

Var operator-(const Var& a, const Var& b) {
    check_same_tape(a, b, "operator-");
    check_same_shape(a, b, "operator-");
    const int ia = a.id(), ib = b.id();
    return a.tape()->emit(a.value() - b.value(), [ia, ib](Tape& tp, int self) {
        tp.grad(ia) += tp.grad(self);
        tp.grad(ib) -= tp.grad(self);
    });
}

Var operator*(const Var& a, const Var& b) {
    check_same_tape(a, b, "operator*");
    check_same_shape(a, b, "operator*");
    const int ia = a.id(), ib = b.id();
    return a.tape()->emit(a.value().cwiseProduct(b.value()), [ia, ib](Tape& tp, int self) {
        tp.grad(ia).array() += tp.grad(self).array() * tp.value(ib).array();
        tp.grad(ib).array() += tp.grad(self).array() * tp.value(ia).array();
    });
}

Var operator*(double s, const Var& a) {
    const int ia = a.id();
    return a.tape()->emit(s * a.value(), [ia, s](Tape& tp, int self) {
        tp.grad(ia) += s * tp.grad(self);
    });
}

Var operator-(const Var& a) {
    const int ia = a.id();
    return a.tape()->emit(-a.value(), [ia](Tape& tp, int self) {
        tp.grad(ia) -= tp.grad(self);
    });
}

Var operator+(const Var& a, double s) {
    const int ia = a.id();
    return a.tape()->emit(a.value().array() + s, [ia](Tape& tp, int self) {
        tp.grad(ia) += tp.grad(self);
    });
}

Var operator-(const Var& a, double s) { return a + (-s); }

Var operator-(double s, const Var& a) {
    const int ia = a.id();
    return a.tape()->emit(s - a.value().array(), [ia](Tape& tp, int self) {
        tp.grad(ia) -= tp.grad(self);
    });
}

// ---- linear algebra --------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    check_same_tape(a, b, "matmul");
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
    const int ia = a.id(), ib = b.id();
    return a.tape()->emit(a.value() * b.value(), [ia, ib](Tape& tp, int self) {
        tp.grad(ia).noalias() += tp.grad(self) * tp.value(ib).transpose();
        tp.grad(ib).noalias() += tp.value(ia).transpose() * tp.grad(self);
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    check_same_tape(a, b, "matmul_nt");
    if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimensions differ");
    const int ia = a.id(), ib = b.id();
    return a.tape()->emit(a.value() * b.value().transpose(), [ia, ib](Tape& tp, int self) {
        tp.grad(ia).noalias() += tp.grad(self) * tp.value(ib);
        tp.grad(ib).noalias() += tp.grad(self).transpose() * tp.value(ia);
    });
}

Var add_rowvec(const Var& m, const Var& row) {
    check_same_tape(m, row, "add_rowvec");
    if (row.rows() != 1 || row.cols() != m.cols())
        throw std::invalid_argument("add_rowvec: row must be 1 x cols(m)");
    const int im = m.id(), ir = row.id();
    Eigen::MatrixXd out = m.value();
    out.rowwise() += Eigen::RowVectorXd(row.value().row(0));
    return m.tape()->emit(std::move(out), [im, ir](Tape& tp, int self) {
        tp.grad(im) += tp.grad(self);
        tp.grad(ir) += tp.grad(self).colwise().sum();
    });
}

Var rows(const Var& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.rows())
        throw std::invalid_argument("rows: range out of bounds");
    const int ia = a.id();
    return a.tape()->emit(a.value().middleRows(start, count),
                          [ia, start, count](Tape& tp, int self) {
                              tp.grad(ia).middleRows(start, count) += tp.grad(self);
                          });
}

Var cols(const Var& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.cols())
        throw std::invalid_argument("cols: range out of bounds");
    const int ia = a.id();
    return a.tape()->emit(a.value().middleCols(start, count),
                          [ia, start, count](Tape& tp, int self) {
                              tp.grad(ia).middleCols(start, count) += tp.grad(self);
                          });
}

Var hcat(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("hcat: no inputs");
    const Eigen::Index r = parts.front().rows();
    Eigen::Index total = 0;
    for (const Var& p : parts) {
        check_same_tape(parts.front(), p, "hcat");
        if (p.rows() != r) throw std::invalid_argument("hcat: row counts differ");
        total += p.cols();
    }
    Eigen::MatrixXd out(r, total);
    std::vector<int> ids;
    std::vector<Eigen::Index> offs, widths;
    Eigen::Index off = 0;
    for (const Var& p : parts) {
        out.middleCols(off, p.cols()) = p.value();
        ids.push_back(p.id());
        offs.push_back(off);
        widths.push_back(p.cols());
        off += p.cols();
    }
    return parts.front().tape()->emit(
        std::move(out), [ids, offs, widths](Tape& tp, int self) {
            for (std::size_t k = 0; k < ids.size(); ++k)
                tp.grad(ids[k]) += tp.grad(self).middleCols(offs[k], widths[k]);
        });
}

// ---- nonlinearities --------------------------------------------------------

Var rowwise_softmax(const Var& a) {
    // per-row through the shared vector helper so graph and plain paths are
    // bitwise identical
    Eigen::MatrixXd out(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        out.row(i) = softmax(a.value().row(i).transpose().eval()).transpose();
    const int ia = a.id();
    return a.tape()->emit(std::move(out), [ia](Tape& tp, int self) {
        const Eigen::MatrixXd& s = tp.value(self);
        const Eigen::MatrixXd& g = tp.grad(self);
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            const double dot = g.row(i).cwiseProduct(s.row(i)).sum();
            tp.grad(ia).row(i).array() += s.row(i).array() * (g.row(i).array() - dot);
        }
    });
}

Var rowwise_log_softmax(const Var& a) {
    Eigen::MatrixXd out(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        out.row(i) = log_softmax(a.value().row(i).transpose().eval()).transpose();
    const int ia = a.id();
    return a.tape()->emit(std::move(out), [ia](Tape& tp, int self) {
        const Eigen::MatrixXd& ls = tp.value(self);
        const Eigen::MatrixXd& g = tp.grad(self);
        for (Eigen::Index i = 0; i < ls.rows(); ++i) {
            const double gsum = g.row(i).sum();
            tp.grad(ia).row(i).array() +=
                g.row(i).array() - ls.row(i).array().exp() * gsum;
        }
    });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
    check_same_tape(x, gain, "layer_norm");
    check_same_tape(x, bias, "layer_norm");
    const Eigen::Index c = x.cols();
    if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c)
        throw std::invalid_argument("layer_norm: gain and bias must be 1 x cols(x)");
    const Eigen::MatrixXd& xv = x.value();
    Eigen::MatrixXd out(xv.rows(), c);
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
        const double mu = xv.row(i).mean();
        const double var = (xv.row(i).array() - mu).square().sum() / static_cast<double>(c);
        const double istd = 1.0 / std::sqrt(var + eps);
        out.row(i).array() =
            (xv.row(i).array() - mu) * istd * gain.value().array() + bias.value().array();
    }
    const int ix = x.id(), ig = gain.id(), ib = bias.id();
    return x.tape()->emit(std::move(out), [ix, ig, ib, eps](Tape& tp, int self) {
        const Eigen::MatrixXd& xm = tp.value(ix);
        const Eigen::MatrixXd& g = tp.grad(self);
        const auto gn = tp.value(ig).array();
        const Eigen::Index c = xm.cols();
        for (Eigen::Index i = 0; i < xm.rows(); ++i) {
            const double mu = xm.row(i).mean();
            const double var = (xm.row(i).array() - mu).square().sum() / static_cast<double>(c);
            const double istd = 1.0 / std::sqrt(var + eps);
            const Eigen::ArrayXXd xhat = (xm.row(i).array() - mu) * istd;
            const Eigen::ArrayXXd gy = g.row(i).array() * gn;
            tp.grad(ig).array() += g.row(i).array() * xhat;
            tp.grad(ib) += g.row(i);
            const double m1 = gy.mean();
            const double m2 = (gy * xhat).mean();
            tp.grad(ix).row(i).array() += istd * (gy - m1 - xhat * m2);
        }
    });
}

Var gelu(const Var& a) {
    const int ia = a.id();
    Eigen::MatrixXd out = a.value().unaryExpr([](double v) { return lpc::gelu(v); });
    return a.tape()->emit(std::move(out), [ia](Tape& tp, int self) {
        const auto x = tp.value(ia).array();
        const auto phi = (-0.5 * x.square()).exp() * kInvSqrt2Pi;
        const auto Phi = 0.5 * (1.0 + (x * kInvSqrt2).unaryExpr(
                                          [](double v) { return std::erf(v); }));
        tp.grad(ia).array() += tp.grad(self).array() * (Phi + x * phi);
    });
}

Var sigmoid(const Var& a) {
    const int ia = a.id();
    Eigen::MatrixXd out = a.value().unaryExpr([](double v) { return lpc::sigmoid(v); });
    return a.tape()->emit(std::move(out), [ia](Tape& tp, int self) {
        const auto y = tp.value(self).array();
        tp.grad(ia).array() += tp.grad(self).array() * y * (1.0 - y);
    });
}

Var log_sigmoid(const Var& a) {
    const int ia = a.id();
    Eigen::MatrixXd out = a.value().unaryExpr([](double v) { return lpc::log_sigmoid(v); });
    return a.tape()->emit(std::move(out), [ia](Tape& tp, int self) {
        // d/dx log sigmoid(x) = 1 - sigmoid(x) = 1 - exp(log sigmoid(x))
        const auto y = tp.value(self).array();
        tp.grad(ia).array() += tp.grad(self).array() * (1.0 - y.exp());
    });
}

Var square(const Var& a) {
    const int ia = a.id();
    return a.tape()->emit(a.value().array().square(), [ia](Tape& tp, int self) {
        tp.grad(ia).array() += 2.0 * tp.value(ia).array() * tp.grad(self).array();
    });
}

// ---- gather / reduce -------------------------------------------------------

Var embed_rows(const Var& table, const std::vector<int>& ids) {
    const Eigen::MatrixXd& t = table.value();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(ids.size()), t.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= t.rows())
            throw std::out_of_range("embed_rows: id " + std::to_string(ids[i]) +
                                    " outside table with " + std::to_string(t.rows()) + " rows");
        out.row(static_cast<Eigen::Index>(i)) = t.row(ids[i]);
    }
    const int it = table.id();
    return table.tape()->emit(std::move(out), [it, ids](Tape& tp, int self) {
        for (std::size_t i = 0; i < ids.size(); ++i)
            tp.grad(it).row(ids[i]) += tp.grad(self).row(static_cast<Eigen::Index>(i));
    });
}

Var pick(const Var& m, const std::vector<int>& ids) {
    const Eigen::MatrixXd& v = m.value();
    if (static_cast<Eigen::Index>(ids.size()) != v.rows())
        throw std::invalid_argument("pick: need one column index per row");
    Eigen::MatrixXd out(v.rows(), 1);
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        const int j = ids[static_cast<std::size_t>(i)];
        if (j < 0 || j >= v.cols())
            throw std::out_of_range("pick: column " + std::to_string(j) + " outside " +
                                    std::to_string(v.cols()) + " columns");
        out(i, 0) = v(i, j);
    }
    const int im = m.id();
    return m.tape()->emit(std::move(out), [im, ids](Tape& tp, int self) {
        for (Eigen::Index i = 0; i < tp.grad(self).rows(); ++i)
            tp.grad(im)(i, ids[static_cast<std::size_t>(i)]) += tp.grad(self)(i, 0);
    });
}

Var sum(const Var& a) {
    const int ia = a.id();
    Eigen::MatrixXd out(1, 1);
    out(0, 0) = a.value().sum();
    return a.tape()->emit(std::move(out), [ia](Tape& tp, int self) {
        tp.grad(ia).array() += tp.grad(self)(0, 0);
    });
}

Var mean_all(const Var& a) {
    if (a.value().size() == 0) throw std::invalid_argument("mean_all: empty matrix");
    const int ia = a.id();
    const double n = static_cast<double>(a.value().size());
    Eigen::MatrixXd out(1, 1);
    out(0, 0) = a.value().mean();
    return a.tape()->emit(std::move(out), [ia, n](Tape& tp, int self) {
        tp.grad(ia).array() += tp.grad(self)(0, 0) / n;
    });
}

Var straight_through_onehot(const Var& soft) {
    const Eigen::MatrixXd& s = soft.value();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        Eigen::Index j = 0;
        s.row(i).maxCoeff(&j);
        out(i, j) = 1.0;
    }
    const int is = soft.id();
    return soft.tape()->emit(std::move(out), [is](Tape& tp, int self) {
        tp.grad(is) += tp.grad(self);
    });
}

// ---- composites --------------------------------------------------------------

Var categorical_kl(const Var& q_logits, const Var& p_logits) {
    check_same_tape(q_logits, p_logits, "categorical_kl");
    check_same_shape(q_logits, p_logits, "categorical_kl");
    if (q_logits.rows() != 1)
        throw std::invalid_argument("categorical_kl: logits must be a single row");
    Var lq = rowwise_log_softmax(q_logits);
    Var lp = rowwise_log_softmax(p_logits);
    Var q = rowwise_softmax(q_logits);
    return sum(q * (lq - lp));
}

Var gumbel_softmax(const Var& logits, double temperature, const Eigen::RowVectorXd& noise,
                   bool hard) {
    if (temperature <= 0.0)
        throw std::invalid_argument("gumbel_softmax: temperature must be positive");
    if (logits.rows() != 1)
        throw std::invalid_argument("gumbel_softmax: logits must be a single row");
    if (noise.size() != logits.cols())
        throw std::invalid_argument("gumbel_softmax: noise size mismatch");
    Tape& t = *logits.tape();
    Var noisy = logits + t.constant(noise);
    Var soft = rowwise_softmax((1.0 / temperature) * noisy);
    return hard ? straight_through_onehot(soft) : soft;
}

}  // namespace lpc
