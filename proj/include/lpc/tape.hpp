// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape owns the computation graph for one forward pass. Nodes hold a value
// and a same-shape gradient accumulator; creation order is a topological
// order, so backward() is a single reverse sweep. Leaves bound to Parameter
// objects flush their gradients into the parameter's persistent accumulator,
// which is what the optimizer consumes.
//
// A tape is confined to one thread. Distinct tapes may run concurrently
// against the same read-only parameters.
#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace lpc {

// A named, trainable dense matrix with a persistent gradient accumulator.
struct Parameter {
    std::string name;
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    bool no_decay = false;  // excluded from weight decay (biases, codebook)

    Parameter() = default;
    Parameter(std::string n, Eigen::MatrixXd v, bool nd = false)
        : name(std::move(n)), value(std::move(v)),
          grad(Eigen::MatrixXd::Zero(value.rows(), value.cols())), no_decay(nd) {}

    void zero_grad() { grad.setZero(); }
};

class Tape;

// Lightweight handle to a node on a tape.
class Var {
public:
    Var() = default;
    const Eigen::MatrixXd& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    double scalar() const;  // requires a 1x1 node
    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* t, int i) : tape_(t), id_(i) {}
    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    explicit Tape(bool track_gradients = true) : track_(track_gradients) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool tracking() const { return track_; }

    Var constant(Eigen::MatrixXd v);
    Var scalar_constant(double v);
    // Leaf bound to a parameter; repeated calls reuse the same node.
    Var leaf(Parameter& p);

    // Runs the reverse sweep from a scalar root and flushes leaf gradients
    // into their parameters. Call at most once per tape.
    void backward(const Var& root);

    const Eigen::MatrixXd& value(int id) const { return nodes_[id].value; }
    Eigen::MatrixXd& grad(int id) { return nodes_[id].grad; }

    std::size_t size() const { return nodes_.size(); }

    // Used by the op implementations. The backward function receives the id
    // of the node it belongs to, so it can read its own output gradient.
    using BackwardFn = std::function<void(Tape&, int self)>;
    Var emit(Eigen::MatrixXd value, BackwardFn backward_fn);

private:
    struct Node {
        Eigen::MatrixXd value;
        Eigen::MatrixXd grad;
        BackwardFn backward_fn;
        Parameter* param = nullptr;
    };

    std::vector<Node> nodes_;
    std::vector<int> param_ids_;
    std::unordered_map<const Parameter*, int> param_lookup_;
    bool track_ = true;
    bool swept_ = false;
};

// ---- graph operations ------------------------------------------------------
// All binary ops require operands from the same tape.

Var operator+(const Var& a, const Var& b);         // elementwise, same shape
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);         // Hadamard product
Var operator*(double s, const Var& a);
Var operator-(const Var& a);
Var operator+(const Var& a, double s);
Var operator-(const Var& a, double s);
Var operator-(double s, const Var& a);

Var matmul(const Var& a, const Var& b);            // A * B
Var matmul_nt(const Var& a, const Var& b);         // A * B^T
Var add_rowvec(const Var& m, const Var& row);      // every row of m plus row
Var rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var hcat(const std::vector<Var>& parts);

Var rowwise_softmax(const Var& a);
Var rowwise_log_softmax(const Var& a);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var log_sigmoid(const Var& a);
Var square(const Var& a);

// v(i, :) = table(ids[i], :); gradients scatter-add into the table.
Var embed_rows(const Var& table, const std::vector<int>& ids);
// out(i, 0) = m(i, ids[i]).
Var pick(const Var& m, const std::vector<int>& ids);
Var sum(const Var& a);                             // 1x1
Var mean_all(const Var& a);                        // 1x1

// Forward: one-hot argmax of soft. Backward: identity into soft
// (straight-through estimator).
Var straight_through_onehot(const Var& soft);

// ---- composites ------------------------------------------------------------

// KL(softmax(q_logits) || softmax(p_logits)) for 1xK logit rows; returns 1x1.
Var categorical_kl(const Var& q_logits, const Var& p_logits);

// softmax((logits + noise) / temperature) on a 1xK row; the noise is treated
// as a constant. hard=true gives straight-through one-hot.
Var gumbel_softmax(const Var& logits, double temperature,
                   const Eigen::RowVectorXd& noise, bool hard = false);

}  // namespace lpc
