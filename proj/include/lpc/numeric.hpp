// Stable scalar and vector primitives shared by the training graph, the
// evaluation paths, and the test oracles. Vector functions accept any dense
// Eigen expression and return concrete column vectors.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "lpc/rng.hpp"

namespace lpc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// log(sigmoid(x)) without evaluating exp of a large positive argument.
inline double log_sigmoid(double x) {
    if (x >= 0.0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Exact (erf-based) GELU, shared by the graph op and plain forward paths so
// both produce bitwise-identical activations.
inline double gelu(double x) {
    return x * 0.5 * (1.0 + std::erf(x * 0.70710678118654752440));
}

template <typename Derived>
double logsumexp(const Eigen::MatrixBase<Derived>& v) {
    if (v.size() == 0) throw std::invalid_argument("logsumexp: empty vector");
    const double m = v.maxCoeff();
    return m + std::log((v.array() - m).exp().sum());
}

// Max-subtracted softmax over a vector of logits.
template <typename Derived>
Vector softmax(const Eigen::MatrixBase<Derived>& logits) {
    if (logits.size() == 0) throw std::invalid_argument("softmax: empty logit vector");
    const double m = logits.maxCoeff();
    Vector e = (logits.array() - m).exp();
    return e / e.sum();
}

template <typename Derived>
Vector log_softmax(const Eigen::MatrixBase<Derived>& logits) {
    if (logits.size() == 0) throw std::invalid_argument("log_softmax: empty logit vector");
    Vector out = logits;
    out.array() -= logsumexp(logits);
    return out;
}

// Categorical distribution stored as logits; probabilities are derived views.
struct CategoricalDist {
    Vector logits;

    CategoricalDist() = default;
    explicit CategoricalDist(Vector l) : logits(std::move(l)) {
        if (logits.size() < 1) throw std::invalid_argument("CategoricalDist: K must be >= 1");
    }

    int size() const { return static_cast<int>(logits.size()); }
    Vector probs() const { return softmax(logits); }
    Vector log_probs() const { return log_softmax(logits); }
    int mode() const {
        int k = 0;
        logits.maxCoeff(&k);
        return k;
    }
};

// KL(q || p) between categorical distributions given by logits.
// Computed as sum_k q_k (log q_k - log p_k); the logit parameterization keeps
// every p_k strictly positive.
inline double categorical_kl(const CategoricalDist& q, const CategoricalDist& p) {
    if (q.size() != p.size())
        throw std::invalid_argument("categorical_kl: mismatched K");
    const Vector qp = q.probs();
    const Vector ql = q.log_probs();
    const Vector pl = p.log_probs();
    return (qp.array() * (ql - pl).array()).sum();
}

// Gumbel-softmax sample: softmax((logits + g) / temperature). The optional
// noise override replaces the sampled Gumbel vector (a zero vector gives the
// deterministic tempered softmax, the documented test hook). With hard=true
// the result is the one-hot argmax of the soft weights.
inline Vector gumbel_softmax(const Vector& logits, double temperature, RngStream& rng,
                             bool hard = false,
                             const std::optional<Vector>& noise_override = std::nullopt) {
    if (temperature <= 0.0)
        throw std::invalid_argument("gumbel_softmax: temperature must be positive");
    Vector noise;
    if (noise_override) {
        if (noise_override->size() != logits.size())
            throw std::invalid_argument("gumbel_softmax: noise override size mismatch");
        noise = *noise_override;
    } else {
        noise.resize(logits.size());
        for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = rng.next_gumbel();
    }
    Vector soft = softmax(((logits + noise) / temperature).eval());
    if (!hard) return soft;
    int k = 0;
    soft.maxCoeff(&k);
    Vector one = Vector::Zero(soft.size());
    one[k] = 1.0;
    return one;
}

}  // namespace lpc
