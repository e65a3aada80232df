#include "lpc/objectives.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lpc {

namespace {

constexpr int kEnumerationGuard = 4096;

void check_k(const CategoricalDist& prior, const CategoricalDist& posterior) {
    if (prior.size() != posterior.size())
        throw std::invalid_argument("lpc loss: prior K=" + std::to_string(prior.size()) +
                                    " != posterior K=" + std::to_string(posterior.size()));
}

void check_k_g(const Var& prior_logits, const Var& posterior_logits) {
    if (prior_logits.cols() != posterior_logits.cols())
        throw std::invalid_argument("lpc loss: prior/posterior K mismatch");
}

double dpo_margin(const TripleLogProbs& t, double beta) {
    return beta * ((t.policy_lp_w - t.ref_lp_w) - (t.policy_lp_l - t.ref_lp_l));
}

// beta*((pw - rw) - (pl - rl)) with graph policy terms and constant refs
Var dpo_margin_g(const Var& pw, const Var& pl, double rw, double rl, double beta) {
    return beta * ((pw - rw) - (pl - rl));
}

}  // namespace

void ObjectiveConfig::validate() const {
    if (!(beta > 0.0)) throw std::invalid_argument("ObjectiveConfig: beta must be > 0");
    if (!(tau > 0.0)) throw std::invalid_argument("ObjectiveConfig: tau must be > 0");
    if (lambda < 0.0) throw std::invalid_argument("ObjectiveConfig: lambda must be >= 0");
    if (gamma < 0.0) throw std::invalid_argument("ObjectiveConfig: gamma must be >= 0");
}

void TripleLogProbs::validate() const {
    if (policy_lp_w > 0.0 || policy_lp_l > 0.0 || ref_lp_w > 0.0 || ref_lp_l > 0.0)
        throw std::invalid_argument("TripleLogProbs: log-probs must be nonpositive");
    if (len_w < 1 || len_l < 1)
        throw std::invalid_argument("TripleLogProbs: completion lengths must be >= 1");
}

double bt_prob(double r_w, double r_l) { return sigmoid(r_w - r_l); }

double implicit_reward(double policy_lp, double ref_lp, double beta) {
    return beta * (policy_lp - ref_lp);
}

// ---- DPO -----------------------------------------------------------------------

double dpo_loss(const TripleLogProbs& t, double beta) {
    t.validate();
    return -log_sigmoid(dpo_margin(t, beta));
}

Var dpo_loss_g(Tape& tp, const Var& pw, const Var& pl, double rw, double rl, double beta) {
    (void)tp;
    return -log_sigmoid(dpo_margin_g(pw, pl, rw, rl, beta));
}

double lpc_dpo_loss(const TripleLogProbs& t, const CategoricalDist& prior,
                    const CategoricalDist& posterior, double beta, double lambda) {
    check_k(prior, posterior);
    double loss = dpo_loss(t, beta);
    if (lambda != 0.0) loss += lambda * categorical_kl(posterior, prior);
    return loss;
}

Var lpc_dpo_loss_g(Tape& tp, const Var& pw, const Var& pl, double rw, double rl,
                   const Var& prior_logits, const Var& posterior_logits, double beta,
                   double lambda) {
    check_k_g(prior_logits, posterior_logits);
    Var loss = dpo_loss_g(tp, pw, pl, rw, rl, beta);
    if (lambda != 0.0) loss = loss + lambda * categorical_kl(posterior_logits, prior_logits);
    return loss;
}

// ---- exact marginal --------------------------------------------------------------

double exact_marginal_nll(const Vector& per_code_margins, const CategoricalDist& prior) {
    if (per_code_margins.size() != prior.size())
        throw std::invalid_argument("exact_marginal_nll: margins K=" +
                                    std::to_string(per_code_margins.size()) + " != prior K=" +
                                    std::to_string(prior.size()));
    if (prior.size() > kEnumerationGuard)
        throw std::invalid_argument(
            "exact_marginal_nll: K=" + std::to_string(prior.size()) +
            " exceeds the enumeration guard (" + std::to_string(kEnumerationGuard) +
            "); use the ELBO objective for large codebooks");
    // -logsumexp_k(log p_k + log sigma(m_k)) for stability in the tails
    Vector terms = prior.log_probs();
    for (Eigen::Index k = 0; k < terms.size(); ++k) terms[k] += log_sigmoid(per_code_margins[k]);
    return -logsumexp(terms);
}

// ---- SimPO ---------------------------------------------------------------------

double simpo_loss(const TripleLogProbs& t, double beta, double gamma) {
    t.validate();
    return -log_sigmoid(beta * t.policy_lp_w - beta * t.policy_lp_l - gamma);
}

Var simpo_loss_g(Tape& tp, const Var& avg_lp_w, const Var& avg_lp_l, double beta, double gamma) {
    (void)tp;
    return -log_sigmoid((beta * avg_lp_w - beta * avg_lp_l) - gamma);
}

double lpc_simpo_loss(const TripleLogProbs& t, const CategoricalDist& prior,
                      const CategoricalDist& posterior, double beta, double gamma,
                      double lambda) {
    check_k(prior, posterior);
    double loss = simpo_loss(t, beta, gamma);
    if (lambda != 0.0) loss += lambda * categorical_kl(posterior, prior);
    return loss;
}

Var lpc_simpo_loss_g(Tape& tp, const Var& avg_lp_w, const Var& avg_lp_l,
                     const Var& prior_logits, const Var& posterior_logits, double beta,
                     double gamma, double lambda) {
    check_k_g(prior_logits, posterior_logits);
    Var loss = simpo_loss_g(tp, avg_lp_w, avg_lp_l, beta, gamma);
    if (lambda != 0.0) loss = loss + lambda * categorical_kl(posterior_logits, prior_logits);
    return loss;
}

// ---- IPO -----------------------------------------------------------------------

double ipo_loss(const TripleLogProbs& t, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("ipo_loss: tau must be positive");
    t.validate();
    const double delta = (t.policy_lp_w - t.ref_lp_w) - (t.policy_lp_l - t.ref_lp_l);
    const double err = delta - 1.0 / (2.0 * tau);
    return err * err;
}

Var ipo_loss_g(Tape& tp, const Var& pw, const Var& pl, double rw, double rl, double tau) {
    (void)tp;
    if (!(tau > 0.0)) throw std::invalid_argument("ipo_loss: tau must be positive");
    Var delta = (pw - rw) - (pl - rl);
    return square(delta - 1.0 / (2.0 * tau));
}

double lpc_ipo_loss(const TripleLogProbs& t, const CategoricalDist& prior,
                    const CategoricalDist& posterior, double tau, double lambda) {
    check_k(prior, posterior);
    double loss = ipo_loss(t, tau);
    if (lambda != 0.0) loss += lambda * categorical_kl(posterior, prior);
    return loss;
}

Var lpc_ipo_loss_g(Tape& tp, const Var& pw, const Var& pl, double rw, double rl,
                   const Var& prior_logits, const Var& posterior_logits, double tau,
                   double lambda) {
    check_k_g(prior_logits, posterior_logits);
    Var loss = ipo_loss_g(tp, pw, pl, rw, rl, tau);
    if (lambda != 0.0) loss = loss + lambda * categorical_kl(posterior_logits, prior_logits);
    return loss;
}

}  // namespace lpc
