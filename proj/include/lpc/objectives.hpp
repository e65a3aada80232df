// Alignment losses: Bradley-Terry probability, implicit reward, vanilla
// DPO / SimPO / IPO, their latent-augmented variants, and the exact
// latent-marginal likelihood used to verify the ELBO numerically.
//
// Plain overloads take doubles and are the evaluation/oracle path; the _g
// overloads build tape nodes for training. Reference log-probs are always
// plain doubles: the reference model is frozen and never sees the latent.
#pragma once

#include "lpc/numeric.hpp"
#include "lpc/tape.hpp"

namespace lpc {

struct ObjectiveConfig {
    double beta = 0.1;    // DPO/SimPO scale
    double gamma = 0.0;   // SimPO margin
    double tau = 0.01;    // IPO regularizer
    double lambda = 0.05; // KL weight for LPC variants

    void validate() const;
};

struct TripleLogProbs {
    double policy_lp_w = 0.0;  // latent-conditioned in LPC mode
    double policy_lp_l = 0.0;
    double ref_lp_w = 0.0;
    double ref_lp_l = 0.0;
    int len_w = 1;
    int len_l = 1;

    void validate() const;  // log-probs nonpositive, lengths >= 1
};

// sigma(r_w - r_l), Bradley-Terry win probability.
double bt_prob(double r_w, double r_l);

// beta * (policy_lp - ref_lp); the beta*log Z(x) term cancels in every
// same-prompt comparison and is dropped.
double implicit_reward(double policy_lp, double ref_lp, double beta);

// -log sigma(beta * ((pw - rw) - (pl - rl)))
double dpo_loss(const TripleLogProbs& t, double beta);
Var dpo_loss_g(Tape& tp, const Var& policy_lp_w, const Var& policy_lp_l, double ref_lp_w,
               double ref_lp_l, double beta);

// DPO term at the sampled z plus lambda * KL(posterior || prior).
double lpc_dpo_loss(const TripleLogProbs& t, const CategoricalDist& prior,
                    const CategoricalDist& posterior, double beta, double lambda);
Var lpc_dpo_loss_g(Tape& tp, const Var& policy_lp_w, const Var& policy_lp_l, double ref_lp_w,
                   double ref_lp_l, const Var& prior_logits, const Var& posterior_logits,
                   double beta, double lambda);

// -ln sum_k prior_k * sigma(margin_k) by exact enumeration over codes;
// margins are the per-code beta*Delta_k values.
double exact_marginal_nll(const Vector& per_code_margins, const CategoricalDist& prior);

// -log sigma(beta*avg_lp_w - beta*avg_lp_l - gamma); policy terms are
// per-token averages and there is no reference model.
double simpo_loss(const TripleLogProbs& t, double beta, double gamma);
Var simpo_loss_g(Tape& tp, const Var& avg_lp_w, const Var& avg_lp_l, double beta, double gamma);
double lpc_simpo_loss(const TripleLogProbs& t, const CategoricalDist& prior,
                      const CategoricalDist& posterior, double beta, double gamma,
                      double lambda);
Var lpc_simpo_loss_g(Tape& tp, const Var& avg_lp_w, const Var& avg_lp_l,
                     const Var& prior_logits, const Var& posterior_logits, double beta,
                     double gamma, double lambda);

// (Delta - 1/(2 tau))^2 with Delta the DPO log-ratio difference.
double ipo_loss(const TripleLogProbs& t, double tau);
Var ipo_loss_g(Tape& tp, const Var& policy_lp_w, const Var& policy_lp_l, double ref_lp_w,
               double ref_lp_l, double tau);
double lpc_ipo_loss(const TripleLogProbs& t, const CategoricalDist& prior,
                    const CategoricalDist& posterior, double tau, double lambda);
Var lpc_ipo_loss_g(Tape& tp, const Var& policy_lp_w, const Var& policy_lp_l, double ref_lp_w,
                   double ref_lp_l, const Var& prior_logits, const Var& posterior_logits,
                   double tau, double lambda);

}  // namespace lpc
