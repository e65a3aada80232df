#include "lpc/codebook.hpp"

#include <iostream>
#include <stdexcept>

namespace lpc {

namespace {

Eigen::MatrixXd gaussian_matrix(RngStream& rng, int rows, int cols, double std_dev) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = std_dev * rng.next_gaussian();
    return m;
}

}  // namespace

// ---- MlpHead ---------------------------------------------------------------

MlpHead::MlpHead(const std::string& prefix, int in, int hidden, int out, RngStream& rng) {
    if (in < 1 || hidden < 1 || out < 1)
        throw std::invalid_argument("MlpHead: widths must be positive");
    RngStream r = rng.derive("mlp_init", fnv1a64(prefix));
    w1 = Parameter(prefix + ".w1", gaussian_matrix(r, in, hidden, 0.02));
    b1 = Parameter(prefix + ".b1", Eigen::MatrixXd::Zero(1, hidden), /*nd=*/true);
    // zero final layer: fresh heads emit uniform logits
    w2 = Parameter(prefix + ".w2", Eigen::MatrixXd::Zero(hidden, out));
    b2 = Parameter(prefix + ".b2", Eigen::MatrixXd::Zero(1, out), /*nd=*/true);
}

Var MlpHead::forward_g(Tape& t, const Var& x) {
    if (x.cols() != w1.value.rows())
        throw std::invalid_argument("MlpHead: input width " + std::to_string(x.cols()) +
                                    " != expected " + std::to_string(w1.value.rows()));
    Var h = gelu(add_rowvec(matmul(x, t.leaf(w1)), t.leaf(b1)));
    return add_rowvec(matmul(h, t.leaf(w2)), t.leaf(b2));
}

std::vector<Parameter*> MlpHead::params() { return {&w1, &b1, &w2, &b2}; }

// ---- CodeBook / LatentCoder --------------------------------------------------

CodeBook::CodeBook(int K, int d, RngStream& rng, CodebookInit init) {
    if (K < 1) throw std::invalid_argument("CodeBook: K must be >= 1");
    if (d < 1) throw std::invalid_argument("CodeBook: d must be >= 1");
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(K, d);
    if (init == CodebookInit::kGaussian) {
        RngStream r = rng.derive("codebook_init");
        e = gaussian_matrix(r, K, d, 0.02);
    }
    embeddings = Parameter("codebook.E", std::move(e), /*nd=*/true);
}

LatentCoder::LatentCoder(int K, int d, RngStream& rng, CodebookInit init)
    : codebook(K, d, rng, init),
      prior_head("prior", d, 4 * K, K, rng),
      posterior_head("posterior", 2 * d, 4 * K, K, rng) {}

std::vector<Parameter*> LatentCoder::params() {
    std::vector<Parameter*> out{&codebook.embeddings};
    for (auto* p : prior_head.params()) out.push_back(p);
    for (auto* p : posterior_head.params()) out.push_back(p);
    return out;
}

CategoricalDist LatentCoder::prior_logits(const Vector& h_x) {
    Tape t(false);
    Var logits = prior_logits_g(t, t.constant(h_x.transpose()));
    return CategoricalDist(logits.value().row(0).transpose());
}

Var LatentCoder::prior_logits_g(Tape& t, const Var& h_x) {
    if (h_x.cols() != d())
        throw std::invalid_argument("prior_logits: state width " + std::to_string(h_x.cols()) +
                                    " != d=" + std::to_string(d()));
    return prior_head.forward_g(t, h_x);
}

CategoricalDist LatentCoder::posterior_logits(const Vector& h_xyw, const Vector& h_xyl) {
    Tape t(false);
    Var logits =
        posterior_logits_g(t, t.constant(h_xyw.transpose()), t.constant(h_xyl.transpose()));
    return CategoricalDist(logits.value().row(0).transpose());
}

Var LatentCoder::posterior_logits_g(Tape& t, const Var& h_xyw, const Var& h_xyl) {
    if (h_xyw.cols() != d() || h_xyl.cols() != d())
        throw std::invalid_argument("posterior_logits: state width mismatch with d=" +
                                    std::to_string(d()));
    // chosen state first, then rejected
    return posterior_head.forward_g(t, hcat({h_xyw, h_xyl}));
}

// ---- mixing ------------------------------------------------------------------

double g_schedule(long step, long total_steps) {
    if (total_steps < 1) throw std::invalid_argument("g_schedule: total_steps must be positive");
    if (step < 0) throw std::invalid_argument("g_schedule: step must be nonnegative");
    if (step > total_steps) {
        std::cerr << "[lpc] warning: g_schedule step " << step << " past total_steps "
                  << total_steps << ", clamping g to 1\n";
        return 1.0;
    }
    return static_cast<double>(step) / static_cast<double>(total_steps);
}

Eigen::RowVectorXd gumbel_noise_row(RngStream& rng, int K) {
    Eigen::RowVectorXd n(K);
    for (int k = 0; k < K; ++k) n[k] = rng.next_gumbel();
    return n;
}

LatentSample mix_latent(const CategoricalDist& prior, const CategoricalDist& posterior,
                        double g, double tau_g, RngStream& rng, CodeBook& codebook, bool hard,
                        const std::optional<Vector>& noise_prior_override,
                        const std::optional<Vector>& noise_posterior_override) {
    const int K = codebook.K();
    if (prior.size() != K || posterior.size() != K)
        throw std::invalid_argument("mix_latent: K mismatch with codebook");
    if (g < 0.0 || g > 1.0) throw std::invalid_argument("mix_latent: g must lie in [0,1]");
    // prior noise drawn first, posterior second; the draws are independent
    const Vector cp = gumbel_softmax(prior.logits, tau_g, rng, hard, noise_prior_override);
    const Vector cq = gumbel_softmax(posterior.logits, tau_g, rng, hard, noise_posterior_override);
    LatentSample s;
    s.weights = g * cp + (1.0 - g) * cq;
    // materialized (1 x K) * (K x d) product, the same kernel the graph uses
    const Eigen::MatrixXd wrow = s.weights.transpose();
    s.z = (wrow * codebook.embeddings.value).transpose();
    s.g_used = g;
    return s;
}

LatentSampleG mix_latent_g(Tape& t, const Var& prior_logits, const Var& posterior_logits,
                           double g, double tau_g, const Eigen::RowVectorXd& noise_prior,
                           const Eigen::RowVectorXd& noise_posterior, const Var& embeddings,
                           bool hard) {
    if (g < 0.0 || g > 1.0) throw std::invalid_argument("mix_latent: g must lie in [0,1]");
    if (prior_logits.cols() != embeddings.rows() || posterior_logits.cols() != embeddings.rows())
        throw std::invalid_argument("mix_latent: K mismatch with codebook");
    Var cp = gumbel_softmax(prior_logits, tau_g, noise_prior, hard);
    Var cq = gumbel_softmax(posterior_logits, tau_g, noise_posterior, hard);
    LatentSampleG s;
    s.weights = g * cp + (1.0 - g) * cq;
    s.z = matmul(s.weights, embeddings);
    s.g_used = g;
    return s;
}

Vector expected_latent(const CategoricalDist& prior, CodeBook& codebook) {
    if (prior.size() != codebook.K())
        throw std::invalid_argument("expected_latent: K mismatch with codebook");
    const Eigen::MatrixXd prow = prior.probs().transpose();
    return (prow * codebook.embeddings.value).transpose();
}

Var expected_latent_g(Tape& t, const Var& prior_logits, const Var& embeddings) {
    if (prior_logits.cols() != embeddings.rows())
        throw std::invalid_argument("expected_latent: K mismatch with codebook");
    (void)t;
    return matmul(rowwise_softmax(prior_logits), embeddings);
}

}  // namespace lpc
