// Discrete latent preference space: code embeddings E = {e_k}, the prior and
// posterior MLP heads, the g-weighted Gumbel-softmax mixing that yields the
// latent vector z, and the linear g schedule.
//
// Functions with the _g suffix build nodes on a caller-supplied tape; the
// plain overloads evaluate the same math on a non-tracking tape, so both
// paths produce bitwise-identical values.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lpc/numeric.hpp"
#include "lpc/rng.hpp"
#include "lpc/tape.hpp"

namespace lpc {

enum class CodebookInit { kGaussian, kZero };

// Convex combination over codes and the resulting latent vector.
struct LatentSample {
    Vector weights;  // length K, nonnegative, sums to 1
    Vector z;        // length d, sum_k weights[k] * e_k
    double g_used = 0.0;
};

// Graph-valued counterpart used inside training losses.
struct LatentSampleG {
    Var weights;  // 1 x K
    Var z;        // 1 x d
    double g_used = 0.0;
};

// Two affine layers with a GELU between; the final layer starts at zero so
// freshly built heads emit uniform distributions.
struct MlpHead {
    Parameter w1, b1, w2, b2;

    MlpHead() = default;
    MlpHead(const std::string& prefix, int in, int hidden, int out, RngStream& rng);

    int in_width() const { return static_cast<int>(w1.value.rows()); }
    int out_width() const { return static_cast<int>(w2.value.cols()); }

    // x: n x in, returns n x out.
    Var forward_g(Tape& t, const Var& x);

    std::vector<Parameter*> params();
};

struct CodeBook {
    Parameter embeddings;  // K x d, excluded from weight decay

    CodeBook() = default;
    CodeBook(int K, int d, RngStream& rng, CodebookInit init = CodebookInit::kGaussian);

    int K() const { return static_cast<int>(embeddings.value.rows()); }
    int d() const { return static_cast<int>(embeddings.value.cols()); }
};

// Codebook plus the two inference heads; owns all latent-side parameters.
struct LatentCoder {
    CodeBook codebook;
    MlpHead prior_head;      // d -> K
    MlpHead posterior_head;  // 2d -> K

    LatentCoder() = default;
    LatentCoder(int K, int d, RngStream& rng, CodebookInit init = CodebookInit::kGaussian);

    int K() const { return codebook.K(); }
    int d() const { return codebook.d(); }
    std::vector<Parameter*> params();

    // p(z|x) from the policy state at the last prompt token.
    CategoricalDist prior_logits(const Vector& h_x);
    Var prior_logits_g(Tape& t, const Var& h_x);  // 1 x d -> 1 x K

    // q(z | x, y_w > y_l) from the concatenation [h_chosen; h_rejected].
    CategoricalDist posterior_logits(const Vector& h_xyw, const Vector& h_xyl);
    Var posterior_logits_g(Tape& t, const Var& h_xyw, const Var& h_xyl);
};

// g = step / total_steps, clamped to 1 (with a warning) past the end.
double g_schedule(long step, long total_steps);

// Draws K independent standard Gumbel variates as a row vector.
Eigen::RowVectorXd gumbel_noise_row(RngStream& rng, int K);

// c = g * GS(prior) + (1-g) * GS(posterior), z = sum_k c_k e_k. The two
// Gumbel draws are independent; overrides replace them in tests.
LatentSample mix_latent(const CategoricalDist& prior, const CategoricalDist& posterior,
                        double g, double tau_g, RngStream& rng, CodeBook& codebook,
                        bool hard = false,
                        const std::optional<Vector>& noise_prior_override = std::nullopt,
                        const std::optional<Vector>& noise_posterior_override = std::nullopt);

// Same mixing on the tape; the caller supplies the noise rows (drawn via
// gumbel_noise_row) so training code controls the rng stream.
LatentSampleG mix_latent_g(Tape& t, const Var& prior_logits, const Var& posterior_logits,
                           double g, double tau_g, const Eigen::RowVectorXd& noise_prior,
                           const Eigen::RowVectorXd& noise_posterior, const Var& embeddings,
                           bool hard = false);

// z_bar = sum_k softmax(prior)_k e_k; the deterministic evaluation latent.
Vector expected_latent(const CategoricalDist& prior, CodeBook& codebook);
Var expected_latent_g(Tape& t, const Var& prior_logits, const Var& embeddings);

}  // namespace lpc
