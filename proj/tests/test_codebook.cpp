#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "lpc/codebook.hpp"
#include "lpc/grad_check.hpp"

using namespace lpc;

namespace {

Vector gaussian_vec(RngStream& r, int n, double scale = 1.0) {
    Vector v(n);
    for (int i = 0; i < n; ++i) v[i] = scale * r.next_gaussian();
    return v;
}

void randomize(Parameter& p, RngStream& r, double scale = 0.3) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) *(p.value.data() + i) = scale * r.next_gaussian();
}

}  // namespace

TEST_CASE("fresh heads emit uniform distributions") {
    RngStream rng(100);
    LatentCoder lc(4, 8, rng);
    RngStream hr(7);
    for (int trial = 0; trial < 5; ++trial) {
        const Vector h = gaussian_vec(hr, 8, 2.0);
        const Vector p = lc.prior_logits(h).probs();
        for (int k = 0; k < 4; ++k) CHECK(p[k] == doctest::Approx(0.25).epsilon(1e-15));
        const Vector q = lc.posterior_logits(h, gaussian_vec(hr, 8)).probs();
        for (int k = 0; k < 4; ++k) CHECK(q[k] == doctest::Approx(0.25).epsilon(1e-15));
    }
}

TEST_CASE("head outputs are deterministic and K=1 degenerates to [1]") {
    RngStream rng(101);
    LatentCoder lc(3, 6, rng);
    RngStream hr(8);
    randomize(lc.prior_head.w2, hr);
    const Vector h = gaussian_vec(hr, 6);
    const Vector a = lc.prior_logits(h).logits;
    const Vector b = lc.prior_logits(h).logits;
    CHECK((a - b).norm() == 0.0);

    RngStream rng1(102);
    LatentCoder one(1, 6, rng1);
    CHECK(one.prior_logits(h).probs()[0] == 1.0);
    CHECK(one.posterior_logits(h, h).probs()[0] == 1.0);
}

TEST_CASE("posterior concatenation is [chosen; rejected] and order-sensitive") {
    RngStream rng(103);
    LatentCoder lc(4, 5, rng);
    RngStream hr(9);
    randomize(lc.posterior_head.w2, hr);
    randomize(lc.posterior_head.b2, hr, 0.05);
    const Vector hw = gaussian_vec(hr, 5), hl = gaussian_vec(hr, 5);

    const Vector got = lc.posterior_logits(hw, hl).logits;

    Eigen::RowVectorXd cat(10);
    cat << hw.transpose(), hl.transpose();
    Eigen::RowVectorXd hidden =
        (cat * lc.posterior_head.w1.value + lc.posterior_head.b1.value)
            .unaryExpr([](double v) { return gelu(v); });
    Eigen::RowVectorXd want = hidden * lc.posterior_head.w2.value + lc.posterior_head.b2.value;
    CHECK((got.transpose() - want).cwiseAbs().maxCoeff() < 1e-12);

    const Vector swapped = lc.posterior_logits(hl, hw).logits;
    CHECK((got - swapped).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("head width mismatches throw") {
    RngStream rng(104);
    LatentCoder lc(2, 4, rng);
    const Vector bad = Vector::Zero(3);
    const Vector ok = Vector::Zero(4);
    CHECK_THROWS_AS(lc.prior_logits(bad), std::invalid_argument);
    CHECK_THROWS_AS(lc.posterior_logits(bad, ok), std::invalid_argument);
    CHECK_THROWS_AS(lc.posterior_logits(ok, bad), std::invalid_argument);
    CHECK_THROWS_AS(CodeBook(0, 4, rng), std::invalid_argument);
    CHECK_THROWS_AS(MlpHead("x", 0, 1, 1, rng), std::invalid_argument);
}

TEST_CASE("g_schedule is the exact linear ramp") {
    CHECK(g_schedule(0, 100) == 0.0);
    CHECK(g_schedule(50, 100) == 0.5);
    CHECK(g_schedule(100, 100) == 1.0);
    CHECK(g_schedule(1, 3) == doctest::Approx(1.0 / 3.0).epsilon(1e-16));
    CHECK(g_schedule(250, 100) == 1.0);  // clamps with a warning
    CHECK_THROWS_AS(g_schedule(-1, 100), std::invalid_argument);
    CHECK_THROWS_AS(g_schedule(0, 0), std::invalid_argument);
    double prev = -1.0;
    for (long s = 0; s <= 64; ++s) {
        const double g = g_schedule(s, 64);
        CHECK(g >= prev);
        CHECK(g == doctest::Approx(s / 64.0).epsilon(1e-16));
        prev = g;
    }
}

TEST_CASE("mix_latent zero-noise hook reproduces the direct average") {
    RngStream rng(105);
    CodeBook cb(2, 3, rng);
    // prior probs [0.5, 0.5], posterior probs [0.25, 0.75]
    CategoricalDist prior((Vector(2) << 0.0, 0.0).finished());
    CategoricalDist post((Vector(2) << std::log(1.0), std::log(3.0)).finished());
    RngStream draw(1);
    const Vector zero = Vector::Zero(2);
    const LatentSample s = mix_latent(prior, post, 0.5, 1.0, draw, cb, false, zero, zero);
    CHECK(s.weights[0] == doctest::Approx(0.375).epsilon(1e-14));
    CHECK(s.weights[1] == doctest::Approx(0.625).epsilon(1e-14));
    CHECK(s.g_used == 0.5);
    const Vector want = 0.375 * cb.embeddings.value.row(0).transpose() +
                        0.625 * cb.embeddings.value.row(1).transpose();
    CHECK((s.z - want).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("mix_latent endpoints ignore the other branch under fixed noise") {
    RngStream rng(106);
    CodeBook cb(4, 6, rng);
    RngStream nr(2);
    const Vector noise_p = gaussian_vec(nr, 4), noise_q = gaussian_vec(nr, 4);
    CategoricalDist prior(gaussian_vec(nr, 4));
    CategoricalDist post_a(gaussian_vec(nr, 4));
    CategoricalDist post_b(gaussian_vec(nr, 4));
    RngStream d1(3), d2(3);
    const LatentSample a = mix_latent(prior, post_a, 1.0, 1.0, d1, cb, false, noise_p, noise_q);
    const LatentSample b = mix_latent(prior, post_b, 1.0, 1.0, d2, cb, false, noise_p, noise_q);
    CHECK((a.weights - b.weights).norm() == 0.0);
    CHECK((a.z - b.z).norm() == 0.0);

    // g = 0 mirrors it for the prior side
    const LatentSample c = mix_latent(post_a, prior, 0.0, 1.0, d1, cb, false, noise_p, noise_q);
    const LatentSample d = mix_latent(post_b, prior, 0.0, 1.0, d2, cb, false, noise_p, noise_q);
    CHECK((c.weights - d.weights).norm() == 0.0);
}

TEST_CASE("mix_latent with one code returns e_1 for any g") {
    RngStream rng(107);
    CodeBook cb(1, 5, rng);
    CategoricalDist prior((Vector(1) << 0.7).finished());
    CategoricalDist post((Vector(1) << -2.0).finished());
    RngStream draw(4);
    for (double g : {0.0, 0.3, 1.0}) {
        const LatentSample s = mix_latent(prior, post, g, 1.0, draw, cb);
        CHECK(s.weights[0] == 1.0);
        CHECK((s.z - cb.embeddings.value.row(0).transpose()).norm() == 0.0);
    }
}

TEST_CASE("mix_latent weights stay on the simplex and zero codebooks give z=0") {
    RngStream rng(108);
    CodeBook cb(6, 4, rng, CodebookInit::kZero);
    CHECK(cb.embeddings.value.norm() == 0.0);
    RngStream lr(5), draw(6);
    for (int trial = 0; trial < 200; ++trial) {
        CategoricalDist prior(gaussian_vec(lr, 6, 2.0));
        CategoricalDist post(gaussian_vec(lr, 6, 2.0));
        const double g = draw.next_unit_open();
        const bool hard = (trial % 3 == 0);
        const LatentSample s = mix_latent(prior, post, g, 0.8, draw, cb, hard);
        CHECK(s.weights.minCoeff() >= 0.0);
        CHECK(std::abs(s.weights.sum() - 1.0) <= 1e-9);
        CHECK(s.z.norm() == 0.0);
    }
}

TEST_CASE("mix_latent argument validation") {
    RngStream rng(109);
    CodeBook cb(3, 4, rng);
    CategoricalDist ok(Vector::Zero(3)), bad(Vector::Zero(2));
    RngStream draw(7);
    CHECK_THROWS_AS(mix_latent(bad, ok, 0.5, 1.0, draw, cb), std::invalid_argument);
    CHECK_THROWS_AS(mix_latent(ok, bad, 0.5, 1.0, draw, cb), std::invalid_argument);
    CHECK_THROWS_AS(mix_latent(ok, ok, -0.1, 1.0, draw, cb), std::invalid_argument);
    CHECK_THROWS_AS(mix_latent(ok, ok, 1.1, 1.0, draw, cb), std::invalid_argument);
    CHECK_THROWS_AS(mix_latent(ok, ok, 0.5, 0.0, draw, cb), std::invalid_argument);
    CHECK_THROWS_AS(expected_latent(bad, cb), std::invalid_argument);
}

TEST_CASE("expected_latent closed forms") {
    RngStream rng(110);
    CodeBook cb(2, 2, rng);
    cb.embeddings.value << 1.0, 0.0, 0.0, 1.0;

    // probs [1, 0]: the second logit underflows to exactly zero probability
    CategoricalDist sure((Vector(2) << 0.0, -2000.0).finished());
    CHECK((expected_latent(sure, cb) - cb.embeddings.value.row(0).transpose()).norm() == 0.0);

    CategoricalDist uniform(Vector::Zero(2));
    const Vector mid = expected_latent(uniform, cb);
    CHECK(mid[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(mid[1] == doctest::Approx(0.5).epsilon(1e-15));

    CategoricalDist skew((Vector(2) << std::log(1.0), std::log(3.0)).finished());
    const Vector z = expected_latent(skew, cb);
    CHECK(z[0] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(z[1] == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("plain and graph paths agree") {
    RngStream rng(111);
    LatentCoder lc(4, 6, rng);
    RngStream hr(12);
    randomize(lc.prior_head.w2, hr, 0.2);
    randomize(lc.posterior_head.w2, hr, 0.2);
    const Vector hx = gaussian_vec(hr, 6), hw = gaussian_vec(hr, 6), hl = gaussian_vec(hr, 6);

    const Vector plain_prior = lc.prior_logits(hx).logits;
    const Vector plain_post = lc.posterior_logits(hw, hl).logits;
    Tape t;
    Var gp = lc.prior_logits_g(t, t.constant(hx.transpose()));
    Var gq = lc.posterior_logits_g(t, t.constant(hw.transpose()), t.constant(hl.transpose()));
    CHECK((gp.value().row(0).transpose() - plain_prior).norm() == 0.0);
    CHECK((gq.value().row(0).transpose() - plain_post).norm() == 0.0);

    RngStream nr(13);
    const Vector np = gaussian_vec(nr, 4), nq = gaussian_vec(nr, 4);
    CategoricalDist prior(plain_prior), post(plain_post);
    RngStream draw(14);
    const LatentSample s =
        mix_latent(prior, post, 0.25, 1.0, draw, lc.codebook, false, np, nq);
    LatentSampleG sg = mix_latent_g(t, gp, gq, 0.25, 1.0, np.transpose(), nq.transpose(),
                                    t.leaf(lc.codebook.embeddings), false);
    CHECK((sg.weights.value().row(0).transpose() - s.weights).norm() == 0.0);
    CHECK((sg.z.value().row(0).transpose() - s.z).norm() == 0.0);

    const Vector ze = expected_latent(prior, lc.codebook);
    Var zg = expected_latent_g(t, gp, t.leaf(lc.codebook.embeddings));
    CHECK((zg.value().row(0).transpose() - ze).norm() == 0.0);
}

TEST_CASE("gradients reach the codebook and both heads through mix_latent") {
    RngStream rng(112);
    LatentCoder lc(3, 4, rng);
    RngStream hr(15);
    // generic point: zero-initialized final layers would block w1 gradients
    for (auto* p : lc.params()) randomize(*p, hr, 0.3);
    const Vector hx = gaussian_vec(hr, 4), hw = gaussian_vec(hr, 4), hl = gaussian_vec(hr, 4);
    RngStream nr(16);
    const Eigen::RowVectorXd np = gumbel_noise_row(nr, 3), nq = gumbel_noise_row(nr, 3);
    const Matrix wz = (Matrix(1, 4) << 0.3, -0.8, 0.5, 1.1).finished();
    const Matrix wc = (Matrix(1, 3) << -0.2, 0.9, 0.4).finished();

    auto build = [&](Tape& t) {
        Var gp = lc.prior_logits_g(t, t.constant(hx.transpose()));
        Var gq = lc.posterior_logits_g(t, t.constant(hw.transpose()), t.constant(hl.transpose()));
        LatentSampleG s = mix_latent_g(t, gp, gq, 0.4, 0.9, np, nq,
                                       t.leaf(lc.codebook.embeddings), false);
        return sum(s.z * t.constant(wz)) + sum(s.weights * t.constant(wc));
    };

    auto params = lc.params();
    for (auto* p : params) p->zero_grad();
    Tape t;
    t.backward(build(t));
    for (auto* p : params) CHECK(p->grad.norm() > 0.0);

    auto loss_value = [&]() {
        Tape nt(false);
        return build(nt).scalar();
    };
    auto res = finite_diff_grad_check(params, loss_value, 1e-5);
    INFO(res.describe());
    CHECK(res.ok(1e-6));
}
