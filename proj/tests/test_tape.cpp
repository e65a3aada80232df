#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "lpc/grad_check.hpp"
#include "lpc/numeric.hpp"
#include "lpc/rng.hpp"
#include "lpc/tape.hpp"

using namespace lpc;

namespace {

Matrix randm(RngStream& r, int rows, int cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = scale * r.next_gaussian();
    return m;
}

// Runs analytic backward once, then compares against central differences.
GradCheckResult check_graph(std::vector<Parameter*> params,
                            const std::function<Var(Tape&)>& build) {
    for (auto* p : params) p->zero_grad();
    Tape t;
    t.backward(build(t));
    auto loss_value = [&]() {
        Tape nt(false);
        return build(nt).scalar();
    };
    return finite_diff_grad_check(params, loss_value, 1e-5);
}

}  // namespace

// ---- forward values ----------------------------------------------------------

TEST_CASE("elementwise and scalar op values match Eigen") {
    RngStream r(1);
    const Matrix av = randm(r, 3, 4), bv = randm(r, 3, 4);
    Tape t;
    Var a = t.constant(av), b = t.constant(bv);
    CHECK(((a + b).value() - (av + bv)).norm() == 0.0);
    CHECK(((a - b).value() - (av - bv)).norm() == 0.0);
    CHECK(((a * b).value() - av.cwiseProduct(bv)).norm() == 0.0);
    CHECK(((2.5 * a).value() - 2.5 * av).norm() == 0.0);
    CHECK(((-a).value() + av).norm() == 0.0);
    CHECK(((a + 1.5).value() - (av.array() + 1.5).matrix()).norm() == 0.0);
    CHECK(((a - 1.5).value() - (av.array() - 1.5).matrix()).norm() == 0.0);
    CHECK(((1.5 - a).value() - (1.5 - av.array()).matrix()).norm() == 0.0);
}

TEST_CASE("matmul, matmul_nt, add_rowvec, slicing and hcat values") {
    RngStream r(2);
    const Matrix av = randm(r, 3, 4), bv = randm(r, 4, 5), cv = randm(r, 5, 4);
    const Matrix rowv = randm(r, 1, 4);
    Tape t;
    Var a = t.constant(av), b = t.constant(bv), c = t.constant(cv), row = t.constant(rowv);
    CHECK((matmul(a, b).value() - av * bv).norm() < 1e-15);
    CHECK((matmul_nt(a, c).value() - av * cv.transpose()).norm() < 1e-15);
    Matrix shifted = av;
    shifted.rowwise() += Eigen::RowVectorXd(rowv.row(0));
    CHECK((add_rowvec(a, row).value() - shifted).norm() == 0.0);
    CHECK((rows(a, 1, 2).value() - av.middleRows(1, 2)).norm() == 0.0);
    CHECK((cols(a, 1, 3).value() - av.middleCols(1, 3)).norm() == 0.0);
    Matrix cat(3, 8);
    cat << av, av;
    CHECK((hcat({a, a}).value() - cat).norm() == 0.0);
}

TEST_CASE("rowwise softmax and log softmax match the vector oracles") {
    RngStream r(3);
    const Matrix av = randm(r, 4, 6, 3.0);
    Tape t;
    Var a = t.constant(av);
    const Matrix s = rowwise_softmax(a).value();
    const Matrix ls = rowwise_log_softmax(a).value();
    for (int i = 0; i < 4; ++i) {
        const Vector want = softmax(av.row(i).transpose().eval());
        CHECK((s.row(i).transpose() - want).cwiseAbs().maxCoeff() < 1e-14);
        CHECK(s.row(i).sum() == doctest::Approx(1.0).epsilon(1e-13));
        const Vector wantl = log_softmax(av.row(i).transpose().eval());
        CHECK((ls.row(i).transpose() - wantl).cwiseAbs().maxCoeff() < 1e-13);
    }
}

TEST_CASE("layer_norm standardizes each row") {
    RngStream r(4);
    const Matrix xv = randm(r, 5, 8, 2.0);
    Tape t;
    Var x = t.constant(xv);
    Var gain = t.constant(Matrix::Ones(1, 8));
    Var bias = t.constant(Matrix::Zero(1, 8));
    const Matrix out = layer_norm(x, gain, bias).value();
    for (int i = 0; i < 5; ++i) {
        CHECK(out.row(i).mean() == doctest::Approx(0.0).epsilon(1e-12));
        const double var = (out.row(i).array() - out.row(i).mean()).square().sum() / 8.0;
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps shrinks it slightly
    }
    // affine params pass through
    Var gain2 = t.constant(2.0 * Matrix::Ones(1, 8));
    Var bias2 = t.constant(Matrix::Ones(1, 8));
    const Matrix out2 = layer_norm(x, gain2, bias2).value();
    CHECK((out2 - (2.0 * out.array() + 1.0).matrix()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gelu, sigmoid, log_sigmoid, square values") {
    Matrix xv(1, 5);
    xv << -2.0, -0.5, 0.0, 0.5, 2.0;
    Tape t;
    Var x = t.constant(xv);
    const Matrix g = gelu(x).value();
    CHECK(g(0, 2) == 0.0);
    CHECK(g(0, 4) == doctest::Approx(2.0 * 0.5 * (1.0 + std::erf(2.0 / std::sqrt(2.0)))));
    CHECK(g(0, 0) < 0.0);  // small negative dip
    const Matrix s = sigmoid(x).value();
    const Matrix lsg = log_sigmoid(x).value();
    for (int j = 0; j < 5; ++j) {
        CHECK(s(0, j) == doctest::Approx(lpc::sigmoid(xv(0, j))).epsilon(1e-15));
        CHECK(lsg(0, j) == doctest::Approx(lpc::log_sigmoid(xv(0, j))).epsilon(1e-15));
    }
    CHECK((square(x).value() - xv.cwiseProduct(xv)).norm() == 0.0);
}

TEST_CASE("embed_rows, pick, sum, mean_all values") {
    RngStream r(5);
    const Matrix tv = randm(r, 6, 3);
    Tape t;
    Var tab = t.constant(tv);
    const std::vector<int> ids{4, 0, 0, 5};
    const Matrix e = embed_rows(tab, ids).value();
    CHECK(e.rows() == 4);
    for (int i = 0; i < 4; ++i) CHECK((e.row(i) - tv.row(ids[i])).norm() == 0.0);

    Var m = t.constant(tv);
    const std::vector<int> cols_pick{2, 1, 0, 2, 1, 0};
    const Matrix p = pick(m, cols_pick).value();
    for (int i = 0; i < 6; ++i) CHECK(p(i, 0) == tv(i, cols_pick[i]));

    CHECK(sum(tab).scalar() == doctest::Approx(tv.sum()).epsilon(1e-14));
    CHECK(mean_all(tab).scalar() == doctest::Approx(tv.mean()).epsilon(1e-14));
}

TEST_CASE("straight_through_onehot forward is the rowwise argmax vertex") {
    Matrix sv(2, 3);
    sv << 0.2, 0.5, 0.3, 0.9, 0.05, 0.05;
    Tape t;
    const Matrix out = straight_through_onehot(t.constant(sv)).value();
    Matrix want(2, 3);
    want << 0, 1, 0, 1, 0, 0;
    CHECK((out - want).norm() == 0.0);
}

// ---- analytic gradients --------------------------------------------------------

TEST_CASE("gradient of sum(x .* y) is exactly the other factor") {
    RngStream r(6);
    Parameter px("x", randm(r, 3, 3));
    Parameter py("y", randm(r, 3, 3));
    Tape t;
    t.backward(sum(t.leaf(px) * t.leaf(py)));
    CHECK((px.grad - py.value).norm() == 0.0);
    CHECK((py.grad - px.value).norm() == 0.0);
}

TEST_CASE("parameter gradients accumulate across tapes until zeroed") {
    Parameter p("p", Matrix::Ones(2, 2));
    for (int pass = 0; pass < 2; ++pass) {
        Tape t;
        t.backward(sum(square(t.leaf(p))));
    }
    CHECK((p.grad - 4.0 * p.value).norm() == 0.0);  // d sum(p^2)/dp = 2p, twice
    p.zero_grad();
    CHECK(p.grad.norm() == 0.0);
}

TEST_CASE("leaf is deduplicated per tape and self-products differentiate correctly") {
    Parameter p("p", (Matrix(1, 2) << 3.0, -2.0).finished());
    Tape t;
    Var a = t.leaf(p);
    Var b = t.leaf(p);
    CHECK(a.id() == b.id());
    t.backward(sum(a * b));
    CHECK((p.grad - 2.0 * p.value).norm() == 0.0);
}

TEST_CASE("straight-through backward is the identity") {
    RngStream r(7);
    Parameter p("p", randm(r, 1, 4));
    const Matrix w = randm(r, 1, 4);

    Parameter q("q", p.value);
    {
        Tape t;
        Var soft = rowwise_softmax(t.leaf(p));
        t.backward(sum(straight_through_onehot(soft) * t.constant(w)));
    }
    {
        Tape t;
        Var soft = rowwise_softmax(t.leaf(q));
        t.backward(sum(soft * t.constant(w)));
    }
    CHECK((p.grad - q.grad).cwiseAbs().maxCoeff() < 1e-15);
}

// ---- finite-difference sweeps --------------------------------------------------

TEST_CASE("finite differences confirm a dense transformer-like path") {
    RngStream r(8);
    Parameter table("table", randm(r, 6, 4, 0.5));
    Parameter w1("w1", randm(r, 4, 8, 0.5));
    Parameter b1("b1", randm(r, 1, 8, 0.1));
    Parameter gain("gain", Matrix::Ones(1, 8) + randm(r, 1, 8, 0.1));
    Parameter bias("bias", randm(r, 1, 8, 0.1));
    Parameter w2("w2", randm(r, 5, 8, 0.5));
    const std::vector<int> ids{2, 0, 5, 3};
    const std::vector<int> targets{1, 4, 0, 2};

    auto build = [&](Tape& t) {
        Var x = embed_rows(t.leaf(table), ids);
        Var h = gelu(add_rowvec(matmul(x, t.leaf(w1)), t.leaf(b1)));
        Var n = layer_norm(h, t.leaf(gain), t.leaf(bias));
        Var logits = matmul_nt(n, t.leaf(w2));
        Var lp = rowwise_log_softmax(logits);
        return -mean_all(pick(lp, targets));
    };
    auto res = check_graph({&table, &w1, &b1, &gain, &bias, &w2}, build);
    INFO(res.describe());
    CHECK(res.ok(1e-6));
    CHECK(res.coords_checked == 24 + 32 + 8 + 8 + 8 + 40);
}

TEST_CASE("finite differences confirm slicing, hcat and scalar arithmetic") {
    RngStream r(9);
    Parameter a("a", randm(r, 4, 3));
    Parameter b("b", randm(r, 4, 2));

    auto build = [&](Tape& t) {
        Var va = t.leaf(a), vb = t.leaf(b);
        Var joined = hcat({va, vb, 2.0 * va});
        Var mid = rows(joined, 1, 2);
        Var left = cols(mid, 0, 5);
        Var y = sigmoid(left) - 0.25;
        Var z = (3.0 - y) * (y + 1.5);
        return mean_all(square(z)) + sum(log_sigmoid(vb));
    };
    auto res = check_graph({&a, &b}, build);
    INFO(res.describe());
    CHECK(res.ok(1e-6));
}

TEST_CASE("finite differences confirm softmax-family backward passes") {
    RngStream r(10);
    Parameter logits("logits", randm(r, 3, 5, 2.0));
    const Matrix mask = randm(r, 3, 5);

    auto build = [&](Tape& t) {
        Var l = t.leaf(logits);
        Var s = rowwise_softmax(l);
        Var ls = rowwise_log_softmax(0.5 * l);
        return sum(s * t.constant(mask)) + mean_all(ls * t.constant(mask));
    };
    auto res = check_graph({&logits}, build);
    INFO(res.describe());
    CHECK(res.ok(1e-6));
}

TEST_CASE("finite differences confirm the kl and gumbel composites") {
    RngStream r(11);
    Parameter ql("ql", randm(r, 1, 6));
    Parameter pl("pl", randm(r, 1, 6));
    Eigen::RowVectorXd noise(6);
    RngStream g = r.derive("noise");
    for (int i = 0; i < 6; ++i) noise[i] = g.next_gumbel();
    const Matrix w = randm(r, 1, 6);

    auto build = [&](Tape& t) {
        Var kl = categorical_kl(t.leaf(ql), t.leaf(pl));
        Var soft = gumbel_softmax(t.leaf(ql), 0.7, noise, false);
        return kl + sum(soft * t.constant(w));
    };
    auto res = check_graph({&ql, &pl}, build);
    INFO(res.describe());
    CHECK(res.ok(1e-6));
}

TEST_CASE("subsampled grad check still reports sane results") {
    RngStream r(12);
    Parameter a("a", randm(r, 10, 10));
    for (auto* p : {&a}) p->zero_grad();
    Tape t;
    t.backward(sum(square(t.leaf(a))));
    auto loss_value = [&]() {
        Tape nt(false);
        return sum(square(nt.leaf(a))).scalar();
    };
    RngStream pick_rng(13);
    auto res = finite_diff_grad_check({&a}, loss_value, 1e-5, 20, &pick_rng);
    CHECK(res.coords_checked == 20);
    CHECK(res.ok(1e-6));
    auto res2 = finite_diff_grad_check({&a}, loss_value, 1e-5, 20, nullptr);
    CHECK(res2.coords_checked == 20);
    CHECK(res2.ok(1e-6));
}

// ---- composite values ----------------------------------------------------------

TEST_CASE("tape categorical_kl matches the scalar oracle") {
    Tape t;
    Var ql = t.constant((Matrix(1, 2) << 0.0, 0.0).finished());
    Var pl = t.constant((Matrix(1, 2) << std::log(1.0), std::log(3.0)).finished());
    CHECK(categorical_kl(ql, pl).scalar() == doctest::Approx(0.1438410362258904).epsilon(1e-13));
    CHECK(categorical_kl(ql, ql).scalar() == doctest::Approx(0.0));
}

TEST_CASE("tape gumbel_softmax with zero noise is the tempered softmax") {
    Tape t;
    Var logits = t.constant((Matrix(1, 3) << 0.2, -0.1, 0.7).finished());
    const Eigen::RowVectorXd zero = Eigen::RowVectorXd::Zero(3);
    const Matrix w = gumbel_softmax(logits, 0.5, zero, false).value();
    const Vector expect = softmax((Vector(3) << 0.4, -0.2, 1.4).finished());
    CHECK((w.row(0).transpose() - expect).cwiseAbs().maxCoeff() < 1e-14);

    const Matrix h = gumbel_softmax(logits, 0.5, zero, true).value();
    CHECK(h(0, 2) == 1.0);
    CHECK(h.sum() == 1.0);
}

// ---- error handling -----------------------------------------------------------

TEST_CASE("shape, tape and domain violations throw") {
    Tape t, other;
    Var a = t.constant(Matrix::Ones(2, 2));
    Var b = t.constant(Matrix::Ones(2, 3));
    Var c = other.constant(Matrix::Ones(2, 2));
    CHECK_THROWS_AS(a + b, std::invalid_argument);
    CHECK_THROWS_AS(a * b, std::invalid_argument);
    CHECK_THROWS_AS(a + c, std::invalid_argument);
    CHECK_THROWS_AS(matmul(b, b), std::invalid_argument);
    CHECK_THROWS_AS(matmul_nt(a, b), std::invalid_argument);
    CHECK_THROWS_AS(add_rowvec(a, b), std::invalid_argument);
    CHECK_THROWS_AS(rows(a, 1, 2), std::invalid_argument);
    CHECK_THROWS_AS(cols(a, -1, 1), std::invalid_argument);
    CHECK_THROWS_AS(hcat({}), std::invalid_argument);
    CHECK_THROWS_AS(hcat({a, b.tape()->constant(Matrix::Ones(3, 1))}), std::invalid_argument);
    CHECK_THROWS_AS(embed_rows(a, {0, 2}), std::out_of_range);
    CHECK_THROWS_AS(pick(a, {0}), std::invalid_argument);
    CHECK_THROWS_AS(pick(a, {0, 5}), std::out_of_range);
    CHECK_THROWS_AS(layer_norm(a, b, b), std::invalid_argument);
    const Eigen::RowVectorXd noise = Eigen::RowVectorXd::Zero(2);
    Var row = t.constant(Matrix::Zero(1, 2));
    CHECK_THROWS_AS(gumbel_softmax(row, 0.0, noise), std::invalid_argument);
    CHECK_THROWS_AS(gumbel_softmax(a, 1.0, noise), std::invalid_argument);
    CHECK_THROWS_AS(categorical_kl(a, a), std::invalid_argument);
}

TEST_CASE("backward preconditions") {
    {
        Tape t;
        Var a = t.constant(Matrix::Ones(2, 2));
        CHECK_THROWS_AS(t.backward(a), std::invalid_argument);  // not 1x1
        Var s = sum(a);
        t.backward(s);
        CHECK_THROWS_AS(t.backward(s), std::logic_error);  // double sweep
    }
    {
        Tape t(false);
        CHECK_FALSE(t.tracking());
        Var s = sum(t.constant(Matrix::Ones(2, 2)));
        CHECK(s.scalar() == 4.0);
        CHECK_THROWS_AS(t.backward(s), std::logic_error);
    }
    {
        Tape t, u;
        Var s = sum(t.constant(Matrix::Ones(1, 1)));
        CHECK_THROWS_AS(u.backward(s), std::invalid_argument);
    }
    Var dangling;
    CHECK_FALSE(dangling.valid());
    CHECK_THROWS_AS(dangling.value(), std::logic_error);
    Tape t;
    CHECK_THROWS_AS(t.constant(Matrix::Ones(2, 2)).scalar(), std::logic_error);
}
