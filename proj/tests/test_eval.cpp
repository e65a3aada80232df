#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lpc/eval.hpp"

using namespace lpc;

namespace {

TransformerConfig tiny_cfg() {
    TransformerConfig tc;
    tc.d_model = 16;
    tc.n_layers = 1;
    tc.n_heads = 2;
    tc.ffn_width = 32;
    tc.context_length = 64;
    return tc;
}

std::vector<PreferenceTriple> tiny_dataset(long n, std::uint64_t seed) {
    RngStream r(seed);
    SamplerParams sp;
    sp.min_len = 6;
    sp.max_len = 12;
    GenResult res = gen_synthetic(n, default_factors(), sp, r);
    REQUIRE(res.triples.size() == static_cast<std::size_t>(n));
    return res.triples;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream f(path);
    REQUIRE(f.good());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line)) lines.push_back(line);
    return lines;
}

const std::vector<std::string> kAabb = {"A", "A", "B", "B"};

}  // namespace

// ---- latent mode parsing -----------------------------------------------------------

TEST_CASE("parse_latent_mode round trips every mode") {
    for (LatentMode m : {LatentMode::kExpected, LatentMode::kSampled, LatentMode::kMode,
                         LatentMode::kNone})
        CHECK(parse_latent_mode(latent_mode_name(m)) == m);
    CHECK_THROWS_AS(parse_latent_mode("argmax"), std::invalid_argument);
    CHECK_THROWS_AS(parse_latent_mode(""), std::invalid_argument);
}

// ---- reward comparison -------------------------------------------------------------

TEST_CASE("reward_preference_correct compares implicit rewards and loses ties") {
    TripleLogProbs t;
    t.policy_lp_w = -1.0;
    t.ref_lp_w = -1.5;  // reward_w = beta * 0.5
    t.policy_lp_l = -2.0;
    t.ref_lp_l = -2.1;  // reward_l = beta * 0.1
    CHECK(reward_preference_correct(t, 0.1));

    std::swap(t.policy_lp_w, t.policy_lp_l);
    std::swap(t.ref_lp_w, t.ref_lp_l);
    CHECK_FALSE(reward_preference_correct(t, 0.1));

    TripleLogProbs tie;  // all zeros: both rewards equal
    CHECK_FALSE(reward_preference_correct(tie, 0.1));
}

TEST_CASE("reward_preference_correct is invariant to beta and shared shifts") {
    RngStream r(11);
    for (int i = 0; i < 50; ++i) {
        TripleLogProbs t;
        t.policy_lp_w = -5.0 * r.next_unit_open();
        t.policy_lp_l = -5.0 * r.next_unit_open();
        t.ref_lp_w = -5.0 * r.next_unit_open();
        t.ref_lp_l = -5.0 * r.next_unit_open();
        const bool base = reward_preference_correct(t, 0.1);
        CHECK(reward_preference_correct(t, 7.3) == base);

        // adding one constant to a completion's policy and ref scores cancels
        TripleLogProbs shifted = t;
        shifted.policy_lp_w += 1.7;
        shifted.ref_lp_w += 1.7;
        shifted.policy_lp_l -= 0.4;
        shifted.ref_lp_l -= 0.4;
        CHECK(reward_preference_correct(shifted, 0.1) == base);
    }
}

// ---- preference accuracy -----------------------------------------------------------

TEST_CASE("preference_accuracy: identical policy and reference ties every triple") {
    RngStream r(3);
    PolicyModel policy(tiny_cfg(), r);
    Transformer ref = policy.tf;
    const auto ds = tiny_dataset(20, 5);
    CHECK(preference_accuracy(policy, ref, ds, 0.1, LatentMode::kNone) == 0.0);
}

TEST_CASE("preference_accuracy: perturbed policy sits near chance") {
    RngStream r(3);
    PolicyModel policy(tiny_cfg(), r);
    Transformer ref = policy.tf;
    RngStream noise(17);
    for (Eigen::Index i = 0; i < policy.tf.head_w.value.rows(); ++i)
        for (Eigen::Index j = 0; j < policy.tf.head_w.value.cols(); ++j)
            policy.tf.head_w.value(i, j) += 0.05 * noise.next_gaussian();
    const auto ds = tiny_dataset(200, 5);
    const double acc = preference_accuracy(policy, ref, ds, 0.1, LatentMode::kNone);
    CHECK(acc > 0.35);
    CHECK(acc < 0.65);
}

TEST_CASE("preference_accuracy_detailed: per-source rates aggregate to overall") {
    RngStream rp(3), rr(4);
    PolicyModel policy(tiny_cfg(), rp);
    Transformer ref(tiny_cfg(), rr);
    const auto ds = tiny_dataset(60, 9);
    const AccuracyBreakdown b =
        preference_accuracy_detailed(policy, ref, ds, 0.1, LatentMode::kNone);
    CHECK(b.n == 60);
    CHECK(b.overall >= 0.0);
    CHECK(b.overall <= 1.0);

    std::map<std::string, long> counts;
    for (const auto& tr : ds) ++counts[tr.source];
    CHECK(b.per_source.size() == counts.size());
    double weighted = 0.0;
    for (const auto& [src, rate] : b.per_source) {
        REQUIRE(counts.count(src) == 1);
        weighted += rate * static_cast<double>(counts[src]);
    }
    CHECK(weighted / static_cast<double>(b.n) == doctest::Approx(b.overall).epsilon(1e-12));
}

TEST_CASE("preference_accuracy: argument validation") {
    RngStream r(3);
    PolicyModel vanilla(tiny_cfg(), r);
    Transformer ref = vanilla.tf;
    const auto ds = tiny_dataset(4, 5);
    CHECK_THROWS_AS(
        preference_accuracy(vanilla, ref, {}, 0.1, LatentMode::kNone),
        std::invalid_argument);
    CHECK_THROWS_AS(
        preference_accuracy(vanilla, ref, ds, 0.1, LatentMode::kExpected),
        std::invalid_argument);
    CHECK_THROWS_AS(
        preference_accuracy(vanilla, ref, ds, 0.1, LatentMode::kSampled),
        std::invalid_argument);
}

TEST_CASE("preference_accuracy: K=1 collapses all latent modes to one answer") {
    RngStream r(3);
    PolicyModel policy(tiny_cfg(), 1, r);
    RngStream rr(4);
    Transformer ref(tiny_cfg(), rr);
    const auto ds = tiny_dataset(24, 5);
    const double e = preference_accuracy(policy, ref, ds, 0.1, LatentMode::kExpected);
    const double m = preference_accuracy(policy, ref, ds, 0.1, LatentMode::kMode);
    const double s = preference_accuracy(policy, ref, ds, 0.1, LatentMode::kSampled, 99);
    CHECK(e == m);
    CHECK(e == s);
}

TEST_CASE("preference_accuracy: zero codebook scores exactly like the vanilla path") {
    RngStream r(3);
    PolicyModel policy(tiny_cfg(), 4, r, CodebookInit::kZero);
    RngStream rr(4);
    Transformer ref(tiny_cfg(), rr);
    const auto ds = tiny_dataset(24, 5);
    const double none = preference_accuracy(policy, ref, ds, 0.1, LatentMode::kNone);
    for (LatentMode mode : {LatentMode::kExpected, LatentMode::kMode, LatentMode::kSampled})
        CHECK(preference_accuracy(policy, ref, ds, 0.1, mode) == none);
}

TEST_CASE("preference_accuracy: sampled mode is deterministic in eval_seed") {
    RngStream r(3);
    PolicyModel policy(tiny_cfg(), 8, r);
    RngStream rr(4);
    Transformer ref(tiny_cfg(), rr);
    const auto ds = tiny_dataset(24, 5);
    const double a = preference_accuracy(policy, ref, ds, 0.1, LatentMode::kSampled, 7);
    const double b = preference_accuracy(policy, ref, ds, 0.1, LatentMode::kSampled, 7);
    CHECK(a == b);
}

// ---- prior views -------------------------------------------------------------------

TEST_CASE("prior_assignments and prior_probability_vectors agree") {
    RngStream r(3);
    PolicyModel policy(tiny_cfg(), 8, r);
    const auto ds = tiny_dataset(12, 5);
    const std::vector<int> a = prior_assignments(policy, ds);
    const std::vector<Vector> p = prior_probability_vectors(policy, ds);
    REQUIRE(a.size() == ds.size());
    REQUIRE(p.size() == ds.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(p[i].size() == 8);
        CHECK(p[i].minCoeff() >= 0.0);
        CHECK(p[i].sum() == doctest::Approx(1.0).epsilon(1e-12));
        int argmax = 0;
        p[i].maxCoeff(&argmax);
        CHECK(a[i] == argmax);
        CHECK(a[i] >= 0);
        CHECK(a[i] < 8);
    }

    PolicyModel vanilla(tiny_cfg(), r);
    CHECK_THROWS_AS(prior_assignments(vanilla, ds), std::invalid_argument);
    CHECK_THROWS_AS(prior_probability_vectors(vanilla, ds), std::invalid_argument);
}

// ---- clustering metrics ------------------------------------------------------------

TEST_CASE("factor_purity on hand-checked partitions") {
    CHECK(factor_purity({0, 0, 1, 1}, kAabb) == 1.0);
    CHECK(factor_purity({1, 1, 0, 0}, kAabb) == 1.0);  // relabel invariance
    CHECK(factor_purity({0, 1, 0, 1}, kAabb) == 0.5);
    CHECK(factor_purity({0, 0, 0, 0}, kAabb) == 0.5);  // one cluster, majority 2/4
    CHECK(factor_purity({0, 1, 2, 3}, kAabb) == 1.0);  // singletons are trivially pure
    // clusters weigh equally regardless of size: (3/5 + 1/1) / 2
    CHECK(factor_purity({0, 0, 0, 0, 0, 1}, {"A", "B", "A", "B", "A", "B"}) ==
          doctest::Approx(0.8).epsilon(1e-15));
    CHECK_THROWS_AS(factor_purity({0, 1}, kAabb), std::invalid_argument);
    CHECK_THROWS_AS(factor_purity({}, {}), std::invalid_argument);
}

TEST_CASE("adjusted_rand_index on hand-checked partitions") {
    CHECK(adjusted_rand_index({0, 0, 1, 1}, kAabb) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(adjusted_rand_index({1, 1, 0, 0}, kAabb) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(adjusted_rand_index({0, 1, 0, 1}, kAabb) ==
          doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(adjusted_rand_index({0, 0, 0, 0}, kAabb) == 0.0);
    CHECK(adjusted_rand_index({0, 1, 2, 3}, kAabb) == 0.0);
    // identical trivial partitions agree perfectly
    CHECK(adjusted_rand_index({0, 0}, {"A", "A"}) == 1.0);
    CHECK_THROWS_AS(adjusted_rand_index({0, 1}, kAabb), std::invalid_argument);
    CHECK_THROWS_AS(adjusted_rand_index({}, {}), std::invalid_argument);
}

// ---- projection --------------------------------------------------------------------

TEST_CASE("project_latents recovers a collinear cloud on the first axis") {
    std::vector<Vector> vs(3, Vector(2));
    vs[0] << 0.0, 0.0;
    vs[1] << 1.0, 1.0;
    vs[2] << 2.0, 2.0;
    const Projection p = project_latents(vs, {"a", "b", "c"});
    CHECK_FALSE(p.zero_variance);
    REQUIRE(p.coords.rows() == 3);
    REQUIRE(p.coords.cols() == 2);
    const double s2 = std::sqrt(2.0);
    CHECK(p.coords(0, 0) == doctest::Approx(-s2).epsilon(1e-12));
    CHECK(p.coords(1, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(p.coords(2, 0) == doctest::Approx(s2).epsilon(1e-12));
    for (int i = 0; i < 3; ++i) CHECK(std::abs(p.coords(i, 1)) < 1e-9);
}

TEST_CASE("project_latents orders axes by variance and keeps duplicates together") {
    RngStream r(5);
    std::vector<Vector> vs;
    std::vector<std::string> labels;
    for (int i = 0; i < 20; ++i) {
        Vector v(4);
        // stretch the first coordinate so the principal axis is unambiguous
        v << 10.0 * r.next_gaussian(), r.next_gaussian(), r.next_gaussian(),
            r.next_gaussian();
        vs.push_back(v);
        labels.push_back("x");
    }
    vs.push_back(vs[0]);  // exact duplicate point
    labels.push_back("x");
    const Projection p = project_latents(vs, labels);
    const Eigen::VectorXd mean = p.coords.colwise().mean();
    const double var0 = (p.coords.col(0).array() - mean(0)).square().sum();
    const double var1 = (p.coords.col(1).array() - mean(1)).square().sum();
    CHECK(var0 > var1);
    CHECK(p.coords(20, 0) == p.coords(0, 0));
    CHECK(p.coords(20, 1) == p.coords(0, 1));
}

TEST_CASE("project_latents flags zero-variance input") {
    std::vector<Vector> vs(3, Vector(3));
    for (auto& v : vs) v << 0.25, -1.0, 4.0;
    const Projection p = project_latents(vs, {"a", "a", "a"});
    CHECK(p.zero_variance);
    CHECK((p.coords.array() == 0.0).all());
}

TEST_CASE("project_latents handles width-1 vectors") {
    std::vector<Vector> vs(3, Vector(1));
    vs[0] << 1.0;
    vs[1] << 2.0;
    vs[2] << 3.0;
    const Projection p = project_latents(vs, {"a", "b", "c"});
    CHECK(p.coords(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(p.coords(2, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((p.coords.col(1).array() == 0.0).all());
}

TEST_CASE("project_latents validates its input") {
    std::vector<Vector> two(2, Vector::Zero(3));
    CHECK_THROWS_AS(project_latents(two, {"a", "b"}), std::invalid_argument);
    std::vector<Vector> three(3, Vector::Zero(3));
    CHECK_THROWS_AS(project_latents(three, {"a", "b"}), std::invalid_argument);
    std::vector<Vector> ragged = {Vector::Zero(3), Vector::Zero(2), Vector::Zero(3)};
    CHECK_THROWS_AS(project_latents(ragged, {"a", "b", "c"}), std::invalid_argument);
}

TEST_CASE("write_projection_csv emits one row per point") {
    std::vector<Vector> vs(3, Vector(2));
    vs[0] << 0.0, 0.0;
    vs[1] << 1.0, 1.0;
    vs[2] << 2.0, 2.0;
    const Projection p = project_latents(vs, {"a", "b", "c"});
    const std::string path = "test_eval_projection.csv";
    write_projection_csv(path, p);
    const auto lines = read_lines(path);
    std::remove(path.c_str());
    REQUIRE(lines.size() == 4);
    CHECK(lines[0] == "x,y,label,p0,p1");
    CHECK(lines[1].find(",a,0,0") != std::string::npos);
}

// ---- reports -----------------------------------------------------------------------

namespace {

EvalReport make_report(const std::string& id, const std::string& obj, bool lpc, double acc) {
    EvalReport r;
    r.run_id = id;
    r.objective = obj;
    r.lpc = lpc;
    r.accuracy = acc;
    r.purity = lpc ? 0.8 : 0.0;
    r.adjusted_rand = lpc ? 0.4 : 0.0;
    return r;
}

}  // namespace

TEST_CASE("compare_report pairs variants and reports the accuracy delta") {
    const std::vector<EvalReport> runs = {
        make_report("b", "dpo", true, 0.73),
        make_report("a", "dpo", false, 0.70),
        make_report("c", "simpo", false, 0.64),
    };
    const std::string rep = compare_report(runs);
    CHECK(rep.find("+0.0300") != std::string::npos);

    std::istringstream in(rep);
    std::string line;
    std::vector<std::string> first_col;
    while (std::getline(in, line)) first_col.push_back(line.substr(0, line.find(' ')));
    REQUIRE(first_col.size() == 4);
    CHECK(first_col[0] == "run_id");
    CHECK(first_col[1] == "a");  // vanilla before lpc within dpo
    CHECK(first_col[2] == "b");
    CHECK(first_col[3] == "c");
}

TEST_CASE("compare_report leaves unpaired runs without a delta") {
    const std::string rep = compare_report({make_report("solo", "ipo", true, 0.6)});
    CHECK(rep.find("solo") != std::string::npos);
    CHECK(rep.find('+') == std::string::npos);
    CHECK_THROWS_AS(compare_report({}), std::invalid_argument);
}

TEST_CASE("write_compare_csv round trips the delta column") {
    const std::vector<EvalReport> runs = {
        make_report("v0", "dpo", false, 0.70),
        make_report("l0", "dpo", true, 0.73),
    };
    const std::string path = "test_eval_compare.csv";
    write_compare_csv(path, runs);
    const auto lines = read_lines(path);
    std::remove(path.c_str());
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "run_id,objective,variant,accuracy,purity,adjusted_rand,delta");
    CHECK(lines[1].substr(0, 11) == "v0,dpo,vani");
    CHECK(lines[1].back() == ',');  // vanilla rows carry no delta
    const std::string delta_field = lines[2].substr(lines[2].rfind(',') + 1);
    CHECK(std::stod(delta_field) == 0.73 - 0.70);
}
