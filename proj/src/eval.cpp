#include "lpc/eval.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace lpc {

namespace {

// last-row hidden state of the prompt, the prior network's input
Vector prompt_state(PolicyModel& policy, const PreferenceTriple& tr) {
    const HiddenStates h = policy.tf.forward_hidden(tr.prompt.ids);
    return h.row(h.rows() - 1).transpose();
}

long n_choose_2(long n) { return n * (n - 1) / 2; }

}  // namespace

LatentMode parse_latent_mode(const std::string& name) {
    if (name == "expected") return LatentMode::kExpected;
    if (name == "sampled") return LatentMode::kSampled;
    if (name == "mode") return LatentMode::kMode;
    if (name == "none") return LatentMode::kNone;
    throw std::invalid_argument("unknown latent mode '" + name +
                                "' (expected expected|sampled|mode|none)");
}

std::string latent_mode_name(LatentMode mode) {
    switch (mode) {
        case LatentMode::kExpected: return "expected";
        case LatentMode::kSampled: return "sampled";
        case LatentMode::kMode: return "mode";
        case LatentMode::kNone: return "none";
    }
    throw std::invalid_argument("latent_mode_name: bad mode");
}

bool reward_preference_correct(const TripleLogProbs& t, double beta) {
    return implicit_reward(t.policy_lp_w, t.ref_lp_w, beta) >
           implicit_reward(t.policy_lp_l, t.ref_lp_l, beta);
}

AccuracyBreakdown preference_accuracy_detailed(PolicyModel& policy, Transformer& ref,
                                               const std::vector<PreferenceTriple>& ds,
                                               double beta, LatentMode mode,
                                               std::uint64_t eval_seed) {
    if (ds.empty()) throw std::invalid_argument("preference_accuracy: empty dataset");
    if (!policy.has_latent() && mode != LatentMode::kNone)
        throw std::invalid_argument(
            "preference_accuracy: latent_mode requires an LPC model (vanilla models use none)");

    const RngStream root(eval_seed);
    std::map<std::string, std::pair<long, long>> by_source;  // correct, total
    long correct = 0;

    for (std::size_t i = 0; i < ds.size(); ++i) {
        const PreferenceTriple& tr = ds[i];
        std::optional<Vector> z;
        if (mode != LatentMode::kNone) {
            LatentCoder& coder = *policy.coder;
            const CategoricalDist prior = coder.prior_logits(prompt_state(policy, tr));
            switch (mode) {
                case LatentMode::kExpected:
                    z = expected_latent(prior, coder.codebook);
                    break;
                case LatentMode::kMode:
                    z = coder.codebook.embeddings.value.row(prior.mode()).transpose();
                    break;
                case LatentMode::kSampled: {
                    RngStream s = root.derive("eval_latent", static_cast<std::uint64_t>(i));
                    int best = 0;
                    double best_v = -std::numeric_limits<double>::infinity();
                    for (int k = 0; k < prior.size(); ++k) {
                        const double v = prior.logits(k) + s.next_gumbel();
                        if (v > best_v) {
                            best_v = v;
                            best = k;
                        }
                    }
                    z = coder.codebook.embeddings.value.row(best).transpose();
                    break;
                }
                case LatentMode::kNone: break;
            }
        }

        TripleLogProbs t;
        t.policy_lp_w = policy.tf.seq_logprob(tr.prompt.ids, tr.chosen.ids, z, false);
        t.policy_lp_l = policy.tf.seq_logprob(tr.prompt.ids, tr.rejected.ids, z, false);
        t.ref_lp_w = ref.seq_logprob(tr.prompt.ids, tr.chosen.ids, std::nullopt, false);
        t.ref_lp_l = ref.seq_logprob(tr.prompt.ids, tr.rejected.ids, std::nullopt, false);
        t.len_w = static_cast<int>(tr.chosen.ids.size());
        t.len_l = static_cast<int>(tr.rejected.ids.size());

        const bool ok = reward_preference_correct(t, beta);
        correct += ok ? 1 : 0;
        auto& s = by_source[tr.source];
        s.first += ok ? 1 : 0;
        s.second += 1;
    }

    AccuracyBreakdown out;
    out.n = static_cast<long>(ds.size());
    out.overall = static_cast<double>(correct) / static_cast<double>(ds.size());
    for (const auto& [src, cnt] : by_source)
        out.per_source[src] = static_cast<double>(cnt.first) / static_cast<double>(cnt.second);
    return out;
}

double preference_accuracy(PolicyModel& policy, Transformer& ref,
                           const std::vector<PreferenceTriple>& ds, double beta,
                           LatentMode mode, std::uint64_t eval_seed) {
    return preference_accuracy_detailed(policy, ref, ds, beta, mode, eval_seed).overall;
}

std::vector<int> prior_assignments(PolicyModel& policy,
                                   const std::vector<PreferenceTriple>& ds) {
    if (!policy.has_latent())
        throw std::invalid_argument("prior_assignments: vanilla model has no prior");
    std::vector<int> out;
    out.reserve(ds.size());
    for (const PreferenceTriple& tr : ds)
        out.push_back(policy.coder->prior_logits(prompt_state(policy, tr)).mode());
    return out;
}

std::vector<Vector> prior_probability_vectors(PolicyModel& policy,
                                              const std::vector<PreferenceTriple>& ds) {
    if (!policy.has_latent())
        throw std::invalid_argument("prior_probability_vectors: vanilla model has no prior");
    std::vector<Vector> out;
    out.reserve(ds.size());
    for (const PreferenceTriple& tr : ds)
        out.push_back(policy.coder->prior_logits(prompt_state(policy, tr)).probs());
    return out;
}

// ---- clustering metrics -----------------------------------------------------------

double factor_purity(const std::vector<int>& assignments,
                     const std::vector<std::string>& labels) {
    if (assignments.size() != labels.size())
        throw std::invalid_argument("factor_purity: length mismatch");
    if (assignments.empty()) throw std::invalid_argument("factor_purity: empty input");
    std::map<int, std::map<std::string, long>> clusters;
    for (std::size_t i = 0; i < assignments.size(); ++i)
        ++clusters[assignments[i]][labels[i]];
    double share_sum = 0.0;
    for (const auto& [cid, counts] : clusters) {
        long best = 0, total = 0;
        for (const auto& [label, c] : counts) {
            best = std::max(best, c);
            total += c;
        }
        share_sum += static_cast<double>(best) / static_cast<double>(total);
    }
    return share_sum / static_cast<double>(clusters.size());
}

double adjusted_rand_index(const std::vector<int>& assignments,
                           const std::vector<std::string>& labels) {
    if (assignments.size() != labels.size())
        throw std::invalid_argument("adjusted_rand_index: length mismatch");
    if (assignments.empty()) throw std::invalid_argument("adjusted_rand_index: empty input");
    std::map<std::pair<int, std::string>, long> cont;
    std::map<int, long> rows;
    std::map<std::string, long> cols;
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        ++cont[{assignments[i], labels[i]}];
        ++rows[assignments[i]];
        ++cols[labels[i]];
    }
    long sum_cont = 0, sum_rows = 0, sum_cols = 0;
    for (const auto& [k, v] : cont) sum_cont += n_choose_2(v);
    for (const auto& [k, v] : rows) sum_rows += n_choose_2(v);
    for (const auto& [k, v] : cols) sum_cols += n_choose_2(v);
    const double pairs = static_cast<double>(n_choose_2(static_cast<long>(assignments.size())));
    const double expected = static_cast<double>(sum_rows) * static_cast<double>(sum_cols) / pairs;
    const double maximum = 0.5 * static_cast<double>(sum_rows + sum_cols);
    if (maximum == expected) return 1.0;  // both partitions trivial
    return (static_cast<double>(sum_cont) - expected) / (maximum - expected);
}

// ---- projection ------------------------------------------------------------------

Projection project_latents(const std::vector<Vector>& vectors,
                           const std::vector<std::string>& labels) {
    if (vectors.size() < 3)
        throw std::invalid_argument("project_latents: need at least 3 vectors");
    if (labels.size() != vectors.size())
        throw std::invalid_argument("project_latents: labels do not match vectors");
    const Eigen::Index d = vectors[0].size();
    for (const Vector& v : vectors)
        if (v.size() != d) throw std::invalid_argument("project_latents: mixed vector widths");

    const Eigen::Index n = static_cast<Eigen::Index>(vectors.size());
    Matrix x(n, d);
    for (Eigen::Index i = 0; i < n; ++i) x.row(i) = vectors[static_cast<std::size_t>(i)];

    Projection p;
    p.labels = labels;
    p.raw = x;
    p.coords = Matrix::Zero(n, 2);

    const Matrix xc = x.rowwise() - x.colwise().mean();
    const Matrix cov = xc.transpose() * xc;
    if (cov.trace() == 0.0) {
        std::cerr << "project_latents: zero-variance input; coordinates set to zero\n";
        p.zero_variance = true;
        return p;
    }

    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("project_latents: eigendecomposition failed");

    auto principal = [&](Eigen::Index rank) -> Vector {
        // eigenvalues ascend, so rank 0 is the last column
        Vector v = es.eigenvectors().col(d - 1 - rank);
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            if (v(i) != 0.0) {
                if (v(i) < 0.0) v = -v;
                break;
            }
        }
        return v;
    };

    p.coords.col(0) = xc * principal(0);
    if (d >= 2) p.coords.col(1) = xc * principal(1);
    return p;
}

void write_projection_csv(const std::string& path, const Projection& p) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("write_projection_csv: cannot open " + path);
    f << "x,y,label";
    for (Eigen::Index j = 0; j < p.raw.cols(); ++j) f << ",p" << j;
    f << '\n';
    f.precision(17);
    for (Eigen::Index i = 0; i < p.coords.rows(); ++i) {
        f << p.coords(i, 0) << ',' << p.coords(i, 1) << ','
          << p.labels[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < p.raw.cols(); ++j) f << ',' << p.raw(i, j);
        f << '\n';
    }
    if (!f) throw std::runtime_error("write_projection_csv: write failed for " + path);
}

// ---- reports ----------------------------------------------------------------------

namespace {

std::string variant_name(bool lpc) { return lpc ? "lpc" : "vanilla"; }

std::vector<const EvalReport*> sorted_runs(const std::vector<EvalReport>& runs) {
    std::vector<const EvalReport*> ptrs;
    ptrs.reserve(runs.size());
    for (const EvalReport& r : runs) ptrs.push_back(&r);
    std::stable_sort(ptrs.begin(), ptrs.end(), [](const EvalReport* a, const EvalReport* b) {
        if (a->objective != b->objective) return a->objective < b->objective;
        if (a->lpc != b->lpc) return !a->lpc;  // vanilla before lpc
        return a->run_id < b->run_id;
    });
    return ptrs;
}

// delta (lpc - vanilla) against the first vanilla run of the same objective
std::map<const EvalReport*, double> lpc_deltas(const std::vector<const EvalReport*>& ptrs) {
    std::map<std::string, double> vanilla_acc;
    for (const EvalReport* r : ptrs)
        if (!r->lpc && vanilla_acc.find(r->objective) == vanilla_acc.end())
            vanilla_acc[r->objective] = r->accuracy;
    std::map<const EvalReport*, double> deltas;
    for (const EvalReport* r : ptrs) {
        if (!r->lpc) continue;
        const auto it = vanilla_acc.find(r->objective);
        if (it != vanilla_acc.end()) deltas[r] = r->accuracy - it->second;
    }
    return deltas;
}

}  // namespace

std::string compare_report(const std::vector<EvalReport>& runs) {
    if (runs.empty()) throw std::invalid_argument("compare_report: need at least one run");
    const auto ptrs = sorted_runs(runs);
    const auto deltas = lpc_deltas(ptrs);

    std::size_t id_w = 6;
    for (const EvalReport* r : ptrs) id_w = std::max(id_w, r->run_id.size());

    std::ostringstream out;
    out << std::left << std::setw(static_cast<int>(id_w + 2)) << "run_id" << std::setw(11)
        << "objective" << std::setw(9) << "variant" << std::right << std::setw(10) << "accuracy"
        << std::setw(8) << "purity" << std::setw(8) << "ari" << std::setw(9) << "delta" << '\n';
    out << std::fixed << std::setprecision(4);
    for (const EvalReport* r : ptrs) {
        out << std::left << std::setw(static_cast<int>(id_w + 2)) << r->run_id << std::setw(11)
            << r->objective << std::setw(9) << variant_name(r->lpc) << std::right
            << std::setw(10) << r->accuracy << std::setw(8) << r->purity << std::setw(8)
            << r->adjusted_rand;
        const auto it = deltas.find(r);
        if (it != deltas.end())
            out << std::setw(9) << std::showpos << it->second << std::noshowpos;
        else
            out << std::setw(9) << "";
        out << '\n';
    }
    return out.str();
}

void write_compare_csv(const std::string& path, const std::vector<EvalReport>& runs) {
    if (runs.empty()) throw std::invalid_argument("write_compare_csv: need at least one run");
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("write_compare_csv: cannot open " + path);
    const auto ptrs = sorted_runs(runs);
    const auto deltas = lpc_deltas(ptrs);
    f << "run_id,objective,variant,accuracy,purity,adjusted_rand,delta\n";
    f.precision(17);
    for (const EvalReport* r : ptrs) {
        f << r->run_id << ',' << r->objective << ',' << variant_name(r->lpc) << ','
          << r->accuracy << ',' << r->purity << ',' << r->adjusted_rand << ',';
        const auto it = deltas.find(r);
        if (it != deltas.end()) f << it->second;
        f << '\n';
    }
    if (!f) throw std::runtime_error("write_compare_csv: write failed for " + path);
}

}  // namespace lpc
