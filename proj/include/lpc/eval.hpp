// Evaluation: preference accuracy from implicit rewards, factor-recovery
// metrics (cluster purity, adjusted Rand index) against synthetic ground
// truth, deterministic 2D PCA projection of latents, and cross-run
// comparison reports.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "lpc/data.hpp"
#include "lpc/objectives.hpp"
#include "lpc/transformer.hpp"

namespace lpc {

enum class LatentMode { kExpected, kSampled, kMode, kNone };

LatentMode parse_latent_mode(const std::string& name);
std::string latent_mode_name(LatentMode mode);

// True when the implicit reward ranks chosen above rejected; ties lose.
bool reward_preference_correct(const TripleLogProbs& t, double beta);

struct AccuracyBreakdown {
    double overall = 0.0;
    std::map<std::string, double> per_source;
    long n = 0;
};

// Fraction of triples with implicit_reward(chosen) > implicit_reward(rejected),
// both scored under the same z chosen per latent_mode. kSampled draws one
// prior sample per triple from streams derived from eval_seed.
AccuracyBreakdown preference_accuracy_detailed(PolicyModel& policy, Transformer& ref,
                                               const std::vector<PreferenceTriple>& ds,
                                               double beta, LatentMode mode,
                                               std::uint64_t eval_seed = 0);
double preference_accuracy(PolicyModel& policy, Transformer& ref,
                           const std::vector<PreferenceTriple>& ds, double beta,
                           LatentMode mode, std::uint64_t eval_seed = 0);

// Argmax prior code per triple; the clustering whose purity we measure.
std::vector<int> prior_assignments(PolicyModel& policy,
                                   const std::vector<PreferenceTriple>& ds);

// Full prior probability vectors, for projection and export.
std::vector<Vector> prior_probability_vectors(PolicyModel& policy,
                                              const std::vector<PreferenceTriple>& ds);

// Unweighted mean over clusters of their majority-label share; a small pure
// cluster counts as much as a large one.
double factor_purity(const std::vector<int>& assignments,
                     const std::vector<std::string>& labels);

// Secondary agreement number; 1 = identical partitions up to relabeling.
double adjusted_rand_index(const std::vector<int>& assignments,
                           const std::vector<std::string>& labels);

// ---- projection ------------------------------------------------------------------

struct Projection {
    Matrix coords;                    // n x 2, PCA scores
    std::vector<std::string> labels;  // one per row
    Matrix raw;                       // n x d, original vectors (CSV export)
    bool zero_variance = false;
};

// Centers the vectors and projects onto the top-2 principal directions.
// Sign convention: each direction's first nonzero loading is positive.
Projection project_latents(const std::vector<Vector>& vectors,
                           const std::vector<std::string>& labels);

// Columns: x, y, label, then the raw vector entries.
void write_projection_csv(const std::string& path, const Projection& p);

// ---- reports ----------------------------------------------------------------------

struct EvalReport {
    std::string run_id;
    std::string objective;  // "dpo" | "simpo" | "ipo"
    bool lpc = false;
    double accuracy = 0.0;
    std::map<std::string, double> per_source;
    double purity = 0.0;         // factor recovery; 0 when not applicable
    double adjusted_rand = 0.0;
    std::string notes;
};

// Aligned text table, rows sorted by objective then variant; the delta
// column reports (LPC - vanilla) accuracy where both variants exist.
std::string compare_report(const std::vector<EvalReport>& runs);
void write_compare_csv(const std::string& path, const std::vector<EvalReport>& runs);

}  // namespace lpc
