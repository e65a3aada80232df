// Training: SFT pretraining (which produces the frozen reference model),
// alignment with any vanilla or latent-augmented objective, the AdamW
// optimizer and LR/g schedules, and bitwise-resumable checkpoints.
//
// All randomness (batch order, Gumbel noise) flows through streams derived
// from (seed, purpose, step), so a resumed run replays the exact draws of an
// uninterrupted one.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpc/data.hpp"
#include "lpc/objectives.hpp"
#include "lpc/rng.hpp"
#include "lpc/transformer.hpp"

namespace lpc {

enum class ObjectiveId { kDpo, kSimpo, kIpo };

ObjectiveId parse_objective(const std::string& name);  // "dpo" | "simpo" | "ipo"
std::string objective_name(ObjectiveId id);

struct TrainConfig {
    ObjectiveId objective = ObjectiveId::kDpo;
    bool lpc = true;          // latent-augmented variant; false = vanilla
    double beta = 0.1;
    double lambda = 0.05;     // KL weight
    double gamma = 0.0;       // SimPO margin
    double tau = 0.01;        // IPO regularizer
    double tau_g = 1.0;       // Gumbel-softmax temperature
    int k = 8;                // codebook size
    double peak_lr = 3e-4;
    double warmup_frac = 0.10;
    long total_steps = 0;     // 0: one epoch = ceil(n_train / batch_size)
    int batch_size = 32;
    std::uint64_t seed = 0;
    int mc_samples = 1;
    bool freeze_codebook = false;  // keep embeddings out of the optimizer
    CodebookInit codebook_init = CodebookInit::kGaussian;
    bool hard_gumbel = false;

    ObjectiveConfig objective_config() const;
    void validate() const;
};

// Linear 0 -> peak over warmup_frac * total_steps, then linear peak -> 0.
double lr_schedule(long step, long total_steps, double peak_lr, double warmup_frac);

// Decoupled-weight-decay adaptive-moment optimizer. Moments are stored in
// parameter order; `no_decay` parameters skip the decay term.
struct AdamW {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    long t = 0;
    std::vector<Eigen::MatrixXd> m, v;

    AdamW() = default;
    explicit AdamW(const std::vector<Parameter*>& params);

    // One update from the gradients currently held in params.
    void step(const std::vector<Parameter*>& params, double lr);
};

// L2 norm over all gradients in the set.
double grad_norm(const std::vector<Parameter*>& params);

// ---- SFT ---------------------------------------------------------------------

struct SftConfig {
    double peak_lr = 1e-3;
    double warmup_frac = 0.10;
    long total_steps = 300;
    int batch_size = 16;
    std::uint64_t seed = 0;
};

struct SftResult {
    std::vector<double> losses;  // mean nats per predicted token, one per step
};

// Next-token cross-entropy over every position of each corpus sequence;
// trains the model in place. Non-finite loss aborts with diagnostics.
SftResult sft_train(Transformer& model, const std::vector<TokenSeq>& corpus,
                    const SftConfig& cfg);

// ---- alignment -----------------------------------------------------------------

struct StepMetrics {
    long step = 0;
    double loss = 0.0;
    double kl_term = 0.0;  // mean analytic KL(q || p), unweighted
    double g = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;
};

void write_metrics_csv(const std::string& path, const std::vector<StepMetrics>& rows);

// Owns one alignment run's mutable pieces: optimizer, step counter, schedule.
// The reference model is optional (SimPO is reference-free) and, by contract,
// never written; it is non-const only because forwards bind parameter leaves.
class AlignTrainer {
public:
    AlignTrainer(PolicyModel* policy, Transformer* ref, const TrainConfig& cfg,
                 long total_steps);

    // One optimizer update over the batch; advances the step counter.
    StepMetrics align_step(const std::vector<const PreferenceTriple*>& batch);

    long step() const { return step_; }
    long total_steps() const { return total_steps_; }
    double g_now() const;  // g for the step about to run
    AdamW& optimizer() { return opt_; }
    const RngStream& rng() const { return root_; }
    const TrainConfig& config() const { return cfg_; }

    // Checkpoint resume: adopt saved optimizer state, step and rng.
    void restore(AdamW opt, long step, const RngStream& rng);

private:
    PolicyModel* policy_;
    Transformer* ref_;
    TrainConfig cfg_;
    long total_steps_ = 0;
    long step_ = 0;
    AdamW opt_;
    std::vector<Parameter*> update_set_;  // optimizer-visible parameters
    RngStream root_;
};

// Deterministic batch composition: the dataset indices consumed by `step`
// under per-epoch Fisher-Yates shuffles derived from the seed. A pure
// function of its arguments, so resumed runs replay identical batches.
std::vector<long> batch_indices(std::uint64_t seed, long step, int batch_size, std::size_t n);

// Full run: epoch-shuffled alignment training over resolved total_steps.
// A nonempty checkpoint_path saves every checkpoint_every steps and at the end.
std::vector<StepMetrics> align_train(PolicyModel& policy, Transformer* ref,
                                     const std::vector<PreferenceTriple>& train,
                                     const TrainConfig& cfg,
                                     const std::string& checkpoint_path = "",
                                     long checkpoint_every = 0);

// Continues a checkpointed run to its configured total_steps. The policy must
// already have the checkpoint's architecture; its parameters are overwritten.
std::vector<StepMetrics> align_resume(const std::string& checkpoint_path, PolicyModel& policy,
                                      Transformer* ref,
                                      const std::vector<PreferenceTriple>& train);

// Resolves cfg.total_steps == 0 to one epoch over n triples.
long resolve_total_steps(const TrainConfig& cfg, std::size_t n_train);

// ---- checkpoints -----------------------------------------------------------------

// Binary, version-tagged, CRC-protected. Loading restores parameter values,
// optimizer moments, step counter, rng state and the config snapshot into an
// already-constructed model of the same architecture.
void save_checkpoint(const std::string& path, PolicyModel& policy, const AdamW& opt,
                     const RngStream& rng, long step, const TrainConfig& cfg);
void load_checkpoint(const std::string& path, PolicyModel& policy, AdamW& opt, RngStream& rng,
                     long& step, TrainConfig& cfg);

// Bare named weights in the same framing (magic LPCW): what sft emits and
// align/eval consume. Loading requires matching names and shapes.
void save_weights(const std::string& path, const std::vector<Parameter*>& params);
void load_weights(const std::string& path, const std::vector<Parameter*>& params);

}  // namespace lpc
