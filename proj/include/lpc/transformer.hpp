// Tiny pre-norm decoder-only transformer: learned token and position
// embeddings, causal multi-head attention, GELU feed-forward blocks, a final
// layer norm, and an untied LM head.
//
// The latent vector z enters exactly once: added to the final hidden state
// before the LM head at completion positions (the reference path omits it, so
// reference scores never depend on z). Hidden states themselves are z-free.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lpc/codebook.hpp"
#include "lpc/numeric.hpp"
#include "lpc/rng.hpp"
#include "lpc/tape.hpp"

namespace lpc {

struct TransformerConfig {
    int vocab_size = 260;
    int context_length = 256;
    int d_model = 128;
    int n_layers = 4;
    int n_heads = 4;
    int ffn_width = 512;

    int head_dim() const { return d_model / n_heads; }
    void validate() const;
};

enum class Role { kPrompt, kCompletion };

struct TokenSeq {
    std::vector<int> ids;
    Role role = Role::kPrompt;

    int length() const { return static_cast<int>(ids.size()); }
};

// Per-position last-layer states, one d_model row per token.
using HiddenStates = Matrix;

class Transformer {
public:
    struct Block {
        Parameter ln1_g, ln1_b;
        Parameter wq, bq, wk, bk, wv, bv, wo, bo;
        Parameter ln2_g, ln2_b;
        Parameter fw1, fb1, fw2, fb2;
    };

    Transformer() = default;
    Transformer(const TransformerConfig& cfg, RngStream& rng);

    const TransformerConfig& config() const { return cfg_; }
    std::vector<Parameter*> params();
    long param_count();

    // Final-LN hidden states for the whole sequence, one row per position.
    Var forward_hidden_g(Tape& t, const std::vector<int>& ids);
    HiddenStates forward_hidden(const std::vector<int>& ids);

    // logits = LMHead(h + z); z absent gives the reference path LMHead(h).
    Var logits_with_latent_g(Tape& t, const Var& h, const std::optional<Var>& z);
    Vector logits_with_latent(const Vector& h_t, const std::optional<Vector>& z);

    // sum_t log pi(y_t | x, y_<t, z); normalize divides by |y|.
    Var seq_logprob_g(Tape& t, const std::vector<int>& x, const std::vector<int>& y,
                      const std::optional<Var>& z, bool normalize);
    // Same, reusing precomputed hidden states h for the x+y sequence.
    Var completion_logprob_g(Tape& t, const Var& h, long x_len, const std::vector<int>& y,
                             const std::optional<Var>& z, bool normalize);
    double seq_logprob(const std::vector<int>& x, const std::vector<int>& y,
                       const std::optional<Vector>& z, bool normalize);

    TransformerConfig cfg_;
    Parameter tok_emb, pos_emb;
    std::vector<Block> blocks;
    Parameter lnf_g, lnf_b;
    Parameter head_w, head_b;

private:
    void check_length(std::size_t total) const;
};

// Transformer plus the latent side; the complete trainable policy.
struct PolicyModel {
    Transformer tf;
    std::optional<LatentCoder> coder;  // absent for vanilla objectives

    PolicyModel() = default;
    PolicyModel(const TransformerConfig& cfg, RngStream& rng);  // vanilla
    PolicyModel(const TransformerConfig& cfg, int K, RngStream& rng,
                CodebookInit init = CodebookInit::kGaussian);

    bool has_latent() const { return coder.has_value(); }
    std::vector<Parameter*> params();
};

struct GenerateResult {
    TokenSeq completion;   // role kCompletion; includes EOS when reached
    bool truncated = false;
    Vector z;              // latent used at every step (empty for vanilla)
    int sampled_code = -1; // codebook row when latent_sampled, else -1
};

struct GenerateOptions {
    bool greedy = true;
    double temperature = 1.0;
    int max_new = 48;
    int eos_id = -1;          // -1: never stop early
    bool sample_latent = false;  // true: one hard Gumbel draw; false: expected_latent
};

GenerateResult generate(const TokenSeq& prompt, PolicyModel& model,
                        const GenerateOptions& opt, RngStream& rng);

}  // namespace lpc
