#include "lpc/transformer.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace lpc {

namespace {

Eigen::MatrixXd gaussian_matrix(RngStream& rng, int rows, int cols, double std_dev) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = std_dev * rng.next_gaussian();
    return m;
}

Parameter weight(const std::string& name, int rows, int cols, RngStream& rng) {
    RngStream r = rng.derive("init", fnv1a64(name));
    return Parameter(name, gaussian_matrix(r, rows, cols, 0.02));
}

Parameter bias(const std::string& name, int cols) {
    return Parameter(name, Eigen::MatrixXd::Zero(1, cols), /*nd=*/true);
}

Parameter ln_gain(const std::string& name, int cols) {
    return Parameter(name, Eigen::MatrixXd::Ones(1, cols), /*nd=*/true);
}

// strictly-upper -inf mask; exact zeros after softmax keep causality bitwise
Eigen::MatrixXd causal_mask(Eigen::Index n) {
    const double ninf = -std::numeric_limits<double>::infinity();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = ninf;
    return m;
}

}  // namespace

void TransformerConfig::validate() const {
    if (vocab_size < 1 || context_length < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 ||
        ffn_width < 1)
        throw std::invalid_argument("TransformerConfig: all dimensions must be positive");
    if (d_model % n_heads != 0)
        throw std::invalid_argument("TransformerConfig: d_model " + std::to_string(d_model) +
                                    " not divisible by n_heads " + std::to_string(n_heads));
}

Transformer::Transformer(const TransformerConfig& cfg, RngStream& rng) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg_.d_model, f = cfg_.ffn_width;
    tok_emb = weight("tok_emb", cfg_.vocab_size, d, rng);
    pos_emb = weight("pos_emb", cfg_.context_length, d, rng);
    blocks.resize(static_cast<std::size_t>(cfg_.n_layers));
    for (int l = 0; l < cfg_.n_layers; ++l) {
        const std::string p = "block" + std::to_string(l) + ".";
        Block& b = blocks[static_cast<std::size_t>(l)];
        b.ln1_g = ln_gain(p + "ln1_g", d);
        b.ln1_b = bias(p + "ln1_b", d);
        b.wq = weight(p + "wq", d, d, rng);
        b.bq = bias(p + "bq", d);
        b.wk = weight(p + "wk", d, d, rng);
        b.bk = bias(p + "bk", d);
        b.wv = weight(p + "wv", d, d, rng);
        b.bv = bias(p + "bv", d);
        b.wo = weight(p + "wo", d, d, rng);
        b.bo = bias(p + "bo", d);
        b.ln2_g = ln_gain(p + "ln2_g", d);
        b.ln2_b = bias(p + "ln2_b", d);
        b.fw1 = weight(p + "fw1", d, f, rng);
        b.fb1 = bias(p + "fb1", f);
        b.fw2 = weight(p + "fw2", f, d, rng);
        b.fb2 = bias(p + "fb2", d);
    }
    lnf_g = ln_gain("lnf_g", d);
    lnf_b = bias("lnf_b", d);
    head_w = weight("head_w", d, cfg_.vocab_size, rng);
    head_b = bias("head_b", cfg_.vocab_size);
}

std::vector<Parameter*> Transformer::params() {
    std::vector<Parameter*> out{&tok_emb, &pos_emb};
    for (Block& b : blocks) {
        for (Parameter* p : {&b.ln1_g, &b.ln1_b, &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv,
                             &b.wo, &b.bo, &b.ln2_g, &b.ln2_b, &b.fw1, &b.fb1, &b.fw2, &b.fb2})
            out.push_back(p);
    }
    for (Parameter* p : {&lnf_g, &lnf_b, &head_w, &head_b}) out.push_back(p);
    return out;
}

long Transformer::param_count() {
    long n = 0;
    for (Parameter* p : params()) n += static_cast<long>(p->value.size());
    return n;
}

void Transformer::check_length(std::size_t total) const {
    if (total > static_cast<std::size_t>(cfg_.context_length))
        throw std::length_error("sequence length " + std::to_string(total) +
                                " exceeds context_length " +
                                std::to_string(cfg_.context_length));
}

Var Transformer::forward_hidden_g(Tape& t, const std::vector<int>& ids) {
    if (ids.empty()) throw std::invalid_argument("forward_hidden: empty sequence");
    check_length(ids.size());
    for (int id : ids)
        if (id < 0 || id >= cfg_.vocab_size)
            throw std::out_of_range("forward_hidden: token id " + std::to_string(id) +
                                    " outside vocab " + std::to_string(cfg_.vocab_size));
    const Eigen::Index n = static_cast<Eigen::Index>(ids.size());
    std::vector<int> positions(ids.size());
    std::iota(positions.begin(), positions.end(), 0);

    Var x = embed_rows(t.leaf(tok_emb), ids) + embed_rows(t.leaf(pos_emb), positions);
    const int dh = cfg_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Var mask = t.constant(causal_mask(n));

    for (Block& b : blocks) {
        Var ln1 = layer_norm(x, t.leaf(b.ln1_g), t.leaf(b.ln1_b));
        Var q = add_rowvec(matmul(ln1, t.leaf(b.wq)), t.leaf(b.bq));
        Var k = add_rowvec(matmul(ln1, t.leaf(b.wk)), t.leaf(b.bk));
        Var v = add_rowvec(matmul(ln1, t.leaf(b.wv)), t.leaf(b.bv));
        std::vector<Var> heads;
        heads.reserve(static_cast<std::size_t>(cfg_.n_heads));
        for (int h = 0; h < cfg_.n_heads; ++h) {
            Var qh = cols(q, h * dh, dh);
            Var kh = cols(k, h * dh, dh);
            Var vh = cols(v, h * dh, dh);
            Var scores = scale * matmul_nt(qh, kh) + mask;
            heads.push_back(matmul(rowwise_softmax(scores), vh));
        }
        Var attn = add_rowvec(matmul(hcat(heads), t.leaf(b.wo)), t.leaf(b.bo));
        x = x + attn;
        Var ln2 = layer_norm(x, t.leaf(b.ln2_g), t.leaf(b.ln2_b));
        Var ff = gelu(add_rowvec(matmul(ln2, t.leaf(b.fw1)), t.leaf(b.fb1)));
        x = x + add_rowvec(matmul(ff, t.leaf(b.fw2)), t.leaf(b.fb2));
    }
    return layer_norm(x, t.leaf(lnf_g), t.leaf(lnf_b));
}

HiddenStates Transformer::forward_hidden(const std::vector<int>& ids) {
    Tape t(false);
    return forward_hidden_g(t, ids).value();
}

Var Transformer::logits_with_latent_g(Tape& t, const Var& h, const std::optional<Var>& z) {
    if (h.cols() != cfg_.d_model)
        throw std::invalid_argument("logits_with_latent: state width " +
                                    std::to_string(h.cols()) + " != d_model " +
                                    std::to_string(cfg_.d_model));
    Var in = h;
    if (z) {
        if (z->rows() != 1 || z->cols() != cfg_.d_model)
            throw std::invalid_argument("logits_with_latent: z must be 1 x d_model");
        in = add_rowvec(h, *z);
    }
    return add_rowvec(matmul(in, t.leaf(head_w)), t.leaf(head_b));
}

Vector Transformer::logits_with_latent(const Vector& h_t, const std::optional<Vector>& z) {
    Tape t(false);
    std::optional<Var> zv;
    if (z) zv = t.constant(z->transpose());
    Var out = logits_with_latent_g(t, t.constant(h_t.transpose()), zv);
    return out.value().row(0).transpose();
}

Var Transformer::seq_logprob_g(Tape& t, const std::vector<int>& x, const std::vector<int>& y,
                               const std::optional<Var>& z, bool normalize) {
    if (x.empty()) throw std::invalid_argument("seq_logprob: empty prompt");
    if (y.empty()) throw std::invalid_argument("seq_logprob: empty completion");
    check_length(x.size() + y.size());
    std::vector<int> ids = x;
    ids.insert(ids.end(), y.begin(), y.end());

    Var h = forward_hidden_g(t, ids);
    return completion_logprob_g(t, h, static_cast<long>(x.size()), y, z, normalize);
}

Var Transformer::completion_logprob_g(Tape& t, const Var& h, long x_len,
                                      const std::vector<int>& y, const std::optional<Var>& z,
                                      bool normalize) {
    if (x_len < 1) throw std::invalid_argument("completion_logprob: empty prompt");
    if (y.empty()) throw std::invalid_argument("completion_logprob: empty completion");
    const Eigen::Index lx = static_cast<Eigen::Index>(x_len);
    const Eigen::Index ly = static_cast<Eigen::Index>(y.size());
    if (h.rows() != lx + ly)
        throw std::invalid_argument("completion_logprob: hidden rows do not match x+y");
    // y_t is predicted from the state at the preceding position
    Var h_pred = rows(h, lx - 1, ly);
    Var logits = logits_with_latent_g(t, h_pred, z);
    Var lp = pick(rowwise_log_softmax(logits), y);
    Var total = sum(lp);
    if (normalize) total = (1.0 / static_cast<double>(ly)) * total;
    return total;
}

double Transformer::seq_logprob(const std::vector<int>& x, const std::vector<int>& y,
                                const std::optional<Vector>& z, bool normalize) {
    Tape t(false);
    std::optional<Var> zv;
    if (z) zv = t.constant(z->transpose());
    return seq_logprob_g(t, x, y, zv, normalize).scalar();
}

// ---- PolicyModel --------------------------------------------------------------

PolicyModel::PolicyModel(const TransformerConfig& cfg, RngStream& rng) : tf(cfg, rng) {}

PolicyModel::PolicyModel(const TransformerConfig& cfg, int K, RngStream& rng, CodebookInit init)
    : tf(cfg, rng), coder(LatentCoder(K, cfg.d_model, rng, init)) {
    if (coder->d() != cfg.d_model)
        throw std::invalid_argument("PolicyModel: codebook width mismatch");
}

std::vector<Parameter*> PolicyModel::params() {
    std::vector<Parameter*> out = tf.params();
    if (coder) {
        for (Parameter* p : coder->params()) out.push_back(p);
    }
    return out;
}

// ---- generation ---------------------------------------------------------------

GenerateResult generate(const TokenSeq& prompt, PolicyModel& model, const GenerateOptions& opt,
                        RngStream& rng) {
    if (prompt.ids.empty()) throw std::invalid_argument("generate: empty prompt");
    if (opt.max_new < 1) throw std::invalid_argument("generate: max_new must be >= 1");
    if (!opt.greedy && opt.temperature <= 0.0)
        throw std::invalid_argument("generate: temperature must be positive");

    GenerateResult out;
    out.completion.role = Role::kCompletion;

    std::optional<Vector> z;
    if (model.has_latent()) {
        const HiddenStates h = model.tf.forward_hidden(prompt.ids);
        const Vector h_x = h.row(h.rows() - 1).transpose();
        CategoricalDist prior = model.coder->prior_logits(h_x);
        if (opt.sample_latent) {
            RngStream zr = rng.derive("gen_latent");
            const Vector onehot = gumbel_softmax(prior.logits, 1.0, zr, /*hard=*/true);
            int k = 0;
            onehot.maxCoeff(&k);
            out.sampled_code = k;
            z = model.coder->codebook.embeddings.value.row(k).transpose();
        } else {
            z = expected_latent(prior, model.coder->codebook);
        }
        out.z = *z;
    }

    std::vector<int> ids = prompt.ids;
    RngStream sampler = rng.derive("gen_sample");
    for (int step = 0; step < opt.max_new; ++step) {
        if (static_cast<int>(ids.size()) >= model.tf.config().context_length) {
            out.truncated = true;
            break;
        }
        const HiddenStates h = model.tf.forward_hidden(ids);
        const Vector h_last = h.row(h.rows() - 1).transpose();
        const Vector logits = model.tf.logits_with_latent(h_last, z);
        int next = 0;
        if (opt.greedy) {
            logits.maxCoeff(&next);
        } else {
            const Vector probs = softmax((logits / opt.temperature).eval());
            const double u = sampler.next_unit_open();
            double acc = 0.0;
            next = static_cast<int>(probs.size()) - 1;
            for (int i = 0; i < probs.size(); ++i) {
                acc += probs[i];
                if (u <= acc) {
                    next = i;
                    break;
                }
            }
        }
        ids.push_back(next);
        out.completion.ids.push_back(next);
        if (next == opt.eos_id) return out;
        if (step == opt.max_new - 1) out.truncated = true;
    }
    return out;
}

}  // namespace lpc
