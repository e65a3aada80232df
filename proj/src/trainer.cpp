#include "lpc/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "lpc/codebook.hpp"

namespace lpc {

// ---- config --------------------------------------------------------------------

ObjectiveId parse_objective(const std::string& name) {
    if (name == "dpo") return ObjectiveId::kDpo;
    if (name == "simpo") return ObjectiveId::kSimpo;
    if (name == "ipo") return ObjectiveId::kIpo;
    throw std::invalid_argument("unknown objective '" + name + "' (expected dpo|simpo|ipo)");
}

std::string objective_name(ObjectiveId id) {
    switch (id) {
        case ObjectiveId::kDpo: return "dpo";
        case ObjectiveId::kSimpo: return "simpo";
        case ObjectiveId::kIpo: return "ipo";
    }
    throw std::invalid_argument("objective_name: bad id");
}

ObjectiveConfig TrainConfig::objective_config() const {
    ObjectiveConfig oc;
    oc.beta = beta;
    oc.gamma = gamma;
    oc.tau = tau;
    oc.lambda = lambda;
    return oc;
}

void TrainConfig::validate() const {
    objective_config().validate();
    if (tau_g <= 0.0) throw std::invalid_argument("TrainConfig: tau_g must be positive");
    if (k < 1) throw std::invalid_argument("TrainConfig: k must be >= 1");
    if (peak_lr <= 0.0) throw std::invalid_argument("TrainConfig: peak_lr must be positive");
    if (warmup_frac <= 0.0 || warmup_frac >= 1.0)
        throw std::invalid_argument("TrainConfig: warmup_frac must lie in (0,1)");
    if (total_steps < 0) throw std::invalid_argument("TrainConfig: total_steps must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (mc_samples < 1) throw std::invalid_argument("TrainConfig: mc_samples must be >= 1");
}

double lr_schedule(long step, long total_steps, double peak_lr, double warmup_frac) {
    if (total_steps < 1) throw std::invalid_argument("lr_schedule: total_steps must be >= 1");
    if (step < 0 || step > total_steps)
        throw std::invalid_argument("lr_schedule: step outside [0, total_steps]");
    if (warmup_frac <= 0.0 || warmup_frac >= 1.0)
        throw std::invalid_argument("lr_schedule: warmup_frac must lie in (0,1)");
    const double warm = warmup_frac * static_cast<double>(total_steps);
    const double s = static_cast<double>(step);
    if (s <= warm) return peak_lr * (s / warm);
    return peak_lr * ((static_cast<double>(total_steps) - s) /
                      (static_cast<double>(total_steps) - warm));
}

// ---- optimizer ------------------------------------------------------------------

AdamW::AdamW(const std::vector<Parameter*>& params) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const Parameter* p : params) {
        m.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
        v.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
    }
}

void AdamW::step(const std::vector<Parameter*>& params, double lr) {
    if (params.size() != m.size())
        throw std::invalid_argument("AdamW: parameter set does not match optimizer state");
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * p.grad;
        v[i] = beta2 * v[i] + (1.0 - beta2) * p.grad.cwiseProduct(p.grad);
        Eigen::MatrixXd update =
            ((m[i] / bc1).array() / ((v[i] / bc2).array().sqrt() + eps)).matrix();
        if (!p.no_decay) update += weight_decay * p.value;
        p.value -= lr * update;
    }
}

double grad_norm(const std::vector<Parameter*>& params) {
    double sq = 0.0;
    for (const Parameter* p : params) sq += p->grad.squaredNorm();
    return std::sqrt(sq);
}

// ---- SFT ---------------------------------------------------------------------

SftResult sft_train(Transformer& model, const std::vector<TokenSeq>& corpus,
                    const SftConfig& cfg) {
    if (corpus.empty()) throw std::invalid_argument("sft_train: empty corpus");
    for (const TokenSeq& s : corpus)
        if (s.length() < 2)
            throw std::invalid_argument("sft_train: sequences need at least two tokens");
    if (cfg.total_steps < 1) throw std::invalid_argument("sft_train: total_steps must be >= 1");
    if (cfg.batch_size < 1) throw std::invalid_argument("sft_train: batch_size must be >= 1");

    std::vector<Parameter*> params = model.params();
    AdamW opt(params);
    RngStream root = RngStream(cfg.seed).derive("sft");
    SftResult res;
    res.losses.reserve(static_cast<std::size_t>(cfg.total_steps));

    for (long step = 0; step < cfg.total_steps; ++step) {
        RngStream pick_rng = root.derive("batch", static_cast<std::uint64_t>(step));
        std::vector<std::size_t> idx(static_cast<std::size_t>(cfg.batch_size));
        long total_tokens = 0;
        for (auto& i : idx) {
            i = static_cast<std::size_t>(pick_rng.next_below(corpus.size()));
            total_tokens += corpus[i].length() - 1;
        }
        for (Parameter* p : params) p->zero_grad();

        double loss_val = 0.0;
        for (std::size_t bi = 0; bi < idx.size(); ++bi) {
            const std::vector<int>& ids = corpus[idx[bi]].ids;
            Tape t;
            const std::vector<int> inputs(ids.begin(), ids.end() - 1);
            const std::vector<int> targets(ids.begin() + 1, ids.end());
            Var h = model.forward_hidden_g(t, inputs);
            Var logits = model.logits_with_latent_g(t, h, std::nullopt);
            Var nll = (-1.0 / static_cast<double>(total_tokens)) *
                      sum(pick(rowwise_log_softmax(logits), targets));
            if (!std::isfinite(nll.scalar()))
                throw std::runtime_error("sft_train: non-finite loss at step " +
                                         std::to_string(step) + " (sequence index " +
                                         std::to_string(idx[bi]) + ")");
            t.backward(nll);
            loss_val += nll.scalar();
        }
        opt.step(params, lr_schedule(step, cfg.total_steps, cfg.peak_lr, cfg.warmup_frac));
        res.losses.push_back(loss_val);
    }
    return res;
}

// ---- alignment -----------------------------------------------------------------

void write_metrics_csv(const std::string& path, const std::vector<StepMetrics>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("write_metrics_csv: cannot open " + path);
    f << "step,loss,kl_term,g,lr,grad_norm\n";
    f.precision(17);
    for (const StepMetrics& r : rows)
        f << r.step << ',' << r.loss << ',' << r.kl_term << ',' << r.g << ',' << r.lr << ','
          << r.grad_norm << '\n';
    if (!f) throw std::runtime_error("write_metrics_csv: write failed for " + path);
}

AlignTrainer::AlignTrainer(PolicyModel* policy, Transformer* ref, const TrainConfig& cfg,
                           long total_steps)
    : policy_(policy),
      ref_(ref),
      cfg_(cfg),
      total_steps_(total_steps),
      root_(RngStream(cfg.seed).derive("align")) {
    cfg_.validate();
    if (total_steps_ < 1) throw std::invalid_argument("AlignTrainer: total_steps must be >= 1");
    if (cfg_.lpc && !policy_->has_latent())
        throw std::invalid_argument("AlignTrainer: lpc mode needs a latent-equipped policy");
    if (cfg_.objective != ObjectiveId::kSimpo && ref_ == nullptr)
        throw std::invalid_argument("AlignTrainer: dpo/ipo need a reference model");
    update_set_ = policy_->params();
    if (cfg_.freeze_codebook && policy_->has_latent()) {
        Parameter* frozen = &policy_->coder->codebook.embeddings;
        update_set_.erase(std::remove(update_set_.begin(), update_set_.end(), frozen),
                          update_set_.end());
    }
    opt_ = AdamW(update_set_);
}

double AlignTrainer::g_now() const {
    if (total_steps_ == 1) return 1.0;
    // horizon total_steps-1 so g spans exactly [0,1] over steps 0..T-1
    return g_schedule(std::min(step_, total_steps_ - 1), total_steps_ - 1);
}

void AlignTrainer::restore(AdamW opt, long step, const RngStream& rng) {
    if (opt.m.size() != update_set_.size())
        throw std::invalid_argument("AlignTrainer::restore: optimizer state size mismatch");
    opt_ = std::move(opt);
    step_ = step;
    root_ = rng;
}

StepMetrics AlignTrainer::align_step(const std::vector<const PreferenceTriple*>& batch) {
    if (batch.empty()) throw std::invalid_argument("align_step: empty batch");
    const double g = g_now();
    const double lr = lr_schedule(std::min(step_, total_steps_), total_steps_, cfg_.peak_lr,
                                  cfg_.warmup_frac);
    const bool norm = cfg_.objective == ObjectiveId::kSimpo;
    Transformer& tf = policy_->tf;

    for (Parameter* p : policy_->params()) p->zero_grad();

    double loss_sum = 0.0, kl_sum = 0.0;
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        const PreferenceTriple& tr = *batch[bi];
        const std::vector<int>& xp = tr.prompt.ids;
        std::vector<int> ids_w = xp;
        ids_w.insert(ids_w.end(), tr.chosen.ids.begin(), tr.chosen.ids.end());
        std::vector<int> ids_l = xp;
        ids_l.insert(ids_l.end(), tr.rejected.ids.begin(), tr.rejected.ids.end());
        const long lx = static_cast<long>(xp.size());

        double ref_w = 0.0, ref_l = 0.0;
        if (cfg_.objective != ObjectiveId::kSimpo) {
            ref_w = ref_->seq_logprob(xp, tr.chosen.ids, std::nullopt, norm);
            ref_l = ref_->seq_logprob(xp, tr.rejected.ids, std::nullopt, norm);
        }

        Tape t;
        Var h_w = tf.forward_hidden_g(t, ids_w);
        Var h_l = tf.forward_hidden_g(t, ids_l);

        auto base_loss = [&](const Var& pw, const Var& pl) -> Var {
            switch (cfg_.objective) {
                case ObjectiveId::kDpo:
                    return dpo_loss_g(t, pw, pl, ref_w, ref_l, cfg_.beta);
                case ObjectiveId::kSimpo:
                    return simpo_loss_g(t, pw, pl, cfg_.beta, cfg_.gamma);
                case ObjectiveId::kIpo:
                    return ipo_loss_g(t, pw, pl, ref_w, ref_l, cfg_.tau);
            }
            throw std::invalid_argument("align_step: bad objective");
        };

        Var loss;
        if (!cfg_.lpc) {
            Var pw = tf.completion_logprob_g(t, h_w, lx, tr.chosen.ids, std::nullopt, norm);
            Var pl = tf.completion_logprob_g(t, h_l, lx, tr.rejected.ids, std::nullopt, norm);
            loss = base_loss(pw, pl);
        } else {
            LatentCoder& coder = *policy_->coder;
            Var h_x = rows(h_w, lx - 1, 1);
            Var hw_last = rows(h_w, static_cast<long>(ids_w.size()) - 1, 1);
            Var hl_last = rows(h_l, static_cast<long>(ids_l.size()) - 1, 1);
            Var prior = coder.prior_logits_g(t, h_x);
            Var posterior = coder.posterior_logits_g(t, hw_last, hl_last);
            Var emb = t.leaf(coder.codebook.embeddings);

            RngStream lat = root_.derive("latent", static_cast<std::uint64_t>(step_),
                                         static_cast<std::uint64_t>(bi));
            Var acc;
            for (int s = 0; s < cfg_.mc_samples; ++s) {
                const Eigen::RowVectorXd np = gumbel_noise_row(lat, coder.K());
                const Eigen::RowVectorXd nq = gumbel_noise_row(lat, coder.K());
                LatentSampleG zs = mix_latent_g(t, prior, posterior, g, cfg_.tau_g, np, nq,
                                                emb, cfg_.hard_gumbel);
                Var pw = tf.completion_logprob_g(t, h_w, lx, tr.chosen.ids, zs.z, norm);
                Var pl = tf.completion_logprob_g(t, h_l, lx, tr.rejected.ids, zs.z, norm);
                Var term = base_loss(pw, pl);
                acc = (s == 0) ? term : acc + term;
            }
            if (cfg_.mc_samples > 1) acc = (1.0 / cfg_.mc_samples) * acc;
            if (cfg_.lambda != 0.0) {
                Var kl = categorical_kl(posterior, prior);
                kl_sum += kl.scalar();
                loss = acc + cfg_.lambda * kl;
            } else {
                kl_sum += categorical_kl(CategoricalDist{posterior.value().row(0).transpose()},
                                         CategoricalDist{prior.value().row(0).transpose()});
                loss = acc;
            }
        }

        if (!std::isfinite(loss.scalar()))
            throw std::runtime_error("align_step: non-finite loss at step " +
                                     std::to_string(step_) + ", batch triple " +
                                     std::to_string(bi));
        loss_sum += loss.scalar();
        t.backward(inv_b * loss);
    }

    StepMetrics row;
    row.step = step_;
    row.loss = loss_sum * inv_b;
    row.kl_term = cfg_.lpc ? kl_sum * inv_b : 0.0;
    row.g = g;
    row.lr = lr;
    row.grad_norm = grad_norm(update_set_);
    opt_.step(update_set_, lr);
    ++step_;
    return row;
}

// ---- run drivers ----------------------------------------------------------------

long resolve_total_steps(const TrainConfig& cfg, std::size_t n_train) {
    if (cfg.total_steps > 0) return cfg.total_steps;
    if (n_train == 0) throw std::invalid_argument("resolve_total_steps: empty dataset");
    const long n = static_cast<long>(n_train);
    const long b = cfg.batch_size;
    return (n + b - 1) / b;  // one epoch
}

std::vector<long> batch_indices(std::uint64_t seed, long step, int batch_size, std::size_t n) {
    if (n == 0) throw std::invalid_argument("batch_indices: empty dataset");
    if (batch_size < 1) throw std::invalid_argument("batch_indices: batch_size must be >= 1");
    if (step < 0) throw std::invalid_argument("batch_indices: negative step");
    const RngStream root = RngStream(seed).derive("align");
    const long nn = static_cast<long>(n);
    std::vector<long> perm;
    long perm_epoch = -1;
    std::vector<long> out;
    out.reserve(static_cast<std::size_t>(batch_size));
    long pos = step * static_cast<long>(batch_size);
    for (int i = 0; i < batch_size; ++i, ++pos) {
        const long epoch = pos / nn;
        if (epoch != perm_epoch) {
            perm.resize(n);
            std::iota(perm.begin(), perm.end(), 0L);
            RngStream s = root.derive("shuffle", static_cast<std::uint64_t>(epoch));
            for (long j = nn - 1; j > 0; --j)
                std::swap(perm[static_cast<std::size_t>(j)],
                          perm[static_cast<std::size_t>(s.next_int(static_cast<int>(j + 1)))]);
            perm_epoch = epoch;
        }
        out.push_back(perm[static_cast<std::size_t>(pos % nn)]);
    }
    return out;
}

namespace {

std::vector<StepMetrics> run_align_loop(AlignTrainer& trainer, PolicyModel& policy,
                                        const std::vector<PreferenceTriple>& train,
                                        const std::string& checkpoint_path,
                                        long checkpoint_every) {
    const TrainConfig& cfg = trainer.config();
    std::vector<StepMetrics> rows;
    rows.reserve(static_cast<std::size_t>(trainer.total_steps() - trainer.step()));
    while (trainer.step() < trainer.total_steps()) {
        const std::vector<long> idx =
            batch_indices(cfg.seed, trainer.step(), cfg.batch_size, train.size());
        std::vector<const PreferenceTriple*> batch;
        batch.reserve(idx.size());
        for (long i : idx) batch.push_back(&train[static_cast<std::size_t>(i)]);
        rows.push_back(trainer.align_step(batch));
        if (!checkpoint_path.empty() && checkpoint_every > 0 &&
            trainer.step() < trainer.total_steps() && trainer.step() % checkpoint_every == 0)
            save_checkpoint(checkpoint_path, policy, trainer.optimizer(), trainer.rng(),
                            trainer.step(), cfg);
    }
    if (!checkpoint_path.empty())
        save_checkpoint(checkpoint_path, policy, trainer.optimizer(), trainer.rng(),
                        trainer.step(), cfg);
    return rows;
}

}  // namespace

std::vector<StepMetrics> align_train(PolicyModel& policy, Transformer* ref,
                                     const std::vector<PreferenceTriple>& train,
                                     const TrainConfig& cfg, const std::string& checkpoint_path,
                                     long checkpoint_every) {
    if (train.empty()) throw std::invalid_argument("align_train: empty dataset");
    TrainConfig resolved = cfg;
    resolved.total_steps = resolve_total_steps(cfg, train.size());
    AlignTrainer trainer(&policy, ref, resolved, resolved.total_steps);
    return run_align_loop(trainer, policy, train, checkpoint_path, checkpoint_every);
}

std::vector<StepMetrics> align_resume(const std::string& checkpoint_path, PolicyModel& policy,
                                      Transformer* ref,
                                      const std::vector<PreferenceTriple>& train) {
    if (train.empty()) throw std::invalid_argument("align_resume: empty dataset");
    TrainConfig cfg;
    AdamW opt;
    RngStream rng(0);
    long step = 0;
    load_checkpoint(checkpoint_path, policy, opt, rng, step, cfg);
    AlignTrainer trainer(&policy, ref, cfg, cfg.total_steps);
    trainer.restore(std::move(opt), step, rng);
    return run_align_loop(trainer, policy, train, checkpoint_path, 0);
}

// ---- checkpoints ------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'L', 'P', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

std::uint32_t crc32_bytes(const std::string& data) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = 0xffffffffu;
    for (unsigned char byte : data) c = table[(c ^ byte) & 0xffu] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

void put_u64(std::string& b, std::uint64_t v) {
    b.append(reinterpret_cast<const char*>(&v), sizeof v);
}
void put_i64(std::string& b, long v) { put_u64(b, static_cast<std::uint64_t>(v)); }
void put_u8(std::string& b, std::uint8_t v) { b.push_back(static_cast<char>(v)); }
void put_f64(std::string& b, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, sizeof u);
    put_u64(b, u);
}
void put_str(std::string& b, const std::string& s) {
    put_u64(b, s.size());
    b += s;
}
void put_mat(std::string& b, const Eigen::MatrixXd& m) {
    put_i64(b, m.rows());
    put_i64(b, m.cols());
    b.append(reinterpret_cast<const char*>(m.data()),
             sizeof(double) * static_cast<std::size_t>(m.size()));
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    explicit Reader(const std::string& b) : buf(b) {}

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw std::runtime_error("checkpoint truncated");
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    long i64() { return static_cast<long>(u64()); }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    double f64() {
        const std::uint64_t u = u64();
        double v;
        std::memcpy(&v, &u, 8);
        return v;
    }
    std::string str() {
        const std::uint64_t n = u64();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    Eigen::MatrixXd mat() {
        const long r = i64(), c = i64();
        if (r < 0 || c < 0) throw std::runtime_error("checkpoint corrupt: bad matrix shape");
        const std::size_t bytes = sizeof(double) * static_cast<std::size_t>(r) *
                                  static_cast<std::size_t>(c);
        need(bytes);
        Eigen::MatrixXd m(r, c);
        std::memcpy(m.data(), buf.data() + pos, bytes);
        pos += bytes;
        return m;
    }
};

void put_config(std::string& b, const TrainConfig& cfg) {
    put_u8(b, static_cast<std::uint8_t>(cfg.objective));
    put_u8(b, cfg.lpc ? 1 : 0);
    put_f64(b, cfg.beta);
    put_f64(b, cfg.lambda);
    put_f64(b, cfg.gamma);
    put_f64(b, cfg.tau);
    put_f64(b, cfg.tau_g);
    put_i64(b, cfg.k);
    put_f64(b, cfg.peak_lr);
    put_f64(b, cfg.warmup_frac);
    put_i64(b, cfg.total_steps);
    put_i64(b, cfg.batch_size);
    put_u64(b, cfg.seed);
    put_i64(b, cfg.mc_samples);
    put_u8(b, cfg.freeze_codebook ? 1 : 0);
    put_u8(b, static_cast<std::uint8_t>(cfg.codebook_init));
    put_u8(b, cfg.hard_gumbel ? 1 : 0);
}

TrainConfig read_config(Reader& r) {
    TrainConfig cfg;
    cfg.objective = static_cast<ObjectiveId>(r.u8());
    cfg.lpc = r.u8() != 0;
    cfg.beta = r.f64();
    cfg.lambda = r.f64();
    cfg.gamma = r.f64();
    cfg.tau = r.f64();
    cfg.tau_g = r.f64();
    cfg.k = static_cast<int>(r.i64());
    cfg.peak_lr = r.f64();
    cfg.warmup_frac = r.f64();
    cfg.total_steps = r.i64();
    cfg.batch_size = static_cast<int>(r.i64());
    cfg.seed = r.u64();
    cfg.mc_samples = static_cast<int>(r.i64());
    cfg.freeze_codebook = r.u8() != 0;
    cfg.codebook_init = static_cast<CodebookInit>(r.u8());
    cfg.hard_gumbel = r.u8() != 0;
    return cfg;
}

}  // namespace

void save_checkpoint(const std::string& path, PolicyModel& policy, const AdamW& opt,
                     const RngStream& rng, long step, const TrainConfig& cfg) {
    std::string payload;
    put_config(payload, cfg);
    put_i64(payload, step);
    for (std::uint64_t w : rng.state()) put_u64(payload, w);

    const std::vector<Parameter*> params = policy.params();
    put_i64(payload, static_cast<long>(params.size()));
    for (const Parameter* p : params) {
        put_str(payload, p->name);
        put_mat(payload, p->value);
    }
    put_i64(payload, opt.t);
    put_i64(payload, static_cast<long>(opt.m.size()));
    for (std::size_t i = 0; i < opt.m.size(); ++i) {
        put_mat(payload, opt.m[i]);
        put_mat(payload, opt.v[i]);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write(kMagic, 4);
    const std::uint32_t version = kVersion;
    f.write(reinterpret_cast<const char*>(&version), sizeof version);
    const std::uint64_t len = payload.size();
    f.write(reinterpret_cast<const char*>(&len), sizeof len);
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    const std::uint32_t crc = crc32_bytes(payload);
    f.write(reinterpret_cast<const char*>(&crc), sizeof crc);
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

void load_checkpoint(const std::string& path, PolicyModel& policy, AdamW& opt, RngStream& rng,
                     long& step, TrainConfig& cfg) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file");
    std::uint32_t version = 0;
    if (!f.read(reinterpret_cast<char*>(&version), sizeof version))
        throw std::runtime_error("load_checkpoint: checkpoint truncated");
    if (version != kVersion)
        throw std::runtime_error("load_checkpoint: checkpoint version " +
                                 std::to_string(version) + " unsupported; this build reads version " +
                                 std::to_string(kVersion));
    std::uint64_t len = 0;
    if (!f.read(reinterpret_cast<char*>(&len), sizeof len))
        throw std::runtime_error("load_checkpoint: checkpoint truncated");
    std::string payload(len, '\0');
    if (!f.read(payload.data(), static_cast<std::streamsize>(len)))
        throw std::runtime_error("load_checkpoint: checkpoint truncated");
    std::uint32_t crc = 0;
    if (!f.read(reinterpret_cast<char*>(&crc), sizeof crc))
        throw std::runtime_error("load_checkpoint: checkpoint truncated");
    if (crc != crc32_bytes(payload))
        throw std::runtime_error("load_checkpoint: integrity check failed (crc mismatch)");

    Reader r(payload);
    cfg = read_config(r);
    step = r.i64();
    std::array<std::uint64_t, 4> state;
    for (auto& w : state) w = r.u64();
    rng.set_state(state);

    const std::vector<Parameter*> params = policy.params();
    const long n = r.i64();
    if (n != static_cast<long>(params.size()))
        throw std::runtime_error("load_checkpoint: checkpoint has " + std::to_string(n) +
                                 " parameters, model has " + std::to_string(params.size()));
    for (Parameter* p : params) {
        const std::string name = r.str();
        if (name != p->name)
            throw std::runtime_error("load_checkpoint: checkpoint parameter '" + name +
                                     "' does not match model parameter '" + p->name + "'");
        Eigen::MatrixXd value = r.mat();
        if (value.rows() != p->value.rows() || value.cols() != p->value.cols())
            throw std::runtime_error("load_checkpoint: shape mismatch for parameter '" + name +
                                     "'");
        p->value = std::move(value);
    }
    opt.t = r.i64();
    const long slots = r.i64();
    opt.m.clear();
    opt.v.clear();
    opt.m.reserve(static_cast<std::size_t>(slots));
    opt.v.reserve(static_cast<std::size_t>(slots));
    for (long i = 0; i < slots; ++i) {
        opt.m.push_back(r.mat());
        opt.v.push_back(r.mat());
    }
}

// ---- weight files ----------------------------------------------------------------

namespace {
constexpr char kWeightsMagic[4] = {'L', 'P', 'C', 'W'};
}

void save_weights(const std::string& path, const std::vector<Parameter*>& params) {
    std::string payload;
    put_i64(payload, static_cast<long>(params.size()));
    for (const Parameter* p : params) {
        put_str(payload, p->name);
        put_mat(payload, p->value);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_weights: cannot open " + path);
    f.write(kWeightsMagic, 4);
    const std::uint32_t version = kVersion;
    f.write(reinterpret_cast<const char*>(&version), sizeof version);
    const std::uint64_t len = payload.size();
    f.write(reinterpret_cast<const char*>(&len), sizeof len);
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    const std::uint32_t crc = crc32_bytes(payload);
    f.write(reinterpret_cast<const char*>(&crc), sizeof crc);
    if (!f) throw std::runtime_error("save_weights: write failed for " + path);
}

void load_weights(const std::string& path, const std::vector<Parameter*>& params) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_weights: cannot open " + path);
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, kWeightsMagic, 4) != 0)
        throw std::runtime_error("load_weights: " + path + " is not a weights file");
    std::uint32_t version = 0;
    if (!f.read(reinterpret_cast<char*>(&version), sizeof version))
        throw std::runtime_error("load_weights: weights file truncated");
    if (version != kVersion)
        throw std::runtime_error("load_weights: weights version " + std::to_string(version) +
                                 " unsupported; this build reads version " +
                                 std::to_string(kVersion));
    std::uint64_t len = 0;
    if (!f.read(reinterpret_cast<char*>(&len), sizeof len))
        throw std::runtime_error("load_weights: weights file truncated");
    std::string payload(len, '\0');
    if (!f.read(payload.data(), static_cast<std::streamsize>(len)))
        throw std::runtime_error("load_weights: weights file truncated");
    std::uint32_t crc = 0;
    if (!f.read(reinterpret_cast<char*>(&crc), sizeof crc))
        throw std::runtime_error("load_weights: weights file truncated");
    if (crc != crc32_bytes(payload))
        throw std::runtime_error("load_weights: integrity check failed (crc mismatch)");

    Reader r(payload);
    const long n = r.i64();
    if (n != static_cast<long>(params.size()))
        throw std::runtime_error("load_weights: file has " + std::to_string(n) +
                                 " parameters, model has " + std::to_string(params.size()));
    for (Parameter* p : params) {
        const std::string name = r.str();
        if (name != p->name)
            throw std::runtime_error("load_weights: file parameter '" + name +
                                     "' does not match model parameter '" + p->name + "'");
        Eigen::MatrixXd value = r.mat();
        if (value.rows() != p->value.rows() || value.cols() != p->value.cols())
            throw std::runtime_error("load_weights: shape mismatch for parameter '" + name +
                                     "'");
        p->value = std::move(value);
    }
}

}  // namespace lpc
