#pragma once

// Tiny fixed-context autoregressive policy: the last `context` token
// embeddings are concatenated, passed through one tanh hidden layer and a
// linear output head, and softmaxed over the vocabulary. Everything is
// 64-bit and the log-probability gradient is derived by hand, so finite
// differences can check it tightly.
//
// Canonical flat parameter order (FlatGradient and checkpoints use it):
//   E  (V x d, row-major by token id)
//   W1 ((K*d) x h, row-major, input index major)
//   b1 (h)
//   W2 (h x V, row-major, hidden index major)
//   b2 (V)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "selfcontrast/common.hpp"
#include "selfcontrast/corpus.hpp"
#include "selfcontrast/rng.hpp"
#include "selfcontrast/vocab.hpp"

namespace selfcontrast {

struct Dims {
    int vocab = 28;
    int context = 8;
    int embed = 8;
    int hidden = 32;

    void validate() const {
        if (vocab < Vocab::kReserved + 1 || context < 1 || embed < 1 || hidden < 1)
            throw std::invalid_argument("invalid model dims");
    }

    size_t param_count() const {
        const auto V = static_cast<size_t>(vocab), K = static_cast<size_t>(context),
                   d = static_cast<size_t>(embed), h = static_cast<size_t>(hidden);
        return V * d + K * d * h + h + h * V + V;
    }

    bool operator==(const Dims&) const = default;
};

using FlatGradient = std::vector<double>;  // length param_count(), canonical order

class ModelParams {
public:
    explicit ModelParams(Dims dims)
        : dims_((dims.validate(), dims)), theta_(dims_.param_count(), 0.0) {}

    const Dims& dims() const { return dims_; }
    std::vector<double>& flat() { return theta_; }
    const std::vector<double>& flat() const { return theta_; }

    size_t offset_e() const { return 0; }
    size_t offset_w1() const {
        return static_cast<size_t>(dims_.vocab) * static_cast<size_t>(dims_.embed);
    }
    size_t offset_b1() const {
        return offset_w1() + static_cast<size_t>(dims_.context) *
                                 static_cast<size_t>(dims_.embed) *
                                 static_cast<size_t>(dims_.hidden);
    }
    size_t offset_w2() const { return offset_b1() + static_cast<size_t>(dims_.hidden); }
    size_t offset_b2() const {
        return offset_w2() +
               static_cast<size_t>(dims_.hidden) * static_cast<size_t>(dims_.vocab);
    }

    std::span<double> embedding_row(int token) {
        return {theta_.data() + offset_e() +
                    static_cast<size_t>(token) * static_cast<size_t>(dims_.embed),
                static_cast<size_t>(dims_.embed)};
    }
    std::span<const double> embedding_row(int token) const {
        return {theta_.data() + offset_e() +
                    static_cast<size_t>(token) * static_cast<size_t>(dims_.embed),
                static_cast<size_t>(dims_.embed)};
    }

    bool operator==(const ModelParams&) const = default;

private:
    Dims dims_;
    std::vector<double> theta_;
};

/// Content hash of dims + parameter bytes (reference-immutability checks).
inline uint64_t params_hash(const ModelParams& mp) {
    const auto& d = mp.dims();
    const int header[4] = {d.vocab, d.context, d.embed, d.hidden};
    uint64_t h = fnv1a64({reinterpret_cast<const char*>(header), sizeof(header)});
    return fnv1a64({reinterpret_cast<const char*>(mp.flat().data()),
                    mp.flat().size() * sizeof(double)},
                   h);
}

/// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] (fan_in = d for E,
/// K*d for W1, h for W2), biases zero. Deterministic given seed; draw order
/// is the canonical parameter order.
inline ModelParams init_params(Dims dims, uint64_t seed) {
    dims.validate();
    ModelParams mp(dims);
    Rng rng(seed);
    auto& theta = mp.flat();
    const auto fill = [&](size_t begin, size_t end, double scale) {
        for (size_t i = begin; i < end; ++i) theta[i] = rng.uniform(-scale, scale);
    };
    fill(mp.offset_e(), mp.offset_w1(), 1.0 / std::sqrt(static_cast<double>(dims.embed)));
    fill(mp.offset_w1(), mp.offset_b1(),
         1.0 / std::sqrt(static_cast<double>(dims.context) * dims.embed));
    fill(mp.offset_w2(), mp.offset_b2(), 1.0 / std::sqrt(static_cast<double>(dims.hidden)));
    return mp;
}

namespace detail {

constexpr size_t kMaxSequenceTokens = 1024;

struct LmWorkspace {
    std::vector<int> ctx;
    std::vector<double> x;       // K*d concatenated embeddings
    std::vector<double> act;     // h, tanh activations
    std::vector<double> logits;  // V
    std::vector<double> logp;    // V
    std::vector<double> g_act;   // h
    std::vector<double> g_x;     // K*d

    void resize(const Dims& d) {
        ctx.assign(static_cast<size_t>(d.context), Vocab::kPad);
        x.assign(static_cast<size_t>(d.context) * d.embed, 0.0);
        act.assign(static_cast<size_t>(d.hidden), 0.0);
        logits.assign(static_cast<size_t>(d.vocab), 0.0);
        logp.assign(static_cast<size_t>(d.vocab), 0.0);
        g_act.assign(static_cast<size_t>(d.hidden), 0.0);
        g_x.assign(static_cast<size_t>(d.context) * d.embed, 0.0);
    }
};

inline void check_ids(std::span<const int> ids, int vocab, const char* what) {
    for (int id : ids)
        if (id < 0 || id >= vocab)
            throw std::invalid_argument(std::string(what) + " token id out of range: " +
                                        std::to_string(id));
}

/// Last K tokens of seq, left-padded with PAD.
inline void fill_context(std::span<const int> seq, int K, std::vector<int>& ctx) {
    ctx.assign(static_cast<size_t>(K), Vocab::kPad);
    const int n = std::min<int>(static_cast<int>(seq.size()), K);
    for (int i = 0; i < n; ++i)
        ctx[static_cast<size_t>(K - n + i)] = seq[seq.size() - static_cast<size_t>(n) +
                                                  static_cast<size_t>(i)];
}

inline void forward_step(const ModelParams& mp, LmWorkspace& w) {
    const auto& d = mp.dims();
    const auto& theta = mp.flat();
    const auto K = static_cast<size_t>(d.context), emb = static_cast<size_t>(d.embed),
               h = static_cast<size_t>(d.hidden), V = static_cast<size_t>(d.vocab);

    for (size_t k = 0; k < K; ++k) {
        const auto row = mp.embedding_row(w.ctx[k]);
        for (size_t j = 0; j < emb; ++j) w.x[k * emb + j] = row[j];
    }

    const double* W1 = theta.data() + mp.offset_w1();
    const double* b1 = theta.data() + mp.offset_b1();
    const size_t in = K * emb;
    for (size_t j = 0; j < h; ++j) w.act[j] = b1[j];
    for (size_t i = 0; i < in; ++i) {
        const double xi = w.x[i];
        if (xi == 0.0) continue;
        const double* row = W1 + i * h;
        for (size_t j = 0; j < h; ++j) w.act[j] += xi * row[j];
    }
    for (size_t j = 0; j < h; ++j) w.act[j] = std::tanh(w.act[j]);

    const double* W2 = theta.data() + mp.offset_w2();
    const double* b2 = theta.data() + mp.offset_b2();
    for (size_t v = 0; v < V; ++v) w.logits[v] = b2[v];
    for (size_t j = 0; j < h; ++j) {
        const double aj = w.act[j];
        const double* row = W2 + j * V;
        for (size_t v = 0; v < V; ++v) w.logits[v] += aj * row[v];
    }
}

/// logits -> log softmax into w.logp.
inline void log_softmax(LmWorkspace& w) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double u : w.logits) mx = std::max(mx, u);
    double sum = 0.0;
    for (size_t v = 0; v < w.logits.size(); ++v) sum += std::exp(w.logits[v] - mx);
    const double lse = mx + std::log(sum);
    for (size_t v = 0; v < w.logits.size(); ++v) w.logp[v] = w.logits[v] - lse;
}

}  // namespace detail

/// Exact next-token log-probabilities after `seq` (prompt plus any tokens
/// generated so far).
inline std::vector<double> next_token_logprobs(const ModelParams& mp, std::span<const int> seq) {
    detail::check_ids(seq, mp.dims().vocab, "sequence");
    detail::LmWorkspace w;
    w.resize(mp.dims());
    detail::fill_context(seq, mp.dims().context, w.ctx);
    detail::forward_step(mp, w);
    detail::log_softmax(w);
    return w.logp;
}

/// log p(response, EOS | prompt): sum of per-position log softmax terms over
/// the response tokens plus the terminating EOS.
inline double logprob(const ModelParams& mp, std::span<const int> prompt,
                      std::span<const int> response) {
    const auto& d = mp.dims();
    detail::check_ids(prompt, d.vocab, "prompt");
    detail::check_ids(response, d.vocab, "response");
    if (prompt.size() + response.size() + 1 > detail::kMaxSequenceTokens)
        throw std::invalid_argument("sequence too long (max " +
                                    std::to_string(detail::kMaxSequenceTokens) + " tokens)");

    detail::LmWorkspace w;
    w.resize(d);
    std::vector<int> seq(prompt.begin(), prompt.end());
    double total = 0.0;
    for (size_t t = 0; t <= response.size(); ++t) {
        const int target = t < response.size() ? response[t] : Vocab::kEos;
        detail::fill_context(seq, d.context, w.ctx);
        detail::forward_step(mp, w);
        detail::log_softmax(w);
        total += w.logp[static_cast<size_t>(target)];
        if (t < response.size()) seq.push_back(target);
    }
    return total;
}

/// Analytic d logprob / d theta in canonical order. Accumulates into `grad`
/// scaled by `scale` so callers can form weighted sums without temporaries.
inline void accumulate_grad_logprob(const ModelParams& mp, std::span<const int> prompt,
                                    std::span<const int> response, double scale,
                                    FlatGradient& grad) {
    const auto& d = mp.dims();
    detail::check_ids(prompt, d.vocab, "prompt");
    detail::check_ids(response, d.vocab, "response");
    if (prompt.size() + response.size() + 1 > detail::kMaxSequenceTokens)
        throw std::invalid_argument("sequence too long (max " +
                                    std::to_string(detail::kMaxSequenceTokens) + " tokens)");
    if (grad.size() != mp.flat().size())
        throw std::invalid_argument("gradient buffer has wrong length");

    const auto K = static_cast<size_t>(d.context), emb = static_cast<size_t>(d.embed),
               h = static_cast<size_t>(d.hidden), V = static_cast<size_t>(d.vocab);
    const auto& theta = mp.flat();
    const double* W1 = theta.data() + mp.offset_w1();
    const double* W2 = theta.data() + mp.offset_w2();
    double* gE = grad.data() + mp.offset_e();
    double* gW1 = grad.data() + mp.offset_w1();
    double* gb1 = grad.data() + mp.offset_b1();
    double* gW2 = grad.data() + mp.offset_w2();
    double* gb2 = grad.data() + mp.offset_b2();

    detail::LmWorkspace w;
    w.resize(d);
    std::vector<double> g_u(V);
    std::vector<int> seq(prompt.begin(), prompt.end());

    for (size_t t = 0; t <= response.size(); ++t) {
        const int target = t < response.size() ? response[t] : Vocab::kEos;
        detail::fill_context(seq, d.context, w.ctx);
        detail::forward_step(mp, w);
        detail::log_softmax(w);

        // d logp[target] / d logits = onehot(target) - softmax
        for (size_t v = 0; v < V; ++v) g_u[v] = -std::exp(w.logp[v]);
        g_u[static_cast<size_t>(target)] += 1.0;

        for (size_t v = 0; v < V; ++v) gb2[v] += scale * g_u[v];
        for (size_t j = 0; j < h; ++j) {
            const double aj = w.act[j];
            double acc = 0.0;
            const double* row = W2 + j * V;
            double* grow = gW2 + j * V;
            for (size_t v = 0; v < V; ++v) {
                grow[v] += scale * aj * g_u[v];
                acc += row[v] * g_u[v];
            }
            w.g_act[j] = acc * (1.0 - aj * aj);  // tanh backward
        }
        for (size_t j = 0; j < h; ++j) gb1[j] += scale * w.g_act[j];
        const size_t in = K * emb;
        for (size_t i = 0; i < in; ++i) {
            const double xi = w.x[i];
            const double* row = W1 + i * h;
            double* grow = gW1 + i * h;
            double acc = 0.0;
            for (size_t j = 0; j < h; ++j) {
                const double gz = w.g_act[j];
                grow[j] += scale * xi * gz;
                acc += row[j] * gz;
            }
            w.g_x[i] = acc;
        }
        for (size_t k = 0; k < K; ++k) {
            double* erow = gE + static_cast<size_t>(w.ctx[k]) * emb;
            for (size_t j = 0; j < emb; ++j) erow[j] += scale * w.g_x[k * emb + j];
        }
        if (t < response.size()) seq.push_back(target);
    }
}

inline FlatGradient grad_logprob(const ModelParams& mp, std::span<const int> prompt,
                                 std::span<const int> response) {
    FlatGradient grad(mp.flat().size(), 0.0);
    accumulate_grad_logprob(mp, prompt, response, 1.0, grad);
    return grad;
}

struct SampleTrace {
    std::vector<int> response;  // user-symbol tokens only
    std::vector<int> draws;     // every raw draw, terminator included
};

/// Ancestral sampling. temperature == 0 selects the greedy/argmax mode (the
/// temperature -> 0+ limit); otherwise logits are divided by temperature and
/// nucleus truncation keeps the smallest descending-probability prefix with
/// mass >= top_p (ties broken by lower token index). Draws come from the
/// full truncated distribution over the vocabulary; any reserved draw (EOS,
/// or BOS/PAD from an untrained policy) terminates generation, as does
/// max_len. Deterministic given seed.
inline SampleTrace sample_with_trace(const ModelParams& mp, std::span<const int> prompt,
                                     double temperature, double top_p, int max_len,
                                     uint64_t seed) {
    const auto& d = mp.dims();
    detail::check_ids(prompt, d.vocab, "prompt");
    if (temperature < 0.0) throw std::invalid_argument("temperature must be >= 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("top_p must be in (0, 1]");
    if (max_len < 0) throw std::invalid_argument("max_len must be >= 0");

    detail::LmWorkspace w;
    w.resize(d);
    Rng rng(seed);
    const auto V = static_cast<size_t>(d.vocab);
    std::vector<size_t> order(V);
    std::vector<double> probs(V);
    std::vector<int> seq(prompt.begin(), prompt.end());
    SampleTrace out;

    for (int step = 0; step < max_len; ++step) {
        detail::fill_context(seq, d.context, w.ctx);
        detail::forward_step(mp, w);

        int tok;
        if (temperature == 0.0) {
            size_t best = 0;
            for (size_t v = 1; v < V; ++v)
                if (w.logits[v] > w.logits[best]) best = v;
            tok = static_cast<int>(best);
        } else {
            for (size_t v = 0; v < V; ++v) w.logits[v] /= temperature;
            detail::log_softmax(w);
            for (size_t v = 0; v < V; ++v) probs[v] = std::exp(w.logp[v]);

            for (size_t v = 0; v < V; ++v) order[v] = v;
            std::stable_sort(order.begin(), order.end(),
                             [&](size_t a, size_t b) { return probs[a] > probs[b]; });

            size_t kept = V;
            double mass = 0.0;
            for (size_t r = 0; r < V; ++r) {
                mass += probs[order[r]];
                if (mass >= top_p) {
                    kept = r + 1;
                    break;
                }
            }
            double kept_mass = 0.0;
            for (size_t r = 0; r < kept; ++r) kept_mass += probs[order[r]];

            const double u = rng.uniform01() * kept_mass;
            double cum = 0.0;
            size_t pick = kept - 1;
            for (size_t r = 0; r < kept; ++r) {
                cum += probs[order[r]];
                if (u < cum) {
                    pick = r;
                    break;
                }
            }
            tok = static_cast<int>(order[pick]);
        }

        out.draws.push_back(tok);
        if (tok < Vocab::kReserved) break;
        out.response.push_back(tok);
        seq.push_back(tok);
    }
    return out;
}

inline std::vector<int> sample(const ModelParams& mp, std::span<const int> prompt,
                               double temperature, double top_p, int max_len, uint64_t seed) {
    return sample_with_trace(mp, prompt, temperature, top_p, max_len, seed).response;
}

inline std::vector<int> greedy_decode(const ModelParams& mp, std::span<const int> prompt,
                                      int max_len) {
    return sample(mp, prompt, 0.0, 1.0, max_len, 0);
}

// ---------------------------------------------------------------------------
// Optimizers + SFT training
// ---------------------------------------------------------------------------

enum class Optimizer { sgd, adamw };

inline const char* optimizer_name(Optimizer o) {
    return o == Optimizer::sgd ? "sgd" : "adamw";
}

inline Optimizer optimizer_from_name(std::string_view name) {
    if (name == "sgd") return Optimizer::sgd;
    if (name == "adamw") return Optimizer::adamw;
    throw std::invalid_argument("unknown optimizer: " + std::string(name));
}

/// Shared update rule: plain GD by default, AdamW optionally.
class OptimizerState {
public:
    OptimizerState(Optimizer kind, size_t n) : kind_(kind) {
        if (kind_ == Optimizer::adamw) {
            m_.assign(n, 0.0);
            v_.assign(n, 0.0);
        }
    }

    void apply(std::vector<double>& theta, const FlatGradient& grad, double lr,
               double weight_decay = 0.0) {
        if (kind_ == Optimizer::sgd) {
            for (size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * grad[i];
            return;
        }
        ++t_;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
        for (size_t i = 0; i < theta.size(); ++i) {
            m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
            v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
            const double step = (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
            theta[i] -= lr * (step + weight_decay * theta[i]);
        }
    }

private:
    Optimizer kind_;
    std::vector<double> m_, v_;
    double t_ = 0;
};

struct SftConfig {
    int epochs = 1;
    int batch_size = 32;
    double learning_rate = 1e-2;
    uint64_t seed = 0;
    Optimizer optimizer = Optimizer::sgd;

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("sft epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("sft batch_size must be >= 1");
        if (learning_rate < 0.0) throw std::invalid_argument("sft learning_rate must be >= 0");
    }
};

struct TokenizedPair {
    std::vector<int> prompt;
    std::vector<int> target;
};

struct SftResult {
    ModelParams params;
    std::vector<double> epoch_mean_loss;  // mean per-example sequence NLL, as visited
};

/// Mini-batch training on mean sequence NLL (-logprob of target plus EOS).
/// Record order is reshuffled each epoch from config.seed; accumulation
/// order inside a batch is the shuffled order, so runs are bit-reproducible.
inline SftResult sft_train(const ModelParams& start, const std::vector<TokenizedPair>& data,
                           const SftConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw std::invalid_argument("sft_train: dataset empty");

    SftResult res{start, {}};
    OptimizerState opt(cfg.optimizer, res.params.flat().size());
    Rng rng(cfg.seed);
    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    FlatGradient grad(res.params.flat().size(), 0.0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_loss = 0.0;
            const double inv = 1.0 / static_cast<double>(end - begin);
            for (size_t k = begin; k < end; ++k) {
                const auto& ex = data[order[k]];
                batch_loss += -logprob(res.params, ex.prompt, ex.target);
                accumulate_grad_logprob(res.params, ex.prompt, ex.target, -inv, grad);
            }
            batch_loss *= inv;
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("sft_train: non-finite loss at epoch " +
                                         std::to_string(epoch + 1) + ", batch starting " +
                                         std::to_string(begin));
            epoch_loss += batch_loss * static_cast<double>(end - begin);
            opt.apply(res.params.flat(), grad, cfg.learning_rate);
        }
        res.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    }
    return res;
}

inline std::vector<TokenizedPair> tokenize_pairs(const std::vector<PromptRecord>& records,
                                                 const Vocab& vocab) {
    std::vector<TokenizedPair> out;
    out.reserve(records.size());
    for (const auto& r : records)
        out.push_back({vocab.tokenize(r.prompt), vocab.tokenize(r.target)});
    return out;
}

}  // namespace selfcontrast
