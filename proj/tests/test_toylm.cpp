#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>

#include "oracles.hpp"
#include "selfcontrast/checkpoint.hpp"
#include "selfcontrast/corpus.hpp"
#include "selfcontrast/toylm.hpp"

using namespace selfcontrast;

namespace {

ModelParams small_random_params(uint64_t seed, Dims dims = {28, 4, 3, 5}) {
    auto mp = init_params(dims, seed);
    return mp;
}

std::vector<int> random_ids(Rng& rng, int vocab, size_t min_len, size_t max_len) {
    std::vector<int> ids;
    const auto len = min_len + rng.below(max_len - min_len + 1);
    for (uint64_t i = 0; i < len; ++i)
        ids.push_back(Vocab::kReserved +
                      static_cast<int>(rng.below(static_cast<uint64_t>(vocab - Vocab::kReserved))));
    return ids;
}

}  // namespace

TEST(ModelParams, ParamCountByCounting) {
    const Dims dims{23, 8, 8, 32};
    // count the canonical segments one by one
    size_t counted = 0;
    counted += 23 * 8;      // E
    counted += 8 * 8 * 32;  // W1
    counted += 32;          // b1
    counted += 32 * 23;     // W2
    counted += 23;          // b2
    EXPECT_EQ(counted, 3023u);
    EXPECT_EQ(dims.param_count(), counted);
    EXPECT_EQ(init_params(dims, 1).flat().size(), counted);
}

TEST(ModelParams, InitDeterministicBiasesZero) {
    const Dims dims{28, 8, 8, 32};
    const auto a = init_params(dims, 42);
    const auto b = init_params(dims, 42);
    EXPECT_EQ(a.flat(), b.flat());  // bitwise
    const auto c = init_params(dims, 43);
    EXPECT_NE(a.flat(), c.flat());

    for (size_t i = a.offset_b1(); i < a.offset_w2(); ++i) EXPECT_EQ(a.flat()[i], 0.0);
    for (size_t i = a.offset_b2(); i < a.flat().size(); ++i) EXPECT_EQ(a.flat()[i], 0.0);

    const double s_e = 1.0 / std::sqrt(8.0);
    for (size_t i = 0; i < a.offset_w1(); ++i) {
        EXPECT_GE(a.flat()[i], -s_e);
        EXPECT_LT(a.flat()[i], s_e);
    }
}

TEST(Logprob, UniformLogitsGiveMinusLogVPerStep) {
    const Dims dims{28, 8, 8, 32};
    ModelParams zero(dims);  // all weights zero -> uniform softmax
    const auto& vocab = Vocab::toy();
    const auto prompt = vocab.tokenize("abc");
    const auto response = vocab.tokenize("cba");
    const double expected = -(3.0 + 1.0) * std::log(28.0);  // L tokens + EOS
    EXPECT_NEAR(logprob(zero, prompt, response), expected, 1e-12);

    // zero-length response still pays the EOS step
    EXPECT_NEAR(logprob(zero, prompt, {}), -std::log(28.0), 1e-12);
}

TEST(Logprob, InvariantToConstantShiftOfOutputBias) {
    auto mp = small_random_params(7);
    const auto& vocab = Vocab::toy();
    const auto prompt = vocab.tokenize("ab");
    const auto response = vocab.tokenize("ba");
    const double before = logprob(mp, prompt, response);
    for (size_t i = mp.offset_b2(); i < mp.flat().size(); ++i) mp.flat()[i] += 0.37;
    EXPECT_NEAR(logprob(mp, prompt, response), before, 1e-12);
}

TEST(Logprob, NextTokenProbabilitiesSumToOne) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const auto mp = small_random_params(rng.next_u64(), {28, 6, 4, 9});
        const auto seq = random_ids(rng, 28, 0, 10);
        const auto logp = next_token_logprobs(mp, seq);
        double sum = 0.0;
        for (double lp : logp) sum += std::exp(lp);
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Logprob, RejectsBadInput) {
    const auto mp = small_random_params(1);
    EXPECT_THROW(logprob(mp, std::vector<int>{999}, std::vector<int>{3}), std::invalid_argument);
    const std::vector<int> overlong(2000, 3);
    EXPECT_THROW(logprob(mp, overlong, std::vector<int>{3}), std::invalid_argument);
}

TEST(GradLogprob, MatchesCentralFiniteDifferences) {
    Rng rng(1234);
    double worst = 0.0;
    for (int instance = 0; instance < 25; ++instance) {
        const Dims dims{28, 4, 3, 5};
        const auto mp = small_random_params(rng.next_u64(), dims);
        const auto prompt = random_ids(rng, dims.vocab, 1, 4);
        const auto response = random_ids(rng, dims.vocab, 0, 4);
        const auto analytic = grad_logprob(mp, prompt, response);
        const auto res = oracles::grad_check(
            mp, [&](const ModelParams& p) { return logprob(p, prompt, response); }, analytic,
            rng, 40);
        worst = std::max(worst, res.max_rel_error);
    }
    EXPECT_LE(worst, 1e-6);
}

TEST(GradLogprob, OutputBiasBlockSumsToZero) {
    Rng rng(99);
    const auto mp = small_random_params(5);
    const auto prompt = random_ids(rng, 28, 1, 4);
    const auto response = random_ids(rng, 28, 1, 4);
    const auto g = grad_logprob(mp, prompt, response);
    // single step first: sum over vocab is (1 - sum softmax) = 0
    const auto g1 = grad_logprob(mp, prompt, {});
    double sum1 = 0.0, sum_all = 0.0;
    for (size_t i = mp.offset_b2(); i < mp.flat().size(); ++i) {
        sum1 += g1[i];
        sum_all += g[i];
    }
    EXPECT_NEAR(sum1, 0.0, 1e-12);
    EXPECT_NEAR(sum_all, 0.0, 1e-12);
}

// Independent single-step oracle: an EOS-only response reduces to one
// softmax step, whose gradient is computed here from scratch.
TEST(GradLogprob, EosOnlyResponseMatchesHandComputedSingleStep) {
    const Dims dims{5, 2, 2, 3};  // reserved + symbols {a, b}
    auto mp = init_params(dims, 21);
    const std::vector<int> prompt{3};  // 'a'

    const auto V = static_cast<size_t>(dims.vocab), K = static_cast<size_t>(dims.context),
               d = static_cast<size_t>(dims.embed), h = static_cast<size_t>(dims.hidden);
    const auto& th = mp.flat();

    // forward: context = [PAD, 'a']
    const std::vector<int> ctx{Vocab::kPad, 3};
    std::vector<double> x(K * d);
    for (size_t k = 0; k < K; ++k)
        for (size_t j = 0; j < d; ++j)
            x[k * d + j] = th[mp.offset_e() + static_cast<size_t>(ctx[k]) * d + j];
    std::vector<double> a(h);
    for (size_t jj = 0; jj < h; ++jj) {
        double z = th[mp.offset_b1() + jj];
        for (size_t i = 0; i < K * d; ++i) z += x[i] * th[mp.offset_w1() + i * h + jj];
        a[jj] = std::tanh(z);
    }
    std::vector<double> logits(V);
    for (size_t v = 0; v < V; ++v) {
        double u = th[mp.offset_b2() + v];
        for (size_t jj = 0; jj < h; ++jj) u += a[jj] * th[mp.offset_w2() + jj * V + v];
        logits[v] = u;
    }
    double mx = *std::max_element(logits.begin(), logits.end());
    double Z = 0.0;
    for (double u : logits) Z += std::exp(u - mx);
    std::vector<double> p(V);
    for (size_t v = 0; v < V; ++v) p[v] = std::exp(logits[v] - mx) / Z;

    // backward by the softmax/tanh chain rule, written out longhand
    std::vector<double> expected(th.size(), 0.0);
    std::vector<double> gu(V);
    for (size_t v = 0; v < V; ++v) gu[v] = (v == Vocab::kEos ? 1.0 : 0.0) - p[v];
    for (size_t v = 0; v < V; ++v) expected[mp.offset_b2() + v] = gu[v];
    std::vector<double> ga(h, 0.0);
    for (size_t jj = 0; jj < h; ++jj)
        for (size_t v = 0; v < V; ++v) {
            expected[mp.offset_w2() + jj * V + v] = a[jj] * gu[v];
            ga[jj] += th[mp.offset_w2() + jj * V + v] * gu[v];
        }
    std::vector<double> gz(h);
    for (size_t jj = 0; jj < h; ++jj) gz[jj] = ga[jj] * (1.0 - a[jj] * a[jj]);
    for (size_t jj = 0; jj < h; ++jj) expected[mp.offset_b1() + jj] = gz[jj];
    std::vector<double> gx(K * d, 0.0);
    for (size_t i = 0; i < K * d; ++i)
        for (size_t jj = 0; jj < h; ++jj) {
            expected[mp.offset_w1() + i * h + jj] = x[i] * gz[jj];
            gx[i] += th[mp.offset_w1() + i * h + jj] * gz[jj];
        }
    for (size_t k = 0; k < K; ++k)
        for (size_t j = 0; j < d; ++j)
            expected[mp.offset_e() + static_cast<size_t>(ctx[k]) * d + j] += gx[k * d + j];

    const auto actual = grad_logprob(mp, prompt, {});
    ASSERT_EQ(actual.size(), expected.size());
    for (size_t i = 0; i < actual.size(); ++i) EXPECT_NEAR(actual[i], expected[i], 1e-14);
}

TEST(Sample, DeterministicGivenSeed) {
    const auto mp = small_random_params(17);
    const std::vector<int> prompt{3, 4, 5};
    const auto a = sample(mp, prompt, 1.0, 1.0, 8, 999);
    const auto b = sample(mp, prompt, 1.0, 1.0, 8, 999);
    EXPECT_EQ(a, b);
}

TEST(Sample, GreedyReturnsModalCompletion) {
    // Bias the logits directly: zero weights + b2 makes every step emit the
    // same distribution, so the modal completion is argmax(b2) repeated.
    const Dims dims{6, 2, 2, 3};
    ModelParams mp(dims);
    mp.flat()[mp.offset_b2() + 4] = 2.0;  // token 4 dominant
    mp.flat()[mp.offset_b2() + Vocab::kEos] = 1.0;
    const auto out = greedy_decode(mp, std::vector<int>{3}, 5);
    EXPECT_EQ(out, (std::vector<int>{4, 4, 4, 4, 4}));

    // tie-break: lowest index wins
    ModelParams tie(dims);
    const auto tied = sample_with_trace(tie, std::vector<int>{3}, 0.0, 1.0, 3, 0);
    EXPECT_EQ(tied.draws.front(), Vocab::kBos);  // all-equal logits -> index 0
}

TEST(Sample, StopsAtEosAndRespectsMaxLen) {
    const Dims dims{6, 2, 2, 3};
    ModelParams mp(dims);
    mp.flat()[mp.offset_b2() + Vocab::kEos] = 5.0;
    EXPECT_TRUE(greedy_decode(mp, std::vector<int>{3}, 9).empty());

    ModelParams loop(dims);
    loop.flat()[loop.offset_b2() + 3] = 5.0;
    EXPECT_EQ(greedy_decode(loop, std::vector<int>{4}, 4).size(), 4u);
}

TEST(Sample, NucleusTruncationKeepsSmallestPrefix) {
    // logits via b2: probs ~ (0.5, 0.3, 0.2) over three tokens; top_p = 0.6
    // keeps exactly the two most likely.
    const Dims dims{6, 2, 2, 3};
    ModelParams mp(dims);
    const double base = 10.0;
    mp.flat()[mp.offset_b2() + 3] = base + std::log(0.5);
    mp.flat()[mp.offset_b2() + 4] = base + std::log(0.3);
    mp.flat()[mp.offset_b2() + 5] = base + std::log(0.2);
    // tokens 0..2 get logit 0 -> negligible probability
    std::map<int, int> counts;
    for (int s = 0; s < 4000; ++s) {
        const auto tr = sample_with_trace(mp, std::vector<int>{3}, 1.0, 0.6, 1,
                                          static_cast<uint64_t>(s));
        ASSERT_EQ(tr.draws.size(), 1u);
        counts[tr.draws[0]]++;
    }
    EXPECT_EQ(counts.count(5), 0u);  // outside the nucleus
    EXPECT_EQ(counts.count(Vocab::kBos), 0u);
    EXPECT_GT(counts[3], counts[4]);
    // renormalized ratio 0.5 : 0.3
    const double ratio = static_cast<double>(counts[3]) / counts[4];
    EXPECT_NEAR(ratio, 5.0 / 3.0, 0.25);
}

TEST(Sample, FullDistributionMatchesSoftmaxWithin3Sigma) {
    const auto mp = small_random_params(23, {28, 4, 3, 5});
    const std::vector<int> prompt{3, 4, 5};
    const auto logp = next_token_logprobs(mp, prompt);

    const int n = 100000;
    std::vector<int> counts(28, 0);
    for (int s = 0; s < n; ++s) {
        const auto tr =
            sample_with_trace(mp, prompt, 1.0, 1.0, 1, derive_seed(555, (uint64_t)s));
        counts[static_cast<size_t>(tr.draws.at(0))]++;
    }
    for (size_t v = 0; v < 28; ++v) {
        const double p = std::exp(logp[v]);
        const double sigma = std::sqrt(p * (1.0 - p) / n);
        EXPECT_NEAR(static_cast<double>(counts[v]) / n, p, 3.0 * sigma + 1e-9)
            << "token " << v;
    }
}

TEST(Sample, ChiSquareGoodnessOfFitAtAlpha01) {
    const auto mp = small_random_params(31, {28, 4, 3, 5});
    const std::vector<int> prompt{5, 6, 7};  // fixed 3-token prompt
    const auto logp = next_token_logprobs(mp, prompt);

    const int n = 100000;
    std::vector<int> counts(28, 0);
    for (int s = 0; s < n; ++s) {
        const auto tr =
            sample_with_trace(mp, prompt, 1.0, 1.0, 1, derive_seed(777, (uint64_t)s));
        counts[static_cast<size_t>(tr.draws.at(0))]++;
    }
    double chi2 = 0.0;
    for (size_t v = 0; v < 28; ++v) {
        const double expected = std::exp(logp[v]) * n;
        ASSERT_GT(expected, 5.0);  // validity of the chi-square approximation
        const double diff = counts[v] - expected;
        chi2 += diff * diff / expected;
    }
    EXPECT_LT(chi2, oracles::chi2_crit_99(27));
}

TEST(SftTrain, ZeroLearningRateIsBitwiseNoOp) {
    const auto& vocab = Vocab::toy();
    TaskSpec task{TaskKind::reverse, 3, "abcdefghij"};
    const auto data = tokenize_pairs(gen_toy_corpus(task, 10, 3), vocab);
    const auto start = small_random_params(8, {28, 8, 4, 8});
    SftConfig cfg;
    cfg.epochs = 3;
    cfg.learning_rate = 0.0;
    const auto res = sft_train(start, data, cfg);
    EXPECT_EQ(res.params.flat(), start.flat());
}

TEST(SftTrain, InitialLossIsUniform) {
    const auto& vocab = Vocab::toy();
    TaskSpec task{TaskKind::reverse, 3, "abcdefghij"};
    const auto data = tokenize_pairs(gen_toy_corpus(task, 16, 3), vocab);
    ModelParams zero({28, 8, 4, 8});
    SftConfig cfg;
    cfg.epochs = 1;
    cfg.learning_rate = 0.0;  // keep the as-visited loss at the uniform value
    const auto res = sft_train(zero, data, cfg);
    EXPECT_NEAR(res.epoch_mean_loss.at(0), 4.0 * std::log(28.0), 1e-12);
}

TEST(SftTrain, OverfitsSingleRecordToGreedyExactness) {
    const auto& vocab = Vocab::toy();
    const PromptRecord rec{"r", "abc", "cba", "reverse"};
    const auto data = tokenize_pairs({rec}, vocab);
    SftConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 1;
    cfg.learning_rate = 0.5;
    const auto res = sft_train(init_params({28, 8, 8, 32}, 4), data, cfg);
    EXPECT_LT(res.epoch_mean_loss.back(), res.epoch_mean_loss.front());
    const auto out = greedy_decode(res.params, vocab.tokenize("abc"), 8);
    EXPECT_EQ(vocab.detokenize(out), "cba");
}

TEST(SftTrain, DeterministicGivenSeedAndAdamWVariant) {
    const auto& vocab = Vocab::toy();
    TaskSpec task{TaskKind::reverse, 2, "abcdef"};
    const auto data = tokenize_pairs(gen_toy_corpus(task, 12, 6), vocab);
    const auto start = init_params({28, 6, 4, 8}, 2);
    SftConfig cfg;
    cfg.epochs = 4;
    cfg.seed = 77;
    const auto a = sft_train(start, data, cfg);
    const auto b = sft_train(start, data, cfg);
    EXPECT_EQ(a.params.flat(), b.params.flat());
    EXPECT_EQ(a.epoch_mean_loss, b.epoch_mean_loss);

    cfg.optimizer = Optimizer::adamw;
    cfg.learning_rate = 0.01;
    const auto c = sft_train(start, data, cfg);
    const auto d = sft_train(start, data, cfg);
    EXPECT_EQ(c.params.flat(), d.params.flat());
    EXPECT_LT(c.epoch_mean_loss.back(), c.epoch_mean_loss.front());
}

TEST(Checkpoint, RoundTripIsValueExact) {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "sc_toylm_test";
    fs::create_directories(dir);
    const auto mp = small_random_params(64, {28, 8, 8, 32});
    save_checkpoint(mp, dir / "m.json", {1, 2, 3});
    const auto loaded = load_checkpoint(dir / "m.json");
    EXPECT_EQ(loaded.params.flat(), mp.flat());
    EXPECT_EQ(loaded.params.dims(), mp.dims());
    EXPECT_EQ(loaded.seed_lineage, (std::vector<uint64_t>{1, 2, 3}));
    EXPECT_EQ(params_hash(loaded.params), params_hash(mp));
}
