#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "medforge/ngram.hpp"
#include "medforge/proxy_decoder.hpp"
#include "support.hpp"

using namespace medforge;
using namespace medforge::proxy;

namespace {

/// Logits are a fixed function of (context length, last token).
class TableProvider : public TokenDistributionProvider {
 public:
  TableProvider(std::size_t v, std::uint64_t seed, double scale = 4.0) : vocab_(v) {
    for (std::size_t i = 0; i < v; ++i) vocab_[i] = "t" + std::to_string(i);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    table_.resize(64 * v);
    for (auto& x : table_) x = u(rng);
  }
  const std::vector<std::string>& vocabulary() const override { return vocab_; }
  std::vector<double> logits(std::span<const TokenId> ctx) const override {
    const std::size_t row = (ctx.size() * 7 + (ctx.empty() ? 0 : static_cast<std::size_t>(ctx.back()))) % 64;
    return {table_.begin() + static_cast<std::ptrdiff_t>(row * vocab_.size()),
            table_.begin() + static_cast<std::ptrdiff_t>((row + 1) * vocab_.size())};
  }

 private:
  std::vector<std::string> vocab_;
  std::vector<double> table_;
};

/// Fixed logits regardless of context.
class ConstProvider : public TokenDistributionProvider {
 public:
  explicit ConstProvider(std::vector<double> l) : l_(std::move(l)) {
    for (std::size_t i = 0; i < l_.size(); ++i) vocab_.push_back("t" + std::to_string(i));
  }
  const std::vector<std::string>& vocabulary() const override { return vocab_; }
  std::vector<double> logits(std::span<const TokenId>) const override { return l_; }
  std::vector<double> l_;

 private:
  std::vector<std::string> vocab_;
};

}  // namespace

TEST(Proxy, SoftmaxIsShiftInvariantAndStable) {
  const std::vector<double> l{1000.0, 1001.0, 999.0};
  const std::vector<double> shifted{0.0, 1.0, -1.0};
  const auto p = softmax(l), q = softmax(shifted);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p[i], q[i], 1e-15);
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-15);
}

TEST(Proxy, IdenticalExpertsLeaveBaseUnchanged) {
  TableProvider base(50, 1), same(50, 2);
  const ProxyEnsemble ens(base, same, same);
  std::mt19937_64 rng(3);
  for (int k = 0; k < 100; ++k) {
    std::vector<TokenId> ctx(rng() % 20);
    for (auto& t : ctx) t = static_cast<TokenId>(rng() % 50);
    const auto p = combine_step(ens, ctx);
    const auto b = provider_step(base, ctx);
    for (std::size_t i = 0; i < p.size(); ++i) ASSERT_NEAR(p[i], b[i], 1e-12);
  }
}

TEST(Proxy, ProductOfProbabilityRatios) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> lb(5), lt(5), lr(5);
    for (int i = 0; i < 5; ++i) lb[i] = u(rng), lt[i] = u(rng), lr[i] = u(rng);
    ConstProvider b(lb), t(lt), r(lr);
    const auto got = combine_step(ProxyEnsemble(b, t, r), {});
    const auto pb = softmax(lb), pt = softmax(lt), pr = softmax(lr);
    std::vector<double> ref(5);
    double z = 0.0;
    for (int i = 0; i < 5; ++i) z += ref[i] = pb[i] * pt[i] / pr[i];
    for (int i = 0; i < 5; ++i) ASSERT_NEAR(got[i], ref[i] / z, 1e-9 * ref[i] / z);
  }
}

TEST(Proxy, AlphaScalesOffset) {
  ConstProvider b({0.0, 0.0}), t({1.0, 0.0}), r({0.0, 0.0});
  const auto l = ProxyEnsemble(b, t, r, 2.5).combined_logits({});
  EXPECT_DOUBLE_EQ(l[0], 2.5);
  EXPECT_DOUBLE_EQ(l[1], 0.0);
}

TEST(Proxy, RejectsMismatchedOrNonFiniteProviders) {
  ConstProvider a({0.0, 0.0}), b({0.0, 0.0, 0.0});
  EXPECT_THROW(ProxyEnsemble(a, b, a), ValidationError);
  ConstProvider bad({0.0, std::nan("")});
  try {
    combine_step(ProxyEnsemble(a, bad, a), {});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("tuned"), std::string::npos);
  }
}

TEST(Proxy, GreedyHonoursMinAndStop) {
  // token 0 (stop) is always most likely, then 2, then 1
  ConstProvider m({5.0, 1.0, 3.0});
  auto r = greedy_decode(m, std::vector<TokenId>{}, 10, 0, {0});
  EXPECT_TRUE(r.tokens.empty());
  EXPECT_TRUE(r.stopped);
  r = greedy_decode(m, std::vector<TokenId>{}, 10, 3, {0});
  EXPECT_EQ(r.tokens, (std::vector<TokenId>{2, 2, 2}));
  EXPECT_TRUE(r.stopped);
  r = greedy_decode(m, std::vector<TokenId>{}, 2, 2, {0});
  EXPECT_EQ(r.tokens.size(), 2u);
  EXPECT_FALSE(r.stopped);
  EXPECT_THROW(greedy_decode(m, std::vector<TokenId>{}, 1, 2, {0}), ValidationError);
}

TEST(Proxy, GreedyTiesGoToLowestIndex) {
  ConstProvider m({1.0, 2.0, 2.0});
  EXPECT_EQ(greedy_decode(m, std::vector<TokenId>{}, 1, 0, {}).tokens, (std::vector<TokenId>{1}));
}

TEST(Ngram, AdditiveSmoothingFormula) {
  const auto lm = ngram::train_ngram({"ab"}, 2, 0.5);
  // vocab: </s>, a, b ; after 'a': b once, total 1
  const auto p = lm.probabilities(std::vector<TokenId>{1});
  EXPECT_DOUBLE_EQ(p[2], 1.5 / 2.5);
  EXPECT_DOUBLE_EQ(p[0], 0.5 / 2.5);
  // '</s>' never appears as a history, so it is unseen -> uniform
  for (double x : lm.probabilities(std::vector<TokenId>{0})) EXPECT_DOUBLE_EQ(x, 1.0 / 3.0);
}

TEST(Ngram, HalfAfterContext) {
  const auto lm = ngram::train_ngram({"ab", "ac"}, 2, 1e-12);
  const auto& v = lm.vocab();
  const auto p = lm.probabilities(v.encode("a"));
  EXPECT_NEAR(p[static_cast<std::size_t>(v.encode("b")[0])], 0.5, 1e-9);
}

TEST(Ngram, PersistenceRoundTrip) {
  testutil::TempDir dir;
  const auto lm = ngram::train_ngram({"hello world", "中文 text"}, 3, 0.1);
  ngram::save_ngram(lm, dir.file("m.json"));
  const auto back = ngram::load_ngram(dir.file("m.json"));
  EXPECT_EQ(back.vocabulary(), lm.vocabulary());
  EXPECT_EQ(back.order(), 3);
  const auto ctx = lm.vocab().encode("he");
  EXPECT_EQ(back.probabilities(ctx), lm.probabilities(ctx));
}

TEST(Ngram, UnknownCharacters) {
  const auto lm = ngram::train_ngram({"ab"}, 2, 1.0);
  EXPECT_THROW(lm.vocab().encode("abz"), ValidationError);
  EXPECT_EQ(lm.vocab().encode("azb", true).size(), 2u);
}
