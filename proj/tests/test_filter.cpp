#include <gtest/gtest.h>

#include <random>
#include <set>

#include "medforge/med_filter.hpp"
#include "support.hpp"

using namespace medforge;
using filter::MatchMode;
using filter::TermSet;

namespace {

std::string words_doc(std::size_t medical, std::size_t total) {
  std::string s;
  for (std::size_t i = 0; i < total; ++i) {
    if (!s.empty()) s += ' ';
    s += i < medical ? "insulin" : "table";
  }
  return s;
}

// Independent recount: ASCII-only docs, single-word terms, space-separated.
double naive_fraction(const std::string& doc, const std::set<std::string>& terms) {
  std::size_t hits = 0, total = 0;
  std::string w;
  auto flush = [&] {
    if (w.empty()) return;
    ++total;
    hits += terms.count(w);
    w.clear();
  };
  for (char c : doc) {
    if (c == ' ' || c == ',' || c == '.') {
      flush();
    } else {
      w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

}  // namespace

TEST(Filter, ExactlyFourPercentIsExcluded) {
  const auto terms = TermSet::from_terms({"insulin"}, MatchMode::word_boundary);
  const std::vector<CorpusRecord> docs{
      make_pretrain("at", Language::en, "", words_doc(1, 25)),     // 0.04
      make_pretrain("at2", Language::en, "", words_doc(4, 100)),   // 0.04
      make_pretrain("above", Language::en, "", words_doc(2, 49)),  // 0.0408
      make_pretrain("below", Language::en, "", words_doc(1, 26)),
  };
  EXPECT_EQ(filter::medical_fraction(docs[0], terms), 0.04);
  const auto res = filter::filter_corpus(docs, terms);
  ASSERT_EQ(res.kept.size(), 1u);
  EXPECT_EQ(res.kept[0].id, "above");
  EXPECT_EQ(res.report.total, 4u);
  EXPECT_FALSE(res.report.docs[0].kept);
}

TEST(Filter, MatchesNaiveRecount) {
  const std::vector<std::string> medical{"insulin", "fever", "tumor", "dose", "Insulin", "FEVER"};
  const std::vector<std::string> plain{"table", "river", "music", "paper", "window", "garden", "doses", "feverish"};
  const std::set<std::string> terms{"insulin", "fever", "tumor", "dose"};
  const auto ts = TermSet::from_terms({"Insulin", "fever", " tumor ", "dose", ""}, MatchMode::word_boundary);
  EXPECT_EQ(ts.size(), 4u);
  std::mt19937_64 rng(11);
  std::vector<CorpusRecord> docs;
  for (int i = 0; i < 1000; ++i) {
    std::string d;
    const std::size_t n = 1 + rng() % 120;
    for (std::size_t k = 0; k < n; ++k) {
      if (!d.empty()) d += (rng() % 7 == 0) ? ", " : " ";
      // mostly non-medical so fractions straddle the threshold
      d += rng() % 25 == 0 ? medical[rng() % medical.size()] : plain[rng() % plain.size()];
    }
    docs.push_back(make_pretrain("d" + std::to_string(i), Language::en, "", d));
  }
  const auto res = filter::filter_corpus(docs, ts, 0.04, 4);
  std::vector<std::string> expect;
  for (const auto& d : docs) {
    if (naive_fraction(d.text, terms) > 0.04) expect.push_back(d.id);
  }
  std::vector<std::string> got;
  for (const auto& d : res.kept) got.push_back(d.id);
  EXPECT_EQ(got, expect);
  EXPECT_GT(got.size(), 50u);
  EXPECT_LT(got.size(), 950u);
}

TEST(Filter, MultiWordTermCountsOnce) {
  const auto ts = TermSet::from_terms({"heart failure", "heart"}, MatchMode::word_boundary);
  EXPECT_EQ(ts.count_words("acute heart failure and heart pain"), (std::pair<std::size_t, std::size_t>{2, 6}));
}

TEST(Filter, WordBoundaryVsSubstring) {
  const auto word = TermSet::from_terms({"dose"}, MatchMode::word_boundary);
  const auto sub = TermSet::from_terms({"dose"}, MatchMode::substring);
  EXPECT_EQ(word.count_words("overdose dose").first, 1u);
  EXPECT_EQ(sub.count_substrings("overdose dose").first, 2u);
  EXPECT_EQ(sub.count_substrings("overdose dose").second, 12u);
}

TEST(Filter, ChineseAlwaysUsesSubstrings) {
  const auto ts = TermSet::from_terms({"高血压"}, MatchMode::word_boundary);
  const auto doc = make_pretrain("z", Language::zh, "", "患者有高血压");
  const auto s = filter::score(doc, ts);
  EXPECT_EQ(s.hits, 1u);
  EXPECT_EQ(s.total, 6u);
}

TEST(Filter, RejectsBadInputs) {
  EXPECT_THROW(TermSet::from_terms({"", "  "}, MatchMode::word_boundary), ValidationError);
  const auto ts = TermSet::from_terms({"x"}, MatchMode::word_boundary);
  EXPECT_THROW(filter::filter_corpus({}, ts, 1.5), ValidationError);
  EXPECT_THROW(filter::load_dictionary("/nonexistent/dict.txt", MatchMode::word_boundary), IoError);
}

TEST(Filter, LoadsDictionaryFile) {
  testutil::TempDir dir;
  testutil::write_file(dir.file("d.txt"), "Insulin\n\ninsulin\nheart failure\r\n");
  const auto ts = filter::load_dictionary(dir.file("d.txt"), MatchMode::word_boundary);
  EXPECT_EQ(ts.size(), 2u);
}
