#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "medforge/corpus.hpp"
#include "support.hpp"

using namespace medforge;

namespace {

CorpusRecord random_record(std::mt19937_64& rng, std::size_t i) {
  static constexpr std::u32string_view alphabet = U"abcdefgh ijk\"\\\n\tñ中文अ؟😀";
  const Language lang = kAllLanguages[rng() % kAllLanguages.size()];
  auto body = [&] {
    std::string s;
    do s = testutil::random_utf8(rng, 1 + rng() % 60, alphabet);
    while (s.find_first_not_of(" \n\t") == std::string::npos);
    return s;
  };
  if (rng() % 2) return make_pretrain("r" + std::to_string(i), lang, rng() % 3 ? "src" : "", body());
  return make_instruction("r" + std::to_string(i), lang, "qa", body(), body());
}

}  // namespace

TEST(Corpus, RoundTripsRandomRecords) {
  std::mt19937_64 rng(7);
  std::vector<CorpusRecord> records;
  for (std::size_t i = 0; i < 100; ++i) records.push_back(random_record(rng, i));
  std::stringstream ss;
  EXPECT_EQ(write_jsonl(records, ss), 100u);
  const auto back = parse_jsonl(ss);
  ASSERT_EQ(back.size(), records.size());
  for (std::size_t i = 0; i < records.size(); ++i) EXPECT_EQ(back[i], records[i]) << i;
}

TEST(Corpus, FileRoundTrip) {
  testutil::TempDir dir;
  std::vector<CorpusRecord> recs{make_pretrain("a", Language::zh, "", "文本"),
                                 make_instruction("b", Language::ar, "s", "q?", "a.")};
  write_jsonl_file(recs, dir.file("c.jsonl"));
  EXPECT_EQ(read_jsonl_file(dir.file("c.jsonl")), recs);
}

TEST(Corpus, CollectsEveryBadLine) {
  std::stringstream ss;
  ss << R"({"id":"1","lang":"en","stage":"pretrain","text":"ok"})" << '\n'
     << R"({"id":"2","lang":"de","stage":"pretrain","text":"x"})" << '\n'
     << "not json\n"
     << R"({"id":"1","lang":"en","stage":"pretrain","text":"dup"})" << '\n'
     << R"({"id":"4","lang":"en","stage":"instruction","question":"q"})" << '\n'
     << R"({"id":"5","lang":"en","stage":"pretrain","text":"   "})" << '\n';
  try {
    parse_jsonl(ss);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    ASSERT_EQ(e.diagnostics().size(), 5u);
    EXPECT_EQ(e.diagnostics()[0].rfind("line 2:", 0), 0u);
    EXPECT_EQ(e.diagnostics()[1].rfind("line 3:", 0), 0u);
    EXPECT_NE(e.diagnostics()[2].find("duplicate"), std::string::npos);
    EXPECT_EQ(e.diagnostics()[3].rfind("line 5:", 0), 0u);
    EXPECT_EQ(e.diagnostics()[4].rfind("line 6:", 0), 0u);
  }
}

TEST(Corpus, InvalidUtf8IsRejected) {
  std::stringstream ss;
  ss << "{\"id\":\"1\",\"lang\":\"en\",\"stage\":\"pretrain\",\"text\":\"\xff\"}\n";
  EXPECT_THROW(parse_jsonl(ss), ValidationError);
}

TEST(Corpus, MissingFileIsIoError) { EXPECT_THROW(read_jsonl_file("/nonexistent/x.jsonl"), IoError); }

TEST(Corpus, LanguageCodes) {
  for (Language l : kAllLanguages) EXPECT_EQ(parse_language(to_string(l)), l);
  EXPECT_FALSE(parse_language("EN"));
  EXPECT_FALSE(parse_language("de"));
}
