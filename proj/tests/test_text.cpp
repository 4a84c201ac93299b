#include <gtest/gtest.h>

#include "medforge/errors.hpp"
#include "medforge/hash.hpp"
#include "medforge/text.hpp"

using namespace medforge;

TEST(Text, DecodeEncodeRoundTrip) {
  const std::string s = "abc é 中文 ؟ । \U0001F600";
  EXPECT_EQ(text::encode(text::decode(s)), s);
  EXPECT_EQ(text::scalar_length(s), text::decode(s).size());
}

TEST(Text, RejectsMalformedUtf8) {
  EXPECT_FALSE(text::is_valid_utf8("\xC0\xAF"));          // overlong
  EXPECT_FALSE(text::is_valid_utf8("\xED\xA0\x80"));      // surrogate
  EXPECT_FALSE(text::is_valid_utf8("\xF4\x90\x80\x80"));  // > U+10FFFF
  EXPECT_FALSE(text::is_valid_utf8("abc\xE4\xB8"));       // truncated
  EXPECT_THROW(text::decode("\xff"), ValidationError);
  EXPECT_THROW(text::nfc("\xff"), ValidationError);
}

TEST(Text, NormalizeComposesAndCollapses) {
  // e + combining acute -> precomposed
  EXPECT_EQ(text::normalize("  caf\x65\xCC\x81 \t\n  au  lait "), "caf\xC3\xA9 au lait");
  EXPECT_EQ(text::normalize("Keep Case"), "Keep Case");
  EXPECT_EQ(text::normalize(" \n\t "), "");
}

TEST(Text, CharacterClasses) {
  EXPECT_TRUE(text::is_space(U'　'));
  EXPECT_TRUE(text::is_punct(U'。'));
  EXPECT_TRUE(text::is_punct(U'؟'));
  EXPECT_FALSE(text::is_punct(U'a'));
  EXPECT_EQ(text::to_lower(U'É'), U'é');
}

TEST(Hash, Fnv1aKnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(to_hex(0xabcULL), "0000000000000abc");
}
