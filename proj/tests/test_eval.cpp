#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "medforge/http_clients.hpp"
#include "medforge/task_import.hpp"
#include "medforge/xmed_eval.hpp"
#include "support.hpp"

using namespace medforge;
using namespace medforge::eval;

namespace {

const std::string kData = MEDFORGE_TEST_DATA;

/// Replies with a fixed completion per item id found in the prompt, or throws.
class ScriptedBackend : public CompletionBackend {
 public:
  std::map<std::string, std::string> by_question;
  std::string complete(const std::string& prompt, const GenerationConfig&) override {
    const auto last = prompt.rfind("Question: ");
    const auto end = prompt.find('\n', last);
    const std::string q = prompt.substr(last + 10, end - last - 10);
    auto it = by_question.find(q);
    if (it == by_question.end()) throw std::runtime_error("backend unavailable");
    return it->second;
  }
};

EvalTask fixture_task() { return read_task_file(kData + "/eval_test.jsonl", "fixture", Language::en); }
std::vector<EvalItem> fixture_exemplars() {
  return select_exemplars(read_task_file(kData + "/eval_dev.jsonl", "fixture-dev", Language::en), 3);
}

}  // namespace

TEST(Eval, ThreeShotPromptMatchesGolden) {
  const auto prompt = build_prompt(fixture_task().items.at(0), fixture_exemplars(), GenerationConfig{});
  EXPECT_EQ(prompt, testutil::read_file(kData + "/golden_3shot_prompt.txt"));
}

TEST(Eval, SpecialTokenFollowsCompletedAnswers) {
  GenerationConfig cfg;
  cfg.shots = 1;
  cfg.special_token = "<|eot|>";
  const auto ex = fixture_exemplars();
  const auto prompt = build_prompt(fixture_task().items.at(0), {ex[0]}, cfg);
  EXPECT_NE(prompt.find("The correct answer is C. <|eot|>\nUser:"), std::string::npos);
  EXPECT_TRUE(prompt.ends_with("The correct answer is"));
}

TEST(Eval, ZeroShotIsOneOpenBlock) {
  GenerationConfig cfg;
  cfg.shots = 0;
  const auto prompt = build_prompt(fixture_task().items.at(0), {}, cfg);
  EXPECT_EQ(prompt.rfind("User:", 0), 0u);
  EXPECT_EQ(prompt.find("User:", 1), std::string::npos);
}

TEST(Eval, LastLetterFollowsOptionCount) {
  const EvalItem five{"x", "q", {"a", "b", "c", "d", "e"}, 0};
  EXPECT_NE(render_block(five, std::nullopt, "").find("from A to E."), std::string::npos);
}

TEST(Eval, ExtractsAnswerLetter) {
  EXPECT_EQ(extract_choice("The correct answer is (B).", 4), 1u);
  EXPECT_EQ(extract_choice(" B. Because potassium", 4), 1u);
  EXPECT_EQ(extract_choice("B) because ...", 4), 1u);
  EXPECT_FALSE(extract_choice(" C", 4));  // a bare letter needs trailing punctuation
  EXPECT_EQ(extract_choice("I think (D) fits", 4), 3u);
  EXPECT_EQ(extract_choice("the CORRECT ANSWER IS A", 4), 0u);
  EXPECT_EQ(extract_choice("The correct answer is E. Or (B)", 4), 1u);  // E out of range for 4 options
  EXPECT_FALSE(extract_choice("The correct answer is Hyperkalemia.", 4));
  EXPECT_FALSE(extract_choice("I am not sure.", 4));
  EXPECT_FALSE(extract_choice("", 4));
  EXPECT_FALSE(extract_choice("(b)", 4));
}

TEST(Eval, ScoresStrictAndLenient) {
  ScriptedBackend be;
  be.by_question["Which electrolyte disturbance classically produces peaked T waves?"] = " B. Hyperkalemia";
  // test-2 throws
  const auto task = fixture_task();
  const auto strict = score_dataset(be, task, fixture_exemplars(), GenerationConfig{}, {true, 2});
  EXPECT_EQ(strict.correct, 1u);
  EXPECT_EQ(strict.errored, 1u);
  EXPECT_DOUBLE_EQ(strict.accuracy, 0.5);
  const auto lenient = score_dataset(be, task, fixture_exemplars(), GenerationConfig{}, {false, 1});
  EXPECT_DOUBLE_EQ(lenient.accuracy, 1.0);
  EXPECT_TRUE(lenient.transcripts[1].errored);
}

TEST(Eval, UnparseableCountsAsIncorrect) {
  ScriptedBackend be;
  be.by_question["Which electrolyte disturbance classically produces peaked T waves?"] = " hmm";
  be.by_question["Which drug reverses heparin?"] = " A.";
  const auto r = score_dataset(be, fixture_task(), fixture_exemplars(), GenerationConfig{});
  EXPECT_EQ(r.correct, 0u);
  EXPECT_EQ(r.incorrect, 2u);
  EXPECT_EQ(r.unparseable, 1u);
  EXPECT_EQ(r.accuracy, 0.0);
}

TEST(Eval, ExemplarsMustNotOverlapEvalItems) {
  ScriptedBackend be;
  auto ex = fixture_exemplars();
  ex[0].id = "test-1";
  EXPECT_THROW(score_dataset(be, fixture_task(), ex, GenerationConfig{}), ValidationError);
}

TEST(Eval, MacroAverageReproducesPublishedRow) {
  const std::vector<std::pair<Language, double>> row{
      {Language::en, 56.00}, {Language::en, 58.21}, {Language::en, 71.86}, {Language::zh, 72.36}, {Language::zh, 59.04},
      {Language::fr, 60.44}, {Language::es, 63.73}, {Language::ar, 41.82}, {Language::hi, 45.55}};
  std::vector<DatasetScore> scores;
  for (std::size_t i = 0; i < row.size(); ++i) scores.push_back({"d" + std::to_string(i), row[i].first, row[i].second});
  const auto rep = aggregate(scores);
  EXPECT_NEAR(rep.macro_average, 58.78, 0.005);
  EXPECT_EQ(std::round(rep.macro_average * 100.0) / 100.0, 58.78);
  EXPECT_NEAR(rep.per_language.at(Language::en), (56.00 + 58.21 + 71.86) / 3.0, 1e-12);
  EXPECT_NEAR(rep.per_language.at(Language::zh), (72.36 + 59.04) / 2.0, 1e-12);
}

TEST(Eval, ItemsWithoutIdsGetContentIds) {
  std::stringstream ss(R"({"q":"  Same   question ","options":["a","b"],"gold":0})"
                       "\n"
                       R"({"q":"Same question","options":["c","d"],"gold":1})");
  const auto task = read_task(ss, "t", Language::en);
  EXPECT_EQ(task.items[0].id, task.items[1].id);
  EXPECT_EQ(task.items[0].id.rfind("q-", 0), 0u);
}

TEST(Eval, OptionCountsMustAgree) {
  std::stringstream ss(R"({"q":"a","options":["a","b"],"gold":0})"
                       "\n"
                       R"({"q":"b","options":["a","b","c"],"gold":0})");
  EXPECT_THROW(read_task(ss, "t", Language::en), ValidationError);
  std::stringstream ss2(ss.str());
  EXPECT_EQ(read_task(ss2, "t", Language::en, true).items.size(), 2u);
}

TEST(Eval, ImportsMedqaAndFrenchLayouts) {
  std::stringstream medqa(R"({"question":"Q1","options":{"A":"x","B":"y","C":"z","D":"w"},"answer_idx":"C"})");
  const auto m = import_task(medqa, ImportFormat::medqa);
  ASSERT_EQ(m.items.size(), 1u);
  EXPECT_EQ(m.items[0].gold, 2u);
  EXPECT_EQ(m.items[0].options, (std::vector<std::string>{"x", "y", "z", "w"}));

  std::stringstream fr(
      R"({"id":"f1","question":"Q","answer_a":"a","answer_b":"b","answer_c":"c","answer_d":"d","answer_e":"e","correct_answers":["b"]})"
      "\n"
      R"({"id":"f2","question":"Q2","answer_a":"a","answer_b":"b","answer_c":"c","answer_d":"d","answer_e":"e","correct_answers":["a","c"]})");
  const auto f = import_task(fr, ImportFormat::frenchmedmcqa);
  ASSERT_EQ(f.items.size(), 1u);
  EXPECT_EQ(f.skipped, 1u);
  EXPECT_EQ(f.items[0].id, "f1");
  EXPECT_EQ(f.items[0].gold, 1u);
}

TEST(Eval, ImportsMmluCsv) {
  std::stringstream csv("\"Which, of these\",\"a \"\"quoted\"\"\",b,c,d,B\r\nSecond,1,2,3,4,D\n");
  const auto r = import_task(csv, ImportFormat::mmlu_csv);
  ASSERT_EQ(r.items.size(), 2u);
  EXPECT_EQ(r.items[0].question, "Which, of these");
  EXPECT_EQ(r.items[0].options[0], "a \"quoted\"");
  EXPECT_EQ(r.items[1].gold, 3u);
}

TEST(Eval, HttpCompletionBackendOverLoopback) {
  httplib::Server srv;
  nlohmann::json seen;
  srv.Post("/complete", [&](const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body);
    res.set_content(R"({"completion":" B."})", "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread t([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  net::HttpCompletionBackend be("http://127.0.0.1:" + std::to_string(port) + "/complete", std::chrono::seconds(5));
  const auto r = score_dataset(be, fixture_task(), fixture_exemplars(), GenerationConfig{});
  srv.stop();
  t.join();
  EXPECT_EQ(r.correct, 2u);
  EXPECT_EQ(seen["max_new_tokens"], 128);
  EXPECT_EQ(seen["min_new_tokens"], 2);
  EXPECT_EQ(seen["do_sample"], false);
}
