#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "cli_commands.hpp"

namespace fs = std::filesystem;
using namespace sdd;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("sdd_cli_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
    std::mt19937_64 rng(11);
    std::ofstream f(dir_ / "shop.csv");
    f << "Store,Product,Time in Bay Area,Sales\n";
    const char* stores[] = {"Walmart", "Target", "Costco"};
    const char* products[] = {"cookies", "bikes", "comforters"};
    const char* times[] = {"1-3 years", "4-6 years", ">10 years"};
    for (int i = 0; i < 600; ++i) {
      if (i % 4 == 0) {
        f << "Walmart,cookies,>10 years," << (i % 50) << "\n";
      } else {
        f << stores[rng() % 3] << "," << products[rng() % 3] << "," << times[rng() % 3] << "," << (i % 50) << "\n";
      }
    }
    opts_.dataset = (dir_ / "shop.csv").string();
    opts_.memory = 1000;
    opts_.min_ss = 1000;
    opts_.sum = "Sales";
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string run_summarize() {
    std::ostringstream out;
    EXPECT_EQ(cli::summarize(opts_, out), 0);
    return out.str();
  }

  int run_replay(const std::string& script, std::string& out_text, std::string& err_text) {
    std::istringstream in(script);
    std::ostringstream out, err;
    int rc = cli::replay(opts_, in, out, err);
    out_text = out.str();
    err_text = err.str();
    return rc;
  }

  fs::path dir_;
  cli::CommonOptions opts_;
};

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_F(CliTest, SummarizeTableIsAlignedWithStars) {
  opts_.sum.reset();
  opts_.k = 3;
  auto text = run_summarize();
  auto rows = lines(text);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].rfind("Store", 0), 0u);
  EXPECT_NE(rows[0].find("Count"), std::string::npos);
  EXPECT_NE(rows[0].find("Weight"), std::string::npos);
  EXPECT_NE(text.find('*'), std::string::npos);
  for (const auto& r : rows) EXPECT_EQ(r.size(), rows[0].size()) << r;
  // The planted pattern covers 150 rows by itself.
  EXPECT_NE(rows[1].find("Walmart"), std::string::npos);
}

TEST_F(CliTest, SummarizeIsDeterministic) {
  opts_.memory = 200;
  opts_.min_ss = 100;
  auto a = run_summarize();
  auto b = run_summarize();
  EXPECT_EQ(a, b);
}

TEST_F(CliTest, SummarizeKZeroPrintsHeaderOnly) {
  opts_.k = 0;
  auto rows = lines(run_summarize());
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_NE(rows[0].find("Sum(Sales)"), std::string::npos);
}

TEST_F(CliTest, SummarizeCsvAndJsonAgree) {
  opts_.out = "csv";
  auto csv_rows = lines(run_summarize());
  opts_.out = "json";
  auto j = Json::parse(run_summarize());
  ASSERT_EQ(csv_rows.size(), j["rules"].size() + 1);
  EXPECT_EQ(csv_rows[0], "Store,Product,Time in Bay Area,Sum(Sales),Weight");
  EXPECT_EQ(j["aggregate"]["kind"], "sum");
  EXPECT_TRUE(j["exact"].get<bool>());
  for (std::size_t i = 0; i < j["rules"].size(); ++i) {
    const auto& cells = j["rules"][i]["cells"];
    std::string expect;
    for (std::size_t c = 0; c < cells.size(); ++c) expect += (c ? "," : "") + csv::escape(cells[c].get<std::string>());
    EXPECT_EQ(csv_rows[i + 1].rfind(expect + ",", 0), 0u) << csv_rows[i + 1];
  }
}

TEST_F(CliTest, SummarizeRejectsBadArguments) {
  opts_.out = "xml";
  std::ostringstream out;
  EXPECT_THROW(cli::summarize(opts_, out), Error);
  opts_.out = "table";
  opts_.mw = "lots";
  EXPECT_THROW(cli::summarize(opts_, out), Error);
  opts_.mw = "auto";
  opts_.sum = "Store";
  EXPECT_THROW(cli::summarize(opts_, out), Error);
}

TEST_F(CliTest, ReplayExpandThenCollapseMatchesEmptyScript) {
  opts_.out = "json";
  std::string a, b, err;
  ASSERT_EQ(run_replay("expand root\ncollapse root\n", a, err), 0) << err;
  ASSERT_EQ(run_replay("# nothing\n\n", b, err), 0) << err;
  EXPECT_EQ(a, b);
  auto j = Json::parse(a);
  EXPECT_FALSE(j["root"]["expanded"].get<bool>());
}

TEST_F(CliTest, ReplayStarOnColumnWithSpaces) {
  opts_.out = "json";
  std::string out, err;
  ASSERT_EQ(run_replay("expand\nstar \"*,cookies,*\" Time in Bay Area\n", out, err), 0) << err;
  auto j = Json::parse(out);
  const Json* node = nullptr;
  for (const auto& c : j["root"]["children"]) {
    if (c["cells"] == Json::array({"*", "cookies", "*"})) node = &c;
  }
  ASSERT_NE(node, nullptr);
  EXPECT_EQ((*node)["star_column"], "Time in Bay Area");
  for (const auto& c : (*node)["children"]) EXPECT_NE(c["cells"][2], "*");
}

TEST_F(CliTest, ReplayUnknownNodeAbortsWithLineNumber) {
  std::string out, err;
  EXPECT_EQ(run_replay("expand\n\nexpand Target,bikes,>10 years,7\n", out, err), 1);
  EXPECT_NE(err.find("line 3"), std::string::npos) << err;
  EXPECT_TRUE(out.empty());
}

TEST_F(CliTest, ReplayRejectsMalformedScripts) {
  std::string out, err;
  EXPECT_EQ(run_replay("explode root\n", out, err), 2);
  EXPECT_NE(err.find("line 1"), std::string::npos);
  EXPECT_EQ(run_replay("expand\nstar root Colour\n", out, err), 2);
  EXPECT_NE(err.find("line 2"), std::string::npos);
  EXPECT_EQ(run_replay("expand \"root\n", out, err), 2);
}

TEST_F(CliTest, ReplayCollapseOfUnexpandedNodeFails) {
  std::string out, err;
  EXPECT_EQ(run_replay("collapse\n", out, err), 1);
  EXPECT_NE(err.find("node_not_expanded"), std::string::npos) << err;
}

TEST(CliTokenize, QuotesGroupWords) {
  auto t = cli::tokenize("star \"a b\"  c\td");
  ASSERT_EQ(t.size(), 4u);
  EXPECT_EQ(t[1], "a b");
  EXPECT_EQ(t[3], "d");
  EXPECT_EQ(cli::tokenize("x \"\"").size(), 2u);
}

TEST_F(CliTest, BenchOnFullTableHasNoError) {
  opts_.sum.reset();
  cli::BenchOptions b;
  b.sweep = "minss";
  b.values = {600, 2000};
  b.trials = 2;
  auto table = cli::load(opts_);
  auto rows = cli::run_bench(table, opts_, b);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_GE(r.mean_seconds, 0.0);
    EXPECT_DOUBLE_EQ(r.mean_pct_error, 0.0);
    EXPECT_DOUBLE_EQ(r.mean_wrong_rules, 0.0);
  }
}

TEST_F(CliTest, BenchCsvShape) {
  opts_.sum.reset();
  opts_.memory = 300;
  cli::BenchOptions b;
  b.sweep = "mw";
  b.values = {2, 5};
  b.trials = 2;
  std::ostringstream out;
  ASSERT_EQ(cli::bench(opts_, b, out), 0);
  auto rows = lines(out.str());
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], "mw,mean_seconds,mean_pct_error,mean_wrong_rules");
  EXPECT_EQ(rows[1].rfind("2,", 0), 0u);
  b.sweep = "rows";
  EXPECT_THROW(cli::bench(opts_, b, out), Error);
}

TEST_F(CliTest, IngestReportsAndSavesDecodedTable) {
  auto saved = (dir_ / "clean.csv").string();
  std::ostringstream out;
  opts_.out = "json";
  ASSERT_EQ(cli::ingest(opts_, saved, out), 0);
  auto j = Json::parse(out.str());
  EXPECT_EQ(j["rows"], 600);
  ASSERT_EQ(j["columns"].size(), 3u);
  EXPECT_EQ(j["columns"][0]["distinct"], 3);
  EXPECT_EQ(j["measures"], Json::array({"Sales"}));

  LoadOptions lo;
  lo.measure_columns = {"Sales"};
  auto original = load_csv(opts_.dataset, lo);
  auto reloaded = load_csv(saved, lo);
  ASSERT_EQ(reloaded.num_rows(), original.num_rows());
  for (std::size_t r = 0; r < original.num_rows(); ++r) {
    EXPECT_EQ(reloaded.decode_row(r), original.decode_row(r));
    EXPECT_EQ(reloaded.measures()[0].values[r], original.measures()[0].values[r]);
  }
}

TEST_F(CliTest, SchemaSidecarIsPickedUp) {
  {
    std::ofstream s(dir_ / "shop.csv.schema");
    s << "header = true\nmeasures = Sales\nlabel.Store = Walmart=WM\n";
  }
  opts_.sum.reset();
  opts_.out = "json";
  std::ostringstream out;
  ASSERT_EQ(cli::ingest(opts_, std::nullopt, out), 0);
  auto j = Json::parse(out.str());
  EXPECT_EQ(j["measures"], Json::array({"Sales"}));
  opts_.k = 1;
  auto text = run_summarize();
  EXPECT_NE(text.find("\"WM\""), std::string::npos);
}
