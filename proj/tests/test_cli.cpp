#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "doctest.h"
#include "pced/cli.hpp"
#include "support.hpp"

using namespace pced;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run pced_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

nlohmann::json config_echo(const std::string& out) {
  std::istringstream in(out);
  std::string line;
  std::getline(in, line);
  REQUIRE(line.rfind("config: ", 0) == 0);
  return nlohmann::json::parse(line.substr(8));
}

std::string line_with(const std::string& out, const std::string& prefix) {
  std::istringstream in(out);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(prefix, 0) == 0) return line;
  return {};
}

// Three-document corpus; one file answers the question.
fs::path make_corpus(const fs::path& root) {
  auto dir = root / "corpus";
  fs::create_directories(dir);
  std::ofstream(dir / "capital.txt") << "the capital of france is paris <eos>";
  std::ofstream(dir / "river.txt") << "the longest river in france is the loire";
  std::ofstream(dir / "food.txt") << "bread and cheese are common in france";
  std::ofstream(dir / "notes.md") << "ignored because it is not a txt file";
  return dir;
}

}  // namespace

TEST_CASE("build-cache on an empty corpus directory succeeds") {
  auto root = testing::temp_dir("cli-empty");
  fs::create_directories(root / "corpus");
  auto r = pced_run({"build-cache", "--corpus", (root / "corpus").string(), "--store",
                (root / "store").string()});
  CHECK(r.code == cli::kOk);
  CHECK(fs::exists(root / "store" / "manifest.json"));
  CHECK(config_echo(r.out)["command"] == "build-cache");
  fs::remove_all(root);
}

TEST_CASE("query echoes the default gamma and answers from the store") {
  auto root = testing::temp_dir("cli-query");
  auto corpus = make_corpus(root);
  auto store = (root / "store").string();
  REQUIRE(pced_run({"build-cache", "--corpus", corpus.string(), "--store", store}).code == cli::kOk);

  auto r = pced_run({"query", "--store", store, "--question", "the capital of france is",
                "--topk", "2", "--trace-out", (root / "trace.jsonl").string()});
  CHECK(r.code == cli::kOk);
  auto echo = config_echo(r.out);
  CHECK(echo["gamma"] == 2.5);
  CHECK(echo["beta_policy"] == "dynamic");
  CHECK(echo["aggregation"] == "max");
  CHECK(line_with(r.out, "answer: ") == "answer: paris");
  CHECK(line_with(r.out, "retrieved: ").find("capital") != std::string::npos);

  auto plot = pced_run({"trace-plot", "--trace", (root / "trace.jsonl").string()});
  CHECK(plot.code == cli::kOk);
  CHECK(plot.out.find("switches:") != std::string::npos);
  fs::remove_all(root);
}

TEST_CASE("query --oracle-single agrees with greedy decoding") {
  auto root = testing::temp_dir("cli-oracle");
  auto corpus = make_corpus(root);
  auto store = (root / "store").string();
  REQUIRE(pced_run({"build-cache", "--corpus", corpus.string(), "--store", store}).code == cli::kOk);
  for (std::string q : {"the capital of france is", "longest river", "bread and"}) {
    auto r = pced_run({"query", "--store", store, "--question", q, "--topk", "1", "--beta", "0",
                  "--gamma", "0", "--oracle-single"});
    CHECK(r.code == cli::kOk);
    CHECK(line_with(r.out, "oracle: ").rfind("oracle: match", 0) == 0);
  }
  auto bad = pced_run({"query", "--store", store, "--question", "x", "--topk", "2",
                  "--oracle-single"});
  CHECK(bad.code == cli::kUsageError);
  fs::remove_all(root);
}

TEST_CASE("repeated runs are byte-identical") {
  auto root = testing::temp_dir("cli-repeat");
  auto corpus = make_corpus(root);
  auto s1 = (root / "s1").string(), s2 = (root / "s2").string();
  REQUIRE(pced_run({"build-cache", "--corpus", corpus.string(), "--store", s1}).code == cli::kOk);
  REQUIRE(pced_run({"build-cache", "--corpus", corpus.string(), "--store", s2}).code == cli::kOk);
  auto read = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
  };
  CHECK(read(fs::path(s1) / "manifest.json") == read(fs::path(s2) / "manifest.json"));

  std::vector<std::string> q{"query", "--store", s1, "--question", "capital of france"};
  CHECK(pced_run(q).out == pced_run(q).out);

  auto suite = (testing::scenario_dir() / "ablation.json").string();
  std::vector<std::string> sw{"sweep", "--scenario", suite, "--axis", "beta", "--workers", "3"};
  CHECK(pced_run(sw).out == pced_run(sw).out);

  std::vector<std::string> bench{"bench", "--n-docs", "2,4", "--doc-len", "64", "--steps"};
  auto b1 = pced_run(bench), b2 = pced_run(bench);
  CHECK(b1.code == cli::kOk);
  CHECK(b1.out == b2.out);
  fs::remove_all(root);
}

TEST_CASE("sweep emits one summary record per axis value") {
  auto suite = (testing::scenario_dir() / "multihop.json").string();
  auto root = testing::temp_dir("cli-sweep");
  auto out = (root / "sweep.jsonl").string();
  auto r = pced_run({"sweep", "--scenario", suite, "--axis", "components", "--out", out});
  REQUIRE(r.code == cli::kOk);
  std::ifstream in(out);
  std::string line;
  std::vector<std::string> labels;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    if (j["type"] == "value") labels.push_back(j["label"]);
  }
  REQUIRE(labels.size() == 3);
  CHECK(labels[0].rfind("Only Contrastive", 0) == 0);
  CHECK(labels[1].rfind("Only Retrieval", 0) == 0);
  CHECK(labels[2] == "Full PCED");
  fs::remove_all(root);
}

TEST_CASE("exit codes by error class") {
  CHECK(pced_run({}).code == cli::kUsageError);
  CHECK(pced_run({"frobnicate"}).code == cli::kUsageError);
  CHECK(pced_run({"query", "--store", "/nonexistent", "--question", "x", "--bogus"}).code ==
        cli::kUsageError);
  CHECK(pced_run({"query", "--store", "/nonexistent/store", "--question", "x"}).code ==
        cli::kStoreError);
  CHECK(pced_run({"query", "--store", "/x", "--question", "x", "--gamma", "-1"}).code ==
        cli::kUsageError);
  CHECK(pced_run({"query", "--store", "/x", "--question", "x", "--beta", "0.5", "--beta-policy",
             "dynamic"}).code == cli::kUsageError);
  CHECK(pced_run({"bench", "--n-docs", "0"}).code == cli::kUsageError);
  CHECK(pced_run({"sweep", "--scenario", "/nonexistent.json", "--axis", "beta"}).code ==
        cli::kStoreError);
  auto suite = (testing::scenario_dir() / "multihop.json").string();
  CHECK(pced_run({"sweep", "--scenario", suite, "--axis", "temperature"}).code == cli::kUsageError);
  CHECK(pced_run({"trace-plot", "--trace", "/nonexistent.jsonl"}).code == cli::kStoreError);

  auto root = testing::temp_dir("cli-corrupt");
  auto corpus = make_corpus(root);
  auto store = root / "store";
  REQUIRE(pced_run({"build-cache", "--corpus", corpus.string(), "--store", store.string()}).code ==
          cli::kOk);
  std::ofstream(store / "blobs" / "000000.bin", std::ios::app) << "x";
  CHECK(pced_run({"query", "--store", store.string(), "--question", "x"}).code == cli::kStoreError);
  fs::remove_all(root);
}
