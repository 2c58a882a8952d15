#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

struct Scratch {
  fs::path dir = fs::temp_directory_path() / ("sb_cli_" + std::to_string(::getpid()));
  Scratch() { fs::create_directories(dir); }
  ~Scratch() { fs::remove_all(dir); }
};

const fs::path& scratch() {
  static const Scratch s;
  return s.dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

Run cli(const std::string& args) {
  const auto out = scratch() / "stdout.txt";
  const auto err = scratch() / "stderr.txt";
  const std::string cmd =
      std::string("'") + STREAMBAYES_CLI + "' " + args + " >'" + out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string path(const std::string& name) { return "'" + (scratch() / name).string() + "'"; }

const char* kTwoNode = R"({
  "format": "streambayes-bn-1",
  "variables": [
    {"name": "A", "kind": "finite", "labels": ["0", "1"], "role": "observable"},
    {"name": "B", "kind": "finite", "labels": ["0", "1"], "role": "observable"}
  ],
  "parents": {"B": ["A"]},
  "cpds": {
    "A": {"kind": "Multinomial", "rows": [[0.3, 0.7]]},
    "B": {"kind": "Multinomial_Multinomial", "rows": [[0.9, 0.1], [0.2, 0.8]]}
  }
})";

// B = 1 is impossible under every A.
const char* kImpossible = R"({
  "format": "streambayes-bn-1",
  "variables": [
    {"name": "A", "kind": "finite", "labels": ["0", "1"], "role": "observable"},
    {"name": "B", "kind": "finite", "labels": ["0", "1"], "role": "observable"}
  ],
  "parents": {"B": ["A"]},
  "cpds": {
    "A": {"kind": "Multinomial", "rows": [[0.5, 0.5]]},
    "B": {"kind": "Multinomial_Multinomial", "rows": [[1, 0], [1, 0]]}
  }
})";

const char* kLds = R"({
  "format": "streambayes-dbn-1",
  "variables": [
    {"name": "X", "kind": "real", "role": "latent"},
    {"name": "Y", "kind": "real", "role": "observable"}
  ],
  "time0": {
    "parents": {"Y": ["X"]},
    "cpds": {
      "X": {"kind": "Normal", "params": {"0": {"intercept": 0, "coeffs": [], "variance": 1}}},
      "Y": {"kind": "Normal_Normal", "params": {"0": {"intercept": 0, "coeffs": [1], "variance": 1}}}
    }
  },
  "transition": {
    "parents": {"X": ["X[t-1]"], "Y": ["X"]},
    "cpds": {
      "X": {"kind": "Normal_Normal", "params": {"0": {"intercept": 0, "coeffs": [0.9], "variance": 1}}},
      "Y": {"kind": "Normal_Normal", "params": {"0": {"intercept": 0, "coeffs": [1], "variance": 1}}}
    }
  }
})";

std::string dynamic_rows(int steps, bool shuffled = false) {
  std::string text = "@relation r\n@attribute SEQUENCE_ID real\n@attribute TIME_ID real\n@attribute Y real\n@data\n";
  for (int t = 0; t < steps; ++t) {
    const int time = shuffled && t == 1 ? 2 : shuffled && t == 2 ? 1 : t;
    text += "0," + std::to_string(time) + "," + std::to_string(0.5 * t - 1.0) + "\n";
  }
  return text;
}

int count_lines(const std::string& text, const std::string& prefix) {
  int n = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto end = text.find('\n', pos);
    if (text.compare(pos, prefix.size(), prefix) == 0) ++n;
    if (end == std::string::npos) break;
    pos = end + 1;
  }
  return n;
}

}  // namespace

TEST_CASE("usage errors exit 1 with usage text") {
  auto r = cli("");
  CHECK(r.code == 1);
  r = cli("frobnicate");
  CHECK(r.code == 1);
  write(scratch() / "tiny.arff", "@relation r\n@attribute x real\n@data\n1\n2\n");
  r = cli("learn --model nosuch --data " + path("tiny.arff") + " --out " + path("o.json"));
  CHECK(r.code == 1);
  CHECK(r.err.find("--model") != std::string::npos);
  CHECK(r.err.find("Usage") != std::string::npos);
  r = cli("learn --model gmm:k=0 --data " + path("tiny.arff") + " --out " + path("o.json"));
  CHECK(r.code == 1);
  r = cli("infer --model " + path("missing.json"));
  CHECK(r.code == 2);
  r = cli("infer --model " + path("tiny.arff") + " --algo gibbs");
  CHECK(r.code == 1);
}

TEST_CASE("sample writes headers for n = 0 and repeats under a seed") {
  write(scratch() / "two.json", kTwoNode);
  auto r = cli("sample --model " + path("two.json") + " --n 0 --out " + path("empty.arff"));
  REQUIRE(r.code == 0);
  const auto empty = slurp(scratch() / "empty.arff");
  CHECK(empty.find("@attribute A") != std::string::npos);
  CHECK(empty.substr(empty.find("@data")).find_first_of("01") == std::string::npos);

  REQUIRE(cli("sample --model " + path("two.json") + " --n 200 --seed 4 --out " + path("s1.arff")).code == 0);
  REQUIRE(cli("sample --model " + path("two.json") + " --n 200 --seed 4 --out " + path("s2.arff")).code == 0);
  CHECK(slurp(scratch() / "s1.arff") == slurp(scratch() / "s2.arff"));
}

TEST_CASE("sample then learn recovers the generating tables") {
  write(scratch() / "two.json", kTwoNode);
  REQUIRE(cli("sample --model " + path("two.json") + " --n 100000 --seed 11 --out " + path("big.arff")).code == 0);
  auto r = cli("learn --model nb:class=A --data " + path("big.arff") + " --out " + path("learned.json") +
               " --batch-size 5000 --format json");
  REQUIRE(r.code == 0);
  const auto summary = Json::parse(r.out);
  CHECK(summary["instances"] == 100000);
  CHECK(summary["batches"] == 20);
  const auto doc = Json::parse(slurp(scratch() / "learned.json"));
  CHECK(std::abs(doc["cpds"]["A"]["rows"][0][0].get<double>() - 0.3) < 0.02);
  CHECK(std::abs(doc["cpds"]["B"]["rows"][0][0].get<double>() - 0.9) < 0.02);
  CHECK(std::abs(doc["cpds"]["B"]["rows"][1][1].get<double>() - 0.8) < 0.02);

  // The learned file loads back as a model.
  CHECK(cli("infer --model " + path("learned.json") + " --evidence B=1 --target A").code == 0);
}

TEST_CASE("fixed-seed reruns are byte-identical") {
  write(scratch() / "two.json", kTwoNode);
  std::string real = "@relation r\n@attribute x real\n@attribute y real\n@data\n";
  for (int i = 0; i < 2000; ++i)
    real += std::to_string((i % 2 ? 5.0 : -5.0) + 0.001 * (i % 97)) + "," + std::to_string(0.01 * (i % 13)) + "\n";
  write(scratch() / "real.arff", real);
  const std::string gmm = "learn --model gmm:k=2 --data " + path("real.arff") + " --batch-size 250 --seed 3 --out ";
  REQUIRE(cli(gmm + path("g1.json") + " --log " + path("g1.log")).code == 0);
  REQUIRE(cli(gmm + path("g2.json") + " --log " + path("g2.log")).code == 0);
  CHECK(slurp(scratch() / "g1.json") == slurp(scratch() / "g2.json"));
  CHECK(slurp(scratch() / "g1.log") == slurp(scratch() / "g2.log"));
  CHECK(count_lines(slurp(scratch() / "g1.log"), "batch") == 1);

  const std::string is = "infer --model " + path("two.json") + " --evidence B=1 --algo is --samples 5000 --seed 8";
  const auto a = cli(is);
  const auto b = cli(is);
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(cli(is + " --workers 3").out == a.out);
}

TEST_CASE("filter prints filtered and predictive lines") {
  write(scratch() / "lds.json", kLds);
  write(scratch() / "seq.arff", dynamic_rows(10));
  auto r = cli("filter --model " + path("lds.json") + " --data " + path("seq.arff") + " --target X --horizon 1");
  REQUIRE(r.code == 0);
  CHECK(count_lines(r.out, "t=") == 20);
  int predictive = 0;
  for (std::size_t p = r.out.find("+1 "); p != std::string::npos; p = r.out.find("+1 ", p + 1)) ++predictive;
  CHECK(predictive == 10);

  r = cli("filter --model " + path("lds.json") + " --data " + path("seq.arff") + " --target X");
  REQUIRE(r.code == 0);
  CHECK(count_lines(r.out, "t=") == 10);

  r = cli("filter --model " + path("lds.json") + " --data " + path("seq.arff") + " --target X --format json");
  REQUIRE(r.code == 0);
  CHECK(Json::parse(r.out.substr(0, r.out.find('\n')))["filtered"]["family"] == "Normal");
}

TEST_CASE("data errors exit 2 and numerical failures exit 3") {
  write(scratch() / "lds.json", kLds);
  write(scratch() / "two.json", kTwoNode);
  write(scratch() / "bad.json", kImpossible);
  write(scratch() / "shuffled.arff", dynamic_rows(5, true));
  write(scratch() / "seq.arff", dynamic_rows(3));

  auto r = cli("filter --model " + path("lds.json") + " --data " + path("shuffled.arff") + " --target X");
  CHECK(r.code == 2);
  CHECK_FALSE(r.err.empty());
  r = cli("filter --model " + path("two.json") + " --data " + path("seq.arff") + " --target A");
  CHECK(r.code == 2);
  r = cli("infer --model " + path("two.json") + " --evidence Nope=1");
  CHECK(r.code == 2);
  CHECK(r.err.find("Nope") != std::string::npos);
  r = cli("infer --model " + path("bad.json") + " --evidence B=1 --target A --algo is --samples 1000");
  CHECK(r.code == 3);
  r = cli("learn --model gmm --data " + path("missing.arff") + " --out " + path("o.json"));
  CHECK(r.code == 2);
}
