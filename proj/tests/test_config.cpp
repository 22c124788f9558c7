// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>

#include "hierfed/config.hpp"
#include "hierfed/errors.hpp"
#include "hierfed/logs.hpp"
#include "hierfed/sweep.hpp"

using namespace hierfed;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"(schema_version = 1
# tiny run for tests
mode = fixed_arm
n = 6
H = 3
K = 2
T = 10
samples_per_device = 12
eval_samples = 60
input_dim = 4
hidden_dim = 6
num_classes = 3
num_layers = 2
accuracy_targets = 0.3,0.5
)";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / fmt::format("hierfed_test_{}_{}", name, ::getpid());
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int cli(const std::string& args) {
  const int status = std::system(fmt::format("{} {} > /dev/null 2>&1", HIERFED_CLI, args).c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("serialize then parse reproduces every value") {
  const auto config = parse_config(kTiny);
  const auto text = serialize_config(config);
  const auto again = parse_config(text);
  for (const auto& key : config_keys()) {
    CHECK_MESSAGE(get_config_value(config, key) == get_config_value(again, key), key);
  }
  CHECK(serialize_config(again) == text);
  CHECK(text.find("schema_version = 1") != std::string::npos);
  CHECK(text.find("# ") != std::string::npos);
}

TEST_CASE("missing required fields are named") {
  const std::string no_n = "schema_version = 1\nmode = fixed_arm\nH = 3\n";
  try {
    parse_config(no_n);
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).rfind("n:", 0) == 0);
  }
  CHECK_THROWS_AS(parse_config("mode = fixed_arm\nn = 3\nH = 2\n"), ConfigError);
  CHECK_NOTHROW(parse_config(no_n, {{"n", "4"}}));
}

TEST_CASE("overrides supersede file values") {
  const auto config = parse_config(kTiny, {{"mode", "flat_baseline"}, {"H", "7"}});
  CHECK(config.mode == Mode::FlatBaseline);
  CHECK(config.rounds == 7);
  CHECK(parse_override("learning_rate=0.5") == Override{"learning_rate", "0.5"});
  CHECK_THROWS_AS(parse_override("learning_rate"), ConfigError);
}

TEST_CASE("malformed configs are rejected") {
  CHECK_THROWS_AS(parse_config(std::string(kTiny) + "bogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config(std::string(kTiny) + "n = 7\n"), ConfigError);
  CHECK_THROWS_AS(parse_config(kTiny, {{"n", "abc"}}), ConfigError);
  CHECK_THROWS_AS(parse_config(kTiny, {{"lambda", "2"}}), ConfigError);
  CHECK_THROWS_AS(parse_config(kTiny, {{"schema_version", "9"}}), ConfigError);
  CHECK_THROWS_AS(parse_config("schema_version = 1\nmode\n"), ConfigError);
}

TEST_CASE("sweep spec parsing") {
  const auto spec = parse_sweep_spec("base = b.txt\nout = o\nseeds = 1,2,3\naxis.mode = fixed_arm, flat_baseline\n"
                                     "axis.frequency_grid = 1;2, 1\n",
                                     "/tmp/spec");
  CHECK(spec.base_config == fs::path("/tmp/spec/b.txt"));
  CHECK(spec.output_dir == fs::path("/tmp/spec/o"));
  CHECK(spec.num_runs() == 12);
  CHECK(spec.axes[1].values == std::vector<std::string>{"1,2", "1"});
  CHECK_THROWS_AS(parse_sweep_spec("base = b\naxis.nope = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_sweep_spec("base = b\naxis.seed = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_sweep_spec("seeds = 1\n"), ConfigError);
}

TEST_CASE("sweep runs every combination, resumes and sorts its table") {
  const auto dir = scratch("sweep");
  spit(dir / "base.txt", kTiny);
  const auto base_before = slurp(dir / "base.txt");
  spit(dir / "spec.txt", "base = base.txt\nout = out\nseeds = 3,1,2\naxis.mode = flat_baseline,fixed_arm\n");
  const auto spec = load_sweep_spec(dir / "spec.txt");

  const auto first = run_sweep(spec, 2);
  CHECK(first.failures == 0);
  CHECK(first.rows.size() == 6);
  const auto table = slurp(first.comparison_csv);
  std::vector<std::string> lines;
  std::stringstream in(table);
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  REQUIRE(lines.size() == 7);
  CHECK(lines[0].rfind("mode,seed,status", 0) == 0);
  CHECK(lines[0].find("time_to_0.3") != std::string::npos);
  const std::vector<std::string> prefixes{"flat_baseline,1,", "flat_baseline,2,", "flat_baseline,3,",
                                          "fixed_arm,1,",     "fixed_arm,2,",     "fixed_arm,3,"};
  for (std::size_t i = 0; i < prefixes.size(); ++i) CHECK(lines[i + 1].rfind(prefixes[i], 0) == 0);

  const auto second = run_sweep(spec, 1);
  for (const auto& r : second.rows) CHECK(r.status == "skipped");
  CHECK(slurp(second.comparison_csv).size() > 0);
  CHECK(slurp(dir / "base.txt") == base_before);
  fs::remove_all(dir);
}

TEST_CASE("cli run writes identical logs for identical inputs") {
  const auto dir = scratch("cli");
  spit(dir / "c.txt", kTiny);
  const auto before = slurp(dir / "c.txt");
  const auto c = (dir / "c.txt").string();
  CHECK(cli(fmt::format("run --config {} --out {}", c, (dir / "a").string())) == 0);
  CHECK(cli(fmt::format("run --config {} --out {}", c, (dir / "b").string())) == 0);
  for (const char* f : {"rounds.csv", "events.jsonl", "summary.json", "config.txt"}) {
    CHECK_MESSAGE(slurp(dir / "a" / f) == slurp(dir / "b" / f), f);
  }
  CHECK(slurp(dir / "c.txt") == before);

  CHECK(cli(fmt::format("run --config {} --override mode=flat_baseline --out {}", c, (dir / "f").string())) == 0);
  CHECK(parse_config(slurp(dir / "f" / "config.txt")).mode == Mode::FlatBaseline);

  CHECK(cli(fmt::format("run --config {} --override n=0 --out {}", c, (dir / "x").string())) == 1);
  CHECK(cli(fmt::format("run --config {} --out {}", (dir / "missing.txt").string(), (dir / "x").string())) == 1);
  CHECK(cli(fmt::format("run --config {} --override learning_rate=1e9 --out {}", c, (dir / "d").string())) == 2);
  CHECK(fs::exists(dir / "d" / "summary.json.partial"));
  CHECK_FALSE(fs::exists(dir / "d" / "summary.json"));
  CHECK(cli("frobnicate") == 1);
  fs::remove_all(dir);
}

TEST_CASE("cli sweep reports failures through its exit code") {
  const auto dir = scratch("cli_sweep");
  spit(dir / "base.txt", kTiny);
  spit(dir / "ok.txt", "base = base.txt\nout = ok\nseeds = 1\naxis.mode = fixed_arm\n");
  spit(dir / "bad.txt", "base = base.txt\nout = bad\nseeds = 1\naxis.learning_rate = 0.1,1e9\n");
  CHECK(cli(fmt::format("sweep --spec {}", (dir / "ok.txt").string())) == 0);
  CHECK(cli(fmt::format("sweep --spec {} --jobs 2", (dir / "bad.txt").string())) == 2);
  CHECK(slurp(dir / "bad" / "comparison.csv").find("aborted") != std::string::npos);
  CHECK(cli(fmt::format("sweep --spec {}", (dir / "nope.txt").string())) == 1);
  fs::remove_all(dir);
}
