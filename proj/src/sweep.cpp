// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#include "hierfed/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "hierfed/errors.hpp"
#include "hierfed/logs.hpp"

namespace hierfed {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    const auto item = trim(text.substr(start, comma == std::string_view::npos ? text.npos : comma - start));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string sanitize(std::string_view text) {
  std::string out;
  for (char c : text) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_';
    out += keep ? c : '_';
  }
  return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, std::string_view value) {
  std::filesystem::path p{std::string(value)};
  return p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace

std::size_t SweepSpec::num_runs() const {
  std::size_t total = seeds.size();
  for (const auto& a : axes) total *= a.values.size();
  return total;
}

SweepSpec parse_sweep_spec(std::string_view text, const std::filesystem::path& spec_dir) {
  SweepSpec spec;
  bool have_base = false;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) throw ConfigError(fmt::format("line {}: expected 'key = value'", line_no));
    const auto key = trim(view.substr(0, eq));
    const auto value = trim(view.substr(eq + 1));
    if (key == "base") {
      spec.base_config = resolve(spec_dir, value);
      have_base = true;
    } else if (key == "out") {
      spec.output_dir = resolve(spec_dir, value);
    } else if (key == "seeds") {
      spec.seeds.clear();
      for (const auto& s : split_list(value)) {
        std::uint64_t seed = 0;
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), seed);
        if (ec != std::errc() || ptr != s.data() + s.size()) {
          throw ConfigError(fmt::format("seeds: cannot parse '{}'", s));
        }
        spec.seeds.push_back(seed);
      }
    } else if (key.starts_with("axis.")) {
      const auto name = std::string(key.substr(5));
      if (!is_config_key(name)) throw ConfigError(fmt::format("{}: not an experiment config key", key));
      if (name == "seed") throw ConfigError("axis.seed: use 'seeds' instead");
      SweepAxis axis{name, {}};
      // Lists inside a value (grids) use ';' in place of ','.
      for (const auto& v : split_list(value)) {
        std::string item = v;
        std::replace(item.begin(), item.end(), ';', ',');
        axis.values.push_back(std::move(item));
      }
      if (axis.values.empty()) throw ConfigError(fmt::format("{}: no values", key));
      spec.axes.push_back(std::move(axis));
    } else {
      throw ConfigError(fmt::format("{}: unknown sweep key", key));
    }
  }
  if (!have_base) throw ConfigError("base: required field is missing");
  if (spec.seeds.empty()) throw ConfigError("seeds: at least one seed required");
  return spec;
}

SweepSpec load_sweep_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("spec: cannot open '{}'", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_sweep_spec(buffer.str(), path.parent_path());
}

std::vector<SweepRun> expand_sweep(const SweepSpec& spec) {
  std::vector<SweepRun> runs;
  std::vector<std::size_t> index(spec.axes.size(), 0);
  while (true) {
    for (auto seed : spec.seeds) {
      SweepRun run;
      std::string name;
      for (std::size_t a = 0; a < spec.axes.size(); ++a) {
        const auto& value = spec.axes[a].values[index[a]];
        run.axis_values.push_back(value);
        name += sanitize(spec.axes[a].key) + "-" + sanitize(value) + "__";
      }
      run.seed = seed;
      run.dir = spec.output_dir / fmt::format("{}seed-{}", name, seed);
      runs.push_back(std::move(run));
    }
    std::size_t a = spec.axes.size();
    while (a > 0) {
      --a;
      if (++index[a] < spec.axes[a].values.size()) break;
      index[a] = 0;
      if (a == 0) return runs;
    }
    if (spec.axes.empty()) return runs;
  }
}

ExperimentSummary read_summary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
  const auto j = nlohmann::json::parse(in);
  ExperimentSummary s;
  s.mode = parse_mode(j.at("mode").get<std::string>());
  s.rounds_completed = j.at("rounds_completed").get<int>();
  s.final_accuracy = j.at("final_accuracy").get<double>();
  s.final_loss = j.at("final_loss").get<double>();
  s.best_accuracy = j.at("best_accuracy").get<double>();
  s.sim_time = j.at("sim_time").get<double>();
  s.traffic = j.at("traffic").get<long long>();
  s.aborted = j.at("aborted").get<bool>();
  if (j.contains("abort_reason")) s.abort_reason = j["abort_reason"].get<std::string>();
  for (const auto& row : j.at("time_to_accuracy")) {
    TimeToAccuracy t;
    t.target = row.at("target").get<double>();
    if (!row.at("time").is_null()) t.time = row["time"].get<double>();
    if (!row.at("round").is_null()) t.round = row["round"].get<int>();
    s.time_to_accuracy.push_back(t);
  }
  return s;
}

std::string comparison_csv(const SweepSpec& spec, std::vector<SweepRowResult> rows) {
  auto position = [&](const SweepRowResult& r) {
    std::vector<std::size_t> key;
    for (std::size_t a = 0; a < spec.axes.size(); ++a) {
      const auto& values = spec.axes[a].values;
      key.push_back(static_cast<std::size_t>(
          std::find(values.begin(), values.end(), r.run.axis_values[a]) - values.begin()));
    }
    return key;
  };
  std::stable_sort(rows.begin(), rows.end(), [&](const auto& x, const auto& y) {
    const auto kx = position(x);
    const auto ky = position(y);
    return kx != ky ? kx < ky : x.run.seed < y.run.seed;
  });

  std::vector<double> targets;
  for (const auto& r : rows) {
    if (!r.summary) continue;
    for (const auto& t : r.summary->time_to_accuracy) {
      if (std::find(targets.begin(), targets.end(), t.target) == targets.end()) targets.push_back(t.target);
    }
  }
  std::sort(targets.begin(), targets.end());

  std::vector<std::string> header;
  for (const auto& a : spec.axes) header.push_back(a.key);
  for (const char* c : {"seed", "status", "rounds_completed", "final_accuracy", "final_loss",
                        "best_accuracy", "sim_time", "traffic"}) {
    header.emplace_back(c);
  }
  for (double t : targets) header.push_back(fmt::format("time_to_{}", t));
  std::string out = fmt::format("{}\n", fmt::join(header, ","));

  for (const auto& r : rows) {
    std::vector<std::string> cells;
    for (const auto& v : r.run.axis_values) {
      cells.push_back(v.find(',') == std::string::npos ? v : fmt::format("\"{}\"", v));
    }
    cells.push_back(fmt::format("{}", r.run.seed));
    cells.push_back(r.status);
    if (r.summary) {
      const auto& s = *r.summary;
      cells.push_back(fmt::format("{}", s.rounds_completed));
      cells.push_back(fmt::format("{}", s.final_accuracy));
      cells.push_back(fmt::format("{}", s.final_loss));
      cells.push_back(fmt::format("{}", s.best_accuracy));
      cells.push_back(fmt::format("{}", s.sim_time));
      cells.push_back(fmt::format("{}", s.traffic));
      for (double t : targets) {
        std::string cell;
        for (const auto& row : s.time_to_accuracy) {
          if (row.target == t && row.time) cell = fmt::format("{}", *row.time);
        }
        cells.push_back(cell);
      }
    } else {
      cells.resize(header.size());
    }
    out += fmt::format("{}\n", fmt::join(cells, ","));
  }
  return out;
}

SweepOutcome run_sweep(const SweepSpec& spec, int jobs) {
  auto runs = expand_sweep(spec);
  spdlog::info("sweep: {} combinations", runs.size());
  std::filesystem::create_directories(spec.output_dir);

  std::vector<SweepRowResult> rows(runs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    while (true) {
      const auto i = next.fetch_add(1);
      if (i >= runs.size()) return;
      auto& row = rows[i];
      row.run = runs[i];
      const auto done = run_files(row.run.dir, false).summary;
      try {
        if (std::filesystem::exists(done)) {
          row.summary = read_summary(done);
          row.status = "skipped";
          continue;
        }
        std::vector<Override> overrides;
        for (std::size_t a = 0; a < spec.axes.size(); ++a) {
          overrides.emplace_back(spec.axes[a].key, row.run.axis_values[a]);
        }
        overrides.emplace_back("seed", fmt::format("{}", row.run.seed));
        const auto config = load_config(spec.base_config.string(), overrides);
        const auto result = run_experiment(config);
        write_run(row.run.dir, config, result);
        row.summary = result.summary;
        row.status = result.summary.aborted ? "aborted" : "ok";
      } catch (const std::exception& e) {
        row.status = "failed";
        row.error = e.what();
      }
      std::lock_guard lock(log_mutex);
      if (row.status == "ok") {
        spdlog::info("{}: accuracy {:.4f}", row.run.dir.filename().string(), row.summary->final_accuracy);
      } else {
        spdlog::error("{}: {} {}", row.run.dir.filename().string(), row.status, row.error);
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < std::max(1, jobs); ++w) pool.emplace_back(worker);
  }

  SweepOutcome outcome;
  for (const auto& r : rows) {
    if (r.status == "failed" || r.status == "aborted") ++outcome.failures;
  }
  outcome.comparison_csv = spec.output_dir / "comparison.csv";
  write_atomic(outcome.comparison_csv, comparison_csv(spec, rows));
  outcome.rows = std::move(rows);
  return outcome;
}

}  // namespace hierfed
